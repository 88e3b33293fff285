/** Editor state machine: slider edits debounce into synthesis requests and
 * stale responses are discarded by sequence number, so the displayed image
 * always matches the most recent acknowledged slider state. */

import { ApiError, ModelInfo, SynthesisRequest, SynthesisResponse } from "./api.js";
import { TrailingDebouncer } from "./debounce.js";

export type SynthesizeFn = (request: SynthesisRequest) => Promise<SynthesisResponse>;

export interface EditorEvents {
  onResult(image: string, seq: number): void;
  onError(message: string): void;
  onBusy?(inFlight: boolean): void;
}

export const DEBOUNCE_WINDOW_MS = 120;

export class EditorController {
  readonly sliders: number[];
  sourceImage: string | null = null;
  lastResponseImage: string | null = null;

  private nextSeq = 0;
  private appliedSeq = -1;
  private inFlightCount = 0;
  private readonly debouncer: TrailingDebouncer;

  constructor(
    readonly modelInfo: ModelInfo,
    private readonly synthesize: SynthesizeFn,
    private readonly events: EditorEvents,
    windowMs: number = DEBOUNCE_WINDOW_MS,
  ) {
    this.sliders = new Array(modelInfo.label_dim).fill(0);
    this.debouncer = new TrailingDebouncer(windowMs);
  }

  get requestInFlight(): boolean {
    return this.inFlightCount > 0;
  }

  setSource(image: string): void {
    this.sourceImage = image;
    this.requestSynthesis();
  }

  setSlider(index: number, value: number): void {
    if (index < 0 || index >= this.sliders.length) {
      throw new RangeError(`slider index ${index} out of range`);
    }
    this.sliders[index] = Math.min(1, Math.max(0, value));
    this.requestSynthesis();
  }

  setLabel(label: number[]): void {
    if (label.length !== this.sliders.length) {
      throw new RangeError(`label length ${label.length}, expected ${this.sliders.length}`);
    }
    label.forEach((v, i) => (this.sliders[i] = Math.min(1, Math.max(0, v))));
    this.requestSynthesis();
  }

  /** Debounced: bursts of edits inside the window produce one request. */
  requestSynthesis(): void {
    if (this.sourceImage === null) return;
    this.debouncer.schedule(() => this.issue());
  }

  private issue(): void {
    if (this.sourceImage === null) return;
    const seq = this.nextSeq++;
    const request: SynthesisRequest = { image: this.sourceImage, label: [...this.sliders] };
    this.inFlightCount++;
    this.events.onBusy?.(true);
    this.synthesize(request)
      .then((response) => this.applyResponse(seq, response))
      .catch((error) => {
        if (error instanceof ApiError) {
          this.events.onError(`${error.code}: ${error.message}`);
        } else {
          this.events.onError(String(error));
        }
      })
      .finally(() => {
        this.inFlightCount--;
        if (this.inFlightCount === 0) this.events.onBusy?.(false);
      });
  }

  /** Display only monotonically increasing sequence numbers. */
  applyResponse(seq: number, response: SynthesisResponse): void {
    if (seq <= this.appliedSeq) return; // stale: a newer response already landed
    this.appliedSeq = seq;
    this.lastResponseImage = response.image;
    this.events.onResult(response.image, seq);
  }
}
