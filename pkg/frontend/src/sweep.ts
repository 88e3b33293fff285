/** Filmstrip sweeps: one label slot swept across [0, 1], other slots taken
 * from the current slider state, mirroring one row of a manifold grid. */

import { ApiError, SynthesisRequest, SynthesisResponse } from "./api.js";
import { SynthesizeFn } from "./editor.js";

export function sweepLabels(base: number[], axisIndex: number, steps: number): number[][] {
  if (steps < 1) throw new RangeError("steps must be >= 1");
  if (axisIndex < 0 || axisIndex >= base.length) {
    throw new RangeError(`axis index ${axisIndex} out of range`);
  }
  if (steps === 1) return [[...base]];
  const labels: number[][] = [];
  for (let i = 0; i < steps; i++) {
    const label = [...base];
    label[axisIndex] = i / (steps - 1);
    labels.push(label);
  }
  return labels;
}

export interface FilmstripFrame {
  label: number[];
  image?: string;
  error?: string;
}

/** Issue one request per frame; failures are captured per frame so the rest
 * of the strip still renders. */
export async function fetchFilmstrip(
  synthesize: SynthesizeFn,
  image: string,
  labels: number[][],
): Promise<FilmstripFrame[]> {
  const settled = await Promise.allSettled(
    labels.map((label) => synthesize({ image, label } satisfies SynthesisRequest)),
  );
  return settled.map((result, i) => {
    const label = labels[i] ?? [];
    if (result.status === "fulfilled") {
      const response: SynthesisResponse = result.value;
      return { label, image: response.image };
    }
    const reason = result.reason;
    const error = reason instanceof ApiError ? `${reason.code}: ${reason.message}` : String(reason);
    return { label, error };
  });
}
