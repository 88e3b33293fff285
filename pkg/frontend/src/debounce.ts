/** Trailing-edge debouncer: a burst of calls fires once, after the window. */

export class TrailingDebouncer {
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(readonly windowMs: number) {}

  schedule(fn: () => void): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      fn();
    }, this.windowMs);
  }

  cancel(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
  }

  get pending(): boolean {
    return this.timer !== null;
  }
}
