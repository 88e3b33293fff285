import { describe, expect, it } from "vitest";

import { SynthesisResponse } from "./api.js";
import { fetchFilmstrip, sweepLabels } from "./sweep.js";
import { CANNED_PNG } from "./mockServer.js";

const BASE = [0, 0.3, 0, 0, 0, 0, 0.8, 0, 0, 0, 0, 0];

describe("sweepLabels", () => {
  it("six steps produce the six grid-row label vectors", () => {
    const labels = sweepLabels(BASE, 1, 6);
    expect(labels).toHaveLength(6);
    expect(labels.map((l) => l[1])).toEqual([0, 0.2, 0.4, 0.6, 0.8, 1.0]);
    for (const label of labels) {
      expect(label[6]).toBeCloseTo(0.8); // untouched slots come from the base
      expect(label).toHaveLength(12);
    }
  });

  it("a single step reuses the current slider state unchanged", () => {
    const labels = sweepLabels(BASE, 1, 1);
    expect(labels).toEqual([BASE]);
    expect(labels[0]).not.toBe(BASE); // defensive copy
  });

  it("rejects bad arguments", () => {
    expect(() => sweepLabels(BASE, 1, 0)).toThrow(RangeError);
    expect(() => sweepLabels(BASE, 99, 3)).toThrow(RangeError);
  });
});

describe("fetchFilmstrip", () => {
  const ok = (image: string): SynthesisResponse => ({
    image,
    latency_ms: 1,
    model_info: {
      label_mode: "au", label_dim: 12, skip_position: "p2", z_dim: 100, checkpoint_hash: "0".repeat(64),
    },
  });

  it("collects every frame in order", async () => {
    const seen: number[][] = [];
    const frames = await fetchFilmstrip(
      async ({ label }) => {
        seen.push(label);
        return ok(CANNED_PNG);
      },
      "img",
      sweepLabels(BASE, 1, 6),
    );
    expect(frames).toHaveLength(6);
    expect(frames.every((f) => f.image === CANNED_PNG)).toBe(true);
    expect(seen.map((l) => l[1])).toEqual([0, 0.2, 0.4, 0.6, 0.8, 1.0]);
  });

  it("captures per-frame failures without losing the rest", async () => {
    let call = 0;
    const frames = await fetchFilmstrip(
      async ({ label }) => {
        if (call++ === 2) throw new Error("boom");
        return ok(`frame-${label[1]}`);
      },
      "img",
      sweepLabels(BASE, 1, 6),
    );
    expect(frames.filter((f) => f.image).length).toBe(5);
    expect(frames[2]!.error).toContain("boom");
    expect(frames[3]!.image).toBe("frame-0.6");
  });
});
