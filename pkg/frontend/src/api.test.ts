import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ApiError, InferenceClient } from "./api.js";
import { EditorController } from "./editor.js";
import { CANNED_PNG, createMockServer } from "./mockServer.js";

describe("InferenceClient against the mock server", () => {
  it("fetches model info", async () => {
    const server = createMockServer();
    const client = new InferenceClient("http://mock", server.fetch);
    const info = await client.modelInfo();
    expect(info.z_dim).toBe(100);
    expect(info.label_dim).toBe(12);
  });

  it("synthesize returns the canned PNG and echoes model info", async () => {
    const server = createMockServer();
    const client = new InferenceClient("http://mock", server.fetch);
    const response = await client.synthesize({ image: "abc", label: new Array(12).fill(0) });
    expect(response.image).toBe(CANNED_PNG);
    expect(response.model_info.label_mode).toBe("au");
    expect(server.synthesizeCount).toBe(1);
  });

  it("maps the error body onto ApiError", async () => {
    const server = createMockServer();
    const client = new InferenceClient("http://mock", server.fetch);
    await expect(client.synthesize({ image: "abc", label: [0, 0] })).rejects.toMatchObject({
      name: "ApiError",
      status: 400,
      code: "label_length",
    });
    try {
      await client.synthesize({ image: "abc", label: [0, 0] });
    } catch (error) {
      expect((error as ApiError).message).toContain("12");
    }
  });
});

describe("editor end to end against the mock server", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("drag -> debounce -> request -> canned image displayed", async () => {
    const server = createMockServer();
    const client = new InferenceClient("http://mock", server.fetch);
    const results: string[] = [];
    const errors: string[] = [];
    const controller = new EditorController(
      await vi.waitFor(() => client.modelInfo()),
      (request) => client.synthesize(request),
      { onResult: (image) => results.push(image), onError: (message) => errors.push(message) },
    );
    controller.setSource("upload-bytes");
    controller.setSlider(1, 1.0);
    controller.setSlider(11, 1.0); // a brow-raise + jaw-drop corner cell
    await vi.advanceTimersByTimeAsync(120);
    await vi.advanceTimersByTimeAsync(0);
    expect(server.synthesizeCount).toBe(1);
    expect(server.requests.at(-1)?.label?.[1]).toBe(1);
    expect(server.requests.at(-1)?.label?.[11]).toBe(1);
    expect(results).toEqual([CANNED_PNG]);
    expect(errors).toEqual([]);
  });

  it("label-dimension mismatch surfaces as a banner error", async () => {
    const server = createMockServer({ modelInfo: { label_dim: 8, label_mode: "emotion" } });
    const client = new InferenceClient("http://mock", server.fetch);
    const errors: string[] = [];
    // editor wired with the wrong dimensionality on purpose
    const controller = new EditorController(
      { label_mode: "au", label_dim: 12, skip_position: "p2", z_dim: 100, checkpoint_hash: "0".repeat(64) },
      (request) => client.synthesize(request),
      { onResult: () => undefined, onError: (message) => errors.push(message) },
    );
    controller.setSource("upload-bytes");
    await vi.advanceTimersByTimeAsync(120);
    await vi.advanceTimersByTimeAsync(0);
    expect(errors).toHaveLength(1);
    expect(errors[0]).toContain("label_length");
  });

  it("sweep filmstrip survives injected per-frame faults", async () => {
    vi.useRealTimers();
    const server = createMockServer({ failCalls: new Set([1, 3]) });
    const client = new InferenceClient("http://mock", server.fetch);
    const { fetchFilmstrip, sweepLabels } = await import("./sweep.js");
    const frames = await fetchFilmstrip(
      (request) => client.synthesize(request),
      "img",
      sweepLabels(new Array(12).fill(0), 11, 6),
    );
    expect(frames.filter((f) => f.image).length).toBe(4);
    expect(frames[1]!.error).toContain("numeric_error");
    expect(frames[3]!.error).toContain("numeric_error");
  });
});
