import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { PromptController, type PromptControllerOptions } from "../src/prompts.js";
import type { PromptsUpdateResponse } from "../src/types.js";

const EMPTY_RESPONSE: PromptsUpdateResponse = {
  recomputed_descriptions: 0,
  matches: [],
};

function makeController(overrides: Partial<PromptControllerOptions> = {}) {
  const putPrompts = vi.fn().mockResolvedValue(EMPTY_RESPONSE);
  const renderPrompt = vi
    .fn()
    .mockImplementation((fields) =>
      Promise.resolve({ description: `a ${fields.color ?? ""} ${fields.object}`.trim() }),
    );
  const onMatches = vi.fn();
  const onPending = vi.fn();
  const onError = vi.fn();
  const controller = new PromptController({
    putPrompts,
    renderPrompt,
    onMatches,
    onPending,
    onError,
    debounceMs: 250,
    ...overrides,
  });
  controller.load([
    { label: "redberry", description: "a red round berry", export: true },
    { label: "greenleaf", description: "a green square leaf", export: true },
  ]);
  return { controller, putPrompts, renderPrompt, onMatches, onPending, onError };
}

beforeEach(() => {
  vi.useFakeTimers();
});

afterEach(() => {
  vi.useRealTimers();
});

describe("debounced PUT", () => {
  it("rapid keystrokes produce exactly one PUT after the debounce window", async () => {
    const { controller, putPrompts } = makeController();
    for (const text of ["a", "a d", "a de", "a deep", "a deep red berry"]) {
      controller.editDescription(0, text);
      vi.advanceTimersByTime(100); // below the 250 ms window
    }
    expect(putPrompts).not.toHaveBeenCalled();
    await vi.advanceTimersByTimeAsync(300);
    expect(putPrompts).toHaveBeenCalledTimes(1);
    const sent = putPrompts.mock.calls[0][0];
    expect(sent[0].description).toBe("a deep red berry");
  });

  it("reports pending state around the request", async () => {
    const { controller, onPending } = makeController();
    controller.editDescription(0, "a ruby berry");
    await vi.advanceTimersByTimeAsync(300);
    expect(onPending.mock.calls.map((call) => call[0])).toEqual([true, false]);
  });
});

describe("validation", () => {
  it("empty object field blocks the render call and the PUT", async () => {
    const { controller, putPrompts, renderPrompt } = makeController();
    await controller.editTemplateFields(0, { object: "", color: "red" });
    expect(renderPrompt).not.toHaveBeenCalled();
    await vi.advanceTimersByTimeAsync(500);
    expect(putPrompts).not.toHaveBeenCalled();
    expect(controller.snapshot()[0].error).toMatch(/object/);
  });

  it("template fields compose the description via the service preview", async () => {
    const { controller, putPrompts, renderPrompt } = makeController();
    await controller.editTemplateFields(0, { object: "berry", color: "crimson" });
    expect(renderPrompt).toHaveBeenCalledWith({ object: "berry", color: "crimson" });
    expect(controller.snapshot()[0].description).toBe("a crimson berry");
    await vi.advanceTimersByTimeAsync(300);
    expect(putPrompts).toHaveBeenCalledTimes(1);
  });

  it("service 422 surfaces inline", async () => {
    const { controller, onError } = makeController({
      putPrompts: vi.fn().mockRejectedValue(new Error("HTTP 422: zero-norm row")),
    });
    controller.editDescription(0, "a strange berry");
    await vi.advanceTimersByTimeAsync(300);
    expect(onError).toHaveBeenCalledWith("HTTP 422: zero-norm row");
  });
});

describe("stale responses", () => {
  it("discards an older response that resolves after a newer one", async () => {
    const resolvers: Array<(value: PromptsUpdateResponse) => void> = [];
    const putPrompts = vi.fn().mockImplementation(
      () =>
        new Promise<PromptsUpdateResponse>((resolve) => {
          resolvers.push(resolve);
        }),
    );
    const { controller, onMatches } = makeController({ putPrompts });

    controller.editDescription(0, "first edit");
    await vi.advanceTimersByTimeAsync(300);
    controller.editDescription(0, "second edit");
    await vi.advanceTimersByTimeAsync(300);
    expect(putPrompts).toHaveBeenCalledTimes(2);

    const newest: PromptsUpdateResponse = {
      recomputed_descriptions: 1,
      matches: [
        {
          image: "x.png",
          segment_ids: [],
          prompt_labels: ["newest"],
          matrix: [],
          assignments: [],
        },
      ],
    };
    resolvers[1](newest);
    await vi.runAllTimersAsync();
    resolvers[0](EMPTY_RESPONSE); // stale: must be dropped
    await vi.runAllTimersAsync();

    expect(onMatches).toHaveBeenCalledTimes(1);
    expect(onMatches).toHaveBeenCalledWith(newest);
  });
});
