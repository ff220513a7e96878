import type { MatchResponse, MaskSummary } from "../src/types.js";

/** 3 masks x 3 prompts; values are arbitrary fixture numbers, deliberately
 * unrelated to anything the client could compute, so rendering them verbatim
 * proves the UI displays service-provided numbers only. */
export const MATCH_FIXTURE: MatchResponse = {
  image: "scene-0000.png",
  segment_ids: ["seg-1", "seg-2", "seg-3"],
  prompt_labels: ["redberry", "greenleaf", "blueberry"],
  matrix: [
    [0.91, 0.22, 0.13],
    [0.4, 0.4, 0.1],
    [0.05, 0.31, 0.87],
  ],
  assignments: [
    {
      segment_id: "seg-1",
      class_index: 0,
      similarity: 0.91,
      runner_up: { class_index: 1, similarity: 0.22 },
    },
    {
      // Tie row: the engine resolves ties to the lowest class index.
      segment_id: "seg-2",
      class_index: 0,
      similarity: 0.4,
      runner_up: { class_index: 1, similarity: 0.4 },
    },
    {
      segment_id: "seg-3",
      class_index: 2,
      similarity: 0.87,
      runner_up: { class_index: 1, similarity: 0.31 },
    },
  ],
};

export const SINGLE_CELL_FIXTURE: MatchResponse = {
  image: "one.png",
  segment_ids: ["only"],
  prompt_labels: ["thing"],
  matrix: [[0.5]],
  assignments: [
    { segment_id: "only", class_index: 0, similarity: 0.5, runner_up: null },
  ],
};

/** 4x4 grid: a 2x2 block at (0,0) plus a nested single pixel mask at (1,1). */
export const MASKS_FIXTURE: MaskSummary[] = [
  {
    id: "outer",
    rle: { size: [4, 4], counts: [0, 2, 2, 2, 10] },
    area: 4,
    bbox: [0, 0, 2, 2],
    stability_score: 0.9,
    predicted_iou: null,
  },
  {
    id: "inner",
    rle: { size: [4, 4], counts: [5, 1, 10] },
    area: 1,
    bbox: [1, 1, 1, 1],
    stability_score: 0.8,
    predicted_iou: null,
  },
];
