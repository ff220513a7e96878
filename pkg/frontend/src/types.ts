/** Wire types mirroring the workbench service JSON. */

export interface RlePayload {
  size: [number, number]; // [height, width]
  counts: number[];
}

export interface MaskSummary {
  id: string;
  rle: RlePayload;
  area: number;
  bbox: [number, number, number, number];
  stability_score: number;
  predicted_iou: number | null;
}

export interface ImageLoadResponse {
  image: string;
  width: number;
  height: number;
  masks: MaskSummary[];
}

export interface RunnerUp {
  class_index: number;
  similarity: number;
}

export interface Assignment {
  segment_id: string;
  class_index: number;
  similarity: number;
  runner_up: RunnerUp | null;
}

export interface MatchResponse {
  image: string;
  segment_ids: string[];
  prompt_labels: string[];
  matrix: number[][];
  assignments: Assignment[];
}

export interface PromptEntry {
  label: string;
  description: string;
  export: boolean;
}

export interface PromptsUpdateResponse {
  recomputed_descriptions: number;
  matches: MatchResponse[];
}

export interface TemplateFields {
  object: string;
  color?: string;
  shape?: string;
  feature?: string;
}
