"""Model-agnostic engine that turns images plus class-description prompts into
labeled detection/segmentation datasets, with suppression, matching, export,
evaluation, and an interactive prompt-tuning service."""

__version__ = "0.1.0"

from .masks import Mask, OverlapStats, RunLength, bbox_of, decode_rle, encode_rle, overlap_stats
from .nms import NmsConfig, NmsOutcome, filter_min_area, mask_nms
from .matching import (
    Assignment,
    EmbeddingBlock,
    Prompt,
    SimilarityMatrix,
    assign_labels,
    normalize_rows,
    read_embeddings,
    render_prompt,
    similarity_matrix,
    write_embeddings,
)
from .ingest import GridPromptSpec, SegmentCrop, SegmentSet, crop_for_embedding, grid_points, load_segments, save_segments

__all__ = [
    "Assignment",
    "EmbeddingBlock",
    "GridPromptSpec",
    "Mask",
    "NmsConfig",
    "NmsOutcome",
    "OverlapStats",
    "Prompt",
    "RunLength",
    "SegmentCrop",
    "SegmentSet",
    "SimilarityMatrix",
    "assign_labels",
    "bbox_of",
    "crop_for_embedding",
    "decode_rle",
    "encode_rle",
    "filter_min_area",
    "grid_points",
    "load_segments",
    "mask_nms",
    "normalize_rows",
    "overlap_stats",
    "read_embeddings",
    "render_prompt",
    "save_segments",
    "similarity_matrix",
    "write_embeddings",
]
