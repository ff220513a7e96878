"""Prompt construction, embedding interchange, cosine similarity, and label assignment."""
from __future__ import annotations

import json
import shlex
import struct
import subprocess
import tempfile
from dataclasses import dataclass
from hashlib import sha256
from pathlib import Path

import numpy as np

from .errors import (
    AdapterFailure,
    DimensionMismatch,
    IdMismatch,
    InvariantViolation,
    MagicMismatch,
    ParseError,
    ZeroNormRow,
)

_VOWELS = "aeiou"

EMBEDDINGS_MAGIC = b"SDME"
EMBEDDINGS_VERSION = 1


def render_prompt(
    obj: str,
    *,
    color: str | None = None,
    shape: str | None = None,
    feature: str | None = None,
) -> str:
    """Compose a class description: a/an {color} {shape} {object} with {feature}.

    The article agrees with the first word that follows it; "with {feature}"
    is omitted when no feature is given. Free-form descriptions do not pass
    through here at all.
    """
    if not obj or not obj.strip():
        raise ValueError("object term must be non-empty")
    parts = [p.strip() for p in (color, shape, obj) if p and p.strip()]
    article = "an" if parts[0][0].lower() in _VOWELS else "a"
    text = " ".join([article] + parts)
    if feature and feature.strip():
        text = f"{text} with {feature.strip()}"
    return text


@dataclass(frozen=True)
class Prompt:
    """One class prompt: label, rendered description, and its export flag."""

    label: str
    description: str
    class_index: int
    export: bool = True


def load_prompts(path: str | Path) -> list[Prompt]:
    """Read a prompt file: [{"label", "description", "export"}], index by order."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read prompt file {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise ParseError(f"prompt file {path} must contain a JSON array")
    prompts = []
    seen = set()
    for idx, entry in enumerate(raw):
        try:
            label = str(entry["label"])
            description = str(entry["description"])
            export = bool(entry.get("export", True))
        except (TypeError, KeyError) as exc:
            raise ParseError(f"prompt entry {idx} malformed: {exc}") from exc
        if label in seen:
            raise InvariantViolation(f"duplicate prompt label {label!r}")
        seen.add(label)
        prompts.append(Prompt(label=label, description=description, class_index=idx, export=export))
    return prompts


def save_prompts(prompts: list[Prompt], path: str | Path) -> None:
    payload = [
        {"label": p.label, "description": p.description, "export": p.export}
        for p in prompts
    ]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def prompts_digest(prompts: list[Prompt]) -> str:
    payload = json.dumps(
        [[p.label, p.description, p.export] for p in prompts], ensure_ascii=True
    )
    return sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True, eq=False)
class EmbeddingBlock:
    """Float32 vectors with aligned ids; rows are segments or prompt texts."""

    ids: tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self) -> None:
        vec = np.asarray(self.vectors, dtype=np.float32)
        if vec.ndim != 2:
            raise ValueError("vectors must be a 2-D matrix")
        if len(self.ids) != vec.shape[0]:
            raise ValueError(
                f"{len(self.ids)} ids for {vec.shape[0]} vector rows"
            )
        vec = np.ascontiguousarray(vec)
        vec.setflags(write=False)
        object.__setattr__(self, "vectors", vec)
        object.__setattr__(self, "ids", tuple(self.ids))

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def count(self) -> int:
        return int(self.vectors.shape[0])


def normalize_rows(block: EmbeddingBlock) -> EmbeddingBlock:
    """Scale every row to unit L2 norm. Idempotent; rejects degenerate rows."""
    vec = block.vectors.astype(np.float64)
    norms = np.linalg.norm(vec, axis=1)
    bad = np.flatnonzero(~np.isfinite(norms) | (norms == 0.0))
    if bad.size:
        raise ZeroNormRow(
            f"row {block.ids[int(bad[0])]!r} has zero or non-finite norm"
        )
    return EmbeddingBlock(ids=block.ids, vectors=(vec / norms[:, None]).astype(np.float32))


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Cosine similarities, one row per segment and one column per prompt."""

    segment_ids: tuple[str, ...]
    prompt_labels: tuple[str, ...]
    values: np.ndarray  # float64, (num segments, num prompts)


def similarity_matrix(img: EmbeddingBlock, txt: EmbeddingBlock) -> SimilarityMatrix:
    """Dot products between normalized segment and text embeddings."""
    if img.dim != txt.dim:
        raise DimensionMismatch(
            f"segment embeddings have dim {img.dim}, text embeddings {txt.dim}"
        )
    values = img.vectors.astype(np.float64) @ txt.vectors.astype(np.float64).T
    if values.size and float(np.abs(values).max()) > 1.0 + 1e-4:
        raise InvariantViolation("similarity outside [-1, 1]: inputs are not normalized")
    return SimilarityMatrix(
        segment_ids=img.ids, prompt_labels=txt.ids, values=values
    )


@dataclass(frozen=True)
class Assignment:
    """A segment bound to the prompt with maximal similarity."""

    segment_id: str
    class_index: int
    similarity: float
    runner_up: tuple[int, float] | None


def assign_labels(matrix: SimilarityMatrix) -> list[Assignment]:
    """Argmax over prompt columns per segment; ties go to the lowest index.

    The runner-up column is recorded for workbench display; it is None when
    there is only one prompt.
    """
    values = matrix.values
    if values.ndim != 2 or values.shape[1] == 0:
        raise ValueError("at least one prompt column is required")
    assignments = []
    for row_idx, seg_id in enumerate(matrix.segment_ids):
        row = values[row_idx]
        best = int(np.argmax(row))
        runner: tuple[int, float] | None = None
        if row.shape[0] > 1:
            rest = row.copy()
            rest[best] = -np.inf
            second = int(np.argmax(rest))
            runner = (second, float(row[second]))
        assignments.append(
            Assignment(
                segment_id=seg_id,
                class_index=best,
                similarity=float(row[best]),
                runner_up=runner,
            )
        )
    return assignments


def write_embeddings(block: EmbeddingBlock, path: str | Path) -> None:
    """Write the binary interchange file: magic, version, count, dim, payload, ids."""
    with open(path, "wb") as fh:
        fh.write(EMBEDDINGS_MAGIC)
        fh.write(struct.pack("<III", EMBEDDINGS_VERSION, block.count, block.dim))
        fh.write(block.vectors.astype("<f4").tobytes(order="C"))
        fh.write(json.dumps(list(block.ids)).encode("utf-8"))


def read_embeddings(path: str | Path) -> EmbeddingBlock:
    """Read the binary interchange file; lossless at float32 precision."""
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != EMBEDDINGS_MAGIC:
        raise MagicMismatch(f"{path} does not start with {EMBEDDINGS_MAGIC!r}")
    if len(data) < 16:
        raise ParseError(f"{path} is truncated before the header ends")
    version, count, dim = struct.unpack("<III", data[4:16])
    if version != EMBEDDINGS_VERSION:
        raise ParseError(f"{path} has unsupported version {version}")
    payload_len = count * dim * 4
    payload = data[16 : 16 + payload_len]
    if len(payload) < payload_len:
        raise ParseError(
            f"{path} payload is {len(payload)} bytes, header requires {payload_len}"
        )
    trailer = data[16 + payload_len :]
    try:
        ids = json.loads(trailer.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DimensionMismatch(
            f"{path}: trailing id array does not parse; header count/dim "
            f"({count}x{dim}) likely disagree with the payload"
        ) from exc
    if not isinstance(ids, list) or len(ids) != count:
        raise ParseError(f"{path} has {len(ids)} ids for {count} rows")
    vectors = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
    return EmbeddingBlock(ids=tuple(str(i) for i in ids), vectors=vectors)


def run_embedder_adapter(
    command: str,
    *,
    texts: list[tuple[str, str]] | None = None,
    images: list[tuple[str, str]] | None = None,
    tmp_root: str | Path | None = None,
    timeout: float | None = None,
) -> EmbeddingBlock:
    """Invoke an external embedder: command <manifest.json> <output.embeddings>.

    Exactly one of texts [(id, text)] or images [(id, raster path)] must be
    given. Returned rows are validated against the requested ids and reordered
    to the request order.
    """
    if (texts is None) == (images is None):
        raise ValueError("provide exactly one of texts or images")
    if texts is not None:
        manifest = {"kind": "texts", "items": [{"id": i, "text": t} for i, t in texts]}
        requested = [i for i, _ in texts]
    else:
        manifest = {"kind": "images", "items": [{"id": i, "path": p} for i, p in images]}
        requested = [i for i, _ in images]

    with tempfile.TemporaryDirectory(dir=tmp_root, prefix="embed-") as tmp:
        manifest_path = Path(tmp) / "manifest.json"
        out_path = Path(tmp) / "out.embeddings"
        manifest_path.write_text(json.dumps(manifest), encoding="utf-8")
        argv = shlex.split(command) + [str(manifest_path), str(out_path)]
        try:
            proc = subprocess.run(argv, capture_output=True, timeout=timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise AdapterFailure(f"embedder {command!r} failed to run: {exc}") from exc
        if proc.returncode != 0 or not out_path.exists():
            raise AdapterFailure(
                f"embedder {command!r} exited {proc.returncode}: "
                f"{proc.stderr.decode('utf-8', 'replace')[-2000:]}"
            )
        block = read_embeddings(out_path)

    if set(block.ids) != set(requested):
        missing = sorted(set(requested) - set(block.ids))
        extra = sorted(set(block.ids) - set(requested))
        raise IdMismatch(f"embedder id mismatch: missing {missing}, extra {extra}")
    if list(block.ids) != requested:
        order = [block.ids.index(i) for i in requested]
        block = EmbeddingBlock(ids=tuple(requested), vectors=block.vectors[order])
    return block
