"""HTTP/JSON workbench for interactive prompt tuning.

A session loads images once (segments, suppression, crops, segment embeddings)
and then lets the operator edit prompts and re-match instantly: prompt edits
recompute text embeddings for changed descriptions only and never touch the
cached segments or segment embeddings.
"""
from __future__ import annotations

import json
import uuid
from pathlib import Path
from threading import Lock

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from PIL import Image as PilImage
from pydantic import BaseModel, Field

from .errors import EngineError
from .export import export_dataset
from .ingest import crop_for_embedding
from .masks import Mask
from .matching import EmbeddingBlock, Prompt, render_prompt, run_embedder_adapter
from .nms import filter_min_area, mask_nms
from .pipeline import (
    EmbeddingCache,
    PipelineConfig,
    _embed_crops,
    _obtain_segments,
    dataset_from_payload,
    match_segments,
)


class RlePayload(BaseModel):
    size: list[int]
    counts: list[int]


class MaskSummary(BaseModel):
    id: str
    rle: RlePayload
    area: int
    bbox: list[int]
    stability_score: float
    predicted_iou: float | None = None


class ImageLoadResponse(BaseModel):
    image: str
    width: int
    height: int
    masks: list[MaskSummary]


class RunnerUpModel(BaseModel):
    class_index: int
    similarity: float


class AssignmentModel(BaseModel):
    segment_id: str
    class_index: int
    similarity: float
    runner_up: RunnerUpModel | None = None


class MatchResponse(BaseModel):
    image: str
    segment_ids: list[str]
    prompt_labels: list[str]
    matrix: list[list[float]]
    assignments: list[AssignmentModel]


class PromptModel(BaseModel):
    label: str
    description: str
    export: bool = True


class PromptsUpdateResponse(BaseModel):
    recomputed_descriptions: int
    matches: list[MatchResponse]


class ExportRequest(BaseModel):
    formats: list[str] = Field(default=["coco"])
    out_dir: str | None = None


class ExportResponse(BaseModel):
    paths: dict[str, str]


class RenderRequest(BaseModel):
    object: str
    color: str | None = None
    shape: str | None = None
    feature: str | None = None


class RenderResponse(BaseModel):
    description: str


class SessionCreated(BaseModel):
    id: str


class _LoadedImage:
    def __init__(self, ref: str, size: tuple[int, int], masks: list[Mask], block: EmbeddingBlock):
        self.ref = ref
        self.size = size
        self.masks = masks
        self.segment_block = block
        self.matrix = None
        self.assignments = None


class _Session:
    def __init__(self, prompts: list[Prompt]):
        self.id = uuid.uuid4().hex
        self.prompts = prompts
        self.images: dict[str, _LoadedImage] = {}
        self.text_vectors: dict[str, np.ndarray] = {}
        self.lock = Lock()


def _match_response(loaded: _LoadedImage, prompts: list[Prompt]) -> MatchResponse:
    return MatchResponse(
        image=loaded.ref,
        segment_ids=list(loaded.segment_block.ids),
        prompt_labels=[p.label for p in prompts],
        matrix=[[float(v) for v in row] for row in loaded.matrix.values],
        assignments=[
            AssignmentModel(
                segment_id=a.segment_id,
                class_index=a.class_index,
                similarity=a.similarity,
                runner_up=None
                if a.runner_up is None
                else RunnerUpModel(class_index=a.runner_up[0], similarity=a.runner_up[1]),
            )
            for a in loaded.assignments
        ],
    )


def create_app(config: PipelineConfig, static_dir=None) -> FastAPI:
    config.validate()
    from .matching import load_prompts

    initial_prompts = load_prompts(config.prompts_path)
    cache = EmbeddingCache(config.cache_dir)
    app = FastAPI(title="segmatch workbench", version="1")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    sessions: dict[str, _Session] = {}
    registry_lock = Lock()

    def _session(session_id: str) -> _Session:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return session

    def _text_block(session: _Session) -> EmbeddingBlock:
        descriptions = [p.description for p in session.prompts]
        rows = np.stack([session.text_vectors[d] for d in descriptions])
        return EmbeddingBlock(ids=tuple(descriptions), vectors=rows)

    def _ensure_text_vectors(session: _Session) -> int:
        """Embed only descriptions the session has not seen before."""
        missing = [
            d
            for d in dict.fromkeys(p.description for p in session.prompts)
            if d not in session.text_vectors
        ]
        if not missing:
            return 0
        if config.embeddings_dir is not None:
            from .matching import read_embeddings

            block = read_embeddings(config.embeddings_dir / "prompts.embeddings")
            index = {desc: k for k, desc in enumerate(block.ids)}
            for desc in missing:
                if desc not in index:
                    raise HTTPException(
                        status_code=422,
                        detail=f"prompts.embeddings lacks description {desc!r}",
                    )
                session.text_vectors[desc] = block.vectors[index[desc]]
            return len(missing)
        block = run_embedder_adapter(
            config.embedder_command, texts=[(d, d) for d in missing]
        )
        for desc, row in zip(missing, block.vectors):
            session.text_vectors[desc] = row
        return len(missing)

    def _rematch(session: _Session) -> list[MatchResponse]:
        text_block = _text_block(session)
        responses = []
        for loaded in session.images.values():
            matrix, assignments = match_segments(
                loaded.segment_block,
                text_block,
                config.similarity_floor,
                config.floor_class_index,
            )
            loaded.matrix = matrix
            loaded.assignments = assignments
            responses.append(_match_response(loaded, session.prompts))
        return responses

    @app.post("/sessions", response_model=SessionCreated)
    def create_session() -> SessionCreated:
        session = _Session(list(initial_prompts))
        with registry_lock:
            sessions[session.id] = session
        return SessionCreated(id=session.id)

    @app.post("/sessions/{session_id}/images", response_model=ImageLoadResponse)
    def load_image(session_id: str, body: dict) -> ImageLoadResponse:
        session = _session(session_id)
        ref = body.get("image")
        if not ref:
            raise HTTPException(status_code=422, detail="body must carry an 'image' ref")
        with session.lock:
            try:
                segment_set = _obtain_segments(config, ref, cache)
                masks = filter_min_area(list(segment_set.segments), config.nms.min_area)
                if config.nms_enabled:
                    outcome = mask_nms(masks, config.nms)
                    masks = [masks[k] for k in outcome.kept]
                masks = [m for m in masks if m.area > 0]
                with PilImage.open(config.images_dir / ref) as img:
                    pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
                crops = [
                    crop_for_embedding(pixels, m, config.crop_mode, config.embed_resolution)
                    for m in masks
                ]
                block = _embed_crops(config, ref, crops, cache)
            except FileNotFoundError as exc:
                raise HTTPException(status_code=404, detail=str(exc)) from exc
            except EngineError as exc:
                raise HTTPException(
                    status_code=422, detail=f"{type(exc).__name__}: {exc}"
                ) from exc
            loaded = _LoadedImage(ref, segment_set.image_size, masks, block)
            session.images[ref] = loaded
            try:
                _ensure_text_vectors(session)
            except EngineError as exc:
                raise HTTPException(
                    status_code=422, detail=f"{type(exc).__name__}: {exc}"
                ) from exc
            text_block = _text_block(session)
            matrix, assignments = match_segments(
                loaded.segment_block,
                text_block,
                config.similarity_floor,
                config.floor_class_index,
            )
            loaded.matrix = matrix
            loaded.assignments = assignments
        return ImageLoadResponse(
            image=ref,
            width=segment_set.image_size[0],
            height=segment_set.image_size[1],
            masks=[
                MaskSummary(
                    id=m.id,
                    rle=RlePayload(
                        size=list(m.to_rle().size), counts=list(m.to_rle().counts)
                    ),
                    area=m.area,
                    bbox=list(m.bbox),
                    stability_score=float(m.stability_score),
                    predicted_iou=m.predicted_iou,
                )
                for m in masks
            ],
        )

    @app.put("/sessions/{session_id}/prompts", response_model=PromptsUpdateResponse)
    def update_prompts(session_id: str, body: list[PromptModel]) -> PromptsUpdateResponse:
        session = _session(session_id)
        if not body:
            raise HTTPException(status_code=422, detail="prompt set must not be empty")
        labels = [p.label for p in body]
        if len(set(labels)) != len(labels):
            raise HTTPException(status_code=422, detail="duplicate prompt labels")
        with session.lock:
            session.prompts = [
                Prompt(
                    label=p.label,
                    description=p.description,
                    class_index=idx,
                    export=p.export,
                )
                for idx, p in enumerate(body)
            ]
            try:
                recomputed = _ensure_text_vectors(session)
                matches = _rematch(session)
            except EngineError as exc:
                raise HTTPException(
                    status_code=422, detail=f"{type(exc).__name__}: {exc}"
                ) from exc
        return PromptsUpdateResponse(recomputed_descriptions=recomputed, matches=matches)

    @app.get(
        "/sessions/{session_id}/images/{image_ref}/match", response_model=MatchResponse
    )
    def get_match(session_id: str, image_ref: str) -> MatchResponse:
        session = _session(session_id)
        loaded = session.images.get(image_ref)
        if loaded is None:
            raise HTTPException(status_code=404, detail=f"image {image_ref} not loaded")
        if loaded.matrix is None:
            raise HTTPException(status_code=409, detail="image not matched yet")
        return _match_response(loaded, session.prompts)

    @app.post("/sessions/{session_id}/export", response_model=ExportResponse)
    def export_session(session_id: str, body: ExportRequest) -> ExportResponse:
        session = _session(session_id)
        with session.lock:
            matched = [
                loaded for loaded in session.images.values() if loaded.assignments
            ]
            if not matched:
                raise HTTPException(status_code=409, detail="nothing matched yet")
            payloads = []
            for ref in sorted(session.images):
                loaded = session.images[ref]
                if not loaded.assignments:
                    continue
                segments = []
                for mask, assignment in zip(loaded.masks, loaded.assignments):
                    rle = mask.to_rle()
                    segments.append(
                        {
                            "id": mask.id,
                            "rle": {"size": list(rle.size), "counts": list(rle.counts)},
                            "area": mask.area,
                            "bbox": list(mask.bbox),
                            "stability_score": mask.stability_score,
                            "predicted_iou": mask.predicted_iou,
                            "class_index": assignment.class_index,
                            "similarity": assignment.similarity,
                            "runner_up": list(assignment.runner_up)
                            if assignment.runner_up
                            else None,
                        }
                    )
                payloads.append(
                    {
                        "image": ref,
                        "width": loaded.size[0],
                        "height": loaded.size[1],
                        "segments": segments,
                    }
                )
            dataset = dataset_from_payload(
                payloads,
                session.prompts,
                config_digest=f"session-{session.id}",
                name=config.dataset_name,
                splits=None,
                nms_provenance={
                    "enabled": config.nms_enabled,
                    "threshold": config.nms.threshold,
                    "min_area": config.nms.min_area,
                },
            )
            out_dir = (
                config.out_dir / "workbench" / session.id
                if body.out_dir is None
                else Path(body.out_dir)
            )
            try:
                paths = export_dataset(dataset, tuple(body.formats), out_dir)
            except (EngineError, ValueError) as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
        return ExportResponse(paths=paths)

    @app.get("/sessions/{session_id}/images/{image_ref}/file")
    def image_file(session_id: str, image_ref: str):
        from fastapi.responses import FileResponse

        _session(session_id)
        path = (config.images_dir / image_ref).resolve()
        if config.images_dir.resolve() not in path.parents or not path.is_file():
            raise HTTPException(status_code=404, detail=f"no image {image_ref}")
        return FileResponse(path)

    @app.get("/sessions/{session_id}/promptset")
    def download_promptset(session_id: str) -> Response:
        session = _session(session_id)
        payload = [
            {"label": p.label, "description": p.description, "export": p.export}
            for p in session.prompts
        ]
        return Response(
            content=json.dumps(payload, indent=2) + "\n",
            media_type="application/json",
            headers={"Content-Disposition": 'attachment; filename="prompts.json"'},
        )

    @app.post("/prompts/render", response_model=RenderResponse)
    def render(body: RenderRequest) -> RenderResponse:
        try:
            text = render_prompt(
                body.object, color=body.color, shape=body.shape, feature=body.feature
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return RenderResponse(description=text)

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
