"""Command-line front end: run, eval, export, merge-manual, ablate-nms, bench, serve."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, EngineError
from .evaluation import (
    coco_eval,
    load_coco_dataset,
    load_semantic_map,
    voc_eval,
)
from .export import ablation_variant, export_dataset, labeled_dataset_from_coco, merge_manual
from .matching import Prompt
from .pipeline import (
    CONFIG_SCHEMA,
    PipelineConfig,
    bench,
    dataset_from_payload,
    run_pipeline,
)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2


def _parse_formats(value: str | None) -> tuple[str, ...] | None:
    if value is None:
        return None
    return tuple(part.strip() for part in value.split(",") if part.strip())


def _load_config(args) -> PipelineConfig:
    if args.config:
        config = PipelineConfig.from_file(args.config)
    else:
        raise ConfigError("--config is required")
    overrides = {}
    if getattr(args, "images", None):
        overrides["images_dir"] = args.images.resolve()
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out.resolve()
    if getattr(args, "workers", None):
        overrides["workers"] = args.workers
    if getattr(args, "gt", None):
        overrides["gt_path"] = args.gt.resolve()
    formats = _parse_formats(getattr(args, "formats", None))
    if formats:
        overrides["formats"] = formats
    if getattr(args, "no_nms", False):
        overrides["nms_enabled"] = False
    if getattr(args, "nms_threshold", None) is not None:
        overrides["nms"] = replace(config.nms, threshold=args.nms_threshold)
    if getattr(args, "cache_dir", None):
        overrides["cache_dir"] = args.cache_dir.resolve()
    return replace(config, **overrides) if overrides else config


def _cmd_run(args) -> int:
    if args.print_schema:
        print(json.dumps(CONFIG_SCHEMA, indent=2))
        return EXIT_OK
    config = _load_config(args)
    record = run_pipeline(config)
    print(
        f"processed {len(record.images)} images: "
        f"{record.succeeded} ok, {record.failed} failed"
    )
    for rec in record.images:
        if not rec.ok:
            print(f"  FAILED {rec.image} at {rec.stage}: {rec.error}", file=sys.stderr)
    if record.images and record.succeeded == 0:
        return EXIT_FATAL
    if record.failed:
        return EXIT_PARTIAL
    return EXIT_OK


def _cmd_eval(args) -> int:
    out_dir = args.out
    if args.kind in ("box", "mask"):
        gt, _ = load_coco_dataset(args.gt, want_masks=args.kind == "mask")
        pred, _ = load_coco_dataset(args.pred, want_masks=args.kind == "mask")
        report = coco_eval(gt, pred, args.kind)
        print(report.to_table())
        if out_dir:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / f"report_{args.kind}.json").write_text(
                json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8"
            )
            (out_dir / f"report_{args.kind}.txt").write_text(
                report.to_table() + "\n", encoding="utf-8"
            )
        return EXIT_OK
    # semantic
    if not (args.gt_dir and args.pred_dir and args.classes):
        raise ConfigError("semantic eval needs --gt-dir, --pred-dir, and --classes")
    gt_paths = sorted(args.gt_dir.glob("*.png"))
    if not gt_paths:
        raise ConfigError(f"no ground-truth maps in {args.gt_dir}")
    gt_maps, pred_maps = [], []
    for gt_path in gt_paths:
        pred_path = args.pred_dir / gt_path.name
        if not pred_path.exists():
            raise ConfigError(f"prediction map missing for {gt_path.name}")
        gt_maps.append(load_semantic_map(gt_path))
        pred_maps.append(load_semantic_map(pred_path))
    report = voc_eval(
        gt_maps, pred_maps, args.classes, include_background=args.include_background
    )
    print(report.to_table())
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report_semantic.json").write_text(
            json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8"
        )
        (out_dir / "report_semantic.txt").write_text(
            report.to_table() + "\n", encoding="utf-8"
        )
    return EXIT_OK


def load_run_payload(run_dir: Path) -> tuple[list[dict], list[Prompt], str]:
    instances_path = run_dir / "instances.json"
    if not instances_path.exists():
        raise ConfigError(f"{run_dir} has no instances.json (is it a run output?)")
    raw = json.loads(instances_path.read_text(encoding="utf-8"))
    prompts = [
        Prompt(
            label=entry["label"],
            description=entry["description"],
            class_index=idx,
            export=bool(entry.get("export", True)),
        )
        for idx, entry in enumerate(raw["prompts"])
    ]
    return raw["images"], prompts, raw["config_digest"]


def _cmd_export(args) -> int:
    payloads, prompts, digest = load_run_payload(args.run)
    formats = _parse_formats(args.formats) or ("coco",)
    dataset = dataset_from_payload(
        payloads, prompts, digest, args.name, splits=None, nms_provenance={}, formats=formats
    )
    out = args.out or (args.run / "exports")
    paths = export_dataset(dataset, formats, out)
    for key, value in sorted(paths.items()):
        print(f"{key}: {value}")
    return EXIT_OK


def _cmd_merge_manual(args) -> int:
    pseudo = labeled_dataset_from_coco(args.pseudo, name="pseudo")
    manual = labeled_dataset_from_coco(args.manual, name="manual")
    if args.images_file:
        image_ids = [
            line.strip()
            for line in args.images_file.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
    else:
        image_ids = [part.strip() for part in (args.images or "").split(",") if part.strip()]
    merged = merge_manual(pseudo, manual, image_ids)
    formats = _parse_formats(args.formats) or ("coco",)
    paths = export_dataset(merged, formats, args.out)
    for key, value in sorted(paths.items()):
        print(f"{key}: {value}")
    return EXIT_OK


def _cmd_ablate_nms(args) -> int:
    config = _load_config(args)
    out = config.out_dir
    raw_config = replace(
        config, nms_enabled=False, out_dir=out / "pre-nms", gt_path=None
    )
    record = run_pipeline(raw_config)
    if record.images and record.succeeded == 0:
        return EXIT_FATAL
    payloads, prompts, digest = load_run_payload(raw_config.out_dir)
    pre_nms = dataset_from_payload(
        payloads,
        prompts,
        digest,
        config.dataset_name,
        config.splits,
        {"enabled": False, "threshold": config.nms.threshold, "min_area": config.nms.min_area},
    )
    with_nms, without_nms = ablation_variant(pre_nms, config.nms)
    export_dataset(with_nms, config.formats, out / "with-nms")
    export_dataset(without_nms, config.formats, out / "without-nms")
    print(f"with-nms instances: {len(with_nms.instances)}")
    print(f"without-nms instances: {len(without_nms.instances)}")
    return EXIT_PARTIAL if record.failed else EXIT_OK


def _cmd_bench(args) -> int:
    config = _load_config(args)
    summary = bench(config, args.repeats)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = _load_config(args)
    app = create_app(config, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segmatch",
        description=(
            "Turn images plus class-description prompts into labeled "
            "detection/segmentation datasets."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=Path, help="JSON pipeline configuration")
        p.add_argument("--images", type=Path, help="override images directory")
        p.add_argument("--out", type=Path, help="override output directory")
        p.add_argument("--workers", type=int, help="worker pool size")
        p.add_argument("--no-nms", action="store_true", help="disable mask suppression")
        p.add_argument("--nms-threshold", type=float, help="overlap threshold (default 0.9)")
        p.add_argument(
            "--formats", help="comma-separated: coco,yolo-det,yolo-seg,voc"
        )
        p.add_argument("--gt", type=Path, help="COCO ground truth; enables evaluation")
        p.add_argument("--cache-dir", type=Path, help="embedding/segment cache directory")

    run_p = sub.add_parser("run", help="run the full pipeline over an image directory")
    add_common(run_p)
    run_p.add_argument(
        "--print-schema", action="store_true", help="print the config JSON schema and exit"
    )
    run_p.set_defaults(func=_cmd_run)

    eval_p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    eval_p.add_argument("--kind", choices=["box", "mask", "semantic"], required=True)
    eval_p.add_argument("--gt", type=Path, help="COCO ground truth (box/mask)")
    eval_p.add_argument("--pred", type=Path, help="COCO predictions (box/mask)")
    eval_p.add_argument("--gt-dir", type=Path, help="ground-truth index PNGs (semantic)")
    eval_p.add_argument("--pred-dir", type=Path, help="prediction index PNGs (semantic)")
    eval_p.add_argument("--classes", type=int, help="number of foreground classes (semantic)")
    eval_p.add_argument("--include-background", action="store_true")
    eval_p.add_argument("--out", type=Path, help="write reports here")
    eval_p.set_defaults(func=_cmd_eval)

    export_p = sub.add_parser("export", help="re-export a previous run's instances")
    export_p.add_argument("--run", type=Path, required=True, help="run output directory")
    export_p.add_argument("--formats", help="comma-separated formats")
    export_p.add_argument("--out", type=Path)
    export_p.add_argument("--name", default="dataset")
    export_p.set_defaults(func=_cmd_export)

    merge_p = sub.add_parser(
        "merge-manual", help="replace pseudo labels with manual labels for chosen images"
    )
    merge_p.add_argument("--pseudo", type=Path, required=True, help="pseudo-label COCO file")
    merge_p.add_argument("--manual", type=Path, required=True, help="manual-label COCO file")
    merge_p.add_argument("--images", help="comma-separated image file names to swap")
    merge_p.add_argument("--images-file", type=Path, help="file with one image name per line")
    merge_p.add_argument("--formats", help="comma-separated formats")
    merge_p.add_argument("--out", type=Path, required=True)
    merge_p.set_defaults(func=_cmd_merge_manual)

    ablate_p = sub.add_parser(
        "ablate-nms", help="emit paired exports with and without suppression"
    )
    add_common(ablate_p)
    ablate_p.set_defaults(func=_cmd_ablate_nms)

    bench_p = sub.add_parser("bench", help="repeat a run and summarize stage timings")
    add_common(bench_p)
    bench_p.add_argument("--repeats", type=int, default=1)
    bench_p.set_defaults(func=_cmd_bench)

    serve_p = sub.add_parser("serve", help="start the prompt-tuning workbench service")
    add_common(serve_p)
    serve_p.add_argument("--port", type=int, default=8000)
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--static", type=Path, help="built UI assets to host")
    serve_p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
