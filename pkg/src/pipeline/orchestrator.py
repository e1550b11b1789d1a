"""
Orchestrator: Command-line front end for the snow hazard pipeline.

    python -m src.pipeline.orchestrator synth            --out DIR [--count N] [--coverage P|a:b:s]
    python -m src.pipeline.orchestrator train-translator --data DIR --out DIR
    python -m src.pipeline.orchestrator train-segmenter  --data DIR --out DIR
    python -m src.pipeline.orchestrator evaluate         --segmenter CKPT --data DIR --out DIR
    python -m src.pipeline.orchestrator compute-shr      --translator CKPT --segmenter CKPT --images DIR --out DIR
    python -m src.pipeline.orchestrator report           --report CSV --out DIR

Settings resolve as flags > --config file > src/config/config.yaml. Every run writes
manifest.json into its output directory. Exit codes: 0 success, 1 some items failed,
2 invalid configuration, input or dataset.
"""
import argparse
import json
import os
import re
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

# Ensure project root is on path when running as script
_PROJECT_ROOT = os.getenv("PROJECT_ROOT") or Path(__file__).resolve().parents[2]
if str(_PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(_PROJECT_ROOT))

import pandas as pd  # noqa: E402

from src.utils.config import load_config, load_overrides, resolve_section, runtime_workers  # noqa: E402
from src.utils.errors import (  # noqa: E402
    ConfigError,
    DataIOError,
    FormatError,
    GenerationError,
    InputError,
    MaskValidationError,
    ReportParseError,
)
from src.utils.logger import get_logger  # noqa: E402

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_INVALID = 2

MANIFEST_NAME = "manifest.json"
TRANSLATOR_FILE = "translator.snwg"
SEGMENTER_FILE = "segmenter.snwg"
HAZARD_CSV = "hazard_report.csv"
FAILURES_CSV = "failures.csv"

_INVALID = (ConfigError, InputError, DataIOError, FormatError, GenerationError, MaskValidationError, ReportParseError)


@dataclass
class RunManifest:
    command: str
    version: str
    started: str
    seed: int | None = None
    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    out_dir: str | None = None
    finished: str | None = None
    exit_code: int | None = None

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True, default=str)
        return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")


def parse_size(text: str) -> tuple[int, int]:
    match = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", text)
    if not match:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}")
    return int(match.group(1)), int(match.group(2))


def _out_dir(args, config: dict, key: str) -> Path:
    from src.pipeline.extract import data_path

    return Path(args.out) if args.out else data_path(config["paths"].get(key, "output"))


def _data_dir(args, config: dict) -> Path:
    from src.pipeline.extract import data_path

    return Path(args.data) if args.data else data_path(config["paths"].get("data_dir", "data"))


def _size_flags(args) -> tuple[int | None, int | None]:
    return args.size if args.size else (None, None)


def _split_config(config: dict, fraction_key: str):
    from src.pipeline.transform import SplitConfig

    section = config.get("split") or {}
    try:
        return SplitConfig(float(section.get(fraction_key, 0.9)), int(section.get("seed", 0))).validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid split settings: {exc}") from exc


def _validate_dataset(data_dir: Path, out_dir: Path, layout: dict, logger, **needs) -> None:
    """Run the data quality checks; a failed check aborts the command before any training."""
    from src.pipeline.validate import run_validation, write_report

    report = run_validation(data_dir, layout, **needs)
    report_path = write_report(report, out_dir)
    logger.info("Validate: report written to %s; overall_pass=%s", report_path, report["overall_pass"])
    failed = [c for c in report["checks"] if not c["pass"]]
    for c in failed:
        logger.error("Data quality check failed: %s - %s", c["name"], c["message"])
    if failed:
        raise InputError(
            f"dataset {data_dir} failed validation ({', '.join(c['name'] for c in failed)}); see {report_path}"
        )


# --- Commands ------------------------------------------------------------------

def cmd_synth(args, config: dict, manifest: RunManifest, logger) -> int:
    from src.pipeline.extract import write_scene
    from src.pipeline.synth import SceneSpec, parse_coverage, scene_specs, synth_dataset

    height, width = _size_flags(args)
    overrides = load_overrides(args.config)
    section = resolve_section(config, "synth", overrides, {
        "seed": args.seed, "count": args.count, "coverage": args.coverage, "height": height, "width": width,
    })
    coverage = parse_coverage(section.pop("coverage", None))
    seed = int(section.pop("seed", 0))
    count = section.pop("count", 50)
    if isinstance(coverage, list) and args.count is None and "count" not in overrides:
        count = len(coverage)
    try:
        count = int(count)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"count must be an integer, got {count!r}") from exc
    base = SceneSpec.from_dict(section)

    out_dir = _out_dir(args, config, "data_dir")
    manifest.out_dir = str(out_dir)
    manifest.seed = seed
    manifest.config = {**base.to_dict(), "count": count, "coverage": coverage, "seed": seed}
    manifest.outputs = {"data_dir": str(out_dir)}

    specs = scene_specs(base, count, coverage, seed)
    scenes = synth_dataset(specs, workers=runtime_workers(config))
    for scene in scenes:
        write_scene(scene, out_dir, config.get("dataset"))
    manifest.outputs["scenes"] = len(scenes)
    logger.info("Synth: %d scenes written to %s", len(scenes), out_dir)
    return EXIT_OK


def cmd_train_translator(args, config: dict, manifest: RunManifest, logger) -> int:
    from src.models.translator import TranslatorConfig, train_translator
    from src.pipeline.extract import list_ids, read_paired
    from src.pipeline.samples import PairedSample
    from src.pipeline.transform import resize, split

    height, width = _size_flags(args)
    tconf = TranslatorConfig.from_dict(resolve_section(config, "translator", load_overrides(args.config), {
        "seed": args.seed, "epochs": args.epochs, "batch_size": args.batch, "lr": args.lr,
        "lambda_l1": args.lambda_l1, "height": height, "width": width,
    }))
    data_dir = _data_dir(args, config)
    out_dir = _out_dir(args, config, "checkpoints_dir")
    manifest.out_dir = str(out_dir)
    layout = config.get("dataset") or {}
    manifest.seed = tconf.seed
    manifest.config = tconf.to_dict()
    manifest.inputs = {"data_dir": str(data_dir)}

    _validate_dataset(data_dir, out_dir, layout, logger, need_bare=True)
    ids = list_ids(data_dir / layout.get("snow_dir", "snow"))
    train_ids, val_ids = split(ids, _split_config(config, "translator_fraction"))

    def sized(chosen: list[str]) -> list[PairedSample]:
        return [
            PairedSample(p.sample_id, resize(p.snow, tconf.height, tconf.width), resize(p.bare, tconf.height, tconf.width))
            for p in read_paired(data_dir, layout, chosen)
        ]

    ckpt, history = train_translator(sized(train_ids), tconf, validation=sized(val_ids))
    ckpt.metadata["validation_ids"] = sorted(val_ids)
    ckpt_path = ckpt.save(out_dir / TRANSLATOR_FILE)
    history_path = out_dir / "translator_history.csv"
    history.to_csv(history_path, index=False, float_format="%.6f")
    manifest.outputs = {"checkpoint": str(ckpt_path), "history": str(history_path)}
    logger.info("Translator checkpoint written to %s", ckpt_path)
    return EXIT_OK


def cmd_train_segmenter(args, config: dict, manifest: RunManifest, logger) -> int:
    from src.models.segmenter import SegmenterConfig, train_segmenter
    from src.pipeline.extract import list_ids, read_annotated
    from src.pipeline.transform import prepare_segmenter_samples, split

    height, width = _size_flags(args)
    if height is not None and height != width:
        raise ConfigError(f"segmenter input is square, got --size {height}x{width}")
    sconf = SegmenterConfig.from_dict(resolve_section(config, "segmenter", load_overrides(args.config), {
        "seed": args.seed, "epochs": args.epochs, "batch_size": args.batch, "lr": args.lr, "input_size": height,
    }))
    data_dir = _data_dir(args, config)
    out_dir = _out_dir(args, config, "checkpoints_dir")
    manifest.out_dir = str(out_dir)
    layout = config.get("dataset") or {}
    manifest.seed = sconf.seed
    manifest.config = sconf.to_dict()
    manifest.inputs = {"data_dir": str(data_dir)}

    _validate_dataset(
        data_dir, out_dir, layout, logger,
        need_bare=sconf.include_bare, need_masks=True, need_bare_masks=sconf.include_bare,
        num_classes=sconf.num_classes,
    )
    ids = list_ids(data_dir / layout.get("snow_dir", "snow"))
    # Split by scene so a scene's bare frame stays on the same side as its snowy frame.
    train_ids, val_ids = split(ids, _split_config(config, "segmenter_fraction"))

    def prepared(chosen: list[str]):
        frames = read_annotated(data_dir, layout, chosen, include_bare=sconf.include_bare)
        return prepare_segmenter_samples(frames, sconf.input_size, sconf.tiles)

    ckpt, history = train_segmenter(prepared(train_ids), sconf, validation=prepared(val_ids))
    ckpt.metadata["validation_ids"] = sorted(val_ids)
    ckpt_path = ckpt.save(out_dir / SEGMENTER_FILE)
    history_path = out_dir / "segmenter_history.csv"
    history.to_csv(history_path, index=False, float_format="%.6f")
    manifest.outputs = {"checkpoint": str(ckpt_path), "history": str(history_path)}
    logger.info("Segmenter checkpoint written to %s", ckpt_path)
    return EXIT_OK


def cmd_evaluate(args, config: dict, manifest: RunManifest, logger) -> int:
    from src.models.segmenter import SegmenterCheckpoint, evaluate_segmenter
    from src.pipeline.extract import read_annotated
    from src.pipeline.metrics import metrics_frame
    from src.pipeline.report import write_class_chart

    ckpt = SegmenterCheckpoint.load(args.segmenter)
    data_dir = _data_dir(args, config)
    out_dir = _out_dir(args, config, "output_dir")
    manifest.out_dir = str(out_dir)
    layout = config.get("dataset") or {}
    manifest.config = ckpt.config.to_dict()
    manifest.inputs = {"segmenter": str(args.segmenter), "data_dir": str(data_dir)}

    _validate_dataset(data_dir, out_dir, layout, logger, need_bare=False, need_masks=True,
                      num_classes=ckpt.config.num_classes)
    cm = evaluate_segmenter(ckpt, read_annotated(data_dir, layout))
    frame = metrics_frame(cm, ckpt.config.class_names)
    names = ckpt.config.class_names

    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.csv"
    frame.to_csv(metrics_path, index=False, float_format="%.6f")
    cm_path = out_dir / "confusion_matrix.csv"
    pd.DataFrame(cm.counts, index=pd.Index(names, name="truth"), columns=names).to_csv(cm_path)
    chart_path = write_class_chart(frame, out_dir / "class_iou.svg")
    manifest.outputs = {"metrics": str(metrics_path), "confusion_matrix": str(cm_path), "chart": str(chart_path)}

    mean = frame[frame["class"] == "mean"].iloc[0]
    logger.info("Evaluate: mIoU=%.4f mean_accuracy=%.4f mean_f1=%.4f over %d pixels",
                mean["iou"], mean["accuracy"], mean["f1"], cm.total)
    return EXIT_OK


def cmd_compute_shr(args, config: dict, manifest: RunManifest, logger) -> int:
    from src.models.segmenter import SegmenterCheckpoint
    from src.models.translator import TranslatorCheckpoint
    from src.pipeline.extract import read_images, save_image, save_mask
    from src.pipeline.hazard import compute_reports
    from src.pipeline.report import montage_images, reports_frame, write_failures_csv, write_report_csv

    hazard = resolve_section(config, "hazard", load_overrides(args.config), {"montage": args.montage or None})
    translator = TranslatorCheckpoint.load(args.translator)
    segmenter = SegmenterCheckpoint.load(args.segmenter)
    images_dir = Path(args.images)
    out_dir = _out_dir(args, config, "output_dir")
    manifest.out_dir = str(out_dir)
    manifest.config = {"hazard": hazard, "translator": translator.config.to_dict(),
                       "segmenter": segmenter.config.to_dict()}
    manifest.inputs = {"translator": str(args.translator), "segmenter": str(args.segmenter),
                       "images": str(images_dir)}

    images = read_images(images_dir)
    if not images:
        logger.warning("No images found in %s; writing an empty report", images_dir)
    batch = compute_reports(translator, segmenter, images, workers=runtime_workers(config))

    csv_path = write_report_csv(reports_frame(batch.reports), out_dir / HAZARD_CSV)
    failures_path = write_failures_csv(batch.failures, out_dir / FAILURES_CSV)
    for r in batch.reports:
        save_mask(r.intersection, out_dir / "intersections" / f"{r.image_id}.png")
    manifest.outputs = {"report": str(csv_path), "failures": str(failures_path),
                        "intersections": str(out_dir / "intersections")}

    if hazard.get("montage") and batch.reports:
        cell = tuple(int(v) for v in hazard.get("montage_cell", (64, 96)))
        by_id = {img.image_id: img for img in images}
        panels = {
            "inputs": [by_id[r.image_id].pixels for r in batch.reports],
            "fakes": [r.fake.to_input_image().pixels for r in batch.reports],
            "road_labels": [r.road_label for r in batch.reports],
            "snow_labels": [r.snow_label for r in batch.reports],
            "intersections": [r.intersection for r in batch.reports],
        }
        written = []
        for name, tiles in panels.items():
            for page in montage_images(name, tiles, cell):
                written.append(str(save_image(page, out_dir / "montage" / f"{page.image_id}.png")))
        manifest.outputs["montage"] = written

    logger.info("Compute SHR: %d reported, %d failed, report at %s", len(batch.reports), len(batch.failures), csv_path)
    return EXIT_PARTIAL if batch.failures else EXIT_OK


def cmd_report(args, config: dict, manifest: RunManifest, logger) -> int:
    from src.pipeline.report import read_report_csv, write_pixel_chart, write_shr_chart, write_summary

    report_path = Path(args.report)
    out_dir = _out_dir(args, config, "output_dir")
    manifest.out_dir = str(out_dir)
    manifest.inputs = {"report": str(report_path)}

    frame = read_report_csv(report_path)
    failures = []
    failures_path = report_path.parent / FAILURES_CSV
    if failures_path.exists():
        listed = pd.read_csv(failures_path, dtype=str).fillna("")
        failures = list(zip(listed["image_id"], listed["error"]))
        manifest.inputs["failures"] = str(failures_path)

    shr_path = write_shr_chart(frame, out_dir / "shr_chart.svg")
    pixel_path = write_pixel_chart(frame, out_dir / "pixel_chart.svg")
    summary_path = write_summary(frame, out_dir / "summary.txt", failures)
    manifest.outputs = {"shr_chart": str(shr_path), "pixel_chart": str(pixel_path), "summary": str(summary_path)}
    logger.info("Report: %d images charted into %s", len(frame), out_dir)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train-translator": cmd_train_translator,
    "train-segmenter": cmd_train_segmenter,
    "evaluate": cmd_evaluate,
    "compute-shr": cmd_compute_shr,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key: value YAML file overriding the command's settings")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--data", help="dataset directory")
    training.add_argument("--size", type=parse_size, help="network input size HxW")
    training.add_argument("--epochs", type=int)
    training.add_argument("--batch", type=int)
    training.add_argument("--lr", type=float)

    parser = argparse.ArgumentParser(prog="snow-hazard", description="Snow hazard ratio pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    synth.add_argument("--count", type=int)
    synth.add_argument("--coverage", help="snow coverage of the road: a number or start:stop:step")
    synth.add_argument("--size", type=parse_size, help="scene size HxW")

    translator = sub.add_parser("train-translator", parents=[common, training], help="train the translator")
    translator.add_argument("--lambda-l1", dest="lambda_l1", type=float)
    sub.add_parser("train-segmenter", parents=[common, training], help="train the segmenter")

    evaluate = sub.add_parser("evaluate", parents=[common], help="score a segmenter on annotated data")
    evaluate.add_argument("--segmenter", required=True)
    evaluate.add_argument("--data", help="annotated dataset directory")

    shr = sub.add_parser("compute-shr", parents=[common], help="snow hazard ratio for a folder of images")
    shr.add_argument("--translator", required=True)
    shr.add_argument("--segmenter", required=True)
    shr.add_argument("--images", required=True)
    shr.add_argument("--montage", action="store_true", help="also write 4x4 montages")

    report = sub.add_parser("report", parents=[common], help="charts and summary from a hazard report")
    report.add_argument("--report", required=True)
    return parser


def main(argv: list[str] | None = None, config_path: str | Path | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(config_path)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID

    log_dir = Path(_PROJECT_ROOT) / config.get("paths", {}).get("logs_dir", "logs")
    logger = get_logger("snow_hazard.orchestrator", log_dir=log_dir)
    manifest = RunManifest(
        command=args.command,
        version=str(config.get("project", {}).get("version", "")),
        started=_now(),
    )
    logger.info("Command %s started", args.command)

    try:
        code = COMMANDS[args.command](args, config, manifest, logger)
    except _INVALID as e:
        logger.error("Command %s failed: %s", args.command, e)
        code = EXIT_INVALID
    except Exception as e:
        logger.exception("Command %s failed: %s", args.command, e)
        code = EXIT_PARTIAL

    manifest.finished = _now()
    manifest.exit_code = code
    if manifest.out_dir:
        try:
            manifest.write(Path(manifest.out_dir))
        except OSError as e:
            logger.error("Cannot write run manifest: %s", e)
    logger.info("Command %s finished with exit code %d", args.command, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
