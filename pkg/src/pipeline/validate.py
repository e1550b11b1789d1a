"""
Validate: Data quality checks on a dataset folder before training.
Directories, pairing, dimensions, decodability and mask labels.
Writes <out>/data_quality_report.json with pass/fail and counts.
"""
import json
from datetime import datetime, timezone
from pathlib import Path

from src.pipeline.extract import DEFAULT_LAYOUT, IMAGE_SUFFIX, list_ids, load_image, load_mask
from src.utils.errors import DataIOError, MaskValidationError

REPORT_NAME = "data_quality_report.json"


def _check(report: dict, name: str, ok: bool, message_ok: str, message_fail: str, details: dict) -> bool:
    report["checks"].append({
        "name": name,
        "pass": ok,
        "message": message_ok if ok else message_fail,
        "details": details,
    })
    if not ok:
        report["overall_pass"] = False
    return ok


def run_validation(
    data_dir: str | Path,
    layout: dict | None = None,
    need_bare: bool = True,
    need_masks: bool = False,
    need_bare_masks: bool = False,
    num_classes: int = 6,
) -> dict:
    """
    Run all checks against a dataset folder.
    Returns a report dict suitable for data_quality_report.json.
    """
    lay = {**DEFAULT_LAYOUT, **(layout or {})}
    root = Path(data_dir)
    report = {
        "run_ts": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
        "data_dir": str(root),
        "overall_pass": True,
        "checks": [],
        "summary": {"total_images": 0, "valid_pairs": 0, "valid_masks": 0},
    }

    # Directories
    required = {"snow_dir": True, "bare_dir": need_bare, "masks_dir": need_masks, "bare_masks_dir": need_bare_masks}
    dirs = {key: root / lay[key] for key, needed in required.items() if needed}
    missing = [str(path) for path in dirs.values() if not path.is_dir()]
    if not _check(report, "directories_present", not missing,
                  "Required directories present", f"Missing directories: {missing}",
                  {"required": [str(p) for p in dirs.values()], "missing": missing}):
        return report

    # Non-empty
    ids = list_ids(dirs["snow_dir"])
    report["summary"]["total_images"] = len(ids)
    if not _check(report, "non_empty", bool(ids), f"{len(ids)} images found",
                  f"No {IMAGE_SUFFIX} images in {dirs['snow_dir']}", {"count": len(ids)}):
        return report

    # Pairing
    unpaired = {}
    for key, path in dirs.items():
        if key == "snow_dir":
            continue
        others = set(list_ids(path))
        absent = sorted(set(ids) - others)
        if absent:
            unpaired[lay[key]] = absent[:20]
    _check(report, "pairing_complete", not unpaired, "Every image has its counterparts",
           f"Images without counterparts: { {k: len(v) for k, v in unpaired.items()} }",
           {"missing_by_dir": unpaired})

    # Decoding, dimensions and labels
    undecodable, mismatched, bad_labels = [], [], []
    valid_pairs = valid_masks = 0
    for i in ids:
        name = f"{i}{IMAGE_SUFFIX}"
        try:
            shape = load_image(dirs["snow_dir"] / name).pixels.shape[:2]
        except DataIOError as exc:
            undecodable.append(f"{lay['snow_dir']}/{name}: {exc}")
            continue
        pair_ok = True
        for key, path in dirs.items():
            if key == "snow_dir" or not (path / name).exists():
                continue
            try:
                if key in ("masks_dir", "bare_masks_dir"):
                    other = load_mask(path / name, num_classes).values.shape
                    valid_masks += 1
                else:
                    other = load_image(path / name).pixels.shape[:2]
            except MaskValidationError as exc:
                bad_labels.append(f"{lay[key]}/{name}: {exc}")
                pair_ok = False
                continue
            except DataIOError as exc:
                undecodable.append(f"{lay[key]}/{name}: {exc}")
                pair_ok = False
                continue
            if other != shape:
                mismatched.append(f"{lay[key]}/{name}: {other} != {shape}")
                pair_ok = False
        valid_pairs += pair_ok

    _check(report, "images_decodable", not undecodable, "All files decode",
           f"Undecodable files: {len(undecodable)}", {"files": undecodable[:20]})
    _check(report, "dimensions_consistent", not mismatched, "Counterparts share dimensions",
           f"Dimension mismatches: {len(mismatched)}", {"mismatches": mismatched[:20]})
    _check(report, "mask_labels_valid", not bad_labels, f"Mask labels within 0..{num_classes - 1}",
           f"Masks with invalid labels: {len(bad_labels)}", {"masks": bad_labels[:20]})
    report["summary"]["valid_pairs"] = valid_pairs
    report["summary"]["valid_masks"] = valid_masks
    return report


def write_report(report: dict, output_dir: str | Path) -> str:
    path = Path(output_dir) / REPORT_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)
    return str(path)
