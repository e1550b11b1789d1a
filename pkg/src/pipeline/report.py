"""
Report: Hazard CSV, bar charts, montages and the text summary.
- CSV columns: image_id, pix_road, pix_snow_over_road, shr_percent. The two pixel counts
  are the exact ratio; shr_percent is rounded to 2 decimals.
- Charts are SVG with fixed hash salt and no date, so equal inputs give equal bytes.
  Bars carry ids `bar-<i>` and the axes background `<name>-axes`, which lets a chart be
  read back with read_chart_values.
- Montages are 4 x 4 row-major pages padded with mid-gray.
"""
import re
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from src.pipeline.hazard import HazardReport  # noqa: E402
from src.pipeline.samples import InputImage, MaskImage  # noqa: E402
from src.pipeline.transform import resize_array, resize_mask  # noqa: E402
from src.utils.errors import DataIOError, ReportParseError  # noqa: E402
from src.utils.logger import module_logger  # noqa: E402

logger = module_logger(__name__)

REPORT_COLUMNS = ["image_id", "pix_road", "pix_snow_over_road", "shr_percent"]
FAILURE_COLUMNS = ["image_id", "error"]
MONTAGE_ROWS = 4
MONTAGE_COLS = 4
PAD_GRAY = 128
CLASS_PALETTE = np.array([
    (0, 0, 0),          # background
    (128, 64, 128),     # road
    (250, 170, 30),     # pole-sign
    (107, 142, 35),     # green
    (255, 255, 255),    # snow
    (70, 130, 180),     # sky
], dtype=np.uint8)
BINARY_PALETTE = np.array([(0, 0, 0), (220, 20, 60)], dtype=np.uint8)

_SVG_RC = {"svg.hashsalt": "snow-hazard", "svg.fonttype": "none"}


# --- CSV ---------------------------------------------------------------------

def reports_frame(reports: Sequence[HazardReport]) -> pd.DataFrame:
    rows = [
        {"image_id": r.image_id, "pix_road": r.pix_road,
         "pix_snow_over_road": r.pix_snow_over_road, "shr_percent": r.shr_percent}
        for r in reports
    ]
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def write_report_csv(frame: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.2f")
    return path


def write_failures_csv(failures: Sequence[tuple[str, str]], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(failures), columns=FAILURE_COLUMNS).to_csv(path, index=False)
    return path


def _parser_line(exc: Exception) -> int | None:
    match = re.search(r"line (\d+)", str(exc))
    return int(match.group(1)) if match else None


def read_report_csv(path: str | Path) -> pd.DataFrame:
    """Parse and check a hazard report; problems raise ReportParseError with a 1-based line number."""
    path = Path(path)
    if not path.exists():
        raise DataIOError("report not found", path)
    try:
        frame = pd.read_csv(path, dtype={"image_id": str})
    except pd.errors.EmptyDataError as exc:
        raise ReportParseError("empty report file", line=1) from exc
    except pd.errors.ParserError as exc:
        raise ReportParseError(f"malformed CSV ({exc})", line=_parser_line(exc)) from exc

    missing = [c for c in REPORT_COLUMNS if c not in frame.columns]
    if missing:
        raise ReportParseError(f"missing columns {missing}", line=1)

    for offset, row in enumerate(frame.itertuples(index=False)):
        line = offset + 2
        try:
            road = _count(row.pix_road, "pix_road")
            snow = _count(row.pix_snow_over_road, "pix_snow_over_road")
            percent = float(row.shr_percent)
        except (TypeError, ValueError) as exc:
            raise ReportParseError(str(exc), line=line) from exc
        if pd.isna(row.image_id) or str(row.image_id) == "":
            raise ReportParseError("empty image_id", line=line)
        if road == 0 or snow > road:
            raise ReportParseError(f"need 0 <= pix_snow_over_road <= pix_road and pix_road > 0, got {snow}/{road}",
                                   line=line)
        if not 0 <= percent <= 100 or abs(percent - 100 * snow / road) > 0.005 + 1e-9:
            raise ReportParseError(f"shr_percent {percent} disagrees with {snow}/{road}", line=line)
    frame["pix_road"] = frame["pix_road"].astype(np.int64)
    frame["pix_snow_over_road"] = frame["pix_snow_over_road"].astype(np.int64)
    frame["shr_percent"] = frame["shr_percent"].astype(float)
    return frame


def _count(value, name: str) -> int:
    number = float(value)
    if not np.isfinite(number) or number < 0 or not number.is_integer():
        raise ValueError(f"{name} must be a non-negative integer, got {value!r}")
    return int(number)


# --- Summary -------------------------------------------------------------------

def summarize(frame: pd.DataFrame, failures: Sequence[tuple[str, str]] = ()) -> dict:
    shr = frame["shr_percent"].astype(float)
    return {
        "images": len(frame) + len(failures),
        "reported": len(frame),
        "failures": len(failures),
        "shr_percent_min": float(shr.min()) if len(shr) else None,
        "shr_percent_median": float(shr.median()) if len(shr) else None,
        "shr_percent_max": float(shr.max()) if len(shr) else None,
        "pix_road_total": int(frame["pix_road"].sum()),
        "pix_snow_over_road_total": int(frame["pix_snow_over_road"].sum()),
    }


def write_summary(frame: pd.DataFrame, path: str | Path, failures: Sequence[tuple[str, str]] = ()) -> Path:
    stats = summarize(frame, failures)
    lines = []
    for key, value in stats.items():
        if value is None:
            value = "n/a"
        elif isinstance(value, float):
            value = f"{value:.2f}"
        lines.append(f"{key}: {value}")
    if failures:
        lines.append("failed images:")
        lines.extend(f"  {image_id}: {error}" for image_id, error in failures)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# --- Charts --------------------------------------------------------------------

def _bar_chart(labels: Sequence[str], values: Sequence[float], path: Path, name: str, title: str,
               ylabel: str, ylim: tuple[float, float] | None = None,
               stacked: Sequence[float] | None = None) -> Path:
    with plt.rc_context(_SVG_RC):
        width = max(6.0, 0.45 * len(labels) + 2)
        fig, ax = plt.subplots(figsize=(width, 4))
        ax.patch.set_gid(f"{name}-axes")
        x = np.arange(len(labels))
        bars = ax.bar(x, values, width=0.7, color="#4878a8", label="snow over road" if stacked is not None else None)
        for i, rect in enumerate(bars):
            rect.set_gid(f"bar-{i}")
        if stacked is not None:
            upper = ax.bar(x, stacked, width=0.7, bottom=values, color="#c8c8c8", label="road without snow")
            for i, rect in enumerate(upper):
                rect.set_gid(f"clear-{i}")
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=8)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if ylim is not None:
            ax.set_ylim(*ylim)
        if stacked is not None:
            ax.legend(loc="upper right", fontsize=8)
        fig.tight_layout()
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def write_shr_chart(frame: pd.DataFrame, path: str | Path) -> Path:
    """One bar per image: SHR percent on a fixed 0..100 axis."""
    return _bar_chart(frame["image_id"].tolist(), frame["shr_percent"].tolist(), Path(path), "shr",
                      "Snow hazard ratio per image", "SHR (%)", ylim=(0, 100))


def write_pixel_chart(frame: pd.DataFrame, path: str | Path) -> Path:
    """One stacked bar per image: snow-over-road pixels below, road without snow on top.

    The full bar height is the road pixel count.
    """
    top = float(frame["pix_road"].max()) * 1.05 if len(frame) else 1.0
    return _bar_chart(frame["image_id"].tolist(), frame["pix_snow_over_road"].tolist(), Path(path), "pixels",
                      "Pixel count of the snow-over-road region", "pixels", ylim=(0, max(top, 1.0)),
                      stacked=(frame["pix_road"] - frame["pix_snow_over_road"]).tolist())


def write_class_chart(metrics: pd.DataFrame, path: str | Path) -> Path:
    """Per-class IoU bars from a metrics_frame (class rows only)."""
    rows = metrics[~metrics["class"].isin(["mean", "pixel_accuracy"])]
    return _bar_chart(rows["class"].tolist(), rows["iou"].fillna(0.0).tolist(), Path(path), "iou",
                      "Per-class IoU", "IoU", ylim=(0, 1))


_GROUP = re.compile(r'<g id="(?P<gid>[^"]+)">\s*<path d="(?P<d>[^"]+)"')


def _y_extent(d: str) -> tuple[float, float]:
    numbers = [float(v) for v in re.findall(r"-?\d+(?:\.\d+)?(?:e-?\d+)?", d)]
    ys = numbers[1::2]
    return min(ys), max(ys)


def read_chart_values(path: str | Path, name: str, ylim: tuple[float, float], series: str = "bar") -> list[float]:
    """Bar heights in data units, recovered from an SVG written by this module.

    `series` picks the bar group: "bar" for the main bars, "clear" for the upper stack of the pixel chart.
    """
    text = Path(path).read_text(encoding="utf-8")
    groups = {m.group("gid"): m.group("d") for m in _GROUP.finditer(text)}
    if f"{name}-axes" not in groups:
        raise ReportParseError(f"no axes '{name}' in {path}")
    top, bottom = _y_extent(groups[f"{name}-axes"])
    scale = (ylim[1] - ylim[0]) / (bottom - top)
    bars = sorted((int(gid.split("-")[1]), d) for gid, d in groups.items() if re.fullmatch(rf"{series}-\d+", gid))
    heights = []
    for _, d in bars:
        lo, hi = _y_extent(d)
        heights.append((hi - lo) * scale)
    return heights


# --- Montage -------------------------------------------------------------------

def colorize(mask: MaskImage) -> np.ndarray:
    palette = BINARY_PALETTE if mask.num_classes == 2 else CLASS_PALETTE
    return palette[mask.values]


def _fit(pixels: np.ndarray, cell: tuple[int, int]) -> np.ndarray:
    if pixels.shape[:2] == tuple(cell):
        return pixels
    return np.clip(np.rint(resize_array(pixels, cell[0], cell[1])), 0, 255).astype(np.uint8)


def montage_pages(tiles: Sequence[np.ndarray | MaskImage], cell: tuple[int, int],
                  rows: int = MONTAGE_ROWS, cols: int = MONTAGE_COLS) -> list[np.ndarray]:
    """Row-major rows x cols pages of H x W x 3 cells; missing cells are mid-gray."""
    per_page = rows * cols
    ch, cw = cell
    prepared = []
    for tile in tiles:
        if isinstance(tile, MaskImage):
            prepared.append(colorize(resize_mask(tile, ch, cw)))
        else:
            prepared.append(_fit(np.asarray(tile, dtype=np.uint8), cell))
    pages = []
    for start in range(0, max(len(prepared), 1), per_page):
        page = np.full((rows * ch, cols * cw, 3), PAD_GRAY, dtype=np.uint8)
        for k, tile in enumerate(prepared[start:start + per_page]):
            r, c = divmod(k, cols)
            page[r * ch:(r + 1) * ch, c * cw:(c + 1) * cw] = tile
        pages.append(page)
    return pages


def montage_images(name: str, tiles: Sequence, cell: tuple[int, int]) -> list[InputImage]:
    """Montage pages as images named `<name>` (single page) or `<name>_p<k>`."""
    pages = montage_pages(tiles, cell)
    if len(pages) == 1:
        return [InputImage(name, pages[0])]
    return [InputImage(f"{name}_p{k + 1}", page) for k, page in enumerate(pages)]
