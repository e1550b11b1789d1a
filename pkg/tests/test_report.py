"""Unit tests for hazard report CSV, charts, summary and montages."""
import os
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

ROOT = Path(__file__).resolve().parents[1]
os.environ["PROJECT_ROOT"] = str(ROOT)

HEADER = "image_id,pix_road,pix_snow_over_road,shr_percent\n"


def _frame(n=16, seed=0):
    rng = np.random.default_rng(seed)
    road = rng.integers(50, 400, size=n)
    snow = (road * rng.uniform(0, 1, size=n)).astype(int)
    return pd.DataFrame({
        "image_id": [f"img_{i:02d}" for i in range(n)],
        "pix_road": road,
        "pix_snow_over_road": snow,
        "shr_percent": np.round(100 * snow / road, 2),
    })


def _write(tmp_path, body):
    path = tmp_path / "report.csv"
    path.write_text(HEADER + body, encoding="utf-8")
    return path


def test_reports_frame_and_csv_round_trip(tmp_path, scenes, oracles):
    from src.pipeline.hazard import compute_reports
    from src.pipeline.report import read_report_csv, reports_frame, write_report_csv
    translator, segmenter = oracles
    result = compute_reports(translator, segmenter, [s.snow for s in scenes])
    frame = reports_frame(result.reports)
    path = write_report_csv(frame, tmp_path / "hazard_report.csv")
    loaded = read_report_csv(path)
    assert loaded["image_id"].tolist() == [s.scene_id for s in scenes]
    assert loaded["pix_road"].tolist() == [s.road_pixels for s in scenes]
    assert loaded["pix_snow_over_road"].tolist() == [s.snow_road_pixels for s in scenes]
    assert path.read_text(encoding="utf-8").splitlines()[0] == HEADER.strip()


def test_csv_percent_has_two_decimals(tmp_path):
    from src.pipeline.report import write_report_csv
    frame = pd.DataFrame({"image_id": ["a"], "pix_road": [3], "pix_snow_over_road": [1], "shr_percent": [33.33]})
    text = write_report_csv(frame, tmp_path / "r.csv").read_text(encoding="utf-8")
    assert text.splitlines()[1] == "a,3,1,33.33"


def test_read_missing_report(tmp_path):
    from src.pipeline.report import read_report_csv
    from src.utils.errors import DataIOError
    with pytest.raises(DataIOError):
        read_report_csv(tmp_path / "absent.csv")


def test_read_empty_file(tmp_path):
    from src.pipeline.report import read_report_csv
    from src.utils.errors import ReportParseError
    path = tmp_path / "empty.csv"
    path.write_text("", encoding="utf-8")
    with pytest.raises(ReportParseError) as info:
        read_report_csv(path)
    assert info.value.line == 1


def test_read_missing_column(tmp_path):
    from src.pipeline.report import read_report_csv
    from src.utils.errors import ReportParseError
    path = tmp_path / "r.csv"
    path.write_text("image_id,pix_road\na,3\n", encoding="utf-8")
    with pytest.raises(ReportParseError) as info:
        read_report_csv(path)
    assert info.value.line == 1


@pytest.mark.parametrize(
    "bad_row",
    ["c,4,5,125.00", "c,0,0,0.00", "c,-4,1,25.00", "c,4,1.5,37.50", "c,4,1,30.00", "c,4,x,25.00", ",4,1,25.00"],
    ids=["snow-exceeds-road", "no-road", "negative", "fractional", "percent-mismatch", "not-a-number", "empty-id"],
)
def test_read_rejects_bad_rows_with_line_number(tmp_path, bad_row):
    from src.pipeline.report import read_report_csv
    from src.utils.errors import ReportParseError
    path = _write(tmp_path, f"a,4,1,25.00\nb,8,8,100.00\n{bad_row}\n")
    with pytest.raises(ReportParseError) as info:
        read_report_csv(path)
    assert info.value.line == 4


def test_read_accepts_rounded_percent(tmp_path):
    from src.pipeline.report import read_report_csv
    frame = read_report_csv(_write(tmp_path, "a,3,2,66.67\n"))
    assert frame["shr_percent"].iloc[0] == pytest.approx(66.67)


def test_shr_chart_bars_match_values(tmp_path):
    from src.pipeline.report import read_chart_values, write_shr_chart
    frame = _frame(16)
    path = write_shr_chart(frame, tmp_path / "shr_chart.svg")
    values = read_chart_values(path, "shr", (0, 100))
    assert len(values) == 16
    np.testing.assert_allclose(values, frame["shr_percent"], atol=0.05)


def test_pixel_chart_bars_match_counts(tmp_path):
    from src.pipeline.report import read_chart_values, write_pixel_chart
    frame = _frame(5, seed=1)
    path = write_pixel_chart(frame, tmp_path / "pixel_chart.svg")
    top = float(frame["pix_road"].max()) * 1.05
    values = read_chart_values(path, "pixels", (0, top))
    np.testing.assert_allclose(values, frame["pix_snow_over_road"], atol=0.5)
    clear = read_chart_values(path, "pixels", (0, top), series="clear")
    np.testing.assert_allclose(clear, frame["pix_road"] - frame["pix_snow_over_road"], atol=0.5)
    totals = np.asarray(values) + np.asarray(clear)
    np.testing.assert_allclose(totals, frame["pix_road"], atol=1.0)
    assert "road without snow" in path.read_text(encoding="utf-8")


def test_charts_are_byte_stable(tmp_path):
    from src.pipeline.report import write_shr_chart
    frame = _frame(4)
    a = write_shr_chart(frame, tmp_path / "a.svg").read_bytes()
    b = write_shr_chart(frame, tmp_path / "b.svg").read_bytes()
    assert a == b


def test_chart_reader_needs_axes(tmp_path):
    from src.pipeline.report import read_chart_values, write_shr_chart
    from src.utils.errors import ReportParseError
    path = write_shr_chart(_frame(2), tmp_path / "c.svg")
    with pytest.raises(ReportParseError):
        read_chart_values(path, "pixels", (0, 1))


def test_class_chart_skips_summary_rows(tmp_path):
    from src.pipeline.metrics import ConfusionMatrix, metrics_frame
    from src.pipeline.report import read_chart_values, write_class_chart
    cm = ConfusionMatrix(np.array([[2, 1], [0, 1]]))
    path = write_class_chart(metrics_frame(cm, ["road", "snow"]), tmp_path / "iou.svg")
    np.testing.assert_allclose(read_chart_values(path, "iou", (0, 1)), [2 / 3, 1 / 2], atol=1e-3)


def test_summary_single_row(tmp_path):
    from src.pipeline.report import summarize, write_summary
    frame = pd.DataFrame({"image_id": ["a"], "pix_road": [4], "pix_snow_over_road": [1], "shr_percent": [25.0]})
    stats = summarize(frame)
    assert stats["shr_percent_min"] == stats["shr_percent_median"] == stats["shr_percent_max"] == 25.0
    text = write_summary(frame, tmp_path / "summary.txt", failures=[("b", "No road pixels detected")]).read_text()
    assert "images: 2" in text
    assert "shr_percent_median: 25.00" in text
    assert "  b: No road pixels detected" in text


def test_summary_without_rows(tmp_path):
    from src.pipeline.report import REPORT_COLUMNS, write_summary
    frame = pd.DataFrame(columns=REPORT_COLUMNS)
    text = write_summary(frame, tmp_path / "summary.txt").read_text()
    assert "shr_percent_min: n/a" in text
    assert "pix_road_total: 0" in text


def test_montage_pads_with_gray():
    from src.pipeline.report import PAD_GRAY, montage_pages
    tiles = [np.full((6, 8, 3), 10 * k, dtype=np.uint8) for k in range(5)]
    pages = montage_pages(tiles, (6, 8))
    assert len(pages) == 1
    page = pages[0]
    assert page.shape == (24, 32, 3)
    assert (page[0:6, 8:16] == 10).all()
    assert (page[6:12, 0:8] == 40).all()
    assert (page[6:12, 8:16] == PAD_GRAY).all()
    assert (page[18:24, 24:32] == PAD_GRAY).all()


def test_montage_resizes_and_colorizes():
    from src.pipeline.report import BINARY_PALETTE, montage_pages
    from src.pipeline.samples import MaskImage
    tiles = [np.zeros((12, 16, 3), dtype=np.uint8), MaskImage.from_binary(np.ones((3, 4)))]
    page = montage_pages(tiles, (6, 8))[0]
    assert (page[0:6, 0:8] == 0).all()
    assert (page[0:6, 8:16] == BINARY_PALETTE[1]).all()


def test_montage_pages_and_names():
    from src.pipeline.report import montage_images
    tiles = [np.zeros((2, 2, 3), dtype=np.uint8)] * 17
    images = montage_images("inputs", tiles, (2, 2))
    assert [i.image_id for i in images] == ["inputs_p1", "inputs_p2"]
    assert [i.image_id for i in montage_images("inputs", [], (2, 2))] == ["inputs"]
