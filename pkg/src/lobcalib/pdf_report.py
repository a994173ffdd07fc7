"""PDF summaries of calibration campaigns."""

from datetime import datetime
from pathlib import Path
from typing import Any

import numpy as np
from reportlab.lib.units import mm
from reportlab.pdfgen import canvas

from .harness import ExperimentReport
from .pgps_model import MidPriceSeries

# ISO paper sizes in mm (width, height) - landscape orientation
PAPER_SIZES = {
    "a3": (420, 297),
    "a4": (297, 210),
}

MARGIN = 10.0
LINE_HEIGHT = 5.0


def export_report_pdf(
    report: ExperimentReport,
    output_path: str | Path,
    paper_size: str = "a4",
    title: str | None = None,
    series: tuple[MidPriceSeries, MidPriceSeries] | None = None,
    comparison: dict[str, Any] | None = None,
) -> Path:
    """Export a campaign summary to PDF.

    Args:
        report: Campaign report to summarize
        output_path: Output file path (without extension)
        paper_size: ISO paper size (a3 or a4)
        title: Title for the title block
        series: Optional (target, best simulated) pair, drawn as a price chart
        comparison: Optional output of ``compare_reports``, listed as a second table

    Returns:
        Path to created PDF file
    """
    output_path = Path(output_path)
    if output_path.suffix.lower() != ".pdf":
        output_path = Path(str(output_path) + ".pdf")
    output_path.parent.mkdir(parents=True, exist_ok=True)

    paper_w, paper_h = PAPER_SIZES[paper_size.lower()]
    c = canvas.Canvas(str(output_path), pagesize=(paper_w * mm, paper_h * mm), invariant=1)

    _draw_border(c, paper_w, paper_h)
    _draw_title_block(c, paper_w, title or "Calibration Report", report)

    y = paper_h - MARGIN - 40
    y = _draw_table(
        c,
        MARGIN + 5,
        y,
        "Runs",
        ["run", "seed", "objective", "K-S"],
        [
            [str(r.run_index), str(r.seed), f"{r.best_value:.5f}", f"{r.best_ks:.5f}"]
            for r in report.runs
        ],
        [15, 55, 30, 25],
    )
    c.setFont("Helvetica", 8)
    c.drawString(
        (MARGIN + 5) * mm, y * mm, f"Mean K-S {report.mean_ks:.5f} +- {report.std_ks:.5f}"
    )
    y -= LINE_HEIGHT
    y = _draw_table(
        c,
        MARGIN + 5,
        y - LINE_HEIGHT,
        "Moments",
        ["", "mean", "std", "skewness", "excess kurt."],
        [
            ["target", *_moment_cells(report.target_moments)],
            ["best", *_moment_cells(report.best_moments)],
        ],
        [20, 25, 20, 25, 25],
    )
    returns = report.distributions.get("log_returns")
    if returns is not None:
        y = _draw_table(
            c,
            MARGIN + 5,
            y - LINE_HEIGHT,
            f"Log returns (K-S {returns['ks']:.5f})",
            ["", "mean", "std", "skewness", "excess kurt."],
            [
                ["target", *_moment_cells(returns["target_moments"])],
                ["best", *_moment_cells(returns["best_moments"])],
            ],
            [20, 25, 20, 25, 25],
        )
    c.setFont("Helvetica", 8)
    verdict = "below" if report.below_critical else "above"
    c.drawString(
        (MARGIN + 5) * mm,
        (y - LINE_HEIGHT) * mm,
        f"Best K-S {min(report.ks_values):.5f} is {verdict} the 5% critical value "
        f"{report.critical_value:.5f}",
    )

    if comparison is not None:
        _draw_table(
            c,
            paper_w / 2 + 5,
            paper_h - MARGIN - 40,
            "Rank-sum comparison",
            ["first", "second", "p-value", "improvement"],
            [
                [
                    row["first"],
                    row["second"],
                    f"{row['p_value']:.4g}",
                    f"{100 * row['improvement']:.1f}%",
                ]
                for row in comparison["wilcoxon"]
            ],
            [30, 30, 20, 25],
        )
    else:
        if "histogram" in report.distributions:
            _draw_histogram(
                c, paper_w / 2 + 5, paper_h - MARGIN - 95, paper_w / 2 - 20, 50,
                report.distributions["histogram"],
            )
        if series is not None:
            _draw_series_chart(c, paper_w / 2 + 5, MARGIN + 40, paper_w / 2 - 20, 45, series)

    c.save()
    return output_path


def _moment_cells(values: dict[str, float | None]) -> list[str]:
    return [
        "-" if values.get(key) is None else f"{values[key]:.4g}"
        for key in ("mean", "std", "skewness", "excess_kurtosis")
    ]


def _draw_border(c: canvas.Canvas, paper_w: float, paper_h: float) -> None:
    c.setStrokeColorRGB(0, 0, 0.5)
    c.setLineWidth(0.5)
    c.rect(
        MARGIN * mm,
        MARGIN * mm,
        (paper_w - 2 * MARGIN) * mm,
        (paper_h - 2 * MARGIN) * mm,
    )


def _draw_title_block(
    c: canvas.Canvas, paper_w: float, title: str, report: ExperimentReport
) -> None:
    """Draw title block in bottom-right corner."""
    block_w = 100.0
    block_h = 30.0

    x1 = paper_w - MARGIN - block_w
    y1 = MARGIN
    x2 = paper_w - MARGIN
    y2 = MARGIN + block_h

    c.setStrokeColorRGB(0, 0, 0.5)
    c.setLineWidth(0.3)
    c.rect(x1 * mm, y1 * mm, block_w * mm, block_h * mm)
    c.line(x1 * mm, (y1 + 15) * mm, x2 * mm, (y1 + 15) * mm)
    c.line((x1 + 50) * mm, y1 * mm, (x1 + 50) * mm, (y1 + 15) * mm)

    c.setFillColorRGB(0, 0, 0)
    c.setFont("Helvetica-Bold", 10)
    c.drawString((x1 + 5) * mm, (y2 - 10) * mm, title)

    c.setFont("Helvetica", 8)
    c.drawString((x1 + 5) * mm, (y1 + 5) * mm, f"Objective: {report.objective}")
    c.drawString((x1 + 55) * mm, (y1 + 5) * mm, f"Optimizer: {report.optimizer}")

    c.setFont("Helvetica", 6)
    date_str = datetime.now().strftime("%Y-%m-%d")
    c.drawString(
        (x1 + 5) * mm, (y1 + 17) * mm, f"Date: {date_str}   Seed: {report.master_seed}"
    )


def _draw_table(
    c: canvas.Canvas,
    x: float,
    y: float,
    caption: str,
    header: list[str],
    rows: list[list[str]],
    widths: list[float],
) -> float:
    """Draw a captioned text table from the top-left corner; returns the y below it."""
    c.setFillColorRGB(0, 0, 0)
    c.setFont("Helvetica-Bold", 9)
    c.drawString(x * mm, y * mm, caption)
    y -= LINE_HEIGHT

    for k, cells in enumerate([header, *rows]):
        c.setFont("Helvetica-Bold" if k == 0 else "Helvetica", 8)
        col_x = x
        for text, width in zip(cells, widths, strict=True):
            c.drawString(col_x * mm, y * mm, text)
            col_x += width
        if k == 0:
            c.setLineWidth(0.2)
            c.line(x * mm, (y - 1.5) * mm, col_x * mm, (y - 1.5) * mm)
        y -= LINE_HEIGHT
    return y


def _draw_series_chart(
    c: canvas.Canvas,
    x: float,
    y: float,
    width: float,
    height: float,
    series: tuple[MidPriceSeries, MidPriceSeries],
) -> None:
    """Plot target (black) and best simulated (red) mid prices inside a framed box."""
    low = min(float(np.min(s.values)) for s in series)
    high = max(float(np.max(s.values)) for s in series)
    span = (high - low) or 1.0

    c.setStrokeColorRGB(0, 0, 0.5)
    c.setLineWidth(0.3)
    c.rect(x * mm, y * mm, width * mm, height * mm)
    c.setFont("Helvetica", 6)
    c.setFillColorRGB(0, 0, 0)
    c.drawString(x * mm, (y + height + 2) * mm, f"mid price {low:.0f} .. {high:.0f}")

    def polyline(values: np.ndarray, rgb: tuple[float, float, float], line_width: float):
        steps = max(len(values) - 1, 1)
        c.setStrokeColorRGB(*rgb)
        c.setLineWidth(line_width)
        path = c.beginPath()
        path.moveTo(x * mm, (y + (values[0] - low) / span * height) * mm)
        for t, value in enumerate(values[1:], start=1):
            path.lineTo((x + t / steps * width) * mm, (y + (value - low) / span * height) * mm)
        c.drawPath(path, stroke=1, fill=0)

    # best bid and ask in a lighter shade under each mid-price line
    for s, rgb, light in zip(
        series, [(0, 0, 0), (0.8, 0, 0)], [(0.6, 0.6, 0.6), (1.0, 0.6, 0.6)], strict=True
    ):
        if s.best_bid is not None and s.best_ask is not None:
            polyline(np.clip(s.best_bid, low, high), light, 0.2)
            polyline(np.clip(s.best_ask, low, high), light, 0.2)
        polyline(s.values, rgb, 0.3)


def _draw_histogram(
    c: canvas.Canvas,
    x: float,
    y: float,
    width: float,
    height: float,
    histogram: dict[str, Any],
) -> None:
    """Outline target (black) and best simulated (red) mid-price frequencies on shared bins."""
    edges = histogram["edges"]
    tallest = max(max(histogram["target_counts"]), max(histogram["best_counts"])) or 1
    bin_w = width / (len(edges) - 1)

    c.setStrokeColorRGB(0, 0, 0.5)
    c.setLineWidth(0.3)
    c.rect(x * mm, y * mm, width * mm, height * mm)
    c.setFont("Helvetica", 6)
    c.setFillColorRGB(0, 0, 0)
    c.drawString(
        x * mm, (y + height + 2) * mm,
        f"mid-price frequency {edges[0]:.1f} .. {edges[-1]:.1f}",
    )

    for key, rgb in (("target_counts", (0, 0, 0)), ("best_counts", (0.8, 0, 0))):
        c.setStrokeColorRGB(*rgb)
        path = c.beginPath()
        path.moveTo(x * mm, y * mm)
        for k, count in enumerate(histogram[key]):
            top = y + count / tallest * height
            path.lineTo((x + k * bin_w) * mm, top * mm)
            path.lineTo((x + (k + 1) * bin_w) * mm, top * mm)
        path.lineTo((x + width) * mm, y * mm)
        c.drawPath(path, stroke=1, fill=0)
