"""Plain-text / JSON / CSV / SVG emission for evaluation and calibration runs."""

from __future__ import annotations

import json
from pathlib import Path

from .metrics import MetricsReport, ReliabilityBin, bins_to_csv, report_to_dict


def reports_to_text(reports: dict[str, MetricsReport]) -> str:
    lines = []
    for name in sorted(reports):
        rep = reports[name]
        for key, value in report_to_dict(rep).items():
            if isinstance(value, float):
                lines.append(f"{name}.{key}={value:.6f}")
            else:
                lines.append(f"{name}.{key}={value}")
    return "\n".join(lines) + "\n"


def reports_to_json(reports: dict[str, MetricsReport]) -> str:
    return json.dumps(
        {name: report_to_dict(rep) for name, rep in sorted(reports.items())},
        indent=2,
        sort_keys=True,
    )


def write_reports(reports: dict[str, MetricsReport], out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "text": out / "report.txt",
        "json": out / "report.json",
        "csv": out / "reliability.csv",
    }
    paths["text"].write_text(reports_to_text(reports), encoding="utf-8")
    paths["json"].write_text(reports_to_json(reports), encoding="utf-8")
    overall = reports.get("overall")
    if overall is not None:
        paths["csv"].write_text(bins_to_csv(overall.reliability_bins), encoding="utf-8")
    return paths


def reliability_svg(bins: list[ReliabilityBin], ece_value: float) -> str:
    """Reliability diagram: accuracy bars per confidence bin vs the identity line."""
    width, height = 480, 400
    left, right, top, bottom = 64.0, 16.0, 36.0, 48.0
    pw, ph = width - left - right, height - top - bottom

    def sx(conf: float) -> float:
        return left + (conf - 0.5) / 0.5 * pw

    def sy(acc: float) -> float:
        return top + (1.0 - acc) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<text x="{left}" y="20" font-size="14" font-family="sans-serif">'
        f"Reliability diagram (ECE = {ece_value:.4f})</text>",
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for b in bins:
        x0, x1 = sx(b.low), sx(b.high)
        y = sy(b.accuracy)
        parts.append(
            f'<rect x="{x0:.2f}" y="{y:.2f}" width="{x1 - x0:.2f}" '
            f'height="{top + ph - y:.2f}" fill="#4f81bd" fill-opacity="0.75" stroke="black"/>'
        )
    parts.append(
        f'<line x1="{sx(0.5):.2f}" y1="{sy(0.5):.2f}" x2="{sx(1.0):.2f}" y2="{sy(1.0):.2f}" '
        'stroke="red" stroke-dasharray="6,4"/>'
    )
    for tick in (0.5, 0.6, 0.7, 0.8, 0.9, 1.0):
        parts.append(
            f'<text x="{sx(tick):.2f}" y="{height - 24}" font-size="11" '
            f'font-family="sans-serif" text-anchor="middle">{tick:.1f}</text>'
        )
        parts.append(
            f'<text x="{left - 8:.2f}" y="{sy(tick) + 4:.2f}" font-size="11" '
            f'font-family="sans-serif" text-anchor="end">{tick:.1f}</text>'
        )
    parts.append(
        f'<text x="{left + pw / 2:.2f}" y="{height - 6}" font-size="12" '
        'font-family="sans-serif" text-anchor="middle">confidence</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts)
