"""Plain-text results tables: percent cells, significance stars, mean(std).

Scores are shown x100 with two decimals, ``*`` marks p < 0.05, and repeated
runs are shown as ``mean(std)``.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

from .evaluation import AggregateStats


def format_pct(value: float) -> str:
    return f"{100.0 * value:.2f}"


def format_cell(value: float, star: bool = False) -> str:
    return format_pct(value) + ("*" if star else "")


def format_mean_std(stats: AggregateStats, star: bool = False) -> str:
    return f"{format_cell(stats.mean, star)}({format_pct(stats.std)})"


def format_alpha(alpha: float) -> str:
    return f"{alpha:.2f}"


def render_selection_line(
    dataset: str, source: float, merged: float, alpha_lower: float, alpha_upper: float, star: bool = False
) -> str:
    return (
        f"{dataset} {format_pct(source)} → {format_cell(merged, star)}, "
        f"α_lower {format_alpha(alpha_lower)}, α_upper {format_alpha(alpha_upper)}"
    )


@dataclass(frozen=True)
class MergedRow:
    dataset: str
    source: float
    merged: float
    alpha_lower: float
    alpha_upper: float
    significant: bool = False


@dataclass(frozen=True)
class LimitedRow:
    dataset: str
    merged: AggregateStats
    significant: bool = False


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    def line(cells):
        first = cells[0].ljust(widths[0])
        rest = [c.rjust(w) for c, w in zip(cells[1:], widths[1:])]
        return "  ".join([first, *rest]).rstrip()
    sep = "-" * len(line(header))
    return "\n".join([line(header), sep, *(line(r) for r in rows)]) + "\n"


def render_merged_table(rows: Sequence[MergedRow]) -> str:
    header = ["Dataset", "Source", "Merged", "α_lower", "α_upper"]
    body = [
        [
            r.dataset,
            format_pct(r.source),
            format_cell(r.merged, r.significant),
            format_alpha(r.alpha_lower),
            format_alpha(r.alpha_upper),
        ]
        for r in rows
    ]
    return _table(header, body)


def render_limited_table(rows: Sequence[LimitedRow]) -> str:
    n = {r.merged.n for r in rows}
    label = f"Merged (mean(std), {n.pop()} runs)" if len(n) == 1 else "Merged (mean(std))"
    body = [[r.dataset, format_mean_std(r.merged, r.significant)] for r in rows]
    return _table(["Dataset", label], body)
