from __future__ import annotations

from collections.abc import Iterable, Sequence
from pathlib import Path

import altair as alt
import pandas as pd

SERIES_PALETTE = [
    "#0F4C81",
    "#5B8FB9",
    "#2F6A4F",
    "#A44A3F",
    "#B08900",
    "#6B5B95",
    "#3E7C7D",
    "#8C5A3C",
]
GRID_COLOR = "rgba(215, 221, 229, 0.28)"
AXIS_LABEL_COLOR = "#2A3647"
TITLE_COLOR = "#1D2733"


def pick_first_existing(columns: Iterable[str], candidates: Sequence[str]) -> str | None:
    column_set = {str(column) for column in columns}
    for candidate in candidates:
        if candidate in column_set:
            return candidate
    return None


def numeric_columns(frame: pd.DataFrame, columns: Sequence[str]) -> pd.DataFrame:
    plot_df = frame.copy()
    for column in columns:
        plot_df[column] = pd.to_numeric(plot_df[column], errors="coerce")
    return plot_df.dropna(subset=list(columns))


def save_chart(chart: alt.TopLevelMixin, path: str | Path) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    chart.save(str(target))
    return target
