from __future__ import annotations

from collections.abc import Sequence

import altair as alt
import pandas as pd

from . import AXIS_LABEL_COLOR, GRID_COLOR, SERIES_PALETTE, TITLE_COLOR, numeric_columns

DEFAULT_SERIES = ("success", "n_localize", "lambda")


def _coerce_training_curves(curves: pd.DataFrame, series: Sequence[str], window: int) -> pd.DataFrame:
    missing = [column for column in ["episode", *series] if column not in curves.columns]
    if missing:
        raise ValueError(f"Training chart is missing columns: {missing}")

    smoothed = curves[["episode", *series]].copy()
    for column in series:
        smoothed[column] = pd.to_numeric(smoothed[column], errors="coerce").rolling(window, min_periods=1).mean()
    long_df = smoothed.melt(id_vars="episode", value_vars=list(series), var_name="Series", value_name="Value")
    return numeric_columns(long_df, ["episode", "Value"])


def build_training_chart(
    curves: pd.DataFrame,
    *,
    series: Sequence[str] = DEFAULT_SERIES,
    window: int = 10,
    title: str | None = None,
    height: int = 160,
) -> alt.FacetChart:
    plot_df = _coerce_training_curves(curves, series, window)
    if plot_df.empty:
        raise ValueError("Training chart received no rows after cleaning.")

    order = [str(item) for item in series]
    color_scale = alt.Scale(
        domain=order,
        range=[SERIES_PALETTE[idx % len(SERIES_PALETTE)] for idx, _ in enumerate(order)],
    )

    return (
        alt.Chart(plot_df)
        .mark_line(strokeWidth=2.1)
        .encode(
            x=alt.X("episode:Q", title="Episode", axis=alt.Axis(grid=True)),
            y=alt.Y("Value:Q", title=None, axis=alt.Axis(grid=True)),
            color=alt.Color("Series:N", sort=order, scale=color_scale, legend=None),
            tooltip=[
                alt.Tooltip("episode:Q", title="Episode"),
                alt.Tooltip("Series:N", title="Series"),
                alt.Tooltip("Value:Q", title=f"Mean over {window}", format=".3f"),
            ],
        )
        .properties(height=height, width=640)
        .facet(row=alt.Row("Series:N", sort=order, title=None))
        .resolve_scale(y="independent")
        .properties(title=title or "Training Curves")
        .configure_axis(
            labelColor=AXIS_LABEL_COLOR,
            titleColor=AXIS_LABEL_COLOR,
            gridColor=GRID_COLOR,
        )
        .configure_title(
            color=TITLE_COLOR,
            fontSize=16,
            anchor="start",
        )
        .configure_view(strokeOpacity=0)
    )
