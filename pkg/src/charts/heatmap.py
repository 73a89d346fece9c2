from __future__ import annotations

import altair as alt
import pandas as pd

from . import AXIS_LABEL_COLOR, GRID_COLOR, TITLE_COLOR, numeric_columns, pick_first_existing


def _coerce_heatmap_cells(heatmap_cells: pd.DataFrame) -> pd.DataFrame:
    row_col = pick_first_existing(heatmap_cells.columns, ["row", "Row", "mean_row"])
    col_col = pick_first_existing(heatmap_cells.columns, ["col", "Col", "mean_col"])
    value_col = pick_first_existing(heatmap_cells.columns, ["probability", "Probability", "value"])
    if row_col is None or col_col is None or value_col is None:
        raise ValueError("Localize heatmap requires row, col, and probability-like columns.")

    plot_df = heatmap_cells.rename(columns={row_col: "Row", col_col: "Col", value_col: "Probability"})
    if "visits" not in plot_df.columns:
        plot_df["visits"] = 1
    plot_df = numeric_columns(plot_df, ["Row", "Col", "Probability"])
    return plot_df[["Row", "Col", "Probability", "visits"]]


def build_localize_heatmap_chart(
    heatmap_cells: pd.DataFrame,
    *,
    title: str | None = None,
    height: int = 520,
) -> alt.Chart:
    plot_df = _coerce_heatmap_cells(heatmap_cells)
    if plot_df.empty:
        raise ValueError("Localize heatmap received no visited cells.")

    return (
        alt.Chart(plot_df)
        .mark_rect()
        .encode(
            x=alt.X("Col:O", title="Column", axis=alt.Axis(grid=False)),
            y=alt.Y("Row:O", title="Row", axis=alt.Axis(grid=False)),
            color=alt.Color(
                "Probability:Q",
                title="P(localize)",
                scale=alt.Scale(scheme="blues", domain=[0.0, 1.0]),
            ),
            tooltip=[
                alt.Tooltip("Row:O", title="Row"),
                alt.Tooltip("Col:O", title="Column"),
                alt.Tooltip("visits:Q", title="Visits"),
                alt.Tooltip("Probability:Q", title="P(localize)", format=".3f"),
            ],
        )
        .properties(
            height=height,
            width=height,
            title=title or "Localize Probability by Belief Mean",
        )
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
