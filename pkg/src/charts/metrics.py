from __future__ import annotations

import altair as alt
import pandas as pd

from . import AXIS_LABEL_COLOR, GRID_COLOR, SERIES_PALETTE, TITLE_COLOR, numeric_columns, pick_first_existing


def build_metrics_chart(
    table: pd.DataFrame,
    *,
    title: str | None = None,
    height: int = 220,
) -> alt.FacetChart:
    """Success rate and localization count side by side, per planner or per sweep value."""
    category_col = pick_first_existing(table.columns, ["value", "planner"])
    if category_col is None:
        raise ValueError("Metrics chart requires a planner or value column.")
    facet_col = "environment" if "environment" in table.columns else None

    id_columns = [category_col] + ([facet_col] if facet_col else [])
    long_df = table.melt(
        id_vars=id_columns,
        value_vars=["success_rate", "mean_localizations"],
        var_name="Metric",
        value_name="Value",
    )
    long_df = numeric_columns(long_df, ["Value"])
    if long_df.empty:
        raise ValueError("Metrics chart received no rows after cleaning.")
    long_df[category_col] = long_df[category_col].astype(str)

    order = long_df[category_col].drop_duplicates().tolist()
    color_scale = alt.Scale(
        domain=order,
        range=[SERIES_PALETTE[idx % len(SERIES_PALETTE)] for idx, _ in enumerate(order)],
    )

    bars = (
        alt.Chart(long_df)
        .mark_bar()
        .encode(
            x=alt.X(f"{category_col}:N", title=category_col.title(), sort=order),
            y=alt.Y("Value:Q", title=None, axis=alt.Axis(grid=True)),
            color=alt.Color(f"{category_col}:N", sort=order, scale=color_scale, legend=None),
            tooltip=[
                alt.Tooltip(f"{category_col}:N", title=category_col.title()),
                alt.Tooltip("Metric:N", title="Metric"),
                alt.Tooltip("Value:Q", title="Value", format=".3f"),
            ],
        )
        .properties(height=height, width=320)
    )
    facets = {"column": alt.Column("Metric:N", title=None)}
    if facet_col:
        facets["row"] = alt.Row(f"{facet_col}:N", title=None)

    return (
        bars.facet(**facets)
        .resolve_scale(y="independent")
        .properties(title=title or "Planner Metrics")
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
