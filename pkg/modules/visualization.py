"""
Plotly report charts for attenuation curves and quality maps
"""

from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from modules.scheduler import ProfileSet, QualityMap
from modules.spectral import AttenuationCurve
from utils.image_io import atomic_write


def create_attenuation_chart(
    curve: AttenuationCurve,
    title: str = "Attenuation Response",
    bands: Optional[Sequence[float]] = None
) -> go.Figure:
    """
    Create line chart of measured attenuation samples and the fitted falloff

    Args:
        curve: Measured curve (fit optional)
        title: Chart title
        bands: Optional analysis band frequencies to mark

    Returns:
        Plotly Figure object
    """
    freqs = curve.bin_freqs[curve.valid]
    samples = curve.samples[curve.valid]

    fig = go.Figure()
    fig.add_trace(go.Scatter(
        x=freqs,
        y=samples,
        mode='markers',
        name=f"Measured ({curve.aggregate}, {curve.n_images} images)",
        marker=dict(color='lightblue', size=6)
    ))

    if curve.fit is not None:
        dense = np.linspace(0.0, float(curve.bin_freqs.max()), 200)
        fig.add_trace(go.Scatter(
            x=dense,
            y=curve.fit.evaluate(dense),
            mode='lines',
            name=f"Fit a={curve.fit.a:.4f} b={curve.fit.b:.4f} c={curve.fit.c:.3f} (rms {curve.fit.rms:.4f})",
            line=dict(color='orange', width=2, dash='dash' if curve.fit.coarse else 'solid')
        ))

    for f in bands or []:
        fig.add_vline(x=f, line=dict(color='gray', dash='dot'))

    fig.update_layout(
        title=f"{title} (x{curve.scale_factor_k})",
        xaxis_title="Spatial frequency (cycles/pixel)",
        yaxis_title="Attenuation",
        yaxis=dict(range=[0, 1.55]),
        height=450
    )

    return fig


def create_quality_map_chart(
    qmap: QualityMap,
    profiles: ProfileSet,
    title: str = "Quality Map"
) -> go.Figure:
    """
    Create quality map heatmap with a per-variant patch histogram

    Args:
        qmap: Scheduled map
        profiles: Profile set the map was scheduled with
        title: Chart title

    Returns:
        Plotly Figure object
    """
    names = {v.id: v.name for v in profiles}
    ranks = np.vectorize(profiles.rank)(qmap.grid)
    hover = np.vectorize(names.__getitem__)(qmap.grid)

    counts = pd.Series(qmap.grid.ravel()).value_counts()
    histogram = pd.DataFrame({
        'name': [v.name for v in profiles],
        'count': [int(counts.get(v.id, 0)) for v in profiles],
    })

    fig = make_subplots(rows=1, cols=2, column_widths=[0.65, 0.35],
                        subplot_titles=("Selected variant per patch", "Patches per variant"))

    fig.add_trace(go.Heatmap(
        z=ranks,
        text=hover,
        hovertemplate="row %{y}, col %{x}: %{text}<extra></extra>",
        colorscale='Gray',
        zmin=0,
        zmax=len(profiles) - 1,
        showscale=False
    ), row=1, col=1)

    fig.add_trace(go.Bar(
        x=histogram['name'],
        y=histogram['count'],
        text=histogram['count'],
        textposition='outside',
        marker_color='lightgreen'
    ), row=1, col=2)

    fig.update_yaxes(autorange='reversed', row=1, col=1)
    fig.update_layout(
        title=f"{title}: cost ratio {qmap.ratio:.3f}",
        height=500,
        showlegend=False
    )

    return fig


def create_frame_ratio_chart(frames: List[dict], title: str = "Cost Ratio per Frame") -> go.Figure:
    """Line chart of per-frame cost ratios of a scheduled clip"""
    df = pd.DataFrame(frames)

    fig = go.Figure(data=[
        go.Scatter(
            x=df['frame'],
            y=df['ratio'],
            mode='lines+markers',
            line=dict(color='blue', width=2)
        )
    ])

    fig.update_layout(
        title=title,
        xaxis_title="Frame",
        yaxis_title="Cost ratio",
        yaxis=dict(range=[0, 1.05]),
        height=400,
        showlegend=False
    )

    return fig


def save_figure(fig: go.Figure, path: str):
    """Write a standalone HTML chart"""
    with atomic_write(path, 'w') as fh:
        fig.write_html(fh, include_plotlyjs='cdn')
