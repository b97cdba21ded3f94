import os
from collections import defaultdict
from typing import Dict, List, Sequence

import plotly.graph_objects as go
from plotly.subplots import make_subplots


def plot_trace(blocks: Sequence[Dict], plot_file: str, main_chain: Sequence[str] = ()):
    """Block heights and intervals over virtual time, one colour per producer.

    blocks are the "block" records of a run; ids in main_chain are drawn as
    filled markers, every other produced block (lost forks) as open ones.
    """
    on_chain = set(main_chain)
    by_producer: Dict[str, Dict[str, List]] = defaultdict(lambda: {"x": [], "y": [], "text": [], "symbol": []})
    intervals = {"x": [], "y": []}
    for block in blocks:
        series = by_producer[block["producer"][:8]]
        series["x"].append(block["produced_at_ms"])
        series["y"].append(block["height"])
        series["text"].append(
            f"<b>height {block['height']}</b><br>id: {block['block_id'][:16]}<br>"
            f"tour length: {block['tour_length']}<br>interval: {block['interval_ms']} ms"
        )
        series["symbol"].append("circle" if not on_chain or block["block_id"] in on_chain else "circle-open")
        if block["block_id"] in on_chain:
            intervals["x"].append(block["produced_at_ms"])
            intervals["y"].append(block["interval_ms"])

    fig = make_subplots(rows=2, cols=1, shared_xaxes=True, row_heights=[0.7, 0.3], vertical_spacing=0.05)
    for producer, series in sorted(by_producer.items()):
        fig.add_trace(
            go.Scatter(
                mode="markers",
                x=series["x"],
                y=series["y"],
                name=producer,
                legendgroup=producer,
                marker={"symbol": series["symbol"], "size": 8},
                hovertext=series["text"],
                hoverinfo="text",
            ),
            row=1,
            col=1,
        )
    if intervals["x"]:
        fig.add_trace(
            go.Scatter(mode="lines+markers", x=intervals["x"], y=intervals["y"], name="interval",
                       marker={"color": "black", "size": 4}),
            row=2,
            col=1,
        )

    fig.update_layout(
        height=800,
        legend={
            "yanchor": "bottom",
            "y": 1,
            "xanchor": "left",
            "x": 0,
        },
    )
    fig.update_xaxes(title_text="virtual time (ms)", ticks="outside", row=2, col=1)
    fig.update_yaxes(title_text="height", ticks="outside", row=1, col=1)
    fig.update_yaxes(title_text="interval (ms)", ticks="outside", row=2, col=1)
    fig.write_html(f"{os.path.splitext(plot_file)[0]}.html")
