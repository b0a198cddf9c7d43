import os
from typing import Dict, List, Sequence

import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

from components.evaluator import EvalReport


class Visualizer:
    """Create charts for datasets, training runs and evaluation reports"""

    @staticmethod
    def create_long_tail_chart(table: pd.DataFrame, top_share: float) -> go.Figure:
        """Views per content in rank order"""
        fig = px.bar(
            table,
            x="rank",
            y="views",
            title=f"Content count vs view count (top 20% hold {top_share:.0%} of views)",
            labels={"rank": "Content rank", "views": "Total views"},
        )
        fig.update_layout(height=400, bargap=0)
        return fig

    @staticmethod
    def create_loss_chart(traces: Dict[str, List[float]]) -> go.Figure:
        """Training loss per epoch, one line per optimizer"""
        fig = go.Figure()
        for name, trace in traces.items():
            fig.add_trace(go.Scatter(x=list(range(len(trace))), y=trace, mode="lines", name=name))
        fig.update_layout(
            title="Training loss by optimizer",
            xaxis_title="Epoch",
            yaxis_title="Loss",
            height=400,
        )
        return fig

    @staticmethod
    def create_window_chart(curve: pd.DataFrame) -> go.Figure:
        """F1 as a function of the observation period"""
        long = curve.melt(id_vars="r", value_vars=["f1_type_a", "f1_type_b"], var_name="type", value_name="score")
        long["type"] = long["type"].map({"f1_type_a": "Type A", "f1_type_b": "Type B"})
        fig = px.line(
            long,
            x="r",
            y="score",
            color="type",
            markers=True,
            title="F1 score by observation period",
            labels={"r": "Observation period (days)", "score": "F1"},
        )
        fig.update_layout(height=400, yaxis_range=[0, 1])
        return fig

    @staticmethod
    def create_period_chart(reports: Sequence[EvalReport]) -> go.Figure:
        """Per-period F1 of one or more evaluated models"""
        fig = go.Figure()
        for report in reports:
            fig.add_trace(
                go.Scatter(
                    x=[p.start.isoformat() for p in report.periods],
                    y=[p.metrics.f1 for p in report.periods],
                    mode="lines+markers",
                    name=report.name,
                )
            )
        fig.update_layout(title="F1 per evaluation period", xaxis_title="Period start", yaxis_title="F1", height=400)
        return fig

    @staticmethod
    def create_comparison_chart(reports: Sequence[EvalReport]) -> go.Figure:
        """Macro precision / recall / F1 side by side"""
        rows = [
            {"model": report.name, "metric": metric, "value": value or 0.0}
            for report in reports
            for metric, value in report.macro.to_dict().items()
        ]
        fig = px.bar(
            pd.DataFrame(rows),
            x="metric",
            y="value",
            color="model",
            barmode="group",
            title="Macro-averaged metrics",
            labels={"metric": "", "value": "Score"},
        )
        fig.update_layout(height=400, yaxis_range=[0, 1])
        return fig

    @staticmethod
    def save(fig: go.Figure, path: str) -> str:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        fig.write_html(path, include_plotlyjs="cdn", full_html=True)
        return path
