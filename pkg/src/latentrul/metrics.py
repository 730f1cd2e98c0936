"""Prediction scoring: RMSE and the asymmetric PHM08 score."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def _paired(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError(f"prediction/truth shapes differ: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty prediction list")
    return pred, truth


def rmse(pred, truth) -> float:
    pred, truth = _paired(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def score_contribution(h: float) -> float:
    """Penalty for one unit: exp(-h/13)-1 early (h<0), exp(h/10)-1 late (h>=0)."""
    if h < 0:
        return math.exp(-h / 13.0) - 1.0
    return math.exp(h / 10.0) - 1.0


def phm_score(pred, truth) -> float:
    """Sum of per-unit penalties; late predictions (h > 0) weigh heavier."""
    pred, truth = _paired(pred, truth)
    return float(sum(score_contribution(h) for h in pred - truth))


@dataclass
class EvaluationReport:
    """Per-unit errors plus the two aggregates, rows sorted by true RUL."""

    rows: list   # (unit_id, predicted, truth, h)
    rmse: float
    score: float

    @property
    def n_units(self) -> int:
        return len(self.rows)

    @classmethod
    def build(cls, unit_ids, pred, truth) -> "EvaluationReport":
        pred, truth = _paired(pred, truth)
        if len(unit_ids) != pred.size:
            raise ValueError("unit id count does not match predictions")
        rows = [
            (int(u), float(p), float(t), float(p - t))
            for u, p, t in zip(unit_ids, pred, truth)
        ]
        rows.sort(key=lambda r: (r[2], r[0]))
        return cls(rows=rows, rmse=rmse(pred, truth), score=phm_score(pred, truth))

    def to_csv(self, path) -> None:
        lines = ["unit_id,predicted_rul,true_rul,h"]
        lines += [f"{u},{p!r},{t!r},{h!r}" for u, p, t, h in self.rows]
        lines.append(f"# rmse={self.rmse!r} score={self.score!r} n={self.n_units}")
        Path(path).write_text("\n".join(lines) + "\n")

    def to_json(self, path) -> None:
        doc = {
            "rmse": self.rmse,
            "score": self.score,
            "n_units": self.n_units,
            "units": [
                {"unit_id": u, "predicted_rul": p, "true_rul": t, "h": h}
                for u, p, t, h in self.rows
            ],
        }
        Path(path).write_text(json.dumps(doc, indent=2))
