"""Divergence measures and the prior library queried at prediction time.

The library stores one steady-state distribution per (system, window) from the
run-to-failure training data, together with the window's RUL label. A query
scans the whole library with the Jensen-Shannon divergence (vectorized over
entries), sorts ascending, and averages the RULs of the k closest entries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ValidationError

FORMAT_VERSION = 1
_SUM_TOL = 1e-9


def _check_distribution(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {p.shape}")
    if np.any(p < 0):
        raise ValueError(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > _SUM_TOL:
        raise ValueError(f"{name} sums to {p.sum():.12f}, not 1")
    return p


def kl(p, q) -> float:
    """Kullback-Leibler divergence sum(p log(p/q)), natural log.

    Terms with p_i = 0 contribute nothing; any p_i > 0 where q_i = 0 makes the
    divergence infinite.
    """
    p = _check_distribution(p, "p")
    q = _check_distribution(q, "q")
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    support = p > 0
    if np.any(q[support] == 0):
        return float("inf")
    terms = np.zeros_like(p)
    terms[support] = p[support] * np.log(p[support] / q[support])
    return float(terms.sum())


def _js_rows(p: np.ndarray, qs: np.ndarray) -> np.ndarray:
    """JS divergence of p against every row of qs. Inputs are assumed valid."""
    m = 0.5 * (p[None, :] + qs)
    # 0 log 0 = 0; the mixture is positive wherever p or q is.
    with np.errstate(divide="ignore", invalid="ignore"):
        left = np.where(p[None, :] > 0, p[None, :] * np.log(p[None, :] / m), 0.0)
        right = np.where(qs > 0, qs * np.log(qs / m), 0.0)
    vals = 0.5 * left.sum(axis=1) + 0.5 * right.sum(axis=1)
    return np.maximum(vals, 0.0)


def js(p, q) -> float:
    """Jensen-Shannon divergence, symmetric and bounded by ln 2."""
    p = _check_distribution(p, "p")
    q = _check_distribution(q, "q")
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    return float(_js_rows(p, q[None, :])[0])


@dataclass
class LibraryEntry:
    system_id: int
    window_id: int
    pi: np.ndarray
    rul: float


@dataclass
class NeighborSet:
    entries: list            # LibraryEntry, ascending divergence
    divergences: np.ndarray


class PriorLibrary:
    """Immutable collection of (steady state, RUL) records.

    Remembers the EMA factor and epsilon floor it was built with, so queries
    fold their windows the same way.
    """

    def __init__(
        self,
        n_states: int,
        entries: Optional[list] = None,
        config_digest: str = "",
        ema_lambda: float = 0.9,
        epsilon: float = 1e-6,
    ):
        self.n_states = n_states
        self.entries = list(entries) if entries else []
        self.config_digest = config_digest
        self.ema_lambda = ema_lambda
        self.epsilon = epsilon
        self._matrix = None

    def add(self, system_id: int, window_id: int, pi: np.ndarray, rul: float) -> None:
        pi = _check_distribution(pi, "pi")
        if pi.shape[0] != self.n_states:
            raise ValidationError(f"pi has {pi.shape[0]} states, library holds {self.n_states}")
        if rul < 0:
            raise ValidationError(f"negative RUL label {rul}")
        self.entries.append(LibraryEntry(system_id, window_id, pi, float(rul)))
        self._matrix = None

    def __len__(self) -> int:
        return len(self.entries)

    def _stacked(self) -> np.ndarray:
        if self._matrix is None or self._matrix.shape[0] != len(self.entries):
            self._matrix = np.stack([e.pi for e in self.entries]) if self.entries else np.empty((0, self.n_states))
        return self._matrix

    # ----- persistence -----------------------------------------------------
    def save(self, path) -> None:
        doc = {
            "format_version": FORMAT_VERSION,
            "kind": "library",
            "n_states": self.n_states,
            "config_digest": self.config_digest,
            "ema_lambda": self.ema_lambda,
            "epsilon": self.epsilon,
            "entries": [
                {
                    "system_id": e.system_id,
                    "window_id": e.window_id,
                    "pi": e.pi.tolist(),
                    "rul": e.rul,
                }
                for e in self.entries
            ],
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> "PriorLibrary":
        doc = json.loads(Path(path).read_text())
        if doc.get("kind") != "library":
            raise ValidationError(f"{path}: not a prior library file")
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValidationError(
                f"{path}: format version {doc.get('format_version')} != {FORMAT_VERSION}"
            )
        lib = cls(
            n_states=doc["n_states"],
            config_digest=doc.get("config_digest", ""),
            ema_lambda=doc.get("ema_lambda", 0.9),
            epsilon=doc.get("epsilon", 1e-6),
        )
        for e in doc["entries"]:
            pi = _check_distribution(np.asarray(e["pi"]), "pi")
            lib.entries.append(LibraryEntry(e["system_id"], e["window_id"], pi, float(e["rul"])))
        return lib


def nearest(
    query_pi,
    library: PriorLibrary,
    k: int,
    exclude_system: Optional[int] = None,
) -> NeighborSet:
    """The k library entries with the smallest JS divergence from the query.

    Exhaustive scan over the whole library; ties break on ascending
    (system_id, window_id) so results are reproducible.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    query = _check_distribution(query_pi, "query")
    if query.shape[0] != library.n_states:
        raise ValidationError(
            f"query has {query.shape[0]} states, library holds {library.n_states}"
        )
    entries = library.entries
    mask = np.ones(len(entries), dtype=bool)
    if exclude_system is not None:
        mask = np.array([e.system_id != exclude_system for e in entries], dtype=bool)
    if not mask.any():
        raise ValidationError("no eligible library entries for this query")

    divs = _js_rows(query, library._stacked()[mask])
    eligible = [entries[i] for i in np.flatnonzero(mask)]
    order = sorted(
        range(len(eligible)),
        key=lambda i: (divs[i], eligible[i].system_id, eligible[i].window_id),
    )[: min(k, len(eligible))]
    return NeighborSet(
        entries=[eligible[i] for i in order],
        divergences=np.array([divs[i] for i in order]),
    )


def predict_rul(neighbors: NeighborSet) -> float:
    """Arithmetic mean of the neighbors' RUL labels."""
    if not neighbors.entries:
        raise ValidationError("cannot predict from an empty neighbor set")
    return float(np.mean([e.rul for e in neighbors.entries]))
