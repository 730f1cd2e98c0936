"""Per-system priors over latent states.

Each time window yields a short state sequence; its empirical transition
matrix is blended into a running exponential moving average for the system,
made irreducible by an epsilon floor, and summarized by the steady-state
distribution of the resulting chain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError

DEFAULT_EPSILON = 1e-6
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100_000


@dataclass
class TransitionMatrix:
    probs: np.ndarray        # (N, N); rows with observations sum to 1, others all zero
    visit_counts: np.ndarray  # per-state visits that have a successor


@dataclass
class SteadyState:
    pi: np.ndarray
    residual: float   # ||pi M - pi||_1 at termination
    iterations: int


def estimate_transition(states, n_states: int) -> TransitionMatrix:
    """Empirical transition probabilities from one state sequence.

    p[a, b] = (number of a -> b steps) / (visits to a that have a successor),
    so every observed row sums to exactly 1 and unobserved rows stay zero.
    """
    seq = np.asarray(states, dtype=np.int64)
    if seq.ndim != 1 or seq.size < 2:
        raise ValueError(f"need a sequence of at least 2 states, got shape {seq.shape}")
    if seq.min() < 0 or seq.max() >= n_states:
        raise ValueError(f"state index outside [0, {n_states})")
    counts = np.zeros((n_states, n_states), dtype=np.float64)
    np.add.at(counts, (seq[:-1], seq[1:]), 1.0)
    visits = counts.sum(axis=1)
    probs = np.divide(counts, visits[:, None], out=np.zeros_like(counts), where=visits[:, None] > 0)
    return TransitionMatrix(probs=probs, visit_counts=visits)


def ema_update(m_prev, p: np.ndarray, lam: float) -> np.ndarray:
    """lam * m_prev + (1 - lam) * p; the first window simply adopts p."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    p = np.asarray(p, dtype=np.float64)
    if m_prev is None:
        return p.copy()
    m_prev = np.asarray(m_prev, dtype=np.float64)
    if m_prev.shape != p.shape:
        raise ValueError(f"shape mismatch: {m_prev.shape} vs {p.shape}")
    return lam * m_prev + (1.0 - lam) * p


def regularize(m: np.ndarray, eps: float = DEFAULT_EPSILON) -> np.ndarray:
    """Add eps to every cell and renormalize rows.

    The uniform floor makes the chain irreducible and aperiodic, so a unique
    steady state exists; rows that already had mass move by O(eps) only.
    """
    if eps <= 0:
        raise ValueError(f"epsilon must be positive, got {eps}")
    m = np.asarray(m, dtype=np.float64) + eps
    return m / m.sum(axis=1, keepdims=True)


# After this many power iterations a chain is treated as slow-mixing and
# finished with a direct solve; well-behaved chains converge in far fewer.
_POWER_BUDGET = 1024


def _solve_stationary(m: np.ndarray) -> np.ndarray:
    """Solve pi m = pi, sum(pi) = 1 as a linear system."""
    n = m.shape[0]
    a = m.T - np.eye(n)
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(a, b)
    pi = np.maximum(pi, 0.0)
    return pi / pi.sum()


def steady_state(
    m: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SteadyState:
    """Stationary distribution of a strictly positive row-stochastic matrix.

    Power iteration pi <- pi m from the uniform vector until the L1 fixed-point
    residual drops below tol; positivity guarantees a unique solution. Chains
    whose spectral gap is on the order of the epsilon floor mix too slowly for
    iteration alone (the EMA drives stale states there), so after a fixed
    iteration budget the remaining work is done by solving pi m = pi directly.
    The reported residual is always the true fixed-point residual.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"transition matrix must be square, got {m.shape}")
    if np.any(m <= 0):
        raise ValueError("matrix must be strictly positive; regularize first")
    if np.max(np.abs(m.sum(axis=1) - 1.0)) > 1e-9:
        raise ValueError("rows must sum to 1")
    n = m.shape[0]
    pi = np.full(n, 1.0 / n)
    budget = min(max_iter, _POWER_BUDGET)
    residual = float("inf")
    for it in range(1, budget + 1):
        nxt = pi @ m
        nxt /= nxt.sum()
        residual = float(np.abs(nxt - pi).sum())
        pi = nxt
        if residual <= tol:
            return SteadyState(pi=pi, residual=residual, iterations=it)
    solved = _solve_stationary(m)
    solved_residual = float(np.abs(solved @ m - solved).sum())
    if solved_residual <= tol:
        return SteadyState(pi=solved, residual=solved_residual, iterations=budget)
    raise NumericError(
        f"steady state did not converge (power residual {residual:.3e}, "
        f"solve residual {solved_residual:.3e})"
    )


class TransitionSmoother:
    """Streaming EMA of transition matrices for one system."""

    def __init__(self, lam: float):
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {lam}")
        self.lam = lam
        self.matrix = None
        self.n_windows = 0

    def update(self, p: np.ndarray) -> np.ndarray:
        self.matrix = ema_update(self.matrix, p, self.lam)
        self.n_windows += 1
        return self.matrix


def fold_priors(
    state_sequences: np.ndarray,
    n_states: int,
    lam: float,
    eps: float = DEFAULT_EPSILON,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> list:
    """One steady state per window, folding the windows of a system in order."""
    smoother = TransitionSmoother(lam)
    out = []
    for seq in np.asarray(state_sequences, dtype=np.int64):
        p = estimate_transition(seq, n_states).probs
        m = smoother.update(p)
        out.append(steady_state(regularize(m, eps), tol=tol, max_iter=max_iter))
    return out


def priors_for_system(
    windows,
    model,
    lam: float,
    eps: float = DEFAULT_EPSILON,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> list:
    """(window_id, SteadyState) pairs for one system's windows, in window order.

    ``model`` provides latent_states_batch; windows must already be ordered by
    window_id, as the EMA fold is sequential.
    """
    windows = list(windows)
    if not windows:
        return []
    values = np.stack([w.values for w in windows])
    states = model.latent_states_batch(values)
    folded = fold_priors(states, model.config.codebook_size, lam, eps, tol, max_iter)
    return [(w.window_id, ss) for w, ss in zip(windows, folded)]
