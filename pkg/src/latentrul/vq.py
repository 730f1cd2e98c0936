"""Vector quantization: nearest-codebook assignment and the three-term loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, square, straight_through, tmean, tsum

__all__ = [
    "QuantizationResult",
    "init_codebook",
    "nearest_indices",
    "quantize",
    "straight_through",
    "vq_loss",
]


@dataclass
class QuantizationResult:
    """Assignment of encoder rows to codebook entries."""

    indices: np.ndarray  # int64, shape (..., S)
    z_q: np.ndarray      # selected codebook rows, same shape as z_e
    z_e: np.ndarray      # the encoder output the assignment was made from


def init_codebook(n_entries: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Codebook rows drawn uniformly from [-1/n_entries, 1/n_entries]."""
    if n_entries < 2:
        raise ValueError(f"codebook needs at least 2 entries, got {n_entries}")
    bound = 1.0 / n_entries
    return rng.uniform(-bound, bound, size=(n_entries, dim))


def nearest_indices(z_e: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Index of the closest codebook row (squared L2) for each row of z_e.

    Ties resolve to the smallest index, which is what argmin over explicit
    distances gives.
    """
    z_e = np.asarray(z_e, dtype=np.float64)
    codebook = np.asarray(codebook, dtype=np.float64)
    if z_e.shape[-1] != codebook.shape[1]:
        raise ValueError(
            f"latent dim {z_e.shape[-1]} does not match codebook dim {codebook.shape[1]}"
        )
    flat = z_e.reshape(-1, codebook.shape[1])
    # ||z - e||^2 for every pair; computed explicitly so ties are exact.
    d2 = ((flat[:, None, :] - codebook[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1).reshape(z_e.shape[:-1])


def quantize(z_e: np.ndarray, codebook: np.ndarray) -> QuantizationResult:
    """Snap each encoder row to its nearest codebook entry."""
    z_e = np.asarray(z_e, dtype=np.float64)
    idx = nearest_indices(z_e, codebook)
    return QuantizationResult(indices=idx, z_q=np.asarray(codebook)[idx], z_e=z_e)


def _per_item_sq_norm(diff: Tensor) -> Tensor:
    """Squared L2 per item, then mean over any batch axis (plain sum if unbatched)."""
    if diff.ndim <= 2:
        return tsum(square(diff))
    return tmean(tsum(square(diff), axis=(-2, -1)))


def vq_loss(prediction: Tensor, target, z_e: Tensor, z_q_rows: Tensor, beta: float):
    """Total training loss and its breakdown.

    task       squared error of the predicted RUL against the target
    codebook   ||sg(z_e) - e||^2, moves the selected embeddings only
    commitment beta * ||z_e - sg(e)||^2, moves the encoder only

    For batched inputs each term is averaged over the batch; the two latent
    terms are summed over the latent block per item.
    """
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    target_t = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=np.float64))
    task = tmean(square(prediction - target_t))
    codebook_term = _per_item_sq_norm(z_e.detach() - z_q_rows)
    commitment = _per_item_sq_norm(z_e - z_q_rows.detach()) * beta
    total = task + codebook_term + commitment
    parts = {
        "task": float(task.data),
        "codebook": float(codebook_term.data),
        "commitment": float(commitment.data),
    }
    return total, parts
