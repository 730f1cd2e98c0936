"""Brute-force reference implementations shared by unit and acceptance tests."""

import numpy as np


def brute_force_transition(seq, n_states):
    """Dict-based pair counting, then divide rows by their totals."""
    counts = {}
    for a, b in zip(seq[:-1], seq[1:]):
        counts[(a, b)] = counts.get((a, b), 0) + 1
    matrix = np.zeros((n_states, n_states))
    for (a, b), c in counts.items():
        matrix[a, b] = c
    totals = matrix.sum(axis=1)
    for a in range(n_states):
        if totals[a] > 0:
            matrix[a] /= totals[a]
    return matrix
