"""Run-length helpers over binary frame masks."""

import numpy as np


def mask_runs(mask) -> list[tuple[int, int]]:
    """Maximal runs of true values as half-open ``(start, stop)`` pairs."""
    m = np.asarray(mask, dtype=bool).reshape(-1)
    if m.size == 0:
        return []
    padded = np.concatenate(([False], m, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return [(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2])]


def longest_run(mask) -> tuple[int, int] | None:
    """First longest run, or None when the mask is empty."""
    best = None
    for a, b in mask_runs(mask):
        if best is None or b - a > best[1] - best[0]:
            best = (a, b)
    return best
