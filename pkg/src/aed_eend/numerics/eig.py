"""Deterministic symmetric eigensolver (cyclic Jacobi rotations).

The sweep kernel is compiled with Cython when available; otherwise the
pure-Python implementation is used. Set ``AEDD_PURE_PYTHON=1`` to force the
fallback. :data:`BACKEND` names the kernel in use.
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import ContractError, NumericError
from . import _jacobi_py
from .tensor import Tensor

MAX_DIM = 4096
MAX_SWEEPS = 100
TOL = 1e-12  # relative off-diagonal Frobenius norm at convergence

if os.environ.get("AEDD_PURE_PYTHON", "") not in ("", "0"):
    _kernel = _jacobi_py
    BACKEND = "python"
else:
    try:
        from .._ext import _jacobi as _kernel
        BACKEND = "cython"
    except ImportError:
        _kernel = _jacobi_py
        BACKEND = "python"


def _backend_module(backend):
    if backend is None:
        return _kernel
    if backend == "python":
        return _jacobi_py
    if backend == "cython":
        from .._ext import _jacobi
        return _jacobi
    raise ValueError(f"unknown eigensolver backend {backend!r}")


def sym_eig(a, max_dim: int = MAX_DIM, backend: str | None = None):
    """Eigen-decomposition of a symmetric matrix.

    Returns ``(w, v)``: eigenvalues ascending and eigenvectors as columns of
    ``v``, in the same container type as the input (Tensor in, Tensors out).
    Each eigenvector is sign-normalised so its largest-magnitude entry is
    positive, which makes the output independent of rotation history.
    """
    as_tensor = isinstance(a, Tensor)
    m = np.array(a.data if as_tensor else a, dtype=np.float64, order="C", copy=True)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractError(f"sym_eig needs a square matrix, got {m.shape}")
    n = m.shape[0]
    if n > max_dim:
        raise ContractError(f"sym_eig: n={n} exceeds cap {max_dim}")
    if not np.all(np.isfinite(m)):
        raise ContractError("sym_eig: non-finite input")
    if n and np.max(np.abs(m - m.T)) > 1e-8:
        raise ContractError("sym_eig: input is not symmetric within 1e-8")
    m = 0.5 * (m + m.T)
    norm = float(np.sqrt(np.sum(m * m)))
    if n == 0:
        w, v = np.zeros(0), np.zeros((0, 0))
    else:
        vt, sweeps, off = _backend_module(backend).jacobi_sweeps(m, TOL, MAX_SWEEPS)
        v = np.asarray(vt).T
        if off > TOL * norm:
            raise NumericError(
                f"Jacobi failed to converge in {sweeps} sweeps (off-norm {off:.3e})",
                {"n": n, "sweeps": sweeps, "off_norm": off},
            )
        w = np.diag(m).copy()
        order = np.argsort(w, kind="stable")
        w = w[order]
        v = v[:, order]
        pivots = np.argmax(np.abs(v), axis=0)
        signs = np.where(v[pivots, np.arange(n)] < 0, -1.0, 1.0)
        v = v * signs
    if as_tensor:
        return Tensor(w), Tensor(v)
    return w, v
