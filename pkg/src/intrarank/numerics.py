"""Numerically stable kernels shared by the losses, model and evaluation code.

Everything here works in float64. Embedding matrices are row-major: one
vector per row.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, NonFiniteInput, NormUnderflow

NORM_FLOOR = 1e-12


def _as_float_array(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("input contains NaN or Inf")
    return arr


def l2_normalize(v, eps: float = NORM_FLOOR) -> np.ndarray:
    """Scale ``v`` to unit L2 norm.

    Raises:
        NormUnderflow: if ``||v|| <= eps``.
    """
    arr = _as_float_array(v)
    norm = float(np.linalg.norm(arr))
    if norm <= eps:
        raise NormUnderflow(f"vector norm {norm:.3g} is at or below floor {eps:.3g}")
    return arr / norm


def normalize_rows(x: np.ndarray, eps: float = NORM_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise L2 normalization. Returns ``(unit_rows, norms)``."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1)
    if np.any(norms <= eps):
        bad = int(np.argmax(norms <= eps))
        raise NormUnderflow(f"row {bad} has norm {norms.flat[bad]:.3g} <= {eps:.3g}")
    return x / norms[..., None], norms


def normalize_rows_backward(grad_out: np.ndarray, unit: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of row normalization: ``(I - z z^T) g / ||v||``."""
    radial = np.sum(grad_out * unit, axis=-1, keepdims=True)
    return (grad_out - radial * unit) / norms[..., None]


def cosine_similarity(a, b) -> float:
    """Dot product of two unit vectors, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    return float(min(1.0, max(-1.0, float(np.dot(a, b)))))


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs cosine of unit-row matrices, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise DimensionMismatch(f"row dimensions {a.shape[-1]} and {b.shape[-1]} differ")
    return np.clip(a @ b.T, -1.0, 1.0)


def log1p_sum_exp(z) -> tuple[float, np.ndarray]:
    """Return ``ln(1 + sum_k exp(z_k))`` and its gradient ``exp(z_k) / (1 + sum exp(z))``.

    The constant 1 is treated as an extra ``exp(0)`` term so the max-shift
    covers it; nothing overflows for |z_k| up to ~1e300.
    """
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.size == 0:
        return 0.0, z.copy()
    shift = max(0.0, float(z.max()))
    e = np.exp(z - shift)
    tail = math.exp(-shift)
    total = float(e.sum())
    denom = tail + total
    if shift == 0.0:
        return math.log1p(total), e / denom
    return shift + math.log(denom), e / denom


def smooth_max_hinge(violations: Sequence[float], tau: float) -> float:
    """Smooth upper bound on ``max(0, max_k v_k)``: ``ln(1 + sum_k e^{tau v_k}) / tau``.

    The gap to the hard hinge is at most ``ln(1 + K) / tau``.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    v = _as_float_array(violations)
    value, _ = log1p_sum_exp(tau * v)
    return value / tau


def smooth_max_hinge_grad(violations, tau: float) -> tuple[float, np.ndarray]:
    """Value and gradient of :func:`smooth_max_hinge` with respect to each violation."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    v = _as_float_array(violations)
    value, weights = log1p_sum_exp(tau * v)
    return value / tau, weights.reshape(v.shape)
