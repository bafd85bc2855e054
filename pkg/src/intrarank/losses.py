"""Training objectives with analytic gradients.

Every loss returns a :class:`LossValueWithGrad` whose ``grad`` mirrors the
shape of the loss input. Similarity tables are ``M x N`` arrays: row ``x`` is a
generated family, column ``i`` the ``i``-th variant ordered by increasing
generation strength, and the entry the cosine of that variant to the family's
original.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyAnchors, MissingProxy
from .hyperparams import HyperParams
from .numerics import normalize_rows


@dataclass
class LossValueWithGrad:
    value: float
    grad: Any

    def __post_init__(self):
        self.value = float(self.value)


@dataclass
class AnchorSimilarityTable:
    """Cosines between each family's variants and its class anchor.

    ``sims[x, i]`` is variant ``i`` of family ``x`` against the anchor
    ``anchors[x]``. Rows sharing an anchor form that anchor's ``X_p``.
    """

    sims: np.ndarray
    anchors: np.ndarray

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors).ravel()
        sims = np.asarray(self.sims, dtype=np.float64)
        if sims.ndim != 2:
            sims = sims.reshape(len(self.anchors), -1)
        if sims.shape[0] != len(self.anchors):
            raise DimensionMismatch("one anchor id per family row is required")
        self.sims = sims

    @classmethod
    def from_groups(cls, groups: dict) -> "AnchorSimilarityTable":
        """Build from ``{anchor_id: array of shape (|X_p|, N)}``."""
        rows, ids = [], []
        for key, block in groups.items():
            block = np.atleast_2d(np.asarray(block, dtype=np.float64))
            rows.append(block)
            ids.extend([key] * len(block))
        if not rows:
            return cls(np.zeros((0, 0)), np.zeros(0, dtype=int))
        return cls(np.vstack(rows), np.asarray(ids))

    def groups(self) -> dict:
        return {p: self.sims[self.anchors == p] for p in np.unique(self.anchors)}


@dataclass
class ProxyBank:
    """One learnable unit vector per training class."""

    classes: np.ndarray
    vectors: np.ndarray
    _lookup: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.classes = np.asarray(self.classes, dtype=np.int64)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if len(self.classes) != len(self.vectors):
            raise DimensionMismatch("one proxy per class is required")
        self._lookup = {int(c): i for i, c in enumerate(self.classes)}

    @classmethod
    def random(cls, classes: Sequence[int], dim: int, rng: np.random.Generator) -> "ProxyBank":
        vecs, _ = normalize_rows(rng.standard_normal((len(classes), dim)))
        return cls(np.asarray(sorted(classes)), vecs)

    def index_of(self, labels) -> np.ndarray:
        try:
            return np.array([self._lookup[int(y)] for y in np.asarray(labels).ravel()], dtype=np.int64)
        except KeyError as exc:
            raise MissingProxy(f"no proxy for label {exc.args[0]}") from None

    def renormalize(self) -> None:
        self.vectors, _ = normalize_rows(self.vectors)


def _row_log1p_sum_exp(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise ``ln(1 + sum_k e^{z_k})`` and its softmax-style weights.

    ``-inf`` entries are allowed and contribute nothing.
    """
    if z.shape[1] == 0:
        return np.zeros(z.shape[0]), np.zeros_like(z)
    shift = np.maximum(0.0, z.max(axis=1))
    e = np.exp(z - shift[:, None])
    tail = e.sum(axis=1)
    denom = np.exp(-shift) + tail
    # log1p keeps precision when every term is tiny and no shift was applied
    value = np.where(shift > 0, shift + np.log(denom), np.log1p(tail))
    return value, e / denom[:, None]


def _table(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim == 1:
        s = s[None, :]
    if s.ndim != 2:
        raise DimensionMismatch(f"similarity table must be 2-D, got shape {s.shape}")
    return s


def _hinge_result(hinge: np.ndarray, grad: np.ndarray, m: int) -> LossValueWithGrad:
    if m == 0:
        return LossValueWithGrad(0.0, grad)
    return LossValueWithGrad(np.maximum(hinge, 0.0).sum() / m, grad / m)


def hand_in_hand_loss(s, delta: float) -> LossValueWithGrad:
    """Adjacent-pair hinge: each variant must beat the next one by ``delta``."""
    s = _table(s)
    m, n = s.shape
    hinge = s[:, 1:] - s[:, :-1] + delta
    active = (hinge > 0).astype(np.float64)
    grad = np.zeros_like(s)
    grad[:, 1:] += active
    grad[:, :-1] -= active
    return _hinge_result(hinge, grad, m)


def left_base_loss(s, delta: float) -> LossValueWithGrad:
    """Hinge of each variant against the least similar variant to its left."""
    s = _table(s)
    m, n = s.shape
    grad = np.zeros_like(s)
    hinge = np.zeros((m, max(n - 1, 0)))
    rows = np.arange(m)
    for i in range(1, n):
        j = np.argmin(s[:, :i], axis=1)  # first minimum wins ties
        h = s[:, i] - s[rows, j] + delta
        hinge[:, i - 1] = h
        act = (h > 0).astype(np.float64)
        grad[:, i] += act
        np.add.at(grad, (rows, j), -act)
    return _hinge_result(hinge, grad, m)


def right_base_loss(s, delta: float) -> LossValueWithGrad:
    """Hinge of each variant against the most similar variant to its right."""
    s = _table(s)
    m, n = s.shape
    grad = np.zeros_like(s)
    hinge = np.zeros((m, max(n - 1, 0)))
    rows = np.arange(m)
    for i in range(n - 1):
        j = i + 1 + np.argmax(s[:, i + 1 :], axis=1)
        h = s[rows, j] - s[:, i] + delta
        hinge[:, i] = h
        act = (h > 0).astype(np.float64)
        np.add.at(grad, (rows, j), act)
        grad[:, i] -= act
    return _hinge_result(hinge, grad, m)


def _smooth_pairs(s: np.ndarray, hi: np.ndarray, lo: np.ndarray, delta: float, tau: float) -> LossValueWithGrad:
    # violation of each pair is s[hi] - s[lo] + delta, pooled per row
    m, n = s.shape
    if m == 0 or hi.size == 0:
        return LossValueWithGrad(0.0, np.zeros_like(s))
    z = tau * (s[:, hi] - s[:, lo] + delta)
    vals, w = _row_log1p_sum_exp(z)
    grad = np.zeros_like(s)
    # weights scale 1/tau * tau = 1
    np.add.at(grad.T, hi, w.T)
    np.add.at(grad.T, lo, -w.T)
    return LossValueWithGrad(vals.sum() / (tau * m), grad / m)


def left_smooth_loss(s, delta: float, tau: float) -> LossValueWithGrad:
    """Smooth left part: pairs (j < i) with violation ``S_i - S_j + delta``."""
    s = _table(s)
    n = s.shape[1]
    i_idx, j_idx = [], []
    for i in range(1, n):
        for j in range(i):
            i_idx.append(i)
            j_idx.append(j)
    return _smooth_pairs(s, np.array(i_idx, dtype=int), np.array(j_idx, dtype=int), delta, tau)


def right_smooth_loss(s, delta: float, tau: float) -> LossValueWithGrad:
    """Smooth right part: pairs (i < j) with violation ``S_j - S_i + delta``."""
    s = _table(s)
    n = s.shape[1]
    j_idx, i_idx = [], []
    for i in range(n - 1):
        for j in range(i + 1, n):
            j_idx.append(j)
            i_idx.append(i)
    return _smooth_pairs(s, np.array(j_idx, dtype=int), np.array(i_idx, dtype=int), delta, tau)


def sort_loss(s, delta: float, tau: float) -> LossValueWithGrad:
    """Left plus right smooth ranking loss.

    The gradient is the total derivative: every ``S_i`` appears both as the
    lower and the upper element of some pairs, and both roles are counted.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    left = left_smooth_loss(s, delta, tau)
    right = right_smooth_loss(s, delta, tau)
    return LossValueWithGrad(left.value + right.value, left.grad + right.grad)


def anchor_loss(t: AnchorSimilarityTable, phi: float, beta: float) -> LossValueWithGrad:
    """Keep every variant within margin ``phi`` of its class anchor.

    Averaged over the distinct anchors; within an anchor, summed over its
    families. Low-similarity variants receive the largest gradient weight.
    """
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    sims = t.sims
    if sims.shape[0] == 0:
        return LossValueWithGrad(0.0, np.zeros_like(sims))
    n_anchors = len(np.unique(t.anchors))
    vals, w = _row_log1p_sum_exp(beta * (phi - sims))
    return LossValueWithGrad(vals.sum() / (beta * n_anchors), -w / n_anchors)


def ranking_loss(s, t: AnchorSimilarityTable, hp: HyperParams) -> LossValueWithGrad:
    """Sort loss plus anchor loss. ``grad`` is ``{"s": ..., "t": ...}``."""
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0 and t.sims.size == 0:
        return LossValueWithGrad(0.0, {"s": np.zeros_like(s), "t": np.zeros_like(t.sims)})
    if s.size and t.sims.size == 0:
        raise EmptyAnchors("families present but no positive anchors")
    srt = sort_loss(s, hp.delta, hp.tau)
    anc = anchor_loss(t, hp.phi, hp.beta)
    return LossValueWithGrad(srt.value + anc.value, {"s": srt.grad, "t": anc.grad})


def proxy_anchor_loss(
    embeddings,
    labels,
    proxies: ProxyBank,
    margin_pa: float = 0.1,
    scale_pa: float = 32.0,
) -> LossValueWithGrad:
    """Proxy-Anchor loss. ``grad`` is ``{"embeddings": ..., "proxies": ...}``.

    Embeddings and proxies are assumed unit-normalized; cosines are plain dot
    products so the gradient is exact.
    """
    x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    pidx = proxies.index_of(labels)
    p = proxies.vectors
    if x.shape[1] != p.shape[1]:
        raise DimensionMismatch(f"embedding dim {x.shape[1]} != proxy dim {p.shape[1]}")
    cos = x @ p.T  # B x C
    pos = np.zeros(cos.shape, dtype=bool)
    pos[np.arange(len(x)), pidx] = True
    with_pos = pos.any(axis=0)
    n_pos = int(with_pos.sum())
    n_all = p.shape[0]

    z_pos = np.where(pos, -scale_pa * (cos - margin_pa), -np.inf).T  # C x B
    z_neg = np.where(~pos, scale_pa * (cos + margin_pa), -np.inf).T
    v_pos, w_pos = _row_log1p_sum_exp(z_pos)
    v_neg, w_neg = _row_log1p_sum_exp(z_neg)

    value = 0.0
    g_cos = np.zeros_like(cos)
    if n_pos:
        value += v_pos[with_pos].sum() / n_pos
        g_cos -= scale_pa * w_pos.T / n_pos
    value += v_neg.sum() / n_all
    g_cos += scale_pa * w_neg.T / n_all
    return LossValueWithGrad(value, {"embeddings": g_cos @ p, "proxies": g_cos.T @ x})


def _mix(a, b, lam: float):
    if isinstance(a, dict) or isinstance(b, dict):
        a = a if isinstance(a, dict) else {}
        b = b if isinstance(b, dict) else {}
        out = {}
        for key in list(a) + [k for k in b if k not in a]:
            if key in a and key in b:
                out[key] = _mix(a[key], b[key], lam)
            elif key in a:
                out[key] = a[key]
            else:
                out[key] = _mix(None, b[key], lam)
        return out
    if a is None:
        return lam * np.asarray(b, dtype=np.float64)
    if b is None:
        return a
    return np.asarray(a, dtype=np.float64) + lam * np.asarray(b, dtype=np.float64)


def combined_loss(metric: LossValueWithGrad, ranking: LossValueWithGrad, lambda_mix: float) -> LossValueWithGrad:
    """``metric + lambda_mix * ranking`` with gradients mixed the same way.

    Dict gradients are merged by key; keys present on one side only are
    carried over (scaled by ``lambda_mix`` when they come from ``ranking``).
    """
    if lambda_mix < 0:
        raise ValueError("lambda_mix must be >= 0")
    return LossValueWithGrad(metric.value + lambda_mix * ranking.value, _mix(metric.grad, ranking.grad, lambda_mix))
