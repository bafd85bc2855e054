"""Retrieval metrics, intra-class rank preservation and finite-difference checks."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import spearmanr

from .errors import DimensionMismatch, EmptyGallery
from .numerics import normalize_rows


@dataclass
class EvalReport:
    recall_at: dict[int, float]
    n_queries: int
    mode: str  # "self" or "query-gallery"
    rank_preservation_rho: float | None = None
    hits: np.ndarray | None = field(default=None, repr=False)  # n_queries x len(ks), bool

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "n_queries": self.n_queries,
            "rank_preservation_rho": self.rank_preservation_rho,
            "recall_at": {str(k): self.recall_at[k] for k in sorted(self.recall_at)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def write_hits_csv(self, path, query_ids: Sequence[str] | None = None) -> None:
        ks = sorted(self.recall_at)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["query"] + [f"hit@{k}" for k in ks])
            for q, row in enumerate(self.hits):
                name = query_ids[q] if query_ids is not None else q
                w.writerow([name] + [int(h) for h in row])


def recall_at_k(
    query_emb,
    query_labels,
    ks: Sequence[int],
    gallery_emb=None,
    gallery_labels=None,
) -> EvalReport:
    """Fraction of queries with a same-label item among their top-K cosine neighbours.

    Without a gallery this runs self-retrieval: the gallery is the query set
    and each query's own row is excluded. Equal similarities are ordered by
    gallery index, lowest first.
    """
    ks = sorted(int(k) for k in ks)
    if not ks or ks[0] < 1:
        raise ValueError("ks must be a nonempty list of positive integers")
    q, _ = normalize_rows(np.atleast_2d(query_emb))
    ql = np.asarray(query_labels).ravel()
    self_mode = gallery_emb is None
    if self_mode:
        g, gl = q, ql
    else:
        if len(gallery_emb) == 0:
            raise EmptyGallery("gallery has no rows")
        g, _ = normalize_rows(np.atleast_2d(gallery_emb))
        gl = np.asarray(gallery_labels).ravel()
    if q.shape[1] != g.shape[1]:
        raise DimensionMismatch("query and gallery dimensions differ")
    n_candidates = len(g) - 1 if self_mode else len(g)
    if n_candidates < 1:
        raise EmptyGallery("no gallery items to retrieve")
    if ks[-1] > n_candidates:
        raise ValueError(f"K={ks[-1]} exceeds the {n_candidates} retrievable items")

    # einsum's plain loop gives bit-identical scores for identical gallery rows,
    # so exact ties really are ties (a blocked BLAS product may differ by an ulp)
    sims = np.einsum("qd,gd->qg", q, g, optimize=False)
    if self_mode:
        np.fill_diagonal(sims, -np.inf)
    kmax = ks[-1]
    order = np.argsort(-sims, axis=1, kind="stable")[:, :kmax]
    match = gl[order] == ql[:, None]
    first = np.where(match.any(axis=1), match.argmax(axis=1), kmax)
    hits = np.stack([first < k for k in ks], axis=1)
    recall = {k: float(hits[:, j].mean()) for j, k in enumerate(ks)}
    return EvalReport(recall, len(q), "self" if self_mode else "query-gallery", hits=hits)


def spearman_to_strength(similarities) -> float:
    """Spearman correlation between strength index and descending-similarity rank.

    1 means similarity falls strictly as strength rises. Returns nan when the
    similarities are all equal.
    """
    s = np.asarray(similarities, dtype=np.float64)
    if np.all(s == s[0]):
        return float("nan")
    # correlating index with -similarity equals correlating it with the descending rank
    return float(spearmanr(np.arange(len(s)), -s).statistic)


def rank_preservation(families, params=None) -> float:
    """Mean Spearman rho over families (each with N >= 3).

    Families without projected vectors are projected with ``params`` first.
    Constant-similarity families carry no order information and are skipped.
    """
    from .synthesis import project_family

    rhos = []
    for fam in families:
        if fam.n < 3:
            raise ValueError("rank preservation needs N >= 3 variants per family")
        if fam.projected_variants is None:
            if params is None:
                raise ValueError("unprojected family and no projector given")
            project_family(fam, params)
        rho = spearman_to_strength(fam.projected_cosines())
        if not np.isnan(rho):
            rhos.append(rho)
    return float(np.mean(rhos)) if rhos else float("nan")


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_coords: int
    n_kink: int
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def grad_check(
    loss_entry_point: Callable[[np.ndarray], tuple[float, np.ndarray]],
    point,
    step: float = 1e-6,
    mode: str = "max",
    kink_tol: float = 1e-3,
) -> GradCheckReport:
    """Compare an analytic gradient against central finite differences.

    ``loss_entry_point(x)`` returns ``(value, grad)`` (or a
    ``LossValueWithGrad``) for a float64 array ``x``.

    ``mode="max"`` reports ``max|g_a - g_n| / max(1e-12, max|g_a| + max|g_n|)``,
    i.e. the worst coordinate error relative to the gradient scale.
    ``mode="elementwise"`` reports the worst per-coordinate
    ``|g_a - g_n| / max(1e-12, |g_a| + |g_n|)``.

    Coordinates where the forward and backward one-sided slopes disagree by
    more than ``kink_tol`` (relative) straddle a nondifferentiable point; they
    are counted in ``n_kink`` and left out of the error.
    """
    x0 = np.array(point, dtype=np.float64)

    def call(x):
        out = loss_entry_point(x)
        if hasattr(out, "value"):
            return out.value, out.grad
        return out

    f0, g = call(x0)
    g_a = np.asarray(g, dtype=np.float64).reshape(x0.shape)
    g_n = np.zeros_like(x0)
    kink = np.zeros(x0.shape, dtype=bool)
    flat = x0.reshape(-1)
    for k in range(flat.size):
        xp = flat.copy()
        xp[k] += step
        xm = flat.copy()
        xm[k] -= step
        fp = call(xp.reshape(x0.shape))[0]
        fm = call(xm.reshape(x0.shape))[0]
        g_n.flat[k] = (fp - fm) / (2 * step)
        fwd, bwd = (fp - f0) / step, (f0 - fm) / step
        if abs(fwd - bwd) > kink_tol * max(1.0, abs(fwd) + abs(bwd)):
            kink.flat[k] = True
    keep = ~kink
    diff = np.abs(g_a - g_n)[keep]
    if diff.size == 0:
        err = 0.0
    elif mode == "max":
        scale = np.abs(g_a[keep]).max() + np.abs(g_n[keep]).max()
        err = float(diff.max() / max(1e-12, scale))
    elif mode == "elementwise":
        err = float((diff / np.maximum(1e-12, np.abs(g_a[keep]) + np.abs(g_n[keep]))).max())
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return GradCheckReport(err, int(x0.size), int(kink.sum()), g_a, g_n)
