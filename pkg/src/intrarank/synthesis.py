"""Latent-space synthesis of graded intra-class variants.

An anchor latent ``r_a`` is paired with its most similar same-class partner
``r_p`` (cosine above the generation margin ``gamma``). Variant ``j`` of
``N`` is the renormalized chord point ``r_a + (j * alpha / N) * (r_p - r_a)``,
so larger ``j`` means a stronger move along the semantic direction and a
lower cosine to the anchor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .model import ModelParams, LinearLayerParams, forward_projector
from .numerics import cosine_matrix, l2_normalize, normalize_rows, normalize_rows_backward

_MIN_DIRECTION = 1e-12


@dataclass
class SemanticDirection:
    direction: np.ndarray
    source_pair: tuple[int, int]  # (original index, partner index)
    label: int = -1


@dataclass
class GeneratedFamily:
    original_latent: np.ndarray
    variants: np.ndarray  # N x d, ordered by strength
    strengths: np.ndarray
    class_label: int = -1
    source_pair: tuple[int, int] | None = None
    projected_original: np.ndarray | None = None
    projected_variants: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.strengths)

    def latent_cosines(self) -> np.ndarray:
        return np.clip(self.variants @ self.original_latent, -1.0, 1.0)

    def projected_cosines(self) -> np.ndarray:
        if self.projected_variants is None:
            raise ValueError("family has not been projected")
        return np.clip(self.projected_variants @ self.projected_original, -1.0, 1.0)


def strengths(alpha: float, n: int) -> np.ndarray:
    """``j * alpha / n`` for ``j = 1..n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return alpha * np.arange(1, n + 1, dtype=np.float64) / n


def candidate_pairs(latents, labels, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized candidate selection; returns ``(anchor_idx, partner_idx)``.

    Each anchor keeps its single most similar same-class partner whose cosine
    exceeds ``gamma``; ties go to the lowest partner index. Partners that
    coincide exactly with the anchor are skipped since they give no direction.
    When two samples pick each other, the pair is used once, anchored at the
    lower index.
    """
    r = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    y = np.asarray(labels).ravel()
    if len(r) != len(y):
        raise DimensionMismatch("latents and labels differ in length")
    if len(r) < 2:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    unit, _ = normalize_rows(r)
    cos = cosine_matrix(unit, unit)
    eligible = (y[:, None] == y[None, :]) & (cos > gamma)
    np.fill_diagonal(eligible, False)
    score = np.where(eligible, cos, -np.inf)
    anchors, partners = [], []
    for a in range(len(r)):
        row = score[a].copy()
        while np.isfinite(row).any():
            p = int(np.argmax(row))
            if np.linalg.norm(r[p] - r[a]) > _MIN_DIRECTION:
                anchors.append(a)
                partners.append(p)
                break
            row[p] = -np.inf
    chosen = set(zip(anchors, partners))
    keep = [k for k, (a, p) in enumerate(zip(anchors, partners)) if not (p < a and (p, a) in chosen)]
    return np.asarray(anchors, dtype=np.int64)[keep], np.asarray(partners, dtype=np.int64)[keep]


def select_generation_candidates(latents, labels, gamma: float) -> list[SemanticDirection]:
    """One :class:`SemanticDirection` per eligible anchor, in anchor order.

    An empty list is valid and means the batch contributes no ranking loss.
    """
    r = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    y = np.asarray(labels).ravel()
    a_idx, p_idx = candidate_pairs(r, y, gamma)
    return [SemanticDirection(r[p] - r[a], (int(a), int(p)), int(y[a])) for a, p in zip(a_idx, p_idx)]


def generate_family(anchor, direction: SemanticDirection, alpha: float, n: int) -> GeneratedFamily:
    """Latent part of a family: ``n`` renormalized steps from ``anchor`` along the direction."""
    anchor = np.asarray(anchor, dtype=np.float64)
    u = np.asarray(direction.direction, dtype=np.float64)
    if anchor.shape != u.shape:
        raise DimensionMismatch(f"anchor {anchor.shape} and direction {u.shape} differ")
    t = strengths(alpha, n)
    variants, _ = normalize_rows(anchor[None, :] + t[:, None] * u[None, :])
    return GeneratedFamily(
        original_latent=l2_normalize(anchor),
        variants=variants,
        strengths=t,
        class_label=direction.label,
        source_pair=direction.source_pair,
    )


def project_family(family: GeneratedFamily, projector: ModelParams | LinearLayerParams) -> GeneratedFamily:
    """Fill in the projected original and variants."""
    rows = np.vstack([family.original_latent[None, :], family.variants])
    z, _ = forward_projector(rows, projector)
    family.projected_original = z[0]
    family.projected_variants = z[1:]
    return family


def generate_families(latents, labels, hp_alpha: float, n: int, gamma: float) -> list[GeneratedFamily]:
    """Select candidates and generate one family per eligible anchor."""
    r = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    return [generate_family(r[d.source_pair[0]], d, hp_alpha, n) for d in select_generation_candidates(r, labels, gamma)]


@dataclass
class InterpolationCache:
    anchor_idx: np.ndarray
    partner_idx: np.ndarray
    strengths: np.ndarray
    unit: np.ndarray  # M x N x d
    norms: np.ndarray  # M x N


def interpolate(latents: np.ndarray, anchor_idx, partner_idx, t: np.ndarray) -> tuple[np.ndarray, InterpolationCache]:
    """Batched, differentiable variant construction.

    Returns variants of shape ``(M, N, d)`` where
    ``variants[x, j] = normalize((1 - t_j) r_a + t_j r_p)``.
    """
    ra = latents[anchor_idx][:, None, :]
    rp = latents[partner_idx][:, None, :]
    w = ra + t[None, :, None] * (rp - ra)
    unit, norms = normalize_rows(w)
    return unit, InterpolationCache(np.asarray(anchor_idx), np.asarray(partner_idx), t, unit, norms)


def interpolate_backward(grad_variants: np.ndarray, cache: InterpolationCache, n_latents: int) -> np.ndarray:
    """Gradient of the variants with respect to the batch latents."""
    g_w = normalize_rows_backward(grad_variants, cache.unit, cache.norms)
    t = cache.strengths[None, :, None]
    g_lat = np.zeros((n_latents, g_w.shape[-1]))
    np.add.at(g_lat, cache.anchor_idx, ((1.0 - t) * g_w).sum(axis=1))
    np.add.at(g_lat, cache.partner_idx, (t * g_w).sum(axis=1))
    return g_lat
