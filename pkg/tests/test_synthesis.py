import numpy as np
import pytest

from intrarank.model import LinearLayerParams
from intrarank.numerics import l2_normalize, normalize_rows
from intrarank.synthesis import (
    SemanticDirection,
    candidate_pairs,
    generate_families,
    generate_family,
    interpolate,
    interpolate_backward,
    project_family,
    select_generation_candidates,
    strengths,
)


def exhaustive_candidates(latents, labels, gamma):
    """Pair-scan oracle: best same-class partner above gamma per anchor, mutual pairs once."""
    unit = [l2_normalize(r) for r in latents]
    picks = []
    for a in range(len(latents)):
        best, best_cos = None, -np.inf
        for p in range(len(latents)):
            if p == a or labels[p] != labels[a] or np.array_equal(latents[p], latents[a]):
                continue
            c = min(1.0, max(-1.0, float(unit[a] @ unit[p])))
            if c > gamma and c > best_cos:
                best, best_cos = p, c
        if best is not None:
            picks.append((a, best))
    chosen = set(picks)
    return [(a, p) for a, p in picks if not (p < a and (p, a) in chosen)]


class TestCandidates:
    def test_below_margin(self):
        r = np.array([[1.0, 0.0], [0.04, np.sqrt(1 - 0.04**2)]])
        assert select_generation_candidates(r, [0, 0], 0.05) == []

    def test_direction(self):
        r = np.array([[1.0, 0.0], [0.7071, 0.7071]])
        out = select_generation_candidates(r, [0, 0], 0.05)
        assert len(out) == 1
        np.testing.assert_allclose(out[0].direction, [-0.2929, 0.7071], atol=1e-12)
        assert out[0].source_pair == (0, 1)

    def test_distinct_labels(self):
        r = np.random.default_rng(0).standard_normal((5, 3))
        assert select_generation_candidates(r, [0, 1, 2, 3, 4], -1.0) == []

    def test_duplicate_partner_is_skipped(self):
        r = np.array([[1.0, 0.0], [1.0, 0.0], [0.8, 0.6]])
        a, p = candidate_pairs(r, [0, 0, 0], 0.05)
        assert all(not np.array_equal(r[i], r[j]) for i, j in zip(a, p))

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(2, 12))
            r = rng.standard_normal((n, 3))
            y = rng.integers(0, 3, n)
            gamma = float(rng.uniform(-0.5, 0.8))
            a, p = candidate_pairs(r, y, gamma)
            assert list(zip(a.tolist(), p.tolist())) == exhaustive_candidates(r, y, gamma)


class TestGenerateFamily:
    def test_bisector(self):
        d = SemanticDirection(np.array([0.7071067811865476 - 1.0, 0.7071067811865476]), (0, 1))
        fam = generate_family([1.0, 0.0], d, 1.0, 2)
        np.testing.assert_allclose(fam.latent_cosines(), [0.9238795325112867, 0.7071067811865476], atol=1e-12)

    def test_single_variant_is_partner(self):
        partner = l2_normalize([0.3, 0.9])
        d = SemanticDirection(partner - np.array([1.0, 0.0]), (0, 1))
        fam = generate_family([1.0, 0.0], d, 1.0, 1)
        np.testing.assert_allclose(fam.variants[0], partner, atol=1e-15)

    def test_alpha_zero(self):
        d = SemanticDirection(np.array([-0.5, 0.5]), (0, 1))
        fam = generate_family([1.0, 0.0], d, 0.0, 4)
        np.testing.assert_allclose(fam.latent_cosines(), 1.0)

    def test_strengths(self):
        np.testing.assert_allclose(strengths(1.0, 5), [0.2, 0.4, 0.6, 0.8, 1.0])
        with pytest.raises(ValueError):
            strengths(1.0, 0)

    def test_monotone_random(self):
        rng = np.random.default_rng(2)
        r, _ = normalize_rows(rng.standard_normal((60, 8)))
        fams = generate_families(r, rng.integers(0, 3, 60), 1.0, 5, 0.05)
        assert fams
        for fam in fams:
            assert np.all(np.diff(fam.latent_cosines()) < 0)


class TestProjectFamily:
    def test_identity_projector(self):
        d = SemanticDirection(np.array([-0.5, 0.5, 0.1]), (0, 1))
        fam = project_family(generate_family(l2_normalize([1.0, 0.2, 0.1]), d, 1.0, 3), LinearLayerParams.identity(3))
        expected, _ = normalize_rows(np.maximum(fam.variants, 0.0))
        np.testing.assert_allclose(fam.projected_variants, expected, atol=1e-15)
        assert len(fam.projected_variants) == 3

    def test_random_projector_unit_outputs(self):
        rng = np.random.default_rng(3)
        layer = LinearLayerParams(rng.standard_normal((6, 4)), np.full(6, 0.5))
        d = SemanticDirection(rng.standard_normal(4), (0, 1))
        fam = project_family(generate_family(l2_normalize(rng.standard_normal(4)), d, 1.0, 5), layer)
        np.testing.assert_allclose(np.linalg.norm(fam.projected_variants, axis=1), 1.0, atol=1e-9)
        assert fam.projected_cosines().shape == (5,)


class TestInterpolate:
    def test_matches_generate_family(self):
        rng = np.random.default_rng(4)
        r, _ = normalize_rows(rng.standard_normal((4, 3)))
        v, _ = interpolate(r, np.array([0]), np.array([2]), strengths(1.0, 3))
        fam = generate_family(r[0], SemanticDirection(r[2] - r[0], (0, 2)), 1.0, 3)
        np.testing.assert_allclose(v[0], fam.variants, atol=1e-15)

    def test_backward(self):
        rng = np.random.default_rng(5)
        r = rng.standard_normal((4, 3))
        a, p, t = np.array([0, 1]), np.array([2, 3]), strengths(1.0, 3)
        up = rng.standard_normal((2, 3, 3))
        g = interpolate_backward(up, interpolate(r, a, p, t)[1], 4)
        h = 1e-6
        num = np.zeros_like(r)
        for idx in np.ndindex(r.shape):
            rp, rm = r.copy(), r.copy()
            rp[idx] += h
            rm[idx] -= h
            num[idx] = (np.sum(up * interpolate(rp, a, p, t)[0]) - np.sum(up * interpolate(rm, a, p, t)[0])) / (2 * h)
        np.testing.assert_allclose(g, num, atol=1e-8)
