import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from evtta.losses import (
    PROB_FLOOR,
    consistency_vote,
    entropy,
    entropy_grad,
    gaussian_entropy,
    gaussian_entropy_grad,
    gaussian_similarity_grad,
    gaussian_similarity_loss,
    gaussian_symmetric_kl,
    gaussian_symmetric_kl_grad,
    prediction_similarity_grad,
    prediction_similarity_loss,
    selective_entropy_grad,
    selective_entropy_loss,
    strict_majority,
    symmetric_kl,
    symmetric_kl_grad,
    variance_consistency,
)

mpmath.mp.dps = 50


def mp_skl(p, q, floor=PROB_FLOOR):
    total = mpmath.mpf(0)
    for a, b in zip(p, q):
        a, b = max(mpmath.mpf(a), floor), max(mpmath.mpf(b), floor)
        total += a * mpmath.log(a / b) + b * mpmath.log(b / a)
    return total


def prob_vectors(c=st.integers(2, 6)):
    @st.composite
    def draw(d):
        n = d(c)
        w = d(arrays(np.float64, n, elements=st.floats(0, 1)))
        if w.sum() == 0:
            w[0] = 1
        return w / w.sum()

    return draw()


def softmax_rows(rng, k, c, scale=2.0):
    z = rng.normal(scale=scale, size=(k, c))
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


# entropy ---------------------------------------------------------------------


def test_entropy_examples():
    assert entropy([0, 1, 0]) == 0
    assert entropy(np.full(4, 0.25)) == pytest.approx(math.log(4))
    assert entropy([0.5, 0.25, 0.25]) == pytest.approx(1.5 * math.log(2), rel=1e-15)
    assert 1.5 * math.log(2) == pytest.approx(1.0397, abs=1e-4)


def test_entropy_errors():
    with pytest.raises(ValueError):
        entropy([1.2, -0.2])
    with pytest.raises(ValueError):
        entropy([0.5, 0.4])


@given(prob_vectors())
def test_entropy_bounds(p):
    h = entropy(p)
    assert -1e-12 <= h <= math.log(len(p)) + 1e-12


# symmetric KL ------------------------------------------------------------------


def test_skl_examples():
    p = np.array([0.2, 0.3, 0.5])
    assert symmetric_kl(p, p) == 0
    assert symmetric_kl([1, 0], [0.5, 0.5]) == pytest.approx(float(mp_skl([1, 0], [0.5, 0.5])), rel=1e-12)
    with pytest.raises(ValueError):
        symmetric_kl([0.5, 0.5], [0.2, 0.3, 0.5])


@given(prob_vectors(st.just(4)), prob_vectors(st.just(4)))
def test_skl_matches_mpmath_and_is_symmetric(p, q):
    v = symmetric_kl(p, q)
    assert v >= 0
    assert v == symmetric_kl(q, p)
    assert v == pytest.approx(float(mp_skl(p, q)), rel=1e-9, abs=1e-12)


def test_skl_grad_finite_differences():
    rng = np.random.default_rng(0)
    p, q = softmax_rows(rng, 2, 5)
    gp, gq = symmetric_kl_grad(p, q)
    h = 1e-6
    for i in range(5):
        e = np.zeros(5)
        e[i] = h
        assert gp[i] == pytest.approx((symmetric_kl(p + e, q) - symmetric_kl(p - e, q)) / (2 * h), rel=1e-5)
        assert gq[i] == pytest.approx((symmetric_kl(p, q + e) - symmetric_kl(p, q - e)) / (2 * h), rel=1e-5)


# prediction similarity -------------------------------------------------------------


def test_ps_examples():
    rng = np.random.default_rng(1)
    p = softmax_rows(rng, 1, 5)[0]
    assert prediction_similarity_loss(np.stack([p] * 4)) == 0
    a, b = softmax_rows(rng, 2, 5)
    assert prediction_similarity_loss([a, b]) == pytest.approx(0.5 * symmetric_kl(a, b))
    with pytest.raises(ValueError):
        prediction_similarity_loss([a])


def test_ps_k3_matches_mpmath():
    probs = [[0.7, 0.2, 0.1], [0.1, 0.6, 0.3], [0.0, 0.5, 0.5]]
    ref = (mp_skl(probs[0], probs[1]) + mp_skl(probs[0], probs[2])) / 2
    assert prediction_similarity_loss(probs) == pytest.approx(float(ref), rel=1e-12)
    ref1 = (mp_skl(probs[1], probs[0]) + mp_skl(probs[1], probs[2])) / 2
    assert prediction_similarity_loss(probs, anchor_index=1) == pytest.approx(float(ref1), rel=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.integers(2, 6))
def test_ps_nonnegative_and_zero_iff_equal(seed, k, c):
    rng = np.random.default_rng(seed)
    probs = softmax_rows(rng, k, c)
    anchor = int(rng.integers(k))
    assert prediction_similarity_loss(probs, anchor) > 0
    same = np.repeat(probs[:1], k, axis=0)
    assert prediction_similarity_loss(same, anchor) == 0


def test_ps_grad_finite_differences():
    rng = np.random.default_rng(2)
    probs = softmax_rows(rng, 4, 5)
    for anchor in range(4):
        g = prediction_similarity_grad(probs, anchor)
        h = 1e-6
        for idx in np.ndindex(probs.shape):
            e = np.zeros_like(probs)
            e[idx] = h
            fd = (prediction_similarity_loss(probs + e, anchor) - prediction_similarity_loss(probs - e, anchor)) / (2 * h)
            assert g[idx] == pytest.approx(fd, rel=1e-5, abs=1e-8)


# votes -----------------------------------------------------------------------


def onehot_rows(votes, c=4):
    out = np.full((len(votes), c), 0.1 / (c - 1))
    out[np.arange(len(votes)), votes] = 0.9
    return out


def test_vote_examples():
    assert consistency_vote(onehot_rows([2, 2, 2, 2])).consistent
    r = consistency_vote(onehot_rows([0, 1, 1, 2]))
    assert r.majority == 1 and not r.consistent
    tie = consistency_vote(onehot_rows([1, 1, 2]))
    assert tie.majority is None and not tie.consistent


def test_strict_majority():
    assert strict_majority([3, 3, 1]) == 3
    assert strict_majority([3, 1]) is None
    assert strict_majority([]) is None


@given(st.integers(0, 2**32 - 1), st.integers(2, 6))
def test_shared_argmax_is_consistent_for_every_anchor(seed, k):
    rng = np.random.default_rng(seed)
    probs = softmax_rows(rng, k, 5)
    probs[:, 3] += 5
    probs /= probs.sum(axis=1, keepdims=True)
    assert all(consistency_vote(probs, a).consistent for a in range(k))


# selective entropy ---------------------------------------------------------------


def test_selective_entropy_examples():
    yes = consistency_vote(onehot_rows([1, 1, 1]))
    no = consistency_vote(onehot_rows([0, 1, 1]))
    assert selective_entropy_loss([0, 1, 0], yes) == 0
    assert selective_entropy_loss([0.2, 0.3, 0.5], no, "ignore") == 0
    assert not selective_entropy_grad([0.2, 0.3, 0.5], no, "ignore").any()
    assert selective_entropy_loss(np.full(3, 1 / 3), no, "maximize") == pytest.approx(-math.log(3))
    p = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(selective_entropy_grad(p, no, "maximize"), -entropy_grad(p))


@given(prob_vectors(st.just(5)), st.booleans())
def test_selective_entropy_range(p, agree):
    vote = consistency_vote(onehot_rows([1, 1, 1] if agree else [0, 1, 1], c=5))
    v = selective_entropy_loss(p, vote)
    assert 0 <= v <= math.log(5) + 1e-12


# Gaussian variants ---------------------------------------------------------------


def test_gaussian_skl_examples():
    assert gaussian_symmetric_kl((0.3, 1.7), (0.3, 1.7)) == pytest.approx(1.0)
    assert gaussian_symmetric_kl((0, 1), (1, 1)) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        gaussian_symmetric_kl((0, 0), (0, 1))


def test_gaussian_skl_is_true_symmetric_kl_plus_one():
    m1, s1, m2, s2 = map(mpmath.mpf, ("0.4", "1.3", "-0.2", "0.7"))
    kl = lambda ma, sa, mb, sb: mpmath.log(sb / sa) + (sa ** 2 + (ma - mb) ** 2) / (2 * sb ** 2) - mpmath.mpf(1) / 2
    true = kl(m1, s1, m2, s2) + kl(m2, s2, m1, s1)
    assert gaussian_symmetric_kl((0.4, 1.3), (-0.2, 0.7)) == pytest.approx(float(true + 1), rel=1e-12)


def test_gaussian_skl_grad_finite_differences():
    rng = np.random.default_rng(3)
    h = 1e-6
    for _ in range(20):
        x = np.array([rng.normal(), rng.uniform(0.3, 2), rng.normal(), rng.uniform(0.3, 2)])
        f = lambda v: gaussian_symmetric_kl(v[:2], v[2:])
        g1, gk = gaussian_symmetric_kl_grad(x[:2], x[2:])
        g = np.concatenate([g1, gk])
        for i in range(4):
            e = np.zeros(4)
            e[i] = h
            fd = (f(x + e) - f(x - e)) / (2 * h)
            assert abs(g[i] - fd) <= 1e-4 * max(abs(fd), 1e-3)


def test_gaussian_entropy_examples():
    assert gaussian_entropy((0, 1)) == pytest.approx(1.41894, abs=1e-5)
    assert gaussian_entropy((5, math.e)) == pytest.approx(2.41894, abs=1e-5)
    assert gaussian_entropy((-3, 0.4)) == gaussian_entropy((9, 0.4))
    with pytest.raises(ValueError):
        gaussian_entropy((0, -1))
    assert gaussian_entropy_grad((0, 0.5))[1] == 2.0


def test_variance_consistency_examples():
    assert variance_consistency([(0, 1), (1, 1), (2, 1)])
    assert not variance_consistency([(0, 10), (0, 1)])
    assert variance_consistency([(0, math.sqrt(10)), (0, 1)])
    assert variance_consistency([(0, 1), (0, math.sqrt(10))])
    assert not variance_consistency([(0, 3.17), (0, 1)])


def test_gaussian_similarity_constant_for_identical_outputs():
    outs = np.tile([0.2, 0.9], (4, 1))
    assert gaussian_similarity_loss(outs) == pytest.approx(1.5)
    np.testing.assert_allclose(gaussian_similarity_grad(outs), 0, atol=1e-12)


def test_gaussian_similarity_grad_finite_differences():
    rng = np.random.default_rng(4)
    outs = np.column_stack([rng.normal(size=4), rng.uniform(0.5, 2, size=4)])
    g = gaussian_similarity_grad(outs, anchor_index=2)
    h = 1e-6
    for idx in np.ndindex(outs.shape):
        e = np.zeros_like(outs)
        e[idx] = h
        fd = (gaussian_similarity_loss(outs + e, 2) - gaussian_similarity_loss(outs - e, 2)) / (2 * h)
        assert g[idx] == pytest.approx(fd, rel=1e-5, abs=1e-8)
