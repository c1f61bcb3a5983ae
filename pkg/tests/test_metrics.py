import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlpcm.metrics import procrustes_align, sqdist_error_summary, summarize_fit, vi_distance
from mlpcm.types import DimensionError, LatentConfig, ValidationError

from _helpers import random_state


def _rotation(theta, reflect=False):
    r = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    return r @ np.diag([1.0, -1.0]) if reflect else r


def test_procrustes_identity_and_rigid_motion():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 10))
    aligned, resid = procrustes_align(x, x)
    np.testing.assert_allclose(aligned, x, atol=1e-12)
    assert resid < 1e-12
    moved = _rotation(1.1, True) @ x + np.array([[3.0], [-2.0]])
    aligned, resid = procrustes_align(x, moved)
    np.testing.assert_allclose(aligned, x, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 2 * math.pi), st.booleans())
def test_procrustes_residual_invariant_to_source_rotation(seed, theta, reflect):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 8)), rng.normal(size=(2, 8))
    _, r1 = procrustes_align(x, y)
    _, r2 = procrustes_align(x, _rotation(theta, reflect) @ y + 5.0)
    assert r1 == pytest.approx(r2, rel=1e-9, abs=1e-12)
    # never worse than the unrotated, centred source
    centred = y - y.mean(axis=1, keepdims=True) + x.mean(axis=1, keepdims=True)
    assert r1 <= np.linalg.norm(centred - x) + 1e-12


def test_procrustes_shape_error():
    with pytest.raises(DimensionError):
        procrustes_align(np.zeros((2, 3)), np.zeros((2, 4)))


def vi_bruteforce(a, b):
    n = len(a)
    total = 0.0
    for x, y in product(set(a), set(b)):
        nxy = sum(1 for i in range(n) if a[i] == x and b[i] == y)
        if nxy:
            px, py = a.count(x) / n, b.count(y) / n
            pxy = nxy / n
            total -= pxy * (math.log(pxy / px) + math.log(pxy / py))
    return total


def test_vi_example():
    assert vi_distance([1, 1, 2, 2], [1, 2, 1, 2]) == pytest.approx(2 * math.log(2))
    assert vi_distance([0, 0, 1], [5, 5, 9]) == 0.0



@given(st.data())
def test_vi_matches_bruteforce_and_is_a_metric(data):
    n = data.draw(st.integers(1, 20))
    parts = [data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n)) for _ in range(3)]
    a, b, c = parts
    assert vi_distance(a, b) == pytest.approx(vi_bruteforce(a, b), abs=1e-12)
    assert vi_distance(a, b) == pytest.approx(vi_distance(b, a), abs=1e-12)
    assert vi_distance(a, a) == 0.0
    assert vi_distance(a, c) <= vi_distance(a, b) + vi_distance(b, c) + 1e-12
    assert vi_distance(a, b) <= math.log(n) + 1e-12


def test_vi_length_mismatch():
    with pytest.raises(ValidationError):
        vi_distance([0, 1], [0])


def _truth(rng, n):
    u = rng.normal(size=(2, n))
    v = u[:, None, :] + rng.normal(0, 0.3, size=(2, n, n))
    return LatentConfig(1.0, u, v, np.zeros(n, dtype=int), np.zeros((2, 1)), np.ones(1),
                        np.ones(n), np.ones(1))


def test_sqdist_summary_zero_and_loop_oracle():
    rng = np.random.default_rng(3)
    t = _truth(rng, 6)
    assert sqdist_error_summary(t.u, t.v, t) == (0.0, 0.0)
    assert sqdist_error_summary(t.u, None, t, poislpcm=True) == (0.0, 0.0)
    u2 = t.u + rng.normal(0, 0.2, size=t.u.shape)
    v2 = t.v + rng.normal(0, 0.2, size=t.v.shape)
    errs = [abs(np.sum((u2[:, i] - v2[:, i, j]) ** 2) - np.sum((t.u[:, i] - t.v[:, i, j]) ** 2))
            for i in range(6) for j in range(6) if i != j]
    mean, sd = sqdist_error_summary(u2, v2, t)
    assert mean == pytest.approx(np.mean(errs), rel=1e-12)
    assert sd == pytest.approx(np.std(errs), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 2 * math.pi), st.booleans())
def test_sqdist_summary_invariant_to_rigid_motion(seed, theta, reflect):
    rng = np.random.default_rng(seed)
    t = _truth(rng, 5)
    u2 = t.u + rng.normal(0, 0.2, size=t.u.shape)
    v2 = t.v + rng.normal(0, 0.2, size=t.v.shape)
    r, shift = _rotation(theta, reflect), rng.normal(size=(2, 1))
    a = sqdist_error_summary(u2, v2, t)
    b = sqdist_error_summary(r @ u2 + shift, np.einsum("ab,bij->aij", r, v2) + shift[:, :, None], t)
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_sqdist_summary_errors():
    rng = np.random.default_rng(0)
    t = _truth(rng, 4)
    with pytest.raises(ValidationError):
        sqdist_error_summary(t.u, None, t)
    with pytest.raises(DimensionError):
        sqdist_error_summary(t.u[:, :3], t.v, t)


@pytest.mark.parametrize("model", ["mlpcm", "poislpcm"])
def test_summarize_fit_columns(model):
    rng = np.random.default_rng(5)
    s = random_state(rng, 5, 1)
    t = _truth(rng, 5)
    out = summarize_fit(s, t, model).to_dict()
    assert out["vi"] == 0.0
    assert out["eta_rho"] == [s.eta_tilde, s.rho2_tilde]
    if model == "poislpcm":
        assert out["mean_varphi2"] is None and out["mean_gamma_inv"] is None
    else:
        assert out["mean_gamma_inv"][0] == pytest.approx(np.mean(s.b_tilde / s.a_tilde))
