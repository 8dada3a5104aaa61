import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from graphedit.errors import DegenerateEditError, InvalidInputError
from graphedit.graph import CsrGraph, SbmConfig, generate_sbm
from graphedit.theory import (
    binary_kl_from_logits,
    binomial_band,
    edit_gradient,
    fit_logistic,
    locality_compare,
    oversmoothing_check,
    taylor_convergence,
    taylor_locality,
)

TINY = SbmConfig(blocks=2, block_size=25, p_in=0.3, p_out=0.02, dim=8, separation=1.0, seed=0)


def _ce_flipped(z_j, theta, label):
    y = expit(z_j @ theta)
    return -(label * np.log(y) + (1 - label) * np.log(1 - y))


# ---------------------------------------------------------------- edit gradient


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_edit_gradient_is_the_flipped_ce_gradient(seed):
    r = np.random.default_rng(seed)
    z = r.normal(size=(5, 4))
    theta = r.normal(size=4)
    j = 2
    yj = expit(z[j] @ theta)
    flipped = 0.0 if yj > 0.5 else 1.0
    generic = (yj - flipped) * z[j]  # dCE/dtheta for a sigmoid unit
    g = edit_gradient(z, theta, j)
    np.testing.assert_allclose(g, generic, rtol=0, atol=1e-10)
    assert np.linalg.norm(g) == pytest.approx(max(yj, 1 - yj) * np.linalg.norm(z[j]), rel=1e-12)
    # independent finite-difference oracle
    eps = 1e-6
    num = np.array([(_ce_flipped(z[j], theta + eps * e, flipped) - _ce_flipped(z[j], theta - eps * e, flipped))
                    / (2 * eps) for e in np.eye(4)])
    np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-8)


def test_edit_gradient_degenerate():
    z = np.array([[1.0, 2.0]])
    with pytest.raises(DegenerateEditError):
        edit_gradient(z, np.zeros(2), 0)


# ---------------------------------------------------------------- KL and Taylor


def test_binary_kl_oracle_and_nonnegativity(rng):
    s_old, s_new = rng.normal(size=50), rng.normal(size=50)
    p, q = expit(s_new), expit(s_old)
    oracle = p * np.log(p / q) + (1 - p) * np.log((1 - p) / (1 - q))
    np.testing.assert_allclose(binary_kl_from_logits(s_new, s_old), oracle, atol=1e-13)
    assert np.all(binary_kl_from_logits(s_new, s_old) >= 0)
    assert np.all(binary_kl_from_logits(s_old, s_old) == 0)


def test_zero_step_gives_zero_locality(rng):
    x = rng.normal(size=(10, 3))
    rep = taylor_locality("mlp", x, rng.normal(size=3), np.arange(6), 8, 0.0)
    assert rep.exact == 0.0 and rep.taylor == 0.0 and np.isnan(rep.ratio)


def test_orthogonal_update_gives_zero_kl():
    # train rows orthogonal to the edited node's features: the update leaves their logits unchanged
    x = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, -1.0, 0.5], [0.0, 0.0, 3.0]])
    x[3] = [1.0, 0.0, 0.0]
    x[0] = [0.0, 1.0, 1.0]
    rep = taylor_locality("mlp", x, np.array([0.7, 0.2, -0.3]), [0, 1, 2], 3, 0.5)
    assert np.any(rep.delta != 0)
    assert rep.exact == 0.0 and rep.taylor == 0.0


def test_gcn_variant_needs_adjacency(rng):
    with pytest.raises(InvalidInputError):
        taylor_locality("gcn", rng.normal(size=(4, 2)), np.ones(2), [0, 1], 3, 0.1)
    with pytest.raises(InvalidInputError):
        taylor_locality("gat", rng.normal(size=(4, 2)), np.ones(2), [0, 1], 3, 0.1)


def test_taylor_matches_exact_hand_case():
    # single train node, scalar feature: exact KL vs 1/2 y(1-y) d^2
    x = np.array([[1.0], [2.0]])
    theta = np.array([0.3])
    rep = taylor_locality("mlp", x, theta, [0], 1, 1e-3)
    y0 = expit(0.3)
    d = -1e-3 * max(expit(0.6), 1 - expit(0.6)) * 2.0  # yhat_j > 0.5 so the flip pushes theta down
    assert rep.delta[0] == pytest.approx(d, rel=1e-12)
    assert rep.taylor == pytest.approx(0.5 * y0 * (1 - y0) * d * d, rel=1e-12)
    assert rep.taylor_unhalved == pytest.approx(2 * rep.taylor, rel=1e-15)
    assert rep.ratio == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("variant", ["mlp", "gcn"])
def test_taylor_ratio_converges(variant):
    reps = taylor_convergence(TINY, variant)
    errs = [abs(r.ratio - 1) for r in reps]
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] <= 0.05
    for r, norm in zip(reps, (1e-2, 1e-3, 1e-4)):
        assert np.linalg.norm(r.delta) == pytest.approx(norm, rel=1e-12)
        assert r.exact >= 0 and r.taylor > 0


# ---------------------------------------------------------------- over-smoothing


def _complete(n):
    src, dst = np.triu_indices(n, 1)
    return CsrGraph.from_edges(n, src, dst)


def test_complete_graph_is_tight(rng):
    x = rng.normal(size=(6, 3))
    chk = oversmoothing_check(_complete(6), x)
    assert chk.components == 1
    assert chk.lam == pytest.approx(0.0, abs=1e-12)
    assert chk.d_ax == pytest.approx(0.0, abs=1e-12)
    assert chk.slack == pytest.approx(0.0, abs=1e-12)
    ax = _complete(6).propagate(x)
    np.testing.assert_allclose(ax, np.tile(x.mean(0), (6, 1)), atol=1e-12)


def test_two_cliques_have_two_components(rng):
    s1, d1 = np.triu_indices(4, 1)
    g = CsrGraph.from_edges(8, np.r_[s1, s1 + 4], np.r_[d1, d1 + 4])
    chk = oversmoothing_check(g, rng.normal(size=(8, 2)))
    assert chk.components == 2
    assert chk.d_ax == pytest.approx(0.0, abs=1e-12)


def test_path_graph_inequality_is_strict(rng):
    n = 10
    g = CsrGraph.from_edges(n, np.arange(n - 1), np.arange(1, n))
    chk = oversmoothing_check(g, rng.normal(size=(n, 3)))
    assert chk.components == 1 and 0 < chk.lam < 1
    assert chk.d_ax <= chk.lam * chk.d_x + 1e-12
    assert chk.d_ax < chk.d_x


def test_oversmoothing_size_limit():
    g = CsrGraph.from_edges(2001, [0], [1])
    with pytest.raises(InvalidInputError):
        oversmoothing_check(g, np.zeros((2001, 1)))


# ---------------------------------------------------------------- logistic fit and comparison


def test_fit_logistic_stationarity(rng):
    z = rng.normal(size=(40, 3))
    y = (z[:, 0] + 0.3 * rng.normal(size=40) > 0).astype(float)
    th = fit_logistic(z, y, l2=0.1)
    grad = z.T @ (expit(z @ th) - y) / 40 + 0.1 * th
    assert np.max(np.abs(grad)) < 1e-8


def test_locality_compare_table_and_determinism(tmp_path):
    a = locality_compare(TINY, n_trials=6, seed=3)
    b = locality_compare(TINY, n_trials=6, seed=3)
    assert len(a.rows) + a.skipped == 6
    assert [r.__dict__ for r in a.rows] == [r.__dict__ for r in b.rows]
    assert a.win_rate == np.mean([r.gcn_wins for r in a.rows])
    for r in a.rows:
        assert r.gcn_wins == (r.kl_gcn > r.kl_mlp)
    path = tmp_path / "t.csv"
    a.write_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["trial", "seed", "kl_gcn", "kl_mlp", "taylor_gcn", "taylor_mlp", "ip_sum_gcn", "ip_sum_mlp",
                       "gcn_wins"]
    assert len(rows) == 1 + len(a.rows)


def test_locality_compare_needs_binary_sbm():
    with pytest.raises(InvalidInputError):
        locality_compare(SbmConfig(3, 10, 0.3, 0.1, 4, 1.0, seed=0), n_trials=1)


def test_binomial_band():
    lo, hi = binomial_band(100)
    assert lo < 0.5 < hi
    assert (lo, hi) == (0.4, 0.6)


def test_generate_sbm_null_model_has_no_signal():
    g, d = generate_sbm(SbmConfig(2, 30, 0.1, 0.1, 4, 0.0, seed=0))
    assert g.n == 60 and np.all(np.isfinite(d.x))
