import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from grouploss import learning as lr
from grouploss import objectives as ob
from grouploss import oracle, problems
from grouploss.core import ContractViolation, LinearOptimizer


def cell_stats():
    p = np.full((2, 2), 0.25)
    p[0, 0] = 0.5
    return ob.GroupStats(p)


def test_signed_weight_examples():
    st_ = cell_stats()
    w = np.array([2.0, 0, 0, 0])
    assert lr.signed_weight([1, 0], 0, w, st_) == (pytest.approx(1.0), pytest.approx(4.0))
    assert lr.signed_weight([0, 0], 0, w, st_)[0] == 0.0
    assert lr.signed_weight([1, 0], 0, -w, st_) == (pytest.approx(-1.0), pytest.approx(4.0))
    with pytest.raises(ValueError):
        lr.signed_weight([1, 0], 0, np.zeros(4), st_)


def test_flip_examples():
    ys = np.array([0, 1] * 50_000)
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(lr.flip_labels(ys, np.ones(len(ys)), rng), ys)
    np.testing.assert_array_equal(lr.flip_labels(ys, -np.ones(len(ys)), rng), 1 - ys)
    y0 = lr.flip_labels(ys, np.zeros(len(ys)), rng)
    # uninformative: y' independent of y
    assert abs(y0[ys == 0].mean() - 0.5) < 0.01 and abs(y0[ys == 1].mean() - 0.5) < 0.01
    with pytest.raises(ValueError):
        lr.flip_labels([1], [1.5], rng)


@pytest.mark.parametrize("s", [-1.0, -0.5, 0.0, 0.5, 1.0])
def test_flip_rate_within_binomial_band(s):
    n = 100_000
    ys = np.random.default_rng(1).integers(0, 2, n)
    kept = np.mean(lr.flip_labels(ys, np.full(n, s), 7) == ys)
    p = (1 + s) / 2
    assert abs(kept - p) <= 3 * math.sqrt(p * (1 - p) / n) + 1e-12


def test_flip_is_seed_deterministic():
    ys = np.arange(1000) % 2
    s = np.linspace(-1, 1, 1000)
    np.testing.assert_array_equal(lr.flip_labels(ys, s, 3), lr.flip_labels(ys, s, 3))


def random_testbed(rng, n_x=6, H=10):
    """Two overlapping groups over ``n_x`` feature ids, x-measurable hypotheses."""
    xs = np.repeat(np.arange(n_x), 2)
    ys = np.tile([0, 1], n_x)
    probs = rng.dirichlet(np.ones(2 * n_x))
    groups = np.zeros((2, n_x), bool)
    groups[0, : n_x // 2 + 1] = True
    groups[1, n_x // 2 - 1:] = True
    tables = rng.integers(0, 2, size=(H, n_x))
    tables[0] = 0
    tables[1] = 1
    return problems.FiniteClassificationTestbed(xs, ys, probs, tables[:, xs], groups)


def test_error_difference_identity_exact(rng):
    tb = random_testbed(rng)
    L = tb.erm_learner()
    xs, ys, pr = tb.exact()
    for _ in range(5):
        w = rng.normal(size=4)
        s, W = lr.signed_weights(tb.membership(xs), ys, w, tb.stats)
        fx, fy, fp = lr.flipped_distribution(xs, ys, pr, s)
        err = {h: fp @ (L.predict(h, fx) != fy) for h in L.handles}
        sl = {h: pr @ (s * np.abs(L.predict(h, xs) - ys)) for h in L.handles}
        for a in L.handles:
            assert W * sl[a] == pytest.approx(w @ tb.rate_matrix[a], abs=1e-12)
            for b in L.handles:
                assert err[a] - err[b] == pytest.approx(sl[a] - sl[b], abs=1e-12)


def test_flipping_keeps_feature_marginal(rng):
    tb = random_testbed(rng)
    xs, ys, pr = tb.exact()
    s, _ = lr.signed_weights(tb.membership(xs), ys, rng.normal(size=4), tb.stats)
    fx, _, fp = lr.flipped_distribution(xs, ys, pr, s)
    np.testing.assert_allclose(np.bincount(fx, fp), np.bincount(xs, pr), atol=1e-15)


def test_optimizer_zero_weight_and_fpr_only(rng):
    tb = random_testbed(rng)
    L = tb.erm_learner()
    assert lr.classification_linear_optimizer(np.zeros(4), tb.stats, L, tb, 0.0, 0.1, 0) in L.handles
    # only FPR of group 0 costs anything: the all-zero classifier is optimal
    h = lr.classification_linear_optimizer([1.0, 0, 0, 0], tb.stats, L, tb, 0.0, 0.1, 0, exact=True)
    assert tb.rate_matrix[h][0] == 0.0


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_exact_optimizer_is_exact_argmin(seed):
    rng = np.random.default_rng(seed)
    tb = random_testbed(rng, H=2)
    L = tb.erm_learner()
    w = rng.normal(size=4)
    h = lr.classification_linear_optimizer(w, tb.stats, L, tb, 0.0, 0.1, 0, exact=True)
    assert w @ tb.rate_matrix[h] <= (tb.rate_matrix[tb.legal_indices] @ w).min() + 1e-12


def test_sampled_optimizer_within_tau():
    tb = problems.make_loan_example()
    L = tb.erm_learner()
    tau = 0.1
    w = np.array([1.0, -0.5, 0.3, 0.8])
    rates = tb.rate_matrix[tb.legal_indices]
    for seed in range(3):
        h = lr.classification_linear_optimizer(w, tb.stats, L, tb, tau, 0.05, seed)
        assert w @ tb.rate_matrix[h] <= (rates @ w).min() + tau * np.linalg.norm(w)


def test_estimate_rates_examples():
    tb = problems.make_loan_example()
    L = problems.FiniteFamilyLearner if False else tb.erm_learner()
    xs, ys, pr = tb.exact()
    memb = tb.membership(xs)
    accept_all = tb.names.index("accept_all")
    np.testing.assert_allclose(lr.estimate_rates(accept_all, xs, ys, memb, L), [1, 1, 0, 0])
    for h in L.handles:
        np.testing.assert_allclose(lr.estimate_rates(h, xs, ys, memb, L, pr), tb.rate_matrix[h],
                                   atol=1e-15)
    # a perfect classifier on a separable sample
    perfect = lr.FiniteFamilyLearner([[0, 1, 0, 1]])
    rates = lr.estimate_rates(0, [0, 1, 2, 3], [0, 1, 0, 1], [[1, 1, 0, 0], [0, 0, 1, 1]], perfect)
    np.testing.assert_allclose(rates, 0)


def test_estimate_rates_names_empty_cell():
    L = lr.FiniteFamilyLearner([[0, 1]])
    with pytest.raises(lr.InsufficientData, match=r"group 1, y=1"):
        lr.estimate_rates(0, [0, 1, 0], [0, 1, 0], [[1, 1, 1], [1, 0, 1]], L)


def test_sample_sizes_grow_as_expected():
    assert lr.rate_sample_size(0.1, 0.05, 0.25, 4) > lr.rate_sample_size(0.2, 0.05, 0.25, 4)
    L = lr.FiniteFamilyLearner(np.eye(3, dtype=int))
    assert L.sample_size(0.1, 0.05) == math.ceil(2 * math.log(2 * 3 / 0.05) / 0.01)


def test_group_fair_classify_single_group_error(rng):
    # K=1 and f = ERR: reduces to plain weighted ERM
    n_x = 5
    xs = np.repeat(np.arange(n_x), 2)
    ys = np.tile([0, 1], n_x)
    probs = rng.dirichlet(np.ones(2 * n_x))
    tables = rng.integers(0, 2, size=(8, n_x))
    tb = problems.FiniteClassificationTestbed(xs, ys, probs, tables[:, xs], np.ones((1, n_x), bool))
    st_ = tb.stats
    f = ob.linear([st_.p0[0], st_.p1[0]])
    L = tb.erm_learner()
    run = lr.group_fair_classify(f, f.lipschitz, 0.2, 0.1, L, tb, st_, exact=True,
                                 reachable=tb.rate_matrix[tb.legal_indices])
    value = sum(w * f(tb.rate_matrix[c]) for w, c in run.mixture.atoms)
    direct = L.fit(xs, ys, probs)
    assert value <= f(tb.rate_matrix[direct]) + 0.2


def test_group_fair_classify_folded_constraint(rng):
    # minimize error subject to false-positive mass <= cap via Gamma = (R + eps) / cap
    n_x = 6
    xs = np.repeat(np.arange(n_x), 2)
    ys = np.tile([0, 1], n_x)
    tables = rng.integers(0, 2, size=(6, n_x))
    tb = problems.FiniteClassificationTestbed(xs, ys, rng.dirichlet(np.ones(2 * n_x)),
                                              tables[:, xs], np.ones((1, n_x), bool))
    st_ = tb.stats
    err = ob.linear(np.concatenate([st_.p0, st_.p1]))
    fp = ob.false_positive_mass(st_)
    eps, cap = 0.5, 0.2
    gamma = ob.fold_gamma(1.0, eps, cap)
    f = ob.fold_constraint(err, ob.ObjectiveSpec(lambda l: fp(l) - cap, fp.subgradient,
                                                 fp.lipschitz, True), gamma)
    rates = tb.rate_matrix[tb.legal_indices]
    run = lr.group_fair_classify(f, f.lipschitz, eps, 0.1, tb.erm_learner(), tb, st_, exact=True,
                                 reachable=rates)
    l = sum(w * tb.rate_matrix[c] for w, c in run.mixture.atoms)
    opt, _ = oracle.brute_force_min(f, rates, 0.01)
    assert f(l) <= opt + eps
    assert fp(l) - cap <= (eps + 1.0) / gamma + 1e-12


@pytest.mark.xfail(run=False, strict=True,
                   reason="Lipschitz constant of the folded loan objective is ~242; running at "
                          "epsilon/L is far beyond any feasible grid (see notes)")
def test_loan_classify_within_epsilon_of_oracle():
    tb = problems.make_loan_example()
    f = problems.loan_objective(tb)
    run = lr.group_fair_classify(f, f.lipschitz, 0.05, 0.1, tb.erm_learner(), tb, tb.stats,
                                 exact=True, reachable=tb.rate_matrix[tb.legal_indices])
    l = sum(w * tb.rate_matrix[c] for w, c in run.mixture.atoms)
    assert f(l) <= oracle.brute_force_min(f, tb.rate_matrix[tb.legal_indices], 0.01)[0] + 0.05


# stumps and csv


def test_stump_learner_matches_brute_force(rng):
    X = rng.integers(0, 4, size=(12, 2)).astype(float)
    L = lr.StumpLearner(X)
    xs = np.arange(12)
    ys = rng.integers(0, 2, 12)
    w = rng.uniform(size=12)
    best = min(w @ (L.predict((j, t, p), xs) != ys)
               for j in range(2) for t in list(np.unique(X[:, j])) + [math.inf] for p in (0, 1))
    h = L.fit(xs, ys, w)
    assert w @ (L.predict(h, xs) != ys) == pytest.approx(best)


def test_csv_source(tmp_path):
    path = tmp_path / "d.csv"
    rows = ["f0,f1,label,g0,g1", "0.1,1,0,1,0", "0.9,0,1,1,0", "0.2,1,0,0,1", "0.8,0,1,0,1"]
    path.write_text("\n".join(rows) + "\n")
    src = lr.CsvSource(path, K=2)
    np.testing.assert_allclose(src.stats().p, 0.25)
    L = src.learner()
    xs, ys, pr = src.exact()
    h = L.fit(xs, ys, pr)
    np.testing.assert_array_equal(L.predict(h, xs), ys)
    w = np.array([1.0, 1.0, 1.0, 1.0])
    h = lr.classification_linear_optimizer(w, src.stats(), L, src, 0.0, 0.1, 0, exact=True)
    np.testing.assert_allclose(lr.estimate_rates(h, xs, ys, src.membership(xs), L, pr), 0)
    path.write_text("a,label,g0\n0.1,2,1\n")
    with pytest.raises(ValueError, match="0/1"):
        lr.CsvSource(path, K=1)


# regression


def threshold_family(n_x):
    return lr.FiniteFamilyLearner(np.array([(np.arange(n_x) >= t).astype(int) for t in range(n_x + 1)]))


def random_regression(rng, n_x=6, groups=None):
    xs = np.arange(n_x)
    return lr.ExactRegressionDistribution(xs, rng.uniform(-1, 1, n_x), rng.dirichlet(np.ones(n_x)),
                                          rng.uniform(0, 1, n_x), groups)


def test_flip_probability_example_and_range():
    assert lr.flip_probability(1.0, 1.0, 0.0, 1.0) == pytest.approx(0.75)
    with pytest.raises(ContractViolation):
        lr.flip_probability(1.0, 1.0, -2.5, 1.0)


def test_zero_weights_anything_goes(rng):
    d = lr.ExactRegressionDistribution(np.arange(4), rng.uniform(-1, 1, 4), np.full(4, 0.25),
                                       np.zeros(4))
    h = lr.classy_regression(threshold_family(4), d, 0.2, 1.0)
    assert d.weighted_error(h.predict(d.xs)) == 0.0


def test_constant_classifier_recovers_half():
    d = lr.ExactRegressionDistribution(np.arange(3), np.full(3, 0.5), np.full(3, 1 / 3))
    h = lr.classy_regression(lr.FiniteFamilyLearner([[1, 1, 1]]), d, 0.05, 1.0)
    assert d.weighted_error(h.predict(d.xs)) <= 0.05
    assert h.predict([0])[0] == pytest.approx(0.5, abs=0.05)


def test_predictor_bound_enforced():
    with pytest.raises(ValueError):
        lr.LinearCombinationPredictor(((0.7, 0), (-0.6, 1)), 1.0)


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 1.0, 2.0]))
@settings(max_examples=25, deadline=None)
def test_monotone_progress_bound(seed, B):
    rng = np.random.default_rng(seed)
    d = random_regression(rng)
    L = threshold_family(6)
    res = lr.solve_classy_regression(L, d, 0.3, B, T=150)
    opt, _, gap = oracle.regression_oracle(L.tables[:, d.xs], d.ys, d.probs * d.ws, B)
    h_sum = np.zeros(len(d.xs))
    prev = 0.0
    coef_abs = 0.0
    for t, (a, c) in enumerate(res.steps, start=1):
        h_sum += a * L.predict(c, d.xs)
        coef_abs += abs(a)
        h = h_sum / t
        assert np.all(np.abs(h) <= B + 1e-12)
        assert coef_abs / t <= B + 1e-12
        cur = d.weighted_error(h)
        assert t * cur <= (t - 1) * prev + opt + 6 * B ** 2 / t + 1e-9
        prev = cur


def test_exact_mode_error_within_epsilon(rng):
    for _ in range(3):
        d = random_regression(rng)
        L = threshold_family(6)
        h = lr.classy_regression(L, d, 0.05, 1.0)
        opt, _, _ = oracle.regression_oracle(L.tables[:, d.xs], d.ys, d.probs * d.ws, 1.0)
        assert d.weighted_error(h.predict(d.xs)) <= opt + 0.05


def test_sampling_mode(rng):
    d = random_regression(rng)
    L = threshold_family(6)
    idx = rng.choice(6, size=300_000, p=d.probs)
    sample = lr.RegressionSample(idx, d.ys[idx], d.ws[idx])
    h = lr.classy_regression(L, sample, 0.2, 1.0, seed=1)
    opt, _, _ = oracle.regression_oracle(L.tables[:, d.xs], d.ys, d.probs * d.ws, 1.0)
    assert d.weighted_error(h.predict(d.xs)) <= opt + 0.2
    again = lr.classy_regression(L, sample, 0.2, 1.0, seed=1)
    assert again == h
    with pytest.raises(lr.InsufficientData):
        lr.classy_regression(L, lr.RegressionSample(idx[:100], d.ys[idx[:100]]), 0.2, 1.0)


def test_regression_input_validation():
    with pytest.raises(ValueError):
        lr.ExactRegressionDistribution([0], [1.5], [1.0])
    with pytest.raises(ValueError):
        lr.classy_regression(threshold_family(1), lr.ExactRegressionDistribution([0], [0.5], [1.0]),
                             1.5, 1.0)


def two_groups(rng, n_x=8):
    g = np.array([np.arange(n_x) < n_x // 2, np.arange(n_x) >= n_x // 2])
    xs = np.arange(n_x)
    d = lr.ExactRegressionDistribution(xs, rng.uniform(-1, 1, n_x), rng.dirichlet(np.ones(n_x)),
                                       None, g)
    return d, threshold_family(n_x)


def test_group_regress_single_group_matches_direct(rng):
    d = random_regression(rng, groups=np.ones((1, 6), bool)).reweighted(np.ones(6))
    L = threshold_family(6)
    f = ob.linear([1.0])
    run = lr.group_fair_regress(f, 1.0, 0.5, 0.1, 1.0, L, d, inner_epsilon=0.05)
    got = sum(w * lr.group_squared_errors(h, d)[0] for w, h in run.mixture.atoms)
    direct = d.weighted_error(lr.classy_regression(L, d, 0.05, 1.0).predict(d.xs))
    assert abs(got - direct) <= 0.5


def test_group_regress_sum_matches_uniform_weights(rng):
    d, L = two_groups(rng)
    pk = d.group_probs()
    f = ob.linear([1.0, 1.0])
    run = lr.group_fair_regress(f, f.lipschitz, 2.0, 0.1, 1.0, L, d, inner_epsilon=0.2)
    got = sum(w * lr.group_squared_errors(h, d).sum() for w, h in run.mixture.atoms)
    s = (1 / pk) @ d.groups / (1 / pk).sum()
    h = lr.classy_regression(L, d.reweighted(s), 0.05, 1.0)
    direct = lr.group_squared_errors(h, d).sum()
    assert abs(got - direct) <= 2.0


@pytest.mark.slow
def test_group_regress_max_within_epsilon(rng):
    d, L = two_groups(rng)
    pk = d.group_probs()
    lower = -math.inf
    for lam in np.linspace(0, 1, 101):
        mass = d.probs * ((np.array([lam, 1 - lam]) / pk) @ d.groups)
        v, _, gap = oracle.regression_oracle(L.tables[:, d.xs], d.ys, mass, 1.0)
        lower = max(lower, v - gap)
    run = lr.group_fair_regress(ob.max_loss(2), 1.0, 1.0, 0.1, 1.0, L, d, inner_epsilon=0.5)
    got = max(sum(w * lr.group_squared_errors(h, d) for w, h in run.mixture.atoms))
    assert got <= lower + 1.0


def test_group_regress_requires_groups(rng):
    with pytest.raises(ValueError):
        lr.group_fair_regress(ob.max_loss(1), 1.0, 0.5, 0.1, 1.0, threshold_family(6),
                              random_regression(rng))


def test_nonnegative_regression_optimizer_rejects_decreasing(rng):
    d, L = two_groups(rng)
    with pytest.raises(ContractViolation):
        lr.group_fair_regress(ob.linear([-1.0, 1.0]), 1.0, 2.0, 0.1, 1.0, L, d)
