import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fragile_nets.core import DensitySpec, InteractionFn, TypedNetwork, clustered_kernel, uniform_kernel
from fragile_nets.errors import InsufficientDataError, NoConvergenceError, ValidationError
from fragile_nets.fragility import (
    DensityRow, FragilityInput, Trend, Verdict, classify, closed_components, conditional_cdf, estimate_cz,
    log_pf_eigenvalue, scan_ratios, series_diagnostic,
)

LOG = InteractionFn("log")


def single(C=1.0):
    return TypedNetwork(("x",), [1.0], [C], [[1.0]])


def uniform(a, lo=0.0):
    return DensitySpec("uniform", {"lo": lo, "hi": a})


def two_type_net(kappa, C=(1.5, 0.3)):
    return TypedNetwork(("a", "b"), [0.5, 0.5], list(C), kappa)


def test_uniform_cz_exact():
    for a in (0.5, 1.0, 2.0):
        inp = FragilityInput([uniform(a)], [1.0], LOG, single())
        c, z, cu, zu = estimate_cz(inp)
        assert c[0] == pytest.approx(1 / a, rel=1e-12)
        assert cu[0] == pytest.approx(1 / a, rel=1e-12)
        assert z[0] == pytest.approx(inp.z_scan[-1])


def test_survival_and_g_prime_scale_c():
    inp = FragilityInput([uniform(1.0)], [0.5], LOG, single())
    # P(tau >= t, Y in (0, z)) g'(1/2) / z = 0.5 z * 2 / z
    assert estimate_cz(inp)[0][0] == pytest.approx(1.0)
    inp = FragilityInput([uniform(1.0)], [0.5], InteractionFn("affine"), single())
    assert estimate_cz(inp)[0][0] == pytest.approx(0.5)


def test_vanishing_density_gives_zero():
    inp = FragilityInput([uniform(1.0, lo=0.6)], [1.0], LOG, single(), z_scan=np.linspace(0.01, 0.5, 20))
    c, _, cu, _ = estimate_cz(inp)
    assert c[0] == 0 and cu[0] == 0


def test_triangle_against_closed_form():
    # density y on (0, 1): sub-CDF z^2 / 2
    zs = np.linspace(0.02, 0.8, 30)
    for marg in (DensitySpec("triangle", {"lo": 0.0, "peak": 1.0, "hi": 2.0}),
                 DensityRow(np.linspace(0, 2, 201), np.minimum(np.linspace(0, 2, 201), 2 - np.linspace(0, 2, 201)))):
        inp = FragilityInput([marg], [1.0], LOG, single(), z_scan=zs)
        assert np.allclose(scan_ratios(inp)[0], zs / 2, rtol=1e-12)
        c, z, cu, zu = estimate_cz(inp)
        assert c[0] == pytest.approx(zs[0] / 2) and z[0] == zs[-1]
        assert cu[0] == pytest.approx(zs[0] / 2) and zu[0] == zs[0]


def test_sample_envelope_satisfies_bound_exactly():
    rng = np.random.default_rng(1)
    for _ in range(20):
        s = rng.gamma(rng.uniform(0.8, 3), rng.uniform(0.2, 1.0), size=int(rng.integers(100, 3000)))
        surv = float(rng.uniform(0.2, 1.0))
        inp = FragilityInput([s], [surv], LOG, single())
        c, z, *_ = estimate_cz(inp)
        zs = inp.z_scan[inp.z_scan <= z[0]]
        sub = surv * ((s[None, :] > 0) & (s[None, :] < zs[:, None])).mean(axis=1)
        # g'(surv) = 1 / surv for the log
        assert np.all(sub / surv >= c[0] * zs)


def test_samples_open_interval():
    s = np.concatenate([[0.0, 0.1], np.full(98, 1.0)])
    assert conditional_cdf(s, np.array([0.1, 0.1000001]))[0] == 0.0
    assert conditional_cdf(s, np.array([0.1000001]))[0] == pytest.approx(0.01)


def test_insufficient_samples():
    with pytest.raises(InsufficientDataError):
        estimate_cz(FragilityInput([np.ones(50)], [1.0], LOG, single()))
    with pytest.raises(ValidationError):
        FragilityInput([np.ones(200)], [0.0], LOG, single())


def test_closed_components_examples():
    comps = closed_components(np.diag([1.0, 2.0, 3.0]))
    assert [c.members for c in comps] == [(0,), (1,), (2,)] and all(c.closed for c in comps)
    comps = closed_components(np.ones((3, 3)))
    assert len(comps) == 1 and comps[0].closed and comps[0].members == (0, 1, 2)
    comps = {c.members: c for c in closed_components([[0, 1.0], [0, 0]])}
    assert comps[(1,)].closed and not comps[(0,)].closed
    assert comps[(1,)].degenerate and comps[(1,)].rho == -np.inf


def test_log_pf_examples():
    assert log_pf_eigenvalue([[1.7]]) == pytest.approx(np.log(1.7))
    assert log_pf_eigenvalue([[0.0]]) == -np.inf
    a, b = 2.0, 8.0
    assert log_pf_eigenvalue([[0, a], [b, 0]]) == pytest.approx(0.5 * np.log(a * b), abs=1e-12)
    C = np.array([1.5, 0.3, 0.9])
    M = C[:, None] * uniform_kernel(3)
    assert log_pf_eigenvalue(M) == pytest.approx(np.log(C.mean()), abs=1e-12)


def test_log_pf_cap():
    rng = np.random.default_rng(0)
    with pytest.raises(NoConvergenceError):
        log_pf_eigenvalue(rng.random((4, 4)), max_iter=2)


def test_log_pf_is_scale_free():
    M = np.array([[0.2, 0.7], [0.5, 0.1]])
    rho = log_pf_eigenvalue(M)
    for s in (1e-14, 1e-9, 1e6):
        assert log_pf_eigenvalue(s * M) == pytest.approx(rho + np.log(s), abs=1e-9)


def test_log_pf_weakly_coupled_class():
    # two nearly decoupled blocks: the second eigenvalue is within 1e-6 of the first
    for eps in (1e-6, 1e-9):
        M = np.array([[1.0, eps], [eps, 1.0 - 1e-6]])
        exact = np.log(np.max(np.linalg.eigvalsh(M)))
        assert log_pf_eigenvalue(M) == pytest.approx(exact, abs=1e-12)


def test_log_pf_matches_eigvals_and_path_sums():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(2, 5))
        M = rng.random((n, n)) * (rng.random((n, n)) < 0.6)
        M[np.arange(n), np.roll(np.arange(n), 1)] += rng.uniform(0.1, 1, n)  # irreducible cycle
        rho = log_pf_eigenvalue(M)
        assert rho == pytest.approx(np.log(np.max(np.abs(np.linalg.eigvals(M)))), abs=1e-10)
        # Gelfand: path sums started anywhere grow like exp(n rho), the error decaying beyond 30 steps
        v = np.ones(n)
        logs, scale = [], 0.0
        for k in range(1, 61):
            v = M @ v
            s = v.sum()
            scale += np.log(s)
            v /= s
            logs.append((scale + np.log(n)) / k)
        err = np.abs(np.array(logs) - rho)
        assert err[59] < err[29] + 1e-12
        assert err[59] < 0.1


def test_classify_single_type_examples():
    rep = classify(FragilityInput([uniform(0.5)], [1.0], LOG, single()))
    assert rep.verdict is Verdict.FRAGILE
    assert rep.components[0].rho == pytest.approx(np.log(2), abs=1e-8)
    rep = classify(FragilityInput([uniform(2.0)], [1.0], LOG, single()))
    assert rep.verdict is Verdict.NOT_FRAGILE
    assert rep.components[0].rho == pytest.approx(np.log(0.5), abs=1e-8)
    assert "NotFragile" in rep.table()


def test_clustered_versus_uniform():
    margs = [uniform(1.0), uniform(1.0)]
    rep = classify(FragilityInput(margs, [1, 1], LOG, two_type_net(clustered_kernel(2))))
    assert rep.verdict is Verdict.FRAGILE
    assert rep.max_closed_rho == pytest.approx(np.log(1.5), abs=1e-9)
    rep = classify(FragilityInput(margs, [1, 1], LOG, two_type_net(uniform_kernel(2))))
    assert rep.verdict is Verdict.NOT_FRAGILE
    assert len(rep.components) == 1
    assert rep.max_closed_rho == pytest.approx(np.log(0.9), abs=1e-9)


def test_open_component_does_not_decide():
    # a fragile type that only lends into a safe closed class
    net = TypedNetwork(("a", "b"), [0.5, 0.5], [3.0, 0.5], [[0, 1.0], [0, 1.0]])
    rep = classify(FragilityInput([uniform(1.0), uniform(1.0)], [1, 1], LOG, net))
    assert rep.verdict is Verdict.NOT_FRAGILE


def test_threshold_flip():
    for a in (0.3, 0.8, 1.7):
        for factor, verdict in ((1.001, Verdict.FRAGILE), (0.999, Verdict.NOT_FRAGILE)):
            rep = classify(FragilityInput([uniform(a)], [1.0], LOG, single(C=factor * a)))
            assert rep.verdict is verdict


def test_inconclusive_runs_series():
    inp = FragilityInput([uniform(0.5)], [1.0], LOG, single(C=0.25))
    # C c = 0.5, far from the threshold
    assert classify(inp, semimart={}).series_diagnostic is None
    inp = FragilityInput([uniform(0.5)], [1.0], LOG, single(C=0.5))
    rep = classify(inp, semimart={})
    assert rep.verdict is Verdict.INCONCLUSIVE
    assert rep.series_diagnostic is not None


@settings(max_examples=60, deadline=None)
@given(C=st.lists(st.floats(0.05, 3.0), min_size=2, max_size=3), s=st.floats(1.01, 5.0),
       a=st.lists(st.floats(0.2, 3.0), min_size=3, max_size=3), clustered=st.booleans())
def test_verdict_monotone_in_scale(C, s, a, clustered):
    n = len(C)
    kappa = clustered_kernel(n) if clustered else uniform_kernel(n)
    margs = [uniform(ai) for ai in a[:n]]
    base = classify(FragilityInput(margs, np.ones(n), LOG, TypedNetwork(tuple(range(n)), np.full(n, 1 / n), C, kappa)))
    big = classify(FragilityInput(margs, np.ones(n), LOG,
                                  TypedNetwork(tuple(range(n)), np.full(n, 1 / n), np.array(C) * s, kappa)))
    if base.verdict is Verdict.FRAGILE:
        assert big.verdict is Verdict.FRAGILE
    if big.verdict is Verdict.NOT_FRAGILE:
        assert base.verdict is Verdict.NOT_FRAGILE
    for b, g in zip(base.components, big.components):
        assert g.rho == pytest.approx(b.rho + np.log(s), abs=1e-9)


def test_series_examples():
    net = single()
    d = series_diagnostic([1.2], [5.0], net)
    assert d.trend is Trend.DIVERGING and d.ratio > 1.1
    d = series_diagnostic([0.8], [5.0], net)
    assert d.trend is Trend.BOUNDED and d.ratio < 0.9
    d = series_diagnostic([0.0], [5.0], net)
    assert d.trend is Trend.BOUNDED
    assert np.all(d.partial_sums == 0)


def test_series_term_ratio_oracle():
    # direct evaluation of successive terms for one type
    from scipy.special import ndtr
    c, z, eta, N = 1.2, 5.0, 1.0, 60
    d = series_diagnostic([c], [z], single(), eta=eta, N_terms=N)
    a = -0.01
    s = eta / np.arange(1, N + 2)
    terms = []
    for k in range(1, N + 1):
        F = [max(0.0, 1 - 4 * ndtr(-(z - z / 2) / np.sqrt((s[j - 1] - s[j]) + s[j]))) for j in range(1, k)]
        terms.append((np.sqrt(s[k - 1] - s[k]) + a * s[k]) * c**k * np.prod(F))
    assert np.allclose(np.exp(d.log_terms), terms, rtol=1e-10)


def test_series_validation():
    with pytest.raises(ValidationError):
        series_diagnostic([1.0], [1.0], single(), eps=[1.5])
    with pytest.raises(ValidationError):
        series_diagnostic([1.0], [1.0], single(), sigma_lo=0.0)
    with pytest.raises(ValidationError):
        series_diagnostic([1.0], [1.0], single(), alpha_bar=1.0, eta=100.0)
