import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from costfolio import _pykernels, kernels
from costfolio.tailfit import _pareto_candidates

try:
    from costfolio import _ckernels
except ImportError:
    _ckernels = None

BACKENDS = [pytest.param(_pykernels, id="numpy"),
            pytest.param(_ckernels, id="cython",
                         marks=pytest.mark.skipif(_ckernels is None, reason="extension not built"))]


def pareto_inputs(n, gamma, seed, body=0.0):
    rng = np.random.default_rng(seed)
    x = (1.0 - rng.random(n)) ** (-1.0 / (gamma - 1.0))
    if body:
        m = int(body * n)
        x[:m] = rng.lognormal(-0.5, 0.3, m)
    x = np.round(x, 3) + 1e-3  # create ties
    uniq, counts = np.unique(x, return_counts=True)
    return np.log(uniq), counts.astype(float), _pareto_candidates(counts, 50, 64)


def ks_oracle(logx, w, k):
    """Tail exponent and KS distance at cutoff index ``k`` by scipy."""
    x = np.repeat(np.exp(logx[k:]), w[k:].astype(int))
    gam = 1.0 + len(x) / np.sum(np.log(x / x[0]))
    d = stats.kstest(x, stats.pareto(b=gam - 1.0, scale=x[0]).cdf).statistic
    return gam, d


class TestSelection:
    def test_backend_name(self):
        assert kernels.BACKEND in ("cython", "python")

    def test_thread_count_env(self, monkeypatch):
        monkeypatch.setenv("COSTFOLIO_THREADS", "3")
        assert kernels.thread_count() == 3
        monkeypatch.setenv("COSTFOLIO_THREADS", "junk")
        assert kernels.thread_count() == 1


@pytest.mark.parametrize("impl", BACKENDS)
class TestParetoScan:
    @pytest.mark.parametrize("seed,body", [(0, 0.0), (1, 0.5), (2, 0.7)])
    def test_matches_scipy_ks(self, impl, seed, body):
        logx, w, cands = pareto_inputs(3000, 2.4, seed, body)
        k, g, d = impl.pareto_scan(logx, w, cands, 50.0, -1)
        best = min((ks_oracle(logx, w, int(c))[1], int(c)) for c in cands if w[int(c):].sum() >= 50)
        assert d == pytest.approx(best[0], abs=1e-12)
        g_ref, d_ref = ks_oracle(logx, w, k)
        assert g == pytest.approx(g_ref, rel=1e-12)
        assert d == pytest.approx(d_ref, abs=1e-12)

    def test_hint_does_not_change_result(self, impl):
        logx, w, cands = pareto_inputs(2000, 2.0, 4, 0.4)
        ref = impl.pareto_scan(logx, w, cands, 50.0, -1)
        for h in (int(cands[0]), int(cands[len(cands) // 2]), int(cands[-1])):
            assert impl.pareto_scan(logx, w, cands, 50.0, h) == pytest.approx(ref, abs=1e-14)

    def test_no_admissible_cutoff(self, impl):
        logx, w, cands = pareto_inputs(100, 2.0, 5)
        k, _, _ = impl.pareto_scan(logx, w, cands, 1e6, -1)
        assert k == -1


@pytest.mark.skipif(_ckernels is None, reason="extension not built")
class TestParity:
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31), gamma=st.floats(1.5, 4.0), body=st.floats(0.0, 0.8))
    def test_pareto(self, seed, gamma, body):
        logx, w, cands = pareto_inputs(800, gamma, seed, body)
        a = _pykernels.pareto_scan(logx, w, cands, 50.0, -1)
        b = _ckernels.pareto_scan(logx, w, cands, 50.0, -1)
        assert a[0] == b[0]
        assert a[1:] == pytest.approx(b[1:], rel=1e-12, abs=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31), n=st.integers(20, 400), frac=st.floats(0.05, 1.0))
    def test_loess(self, seed, n, frac):
        rng = np.random.default_rng(seed)
        x = np.sort(rng.uniform(0, 10, n))
        y = np.sin(x) + rng.normal(0, 0.2, n)
        rw = rng.uniform(0, 1, n)
        k = max(3, int(frac * n))
        xq = np.linspace(-1, 11, 37)
        fa, sa = _pykernels.loess_eval(x, y, rw, k, xq)
        fb, sb = _ckernels.loess_eval(x, y, rw, k, xq)
        np.testing.assert_allclose(fa, fb, rtol=1e-9, atol=1e-10)
        np.testing.assert_allclose(sa, sb, rtol=1e-9, atol=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31), c=st.floats(0.05, 20), g=st.floats(0.2, 4), b=st.floats(0, 2))
    def test_zm(self, seed, c, g, b):
        rng = np.random.default_rng(seed)
        x = rng.exponential(1.0, 300)
        w = rng.integers(0, 3, 300).astype(float)
        la, ga, ha = _pykernels.zm_derivs(x, w, c, g, b)
        lb, gb, hb = _ckernels.zm_derivs(x, w, c, g, b)
        assert la == pytest.approx(lb, rel=1e-11, abs=1e-9)
        np.testing.assert_allclose(ga, gb, rtol=1e-10, atol=1e-8)
        np.testing.assert_allclose(ha, hb, rtol=1e-10, atol=1e-8)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31), n=st.integers(1, 2000))
    def test_gather_moments(self, seed, n):
        rng = np.random.default_rng(seed)
        x = rng.normal(0.0, 3.0, n)
        idx = rng.integers(0, n, n)
        a = _pykernels.gather_moments(x, idx)
        b = _ckernels.gather_moments(x, idx)
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-9)


@pytest.mark.parametrize("impl", BACKENDS)
class TestLoessEval:
    def test_matches_weighted_lstsq(self, impl):
        rng = np.random.default_rng(0)
        n, k = 150, 40
        x = np.sort(rng.uniform(0, 5, n))
        y = x ** 2 + rng.normal(0, 0.3, n)
        rw = rng.uniform(0.2, 1, n)
        xq = np.linspace(0, 5, 23)
        fit, slope = impl.loess_eval(x, y, rw, k, xq)
        for q, x0 in enumerate(xq):
            idx = np.argsort(np.abs(x - x0), kind="stable")[:k]
            h = np.abs(x[idx] - x0).max() * 1.0000001
            w = (1 - (np.abs(x[idx] - x0) / h) ** 3) ** 3 * rw[idx]
            A = np.column_stack([np.ones(k), x[idx] - x0]) * np.sqrt(w)[:, None]
            coef = np.linalg.lstsq(A, y[idx] * np.sqrt(w), rcond=None)[0]
            assert fit[q] == pytest.approx(coef[0], rel=1e-9, abs=1e-9)
            assert slope[q] == pytest.approx(coef[1], rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("impl", BACKENDS)
class TestZMDerivs:
    @pytest.mark.parametrize("c,g,b", [(1.0, 1.5, 0.1), (0.3, 0.9, 0.0), (7.0, 2.5, 1e-3)])
    def test_finite_differences(self, impl, c, g, b):
        rng = np.random.default_rng(2)
        x = rng.exponential(2.0, 500)
        w = np.ones_like(x)
        _, grad, hess = impl.zm_derivs(x, w, c, g, b)
        p = np.array([c, g, b])
        for i in range(3):
            h = 1e-6 * max(abs(p[i]), 1e-2)
            up, dn = p.copy(), p.copy()
            up[i] += h
            dn[i] -= h
            lu, gu, _ = impl.zm_derivs(x, w, *up)
            ld, gd, _ = impl.zm_derivs(x, w, *dn)
            assert grad[i] == pytest.approx((lu - ld) / (2 * h), rel=1e-5, abs=1e-4)
            np.testing.assert_allclose(hess[:, i], (gu - gd) / (2 * h), rtol=1e-5, atol=1e-3)

    def test_loglik_matches_density(self, impl):
        from costfolio.tailfit import ZipfMandelbrotFit
        x = np.random.default_rng(3).exponential(1.0, 200)
        m = ZipfMandelbrotFit(c=0.7, gamma=1.3, beta_cut=0.2)
        ll, _, _ = impl.zm_derivs(x, np.ones_like(x), 0.7, 1.3, 0.2)
        # density from a numerical derivative of the survival function
        h = 1e-6
        dens = (m.sf(x - h) - m.sf(x + h)) / (2 * h)
        assert ll == pytest.approx(np.sum(np.log(dens)), rel=1e-8)


@pytest.mark.parametrize("impl", BACKENDS)
class TestGatherMoments:
    def test_matches_materialised_resample(self, impl):
        rng = np.random.default_rng(4)
        x = rng.normal(2.0, 1.0, 500)
        idx = rng.integers(0, 500, 500)
        s1, s2 = impl.gather_moments(x, idx)
        assert s1 == pytest.approx(x[idx].sum(), rel=1e-12)
        assert s2 == pytest.approx((x[idx] ** 2).sum(), rel=1e-12)
