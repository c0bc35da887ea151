import subprocess
import sys

import numpy as np
import pytest

from tailrisk._core import _pyref

try:
    from tailrisk._core import _recursions as compiled
except ImportError:
    compiled = None

from tailrisk.simulate import simulate_risk_system, table_params

needs_ext = pytest.mark.skipif(compiled is None, reason="extension not built")


@pytest.fixture(scope="module")
def system():
    p = table_params(0.05)
    sim = simulate_risk_system(p, 800, seed=123)
    return (np.ascontiguousarray(sim.returns), np.ascontiguousarray(sim.factors),
            np.ascontiguousarray(np.log(sim.x)), np.ascontiguousarray(p.pack()),
            sim.q0, sim.gap0)


@needs_ext
class TestBackendEquivalence:
    def test_filter_paths_match(self, system):
        r, f, logx, p, q0, w0 = system
        out_c = compiled.risk_filter(r, f, logx, p, q0, w0)
        out_p = _pyref.risk_filter(r, f, logx, p, q0, w0)
        assert out_c[4] == out_p[4] == -1
        for a, b in zip(out_c[:4], out_p[:4]):
            np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)

    def test_joint_nll_matches(self, system):
        r, f, logx, p, q0, w0 = system
        c = compiled.risk_joint_nll(r, f, logx, p, q0, w0, 0.05, 0.5)
        py = _pyref.risk_joint_nll(r, f, logx, p, q0, w0, 0.05, 0.5)
        np.testing.assert_allclose(c, py, rtol=1e-12)

    def test_divergence_agreement(self, system):
        r, f, logx, p, q0, w0 = system
        bad = p.copy()
        bad[0] = 80.0  # intercept forces overflow
        c = compiled.risk_joint_nll(r, f, logx, bad, q0, w0, 0.05, 0.5)
        py = _pyref.risk_joint_nll(r, f, logx, bad, q0, w0, 0.05, 0.5)
        assert c[0] == py[0] == float("inf")
        bc = compiled.risk_filter(r, f, logx, bad, q0, w0)[4]
        bp = _pyref.risk_filter(r, f, logx, bad, q0, w0)[4]
        assert bc == bp >= 0

    @pytest.mark.parametrize("family,params", [
        (0, [0.05, 0.08, 0.90]),
        (1, [0.05, 0.03, 0.10, 0.88]),
        (2, [-0.02, 0.97, -0.08, 0.15, 0.7978845608028654]),
    ])
    def test_garch_kernels_match(self, family, params, rng):
        eps = np.ascontiguousarray(rng.standard_normal(600))
        p = np.ascontiguousarray(np.array(params, dtype=float))
        s2c = compiled.garch_sigma2(eps, p, family, 1.1)
        s2p = _pyref.garch_sigma2(eps, p, family, 1.1)
        np.testing.assert_allclose(s2c, s2p, rtol=1e-13)
        for dist, nu in ((0, 0.0), (1, 6.0)):
            nc = compiled.garch_nll(eps, p, family, 1.1, dist, nu)
            npy = _pyref.garch_nll(eps, p, family, 1.1, dist, nu)
            np.testing.assert_allclose(nc, npy, rtol=1e-12)


def test_env_var_forces_python_backend():
    code = ("import tailrisk; import sys; "
            "sys.exit(0 if tailrisk.BACKEND == 'python' else 1)")
    res = subprocess.run([sys.executable, "-c", code],
                         env={"TAILRISK_PURE_PYTHON": "1", "PATH": "/usr/bin:/bin"},
                         capture_output=True)
    assert res.returncode == 0, res.stderr.decode()


def test_default_backend_reported():
    import tailrisk

    assert tailrisk.BACKEND in ("compiled", "python")
