import numpy as np
import pytest

from tailrisk import _core

# Monte Carlo heavy tests are only meaningful at compiled-kernel speed;
# they skip under the pure-Python fallback rather than run for hours.
requires_compiled = pytest.mark.skipif(
    _core.BACKEND != "compiled",
    reason="compiled kernels unavailable (pure-Python backend active)")


@pytest.fixture
def rng():
    return np.random.default_rng(20260808)


def make_day(returns, date="2024-01-02"):
    from tailrisk.ingest import IntradayDay

    return IntradayDay(date=np.datetime64(date), returns=np.asarray(returns, dtype=float))
