import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (passed, detail); filled in by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}")


def synthetic_matrices(seed, n_inst=24, n_algo=6):
    """Random positive performance matrix plus noisy predictions of it."""
    from fbselect.bench import ProblemId
    from fbselect.selector import PerformanceMatrix, PredictionMatrix

    rng = np.random.default_rng(seed)
    logp = rng.uniform(-12, 3, size=(n_inst, n_algo))
    perf = PerformanceMatrix(
        10.0**logp,
        [ProblemId(1 + i // 4, 1 + i % 4, 5) for i in range(n_inst)],
        [f"a{j}" for j in range(n_algo)],
    )
    pred_log = logp + rng.normal(0, 2.0, size=logp.shape)
    pred_unscaled = np.abs(10.0**logp + rng.normal(0, 50.0, size=logp.shape))
    return PredictionMatrix(pred_unscaled, pred_log, perf.instances, perf.algos), perf


@pytest.fixture
def synth():
    return synthetic_matrices
