import pytest


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance: end-to-end acceptance criteria (slower Monte Carlo runs)"
    )


@pytest.fixture(scope="session", autouse=True)
def _warm_compiled_kernels():
    # pay the JIT cost once, before any timed or pooled test runs
    from arwsim.experiments import _warm_kernels

    _warm_kernels()
