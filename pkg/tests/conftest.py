import numpy as np
import pytest

from sixdma.channel import RadiationPattern
from sixdma.config import default_deployment
from sixdma.geometry import SurfaceTemplate
from sixdma.rate import LinkBudget
from sixdma.scenario import generate_ground_truth
from sixdma.sci_estimation import ArrayHardware

WAVELENGTH = 0.125


@pytest.fixture(scope="session")
def template():
    return SurfaceTemplate.square(WAVELENGTH)


@pytest.fixture(scope="session")
def hardware(template):
    return ArrayHardware(template, RadiationPattern(), WAVELENGTH)


@pytest.fixture(scope="session")
def deployment():
    return default_deployment()


@pytest.fixture(scope="session")
def truth(deployment):
    return generate_ground_truth(deployment, np.random.default_rng(0))


@pytest.fixture(scope="session")
def budget(deployment):
    return LinkBudget(deployment.powers, deployment.noise_power)


def random_unit(rng, n=None):
    v = rng.standard_normal((n or 1, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v if n else v[0]


FAST_CONFIG = {
    "array": {"n_surfaces": 4},
    "training": {"M": 8, "T": 20, "grid_size": 800},
    "optimizer": {"candidate_count": 32, "max_iterations": 2},
    "rate": {"samples": 200},
    "sweep": {"M": [4, 8], "power": [1e-3], "T": [10, 50]},
    "seeds": [0, 1],
}


@pytest.fixture
def fast_config():
    from sixdma.config import from_dict
    return from_dict(FAST_CONFIG)


ACCEPTANCE: dict = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
