import numpy as np
import pytest

from axiscatter.body_operator import OperatorCache
from axiscatter.geometry import Ellipsoid, RigidMotion
from axiscatter.kernels import KernelSpec
from axiscatter.scenes import BodySpec, Resolution, build_scene


@pytest.fixture(scope="session")
def op_cache():
    return OperatorCache()


@pytest.fixture(scope="session")
def sphere_scene(op_cache):
    """Unit sphere, Laplace, small resolution."""
    b = BodySpec(Ellipsoid(1.0, 1.0), RigidMotion.identity(), Resolution(6, 8, 21))
    return build_scene([b], KernelSpec.laplace(), op_cache)


@pytest.fixture(scope="session")
def two_body_scene(op_cache):
    """Sphere plus rotated 2:1 ellipsoid, Helmholtz, N < 4000."""
    spec = KernelSpec.helmholtz(2.0)
    bodies = [BodySpec(Ellipsoid(1.0, 1.0), RigidMotion.identity(), Resolution(5, 8, 21)),
              BodySpec(Ellipsoid(0.5, 1.0), RigidMotion.from_axis_angle((1, 1, 0), 0.7, (3.0, 0.5, 0.2)),
                       Resolution(5, 8, 21))]
    return build_scene(bodies, spec, op_cache)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    lines = [v for reps in terminalreporter.stats.values() for r in reps
             if getattr(r, "when", None) == "call"
             for k, v in getattr(r, "user_properties", []) if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
