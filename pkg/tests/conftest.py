import numpy as np
import pytest

from orbitlimit.continuation import continue_family
from orbitlimit.orbit import find_periodic
from orbitlimit.symplectic import HamiltonianHomotopy, SymplecticStructure

TWO_PI = 2 * np.pi


def radial(n, scale="0.5"):
    names = [f"q{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)]
    return [f"{scale}*{v}" for v in names]


@pytest.fixture(scope="session")
def harmonic():
    """H = 1/2 |x|^2 - 1/2 - sigma in one degree of freedom, radial X (f = 1/2 at sigma = 0)."""
    sys_ = HamiltonianHomotopy("0.5*(q1^2 + p1^2) - 0.5 - sigma", 1, X=radial(1))
    return sys_, SymplecticStructure(1)


@pytest.fixture(scope="session")
def sphere():
    """Unit sphere in R^4 with the radial Liouville field, f = 1/2 on the sphere."""
    sys_ = HamiltonianHomotopy("0.5*(q1^2 + q2^2 + p1^2 + p2^2) - 0.5 - sigma", 2, X=radial(2))
    return sys_, SymplecticStructure(2)


ANISO_H = "0.5*(p1^2 + p2^2) + 0.5*(q1^2 + 2*q2^2) - 0.5 - sigma"
ANISO_X = [f"{v}/(1 + 2*sigma)" for v in ("q1", "q2", "p1", "p2")]


@pytest.fixture(scope="session")
def anisotropic():
    """Frequencies 1 and sqrt(2); X normalised so that dH(X) = 1 on every level."""
    return HamiltonianHomotopy(ANISO_H, 2, X=ANISO_X), SymplecticStructure(2)


@pytest.fixture(scope="session")
def aniso_short(anisotropic):
    sys_, st = anisotropic
    return find_periodic(sys_, st, np.array([1.0, 0, 0, 0]), TWO_PI, 0.0, N=256)


@pytest.fixture(scope="session")
def aniso_cylinder(anisotropic, aniso_short):
    sys_, st = anisotropic
    return continue_family(aniso_short, sys_, st, 0.9, max_step=0.15, N=256)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
