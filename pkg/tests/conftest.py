"""Shared fixtures: reference houses, random tiny scheduling instances, shipped desk data."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from hpdro.model import ForecastSet, InfeasibleModelError, ZoneSpec, build_from_margins
from hpdro.synthetic import reference_houses
from hpdro.thermal import HouseSpec

DATA_DIR = Path(str(resources.files("hpdro") / "data"))
DESK_MANIFEST = DATA_DIR / "desk_manifest.yaml"


def random_house(rng: np.random.Generator, hid: int = 1, **overrides) -> HouseSpec:
    """House with parameters drawn from the ranges spanned by the reference houses."""
    kw = dict(id=hid, R=rng.uniform(2.6, 3.2), C=rng.uniform(4.1, 5.9), R_w=rng.uniform(2.2, 2.8),
              C_w=rng.uniform(4.8, 5.8), P_hp=rng.uniform(4.3, 5.0), cop=3.0, eff_w2h=1.0,
              T0=float(rng.uniform(19, 21)), Tw0=float(rng.uniform(42, 47)))
    kw.update(overrides)
    return HouseSpec(**kw)


def tiny_instance(rng: np.random.Generator, n_houses: int, H: int, dt: float = 0.5):
    """Random scheduling instance, or None when the build-time checks prove it infeasible."""
    houses = [random_house(rng, k + 1, T_lo=float(rng.uniform(17.0, 19.0)),
                           T_hi=float(rng.uniform(21.0, 24.0))) for k in range(n_houses)]
    zone = ZoneSpec("Z", tuple(h.id for h in houses), trans_capacity=float(rng.uniform(15, 40)),
                    psi=float(rng.uniform(0, 10)))
    fc = ForecastSet(rng.uniform(-8, 2, H), {"Z": rng.uniform(1, 8, H)}, rng.uniform(0.3, 2.0, H), dt)
    try:
        return build_from_margins(houses, [zone], fc, {"Z": rng.uniform(0, 1, H)}, rng.uniform(0, 0.5, H),
                                  rng.uniform(0, 0.5, H), "kdea-dro")
    except InfeasibleModelError:
        return None


def tiny_instances(seed: int, count: int, shapes=((1, 4), (1, 6), (2, 4), (2, 6))):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n, H = shapes[len(out) % len(shapes)]
        inst = tiny_instance(rng, n, H)
        if inst is not None:
            out.append(inst)
    return out


@pytest.fixture(scope="session")
def house1() -> HouseSpec:
    return reference_houses(1)[0]


@pytest.fixture(scope="session")
def ref_houses() -> list[HouseSpec]:
    return reference_houses(10)


@pytest.fixture(scope="session")
def desk_manifest_path() -> Path:
    return DESK_MANIFEST


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
