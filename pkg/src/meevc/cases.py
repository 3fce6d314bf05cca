"""Benchmark problems: Taylor-Green vortex and the inviscid shear-layer roll-up."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

PI = np.pi

TG_EXTENT = (2.0, 2.0)
TG_NU = 0.01

SHEAR_EXTENT = (2.0 * PI, 2.0 * PI)
SHEAR_DELTA = PI / 15.0
SHEAR_EPS = 0.05


def taylor_green(x, y, t=0.0, nu=TG_NU):
    """Exact Taylor-Green solution on [0, 2]^2: returns ``(u_x, u_y, p, omega)``.

    The pressure carries the growth factor ``exp(+4 pi^2 nu t)`` exactly as the
    source formula prints it. The classical solution decays instead, so the
    pressure is kept out of every error metric.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    decay = np.exp(-2.0 * PI**2 * nu * t)
    ux = -np.sin(PI * x) * np.cos(PI * y) * decay
    uy = np.cos(PI * x) * np.sin(PI * y) * decay
    p = 0.25 * (np.cos(2 * PI * x) + np.cos(2 * PI * y)) * np.exp(4.0 * PI**2 * nu * t)
    w = -2.0 * PI * np.sin(PI * x) * np.sin(PI * y) * decay
    return ux, uy, p, w


def shear_layer_init(x, y, delta=SHEAR_DELTA, eps=SHEAR_EPS):
    """Initial shear-layer data on [0, 2 pi]^2: returns ``(u_x, u_y, omega)``.

    ``omega`` is the published profile; it omits the ``eps cos x`` part of the
    curl of the velocity.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lower = y <= PI
    arg = np.where(lower, (y - PI / 2) / delta, (1.5 * PI - y) / delta)
    ux = np.tanh(arg)
    uy = eps * np.sin(x) + 0.0 * y
    sech2 = 1.0 / np.cosh(arg) ** 2
    w = np.where(lower, 1.0, -1.0) * sech2 / delta
    return ux, uy, w


@dataclass(frozen=True)
class CaseDefinition:
    """A benchmark: domain, default viscosity, initial data and optional exact solution.

    ``velocity(x, y, t)`` and ``vorticity(x, y, t)`` give the initial data at
    ``t = 0``; ``exact`` is ``None`` when no closed form exists.
    """
    name: str
    extent: tuple
    nu: float
    velocity: Callable = field(repr=False)
    vorticity: Callable = field(repr=False)
    exact: bool
    inviscid_only: bool = False
    recommended: dict = field(default_factory=dict)


def _tg_velocity(x, y, t=0.0, nu=TG_NU):
    ux, uy, _, _ = taylor_green(x, y, t, nu)
    return ux, uy


def _tg_vorticity(x, y, t=0.0, nu=TG_NU):
    return taylor_green(x, y, t, nu)[3]


def _shear_velocity(x, y, t=0.0, nu=0.0):
    ux, uy, _ = shear_layer_init(x, y)
    return ux, uy


def _shear_vorticity(x, y, t=0.0, nu=0.0):
    return shear_layer_init(x, y)[2]


CASES = {
    "taylor-green": CaseDefinition(
        "taylor-green", TG_EXTENT, TG_NU, _tg_velocity, _tg_vorticity, exact=True,
        recommended=dict(t_end=1.0, dt_time=[1, 1 / 2, 1 / 4, 1 / 8, 1 / 16],
                         dt_space={1: 2.5e-2, 2: 1e-3, 4: 1e-4},
                         paper_mesh=(16, 16, "crisscross"))),
    "shear-layer": CaseDefinition(
        "shear-layer", SHEAR_EXTENT, 0.0, _shear_velocity, _shear_vorticity, exact=False,
        recommended=dict(t_end=16.0, dt=[1, 1 / 2, 1 / 4, 1 / 8],
                         paper_mesh=(40, 40, "crisscross"), long_mesh=(5, 5, "crisscross"))),
}


def get_case(name: str) -> CaseDefinition:
    try:
        return CASES[name]
    except KeyError:
        raise ValueError(f"unknown case {name!r}; choose from {sorted(CASES)}") from None
