"""Exact TM eigenmodes, the current source term, and the error metric."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .grid import StaggeredGrid


@dataclass(frozen=True)
class EigenmodeSolution:
    """Standing TM cavity mode with wave numbers ``(kx, ky)``.

    ``Z`` enters both the frequency and the spatial sine arguments, exactly as
    in the closed form below; with ``Z != 1`` the mode only vanishes on the
    faces when ``Z*kx`` and ``Z*ky`` are integers.
    """

    kx: int
    ky: int
    Z: float = 1.0

    @property
    def omega(self) -> float:
        return self.Z * math.pi * math.hypot(self.kx, self.ky)

    def _trig(self, x, y):
        ax, ay = self.Z * math.pi * self.kx, self.Z * math.pi * self.ky
        return np.sin(ax * x), np.cos(ax * x), np.sin(ay * y), np.cos(ay * y)

    def ez(self, tau, x, y):
        sx, _, sy, _ = self._trig(x, y)
        return np.cos(self.omega * tau) * sx * sy

    def hx(self, tau, x, y):
        sx, _, _, cy = self._trig(x, y)
        return -np.sin(self.omega * tau) / self.omega * math.pi * self.ky * sx * cy

    def hy(self, tau, x, y):
        _, cx, sy, _ = self._trig(x, y)
        return np.sin(self.omega * tau) / self.omega * math.pi * self.kx * cx * sy

    def laplacian_factor(self) -> float:
        """All three fields satisfy ``Delta u = -factor * u``."""
        return (self.Z * math.pi) ** 2 * (self.kx**2 + self.ky**2)

    def h_time_derivatives(self, grid: StaggeredGrid, order: int = 4):
        """``[(d^k Hx, d^k Hy) at tau=0 for k = 0..order]`` on the H meshes.

        Built from the field equations rather than from the closed-form time
        dependence: ``H_t = -(1/Z) curl E``, then ``H^(k+2) = Delta H^(k)``.
        """
        Xx, Yx = grid.mesh("Hx")
        Xy, Yy = grid.mesh("Hy")
        Z = self.Z
        ax, ay = Z * math.pi * self.kx, Z * math.pi * self.ky
        # E0 = sin(ax x) sin(ay y); curl of (0, 0, Ez) = (dEz/dy, -dEz/dx)
        dEz_dy = np.sin(ax * Xx) * ay * np.cos(ay * Yx)
        dEz_dx = ax * np.cos(ax * Xy) * np.sin(ay * Yy)
        derivs = [
            (self.hx(0.0, Xx, Yx), self.hy(0.0, Xy, Yy)),
            (-dEz_dy / Z, dEz_dx / Z),
        ]
        lam = -self.laplacian_factor()
        while len(derivs) <= order:
            hx, hy = derivs[-2]
            derivs.append((lam * hx, lam * hy))
        return derivs[: order + 1]

    def initial_laplacian_ez(self, grid: StaggeredGrid) -> np.ndarray:
        X, Y = grid.mesh("Ez")
        return -self.laplacian_factor() * self.ez(0.0, X, Y)


def exact_tm_fields(mode: EigenmodeSolution, tau: float, grid: StaggeredGrid,
                    h_tau: float | None = None):
    """``(Ez, Hx, Hy)`` on their meshes.

    All three are sampled at ``tau`` unless ``h_tau`` is given, in which case
    the magnetic fields are taken at ``tau + h_tau/2`` as in the marching state.
    """
    th = tau if h_tau is None else tau + 0.5 * h_tau
    X, Y = grid.mesh("Ez")
    ez = mode.ez(tau, X, Y)
    X, Y = grid.mesh("Hx")
    hx = mode.hx(th, X, Y)
    X, Y = grid.mesh("Hy")
    hy = mode.hy(th, X, Y)
    return ez, hx, hy


def field_mae(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> float:
    """Mean absolute difference of two field triples, averaged over the fields."""
    return sum(float(np.mean(np.abs(np.asarray(u) - np.asarray(v)))) for u, v in zip(a, b)) / len(a)


class ErrorAccumulator:
    """Running form of :func:`mean_abs_error` that avoids storing a history."""

    def __init__(self, mode: EigenmodeSolution, grid: StaggeredGrid, h_tau: float):
        self.mode, self.grid, self.h_tau = mode, grid, h_tau
        self.total = 0.0
        self.count = 0

    def add(self, n: int, fields) -> float:
        exact = exact_tm_fields(self.mode, n * self.h_tau, self.grid, self.h_tau)
        e = field_mae(fields, exact)
        self.total += e
        self.count += 1
        return e

    @property
    def value(self) -> float:
        if self.count == 0:
            raise ValueError("no steps recorded")
        return self.total / self.count


def mean_abs_error(history: Iterable, mode: EigenmodeSolution, grid: StaggeredGrid,
                   h_tau: float) -> float:
    """Mean absolute error over a run.

    ``history`` yields ``(n, Ez, Hx, Hy)`` with ``Ez`` at ``n*h_tau`` and the
    magnetic fields at ``(n + 1/2)*h_tau``.  Each field is averaged over its own
    node count, then the three are averaged and the result averaged over the
    recorded steps.
    """
    acc = ErrorAccumulator(mode, grid, h_tau)
    for n, ez, hx, hy in history:
        acc.add(n, (ez, hx, hy))
    if acc.count == 0:
        raise ValueError("empty history")
    return acc.value


class MissingCallbackError(ValueError):
    pass


@dataclass
class SourceCallbacks:
    """Current density ``J`` and what ``P(J)`` needs, as functions of ``(tau, *x)``.

    Each callback returns a tuple of components.  ``grad_div_J`` is
    ``grad(div J)``; ``J_tt`` the second time derivative.
    """

    J: Callable | None = None
    J_tt: Callable | None = None
    grad_div_J: Callable | None = None
    rho: Callable | None = None
    div_J: Callable | None = None
    rho_t: Callable | None = None

    def charge_residual(self, points, c: float = 1.0) -> float:
        """Max of ``|(1/c) rho_t + div J|`` over sample points ``(tau, *x)``."""
        if self.rho_t is None or self.div_J is None:
            raise MissingCallbackError("charge check needs rho_t and div_J")
        return max(abs(self.rho_t(*p) / c + self.div_J(*p)) for p in points)


def eval_source_P(src: SourceCallbacks, tau: float, grid: StaggeredGrid, Z: float = 1.0,
                  components: Sequence[str] | None = None):
    """``Z (-J - grad(div J) + J_tt)`` sampled on the electric meshes.

    Returns one array per electric component of the grid (``Ez`` only on the
    TM grid).
    """
    if src.J is None or src.J_tt is None or src.grad_div_J is None:
        raise MissingCallbackError("P(J) needs J, J_tt and grad_div_J")
    if components is None:
        components = [c for c in grid.components if c.startswith("E")]
    out = []
    for comp in components:
        k = "xyz".index(comp[1])
        coords = grid.mesh(comp)
        J = src.J(tau, *coords)[k]
        gd = src.grad_div_J(tau, *coords)[k]
        Jtt = src.J_tt(tau, *coords)[k]
        out.append(Z * (-np.asarray(J) - gd + Jtt) + np.zeros(grid.shape(comp)))
    return tuple(out)
