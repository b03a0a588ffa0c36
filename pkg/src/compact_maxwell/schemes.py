"""Time marching for the 2D TM system.

State convention: ``Ez`` at ``n*h_tau``; ``Hx``, ``Hy`` at ``(n + 1/2)*h_tau``.
Every scheme is a leapfrog: first the electric field, then the magnetic field.

* ``C4``   compact, fourth order in space and time (two Helmholtz stages).
* ``Yee``  classical second-order staggered scheme.
* stencil schemes: Yee updates with the 3x4 first-derivative stencil
  ``(a, b, c, d)``; ``NC`` is its fourth-order member with ``a = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .elliptic import ConvergenceError, assemble_p1, solve_modified_helmholtz
from .grid import DIRICHLET, NEUMANN, StaggeredGrid, build_tm_grid
from .operators import Curl2D, lap_with_closure

SCHEMES = ("c4", "nc", "yee", "ai")

CFL_DEFAULT = 5.0 / (6.0 * math.sqrt(2.0))


class ConfigurationError(ValueError):
    pass


class BlowupError(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"solution blew up at step {step} (max |field| = {value:.3e})")
        self.step = step
        self.value = value


class StepError(RuntimeError):
    """CG failure inside a C4 step, tagged with the step index."""

    def __init__(self, step: int, cause: ConvergenceError):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.residual = cause.residual


@dataclass
class EMStateTM:
    n: int
    h_tau: float
    Ez: np.ndarray
    Hx: np.ndarray
    Hy: np.ndarray
    lapEz: np.ndarray | None = None

    @property
    def tau(self) -> float:
        return self.n * self.h_tau

    @property
    def fields(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.Ez, self.Hx, self.Hy

    def scaled(self, alpha: float) -> "EMStateTM":
        lap = None if self.lapEz is None else alpha * self.lapEz
        return replace(self, Ez=alpha * self.Ez, Hx=alpha * self.Hx, Hy=alpha * self.Hy, lapEz=lap)

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(f))) for f in self.fields)


def zero_state(grid: StaggeredGrid, h_tau: float) -> EMStateTM:
    return EMStateTM(
        0, h_tau,
        np.zeros(grid.shape("Ez")), np.zeros(grid.shape("Hx")), np.zeros(grid.shape("Hy")),
        np.zeros(grid.shape("Ez")),
    )


@dataclass(frozen=True)
class StencilParams:
    """Free parameters of the stencil ``K2``; ``c`` keeps second-order consistency."""

    a: float = 0.0
    b: float = 0.0
    d: float = 0.0

    @property
    def c(self) -> float:
        return 1.0 - 3.0 * self.d - 2.0 * self.a - 6.0 * self.b

    @classmethod
    def k4(cls, a: float = 0.0) -> "StencilParams":
        """Fourth-order one-parameter family; ``a = 0`` is the NC stencil."""
        return cls(a=a, b=-a / 3.0, d=(16.0 * a - 1.0) / 24.0)

    @property
    def consistency_residual(self) -> float:
        return self.c + 3.0 * self.d + 2.0 * self.a + 6.0 * self.b - 1.0

    def is_fourth_order(self, tol: float = 1e-12) -> bool:
        return (
            abs(self.c + 27.0 * self.d + 2.0 * self.a + 54.0 * self.b) <= tol
            and abs(self.a + 3.0 * self.b) <= tol
        )

    @property
    def wide(self) -> bool:
        return self.b != 0.0 or self.d != 0.0

    def as_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c, "d": self.d}


YEE_PARAMS = StencilParams()
NC_PARAMS = StencilParams.k4(0.0)


@dataclass
class RunConfig:
    N: int = 64
    r: float = CFL_DEFAULT
    T: float = 1.0 / math.sqrt(2.0)
    Z: float = 1.0
    kx: int = 2
    ky: int = 2
    scheme: str = "c4"
    cg_tol: float = 1e-10
    cg_max_iter: int = 200
    params: StencilParams | None = None

    def __post_init__(self):
        if not self.r > 0:
            raise ConfigurationError(f"CFL number must be positive, got r={self.r}")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def h_tau(self) -> float:
        return self.r * self.h

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.h_tau))

    def stencil(self) -> StencilParams:
        if self.scheme == "nc":
            return NC_PARAMS
        if self.scheme == "yee":
            return YEE_PARAMS
        if self.scheme == "ai":
            if self.params is None:
                raise ConfigurationError("scheme 'ai' needs trained stencil params")
            return self.params
        raise ConfigurationError("C4 is not a stencil scheme")


# --- initialization -------------------------------------------------------

def init_half_step_H(derivatives: Sequence, h_tau: float):
    """Fourth-order Taylor value of ``(Hx, Hy)`` at ``tau = h_tau/2``.

    ``derivatives[k]`` holds ``(d^k Hx, d^k Hy)`` at ``tau = 0`` for
    ``k = 0..4``; higher entries are ignored.
    """
    if derivatives is None or len(derivatives) < 5:
        raise ConfigurationError("half-step init needs H and its first four time derivatives")
    dt = 0.5 * h_tau
    hx = np.zeros_like(np.asarray(derivatives[0][0], dtype=float))
    hy = np.zeros_like(np.asarray(derivatives[0][1], dtype=float))
    for k in range(5):
        w = dt**k / math.factorial(k)
        hx = hx + w * np.asarray(derivatives[k][0], dtype=float)
        hy = hy + w * np.asarray(derivatives[k][1], dtype=float)
    return hx, hy


def fourth_order_laplacian(Ez: np.ndarray, h: float) -> np.ndarray:
    """Explicit fourth-order Laplacian of ``Ez`` with odd reflection across the faces.

    Odd reflection is accurate here because ``Ez`` and its even normal
    derivatives vanish on the faces; the face values of the result are zero.
    """
    ext = np.pad(Ez, 1, mode="reflect", reflect_type="odd")
    ext = np.pad(ext, 1, mode="reflect", reflect_type="odd")
    c = ext[2:-2, 2:-2]
    out = np.zeros_like(c)
    for lo2, lo1, hi1, hi2 in (
        (ext[:-4, 2:-2], ext[1:-3, 2:-2], ext[3:-1, 2:-2], ext[4:, 2:-2]),
        (ext[2:-2, :-4], ext[2:-2, 1:-3], ext[2:-2, 3:-1], ext[2:-2, 4:]),
    ):
        out += (-lo2 + 16.0 * lo1 - 30.0 * c + 16.0 * hi1 - hi2) / (12.0 * h * h)
    out[0, :] = out[-1, :] = out[:, 0] = out[:, -1] = 0.0
    return out


def initial_state(grid: StaggeredGrid, h_tau: float, mode=None, *, Ez0=None,
                  h_derivatives=None, lapEz0=None) -> EMStateTM:
    """Build the state at ``n = 0`` from an eigenmode or from raw data.

    With ``mode`` (an :class:`~compact_maxwell.analytic.EigenmodeSolution`)
    everything comes from the closed form; otherwise ``Ez0`` and the Taylor
    derivatives of ``H`` are required and ``lapEz0`` defaults to the discrete
    fourth-order Laplacian of ``Ez0``.
    """
    if mode is not None:
        X, Y = grid.mesh("Ez")
        Ez0 = mode.ez(0.0, X, Y)
        h_derivatives = mode.h_time_derivatives(grid)
        if lapEz0 is None:
            lapEz0 = mode.initial_laplacian_ez(grid)
    if Ez0 is None:
        raise ConfigurationError("need an eigenmode or explicit Ez0")
    Hx, Hy = init_half_step_H(h_derivatives, h_tau)
    Ez = np.array(Ez0, dtype=float)
    # perfect conductor: Ez vanishes on the faces (closed forms leave round-off there)
    Ez[0, :] = Ez[-1, :] = Ez[:, 0] = Ez[:, -1] = 0.0
    if lapEz0 is None:
        lapEz0 = fourth_order_laplacian(Ez, grid.h)
    lap = np.array(lapEz0, dtype=float)
    lap[0, :] = lap[-1, :] = lap[:, 0] = lap[:, -1] = 0.0
    return EMStateTM(0, h_tau, Ez, Hx, Hy, lap)


# --- compact fourth-order scheme -----------------------------------------

class C4Stepper:
    """Two-stage compact update.

    Stage 1 solves ``P1 E* = kappa^2 Z curl[(1 + 2/r^2) H + h^2/12 Delta_h H]``
    for ``E* = (E^{n+1} - E^n)/h_tau`` and advances the carried Laplacian of
    ``Ez``; stage 2 solves one problem per magnetic component with the
    known-Laplacian right-hand side built from that carried Laplacian.
    """

    def __init__(self, grid: StaggeredGrid, h_tau: float, Z: float = 1.0,
                 tol: float = 1e-10, max_iter: int = 200, warm_start: bool = True):
        self.grid, self.h_tau, self.Z = grid, h_tau, Z
        self.tol, self.max_iter, self.warm_start = tol, max_iter, warm_start
        self.h = grid.h
        self.kappa2 = 24.0 / h_tau**2
        self.q = 1.0 + self.kappa2 * self.h**2 / 12.0
        self.curl = Curl2D(grid)
        self.P = {c: assemble_p1(grid, c, h_tau) for c in ("Ez", "Hx", "Hy")}
        self._guess = {c: None for c in self.P}
        self.iterations: list[tuple[int, int, int]] = []

    def _solve(self, comp: str, rhs: np.ndarray, n: int) -> np.ndarray:
        try:
            u, it = solve_modified_helmholtz(
                self.P[comp], rhs, self.tol, self.max_iter,
                self._guess[comp] if self.warm_start else None,
            )
        except ConvergenceError as exc:
            raise StepError(n, exc) from exc
        self._guess[comp] = u
        self._iters.append(it)
        return u

    def step(self, state: EMStateTM) -> EMStateTM:
        h, ht, Z, k2, q = self.h, self.h_tau, self.Z, self.kappa2, self.q
        Ez, Hx, Hy = state.Ez, state.Hx, state.Hy
        lapEz = state.lapEz
        if lapEz is None:
            raise ConfigurationError("C4 needs the carried Laplacian of Ez")
        d = self.curl
        self._iters = []

        # stage 1: electric field
        Gx = q * Hx[1:-1, :] + h * h / 12.0 * lap_with_closure(Hx, h, (DIRICHLET, NEUMANN))
        Gy = q * Hy[:, 1:-1] + h * h / 12.0 * lap_with_closure(Hy, h, (NEUMANN, DIRICHLET))
        rhs = k2 * Z * (d.d_half.apply(Gy, 0) - d.d_half.apply(Gx, 1))
        e_star = self._solve("Ez", rhs, state.n)
        Ez_new = Ez.copy()
        Ez_new[1:-1, 1:-1] += ht * e_star
        lap_new = np.zeros_like(lapEz)
        lap_new[1:-1, 1:-1] = (
            lapEz[1:-1, 1:-1]
            + k2 * (Ez_new[1:-1, 1:-1] - Ez[1:-1, 1:-1])
            - Z * (24.0 / ht) * d.curl(Hx, Hy)
        )

        # stage 2: magnetic field, F = -(1/Z) dEz/dy and (1/Z) dEz/dx
        c2 = k2 * h * h / 12.0
        Fx = -d.dy_ez(Ez_new)[1:-1, :] / Z
        LFx = -d.dy_ez(lap_new)[1:-1, :] / Z
        hx_star = self._solve("Hx", k2 * q * Fx + c2 * LFx, state.n)
        Fy = d.dx_ez(Ez_new)[:, 1:-1] / Z
        LFy = d.dx_ez(lap_new)[:, 1:-1] / Z
        hy_star = self._solve("Hy", k2 * q * Fy + c2 * LFy, state.n)

        Hx_new = Hx.copy()
        Hx_new[1:-1, :] += ht * hx_star
        Hy_new = Hy.copy()
        Hy_new[:, 1:-1] += ht * hy_star
        self.iterations.append(tuple(self._iters))
        return EMStateTM(state.n + 1, ht, Ez_new, Hx_new, Hy_new, lap_new)

    __call__ = step

    def mean_iterations(self) -> float:
        if not self.iterations:
            return 0.0
        return float(np.mean(self.iterations))


_c4_cache: dict = {}


def step_c4(state: EMStateTM, config: RunConfig) -> EMStateTM:
    """One C4 step; the stepper for ``config`` is cached across calls."""
    key = (config.N, config.h_tau, config.Z, config.cg_tol, config.cg_max_iter)
    stepper = _c4_cache.get(key)
    if stepper is None:
        grid = build_tm_grid(config.N)
        stepper = _c4_cache[key] = C4Stepper(grid, config.h_tau, config.Z,
                                             config.cg_tol, config.cg_max_iter)
    return stepper.step(state)


# --- explicit schemes ------------------------------------------------------

def _one_sided_weights() -> np.ndarray:
    # derivative at a midpoint from the 5 nearest samples on one side
    offsets = np.array([-0.5, 0.5, 1.5, 2.5, 3.5])
    V = np.vander(offsets, 5, increasing=True).T
    rhs = np.zeros(5)
    rhs[1] = 1.0
    return np.linalg.solve(V, rhs)


ONE_SIDED = _one_sided_weights()

# quartic extrapolation of the sample one spacing outside the mesh
GHOST_WEIGHTS = np.array([5.0, -10.0, 10.0, -5.0, 1.0])


def _with_ghosts(u: np.ndarray) -> np.ndarray:
    lo = np.tensordot(GHOST_WEIGHTS, u[..., :5, :], axes=([0], [-2]))
    hi = np.tensordot(GHOST_WEIGHTS, u[..., ::-1, :][..., :5, :], axes=([0], [-2]))
    return np.concatenate([lo[..., None, :], u, hi[..., None, :]], axis=-2)


def _diff_x(u: np.ndarray, p: StencilParams, h: float) -> np.ndarray:
    """Stencil derivative along axis -2 at the midpoints, rows 1..M-2 of axis -1."""
    m = u.shape[-2]
    mid = u[..., 1:-1]
    out = p.c * (mid[..., 1:, :] - mid[..., :-1, :])
    if p.a != 0.0:
        side = u[..., 2:] + u[..., :-2]
        out = out + p.a * (side[..., 1:, :] - side[..., :-1, :])
    if p.wide:
        if m < 6:
            raise ConfigurationError("wide stencil needs at least 6 nodes per axis")
        # the wide taps of the first and last midpoint reach one sample past
        # the mesh; that sample is extrapolated so the rows stay linear in (b, d)
        ext = _with_ghosts(u)
        emid = ext[..., 1:-1]
        wide = p.d * (emid[..., 3:, :] - emid[..., :-3, :])
        if p.b != 0.0:
            eside = ext[..., 2:] + ext[..., :-2]
            wide = wide + p.b * (eside[..., 3:, :] - eside[..., :-3, :])
        out = out + wide
    return out / h


def stencil_diff(u: np.ndarray, params: StencilParams, axis: int, h: float) -> np.ndarray:
    """First derivative of a field staggered along ``axis`` (``-2`` = x, ``-1`` = y).

    Output sits on the midpoints along ``axis`` and on the rows ``1..M-2`` of
    the other axis, which is where the off-row taps of the stencil exist.
    Where a wide tap would leave the mesh it reads a quartic extrapolation
    from the five nearest samples.  For the fourth-order stencil that row is
    the one-sided five-point difference; narrow stencils never touch it, so
    the Yee weights reproduce Yee bit for bit.
    """
    if axis in (-2, u.ndim - 2):
        return _diff_x(u, params, h)
    if axis in (-1, u.ndim - 1):
        return np.swapaxes(_diff_x(np.swapaxes(u, -1, -2), params, h), -1, -2)
    raise ValueError(f"axis must be one of the last two, got {axis}")


def _yee_dx(u, h):
    return (u[..., 1:, 1:-1] - u[..., :-1, 1:-1]) / h


def _yee_dy(u, h):
    return (u[..., 1:-1, 1:] - u[..., 1:-1, :-1]) / h


def _leapfrog(state: EMStateTM, dx: Callable, dy: Callable, Z: float) -> EMStateTM:
    ht = state.h_tau
    Ez = state.Ez.copy()
    Ez[..., 1:-1, 1:-1] += ht * (Z * (dx(state.Hy) - dy(state.Hx)))
    Hx = state.Hx.copy()
    Hx[..., 1:-1, :] -= ht * (dy(Ez) / Z)
    Hy = state.Hy.copy()
    Hy[..., :, 1:-1] += ht * (dx(Ez) / Z)
    return EMStateTM(state.n + 1, ht, Ez, Hx, Hy, None)


def _h_and_Z(h, Z):
    if isinstance(h, RunConfig):
        return h.h, h.Z
    return float(h), Z


def step_yee2(state: EMStateTM, h, Z: float = 1.0) -> EMStateTM:
    """Classical Yee leapfrog with two-point differences.

    ``h`` is the mesh width or a :class:`RunConfig` supplying ``h`` and ``Z``.
    """
    h, Z = _h_and_Z(h, Z)
    return _leapfrog(state, lambda u: _yee_dx(u, h), lambda u: _yee_dy(u, h), Z)


def step_explicit_stencil(state: EMStateTM, params: StencilParams, h,
                          Z: float = 1.0) -> EMStateTM:
    """Yee leapfrog with the ``(a, b, c, d)`` stencil; fields may carry batch axes."""
    h, Z = _h_and_Z(h, Z)
    return _leapfrog(
        state,
        lambda u: stencil_diff(u, params, -2, h),
        lambda u: stencil_diff(u, params, -1, h),
        Z,
    )


def make_stepper(config: RunConfig, grid: StaggeredGrid | None = None):
    """A callable ``state -> state`` for ``config.scheme`` (C4 exposes stats)."""
    grid = grid or build_tm_grid(config.N)
    if config.scheme == "c4":
        return C4Stepper(grid, config.h_tau, config.Z, config.cg_tol, config.cg_max_iter)
    params = config.stencil()
    h, Z = grid.h, config.Z
    if config.scheme == "yee":
        return lambda s: step_yee2(s, h, Z)
    return lambda s: step_explicit_stencil(s, params, h, Z)


@dataclass
class MarchResult:
    state: EMStateTM
    steps: int
    status: str = "ok"
    message: str = ""
    error: float = float("nan")
    cg_iters_mean: float = float("nan")
    extra: dict = field(default_factory=dict)


def march(state: EMStateTM, stepper: Callable, n_steps: int,
          observer: Callable | None = None, blowup_factor: float = 1e6) -> EMStateTM:
    """Advance ``n_steps``; ``observer(state)`` sees the initial and every new state.

    Raises :class:`BlowupError` once a field turns non-finite or exceeds
    ``blowup_factor`` times the initial max-norm.
    """
    scale = max(state.max_abs(), 1e-300)
    if observer is not None:
        observer(state)
    for _ in range(n_steps):
        state = stepper(state)
        m = state.max_abs()
        if not math.isfinite(m) or m > blowup_factor * scale:
            raise BlowupError(state.n, m)
        if observer is not None:
            observer(state)
    return state
