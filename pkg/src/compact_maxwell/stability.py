"""Amplification roots, spectral intervals, CFL limits and empirical blowup bisection."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .analytic import EigenmodeSolution
from .elliptic import R_POSITIVITY, apply_p2, assemble_p1
from .grid import build_tm_grid
from .operators import a_inverse_norm
from .schemes import BlowupError, RunConfig, initial_state, make_stepper, march


class BracketError(ValueError):
    pass


@dataclass(frozen=True)
class AmplificationResult:
    mu: float
    roots: tuple[complex, complex]
    stable: bool

    @property
    def moduli(self) -> tuple[float, float]:
        return abs(self.roots[0]), abs(self.roots[1])


def amplification_roots(mu: float) -> AmplificationResult:
    """Roots of ``sigma^2 - sigma (2 - mu^2) + 1 = 0`` for real ``mu = lambda h_tau``."""
    mu = float(mu)
    b = 2.0 - mu * mu
    disc = b * b - 4.0
    if disc <= 0.0:
        s = 0.5 * math.sqrt(-disc)
        roots = (complex(0.5 * b, s), complex(0.5 * b, -s))
    else:
        # avoid cancellation in the small root; the product is 1
        big = 0.5 * (b + math.copysign(math.sqrt(disc), b))
        roots = (complex(big), complex(1.0 / big))
    return AmplificationResult(mu, roots, abs(mu) <= 2.0)


def cfl_limit(dim: int, a_inv_norm: float) -> float:
    """Sufficient CFL bound ``1 / (sqrt(dim) ||A^-1||)``."""
    if a_inv_norm <= 0:
        raise ValueError("a_inv_norm must be positive")
    return 1.0 / (math.sqrt(dim) * a_inv_norm)


@dataclass(frozen=True)
class SpectrumBounds:
    """Intervals for the spectra of ``(h_tau^2/24) P1`` and ``-(h_tau^2/24) P2``."""

    r: float
    p1: tuple[float, float]
    minus_p2: tuple[float, float]

    @property
    def positive(self) -> bool:
        return self.r < R_POSITIVITY


def p_spectrum_bounds(r: float) -> SpectrumBounds:
    if r <= 0:
        raise ValueError("r must be positive")
    base = 1.0 + 2.0 / r**2
    return SpectrumBounds(r, (base - r**2 / 6.0, base + r**2 / 2.0), (2.0 / r**2, base))


def extreme_eigenvalues(apply, shape) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric operator on arrays of ``shape``."""
    n = int(np.prod(shape))
    lin = LinearOperator((n, n), matvec=lambda v: apply(v.reshape(shape)).ravel(), dtype=float)
    lo = eigsh(lin, k=1, which="SA", return_eigenvectors=False, tol=1e-10)[0]
    hi = eigsh(lin, k=1, which="LA", return_eigenvectors=False, tol=1e-10)[0]
    return float(lo), float(hi)


def measured_p_spectra(r: float, N: int = 16, component: str = "Ez") -> SpectrumBounds:
    """Extreme eigenvalues of the assembled scaled ``P1`` and ``-P2``."""
    grid = build_tm_grid(N)
    h_tau = r * grid.h
    op = assemble_p1(grid, component, h_tau)
    scale = h_tau**2 / 24.0
    p1 = extreme_eigenvalues(lambda u: scale * op.apply(u), op.shape)
    sl = grid.interior_slices(component)

    def minus_p2(u):
        full = np.zeros(grid.shape(component))
        full[sl] = u
        return scale * apply_p2(op, full)

    p2 = extreme_eigenvalues(minus_p2, op.shape)
    return SpectrumBounds(r, p1, p2)


@dataclass(frozen=True)
class CflReport:
    dim: int
    theoretical: float
    bracket: tuple[float, float]
    scheme: str = ""


def growth_ratio(scheme: str, r: float, N: int = 64, kx: int = 2, ky: int = 2,
                 steps: int = 200, perturbation: float = 1.0, seed: int = 0,
                 threshold: float = 1e3) -> float:
    """Max-norm growth over ``steps`` from a randomly perturbed eigenmode (inf once past ``threshold``)."""
    cfg = RunConfig(N=N, r=r, kx=kx, ky=ky, scheme=scheme)
    grid = build_tm_grid(N)
    state = initial_state(grid, cfg.h_tau, EigenmodeSolution(kx, ky))
    if perturbation:
        rng = np.random.default_rng(seed)
        scale = perturbation * state.max_abs()
        state.Ez[1:-1, 1:-1] += scale * rng.uniform(-1, 1, state.Ez[1:-1, 1:-1].shape)
        state.Hx[1:-1, :] += scale * rng.uniform(-1, 1, state.Hx[1:-1, :].shape)
        state.Hy[:, 1:-1] += scale * rng.uniform(-1, 1, state.Hy[:, 1:-1].shape)
    start = state.max_abs()
    try:
        end = march(state, make_stepper(cfg, grid), steps, blowup_factor=threshold)
    except BlowupError:
        return math.inf
    return end.max_abs() / start


def is_unstable(scheme: str, r: float, threshold: float = 1e3, **kw) -> bool:
    return growth_ratio(scheme, r, threshold=threshold, **kw) > threshold


def empirical_blowup_bisect(scheme: str, r_lo: float, r_hi: float, tol: float = 0.01,
                            dim: int = 2, **kw) -> CflReport:
    """Bracket the stability threshold in ``r`` to width ``<= tol``.

    ``r_lo`` must be stable and ``r_hi`` unstable; ``r_lo == r_hi`` gives a
    zero-width bracket when that value is stable.
    """
    N = kw.get("N", 64)
    theory = float(cfl_limit(dim, a_inverse_norm(N)))
    lo_bad = is_unstable(scheme, r_lo, **kw)
    if r_lo == r_hi:
        if lo_bad:
            raise BracketError(f"degenerate range r={r_lo} is unstable")
        return CflReport(dim, theory, (r_lo, r_hi), scheme)
    hi_bad = is_unstable(scheme, r_hi, **kw)
    if lo_bad == hi_bad:
        state = "unstable" if lo_bad else "stable"
        raise BracketError(f"both ends of [{r_lo}, {r_hi}] are {state}")
    lo, hi = r_lo, r_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if is_unstable(scheme, mid, **kw):
            hi = mid
        else:
            lo = mid
    return CflReport(dim, theory, (lo, hi), scheme)


def dispersion_mu(r: float, theta_x: float, theta_y: float, params=None) -> float:
    """``mu = lambda h_tau`` of a plane wave under the Yee / stencil spatial operator.

    ``theta`` are the phase angles per cell; for the ``(a, b, c, d)`` stencil
    the symbol of one first difference is ``2i sin(theta/2) (c + 2a cos(theta')
    ) + 2i sin(3 theta/2) (d + 2b cos(theta'))`` with ``theta'`` the other axis.
    """
    if params is None:
        a = b = d = 0.0
        c = 1.0
    else:
        a, b, c, d = params.a, params.b, params.c, params.d

    def sym(t, s):
        return 2 * math.sin(t / 2) * (c + 2 * a * math.cos(s)) + 2 * math.sin(1.5 * t) * (d + 2 * b * math.cos(s))

    return r * math.hypot(sym(theta_x, theta_y), sym(theta_y, theta_x))


__all__ = [
    "AmplificationResult", "BracketError", "CflReport", "SpectrumBounds",
    "amplification_roots", "cfl_limit", "dispersion_mu", "empirical_blowup_bisect",
    "extreme_eigenvalues", "growth_ratio", "is_unstable", "measured_p_spectra",
    "p_spectrum_bounds",
]
