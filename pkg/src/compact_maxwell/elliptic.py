"""Compact fourth-order modified Helmholtz solves.

The scalar problem ``-Delta phi + kappa^2 phi = kappa^2 F`` is discretized by
the compact scheme

    -(Delta_h + h^2/6 Upsilon_h) phi + kappa^2 (1 + kappa^2 h^2/12) phi = rhs

on the unknown block of one field component.  Dirichlet faces are eliminated
into the right-hand side; Neumann faces are closed with a ghost layer
``ghost = first_interior + offset`` so the operator acting on the unknowns
stays symmetric positive definite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import DIRICHLET, NEUMANN, StaggeredGrid
from .operators import (
    TensorOperator,
    compact_laplacian,
    d2_full,
    lap_with_closure,
    selection,
)

# r = h_tau / h below this keeps the P1 lower spectral estimate positive
R_POSITIVITY = math.sqrt(3.0 + math.sqrt(21.0))


class PositivityError(ValueError):
    pass


class MissingDataError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class CompactHelmholtzOperator:
    """``P1`` restricted to the unknowns of one component.

    Parameters
    ----------
    grid, component
        The staggered grid and the component whose mesh carries the unknowns.
    kappa2
        The (positive) Helmholtz shift.  In the time stepper this is
        ``24 / h_tau**2``.
    """

    def __init__(self, grid: StaggeredGrid, component: str, kappa2: float,
                 h_tau: float | None = None):
        if not kappa2 > 0:
            raise ValueError(f"kappa^2 must be positive, got {kappa2}")
        self.grid = grid
        self.component = component
        self.kappa2 = float(kappa2)
        self.h_tau = h_tau
        self.h = grid.h
        self.kinds = grid.axis_kinds(component)
        self.shape = grid.interior_shape(component)
        self.shift = self.kappa2 * (1.0 + self.kappa2 * self.h**2 / 12.0)
        lap = compact_laplacian(self.shape, self.h, self.kinds)
        self.op = TensorOperator(
            self.shape, tuple((-c, f) for c, f in lap.terms) + ((self.shift, {}),)
        )
        self._full = None

    @property
    def r(self) -> float | None:
        return None if self.h_tau is None else self.h_tau / self.h

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.op.apply(u)

    __call__ = apply

    # --- boundary data -------------------------------------------------

    def extend(self, interior: np.ndarray | None = None, boundary: np.ndarray | None = None,
               ghost_offsets: dict | None = None) -> np.ndarray:
        """Full field plus one ghost layer on every Neumann axis.

        ``boundary`` supplies the Dirichlet face values (a full component
        array; its interior entries are ignored).  ``ghost_offsets`` maps a
        face id such as ``"y0"`` to the additive offset of that face's ghosts.
        """
        full = np.zeros(self.grid.shape(self.component))
        if boundary is not None:
            full[...] = boundary
        sl = self.grid.interior_slices(self.component)
        full[sl] = 0.0 if interior is None else interior
        ext = full
        for axis, kind in enumerate(self.kinds):
            if kind != NEUMANN:
                continue
            lo = np.take(ext, [0], axis=axis)
            hi = np.take(ext, [-1], axis=axis)
            if ghost_offsets:
                lo = lo + _face_offset(ghost_offsets, axis, 0, lo.shape)
                hi = hi + _face_offset(ghost_offsets, axis, 1, hi.shape)
            ext = np.concatenate([lo, ext, hi], axis=axis)
        return ext

    def _full_operator(self) -> TensorOperator:
        if self._full is None:
            ext_shape = tuple(
                n + 2 if k == NEUMANN else n
                for n, k in zip(self.grid.shape(self.component), self.kinds)
            )
            d2 = [d2_full(m, self.h) for m in ext_shape]
            rr = [selection(m - 2, m, 1) for m in ext_shape]
            dim = len(ext_shape)
            terms = []
            for s in range(dim):
                f = {a: rr[a] for a in range(dim)}
                f[s] = d2[s]
                terms.append((-1.0, f))
            for s in range(dim):
                for t in range(s + 1, dim):
                    f = {a: rr[a] for a in range(dim)}
                    f[s], f[t] = d2[s], d2[t]
                    terms.append((-self.h**2 / 6.0, f))
            terms.append((self.shift, {a: rr[a] for a in range(dim)}))
            self._full = TensorOperator(ext_shape, tuple(terms))
        return self._full

    def apply_extended(self, ext: np.ndarray) -> np.ndarray:
        """Apply the compact stencil to an extended field (ghosts included)."""
        return self._full_operator().apply(ext)

    def boundary_contribution(self, boundary: np.ndarray | None = None,
                              ghost_offsets: dict | None = None) -> np.ndarray:
        """The affine part of the stencil coming from face and ghost data."""
        return self.apply_extended(self.extend(None, boundary, ghost_offsets))


def _face_offset(offsets: dict, axis: int, side: int, shape):
    val = np.asarray(offsets.get(f"{'xyz'[axis]}{side}", 0.0), dtype=float)
    if val.ndim and val.shape != shape:
        val = np.expand_dims(val, axis)
    return np.broadcast_to(val, shape)


def assemble_helmholtz(grid: StaggeredGrid, component: str, kappa2: float) -> CompactHelmholtzOperator:
    return CompactHelmholtzOperator(grid, component, kappa2)


def assemble_p1(grid: StaggeredGrid, component: str, h_tau: float) -> CompactHelmholtzOperator:
    """``P1`` with ``kappa^2 = 24 / h_tau^2``; refuses CFL numbers past positivity."""
    r = h_tau / grid.h
    if not r > 0:
        raise ValueError(f"h_tau must be positive, got {h_tau}")
    if r >= R_POSITIVITY:
        raise PositivityError(
            f"r = {r:.6g} >= sqrt(3 + sqrt(21)) = {R_POSITIVITY:.6g}; P1 positivity not guaranteed"
        )
    return CompactHelmholtzOperator(grid, component, 24.0 / h_tau**2, h_tau=h_tau)


def apply_p2(op: CompactHelmholtzOperator, F: np.ndarray, lap_F: np.ndarray | None = None,
             mode: str = "discrete") -> np.ndarray:
    """Right-hand side ``kappa^2 (1 + kappa^2 h^2/12) F + kappa^2 h^2/12 * LapF``.

    ``F`` is a full component field (face values included).  In ``"discrete"``
    mode ``LapF = Delta_h F`` with mirror ghosts on Neumann faces (this is
    ``-P2 F``); in ``"known"`` mode ``lap_F`` is supplied, on the unknown block
    or on the full mesh.
    """
    F = np.asarray(F, dtype=float)
    sl = op.grid.interior_slices(op.component)
    full_shape = op.grid.shape(op.component)
    if F.shape == full_shape:
        F_int = F[sl]
    elif F.shape == op.shape and mode == "known":
        F_int = F
    else:
        raise ValueError(f"F has shape {F.shape}, expected {full_shape}")
    if mode == "discrete":
        if F.shape != full_shape:
            raise ValueError("discrete mode needs F on the full mesh")
        lap = lap_with_closure(F, op.h, op.kinds)
    elif mode == "known":
        if lap_F is None:
            raise MissingDataError("known-Laplacian mode needs lap_F")
        lap = np.asarray(lap_F, dtype=float)
        if lap.shape == full_shape:
            lap = lap[sl]
    else:
        raise ValueError(f"unknown rhs mode {mode!r}")
    k2 = op.kappa2
    return k2 * (1.0 + k2 * op.h**2 / 12.0) * F_int + k2 * op.h**2 / 12.0 * lap


def neumann_ghost_closure(h: float, method: str, side: int = 0, g=0.0, *,
                          phi_xxx=None, tangential=None, kappa2: float | None = None,
                          F_normal=None):
    """Offset ``gamma`` with ``ghost = first_interior + gamma`` on a Neumann face.

    ``g`` is the outward-axis derivative ``d phi / d n_axis`` on the face (the
    derivative along the positive axis direction), ``side`` 0 for the low face
    and 1 for the high one.

    ``"mirror"``: homogeneous data, ``gamma = 0``.
    ``"taylor"``: needs ``phi_xxx`` on the face.
    ``"equation"``: replaces ``phi_xxx`` using the Helmholtz equation; needs the
    tangential term ``phi_xyy + phi_xzz``, ``kappa2`` and the normal derivative
    ``F_normal`` of the forcing.
    """
    sign = -1.0 if side == 0 else 1.0
    g = np.asarray(g, dtype=float)
    if method == "mirror":
        if np.any(g != 0):
            raise ValueError("mirror closure is only valid for homogeneous Neumann data")
        return np.zeros_like(g)
    if method == "taylor":
        if phi_xxx is None:
            raise MissingDataError("Taylor closure needs phi_xxx on the face")
        third = np.asarray(phi_xxx, dtype=float)
    elif method == "equation":
        if tangential is None or kappa2 is None or F_normal is None:
            raise MissingDataError(
                "equation closure needs tangential, kappa2 and F_normal"
            )
        # phi_xxx = kappa^2 phi_x - kappa^2 F_x - (phi_xyy + phi_xzz)
        third = kappa2 * g - kappa2 * np.asarray(F_normal, dtype=float) - np.asarray(tangential, dtype=float)
    else:
        raise ValueError(f"unknown Neumann closure {method!r}")
    return sign * h * (g + h * h / 24.0 * third)


@dataclass
class EllipticProblem:
    """One scalar modified Helmholtz problem on a component mesh."""

    op: CompactHelmholtzOperator
    F: np.ndarray
    lap_F: np.ndarray | None = None
    boundary: np.ndarray | None = None
    ghost_offsets: dict | None = None

    @property
    def mode(self) -> str:
        return "discrete" if self.lap_F is None else "known"

    def rhs(self) -> np.ndarray:
        rhs = apply_p2(self.op, self.F, self.lap_F, mode=self.mode)
        if self.boundary is not None or self.ghost_offsets:
            rhs = rhs - self.op.boundary_contribution(self.boundary, self.ghost_offsets)
        return rhs

    def solve(self, tol: float = 1e-10, max_iter: int = 200, initial_guess=None):
        u, iters = solve_modified_helmholtz(self.op, self.rhs(), tol, max_iter, initial_guess)
        full = np.zeros(self.op.grid.shape(self.op.component))
        if self.boundary is not None:
            full[...] = self.boundary
        full[self.op.grid.interior_slices(self.op.component)] = u
        return full, iters


def solve_modified_helmholtz(op, rhs: np.ndarray, tol: float = 1e-10, max_iter: int = 200,
                             initial_guess: np.ndarray | None = None,
                             callback: Callable | None = None) -> tuple[np.ndarray, int]:
    """Conjugate gradients for ``op u = rhs`` with a relative residual stop.

    ``op`` is anything with an ``apply`` method (or a plain callable) that is
    symmetric positive definite.  ``callback(k, u, r)`` sees every iterate.
    """
    apply = op.apply if hasattr(op, "apply") else op
    b = np.asarray(rhs, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    u = np.zeros_like(b) if initial_guess is None else np.array(initial_guess, dtype=float)
    r = b - apply(u) if initial_guess is not None else b.copy()
    rr = float(np.vdot(r, r))
    if callback is not None:
        callback(0, u, r)
    if math.sqrt(rr) <= tol * bnorm:
        return u, 0
    p = r.copy()
    for k in range(1, max_iter + 1):
        Ap = apply(p)
        alpha = rr / float(np.vdot(p, Ap))
        u += alpha * p
        r -= alpha * Ap
        rr_new = float(np.vdot(r, r))
        if callback is not None:
            callback(k, u, r)
        if math.sqrt(rr_new) <= tol * bnorm:
            return u, k
        p *= rr_new / rr
        p += r
        rr = rr_new
    res = math.sqrt(rr) / bnorm
    raise ConvergenceError(
        f"CG did not reach tol={tol:g} in {max_iter} iterations (relative residual {res:.3e})",
        residual=res, iterations=max_iter,
    )
