"""Banded 1D difference factors and their tensor-product lifts.

Operators act on fields stored as ``ndarray`` with one array axis per space
axis.  A 1D factor is applied along a chosen axis; a :class:`TensorOperator` is
a sum of products of such factors, i.e. a sum of Kronecker products in the
lexicographic (last axis fastest) linearization, without ever forming them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import DIRICHLET, NEUMANN, StaggeredGrid


class SizeError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class BandedFactor:
    """A banded ``rows x cols`` matrix stored by diagonals.

    ``bands[k][i]`` is the entry in row ``i``, column ``i + k``.  Entries that
    would fall outside the matrix are ignored.
    """

    def __init__(self, shape: tuple[int, int], bands: Mapping[int, np.ndarray], name: str = ""):
        self.shape = (int(shape[0]), int(shape[1]))
        rows = self.shape[0]
        self.bands = {}
        for k, coef in bands.items():
            coef = np.broadcast_to(np.asarray(coef, dtype=float), (rows,)).copy()
            coef.setflags(write=False)
            self.bands[int(k)] = coef
        self.name = name

    def __repr__(self):
        return f"BandedFactor({self.name or '?'}, shape={self.shape})"

    def apply(self, u: np.ndarray, axis: int = 0) -> np.ndarray:
        rows, cols = self.shape
        u = np.moveaxis(np.asarray(u, dtype=float), axis, 0)
        if u.shape[0] != cols:
            raise ShapeError(f"{self!r} expects {cols} entries along axis {axis}, got {u.shape[0]}")
        out = np.zeros((rows,) + u.shape[1:])
        tail = (slice(None),) + (None,) * (u.ndim - 1)
        for k, coef in self.bands.items():
            i0, i1 = max(0, -k), min(rows, cols - k)
            if i1 > i0:
                out[i0:i1] += coef[i0:i1][tail] * u[i0 + k:i1 + k]
        return np.moveaxis(out, 0, axis)

    def dense(self) -> np.ndarray:
        return self.apply(np.eye(self.shape[1]), axis=0)

    def sparse(self) -> sp.csc_matrix:
        return sp.csc_matrix(self.dense())


def d1_matrix(m: int, h: float) -> BandedFactor:
    """Two-point difference from ``m`` nodes to the ``m - 1`` midpoints."""
    if m < 2:
        raise SizeError(f"D1 needs at least 2 nodes, got {m}")
    return BandedFactor((m - 1, m), {0: -1.0 / h, 1: 1.0 / h}, name="D1")


def d2_matrix(m: int, h: float, closure: str = DIRICHLET) -> BandedFactor:
    """Square second-difference matrix on ``m`` unknowns.

    ``closure="dirichlet"`` drops the (known) boundary neighbours; ``"neumann"``
    folds in the mirror ghost ``u_{-1} = u_0`` (and likewise at the far end),
    which keeps the matrix symmetric.
    """
    if m < 1:
        raise SizeError(f"D2 needs at least one node, got {m}")
    diag = np.full(m, -2.0)
    if closure == NEUMANN:
        diag[0] += 1.0
        diag[-1] += 1.0
    elif closure != DIRICHLET:
        raise ValueError(f"unknown closure {closure!r}")
    s = 1.0 / h**2
    return BandedFactor((m, m), {-1: s, 0: diag * s, 1: s}, name=f"D2[{closure}]")


def d2_full(m: int, h: float) -> BandedFactor:
    """Rectangular ``(m - 2) x m`` second difference evaluated at interior rows."""
    s = 1.0 / h**2
    return BandedFactor((m - 2, m), {0: s, 1: -2.0 * s, 2: s}, name="D2full")


def selection(m_out: int, m_in: int, start: int) -> BandedFactor:
    """Restriction picking ``m_out`` consecutive entries starting at ``start``."""
    return BandedFactor((m_out, m_in), {start: 1.0}, name="R")


def identity(m: int) -> BandedFactor:
    return BandedFactor((m, m), {0: 1.0}, name="I")


def pade_matrix(m: int) -> BandedFactor:
    """The ``(m-1) x (m-1)`` left-hand matrix of the staggered Pade derivative."""
    if m < 5:
        raise SizeError(f"Pade pair needs m >= 5 nodes, got {m}")
    n = m - 1
    lower = np.full(n, 1.0)
    diag = np.full(n, 22.0)
    upper = np.full(n, 1.0)
    up2 = np.zeros(n)
    up3 = np.zeros(n)
    lo2 = np.zeros(n)
    lo3 = np.zeros(n)
    # one-sided closure rows: (26, -5, 4, -1) and its reversal
    diag[0], upper[0], up2[0], up3[0] = 26.0, -5.0, 4.0, -1.0
    diag[-1], lower[-1], lo2[-1], lo3[-1] = 26.0, -5.0, 4.0, -1.0
    lower[0] = 0.0
    upper[-1] = 0.0
    bands = {-3: lo3, -2: lo2, -1: lower, 0: diag, 1: upper, 2: up2, 3: up3}
    return BandedFactor((n, n), {k: v / 24.0 for k, v in bands.items()}, name="A")


def assemble_pade_pair(m: int, h: float) -> tuple[BandedFactor, BandedFactor]:
    """Return ``(A, D1)`` with ``A d = D1 f`` a fourth-order staggered derivative."""
    return pade_matrix(m), d1_matrix(m, h)


class PadeDerivative:
    """``delta = A^{-1} D1`` along one axis, with ``A`` factorized once."""

    def __init__(self, m: int, h: float):
        self.m = m
        self.h = h
        self.A, self.D1 = assemble_pade_pair(m, h)
        self._lu = spla.splu(self.A.sparse())
        self.shape = (m - 1, m)

    def __repr__(self):
        return f"PadeDerivative(m={self.m}, h={self.h:g})"

    def apply(self, f: np.ndarray, axis: int = 0) -> np.ndarray:
        rhs = np.moveaxis(self.D1.apply(f, axis), axis, 0)
        shp = rhs.shape
        # splu.solve allocates its own output, so concurrent calls never share scratch
        d = self._lu.solve(np.ascontiguousarray(rhs.reshape(shp[0], -1)))
        return np.moveaxis(d.reshape(shp), 0, axis)

    def dense(self) -> np.ndarray:
        return self.apply(np.eye(self.m), axis=0)


_pade_cache: dict[tuple[int, float], PadeDerivative] = {}


def pade_operator(m: int, h: float) -> PadeDerivative:
    key = (m, float(h))
    op = _pade_cache.get(key)
    if op is None:
        op = _pade_cache[key] = PadeDerivative(m, h)
    return op


def pade_derivative(f: np.ndarray, h: float, axis: int = 0) -> np.ndarray:
    """Fourth-order derivative at the ``m - 1`` midpoints of ``m`` samples."""
    f = np.asarray(f, dtype=float)
    return pade_operator(f.shape[axis], h).apply(f, axis)


def a_inverse_norm(m: int) -> float:
    """Spectral norm of ``A^{-1}`` for the ``m``-node Pade pair."""
    A = pade_matrix(m).dense()
    return 1.0 / np.linalg.svd(A, compute_uv=False)[-1]


@dataclass(frozen=True)
class TensorOperator:
    """``sum_k coef_k * prod_axis factor_{k,axis}``.

    Each term is ``(coef, {axis: factor})``; axes missing from a term carry the
    identity, so every factor in a term must preserve the sizes of the axes it
    does not touch.  ``in_shape`` fixes the field shape the operator accepts.
    """

    in_shape: tuple[int, ...]
    terms: tuple[tuple[float, Mapping[int, object]], ...]

    @property
    def out_shape(self) -> tuple[int, ...]:
        shape = list(self.in_shape)
        if self.terms:
            for axis, f in self.terms[0][1].items():
                shape[axis] = f.shape[0]
        return tuple(shape)

    def apply(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != self.in_shape:
            raise ShapeError(f"operator expects shape {self.in_shape}, got {u.shape}")
        out = np.zeros(self.out_shape)
        for coef, factors in self.terms:
            v = u
            for axis, f in factors.items():
                v = f.apply(v, axis)
            out += coef * v
        return out

    __call__ = apply

    def dense(self) -> np.ndarray:
        """Dense matrix in the lexicographic linearization (testing only)."""
        total = np.zeros((int(np.prod(self.out_shape)), int(np.prod(self.in_shape))))
        for coef, factors in self.terms:
            mats = []
            for axis, n in enumerate(self.in_shape):
                f = factors.get(axis)
                mats.append(np.eye(n) if f is None else f.dense())
            k = mats[0]
            for m in mats[1:]:
                k = np.kron(k, m)
            total += coef * k
        return total


def laplacian(shape: Sequence[int], h: float, closures: Sequence[str]) -> TensorOperator:
    """``Delta_h = D_xx + D_yy (+ D_zz)`` on an interior block."""
    shape = tuple(shape)
    terms = tuple(
        (1.0, {a: d2_matrix(n, h, c)}) for a, (n, c) in enumerate(zip(shape, closures))
    )
    return TensorOperator(shape, terms)


def upsilon(shape: Sequence[int], h: float, closures: Sequence[str]) -> TensorOperator:
    """Mixed term ``sum_{s<t} D_ss D_tt`` (``D_xx D_yy`` in 2D)."""
    shape = tuple(shape)
    d2 = [d2_matrix(n, h, c) for n, c in zip(shape, closures)]
    terms = []
    for s in range(len(shape)):
        for t in range(s + 1, len(shape)):
            terms.append((1.0, {s: d2[s], t: d2[t]}))
    return TensorOperator(shape, tuple(terms))


def compact_laplacian(shape, h, closures) -> TensorOperator:
    """``Delta_h + (h^2/6) Upsilon_h``, the compact nine/nineteen-point Laplacian."""
    lap, ups = laplacian(shape, h, closures), upsilon(shape, h, closures)
    return TensorOperator(
        tuple(shape), lap.terms + tuple((h * h / 6.0 * c, f) for c, f in ups.terms)
    )


def apply_tensor(T: TensorOperator, u: np.ndarray) -> np.ndarray:
    return T.apply(u)


def lap_with_closure(u: np.ndarray, h: float, kinds: Sequence[str]) -> np.ndarray:
    """``Delta_h u`` on the unknown block of a full component field.

    Dirichlet axes read the face values stored in ``u``; Neumann axes use the
    homogeneous mirror ghost.
    """
    u = np.asarray(u, dtype=float)
    pad = [(0, 0) if k == DIRICHLET else (1, 1) for k in kinds]
    ext = np.pad(u, pad, mode="edge")
    core = tuple(slice(1, -1) for _ in kinds)
    out = -2.0 * u.ndim * ext[core]
    for axis in range(u.ndim):
        lo, hi = list(core), list(core)
        lo[axis], hi[axis] = slice(0, -2), slice(2, None)
        out += ext[tuple(lo)] + ext[tuple(hi)]
    return out / (h * h)


class Curl2D:
    """Pade curl pair on the TM grid.

    ``curl(Hx, Hy)`` returns ``delta_x Hy - delta_y Hx`` on the interior ``Ez``
    nodes; ``grad_perp(Ez)`` returns ``(-delta_y Ez, delta_x Ez) / Z`` on the
    full ``Hx`` and ``Hy`` meshes, with only the interior rows meaningful for
    Dirichlet faces.
    """

    def __init__(self, grid: StaggeredGrid):
        if grid.dim != 2 or set(grid.components) != {"Ez", "Hx", "Hy"}:
            raise ShapeError("Curl2D needs a TM grid")
        self.grid = grid
        N, h = grid.N, grid.h
        self.d_half = pade_operator(N, h)       # half nodes -> interior integer nodes
        self.d_int = pade_operator(N + 1, h)    # integer nodes -> half nodes

    def dx_hy(self, Hy: np.ndarray) -> np.ndarray:
        """``delta_x Hy`` on (interior x, all y) integer nodes."""
        return self.d_half.apply(Hy, axis=-2)

    def dy_hx(self, Hx: np.ndarray) -> np.ndarray:
        return self.d_half.apply(Hx, axis=-1)

    def curl(self, Hx: np.ndarray, Hy: np.ndarray) -> np.ndarray:
        N = self.grid.N
        if Hx.shape[-2:] != (N + 1, N) or Hy.shape[-2:] != (N, N + 1):
            raise ShapeError(f"curl expects Hx {(N + 1, N)} and Hy {(N, N + 1)}")
        return self.dx_hy(Hy)[..., :, 1:-1] - self.dy_hx(Hx)[..., 1:-1, :]

    def dx_ez(self, Ez: np.ndarray) -> np.ndarray:
        return self.d_int.apply(Ez, axis=-2)

    def dy_ez(self, Ez: np.ndarray) -> np.ndarray:
        return self.d_int.apply(Ez, axis=-1)

    def grad_perp(self, Ez: np.ndarray, Z: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
        N = self.grid.N
        if Ez.shape[-2:] != (N + 1, N + 1):
            raise ShapeError(f"grad_perp expects Ez of shape {(N + 1, N + 1)}")
        return -self.dy_ez(Ez) / Z, self.dx_ez(Ez) / Z


def build_curl_2d(grid: StaggeredGrid) -> Curl2D:
    return Curl2D(grid)


class Curl3D:
    """Pade ``curl_h`` from the H meshes to the E meshes (3D).

    Each output component is restricted to the nodes whose two tangential
    coordinates are interior, which is where both Pade derivatives land.
    """

    def __init__(self, grid: StaggeredGrid):
        if grid.dim != 3:
            raise ShapeError("Curl3D needs a 3D grid")
        self.grid = grid
        self.d_half = pade_operator(grid.N, grid.h)

    def apply(self, Hx, Hy, Hz):
        d = self.d_half.apply
        ex = d(Hz, 1)[:, :, 1:-1] - d(Hy, 2)[:, 1:-1, :]
        ey = d(Hx, 2)[1:-1, :, :] - d(Hz, 0)[:, :, 1:-1]
        ez = d(Hy, 0)[:, 1:-1, :] - d(Hx, 1)[1:-1, :, :]
        return ex, ey, ez

    def in_shapes(self):
        return tuple(self.grid.shape(c) for c in ("Hx", "Hy", "Hz"))

    def dense(self) -> np.ndarray:
        """Dense matrix of the full block operator (small grids only)."""
        shapes = self.in_shapes()
        sizes = [int(np.prod(s)) for s in shapes]
        cols = []
        for comp, shape in enumerate(shapes):
            for k in range(sizes[comp]):
                fields = [np.zeros(s) for s in shapes]
                fields[comp].flat[k] = 1.0
                cols.append(np.concatenate([o.ravel() for o in self.apply(*fields)]))
        return np.array(cols).T


def build_curl_3d(grid: StaggeredGrid) -> Curl3D:
    return Curl3D(grid)
