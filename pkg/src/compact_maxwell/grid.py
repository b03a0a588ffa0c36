"""Staggered (Yee) meshes on the unit square / cube.

Every field component lives on a tensor-product node set.  Along each axis a
component sits either on the integer nodes ``x_i = i/N`` (``N + 1`` nodes) or on
the half nodes ``x_{i+1/2} = (i + 1/2)/N`` (``N`` nodes).  The boundary type of
the time derivative of a component on a face follows from that staggering:

* integer axis -> the component has nodes on the face, Dirichlet data there;
* half axis    -> no node on the face, a Neumann relation closed with ghosts
  at ``x_{-1/2}`` / ``x_{N+1/2}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

AXES = "xyz"

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
INTERIOR = "interior"

TM_OFFSETS = {
    "Ez": (0.0, 0.0),
    "Hx": (0.0, 0.5),
    "Hy": (0.5, 0.0),
}

OFFSETS_3D = {
    "Ex": (0.5, 0.0, 0.0),
    "Ey": (0.0, 0.5, 0.0),
    "Ez": (0.0, 0.0, 0.5),
    "Hx": (0.0, 0.5, 0.5),
    "Hy": (0.5, 0.0, 0.5),
    "Hz": (0.5, 0.5, 0.0),
}


class InvalidGridError(ValueError):
    pass


@dataclass(frozen=True)
class NodeClass:
    """Boundary classification of a single node.

    ``kind`` is ``"dirichlet"`` for nodes lying on a face, ``"neumann"`` for
    nodes strictly inside the domain whose stencil reaches a ghost across a
    Neumann face, and ``"interior"`` otherwise.  ``faces`` lists the faces
    involved (``"x0"``, ``"x1"``, ...).
    """

    kind: str
    faces: tuple[str, ...] = ()

    @property
    def is_interior(self) -> bool:
        """True when the node lies in the open domain ``(0, 1)^d``."""
        return self.kind != DIRICHLET


@dataclass(frozen=True)
class StaggeredGrid:
    dim: int
    N: int
    offsets: Mapping[str, tuple[float, ...]] = field(repr=False)

    def __post_init__(self):
        if self.N < 2:
            raise InvalidGridError(f"need N >= 2 cells per axis, got N={self.N}")
        object.__setattr__(self, "offsets", MappingProxyType(dict(self.offsets)))

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def components(self) -> tuple[str, ...]:
        return tuple(self.offsets)

    def _offsets(self, component: str) -> tuple[float, ...]:
        try:
            return self.offsets[component]
        except KeyError:
            raise KeyError(
                f"unknown component {component!r}; grid has {self.components}"
            ) from None

    def shape(self, component: str) -> tuple[int, ...]:
        return tuple(self.N + 1 if o == 0 else self.N for o in self._offsets(component))

    def size(self, component: str) -> int:
        return int(np.prod(self.shape(component)))

    def axis_kinds(self, component: str) -> tuple[str, ...]:
        """Face type of ``component`` on the pair of faces normal to each axis."""
        return tuple(DIRICHLET if o == 0 else NEUMANN for o in self._offsets(component))

    def coords(self, component: str, axis: int) -> np.ndarray:
        """1D coordinates of ``component`` along ``axis``; ``i/N`` keeps x_N == 1."""
        off = self._offsets(component)[axis]
        n = self.shape(component)[axis]
        return (np.arange(n) + off) / self.N

    def mesh(self, component: str) -> tuple[np.ndarray, ...]:
        return np.meshgrid(
            *(self.coords(component, a) for a in range(self.dim)), indexing="ij"
        )

    def interior_slices(self, component: str) -> tuple[slice, ...]:
        """Slices selecting the unknowns of the elliptic problem for ``component``."""
        return tuple(
            slice(1, self.N) if k == DIRICHLET else slice(0, self.N)
            for k in self.axis_kinds(component)
        )

    def interior_shape(self, component: str) -> tuple[int, ...]:
        return tuple(
            self.N - 1 if k == DIRICHLET else self.N for k in self.axis_kinds(component)
        )

    def interior_mask(self, component: str) -> np.ndarray:
        mask = np.zeros(self.shape(component), dtype=bool)
        mask[self.interior_slices(component)] = True
        return mask

    def linear_index(self, component: str, index) -> int:
        """Lexicographic position of ``index`` (last axis fastest)."""
        return int(np.ravel_multi_index(tuple(index), self.shape(component)))


def build_tm_grid(N: int) -> StaggeredGrid:
    """2D transverse-magnetic grid carrying ``Ez``, ``Hx`` and ``Hy``."""
    return StaggeredGrid(dim=2, N=N, offsets=TM_OFFSETS)


def build_3d_grid(N: int) -> StaggeredGrid:
    return StaggeredGrid(dim=3, N=N, offsets=OFFSETS_3D)


def classify_node(grid: StaggeredGrid, component: str, index) -> NodeClass:
    index = tuple(int(i) for i in index)
    shape = grid.shape(component)
    if len(index) != len(shape) or any(i < 0 or i >= n for i, n in zip(index, shape)):
        raise IndexError(f"index {index} out of range for {component} with shape {shape}")

    dirichlet, neumann = [], []
    for axis, (i, n, kind) in enumerate(zip(index, shape, grid.axis_kinds(component))):
        if i == 0 or i == n - 1:
            face = f"{AXES[axis]}{0 if i == 0 else 1}"
            (dirichlet if kind == DIRICHLET else neumann).append(face)
    if dirichlet:
        return NodeClass(DIRICHLET, tuple(dirichlet))
    if neumann:
        return NodeClass(NEUMANN, tuple(neumann))
    return NodeClass(INTERIOR)
