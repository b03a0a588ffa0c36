"""Fitting the free stencil parameters ``(a, b, d)`` to exact rollouts.

Training data are short trajectories of high-wavenumber cavity modes on a
coarse mesh.  The loss sums, over samples, the mean absolute error of one,
two and three explicit stencil steps against the exact fields.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .analytic import EigenmodeSolution, exact_tm_fields
from .grid import build_tm_grid
from .schemes import CFL_DEFAULT, EMStateTM, StencilParams, step_explicit_stencil

TRAIN_N = 16
TRAIN_MODES = tuple((kx, ky) for kx in range(12, 16) for ky in range(12, 16))
ROLLOUT = 3


class TrainingDataError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, message: str, trace: list):
        super().__init__(message)
        self.trace = trace


@dataclass
class TrainingSet:
    """Batched samples: ``inputs[f]`` has shape ``(S, *field_shape)``, ``targets[k][f]`` likewise."""

    inputs: tuple[np.ndarray, np.ndarray, np.ndarray]
    targets: list[tuple[np.ndarray, np.ndarray, np.ndarray]]
    modes: np.ndarray          # (S, 2)
    steps: np.ndarray          # (S,)
    h: float
    r: float
    T: float
    Z: float = 1.0

    @property
    def h_tau(self) -> float:
        return self.r * self.h

    def __len__(self) -> int:
        return len(self.steps)

    def subset(self, idx) -> "TrainingSet":
        idx = np.asarray(idx, dtype=int)
        return TrainingSet(
            tuple(f[idx] for f in self.inputs),
            [tuple(f[idx] for f in t) for t in self.targets],
            self.modes[idx], self.steps[idx], self.h, self.r, self.T, self.Z,
        )

    def split(self, seed: int = 0, fractions=(0.8, 0.1, 0.1)):
        """Seeded shuffle into train / validation / test subsets."""
        n = len(self)
        perm = np.random.default_rng(seed).permutation(n)
        a = int(round(fractions[0] * n))
        b = a + int(round(fractions[1] * n))
        return self.subset(perm[:a]), self.subset(perm[a:b]), self.subset(perm[b:])


def generate_training_set(r: float = CFL_DEFAULT, T: float = 1.0, Z: float = 1.0,
                          N: int = TRAIN_N, modes: Sequence = TRAIN_MODES) -> TrainingSet:
    if not (r > 0 and T > 0):
        raise TrainingDataError("r and T must be positive")
    grid = build_tm_grid(N)
    h_tau = r * grid.h
    n_tau = int(round(T / h_tau))
    if n_tau < ROLLOUT:
        raise TrainingDataError(f"T={T} gives {n_tau} steps; need at least {ROLLOUT}")
    per_mode = n_tau - ROLLOUT + 1
    inputs = [[], [], []]
    targets = [[[], [], []] for _ in range(ROLLOUT)]
    mode_col, step_col = [], []
    for kx, ky in modes:
        mode = EigenmodeSolution(kx, ky, Z)
        frames = [exact_tm_fields(mode, n * h_tau, grid, h_tau) for n in range(n_tau + 1)]
        for n in range(per_mode):
            for f in range(3):
                inputs[f].append(frames[n][f])
                for k in range(ROLLOUT):
                    targets[k][f].append(frames[n + k + 1][f])
            mode_col.append((kx, ky))
            step_col.append(n)
    return TrainingSet(
        tuple(np.stack(x) for x in inputs),
        [tuple(np.stack(x) for x in t) for t in targets],
        np.array(mode_col, dtype=int), np.array(step_col, dtype=int),
        grid.h, r, T, Z,
    )


def _sample_mae(a, b) -> np.ndarray:
    return sum(np.mean(np.abs(u - v), axis=(-2, -1)) for u, v in zip(a, b)) / 3.0


def rollout_loss(params: StencilParams, data: TrainingSet) -> float:
    """Sum over samples of the 1-, 2- and 3-step rollout errors."""
    state = EMStateTM(0, data.h_tau, *(f.copy() for f in data.inputs))
    total = np.zeros(len(data))
    for k in range(ROLLOUT):
        state = step_explicit_stencil(state, params, data.h, data.Z)
        total += _sample_mae(state.fields, data.targets[k])
    return float(np.sum(total))


def _vec(p: StencilParams) -> np.ndarray:
    return np.array([p.a, p.b, p.d])


def _params(v) -> StencilParams:
    return StencilParams(a=float(v[0]), b=float(v[1]), d=float(v[2]))


def loss_gradient(params: StencilParams, data: TrainingSet, eps: float = 1e-6,
                  mode: str = "central") -> np.ndarray:
    """Finite-difference gradient of :func:`rollout_loss` in ``(a, b, d)``."""
    v = _vec(params)
    g = np.zeros(3)
    base = rollout_loss(params, data) if mode == "forward" else None
    for i in range(3):
        e = np.zeros(3)
        e[i] = eps
        if mode == "central":
            g[i] = (rollout_loss(_params(v + e), data) - rollout_loss(_params(v - e), data)) / (2 * eps)
        elif mode == "forward":
            g[i] = (rollout_loss(_params(v + e), data) - base) / eps
        else:
            raise ValueError(f"unknown gradient mode {mode!r}")
    return g


@dataclass
class OptimizerSettings:
    step_size: float = 0.05
    iterations: int = 40
    gradient: str = "central"
    fd_eps: float = 1e-6
    max_halvings: int = 30
    seed: int = 0


@dataclass
class TrainResult:
    params: StencilParams
    loss_trace: list[float]
    validation_loss: float | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        p = self.params
        return {"a": p.a, "b": p.b, "d": p.d, "c": p.c, "loss_trace": list(self.loss_trace),
                "validation_loss": self.validation_loss, "config": self.config}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainResult":
        return cls(StencilParams(d["a"], d["b"], d["d"]), list(d.get("loss_trace", [])),
                   d.get("validation_loss"), dict(d.get("config", {})))

    @classmethod
    def load(cls, path) -> "TrainResult":
        return cls.from_dict(json.loads(Path(path).read_text()))


def optimize_stencil(init: StencilParams, data: TrainingSet,
                     settings: OptimizerSettings | None = None,
                     validation: TrainingSet | None = None) -> TrainResult:
    """Normalized gradient descent with backtracking; uphill steps are never taken."""
    s = settings or OptimizerSettings()
    v = _vec(init)
    loss = rollout_loss(init, data)
    trace = [loss]
    if not math.isfinite(loss):
        raise TrainingDivergedError("initial loss is not finite", trace)
    step = s.step_size
    for _ in range(s.iterations):
        p = _params(v)
        assert abs(p.consistency_residual) < 1e-12
        g = loss_gradient(p, data, s.fd_eps, s.gradient)
        gn = float(np.linalg.norm(g))
        if not math.isfinite(gn):
            raise TrainingDivergedError("gradient is not finite", trace)
        if gn == 0.0:
            break
        accepted = False
        for _ in range(s.max_halvings):
            cand = v - step * g / gn
            new = rollout_loss(_params(cand), data)
            if math.isfinite(new) and new < loss:
                v, loss, accepted = cand, new, True
                step *= 1.5
                break
            step *= 0.5
        trace.append(loss)
        if not accepted:
            break
    final = _params(v)
    config = {
        "N": int(round(1 / data.h)), "r": data.r, "T": data.T, "Z": data.Z,
        "samples": len(data), "init": asdict(init), "optimizer": asdict(s),
    }
    val = rollout_loss(final, validation) if validation is not None else None
    return TrainResult(final, trace, val, config)


def train(r: float = CFL_DEFAULT, T: float = 1.0, Z: float = 1.0,
          init: StencilParams | None = None,
          settings: OptimizerSettings | None = None) -> TrainResult:
    """Generate data, split it, and fit on the training part."""
    s = settings or OptimizerSettings()
    data = generate_training_set(r, T, Z)
    tr, va, _ = data.split(s.seed)
    return optimize_stencil(init or StencilParams(), tr, s, va)
