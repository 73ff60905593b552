"""The design-optimization loop.

Iterates x <- x + alpha*d for a fixed number of steps, where d comes from
the configured gradient combiner.  Discrete designs are optimized in
relaxed one-hot space and hardened once by per-position argmax at the
end; continuous designs are optimized in normalized space and
de-normalized at the end.  Every trajectory is a pure function of its
arguments.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .combine import (
    CagradConfig,
    CombinedGradient,
    GradientSet,
    combine_mean,
    combine_min,
    normalize_gradient_set,
    solve_cagrad_dual,
    solve_mgda_dual,
)
from .core import (
    DesignSpace,
    denormalize_design,
    is_hard_onehot,
    normalize_design,
    tokens_to_onehot,
)
from .nn import Ensemble, MlpModel


class Combiner(Enum):
    SINGLE = "single"
    MEAN = "mean"
    MIN = "min"
    MGDA = "mgda"
    CAGRAD = "cagrad"


@dataclass(frozen=True)
class AscentConfig:
    steps: int = 200
    alpha: float = 0.1
    combiner: Combiner = Combiner.MEAN
    cagrad_c: float = 0.5
    record_trajectory: bool = False
    harden_every_step: bool = False
    clip_radius: float | None = None
    normalize_grads: bool = False
    solver_tol: float = 1e-8

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.combiner is Combiner.CAGRAD:
            CagradConfig(self.cagrad_c)  # validate range
        if self.clip_radius is not None and self.clip_radius <= 0:
            raise ValueError("clip_radius must be positive when set")


@dataclass(eq=False)
class Trajectory:
    """Optimization record: final design plus optional per-step telemetry.

    ``final`` is a hard one-hot vector for discrete spaces and a raw
    task-unit vector for continuous ones.  When recording is on, ``xs``,
    ``preds`` and ``d_norms`` hold steps+1 states in the optimization
    representation.
    """

    final: np.ndarray
    steps: int
    xs: np.ndarray | None = None
    preds: np.ndarray | None = None
    d_norms: np.ndarray | None = None


def harden_discrete(x: np.ndarray, space: DesignSpace) -> np.ndarray:
    """Per-position argmax to a hard one-hot vector; ties to the lowest token."""
    if not space.is_discrete:
        raise ValueError("harden_discrete applies to discrete spaces")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (space.flat_dim,):
        raise ValueError("relaxed vector has wrong length")
    if not np.all(np.isfinite(x)):
        raise ValueError("relaxed vector must be finite")
    blocks = x.reshape(space.seq_len, space.vocab)
    hard = np.zeros_like(blocks)
    hard[np.arange(space.seq_len), np.argmax(blocks, axis=1)] = 1.0
    return hard.reshape(-1)


class _ModelBank:
    """Per-step evaluator for all ensemble members at one point.

    Same-architecture MLPs get a stacked einsum path (one numpy call per
    layer instead of one per model); anything else falls back to calling
    each model's ``value_and_grad``.
    """

    def __init__(self, models):
        self.models = models
        self.stacked = None
        if all(isinstance(m, MlpModel) for m in models):
            shapes = {tuple(w.shape for w in m.weights) for m in models}
            if len(shapes) == 1:
                ws = [np.stack([m.weights[l] for m in models]) for l in range(len(models[0].weights))]
                bs = [np.stack([m.biases[l] for m in models]) for l in range(len(models[0].biases))]
                self.stacked = (ws, bs)

    def value_and_grad(self, x: np.ndarray):
        if self.stacked is None:
            vals = np.empty(len(self.models))
            grads = np.empty((len(self.models), x.shape[0]))
            for i, mdl in enumerate(self.models):
                vals[i], grads[i] = mdl.value_and_grad(x)
            return vals, grads
        ws, bs = self.stacked
        m = ws[0].shape[0]
        a = np.broadcast_to(x, (m, x.shape[0]))
        pre = []
        for w, b in zip(ws[:-1], bs[:-1]):
            z = np.einsum("mi,mio->mo", a, w) + b
            pre.append(z)
            a = np.maximum(z, 0.0)
        vals = (np.einsum("mi,mio->mo", a, ws[-1]) + bs[-1])[:, 0]
        delta = ws[-1][:, :, 0]
        for w, z in zip(reversed(ws[:-1]), reversed(pre)):
            delta = np.einsum("mio,mo->mi", w, delta * (z > 0.0))
        return vals, delta


def _to_opt_repr(start: np.ndarray, space: DesignSpace) -> np.ndarray:
    start = np.asarray(start)
    if space.is_discrete:
        if start.shape == (space.seq_len,):
            return tokens_to_onehot(start, space)
        if start.shape == (space.flat_dim,):
            if not is_hard_onehot(start, space):
                raise ValueError("discrete starts must be hard designs")
            return np.asarray(start, dtype=np.float64).copy()
        raise ValueError("bad discrete start shape")
    start = start.astype(np.float64)
    if start.shape != (space.dim,) or not np.all(np.isfinite(start)):
        raise ValueError("bad continuous start")
    return normalize_design(start, space)


def _combine(gs: GradientSet, cfg: AscentConfig, warm: dict) -> CombinedGradient:
    if cfg.normalize_grads:
        gs = normalize_gradient_set(gs)
    if cfg.combiner is Combiner.SINGLE:
        return CombinedGradient(d=gs.grads[0].copy())
    if cfg.combiner is Combiner.MEAN:
        return combine_mean(gs)
    if cfg.combiner is Combiner.MIN:
        return combine_min(gs)
    if cfg.combiner is Combiner.MGDA:
        out = solve_mgda_dual(gs, tol=cfg.solver_tol, w0=warm.get("w"))
    else:
        out = solve_cagrad_dual(gs, CagradConfig(cfg.cagrad_c), tol=cfg.solver_tol, w0=warm.get("w"))
    if out.weights is not None:
        warm["w"] = out.weights.w
    return out


def ascend(start: np.ndarray, space: DesignSpace, ens: Ensemble, cfg: AscentConfig) -> Trajectory:
    """Run the update loop from one starting design.

    The single-model combiner uses ensemble member 0; all members'
    predictions are still recorded for tuning plots.
    """
    if ens.input_dim != space.flat_dim:
        raise ValueError("ensemble input_dim does not match the space")
    x = _to_opt_repr(start, space)
    bank = _ModelBank(ens.models)
    record = cfg.record_trajectory
    xs, preds, d_norms = ([], [], []) if record else (None, None, None)
    warm: dict = {}

    for k in range(cfg.steps):
        vals, grads = bank.value_and_grad(x)
        if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(grads))):
            raise FloatingPointError(f"non-finite model output at step {k}")
        gs = GradientSet(grads=grads, values=vals)
        d = _combine(gs, cfg, warm).d
        with np.errstate(over="ignore", invalid="ignore"):
            stepped = x + cfg.alpha * d
        if not np.all(np.isfinite(stepped)):
            raise FloatingPointError(f"non-finite iterate at step {k}")
        if record:
            xs.append(x.copy())
            preds.append(vals)
            d_norms.append(float(np.linalg.norm(d)))
        x = stepped
        if space.is_discrete and cfg.harden_every_step:
            x = harden_discrete(x, space)
        if not space.is_discrete and cfg.clip_radius is not None:
            r = float(np.linalg.norm(x))
            if r > cfg.clip_radius:
                x = x * (cfg.clip_radius / r)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite iterate at step {k}")

    if record:
        vals, grads = bank.value_and_grad(x)
        d = _combine(GradientSet(grads=grads, values=vals), cfg, warm).d
        xs.append(x.copy())
        preds.append(vals)
        d_norms.append(float(np.linalg.norm(d)))

    final = harden_discrete(x, space) if space.is_discrete else denormalize_design(x, space)
    return Trajectory(
        final=final,
        steps=cfg.steps,
        xs=np.asarray(xs) if record else None,
        preds=np.asarray(preds) if record else None,
        d_norms=np.asarray(d_norms) if record else None,
    )


def ascend_batch(starts, space: DesignSpace, ens: Ensemble, cfg: AscentConfig) -> list[Trajectory]:
    """Independent trajectories from many starts; order preserved."""
    starts = list(starts)
    if not starts:
        raise ValueError("no starting designs")
    out = []
    for i, start in enumerate(starts):
        try:
            out.append(ascend(start, space, ens, cfg))
        except Exception as exc:
            raise RuntimeError(f"trajectory {i} failed: {exc}") from exc
    return out


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Tuning artifact: per-step model predictions and update-vector norms."""
    if traj.preds is None:
        raise ValueError("trajectory was not recorded")
    m = traj.preds.shape[1]
    with open(Path(path), "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["step"] + [f"pred_{i + 1}" for i in range(m)] + ["d_norm"])
        for step, (p, dn) in enumerate(zip(traj.preds, traj.d_norms)):
            w.writerow([step] + [repr(float(v)) for v in p] + [repr(float(dn))])
