"""Grid-plus-gradient localization pipeline with circle-based minima escape.

Pipeline stages: global grid search (PS or PI loss), local PS grid search,
gradient descent on the PS loss, candidate sampling on circles of radii
k * lambda0 around the descent fixed point, and a conditional second
descent when the circles expose a lower loss.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import EmptyRegionError
from .metric import KIND_PI, KIND_PS, PS_CONVERGED_LOSS, pi_values, ps_gradient, ps_values
from .model import ChannelModel
from .scene import Scene

DESCENT_STEP_FRACTION = 0.05
"""Auto step scaling: first step length is this fraction of lambda0."""

DESCENT_MIN_STEP = 1e-9
"""Descent stops once an accepted step is shorter than this [m]."""

MAX_HALVINGS = 20

VARIANT_ON_GRID = "on_grid"
VARIANT_OFF_GRID_NAIVE = "off_grid_naive"
VARIANT_OFF_GRID = "off_grid"
_VARIANTS = (VARIANT_ON_GRID, VARIANT_OFF_GRID_NAIVE, VARIANT_OFF_GRID)


@dataclass
class GridSpec:
    """Cardinalities and geometry of the search grids.

    local_side and local_spacing are in meters; the local lattice offsets
    are ``spacing * Z`` intersected with ``[-side/2, side/2]`` per axis.
    """

    global_count: int = 1000
    local_side: float | None = 2.0
    local_spacing: float | None = 0.02
    circle_count: int = 5
    circle_points: int = 1000

    def __post_init__(self):
        if self.global_count < 1:
            raise ValueError("global_count must be >= 1")
        # both-None disables the local stage (single dense grid setups)
        if (self.local_side is None) != (self.local_spacing is None):
            raise ValueError("local_side and local_spacing must be set together")
        if self.local_side is not None and (self.local_side <= 0 or self.local_spacing <= 0):
            raise ValueError("local grid dimensions must be positive")
        if self.circle_count < 1 or self.circle_points < self.circle_count:
            raise ValueError("need at least one sample point per circle")

    @property
    def has_local(self) -> bool:
        return self.local_side is not None

    def local_points_per_axis(self) -> int:
        if not self.has_local:
            return 0
        return 2 * int(math.floor(self.local_side / (2 * self.local_spacing) + 1e-9)) + 1

    @classmethod
    def from_dict(cls, doc: dict) -> "GridSpec":
        return cls(**doc)

    def to_dict(self) -> dict:
        return {
            "global_count": self.global_count,
            "local_side": self.local_side,
            "local_spacing": self.local_spacing,
            "circle_count": self.circle_count,
            "circle_points": self.circle_points,
        }


@dataclass
class LocalizerConfig:
    init_loss: str = KIND_PI
    descent_steps: int = 100
    step_size: float | None = None  # None: auto-scale from lambda0 and the start gradient
    variant: str = VARIANT_OFF_GRID
    use_circles: bool = True

    def __post_init__(self):
        if self.init_loss not in (KIND_PI, KIND_PS):
            raise ValueError(f"unknown init loss {self.init_loss!r}")
        if self.variant not in _VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.descent_steps < 0:
            raise ValueError("descent_steps must be >= 0")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "LocalizerConfig":
        return cls(**doc)

    def to_dict(self) -> dict:
        return {
            "init_loss": self.init_loss,
            "descent_steps": self.descent_steps,
            "step_size": self.step_size,
            "variant": self.variant,
            "use_circles": self.use_circles,
        }


@dataclass
class LocalizationResult:
    estimate: np.ndarray
    stage_trace: dict
    loss_trace: dict
    model_evals: int
    variant: str
    descent_iterations: int = 0
    converged: bool = False


class _CountingModel:
    """Forward-pass accounting wrapper; a gradient counts as one pass."""

    def __init__(self, model: ChannelModel):
        self._model = model
        self.count = 0
        self.n_a = model.n_a
        self.n_s = model.n_s
        self.lambda0 = model.lambda0

    def eval(self, x):
        self.count += 1
        return self._model.eval(x)

    def eval_raw(self, x):
        self.count += 1
        return self._model.eval_raw(x)

    def grad(self, x):
        self.count += 1
        return self._model.grad(x)

    def grad_raw(self, x):
        self.count += 1
        return self._model.grad_raw(x)

    def eval_batch(self, pts):
        pts = np.atleast_2d(pts)
        self.count += len(pts)
        return self._model.eval_batch(pts)


def _global_grid_dims(scene: Scene, count: int) -> tuple[int, int]:
    """Near-square lattice dimensions, inflated to offset exclusion pruning."""
    fill = scene.feasible_area() / (scene.extent_x * scene.extent_y)
    target = count / max(fill, 1e-9)
    nx = max(1, round(math.sqrt(target * scene.extent_x / scene.extent_y)))
    ny = max(1, round(target / nx))
    return nx, ny


def build_global_grid(scene: Scene, count: int) -> np.ndarray:
    """Uniform cell-centered lattice over the extents minus exclusions."""
    if count < 1:
        raise ValueError("count must be >= 1")
    nx, ny = _global_grid_dims(scene, count)
    hx, hy = scene.extent_x / 2, scene.extent_y / 2
    xs = -hx + (np.arange(nx) + 0.5) * scene.extent_x / nx
    ys = -hy + (np.arange(ny) + 0.5) * scene.extent_y / ny
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    pts = pts[scene.in_location_space(pts)]
    if len(pts) == 0:
        raise EmptyRegionError("no feasible grid nodes in the location space")
    return pts


def build_local_grid(center, side: float, spacing: float, scene: Scene | None = None) -> np.ndarray:
    """Square lattice ``center + (spacing * Z cap [-side/2, side/2])^2``."""
    if side <= 0 or spacing <= 0:
        raise ValueError("side and spacing must be positive")
    center = np.asarray(center, dtype=float).reshape(2)
    half = int(math.floor(side / (2 * spacing) + 1e-9))
    offsets = np.arange(-half, half + 1) * spacing
    gx, gy = np.meshgrid(center[0] + offsets, center[1] + offsets, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    if scene is not None:
        pts = pts[scene.in_extents(pts)]
    return pts


def sample_circles(center, n_circles: int, n_points: int, lambda0: float,
                   rng: np.random.Generator | None = None,
                   scene: Scene | None = None) -> np.ndarray:
    """Candidate points on circles of radii k * lambda0, k = 1..n_circles.

    Points are split evenly across circles and uniformly spaced in angle;
    each circle gets a random angular offset from ``rng`` (zero without a
    generator), which avoids systematic alignment across runs.
    """
    if n_circles < 1 or n_points < n_circles:
        raise ValueError("need at least one point per circle")
    center = np.asarray(center, dtype=float).reshape(2)
    base = n_points // n_circles
    extra = n_points - base * n_circles
    pts = []
    for k in range(1, n_circles + 1):
        m = base + (1 if k <= extra else 0)
        if m == 0:
            continue
        offset = float(rng.uniform(0.0, 2.0 * np.pi)) if rng is not None else 0.0
        ang = offset + 2.0 * np.pi * np.arange(m) / m
        pts.append(center[None, :] + (k * lambda0) * np.column_stack([np.cos(ang), np.sin(ang)]))
    out = np.vstack(pts)
    if scene is not None:
        out = out[scene.in_extents(out)]
    return out


def grid_search(H, model, grid: np.ndarray, loss_kind: str = KIND_PS) -> np.ndarray:
    """Argmin of the chosen loss over candidate locations (first-index ties)."""
    pt, _ = _grid_search_full(H, model, grid, loss_kind)
    return pt


def _grid_search_full(H, model, grid: np.ndarray, loss_kind: str):
    grid = np.atleast_2d(grid)
    if len(grid) == 0:
        raise ValueError("empty search grid")
    channels = model.eval_batch(grid)
    if loss_kind == KIND_PI:
        losses = pi_values(H, channels)
    elif loss_kind == KIND_PS:
        losses = ps_values(H, channels)
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    best = int(np.argmin(losses))
    return grid[best].copy(), float(losses[best])


def _descend(H, model, x0, alpha, n_steps, lambda0, scene=None, loss0=None):
    """Backtracking gradient descent on the PS loss.

    Monotone: a step is accepted only if it strictly decreases the loss; on
    an increase the trial step is halved (at most MAX_HALVINGS times per
    iteration).  The total model-pass budget is hard-capped at 2 * n_steps
    (one gradient pass plus at least one trial per iteration), matching the
    analytic complexity accounting.  Returns (point, loss, iterations,
    converged).
    """
    from .channel import _entries
    from .metric import ps_gradient_core

    clip = (lambda p: scene.clip_to_extents(p)) if scene is not None else (lambda p: p)
    h = _entries(H)
    x = clip(np.asarray(x0, dtype=float).reshape(2))
    if n_steps == 0:
        if loss0 is None:
            loss0 = float(ps_values(H, model.eval_raw(x)[None])[0])
        return x, loss0, 0, loss0 < PS_CONVERGED_LOSS

    budget = 2 * n_steps
    f_ent = model.eval_raw(x)
    passes = 1
    loss = float(np.linalg.norm(f_ent - h))
    if loss < PS_CONVERGED_LOSS:
        return x, loss, 0, True

    base_alpha = alpha
    converged = False
    iters = 0
    while iters < n_steps and passes < budget:
        d_dx, d_dy = model.grad_raw(x)
        passes += 1
        g = ps_gradient_core(h, f_ent, d_dx, d_dy, loss)
        gnorm = float(np.hypot(g[0], g[1]))
        if gnorm == 0.0:
            converged = True
            break
        if base_alpha is None:
            # first step length pinned to a fixed fraction of lambda0
            base_alpha = DESCENT_STEP_FRACTION * lambda0 / gnorm
        a = base_alpha
        accepted = False
        halvings = 0
        while passes < budget and halvings <= MAX_HALVINGS:
            x_new = clip(x - a * g)
            f_new_ent = model.eval_raw(x_new)
            passes += 1
            loss_new = float(np.linalg.norm(f_new_ent - h))
            if loss_new < loss:
                accepted = True
                break
            a *= 0.5
            halvings += 1
        if not accepted:
            break
        # multiplicative step adaptation: the next iteration opens at twice
        # the accepted step, so the backtracking line search brackets the
        # locally optimal step from above; this keeps the fixed pass budget
        # effective in strongly anisotropic loss valleys
        base_alpha = 2.0 * a
        iters += 1
        step = float(np.hypot(*(x_new - x)))
        x, f_ent, loss = x_new, f_new_ent, loss_new
        if loss < PS_CONVERGED_LOSS or step < DESCENT_MIN_STEP:
            converged = True
            break
    return x, loss, iters, converged


def gradient_descent(H, model, x0, alpha: float | None = None, n_steps: int = 100,
                     scene: Scene | None = None) -> np.ndarray:
    """Refine a location estimate by descending the PS loss from x0.

    ``alpha`` is the raw step size [m^2 per loss unit]; when None it is
    scaled so the first step length is a fixed fraction of the model's
    central wavelength.
    """
    lambda0 = model.lambda0
    if alpha is None and lambda0 is None:
        raise ValueError("model lacks lambda0; pass an explicit alpha")
    x, _, _, _ = _descend(H, model, x0, alpha, n_steps, lambda0, scene)
    return x


def localize(H, model: ChannelModel, scene: Scene, grids: GridSpec,
             config: LocalizerConfig, seed: int = 0) -> LocalizationResult:
    """Run the configured localization pipeline on one measured channel.

    Variants: ``on_grid`` stops after the local grid search;
    ``off_grid_naive`` searches a single dense global grid (no local stage)
    before descent; ``off_grid`` is the full bi-level pipeline.
    """
    counting = _CountingModel(model)
    rng = np.random.default_rng(seed)
    trace: dict = {}
    losses: dict = {}

    g_global = build_global_grid(scene, grids.global_count)
    x_init, loss_init = _grid_search_full(H, counting, g_global, config.init_loss)
    trace["x_init"] = x_init
    losses["init"] = loss_init

    if config.variant == VARIANT_OFF_GRID_NAIVE or not grids.has_local:
        x_grid, loss_grid = x_init, loss_init
    else:
        g_local = build_local_grid(x_init, grids.local_side, grids.local_spacing, scene)
        x_grid, loss_grid = _grid_search_full(H, counting, g_local, KIND_PS)
        trace["x_grid"] = x_grid
        losses["grid"] = loss_grid

    if config.variant == VARIANT_ON_GRID:
        return LocalizationResult(
            estimate=x_grid, stage_trace=trace, loss_trace=losses,
            model_evals=counting.count, variant=config.variant,
        )

    lambda0 = counting.lambda0
    if lambda0 is None:
        raise ValueError("model lacks lambda0 required for descent/circle stages")
    x_gd, loss_gd, iters, converged = _descend(
        H, counting, x_grid, config.step_size, config.descent_steps, lambda0, scene,
        loss0=loss_grid,
    )
    trace["x_gd"] = x_gd
    losses["gd"] = loss_gd
    n_iters = iters
    estimate = x_gd

    if config.use_circles:
        circle_pts = sample_circles(
            x_gd, grids.circle_count, grids.circle_points, lambda0, rng, scene
        )
        if len(circle_pts):
            x_circ, loss_circ = _grid_search_full(H, counting, circle_pts, KIND_PS)
            trace["x_circle"] = x_circ
            losses["circle"] = loss_circ
            if loss_circ <= loss_gd:
                x_gd2, loss_gd2, iters2, converged = _descend(
                    H, counting, x_circ, config.step_size, config.descent_steps,
                    lambda0, scene, loss0=loss_circ,
                )
                trace["x_gd2"] = x_gd2
                losses["gd2"] = loss_gd2
                n_iters += iters2
                estimate = x_gd2

    return LocalizationResult(
        estimate=estimate, stage_trace=trace, loss_trace=losses,
        model_evals=counting.count, variant=config.variant,
        descent_iterations=n_iters, converged=converged,
    )


def count_model_evals(config: LocalizerConfig, grids: GridSpec,
                      scene: Scene | None = None) -> int:
    """Analytic forward-pass count for the configured variant.

    Uses unclipped lattice cardinalities, so a measured run can only fall
    short of this prediction (early descent stopping, extent clipping).
    """
    if scene is not None:
        nx, ny = _global_grid_dims(scene, grids.global_count)
        n_global = nx * ny
    else:
        n_global = grids.global_count
    n_local = grids.local_points_per_axis() ** 2
    n_descent = 2 * config.descent_steps
    if config.variant == VARIANT_ON_GRID:
        return n_global + n_local
    if config.variant == VARIANT_OFF_GRID_NAIVE:
        n_circ = grids.circle_points if config.use_circles else 0
        return n_global + n_circ + n_descent
    n_circ = grids.circle_points if config.use_circles else 0
    return n_global + n_local + n_circ + n_descent


def localize_many(channels: Sequence, model: ChannelModel, scene: Scene,
                  grids: GridSpec, config: LocalizerConfig, seed: int = 0,
                  workers: int | None = None) -> list[LocalizationResult]:
    """Localize a batch of measured channels over a thread pool.

    Each channel is independent; per-UE state is confined to its worker.
    The WFL_THREADS environment variable caps the pool width.
    """
    n = len(channels)
    width = workers if workers is not None else (os.cpu_count() or 1)
    cap = os.environ.get("WFL_THREADS")
    if cap:
        width = min(width, max(1, int(cap)))
    width = max(1, min(width, n)) if n else 1

    def run(i):
        return localize(channels[i], model, scene, grids, config, seed=seed + i)

    if width == 1:
        return [run(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=width) as pool:
        return list(pool.map(run, range(n)))
