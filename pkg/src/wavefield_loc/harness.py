"""Dataset generation, experiment runner, sweeps, and figure emission.

Everything here is a pure function of (config, seeds): datasets, per-UE
result rows, summaries and manifests are reproducible byte for byte, with
the single exception of the wall-clock column in result CSVs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._version import __version__
from .baselines import FingerprintDB, knn_localize
from .channel import ChannelMatrix, FreqGrid, add_noise
from .dataio import Dataset
from .errors import EmptyRegionError
from .locengine import GridSpec, LocalizerConfig, count_model_evals, localize_many
from .model import fit_kernel_surrogate, make_exact, parse_model_spec
from .scene import Scene, load_scene
from .theory import closed_form_delta

MIN_SPLIT_SEPARATION = 1e-6
"""Minimum distance between locations of different dataset splits [m]."""

RESULT_COLUMNS = (
    "ue_x", "ue_y", "est_x", "est_y", "err_m",
    "loss_init", "loss_grid", "loss_gd", "loss_circle", "loss_gd2",
    "model_evals", "wall_ns",
)


@dataclass
class ErrorSummary:
    """Quantile summary of localization errors [m]."""

    q10: float
    q25: float
    median: float
    q75: float
    q90: float
    count: int

    def to_dict(self) -> dict:
        return {
            "q10": self.q10, "q25": self.q25, "median": self.median,
            "q75": self.q75, "q90": self.q90, "count": self.count,
        }


@dataclass
class ExperimentConfig:
    scene_path: str
    model_spec: str = "exact"
    grids: GridSpec = field(default_factory=GridSpec)
    localizer: LocalizerConfig = field(default_factory=LocalizerConfig)
    eval_count: int = 200
    snr_db: float | None = None
    seed: int = 0
    out_dir: str = "results"
    workers: int | None = None
    max_order: int = 2

    def __post_init__(self):
        if self.eval_count < 1:
            raise ValueError("eval_count must be >= 1")

    def to_dict(self) -> dict:
        return {
            "scene_path": str(self.scene_path),
            "model_spec": self.model_spec,
            "grids": self.grids.to_dict(),
            "localizer": self.localizer.to_dict(),
            "eval_count": self.eval_count,
            "snr_db": self.snr_db,
            "seed": self.seed,
            "out_dir": str(self.out_dir),
            "workers": self.workers,
            "max_order": self.max_order,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        if "grids" in doc:
            doc["grids"] = GridSpec.from_dict(doc["grids"])
        if "localizer" in doc:
            doc["localizer"] = LocalizerConfig.from_dict(doc["localizer"])
        return cls(**doc)


def summarize_errors(errors) -> ErrorSummary:
    """Linear-interpolation quantiles (numpy default) of an error sample."""
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise ValueError("cannot summarize an empty error sequence")
    q10, q25, q50, q75, q90 = np.quantile(errors, [0.1, 0.25, 0.5, 0.75, 0.9])
    return ErrorSummary(float(q10), float(q25), float(q50), float(q75), float(q90),
                        int(errors.size))


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

class _SeparationIndex:
    """Hash-grid membership test at MIN_SPLIT_SEPARATION resolution."""

    def __init__(self, cell: float = MIN_SPLIT_SEPARATION):
        self.cell = cell
        self.keys: set[tuple[int, int]] = set()

    def _key(self, p) -> tuple[int, int]:
        return (int(np.floor(p[0] / self.cell)), int(np.floor(p[1] / self.cell)))

    def too_close(self, p) -> bool:
        kx, ky = self._key(p)
        return any(
            (kx + dx, ky + dy) in self.keys for dx in (-1, 0, 1) for dy in (-1, 0, 1)
        )

    def add(self, pts: np.ndarray):
        for p in np.atleast_2d(pts):
            self.keys.add(self._key(p))


def _sample_uniform(scene: Scene, count: int, rng, index: _SeparationIndex) -> np.ndarray:
    """Uniform draws over the location space, respecting the split separation."""
    hx, hy = scene.extent_x / 2, scene.extent_y / 2
    out = np.empty((count, 2))
    have = 0
    attempts = 0
    while have < count:
        attempts += 1
        if attempts > 1000:
            raise EmptyRegionError("rejection sampling failed; region too constrained")
        n_draw = max(count - have, 32)
        cand = np.column_stack([rng.uniform(-hx, hx, n_draw), rng.uniform(-hy, hy, n_draw)])
        cand = cand[scene.in_location_space(cand)]
        for p in cand:
            if have >= count:
                break
            if index.too_close(p):
                continue
            out[have] = p
            index.add(p[None, :])
            have += 1
    return out


def _test_lattice(scene: Scene, spacing: float) -> np.ndarray:
    hx, hy = scene.extent_x / 2, scene.extent_y / 2
    xs = np.arange(-hx + spacing / 2, hx, spacing)
    ys = np.arange(-hy + spacing / 2, hy, spacing)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    return pts[scene.in_location_space(pts)]


def generate_datasets(scene: Scene, freqs: FreqGrid, density: float, seed: int = 0,
                      eval_count: int = 1000, test_spacing: float | None = None,
                      max_order: int = 2) -> tuple[Dataset, Dataset, Dataset]:
    """(train, test, eval) datasets with exact synthesized channels.

    Training locations are uniform over the location space at ``density``
    locations per square meter; test locations form a lattice at
    ``test_spacing`` (default lambda0/4); evaluation locations are uniform.
    The three splits are pairwise separated by at least 1e-6 m.
    """
    if density <= 0:
        raise ValueError("density must be positive")
    if scene.array is None:
        raise EmptyRegionError("scene has no antenna array")
    rng = np.random.default_rng(seed)
    if test_spacing is None:
        test_spacing = freqs.lambda0 / 4.0
    index = _SeparationIndex()
    test_locs = _test_lattice(scene, test_spacing)
    index.add(test_locs)
    n_train = max(1, round(density * scene.feasible_area()))
    train_locs = _sample_uniform(scene, n_train, rng, index)
    eval_locs = _sample_uniform(scene, eval_count, rng, index)

    model = make_exact(scene, scene.array, freqs, max_order)
    datasets = tuple(
        Dataset(locs, model.eval_batch(locs))
        for locs in (train_locs, test_locs, eval_locs)
    )
    return datasets


# ---------------------------------------------------------------------------
# Experiment runner
# ---------------------------------------------------------------------------

def _build_context(config: ExperimentConfig):
    scene, freqs = load_scene(config.scene_path)
    if freqs is None:
        raise ValueError("scene file lacks a frequencies section")
    model = parse_model_spec(config.model_spec, scene, scene.array, freqs, seed=config.seed)
    return scene, freqs, model


def _eval_channels(scene: Scene, freqs: FreqGrid, config: ExperimentConfig):
    """Evaluation UEs with exact measured channels (optionally noisy)."""
    rng = np.random.default_rng(config.seed + 1)
    index = _SeparationIndex()
    locs = _sample_uniform(scene, config.eval_count, rng, index)
    exact = make_exact(scene, scene.array, freqs, config.max_order)
    clean = exact.eval_batch(locs)
    measured = []
    for i in range(len(locs)):
        h = ChannelMatrix(clean[i], location_tag=locs[i])
        if config.snr_db is not None and not np.isinf(config.snr_db):
            h = add_noise(h, config.snr_db, seed=config.seed + 7919 * (i + 1))
        measured.append(h)
    return locs, measured


def _format_float(v) -> str:
    return repr(float(v))


def run_experiment(config: ExperimentConfig):
    """Localize a fresh evaluation set and write results, summary, manifest.

    Returns (rows, summary); rows mirror the written CSV.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene, freqs, model = _build_context(config)
    locs, measured = _eval_channels(scene, freqs, config)

    t0 = time.perf_counter_ns()
    results = localize_many(measured, model, scene, config.grids, config.localizer,
                            seed=config.seed, workers=config.workers)
    wall_total = time.perf_counter_ns() - t0

    rows = []
    errors = []
    per_ue_ns = wall_total // max(len(results), 1)
    for loc, res in zip(locs, results):
        err = float(np.hypot(*(res.estimate - loc)))
        errors.append(err)
        rows.append({
            "ue_x": loc[0], "ue_y": loc[1],
            "est_x": res.estimate[0], "est_y": res.estimate[1],
            "err_m": err,
            "loss_init": res.loss_trace.get("init", ""),
            "loss_grid": res.loss_trace.get("grid", ""),
            "loss_gd": res.loss_trace.get("gd", ""),
            "loss_circle": res.loss_trace.get("circle", ""),
            "loss_gd2": res.loss_trace.get("gd2", ""),
            "model_evals": res.model_evals,
            "wall_ns": per_ue_ns,
        })
    summary = summarize_errors(errors)

    _write_rows(out_dir / "results.csv", rows)
    (out_dir / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2) + "\n")
    manifest = {
        "config": config.to_dict(),
        "config_sha256": hashlib.sha256(
            json.dumps(config.to_dict(), sort_keys=True).encode()
        ).hexdigest(),
        "versions": {"wavefield_loc": __version__, "numpy": np.__version__},
        "predicted_model_evals": count_model_evals(config.localizer, config.grids, scene),
        "lambda0": freqs.lambda0,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return rows, summary


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            out = []
            for col in RESULT_COLUMNS:
                v = row[col]
                if isinstance(v, str):
                    out.append(v)
                elif col in ("model_evals", "wall_ns"):
                    out.append(str(int(v)))
                else:
                    out.append(_format_float(v))
            writer.writerow(out)


def read_results_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            row = {}
            for key, val in raw.items():
                if val == "":
                    row[key] = ""
                elif key in ("model_evals", "wall_ns"):
                    row[key] = int(val)
                else:
                    row[key] = float(val)
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

SWEEP_AXES = ("snr", "density", "local_spacing", "epsilon", "db_size")


def sweep(config: ExperimentConfig, axis: str, values) -> list[dict]:
    """One summary row per axis value.

    Axes: snr (noise level), density (surrogate training density),
    local_spacing (on/off-grid resolution; adds the grid-bound floor
    column), epsilon (perturbed-model error), db_size (kNN dictionary
    subsampling).
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}")
    values = list(values)
    rows: list[dict] = []
    scene, freqs, _ = _build_context(config)
    delta = closed_form_delta()

    for v in values:
        if axis == "snr":
            cfg = ExperimentConfig.from_dict({**config.to_dict(), "snr_db": float(v)})
            _, summary = _run_in_memory(cfg)
        elif axis == "epsilon":
            cfg = ExperimentConfig.from_dict(
                {**config.to_dict(), "model_spec": f"perturbed:{v}"}
            )
            _, summary = _run_in_memory(cfg)
        elif axis == "local_spacing":
            grids = {**config.grids.to_dict(), "local_spacing": float(v)}
            cfg = ExperimentConfig.from_dict({**config.to_dict(), "grids": grids})
            _, summary = _run_in_memory(cfg)
        elif axis == "density":
            summary = _density_point(scene, freqs, config, float(v))
        else:  # db_size
            summary = _knn_point(scene, freqs, config, int(v))
        row = {"axis": axis, "value": v, **summary.to_dict()}
        if axis == "local_spacing":
            row["floor_m"] = float(v) * delta
        rows.append(row)
    return rows


def _run_in_memory(config: ExperimentConfig):
    scene, freqs, model = _build_context(config)
    locs, measured = _eval_channels(scene, freqs, config)
    results = localize_many(measured, model, scene, config.grids, config.localizer,
                            seed=config.seed, workers=config.workers)
    errors = [float(np.hypot(*(r.estimate - loc))) for loc, r in zip(locs, results)]
    return results, summarize_errors(errors)


def _density_point(scene: Scene, freqs: FreqGrid, config: ExperimentConfig,
                   density: float) -> ErrorSummary:
    train, _, _ = generate_datasets(
        scene, freqs, density, seed=config.seed, eval_count=1,
        test_spacing=10.0 * scene.extent_x,  # skip the test lattice for speed
        max_order=config.max_order,
    )
    model = fit_kernel_surrogate(train, lambda0=freqs.lambda0)
    locs, measured = _eval_channels(scene, freqs, config)
    results = localize_many(measured, model, scene, config.grids, config.localizer,
                            seed=config.seed, workers=config.workers)
    errors = [float(np.hypot(*(r.estimate - loc))) for loc, r in zip(locs, results)]
    return summarize_errors(errors)


def _knn_point(scene: Scene, freqs: FreqGrid, config: ExperimentConfig,
               db_size: int) -> ErrorSummary:
    rng = np.random.default_rng(config.seed + 3)
    index = _SeparationIndex()
    db_locs = _sample_uniform(scene, db_size, rng, index)
    exact = make_exact(scene, scene.array, freqs, config.max_order)
    db = FingerprintDB(db_locs, exact.eval_batch(db_locs))
    locs, measured = _eval_channels(scene, freqs, config)
    errors = [
        float(np.hypot(*(knn_localize(h, db, k=min(3, len(db))) - loc)))
        for loc, h in zip(locs, measured)
    ]
    return summarize_errors(errors)


def write_sweep_csv(rows: list[dict], path) -> None:
    cols = ["axis", "value", "q10", "q25", "median", "q75", "q90", "count"]
    if any("floor_m" in r for r in rows):
        cols.append("floor_m")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for r in rows:
            writer.writerow([r.get(c, "") for c in cols])


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def _svg_figure():
    import matplotlib

    matplotlib.use("svg", force=False)
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "wavefield-loc"
    return plt


def emit_figures(results: dict[str, list[dict]], out_dir, lambda0: float | None = None) -> list[Path]:
    """Boxplot, error map, and optional landscape heatmap as SVG files.

    ``results`` maps a label to result rows (as from read_results_csv).
    Whiskers sit at the 10%/90% quantiles; when lambda0 is given a
    reference line marks the central wavelength.
    """
    if not results or all(len(v) == 0 for v in results.values()):
        raise ValueError("no results to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plt = _svg_figure()
    written = []

    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(results), 3.2))
    stats = []
    for label, rows in results.items():
        errs = np.array([r["err_m"] for r in rows], dtype=float)
        s = summarize_errors(errs)
        stats.append({
            "label": label, "med": s.median, "q1": s.q25, "q3": s.q75,
            "whislo": s.q10, "whishi": s.q90, "fliers": [],
        })
    ax.bxp(stats, showfliers=False)
    if lambda0 is not None:
        ax.axhline(lambda0, color="red", lw=1, label="central wavelength")
        ax.legend(fontsize=7)
    ax.set_yscale("log")
    ax.set_ylabel("localization error [m]")
    fig.tight_layout()
    box_path = out_dir / "boxplot.svg"
    fig.savefig(box_path, metadata={"Date": None})
    plt.close(fig)
    written.append(box_path)

    fig, ax = plt.subplots(figsize=(4.2, 3.4))
    first = next(iter(results.values()))
    xs = [r["ue_x"] for r in first]
    ys = [r["ue_y"] for r in first]
    errs = [r["err_m"] for r in first]
    sc = ax.scatter(xs, ys, c=errs, s=8, cmap="viridis")
    fig.colorbar(sc, ax=ax, label="error [m]")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")
    fig.tight_layout()
    map_path = out_dir / "error_map.svg"
    fig.savefig(map_path, metadata={"Date": None})
    plt.close(fig)
    written.append(map_path)
    return written


def emit_landscape_figure(grid_rows: list[dict], out_dir) -> Path:
    """Heatmap pair of the PS and PI loss landscapes from a landscape dump."""
    if not grid_rows:
        raise ValueError("no landscape rows to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plt = _svg_figure()
    xs = sorted({r["x"] for r in grid_rows})
    ys = sorted({r["y"] for r in grid_rows})
    shape = (len(xs), len(ys))
    x_idx = {v: i for i, v in enumerate(xs)}
    y_idx = {v: i for i, v in enumerate(ys)}
    ps = np.full(shape, np.nan)
    pi = np.full(shape, np.nan)
    for r in grid_rows:
        ps[x_idx[r["x"]], y_idx[r["y"]]] = r["loss_ps"]
        pi[x_idx[r["x"]], y_idx[r["y"]]] = r["loss_pi"]
    fig, axes = plt.subplots(1, 2, figsize=(7.6, 3.2))
    for ax, field_vals, title in ((axes[0], ps, "PS"), (axes[1], pi, "PI")):
        im = ax.imshow(
            20 * np.log10(np.maximum(field_vals.T, 1e-300)),
            origin="lower", aspect="auto",
            extent=(min(xs), max(xs), min(ys), max(ys)),
        )
        ax.set_title(f"{title} loss [dB]")
        fig.colorbar(im, ax=ax)
    fig.tight_layout()
    path = out_dir / "landscape.svg"
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    return path
