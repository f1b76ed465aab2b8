"""Command-line interface: wavefield-loc <subcommand>."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from ._version import __version__
from .channel import ChannelMatrix, add_noise
from .dataio import read_dataset, write_dataset, write_dataset_csv
from .harness import (
    ExperimentConfig,
    RESULT_COLUMNS,
    _format_float,
    emit_figures,
    emit_landscape_figure,
    generate_datasets,
    read_results_csv,
    run_experiment,
    summarize_errors,
    sweep,
    write_sweep_csv,
    _write_rows,
)
from .locengine import GridSpec, LocalizerConfig, localize_many
from .metric import pi_values, ps_values
from .model import make_exact, make_perturbed, parse_model_spec
from .scene import load_scene
from .theory import (
    circle_condition_residual,
    closed_form_delta,
    epsilon_sweep,
    grid_error_constant_mc,
    injectivity_probe,
    minima_spacing_scan,
)

VARIANT_ALIASES = {
    "on-grid": ("on_grid", None),
    "off-grid-naive": ("off_grid_naive", None),
    "off-grid-pi": ("off_grid", "pi"),
    "off-grid-ps": ("off_grid", "ps"),
}


def _load_grids(path: str | None) -> GridSpec:
    if path is None:
        return GridSpec()
    return GridSpec.from_dict(json.loads(Path(path).read_text()))


def _localizer_from_args(args) -> LocalizerConfig:
    variant, init = VARIANT_ALIASES[args.variant]
    cfg = LocalizerConfig(variant=variant, use_circles=not args.no_circles)
    if init is not None:
        cfg.init_loss = init
    if args.descent_steps is not None:
        cfg.descent_steps = args.descent_steps
    return cfg


def cmd_scene_validate(args) -> int:
    scene, freqs = load_scene(args.scene)
    n_antennas = scene.array.n_antennas if scene.array else 0
    print(f"scene ok: extent {scene.extent_x} x {scene.extent_y} m, "
          f"{len(scene.walls)} walls, {len(scene.exclusion_regions)} exclusions, "
          f"{n_antennas} antennas")
    if freqs is not None:
        print(f"frequencies: {freqs.n_freqs} tones, lambda0 = {freqs.lambda0:.6g} m")
    return 0


def cmd_dataset_gen(args) -> int:
    scene, freqs = load_scene(args.scene)
    if freqs is None:
        raise SystemExit("scene file lacks a frequencies section")
    train, test, eval_ds = generate_datasets(
        scene, freqs, args.density, seed=args.seed, eval_count=args.eval_count,
        test_spacing=args.test_spacing, max_order=args.max_order,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, ds in (("train", train), ("test", test), ("eval", eval_ds)):
        write_dataset(ds, out / f"{name}.bin")
        if args.csv:
            write_dataset_csv(ds, out / f"{name}.csv")
        print(f"{name}: {len(ds)} records -> {out / (name + '.bin')}")
    return 0


def cmd_localize(args) -> int:
    scene, freqs = load_scene(args.scene)
    if freqs is None:
        raise SystemExit("scene file lacks a frequencies section")
    model = parse_model_spec(args.model, scene, scene.array, freqs, seed=args.seed)
    eval_ds = read_dataset(args.eval_set)
    grids = _load_grids(args.grids)
    config = _localizer_from_args(args)
    measured = []
    for i in range(len(eval_ds)):
        h = ChannelMatrix(eval_ds.channels[i], location_tag=eval_ds.locations[i])
        if args.snr_db is not None:
            h = add_noise(h, args.snr_db, seed=args.seed + 7919 * (i + 1))
        measured.append(h)
    results = localize_many(measured, model, scene, grids, config,
                            seed=args.seed, workers=args.workers)
    rows = []
    for loc, res in zip(eval_ds.locations, results):
        err = float(np.hypot(*(res.estimate - loc)))
        rows.append({
            "ue_x": loc[0], "ue_y": loc[1],
            "est_x": res.estimate[0], "est_y": res.estimate[1], "err_m": err,
            "loss_init": res.loss_trace.get("init", ""),
            "loss_grid": res.loss_trace.get("grid", ""),
            "loss_gd": res.loss_trace.get("gd", ""),
            "loss_circle": res.loss_trace.get("circle", ""),
            "loss_gd2": res.loss_trace.get("gd2", ""),
            "model_evals": res.model_evals, "wall_ns": 0,
        })
    _write_rows(args.out, rows)
    summary = summarize_errors([r["err_m"] for r in rows])
    print(f"{len(rows)} UEs localized; median error {summary.median:.6g} m "
          f"(q10 {summary.q10:.3g}, q90 {summary.q90:.3g})")
    return 0


def cmd_sweep(args) -> int:
    config = ExperimentConfig.from_dict(json.loads(Path(args.config).read_text()))
    values = [float(v) for v in args.values.split(",")] if args.values else []
    rows = sweep(config, args.axis, values)
    write_sweep_csv(rows, args.out)
    print(f"wrote {len(rows)} summary rows -> {args.out}")
    return 0


def cmd_run(args) -> int:
    config = ExperimentConfig.from_dict(json.loads(Path(args.config).read_text()))
    rows, summary = run_experiment(config)
    print(f"{len(rows)} UEs -> {config.out_dir}; median error {summary.median:.6g} m")
    return 0


def cmd_report(args) -> int:
    results = {}
    for item in args.results:
        if "=" in item:
            label, path = item.split("=", 1)
        else:
            label, path = Path(item).stem, item
        results[label] = read_results_csv(path)
    for label, rows in results.items():
        summary = summarize_errors([r["err_m"] for r in rows])
        print(f"{label}: n={summary.count} median={summary.median:.6g} m "
              f"q10={summary.q10:.3g} q90={summary.q90:.3g}")
    written = emit_figures(results, args.out, lambda0=args.lambda0)
    for path in written:
        print(f"figure -> {path}")
    return 0


def cmd_landscape(args) -> int:
    scene, freqs = load_scene(args.scene)
    if freqs is None:
        raise SystemExit("scene file lacks a frequencies section")
    model = parse_model_spec(args.model, scene, scene.array, freqs, seed=args.seed)
    exact = make_exact(scene, scene.array, freqs)
    x_true = np.array([float(v) for v in args.true_loc.split(",")])
    h = exact.eval(x_true).entries
    half = args.span / 2
    axis_vals = np.arange(-half, half + args.step / 2, args.step)
    rows = []
    for dx in axis_vals:
        pts = np.column_stack([
            np.full(len(axis_vals), x_true[0] + dx),
            x_true[1] + axis_vals,
        ])
        chans = model.eval_batch(pts)
        ps = ps_values(h, chans)
        pi = pi_values(h, chans)
        for y_off, lp, li in zip(axis_vals, ps, pi):
            rows.append((x_true[0] + dx, x_true[1] + y_off, lp, li))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "loss_ps", "loss_pi"])
        for r in rows:
            writer.writerow([_format_float(v) for v in r])
    print(f"wrote {len(rows)} landscape samples -> {args.out}")
    if args.figure:
        grid_rows = [
            {"x": r[0], "y": r[1], "loss_ps": r[2], "loss_pi": r[3]} for r in rows
        ]
        path = emit_landscape_figure(grid_rows, Path(args.out).parent)
        print(f"figure -> {path}")
    return 0


def cmd_verify_theory(args) -> int:
    ok = True
    evidence_rows = []
    check = args.check
    if check == "delta":
        mc = grid_error_constant_mc(args.samples, seed=args.seed)
        cf = closed_form_delta()
        ok = abs(mc - cf) < 1e-3
        evidence_rows = [("mc", mc), ("closed_form", cf), ("abs_diff", abs(mc - cf))]
        print(f"delta: mc={mc:.6f} closed={cf:.6f} -> {'PASS' if ok else 'FAIL'}")
    else:
        scene, freqs = load_scene(args.scene)
        if freqs is None:
            raise SystemExit("scene file lacks a frequencies section")
        if check == "spacing":
            model = make_exact(scene, scene.array, freqs)
            x = np.array([0.0, scene.extent_y / 4])
            center = np.mean(scene.array.positions, axis=0)
            direction = x - center
            profile = minima_spacing_scan(model, x, direction, 10 * freqs.lambda0)
            spac = profile.spacings()
            ok = bool(np.all(np.abs(spac - freqs.lambda0) <= 0.02 * freqs.lambda0))
            evidence_rows = [(f"spacing_{i}", s) for i, s in enumerate(spac)]
            print(f"spacing: {len(spac)} gaps, max dev "
                  f"{np.max(np.abs(spac - freqs.lambda0)) / freqs.lambda0:.3%} "
                  f"-> {'PASS' if ok else 'FAIL'}")
        elif check == "circles":
            srcs = scene.virtual_sources(0, 0)
            x = np.array([0.0, scene.extent_y / 4])
            lam = freqs.wavelengths[0]
            for k in (0, 1, 2, 3):
                p, a = circle_condition_residual(x, srcs[0], k, lam)
                evidence_rows += [(f"phase_k{k}", p), (f"amp_k{k}", a)]
                ok = ok and p < 1e-12
            print(f"circles: max phase residual "
                  f"{max(v for n, v in evidence_rows if n.startswith('phase')):.3g} "
                  f"-> {'PASS' if ok else 'FAIL'}")
        elif check == "injectivity":
            worst = injectivity_probe(scene, freqs, args.samples, seed=args.seed)
            ok = worst < 1.0 - 1e-9
            evidence_rows = [("worst_similarity", worst)]
            print(f"injectivity: worst similarity {worst!r} -> {'PASS' if ok else 'FAIL'}")
        elif check == "epsilon":
            from .harness import _SeparationIndex, _sample_uniform
            from .model import make_exact as _mk

            rng = np.random.default_rng(args.seed)
            locs = _sample_uniform(scene, 50, rng, _SeparationIndex())
            exact = _mk(scene, scene.array, freqs)
            from .dataio import Dataset

            eval_ds = Dataset(locs, exact.eval_batch(locs))
            grids = _load_grids(args.grids)
            cfg = LocalizerConfig()
            rows = epsilon_sweep(scene, freqs, [1e-1, 10**-1.5, 1e-2, 0.0],
                                 eval_ds, grids, cfg, seed=args.seed)
            meds = [r[1] for r in rows]
            ok = all(b <= a * 1.0000001 for a, b in zip(meds, meds[1:]))
            evidence_rows = [(f"median_eps_{r[0]:g}", r[1]) for r in rows]
            print("epsilon sweep medians: "
                  + ", ".join(f"{r[0]:g}->{r[1]:.3g} m" for r in rows)
                  + f" -> {'PASS' if ok else 'FAIL'}")
        else:
            raise SystemExit(f"unknown check {check!r}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["quantity", "value"])
            for name, value in evidence_rows:
                writer.writerow([name, _format_float(value)])
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wavefield-loc",
                                description="Multipath localization toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("scene", help="scene utilities")
    scene_sub = sp.add_subparsers(dest="scene_command", required=True)
    v = scene_sub.add_parser("validate", help="validate a scene JSON file")
    v.add_argument("scene")
    v.set_defaults(func=cmd_scene_validate)

    dp = sub.add_parser("dataset", help="dataset utilities")
    ds_sub = dp.add_subparsers(dest="dataset_command", required=True)
    g = ds_sub.add_parser("gen", help="generate train/test/eval datasets")
    g.add_argument("--scene", required=True)
    g.add_argument("--density", type=float, required=True, help="locations per m^2")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--eval-count", type=int, default=1000)
    g.add_argument("--test-spacing", type=float, default=None)
    g.add_argument("--max-order", type=int, default=2)
    g.add_argument("--csv", action="store_true", help="also write CSV mirrors")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_dataset_gen)

    lp = sub.add_parser("localize", help="localize an evaluation set")
    lp.add_argument("--scene", required=True)
    lp.add_argument("--model", default="exact",
                    help="exact | perturbed:<eps> | surrogate:<path>")
    lp.add_argument("--variant", choices=sorted(VARIANT_ALIASES), default="off-grid-pi")
    lp.add_argument("--grids", default=None, help="GridSpec JSON file")
    lp.add_argument("--eval-set", required=True, help="dataset binary file")
    lp.add_argument("--snr-db", type=float, default=None)
    lp.add_argument("--descent-steps", type=int, default=None)
    lp.add_argument("--no-circles", action="store_true")
    lp.add_argument("--workers", type=int, default=None)
    lp.add_argument("--seed", type=int, default=0)
    lp.add_argument("--out", required=True, help="results CSV path")
    lp.set_defaults(func=cmd_localize)

    rp = sub.add_parser("run", help="run a full experiment from a config file")
    rp.add_argument("--config", required=True)
    rp.set_defaults(func=cmd_run)

    wp = sub.add_parser("sweep", help="sweep one experiment axis")
    wp.add_argument("--config", required=True, help="ExperimentConfig JSON file")
    wp.add_argument("--axis", required=True,
                    choices=("snr", "density", "local_spacing", "epsilon", "db_size"))
    wp.add_argument("--values", required=True, help="comma-separated values")
    wp.add_argument("--out", required=True)
    wp.set_defaults(func=cmd_sweep)

    vp = sub.add_parser("verify-theory", help="run one analytic verification")
    vp.add_argument("--check", required=True,
                    choices=("delta", "spacing", "circles", "injectivity", "epsilon"))
    vp.add_argument("--scene", default=None)
    vp.add_argument("--grids", default=None)
    vp.add_argument("--samples", type=int, default=10_000)
    vp.add_argument("--seed", type=int, default=0)
    vp.add_argument("--out", default=None, help="evidence CSV path")
    vp.set_defaults(func=cmd_verify_theory)

    tp = sub.add_parser("report", help="summarize results CSVs and emit figures")
    tp.add_argument("--results", nargs="+", required=True,
                    help="label=path pairs or bare paths")
    tp.add_argument("--lambda0", type=float, default=None)
    tp.add_argument("--out", required=True, help="output directory")
    tp.set_defaults(func=cmd_report)

    gp = sub.add_parser("landscape", help="dump PS/PI loss grids around a location")
    gp.add_argument("--scene", required=True)
    gp.add_argument("--model", default="exact")
    gp.add_argument("--true-loc", required=True, help="x,y of the true location")
    gp.add_argument("--span", type=float, required=True, help="window side [m]")
    gp.add_argument("--step", type=float, required=True, help="sample step [m]")
    gp.add_argument("--figure", action="store_true")
    gp.add_argument("--seed", type=int, default=0)
    gp.add_argument("--out", required=True, help="landscape CSV path")
    gp.set_defaults(func=cmd_landscape)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
