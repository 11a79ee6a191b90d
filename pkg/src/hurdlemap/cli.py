"""Command-line pipeline: simulate, fit, select-threshold,
compare-families, diagnose, predict.

Every stochastic subcommand requires --seed and derives all stage seeds
from it, so identical configuration reproduces identical artifacts.
Wall-clock timings go to a separate timings.json sidecar to keep the
data artifacts byte-stable.  Errors leave a JSON envelope on stderr and
a nonzero exit status; human-readable progress goes to stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .data import EncodingConfig, build_dataset, parse_events
from .diagnostics import adequacy_report
from .engine import fit_from_json, fit_to_json, optimize_hyper
from .fields import Ar1Params, SpdeParams
from .geometry import build_mesh, load_population_csv, load_regions_geojson
from .hurdle import (
    classify_zeros,
    fit_sequential,
    make_binary,
    predict_pi_tilde,
)
from .likelihoods import FamilySpec
from .models import (
    PriorConfig,
    StructureConfig,
    build_component,
    subset_component,
)
from .predict import exceedance_grid, make_grid, region_summaries_geojson
from .simulate import SimulationConfig, simulate_dataset

DEFAULTS = {
    "form": "II",
    "family": "negbinomial",
    "init_dispersion": 1.0,
    "max_edge": 1.5,
    "extension": 0.2,
    "spline_basis": None,
    "pc_range": [1.42, 0.9],
    "pc_sd": [1.0, 0.9],
    "pc_precision": [0.5, 0.9],
    "pc_correlation": [0.0, 0.9],
    "threshold_grid_cap": 9,
    "pi_samples": 10_000,
    "waic_samples": 800,
    "adequacy_samples": 2000,
    "grid_nx": 150,
    "grid_ny": 150,
    "exceed_samples": 10_000,
    "exceed_threshold": 20,
    "threads": None,
    "include_season": True,
    "include_group": True,
    # simulate-only knobs
    "sim_n": 2000,
    "sim_years": 5,
    "sim_first_year": 2001,
    "sim_domain": 10.0,
    "sim_max_edge": 2.5,
    "sim_form": "II",
    "sim_family": "negbinomial",
    "sim_dispersion": 1.5,
    "sim_beta_binary": [4.0, -5.5],
    "sim_beta_count": [0.8, 0.6],
    "sim_range": 3.0,
    "sim_sd": 1.0,
    "sim_ar1": 0.6,
    "sim_offset_log": 0.0,
}

STAGE_SEEDS = {"pi": 1, "scan": 2, "adequacy": 3, "predict": 4, "families": 5}


def _say(msg):
    print(msg, flush=True)


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_json(path: Path, obj):
    _write_text(path, json.dumps(obj, sort_keys=True, indent=1) + "\n")


def load_config(args, required=()) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(DEFAULTS) - {
            "events", "regions", "population", "out", "seed", "fit_dir",
            "chosen_c"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key, value in vars(args).items():
        if key in ("config", "func", "command"):
            continue
        if value is not None:
            cfg[key] = value
    if cfg.get("seed") is None:
        raise ValueError("--seed is required")
    for key in required:
        if not cfg.get(key):
            raise ValueError(f"missing required option --{key} "
                             "(flag or config file)")
    cfg["threads"] = cfg["threads"] or os.cpu_count() or 1
    return cfg


def structure_config(cfg) -> StructureConfig:
    priors = PriorConfig(range_=tuple(cfg["pc_range"]),
                         sd=tuple(cfg["pc_sd"]),
                         precision=tuple(cfg["pc_precision"]),
                         correlation=tuple(cfg["pc_correlation"]))
    return StructureConfig(form=cfg["form"],
                           n_spline_basis=cfg["spline_basis"],
                           priors=priors)


def count_family(cfg) -> FamilySpec:
    fam = cfg["family"]
    if fam in ("negbinomial", "gpoisson"):
        return FamilySpec(fam, cfg["init_dispersion"])
    return FamilySpec(fam)


def load_inputs(cfg):
    """Parse inputs and assemble both model components deterministically."""
    records, parse_report = parse_events(cfg["events"], EncodingConfig(
        include_season=cfg["include_season"],
        include_group=cfg["include_group"]))
    regions = load_regions_geojson(cfg["regions"])
    load_population_csv(cfg["population"], regions)
    ds = build_dataset(records, regions, EncodingConfig(
        include_season=cfg["include_season"],
        include_group=cfg["include_group"]))
    mesh = build_mesh(ds.points, boundary=None, max_edge=cfg["max_edge"],
                      extension=cfg["extension"])
    structure = structure_config(cfg)
    binary_parts = build_component(
        make_binary(ds.y).astype(float), ds.X, np.zeros(ds.n), ds.points,
        ds.years, FamilySpec("bernoulli"), structure, mesh=mesh)
    count_parts = build_component(
        ds.y, ds.X, ds.offset_log, ds.points, ds.years, count_family(cfg),
        structure, mesh=mesh, fem=binary_parts.fem)
    return ds, regions, mesh, binary_parts, count_parts, parse_report


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args):
    cfg = load_config(args, required=("out",))
    out = Path(cfg["out"])
    sim_cfg = SimulationConfig(
        n=int(cfg["sim_n"]), n_years=int(cfg["sim_years"]),
        mesh_max_edge=float(cfg["sim_max_edge"]),
        domain_size=float(cfg["sim_domain"]),
        structural_form=cfg["sim_form"], family=cfg["sim_family"],
        dispersion=cfg["sim_dispersion"],
        beta_binary=np.asarray(cfg["sim_beta_binary"], dtype=float),
        beta_count=np.asarray(cfg["sim_beta_count"], dtype=float),
        spde=SpdeParams(float(cfg["sim_range"]), float(cfg["sim_sd"])),
        ar1=Ar1Params(float(cfg["sim_ar1"])),
        first_year=int(cfg["sim_first_year"]),
        offset_log=float(cfg["sim_offset_log"]),
        seed=int(cfg["seed"]))
    t0 = time.perf_counter()
    sim = simulate_dataset(sim_cfg)
    _say(f"[simulate] n={sim_cfg.n} years={sim_cfg.n_years} "
         f"K={sim.mesh.n_vertices} zeros={int((sim.y == 0).sum())}")

    lines = ["longitude,latitude,year,month,event_type,fatalities,notes"]
    for i in range(sim_cfg.n):
        kind = "B" if sim.design[i, 1] > 0 else "A"
        lines.append(f"{float(sim.points[i, 0])!r},{float(sim.points[i, 1])!r},"
                     f"{int(sim.years[i])},10,{kind},{int(sim.y[i])},")
    _write_text(out / "events.csv", "\n".join(lines) + "\n")

    d = sim_cfg.domain_size
    ring = [[0.0, 0.0], [d, 0.0], [d, d], [0.0, d], [0.0, 0.0]]
    _write_json(out / "regions.geojson", {
        "type": "FeatureCollection",
        "features": [{"type": "Feature",
                      "geometry": {"type": "Polygon", "coordinates": [ring]},
                      "properties": {"name": "domain"}}]})
    pop = float(np.exp(sim_cfg.offset_log))
    pop_lines = ["region,year,population"]
    for year in range(sim_cfg.first_year, sim_cfg.first_year + sim_cfg.n_years):
        pop_lines.append(f"domain,{year},{pop!r}")
    _write_text(out / "population.csv", "\n".join(pop_lines) + "\n")
    _write_text(out / "truth.json", sim.truth_json() + "\n")
    _write_json(out / "timings.json",
                {"simulate_s": time.perf_counter() - t0})
    _say(f"[simulate] wrote events.csv, regions.geojson, population.csv, "
         f"truth.json to {out}")
    return 0


def _run_fit_pipeline(cfg, out: Path):
    timings = {}
    t0 = time.perf_counter()
    ds, regions, mesh, binary_parts, count_parts, parse_report = \
        load_inputs(cfg)
    timings["load_s"] = time.perf_counter() - t0
    _say(f"[fit] n={ds.n} p={ds.X.shape[1]} K={mesh.n_vertices} "
         f"years={len(np.unique(ds.years))} form={cfg['form']} "
         f"family={cfg['family']}")

    seed = int(cfg["seed"])
    seq = fit_sequential(
        ds.y, binary_parts, count_parts,
        grid_cap=int(cfg["threshold_grid_cap"]),
        pi_samples=int(cfg["pi_samples"]),
        waic_samples=int(cfg["waic_samples"]),
        seed=seed, n_threads=int(cfg["threads"]))
    timings.update(seq.timings)
    _say(f"[fit] chosen threshold c={seq.selection.chosen_c:.6g} "
         f"structural zeros={seq.outcome.n_structural}")
    return ds, regions, mesh, binary_parts, count_parts, parse_report, \
        seq, timings


def cmd_fit(args):
    cfg = load_config(args, required=("out", "events", "regions", "population"))
    out = Path(cfg["out"])
    ds, regions, mesh, binary_parts, count_parts, parse_report, seq, \
        timings = _run_fit_pipeline(cfg, out)
    seed = int(cfg["seed"])

    _write_text(out / "binary_fit.json", fit_to_json(seq.binary_fit) + "\n")
    _write_text(out / "count_fit.json", fit_to_json(seq.count_fit) + "\n")
    report = seq.selection.report()
    report["seed"] = seed
    report["pi_samples"] = int(cfg["pi_samples"])
    report["waic_samples"] = int(cfg["waic_samples"])
    _write_json(out / "threshold_report.json", report)

    t0 = time.perf_counter()
    for label, fit in (("binary", seq.binary_fit), ("count", seq.count_fit)):
        rep = adequacy_report(fit, n_samples=int(cfg["adequacy_samples"]),
                              seed=seed + STAGE_SEEDS["adequacy"])
        _write_text(out / f"adequacy_{label}.json", rep.summary_json() + "\n")
        _write_text(out / f"cpo_pit_{label}.csv", rep.per_observation_csv())
    timings["adequacy_s"] = time.perf_counter() - t0

    _write_json(out / "parse_report.json", {
        "n_rows": parse_report.n_rows, "n_parsed": parse_report.n_parsed,
        "errors": parse_report.errors,
        "n_after_region_resolution": ds.n,
        "dropped_outside_regions": len(ds.report.errors)})
    run_cfg = dict(cfg)
    run_cfg["chosen_c"] = seq.selection.chosen_c
    _write_json(out / "run_config.json", run_cfg)
    _write_json(out / "timings.json", timings)
    _say(f"[fit] artifacts in {out}")
    return 0


def cmd_select_threshold(args):
    cfg = load_config(args, required=("out", "events", "regions", "population"))
    out = Path(cfg["out"])
    ds, regions, mesh, binary_parts, count_parts, parse_report, seq, \
        timings = _run_fit_pipeline(cfg, out)
    _write_text(out / "binary_fit.json", fit_to_json(seq.binary_fit) + "\n")
    report = seq.selection.report()
    report["seed"] = int(cfg["seed"])
    _write_json(out / "threshold_report.json", report)
    _write_json(out / "timings.json", timings)
    _say(f"[select-threshold] chosen c={seq.selection.chosen_c:.6g}")
    return 0


def cmd_compare_families(args):
    cfg = load_config(args, required=("out", "events", "regions", "population"))
    out = Path(cfg["out"])
    ds, regions, mesh, binary_parts, count_parts, parse_report, seq, \
        timings = _run_fit_pipeline(cfg, out)
    seed = int(cfg["seed"])

    rows = []
    family_labels = {"poisson": "Poisson",
                     "negbinomial": "Negative Binomial",
                     "gpoisson": "Generalized Poisson"}
    keep = seq.outcome.kept()
    t0 = time.perf_counter()
    for fam_name, label in family_labels.items():
        fam = FamilySpec(fam_name, cfg["init_dispersion"]
                         if fam_name != "poisson" else None)
        parts_c = subset_component(count_parts, keep,
                                   seq.outcome.values[keep], family=fam)
        fit = optimize_hyper(parts_c.model)
        rep = adequacy_report(fit, n_samples=int(cfg["adequacy_samples"]),
                              seed=seed + STAGE_SEEDS["families"])
        rows.append((label, rep.dic, rep.waic, rep.p_dic))
        _say(f"[compare-families] {label}: DIC={rep.dic:.2f} "
             f"WAIC={rep.waic:.2f}")
    timings["families_s"] = time.perf_counter() - t0

    lines = ["Model,DIC,WAIC,EffectiveParams"]
    lines += [f"{label},{dic!r},{waic!r},{p!r}"
              for label, dic, waic, p in rows]
    _write_text(out / "families.csv", "\n".join(lines) + "\n")
    _write_json(out / "timings.json", timings)
    return 0


def _rebuild(fit_dir: Path):
    """Reload a fit directory: rebuild models, attach stored fits."""
    with open(fit_dir / "run_config.json") as fh:
        cfg = json.load(fh)
    ds, regions, mesh, binary_parts, count_parts, _ = load_inputs(cfg)
    with open(fit_dir / "binary_fit.json") as fh:
        binary_fit = fit_from_json(fh.read())
    binary_fit.model = binary_parts.model
    if binary_fit.latent_mode.shape[0] != binary_parts.model.dim:
        raise ValueError("stored binary fit does not match the rebuilt model")

    seed = int(cfg["seed"])
    pi_tilde = predict_pi_tilde(binary_fit, n_samples=int(cfg["pi_samples"]),
                                seed=seed)
    outcome = classify_zeros(ds.y, pi_tilde, float(cfg["chosen_c"]))
    keep = outcome.kept()
    count_kept = subset_component(count_parts, keep, outcome.values[keep],
                                  family=count_family(cfg))
    with open(fit_dir / "count_fit.json") as fh:
        count_fit = fit_from_json(fh.read())
    count_fit.model = count_kept.model
    if count_fit.latent_mode.shape[0] != count_kept.model.dim:
        raise ValueError("stored count fit does not match the rebuilt model")
    return cfg, ds, regions, binary_parts, count_kept, binary_fit, count_fit


def cmd_diagnose(args):
    fit_dir = Path(args.fit_dir)
    out = Path(args.out) if args.out else fit_dir
    t0 = time.perf_counter()
    cfg, ds, regions, binary_parts, count_parts, binary_fit, count_fit = \
        _rebuild(fit_dir)
    seed = int(cfg["seed"])
    n_samples = int(args.samples or cfg["adequacy_samples"])
    for label, fit in (("binary", binary_fit), ("count", count_fit)):
        rep = adequacy_report(fit, n_samples=n_samples,
                              seed=seed + STAGE_SEEDS["adequacy"])
        _write_text(out / f"adequacy_{label}.json", rep.summary_json() + "\n")
        _write_text(out / f"cpo_pit_{label}.csv", rep.per_observation_csv())
        _say(f"[diagnose] {label}: DIC={rep.dic:.2f} WAIC={rep.waic:.2f} "
             f"pWAIC={rep.p_waic:.2f}")
    _write_json(out / "timings.json",
                {"diagnose_s": time.perf_counter() - t0})
    return 0


def cmd_predict(args):
    fit_dir = Path(args.fit_dir)
    out = Path(args.out) if args.out else fit_dir
    cfg, ds, regions, binary_parts, count_parts, binary_fit, count_fit = \
        _rebuild(fit_dir)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.exceed_threshold is not None:
        cfg["exceed_threshold"] = args.exceed_threshold
    if args.grid_nx is not None:
        cfg["grid_nx"] = args.grid_nx
    if args.grid_ny is not None:
        cfg["grid_ny"] = args.grid_ny
    seed = int(cfg["seed"])

    t0 = time.perf_counter()
    boundary = None
    for block in binary_parts.model.blocks:
        if "mesh" in block.meta:
            boundary = block.meta["mesh"].boundary
            break
    if boundary is None:
        raise ValueError("prediction requires a spatial structural form")
    cells = make_grid(boundary, nx=int(cfg["grid_nx"]), ny=int(cfg["grid_ny"]))
    years = binary_parts.years
    grid = exceedance_grid(
        binary_fit, binary_parts, count_fit, count_parts, cells, years,
        threshold=int(cfg["exceed_threshold"]),
        n_samples=int(cfg["exceed_samples"]),
        seed=seed + STAGE_SEEDS["predict"], regions=regions)
    _write_text(out / "exceedance.csv", grid.to_csv())
    _write_text(out / "regions_summary.geojson",
                region_summaries_geojson(grid.region_summaries, regions,
                                         int(cfg["exceed_threshold"])) + "\n")
    _write_json(out / "timings.json",
                {"predict_s": time.perf_counter() - t0})
    _say(f"[predict] {len(cells)} cells x {len(years)} years "
         f"(threshold {cfg['exceed_threshold']}, "
         f"MC bound {grid.mc_se_bound:.4f}); outside cells: "
         f"{grid.outside_cells}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_common(p, need_out=True):
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--seed", type=int, help="base random seed (required)")
    if need_out:
        p.add_argument("--out", help="output directory", required=False)


def _add_model_flags(p):
    p.add_argument("--events")
    p.add_argument("--regions")
    p.add_argument("--population")
    p.add_argument("--form", choices=["baseline", "I", "II"])
    p.add_argument("--family",
                   choices=["poisson", "negbinomial", "gpoisson"])
    p.add_argument("--max-edge", dest="max_edge", type=float)
    p.add_argument("--extension", type=float)
    p.add_argument("--spline-basis", dest="spline_basis", type=int)
    p.add_argument("--threshold-grid-cap", dest="threshold_grid_cap",
                   type=int)
    p.add_argument("--pi-samples", dest="pi_samples", type=int)
    p.add_argument("--waic-samples", dest="waic_samples", type=int)
    p.add_argument("--adequacy-samples", dest="adequacy_samples", type=int)
    p.add_argument("--threads", type=int)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hurdlemap",
        description="Two-part zero-inflated spatio-temporal count pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    _add_common(p)
    for flag, typ in (("--sim-n", int), ("--sim-years", int),
                      ("--sim-domain", float), ("--sim-max-edge", float),
                      ("--sim-range", float), ("--sim-sd", float),
                      ("--sim-ar1", float), ("--sim-dispersion", float),
                      ("--sim-first-year", int), ("--sim-offset-log", float)):
        p.add_argument(flag, dest=flag[2:].replace("-", "_"), type=typ)
    p.add_argument("--sim-form", dest="sim_form",
                   choices=["baseline", "I", "II"])
    p.add_argument("--sim-family", dest="sim_family",
                   choices=["poisson", "negbinomial", "gpoisson"])
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="sequential two-part fit")
    _add_common(p)
    _add_model_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select-threshold",
                       help="binary fit and threshold scan only")
    _add_common(p)
    _add_model_flags(p)
    p.set_defaults(func=cmd_select_threshold)

    p = sub.add_parser("compare-families",
                       help="count-family comparison table")
    _add_common(p)
    _add_model_flags(p)
    p.set_defaults(func=cmd_compare_families)

    p = sub.add_parser("diagnose", help="adequacy reports from a fit dir")
    p.add_argument("--fit-dir", required=True)
    p.add_argument("--out")
    p.add_argument("--samples", type=int)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("predict", help="exceedance maps from a fit dir")
    p.add_argument("--fit-dir", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--exceed-threshold", dest="exceed_threshold", type=int)
    p.add_argument("--grid-nx", dest="grid_nx", type=int)
    p.add_argument("--grid-ny", dest="grid_ny", type=int)
    p.set_defaults(func=cmd_predict)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - envelope for scripting
        envelope = {"error": {"type": type(exc).__name__,
                              "message": str(exc),
                              "command": args.command}}
        print(json.dumps(envelope, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
