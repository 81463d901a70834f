"""Batch command-line front end.

Subcommands:

* ``sweep``  - score every candidate design and emit one CSV row each
* ``oed``    - sweep plus a utility ranking and argmax summary
* ``greedy`` - sequential design; emits the full per-round trace
* ``dci``    - solve the inverse problem for one design
* ``diag``   - predictability diagnostic only (no rejection sampling)

Every run is driven by a single JSON config (paths inside it are resolved
relative to the config file) and writes a manifest echoing the resolved
config, its content hash and the seeds, so reruns are reproducible and
diffable.  Exit codes: 0 success, 2 config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, criteria, dci, design, models, sampling

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

MANIFEST_SCHEMA_VERSION = 1

_MISSING = object()


class ConfigError(Exception):
    """Invalid or missing run-configuration field; message names the path."""


def _get(cfg: dict, path: str, types=None, default=_MISSING, choices=None):
    node = cfg
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            if default is not _MISSING:
                return default
            raise ConfigError(f"{path}: missing required field")
        node = node[part]
    if types is not None and not isinstance(node, types):
        raise ConfigError(f"{path}: expected {types}, got {type(node).__name__}")
    if isinstance(node, bool) and types in ((int, float), int):
        raise ConfigError(f"{path}: expected a number, got a boolean")
    if choices is not None and node not in choices:
        raise ConfigError(f"{path}: must be one of {sorted(choices)}")
    return node


def load_config(path: Path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def build_model(cfg: dict, paper_scale: bool = False):
    kind = _get(cfg, "model.kind", str, choices=("heat_rod_1d", "heat_plate_2d", "synthetic"))
    try:
        if kind == "heat_rod_1d":
            return models.HeatRod1D(
                elements=_get(cfg, "model.elements", int, default=40),
                time_steps=_get(cfg, "model.time_steps", int, default=20),
                t_final=_get(cfg, "model.t_final", (int, float), default=1.0),
            )
        if kind == "heat_plate_2d":
            elements = _get(cfg, "model.elements", int, default=30)
            if paper_scale:
                elements = 100
            return models.HeatPlate2D(
                elements_per_axis=elements,
                time_steps=_get(cfg, "model.time_steps", int, default=40),
                t_final=_get(cfg, "model.t_final", (int, float), default=2.0),
            )
        name = _get(cfg, "model.name", str)
        catalog = models.synthetic_maps()
        if name not in catalog:
            raise ConfigError(f"model.name: unknown synthetic model {name!r}; "
                              f"available: {sorted(catalog)}")
        return catalog[name]
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc


def _build_box(cfg: dict, model) -> sampling.ParameterBox:
    spec = _get(cfg, "sampling.box", list, default=None)
    if spec is None:
        return model.parameter_box
    try:
        return sampling.ParameterBox(spec[0], spec[1])
    except (IndexError, TypeError, ValueError) as exc:
        raise ConfigError(f"sampling.box: {exc}") from exc


def build_density(spec: dict, model, field_path: str, default_box=None) -> dci.Density:
    kind = _get(spec, "kind", str, choices=("gaussian", "uniform-box", "kde-from-samples"))
    try:
        if kind == "uniform-box":
            lower = _get(spec, "lower", list, default=None)
            upper = _get(spec, "upper", list, default=None)
            if lower is None or upper is None:
                if default_box is None:
                    raise ConfigError(f"{field_path}: uniform-box needs lower/upper")
                return dci.UniformBoxDensity(default_box)
            return dci.UniformBoxDensity(sampling.ParameterBox(lower, upper))
        if kind == "gaussian":
            mean = _get(spec, "mean", (list, int, float))
            cov = _get(spec, "cov", (list, int, float))
            return dci.GaussianDensity(np.atleast_1d(mean), cov)
        samples = _get(spec, "samples", list)
        return dci.KdeDensity(np.asarray(samples, dtype=float),
                              bandwidth_rule=spec.get("bandwidth", "silverman"))
    except ValueError as exc:
        raise ConfigError(f"{field_path}: {exc}") from exc


def _draw_criteria_samples(cfg, box, seed) -> sampling.SampleSet:
    count = _get(cfg, "sampling.count", int)
    if count < 1:
        raise ConfigError("sampling.count: must be at least 1")
    measure = _get(cfg, "sampling.measure", str, default="volume",
                   choices=criteria.HM_MEASURES)
    if measure == "volume":
        return sampling.draw_samples(box, count, seed)
    init_spec = _get(cfg, "sampling.init", dict, default=None)
    if init_spec is None:
        # The initial measure defaults to uniform on the box, in which case
        # it coincides with the volume measure.
        return sampling.draw_samples(box, count, seed)
    density = build_density(init_spec, None, "sampling.init", default_box=box)
    rng = np.random.default_rng(seed)
    points = np.empty((count, box.dim))
    filled = 0
    while filled < count:
        block = density.sample(rng, count)
        keep = block[box.contains(block)]
        take = min(count - filled, keep.shape[0])
        points[filled : filled + take] = keep[:take]
        filled += take
    return sampling.SampleSet(points=points, seed=seed, scheme="initial-density")


def _field_batch(cfg, model, box, seed, workers) -> sampling.FieldJacobianBatch:
    fd_step = _get(cfg, "sampling.fd_step", (int, float), default=1e-5)
    if fd_step <= 0:
        raise ConfigError("sampling.fd_step: must be positive")
    cache = _get(cfg, "sampling.batch_cache", str, default=None)
    cache_path = None
    if cache is not None:
        cache_path = cfg["_base_dir"] / cache
        if cache_path.exists():
            batch = sampling.load_batch(cache_path)
            if batch.model_id == model.model_id and batch.samples.seed == seed:
                return batch
    samples = _draw_criteria_samples(cfg, box, seed)
    batch = sampling.estimate_field_jacobians(model, samples, fd_step=fd_step, workers=workers)
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        sampling.save_batch(batch, cache_path)
    return batch


def _design_space(cfg, model) -> design.DesignSpace:
    arity = _get(cfg, "design.arity", int, default=2)
    if arity == 1:
        return design.scalar_space(model.field_size, coordinates=model.coordinates)
    if arity == 2:
        return design.pair_space(model.field_size, coordinates=model.coordinates)
    raise ConfigError("design.arity: only 1 and 2 are supported for exhaustive search")


def _sensor_rows(cfg, model, path="dci.sensors") -> tuple[int, ...]:
    sensors = _get(cfg, path, list)
    if not sensors:
        raise ConfigError(f"{path}: need at least one sensor")
    return tuple(models.ForwardModel.nearest_field_index(model, s) for s in sensors)


def _coordinate_rows(model, rows) -> list:
    coords = np.atleast_2d(model.coordinates.astype(float))
    if coords.shape[0] == 1:
        coords = coords.T
    return [coords[r].tolist() for r in rows]


def _write_manifest(outdir: Path, task, cfg, args, seed, outputs, elapsed) -> None:
    echo = {k: v for k, v in cfg.items() if not k.startswith("_")}
    canonical = json.dumps(echo, sort_keys=True).encode()
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "tool_version": __version__,
        "task": task,
        "config_sha256": hashlib.sha256(canonical).hexdigest(),
        "config": echo,
        "seed_used": seed,
        "workers": args.workers,
        "paper_scale": bool(args.paper_scale),
        "outputs": sorted(outputs),
        "elapsed_seconds": round(elapsed, 3),
    }
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")


def _resolve_run(cfg, args):
    seed = args.seed if args.seed is not None else _get(cfg, "sampling.seed", int, default=0)
    outdir = Path(args.out) if args.out else cfg["_base_dir"] / _get(cfg, "output_dir", str)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.paper_scale and _get(cfg, "model.kind", str, default="") == "heat_plate_2d":
        cfg.setdefault("sampling", {})["count"] = 1000
    model = build_model(cfg, paper_scale=args.paper_scale)
    return seed, outdir, model


def run_sweep(cfg, args) -> list[str]:
    seed, outdir, model = _resolve_run(cfg, args)
    box = _build_box(cfg, model)
    rank_tol = _get(cfg, "tolerances.rank_tol", (int, float), default=1e-12)
    measure = _get(cfg, "sampling.measure", str, default="volume")
    batch = _field_batch(cfg, model, box, seed, args.workers)
    space = _design_space(cfg, model)
    result = design.exhaustive_oed(space, batch, utility="ese_inverse",
                                   rank_tol=rank_tol, hm_measure=measure)
    coords = space.index_geometry
    criteria.reports_to_csv(outdir / "sweep.csv", result.reports,
                            coordinates=None if coords is None else list(coords))
    return ["sweep.csv"]


def run_oed(cfg, args) -> list[str]:
    seed, outdir, model = _resolve_run(cfg, args)
    box = _build_box(cfg, model)
    rank_tol = _get(cfg, "tolerances.rank_tol", (int, float), default=1e-12)
    utility = _get(cfg, "design.utility", str, default="ese_inverse",
                   choices=design.UTILITIES)
    measure = _get(cfg, "sampling.measure", str, default="volume")
    batch = _field_batch(cfg, model, box, seed, args.workers)
    space = _design_space(cfg, model)
    result = design.exhaustive_oed(space, batch, utility=utility,
                                   rank_tol=rank_tol, hm_measure=measure)
    design.ranking_to_csv(outdir / "ranking.csv", result)
    summary = {
        "schema_version": 1,
        "utility": utility,
        "best_design_id": result.best_report.design_id,
        "best_candidate": list(result.best_candidate),
        "best_value": getattr(result.best_report, utility),
        "candidate_count": len(space),
    }
    if space.arity == 2 and model.coordinates.ndim == 1:
        grid = design.pair_score_grid(space, result.values(utility), model.field_size)
        peaks = design.local_maxima(grid)
        summary["local_maxima"] = [
            {"rows": [i, j],
             "coordinates": [model.coordinates[i], model.coordinates[j]],
             "value": grid[i, j]}
            for i, j in peaks if i > j
        ]
    with open(outdir / "oed_summary.json", "w") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")
    return ["ranking.csv", "oed_summary.json"]


def run_greedy(cfg, args) -> list[str]:
    seed, outdir, model = _resolve_run(cfg, args)
    box = _build_box(cfg, model)
    rank_tol = _get(cfg, "tolerances.rank_tol", (int, float), default=1e-12)
    tol = _get(cfg, "tolerances.greedy_tol", (int, float), default=1e-3)
    m_target = _get(cfg, "greedy.m_target", int)
    if m_target < 1:
        raise ConfigError("greedy.m_target: must be at least 1")
    batch = _field_batch(cfg, model, box, seed, args.workers)
    space = design.scalar_space(model.field_size, coordinates=model.coordinates)
    trace = design.greedy_oed(space, batch, m_target=m_target, tol=tol, rank_tol=rank_tol)
    design.trace_to_json(outdir / "greedy_trace.json", trace,
                         coordinates=space.index_geometry)
    outputs = ["greedy_trace.json", "greedy_summary.json"]
    coords = space.index_geometry
    for rnd in trace.rounds:
        name = f"greedy_round_{rnd.round_index:02d}.csv"
        with open(outdir / name, "w", newline="") as fh:
            fh.write("candidate," + ",".join(f"c{i}" for i in range(coords.shape[1]))
                     + f",{rnd.utility}\n")
            for q, score in enumerate(rnd.scores):
                cvals = ",".join(f"{v:.17g}" for v in coords[q])
                fh.write(f"{q},{cvals},{score:.17g}\n")
        outputs.append(name)
    summary = {
        "schema_version": 1,
        "selected_rows": list(trace.selected),
        "selected_coordinates": _coordinate_rows(model, trace.selected),
        "stop_reason": trace.stop_reason,
        "rounds_run": len(trace.rounds),
        "tol": tol,
    }
    with open(outdir / "greedy_summary.json", "w") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")
    return outputs


def _dci_pieces(cfg, args):
    seed, outdir, model = _resolve_run(cfg, args)
    rows = _sensor_rows(cfg, model)
    box = _build_box(cfg, model)
    init_spec = _get(cfg, "dci.init", dict, default=None)
    init = (dci.UniformBoxDensity(box) if init_spec is None
            else build_density(init_spec, model, "dci.init", default_box=box))
    obs_spec = _get(cfg, "dci.observed", dict, default=None)
    if obs_spec is None:
        obs_spec = {"kind": "gaussian", "mean": "model-midpoint", "cov": 0.15}
    if obs_spec.get("kind") == "gaussian" and obs_spec.get("mean") == "model-midpoint":
        midpoint_qoi = model.evaluate(box.midpoint)[list(rows)]
        obs_spec = dict(obs_spec, mean=midpoint_qoi.tolist())
    observed = build_density(obs_spec, model, "dci.observed")
    count = _get(cfg, "dci.count", int, default=_get(cfg, "sampling.count", int, default=1000))
    dci_seed = _get(cfg, "dci.seed", int, default=seed)
    bandwidth = _get(cfg, "dci.bandwidth", str, default="silverman")
    return seed, outdir, model, rows, box, init, observed, count, dci_seed, bandwidth


def run_dci(cfg, args) -> list[str]:
    (_, outdir, model, rows, box, init, observed,
     count, dci_seed, bandwidth) = _dci_pieces(cfg, args)
    ensemble = dci.dci_solve(model, rows, init, observed, count, dci_seed,
                             bandwidth_rule=bandwidth)
    dci.ensemble_to_csv(outdir / "ensemble.csv", ensemble)
    summary = ensemble.summary()
    summary["design_rows"] = list(rows)
    summary["design_coordinates"] = _coordinate_rows(model, rows)
    with open(outdir / "dci_summary.json", "w") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")
    outputs = ["ensemble.csv", "dci_summary.json"]
    if model.n_params == 2:
        x, y, values = dci.updated_density_grid(ensemble, box)
        dci.density_grid_to_csv(outdir / "updated_density.csv", x, y, values)
        outputs.append("updated_density.csv")
    return outputs


def run_diag(cfg, args) -> list[str]:
    (_, outdir, model, rows, box, init, observed,
     count, dci_seed, bandwidth) = _dci_pieces(cfg, args)
    rng = np.random.default_rng(dci_seed)
    points = init.sample(rng, count)
    qoi = np.empty((count, len(rows)))
    for i in range(count):
        qoi[i] = model.evaluate(points[i])[list(rows)]
    predicted = dci.push_forward_density(qoi, bandwidth_rule=bandwidth)
    import warnings as _warnings

    with _warnings.catch_warnings():
        _warnings.simplefilter("ignore", dci.PredictabilityWarning)
        ensemble = dci.update_weights(qoi, observed, predicted, points=points)
    summary = ensemble.summary()
    summary["design_rows"] = list(rows)
    summary["predictability_ok"] = bool(
        abs(ensemble.mean_ratio - 1.0) <= dci.DIAGNOSTIC_TOL
    )
    with open(outdir / "diagnostics.json", "w") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")
    return ["diagnostics.json"]


_TASKS = {
    "sweep": run_sweep,
    "oed": run_oed,
    "greedy": run_greedy,
    "dci": run_dci,
    "diag": run_diag,
}

# Config "task" names accepted as aliases of the subcommands.
_TASK_ALIASES = {
    "criteria-sweep": "sweep",
    "exhaustive-oed": "oed",
    "greedy-oed": "greedy",
    "dci-solve": "dci",
    "diagnostics": "diag",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svoed",
        description="Design-criterion sweeps, greedy sensor placement and "
                    "data-consistent inversion from one JSON run config.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("sweep", "score every candidate design"),
        ("oed", "rank designs by a utility and report the argmax"),
        ("greedy", "sequential component-by-component design"),
        ("dci", "solve the inverse problem for one design"),
        ("diag", "predictability diagnostic for one design"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="override sampling seed")
        p.add_argument("--workers", type=int, default=None,
                       help="thread workers for model evaluations (default: serial)")
        p.add_argument("--paper-scale", action="store_true",
                       help="full-resolution settings for the 2-D plate model")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        config_path = Path(args.config).resolve()
        cfg = load_config(config_path)
        cfg["_base_dir"] = config_path.parent
        task_field = _get(cfg, "task", str, default=args.command)
        task = _TASK_ALIASES.get(task_field, task_field)
        if task != args.command:
            raise ConfigError(
                f"task: config says {task_field!r} but the {args.command!r} "
                "subcommand was invoked"
            )
        runner = _TASKS[args.command]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        outputs = runner(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (sampling.ModelEvaluationError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    seed = args.seed if args.seed is not None else _get(cfg, "sampling.seed", int, default=0)
    outdir = Path(args.out) if args.out else cfg["_base_dir"] / _get(cfg, "output_dir", str)
    _write_manifest(outdir, args.command, cfg, args, seed,
                    outputs, time.perf_counter() - started)
    print(f"{args.command}: wrote {', '.join(sorted(outputs) + ['manifest.json'])} "
          f"to {outdir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
