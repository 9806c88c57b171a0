"""Command line and pipeline: generate -> measure -> solve -> baseline ->
evaluate -> report.

A run is described by one JSON config. Each stage's outputs live in a
content-addressed cache directory keyed by the stage's config section and
the keys of the stages it reads, so unchanged stages are skipped and sweeps
share the snapshot. Every file is written to a temporary name and renamed.
The final artifacts of a run are copied to ``runs/<config hash>/`` next to
a manifest.
"""

from concurrent.futures import ProcessPoolExecutor
import argparse
import copy
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from dataclasses import asdict
from pathlib import Path

from . import __version__
from . import baseline as _baseline
from . import evaluate as _evaluate
from . import measurements as _measurements
from . import netmodel as _netmodel
from . import optcore
from . import rng as _rng
from . import solver_ce
from . import solver_sl

log = logging.getLogger("leap")

ROOT_ENV = "LEAP_ARTIFACT_ROOT"
MANIFEST_VERSION = 1

_NETWORK = {k: v for k, v in asdict(_netmodel.NetworkConfig()).items() if k != "seed"}
DEFAULTS = {
    "seed": 7,
    "network": _NETWORK,
    "measurements": {"bin_width_db": 1.0},
    "constants": {"n0_dbm_per_rb": None, "p_max_w_per_rb": 0.1, "iot_cap_db": 20.0,
                  "gamma_min_db": -10.0},
    "solver": {"algorithm": "sl", "iterations": 50_000, "zeta": 0.51, "step_scale": 1.0,
               "formulation": "reduced", "batch": 0, "average_from": 0.5,
               "scaling": "diagonal", "objective_scale": 3.0,
               "seed": None, "diagnostics_every": 5000},
    "baseline": {"alpha": 0.8, "i_nominal_db": [5.0, 10.0, 15.0]},
    "evaluation": {"dominance_threshold": 0.05},
}
_NULLABLE = {("constants", "n0_dbm_per_rb"), ("solver", "seed")}
_CHOICES = {("solver", "algorithm"): ("sl", "ce"),
            ("solver", "formulation"): ("reduced", "full"),
            ("solver", "scaling"): ("none", "alpha", "diagonal")}


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


def _check(value, default, where):
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{where or 'config'}: expected an object")
        for k in value:
            if k not in default:
                raise ConfigError(f"unknown key {'.'.join(filter(None, [where, k]))!r}")
        return {k: _check(value.get(k, d), d, ".".join(filter(None, [where, k])))
                for k, d in default.items()}
    path = tuple(where.split("."))
    if value is None:
        if path in _NULLABLE:
            return None
        raise ConfigError(f"{where}: null is not allowed")
    if path in _CHOICES:
        if value not in _CHOICES[path]:
            raise ConfigError(f"{where}: expected one of {_CHOICES[path]}, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{where}: expected a non-empty list")
        return [_check(v, default[0], where) for v in value]
    if isinstance(default, bool) or isinstance(value, bool):
        raise ConfigError(f"{where}: booleans are not accepted")
    if isinstance(default, int) or path in _NULLABLE and path[-1] == "seed":
        if not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number")
    return float(value)


class RunConfig:
    """Validated run configuration; every key not in DEFAULTS is rejected."""

    def __init__(self, data=None):
        self.data = _check(data or {}, DEFAULTS, "")

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as f:
                data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls(data)

    def to_dict(self):
        return copy.deepcopy(self.data)

    def with_overrides(self, **sections):
        d = self.to_dict()
        for name, values in sections.items():
            d[name].update(values)
        return RunConfig(d)

    @property
    def hash(self):
        return _digest(self.data)

    def network(self):
        return _netmodel.NetworkConfig(seed=self.data["seed"], **self.data["network"])

    def constants(self):
        c = self.data["constants"]
        return optcore.Constants.from_config(c["n0_dbm_per_rb"], c["p_max_w_per_rb"],
                                             c["iot_cap_db"], c["gamma_min_db"])

    def solver_seed(self):
        s = self.data["solver"]["seed"]
        return _rng.derive_seed(self.data["seed"], "solver") if s is None else s


def _digest(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_atomic(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    write_atomic(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def read_json(path):
    with open(path) as f:
        return json.load(f)


def artifact_root(root=None):
    return Path(root or os.environ.get(ROOT_ENV) or "artifacts")


# ---------------------------------------------------------------- stages

def _stage_generate(cfg, out, inputs):
    net = cfg.network()
    snap = _netmodel.generate_snapshot(net)
    write_json(out / "snapshot.json", snap.to_dict())
    # rates are scored on a second, independent UE drop over the same cells
    fresh = _netmodel.generate_snapshot(net, cells=snap.cells,
                                        seed=_rng.derive_seed(cfg.data["seed"], "evaluation-drop"))
    write_json(out / "eval_snapshot.json", fresh.to_dict())


def _stage_measure(cfg, out, inputs):
    snap = _netmodel.NetworkSnapshot.from_dict(read_json(inputs["generate"] / "snapshot.json"))
    stats = _measurements.build_statistics(snap, cfg.data["measurements"]["bin_width_db"])
    write_json(out / "statistics.json", stats.to_dict())


def _load_statistics(inputs):
    return _measurements.MeasurementStatistics.from_dict(
        read_json(inputs["measure"] / "statistics.json"))


def _stage_solve(cfg, out, inputs):
    stats = _load_statistics(inputs)
    inst = optcore.build_instance(stats, cfg.constants())
    s = cfg.data["solver"]
    if s["algorithm"] == "ce":
        fit = solver_ce.fit_gaussians(inst)
        sol, trace = solver_ce.solve_ce(inst, fit)
        write_atomic(out / "fit.json", fit.to_text())
    else:
        conf = solver_sl.SolverConfig(
            iterations=s["iterations"], zeta=s["zeta"], seed=cfg.solver_seed(),
            step_scale=s["step_scale"], formulation=s["formulation"], batch=s["batch"],
            average_from=s["average_from"], scaling=s["scaling"],
            objective_scale=s["objective_scale"], diagnostics_every=s["diagnostics_every"])
        sol, trace = solver_sl.solve(inst, conf)
    write_atomic(out / "trace.csv", trace.to_csv())
    write_json(out / "solution.json", sol.to_dict())


def _load_snapshot(inputs, name):
    return _netmodel.NetworkSnapshot.from_dict(read_json(inputs["generate"] / name))


def _stage_baseline(cfg, out, inputs):
    stats = _load_statistics(inputs)
    fresh = _load_snapshot(inputs, "eval_snapshot.json")
    b = cfg.data["baseline"]
    sweep = [_baseline.FaFpcConfig(b["alpha"], x) for x in b["i_nominal_db"]]
    sol, best, reports = _baseline.best_fa_fpc(
        stats, sweep, lambda s: _evaluate.evaluate_snapshot(s, fresh), cfg.constants())
    rows = ["alpha,i_nominal_db_above_n0,median_rate_bps_hz,selected"]
    for c, rep in reports.items():
        rows.append(f"{c.alpha},{c.i_nominal_db_above_n0},{rep.percentiles[50]:.9e},"
                    f"{int(c == best)}")
    write_atomic(out / "baseline_sweep.csv", "\n".join(rows) + "\n")
    write_json(out / "baseline_solution.json", sol.to_dict())


def _stage_evaluate(cfg, out, inputs):
    fresh = _load_snapshot(inputs, "eval_snapshot.json")
    stats = _load_statistics(inputs)
    sol = _evaluate.PowerControlSolution.from_dict(read_json(inputs["solve"] / "solution.json"))
    ref = _evaluate.PowerControlSolution.from_dict(
        read_json(inputs["baseline"] / "baseline_solution.json"))
    rep = _evaluate.evaluate_snapshot(sol, fresh, "leap")
    base = _evaluate.evaluate_snapshot(ref, fresh, "fa_fpc")
    for r in (rep, base):
        write_atomic(out / f"ues_{r.label}.csv", r.per_ue_csv())
        write_atomic(out / f"percentiles_{r.label}.csv", r.percentile_csv())
    write_atomic(out / "gains.csv", _evaluate.gain_csv(_evaluate.gain_table(rep, base)))
    groups = _evaluate.gain_by_interferer_count(rep, base, stats,
                                                cfg.data["evaluation"]["dominance_threshold"])
    write_atomic(out / "gain_groups.csv", _evaluate.gain_group_csv(groups))


def _read_rates(path):
    with open(path) as f:
        next(f)
        return [float(line.rsplit(",", 1)[1]) for line in f]


def _stage_report(cfg, out, inputs):
    ev = inputs["evaluate"]
    summary = {}
    for label in ("leap", "fa_fpc"):
        rates = sorted(_read_rates(ev / f"ues_{label}.csv"))
        n = len(rates)
        write_atomic(out / f"cdf_{label}.csv", "rate_bps_hz,cdf\n" + "".join(
            f"{x:.9e},{(i + 1) / n:.9e}\n" for i, x in enumerate(rates)))
        summary[label] = {str(q): v for q, v in _evaluate.percentiles(rates).items()}
    summary["gain"] = {k: summary["leap"][k] / summary["fa_fpc"][k] for k in summary["leap"]}
    write_json(out / "summary.json", summary)


# stage name -> (function, config sections it reads, upstream stages, outputs)
STAGES = {
    "generate": (_stage_generate, ("seed", "network"), (),
                 ("snapshot.json", "eval_snapshot.json")),
    "measure": (_stage_measure, ("measurements",), ("generate",), ("statistics.json",)),
    "solve": (_stage_solve, ("constants", "solver", "seed"), ("measure",),
              ("solution.json", "trace.csv")),
    "baseline": (_stage_baseline, ("constants", "baseline"), ("generate", "measure"),
                 ("baseline_solution.json", "baseline_sweep.csv")),
    "evaluate": (_stage_evaluate, ("evaluation",), ("generate", "measure", "solve", "baseline"),
                 ("ues_leap.csv", "ues_fa_fpc.csv", "percentiles_leap.csv",
                  "percentiles_fa_fpc.csv", "gains.csv", "gain_groups.csv")),
    "report": (_stage_report, (), ("evaluate",),
               ("cdf_leap.csv", "cdf_fa_fpc.csv", "summary.json")),
}
ORDER = tuple(STAGES)


class Pipeline:
    """Runs stages with content-addressed caching under ``root/cache``."""

    def __init__(self, config, root=None):
        self.config = config
        self.root = artifact_root(root)
        self.keys, self.dirs, self.records = {}, {}, []

    def key(self, stage):
        if stage not in self.keys:
            _, sections, ups, _ = STAGES[stage]
            payload = {"stage": stage, "version": __version__,
                       "config": {s: self.config.data[s] for s in sections},
                       "inputs": {u: self.key(u) for u in ups}}
            self.keys[stage] = _digest(payload)
        return self.keys[stage]

    def run_stage(self, stage):
        if stage in self.dirs:
            return self.dirs[stage]
        fn, _, ups, outputs = STAGES[stage]
        inputs = {u: self.run_stage(u) for u in ups}
        out = self.root / "cache" / f"{stage}-{self.key(stage)[:20]}"
        t = time.perf_counter()
        hit = all((out / name).exists() for name in outputs)
        if not hit:
            log.info("stage %s: computing", stage)
            out.mkdir(parents=True, exist_ok=True)
            try:
                fn(self.config, out, inputs)
            except Exception as exc:
                raise StageError(stage, exc) from exc
        else:
            log.info("stage %s: cached", stage)
        self.records.append({"stage": stage, "cached": hit, "key": self.key(stage),
                             "seconds": round(time.perf_counter() - t, 3)})
        self.dirs[stage] = out
        return out

    def run(self, until="report"):
        """Run every stage up to ``until`` and publish a run directory."""
        run_dir = self.root / "runs" / self.config.hash[:20]
        manifest = {"manifest_version": MANIFEST_VERSION, "tool_version": __version__,
                    "config_hash": self.config.hash, "config": self.config.data,
                    "inputs": {}, "status": "ok", "failed_stage": None}
        # the validated config is stored with the run, so the manifest does
        # not depend on which file (or sweep) asked for it
        write_json(run_dir / "config.json", self.config.data)
        manifest["inputs"]["config.json"] = {"sha256": file_hash(run_dir / "config.json")}
        start = time.perf_counter()
        try:
            for stage in ORDER[:ORDER.index(until) + 1]:
                self.run_stage(stage)
        except StageError as exc:
            manifest["status"] = "failed"
            manifest["failed_stage"] = exc.stage
            manifest["error"] = str(exc.__cause__)
        artifacts = {}
        for stage, out in self.dirs.items():
            for name in STAGES[stage][3]:
                src = out / name
                if src.exists():
                    dst = run_dir / name
                    _copy_atomic(src, dst)
                    artifacts[name] = {"stage": stage, "sha256": file_hash(dst)}
        manifest["artifacts"] = dict(sorted(artifacts.items()))
        manifest["timings"] = {"stages": self.records,
                               "total_seconds": round(time.perf_counter() - start, 3)}
        write_json(run_dir / "manifest.json", manifest)
        return run_dir, manifest


def _copy_atomic(src, dst):
    dst.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dst.parent, prefix=f".{dst.name}.")
    os.close(fd)
    shutil.copyfile(src, tmp)
    os.replace(tmp, dst)


def run_pipeline(config_path, root=None, until="report"):
    """Run a config file; returns ``(exit status, run directory)``."""
    cfg = RunConfig.from_file(config_path)
    run_dir, manifest = Pipeline(cfg, root).run(until)
    return (0 if manifest["status"] == "ok" else 1), run_dir


def _sweep_point(args):
    data, root = args
    cfg = RunConfig(data)
    run_dir, manifest = Pipeline(cfg, root).run("report")
    if manifest["status"] != "ok":
        raise StageError(manifest["failed_stage"], manifest.get("error"))
    summary = read_json(run_dir / "summary.json")
    return summary


def sweep(config, bins=None, caps=None, root=None, jobs=1):
    """One row per (bin width, IoT cap): medians and gains of LeAP vs FA-FPC."""
    bins = list(bins or [])
    caps = list(caps or [])
    if not bins and not caps:
        raise ConfigError("sweep needs at least one bin width or IoT cap")
    bins = bins or [config.data["measurements"]["bin_width_db"]]
    caps = caps or [config.data["constants"]["iot_cap_db"]]
    grid = [(b, c) for b in bins for c in caps]
    # the shared snapshot is produced once before the grid fans out
    Pipeline(config, root).run_stage("generate")
    points = [(config.with_overrides(measurements={"bin_width_db": float(b)},
                                     constants={"iot_cap_db": float(c)}).to_dict(), root)
              for b, c in grid]
    if jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_point, points))
    else:
        results = [_sweep_point(p) for p in points]
    rows = []
    for (b, c), s in zip(grid, results):
        rows.append({"bin_width_db": float(b), "iot_cap_db": float(c),
                     "median_leap": s["leap"]["50"], "median_fa_fpc": s["fa_fpc"]["50"],
                     "median_gain": s["gain"]["50"], "p20_gain": s["gain"]["20"]})
    return rows


def sweep_csv(rows):
    head = "bin_width_db,iot_cap_db,median_leap,median_fa_fpc,median_gain,p20_gain\n"
    return head + "".join(
        f"{r['bin_width_db']},{r['iot_cap_db']},{r['median_leap']:.9e},{r['median_fa_fpc']:.9e},"
        f"{r['median_gain']:.9e},{r['p20_gain']:.9e}\n" for r in rows)


# ------------------------------------------------------------------ CLI

def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _parser():
    p = argparse.ArgumentParser(prog="leap", description="Measurement-driven uplink power control pipeline.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthetic network snapshot")
    g.add_argument("--area-km2", type=float, default=9.0)
    g.add_argument("--macros", type=int, default=115)
    g.add_argument("--picos", type=int, default=10)
    g.add_argument("--density", type=float, default=450.0)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--out", required=True)

    m = sub.add_parser("measure", help="histogram statistics of a snapshot")
    m.add_argument("--snapshot", required=True)
    m.add_argument("--bin-size-db", type=float, default=1.0)
    m.add_argument("--out", required=True)

    s = sub.add_parser("solve", help="solve the program for a statistics file")
    s.add_argument("--statistics", required=True)
    s.add_argument("--algorithm", choices=("sl", "ce"), default="sl")
    d = DEFAULTS["solver"]
    s.add_argument("--iterations", type=int, default=d["iterations"])
    s.add_argument("--zeta", type=float, default=d["zeta"])
    s.add_argument("--step-scale", type=float, default=d["step_scale"])
    s.add_argument("--average-from", type=float, default=d["average_from"])
    s.add_argument("--formulation", choices=("reduced", "full"), default=d["formulation"])
    s.add_argument("--batch", type=int, default=d["batch"], help="draws per iteration (0: automatic)")
    s.add_argument("--objective-scale", type=float, default=d["objective_scale"])
    s.add_argument("--scaling", choices=("none", "alpha", "diagonal"), default=d["scaling"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--trace", help="CSV trace output")
    s.add_argument("--fit", help="Gaussian fit output (ce only)")

    b = sub.add_parser("baseline", help="best fixed-alpha FPC over a nominal-interference sweep")
    b.add_argument("--statistics", required=True)
    b.add_argument("--snapshot", required=True, help="UE snapshot used to rank the sweep")
    b.add_argument("--alpha", type=float, default=0.8)
    b.add_argument("--i-nominal-db", type=_floats, default=[5.0, 10.0, 15.0])
    b.add_argument("--out", required=True)

    e = sub.add_parser("evaluate", help="score a solution on a snapshot")
    e.add_argument("--solution", required=True)
    e.add_argument("--snapshot", required=True)
    e.add_argument("--reference", help="solution to compute gains against")
    e.add_argument("--statistics", help="statistics for the per-interferer-count grouping")
    e.add_argument("--dominance-threshold", type=float, default=0.05)
    e.add_argument("--out-dir", required=True)

    for name, helptext in (("run", "full pipeline from a config file"),
                           ("report", "full pipeline; print the percentile summary")):
        r = sub.add_parser(name, help=helptext)
        r.add_argument("--config", required=True)
        r.add_argument("--root", help=f"artifact root (default ${ROOT_ENV} or ./artifacts)")

    w = sub.add_parser("sweep", help="grid over bin width and IoT cap")
    w.add_argument("--config", required=True)
    w.add_argument("--bins", type=_floats, default=None)
    w.add_argument("--caps", type=_floats, default=None)
    w.add_argument("--jobs", type=int, default=1)
    w.add_argument("--root")
    w.add_argument("--out", help="CSV output (default: stdout)")
    return p


def _cmd(args):
    if args.command == "generate":
        cfg = _netmodel.NetworkConfig(area_km2=args.area_km2, macro_count=args.macros,
                                      pico_count=args.picos, density_per_km2=args.density,
                                      seed=args.seed)
        write_json(args.out, _netmodel.generate_snapshot(cfg).to_dict())
    elif args.command == "measure":
        snap = _netmodel.NetworkSnapshot.from_dict(read_json(args.snapshot))
        write_json(args.out, _measurements.build_statistics(snap, args.bin_size_db).to_dict())
    elif args.command == "solve":
        stats = _measurements.MeasurementStatistics.from_dict(read_json(args.statistics))
        inst = optcore.build_instance(stats)
        if args.algorithm == "ce":
            fit = solver_ce.fit_gaussians(inst)
            sol, trace = solver_ce.solve_ce(inst, fit)
            if args.fit:
                write_atomic(args.fit, fit.to_text())
        else:
            sol, trace = solver_sl.solve(inst, solver_sl.SolverConfig(
                iterations=args.iterations, zeta=args.zeta, seed=args.seed,
                step_scale=args.step_scale, scaling=args.scaling,
                formulation=args.formulation, batch=args.batch,
                average_from=args.average_from, objective_scale=args.objective_scale))
        write_json(args.out, sol.to_dict())
        if args.trace:
            write_atomic(args.trace, trace.to_csv())
    elif args.command == "baseline":
        stats = _measurements.MeasurementStatistics.from_dict(read_json(args.statistics))
        snap = _netmodel.NetworkSnapshot.from_dict(read_json(args.snapshot))
        sweep_cfg = [_baseline.FaFpcConfig(args.alpha, x) for x in args.i_nominal_db]
        sol, best, reports = _baseline.best_fa_fpc(
            stats, sweep_cfg, lambda s: _evaluate.evaluate_snapshot(s, snap))
        for c, rep in reports.items():
            mark = " *" if c == best else ""
            print(f"I_nom {c.i_nominal_db_above_n0:g} dB: median {rep.percentiles[50]:.4f}{mark}")
        write_json(args.out, sol.to_dict())
    elif args.command == "evaluate":
        sol = _evaluate.PowerControlSolution.from_dict(read_json(args.solution))
        snap = _netmodel.NetworkSnapshot.from_dict(read_json(args.snapshot))
        out = Path(args.out_dir)
        rep = _evaluate.evaluate_snapshot(sol, snap)
        write_atomic(out / "ues.csv", rep.per_ue_csv())
        write_atomic(out / "percentiles.csv", rep.percentile_csv())
        write_atomic(out / "cdf.csv", rep.cdf_csv())
        if args.reference:
            ref = _evaluate.evaluate_snapshot(
                _evaluate.PowerControlSolution.from_dict(read_json(args.reference)), snap)
            write_atomic(out / "gains.csv", _evaluate.gain_csv(_evaluate.gain_table(rep, ref)))
            if args.statistics:
                stats = _measurements.MeasurementStatistics.from_dict(read_json(args.statistics))
                groups = _evaluate.gain_by_interferer_count(rep, ref, stats,
                                                            args.dominance_threshold)
                write_atomic(out / "gain_groups.csv", _evaluate.gain_group_csv(groups))
    elif args.command in ("run", "report"):
        status, run_dir = run_pipeline(args.config, args.root)
        print(run_dir)
        if args.command == "report" and status == 0:
            s = read_json(run_dir / "summary.json")
            print("percentile  leap  fa_fpc  gain")
            for q in sorted(s["leap"], key=float):
                print(f"{q:>10}  {s['leap'][q]:.4f}  {s['fa_fpc'][q]:.4f}  {s['gain'][q]:.3f}")
        return status
    elif args.command == "sweep":
        rows = sweep(RunConfig.from_file(args.config), args.bins, args.caps, args.root, args.jobs)
        text = sweep_csv(rows)
        if args.out:
            write_atomic(args.out, text)
        else:
            sys.stdout.write(text)
    return 0


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _cmd(args)
    except (ConfigError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
