"""Command line driver: ``rcm <subcommand> --config PATH [--workers N] [--out DIR] [--dump-paths]``.

Exit codes: 0 all checks passed, 1 a check failed, 2 configuration or usage
error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
import traceback

import numpy as np

from . import __version__, verify
from .config import ConfigError, RunConfig, load_config
from .kernel import LatticeBox, heat_kernel_col, heat_kernel_row, pilot_radius
from .estimators import replica_seed
from .sampler import sample_paths

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
SUBCOMMANDS = ("kernel", "sample", "gradient-scan", "entropy-scan", "lclt", "green", "nash", "k-alpha",
               "report-all")

log = logging.getLogger("rcm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rcm", description="Heat kernels and checks for random walks among dynamic random conductances.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--workers", type=int, default=1, help="worker processes (never changes the numbers)")
    p.add_argument("--out", default=None, help="output directory (default: [run] out)")
    p.add_argument("--dump-paths", action="store_true", help="write sampled trajectories to paths.csv")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


# -- subcommands ----------------------------------------------------------------------

def _kernel(cfg: RunConfig, workers, out, dump):
    t0 = time.perf_counter()
    k = cfg["kernel"]
    spec = cfg.field_spec
    d = spec.dimension
    anchor = np.array(k["anchor"] or (0,) * d, dtype=np.int64)
    field = spec.realize(replica_seed(cfg.seed, 0))
    r = cfg["run"]["radius"] or pilot_radius(spec, max(k["t"] - k["s"], 1e-3), cfg["run"]["deficit"])
    while True:
        box = LatticeBox(np.zeros(d, dtype=np.int64), r + int(np.abs(anchor).max(initial=0)))
        row = heat_kernel_row(field, box, k["s"], k["t"], anchor, cfg["run"]["tol"])
        if cfg["run"]["radius"] is not None or row.mass_deficit <= cfg["run"]["deficit"]:
            break
        r = int(np.ceil(1.25 * r))
    row.seed = field.seed
    # column sums are not 1 in a dynamic field; the row from the same anchor certifies the box
    sl = row if k["direction"] == "row" else heat_kernel_col(field, box, k["s"], k["t"], anchor, cfg["run"]["tol"])
    sl.to_csv(os.path.join(out, "series_kernel.csv"))
    ok = row.mass_deficit <= cfg["run"]["deficit"]
    return [verify.CheckReport("kernel", "killed heat kernel slice with certified mass deficit",
                               {"direction": sl.direction, "row_mass_deficit": row.mass_deficit,
                                "radius": box.radius, "value_at_anchor": sl.at(anchor)},
                               {"mass_deficit_max": cfg["run"]["deficit"]}, bool(ok), time.perf_counter() - t0)]


def _sample(cfg, workers, out, dump):
    s = cfg["sample"]
    spec = cfg.field_spec
    reps = [verify.sampler_tv_check(spec, s["t"], s["paths"], cfg.seed),
            verify.displacement_check(spec, s["displacement_T"], s["displacement_replicas"],
                                      s["displacement_paths"], cfg.seed)]
    if dump:
        field = spec.realize(replica_seed(cfg.seed, 0))
        b = sample_paths(field, 0.0, np.zeros(spec.dimension, dtype=np.int64), s["t"],
                         min(s["paths"], 1000), cfg.seed)
        b.to_csv(os.path.join(out, "paths.csv"))
    return reps


def _common(cfg, section):
    return dict(M=cfg.replicas(section), seed=cfg.seed, radius=cfg["run"]["radius"])


def _gradient(cfg, workers, out, dump):
    g = cfg["gradient"]
    spec, kw = cfg.field_spec, _common(cfg, "gradient")
    reps = [verify.gradient_decay_check(spec, g["t_grid"], workers=workers, **kw),
            verify.second_derivative_decay_check(spec, g["t_grid"], workers=workers, **kw)]
    reps += [verify.lp_gradient_sum_check(spec, p, g["t_grid"], workers=workers, **kw) for p in g["p"]]
    reps.append(verify.near_diagonal_lower_check(spec, g["t_grid"], g["eps"], workers=workers, **kw))
    return reps


def _entropy(cfg, workers, out, dump):
    e = cfg["entropy"]
    return [verify.entropy_suite(cfg.field_spec, e["s_grid"], e["t_grid"], e["delta_pairs"],
                                 workers=workers, **_common(cfg, "entropy"))]


def _lclt(cfg, workers, out, dump):
    c = cfg["lclt"]
    spec, M = cfg.field_spec, cfg.replicas("lclt")
    return [verify.lclt_check(spec, c["t"], c["n_grid"], None, M, cfg.seed, workers),
            verify.gradient_lclt_check(spec, c["t"], c["n_grid"], None, M, cfg.seed, workers)]


def _green(cfg, workers, out, dump):
    g = cfg["green"]
    return [verify.green_asymptotics_check(cfg.spec_in(3), g["distances"], g["radius"], g["tmax"],
                                           cfg.replicas("green"), cfg.seed, workers)]


def _nash(cfg, workers, out, dump):
    return [verify.nash_check(cfg.field_spec, cfg["nash"]["t_grid"], workers=workers, **_common(cfg, "nash"))]


def _k_alpha(cfg, workers, out, dump):
    k = cfg["k_alpha"]
    cases = tuple((int(d), a) for d, a in k["cases"])
    return [verify.k_alpha_check(cases, k["t_grid"], k["ymax"])]


RUNNERS = {"kernel": _kernel, "sample": _sample, "gradient-scan": _gradient, "entropy-scan": _entropy,
           "lclt": _lclt, "green": _green, "nash": _nash, "k-alpha": _k_alpha}


# -- output -------------------------------------------------------------------------

def write_series(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("statistic,t,value,stderr,replicas,seed\n")
        for stat, t, v, e, m, s in rows:
            fh.write(f"{stat},{t!r},{v!r},{e!r},{m},{s}\n")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import numba
    import scipy
    return {"rcm": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def run(subcommand: str, cfg: RunConfig, out: str, workers: int = 1, dump_paths: bool = False) -> int:
    """Run ``subcommand``, write series, report and manifest into ``out``; return the exit code."""
    os.makedirs(out, exist_ok=True)
    names = [c for c in SUBCOMMANDS if c != "report-all"] if subcommand == "report-all" else [subcommand]
    reports = []
    for name in names:
        log.info("running %s", name)
        for rep in RUNNERS[name](cfg, workers, out, dump_paths):
            log.info("%s", rep.summary_line())
            reports.append(rep)
    files = [os.path.join(out, "series_kernel.csv")] if "kernel" in names else []
    for rep in reports:
        if rep.series:
            path = os.path.join(out, f"series_{rep.name}.csv")
            write_series(path, rep.series)
            files.append(path)
    passed = verify.summarize(reports)
    rpath = os.path.join(out, "report.json")
    with open(rpath, "w", encoding="utf-8") as fh:
        json.dump({"experiment": cfg.experiment, "subcommand": subcommand, "pass": passed,
                   "reports": [r.to_dict() for r in reports]}, fh, indent=2)
        fh.write("\n")
    files.append(rpath)
    if dump_paths and os.path.exists(os.path.join(out, "paths.csv")):
        files.append(os.path.join(out, "paths.csv"))
    manifest = {"config_sha256": cfg.digest(), "seed": cfg.seed, "subcommand": subcommand,
                "workers": workers, "versions": _versions(),
                "files": {os.path.basename(f): _sha256(f) for f in sorted(files)}}
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(out, "config.ini"), "w", encoding="utf-8") as fh:
        fh.write(cfg.emit())
    print(verify.format_table(reports))
    print("PASS" if passed else "FAIL")
    return EXIT_PASS if passed else EXIT_FAIL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    if args.workers < 1:
        print("rcm: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"rcm: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"rcm: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or cfg["run"]["out"]
    try:
        return run(args.subcommand, cfg, out, args.workers, args.dump_paths)
    except (ValueError, RuntimeError, OSError) as exc:
        if args.verbose:
            traceback.print_exc()
        print(f"rcm: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
