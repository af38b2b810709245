"""Command line entry point.

Run configurations are INI files.  Every section and key is optional; a
missing key takes the default listed in ``SCHEMA``.  Unknown sections or keys
are rejected.

Example::

    [domain]
    kind = l-shape
    initial_triangles = 143

    [field]
    kind = lognormal
    modes = 10
    decay = 4

    [adapt]
    max_iterations = 10
    n_mc = 100
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from .adapt import AdaptConfig, avmc, reports_csv, run_summary, sampled_error, write_summary
from .fem import make_domain, solve_darcy, write_mesh
from .fields import CoefficientField, coefficient_tt, field_error_linf
from .regression import FitConfig, SnapshotCache
from .tt import load_tt, save_tt, tt_dofs

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid run configuration."""


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in text.replace(",", " ").split())


SCHEMA = {
    "run": {"seed": (int, 0), "out": (str, "avmc-out"), "threads": (int, 0),
            "checkpoints": (_bool, False), "cache": (str, "")},
    "domain": {"kind": (str, "unit-square"), "initial_triangles": (int, 205)},
    "field": {"kind": (str, "affine"), "modes": (int, 20), "decay": (float, 2.0),
              "scale": (float, 0.9), "mean": (float, 1.0), "rho": (float, 1.0),
              "theta": (float, 0.1), "squarings": (int, 4), "series_terms": (int, 8),
              "round_tol": (float, 1e-6), "degree_cap": (int, 10)},
    "adapt": {"theta_det": (float, 0.3), "theta_sto": (float, 0.5), "theta_alg": (float, 0.3),
              "target": (float, 0.0), "gramian_threshold": (float, 0.5),
              "max_iterations": (int, 12), "max_tt_dofs": (int, 10**8),
              "max_samples": (int, 10**6), "initial_samples": (int, 100),
              "initial_dims": (_ints, (2,)), "lookahead": (int, 1), "n_mc": (int, 250),
              "source": (float, 1.0), "c_det": (float, 1.0), "c_int": (float, 1.0),
              "round_tol": (float, 1e-10), "split_all_edges": (_bool, True)},
    "fit": {"initial_rank": (int, 1), "max_rank": (int, 10), "max_sweeps": (int, 400),
            "phase_sweeps": (int, 60), "stagnation_tol": (float, 1e-4),
            "validation_fraction": (float, 0.2), "ridge": (float, 1e-12),
            "probe_sweeps": (int, 2), "patience": (int, 2),
            "rank_improvement": (float, 1e-2), "rank_adapt": (_bool, True)},
}


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def field(self) -> CoefficientField:
        f = self["field"]
        return CoefficientField(f["kind"], f["modes"], f["decay"], f["scale"], f["mean"])

    def field_options(self) -> dict:
        f = self["field"]
        if f["kind"] != "lognormal":
            return {}
        return {"squarings": f["squarings"], "series_terms": f["series_terms"],
                "tol": f["round_tol"], "degree_cap": f["degree_cap"]}

    def measure(self):
        f = self["field"]
        return self.field().measure(f["rho"], f["theta"])

    def mesh(self):
        d = self["domain"]
        return make_domain(d["kind"], d["initial_triangles"])

    def threads(self) -> int:
        n = self["run"]["threads"]
        return n if n > 0 else (os.cpu_count() or 1)

    def adapt_config(self) -> AdaptConfig:
        fit = FitConfig(**self["fit"], seed=self["run"]["seed"])
        return AdaptConfig(**self["adapt"], seed=self["run"]["seed"], threads=self.threads(),
                           fit=fit, field_options=self.field_options())


def parse_config(text: str) -> RunConfig:
    """Parse and validate INI text against ``SCHEMA``."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    values = {name: {k: default for k, (_, default) in keys.items()}
              for name, keys in SCHEMA.items()}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            convert = SCHEMA[section][key][0]
            try:
                values[section][key] = convert(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {exc}") from exc
    config = RunConfig(values)
    try:
        config.field()
        config.adapt_config()
        config.measure().check_integrable(2.0)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return config


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    values = {k: dict(v) for k, v in config.values.items()}
    if getattr(args, "seed", None) is not None:
        values["run"]["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        values["run"]["threads"] = args.threads
    if getattr(args, "out", None) is not None:
        values["run"]["out"] = args.out
    return RunConfig(values)


def cmd_run(config: RunConfig) -> int:
    out = config["run"]["out"]
    os.makedirs(out, exist_ok=True)
    field, measure, mesh = config.field(), config.measure(), config.mesh()
    adapt = config.adapt_config()
    cache = SnapshotCache(config["run"]["cache"]) if config["run"]["cache"] else None

    def checkpoint(record):
        if config["run"]["checkpoints"]:
            save_tt(record.tt, os.path.join(out, f"tt_{record.iteration:03d}.ttrn"))
            write_mesh(record.mesh, os.path.join(out, f"mesh_{record.iteration:03d}.txt"))

    start = time.perf_counter()
    result = avmc(mesh, field, measure, adapt, cache=cache, callback=checkpoint)
    rng = np.random.default_rng([adapt.seed, 1])
    sampled_error(result.records, field, measure, adapt.n_mc, rng, adapt.source, adapt.threads)
    with open(os.path.join(out, "reports.csv"), "w", newline="") as fh:
        fh.write(reports_csv(result.records))
    save_tt(result.tt, os.path.join(out, "final.ttrn"))
    write_mesh(result.state.mesh, os.path.join(out, "final_mesh.txt"))
    summary = run_summary(result, time.perf_counter() - start)
    write_summary(os.path.join(out, "summary.json"), summary)
    print(f"{result.reason}: {len(result.records)} iterations, eta={summary['eta']:.4e}, "
          f"E_u={summary['E_u']:.4e}, output in {out}")
    return 0


def cmd_field_check(config: RunConfig, n_samples: int = 250) -> float:
    field, measure, mesh = config.field(), config.measure(), config.mesh()
    tt = coefficient_tt(field, mesh, measure, **config.field_options())
    rng = np.random.default_rng(config["run"]["seed"])
    err = field_error_linf(field, tt, mesh, measure, n_samples, rng)
    print(f"eps_inf = {err:.6e}  (dims {tt.dims}, ranks {tt.ranks}, "
          f"{mesh.n_triangles} triangles)")
    return err


def cmd_solve_one(config: RunConfig, y) -> str:
    field, mesh = config.field(), config.mesh()
    params = np.zeros(field.n_modes)
    y = np.asarray(y, dtype=float)
    if y.size > field.n_modes:
        raise ConfigError(f"{y.size} parameters given but the field has {field.n_modes} modes")
    params[: y.size] = y
    solution = solve_darcy(mesh, field, params, config["adapt"]["source"])
    out = config["run"]["out"]
    os.makedirs(out, exist_ok=True)
    write_mesh(mesh, os.path.join(out, "mesh.txt"))
    np.savetxt(os.path.join(out, "solution.txt"), solution.values, fmt="%.17g")
    print(f"solved on {mesh.n_triangles} triangles, max u = {solution.values.max():.6e}, "
          f"output in {out}")
    return out


def cmd_tt_info(path) -> dict:
    tt = load_tt(path)
    info = {"physical": tt.shape[0], "dims": list(tt.dims), "ranks": list(tt.ranks),
            "dofs": tt_dofs(tt)}
    print(json.dumps(info))
    return info


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avmc", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="INI run configuration")
        p.add_argument("--threads", type=int, help="worker threads (default: logical cores)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", help="output directory")

    common(sub.add_parser("run", help="adaptive solve, writes reports.csv and summary.json"))
    p = sub.add_parser("field-check", help="sampled accuracy of the coefficient train")
    common(p)
    p.add_argument("--samples", type=int, default=250)
    p = sub.add_parser("solve-one", help="deterministic solve at one parameter")
    common(p)
    p.add_argument("--y", default="", help="comma separated parameter values")
    p = sub.add_parser("tt-info", help="print dims, ranks and dofs of a TTRN file")
    p.add_argument("file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "tt-info":
            cmd_tt_info(args.file)
            return 0
        config = _apply_overrides(load_config(args.config), args)
        if args.command == "run":
            return cmd_run(config)
        if args.command == "field-check":
            cmd_field_check(config, args.samples)
            return 0
        y = [float(t) for t in args.y.split(",") if t.strip()]
        cmd_solve_one(config, y)
        return 0
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"avmc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
