"""Command-line harness: ``expsketch {gen,embed,regress,dist-regress,stress-tight,verify}``.

Settings resolve as built-in defaults < ``--config`` JSON < explicit flags,
and the master seed falls back to ``$EXPSKETCH_SEED``.  Every report starts
with the resolved configuration.  Exit codes: 0 ok, 2 configuration error,
3 numerical failure; errors are printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import experiments
from .distributed import dist_regress, partition_rows
from .errors import NUMERIC_ERRORS, ConfigError, ExpSketchError
from .generators import KINDS, gen_matrix, planted_problem
from .linalg import read_mtx, read_vector, write_mtx
from .randsource import SeedSpec
from .regression import PipelineParams, RegressionProblem, _jsonable, lp_regress
from .sketch import GlobalParams, Mode, SketchParams, build_sketch, distortion_report, identity_operator

SEED_ENV = "EXPSKETCH_SEED"


@dataclass
class ExperimentConfig:
    command: str = "verify"
    mode: str = "LowP"
    p: float = 1.0
    n: int = 1000
    d: int = 8
    eps: float = 0.1
    k: int = 4
    seed: int = 0
    seeds: list = field(default_factory=lambda: [0])
    kind: str = "gaussian"
    density: float = 0.1
    noise: str = "t2"
    scheme: str = "contiguous"
    n_dirs: int = 200
    identity: bool = False
    input: str | None = None
    rhs: str | None = None
    out: str | None = None
    checks: list = field(default_factory=list)
    jobs: int = 1
    c1: float = 1.0
    c2: float = 1.0
    c_ose: float = 8.0
    c_samp: float = 1.0
    c_dense: float = 4.0
    gamma: float = 0.1
    practical_cap: int | None = 4096

    def validate(self):
        for name in ("c1", "c2", "c_ose", "c_samp", "c_dense", "gamma", "eps", "p", "density"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.seeds:
            raise ConfigError("seeds list must be non-empty")
        if self.practical_cap is not None and self.practical_cap < 1:
            raise ConfigError("practical_cap must be positive")
        if self.n < 1 or self.d < 1 or self.k < 1 or self.jobs < 1:
            raise ConfigError("n, d, k and jobs must be positive")
        Mode.parse(self.mode)

    def sketch_params(self) -> SketchParams:
        return SketchParams(GlobalParams(self.c1, self.c2), self.c_ose, self.c_dense, self.gamma,
                            practical_cap=self.practical_cap)

    def pipeline_params(self) -> PipelineParams:
        return PipelineParams(sketch=self.sketch_params(), c_samp=self.c_samp)

    def header(self) -> dict:
        return {"config": asdict(self), "master_seed": self.seed}


def parse_seeds(text) -> list:
    """'3' -> [3]; '0-39' -> 0..39; '1,5,9' -> [1, 5, 9]."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ConfigError(f"no seeds in {text!r}")
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="expsketch", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    add = common.add_argument
    add("--config", help="JSON file with settings; flags override it")
    add("--mode", help="HighP, LowP, L1 or DensePStable")
    add("--p", type=float)
    add("--n", type=int)
    add("--d", type=int)
    add("--eps", type=float)
    add("--k", type=int, help="number of machines")
    add("--seed", type=int, help=f"master seed (falls back to ${SEED_ENV})")
    add("--seeds", type=parse_seeds, help="seed list, e.g. 0-39 or 1,2,3")
    add("--out", help="output file (default: stdout)")
    add("--kind", choices=KINDS, help="generated matrix kind")
    add("--density", type=float)
    add("--noise", choices=("t2", "gaussian", "none"))
    add("--scheme", choices=("contiguous", "round_robin"))
    add("--n-dirs", type=int, dest="n_dirs")
    add("--input", help="Matrix Market file for M")
    add("--rhs", help="text vector file for b")
    add("--identity", action="store_const", const=True, help="use the identity test operator")
    add("--checks", type=lambda s: [c for c in s.split(",") if c], help="subset of verify checks")
    add("--jobs", type=int, help="parallel seed runs")
    add("--practical-cap", type=int, dest="practical_cap")
    add("--c1", type=float)
    add("--c2", type=float)
    add("--c-ose", type=float, dest="c_ose")
    add("--c-samp", type=float, dest="c_samp")
    add("--c-dense", type=float, dest="c_dense")
    add("--gamma", type=float)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [("gen", "write a generated matrix (Matrix Market)"),
                       ("embed", "sketch a matrix and write the distortion report (CSV)"),
                       ("regress", "run the regression pipeline (JSON)"),
                       ("dist-regress", "run the distributed protocol (JSON + ledger CSV)"),
                       ("stress-tight", "distortion on the tight example over seeds (JSON)"),
                       ("verify", "run the empirical checks (JSON)")]:
        sub.add_parser(name, parents=[common], help=text)
    return parser


def resolve_config(args) -> ExperimentConfig:
    values = {}
    if args.config:
        try:
            values.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "seed" not in values and args.seed is None and os.environ.get(SEED_ENV):
        try:
            values["seed"] = int(os.environ[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"${SEED_ENV} is not an integer") from exc
    for key, val in vars(args).items():
        if key in known and val is not None:
            values[key] = val
    values["command"] = args.command
    if "seeds" not in values:
        values["seeds"] = [values.get("seed", 0)]
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


# -- commands ------------------------------------------------------------------

def _emit(text, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _emit_json(obj, out):
    _emit(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", out)


def _matrix(cfg):
    if cfg.input:
        return read_mtx(cfg.input)
    return gen_matrix(cfg.kind, cfg.n, cfg.d, cfg.density, SeedSpec(cfg.seed, f"gen.{cfg.kind}"))


def _problem(cfg):
    if cfg.input:
        if not cfg.rhs:
            raise ConfigError("--input needs --rhs")
        M, b = read_mtx(cfg.input), read_vector(cfg.rhs)
    else:
        M, b = planted_problem(cfg.n, cfg.d, cfg.p, SeedSpec(cfg.seed, "planted"), cfg.noise)
    return RegressionProblem(M, b, cfg.p, cfg.eps)


def cmd_gen(cfg):
    M = _matrix(cfg)
    if not cfg.out:
        raise ConfigError("gen needs --out")
    write_mtx(cfg.out, M)
    return {"written": cfg.out, "shape": list(M.shape), "nnz": int(M.nnz)}


def cmd_embed(cfg):
    M = _matrix(cfg)
    n, d = M.shape
    if cfg.identity:
        op = identity_operator(n, cfg.p)
        out_norm = 2
    else:
        mode = Mode.parse(cfg.mode)
        op = build_sketch(mode, cfg.p, n, d, SeedSpec(cfg.seed, "embed"), cfg.sketch_params())
        out_norm = math.inf if mode is Mode.HIGH_P else 2
    dirs = experiments.random_directions(d, cfg.n_dirs, cfg.seed)
    rep = distortion_report(op, M, 2 if cfg.identity else cfg.p, out_norm, dirs)
    rows = [["direction", "ratio"]] + [[i, repr(float(r))] for i, r in enumerate(rep["ratios"])]
    lines = ["# " + json.dumps(_jsonable({**cfg.header(), "sketch": op.describe(), "min": rep["min"],
                                          "max": rep["max"], "distortion": rep["distortion"]}),
                               sort_keys=True)]
    buf = [",".join(map(str, r)) for r in rows]
    _emit("\n".join(lines + buf) + "\n", cfg.out)
    return None


def _regress_one(cfg, seed):
    prob = _problem(cfg)
    res = lp_regress(prob, cfg.pipeline_params(), seed=seed)
    return {"seed": seed, **res.to_dict()}


def cmd_regress(cfg):
    seeds = cfg.seeds if len(cfg.seeds) > 1 else [cfg.seed]
    runs = _map(cfg, _regress_one, seeds)
    _emit_json({**cfg.header(), "runs": runs}, cfg.out)


def cmd_dist_regress(cfg):
    prob = _problem(cfg)
    res, ledger = dist_regress(partition_rows(prob.M_bar, cfg.k, cfg.scheme), cfg.p, cfg.eps,
                               cfg.seed, cfg.pipeline_params())
    report = {**cfg.header(), "result": res.to_dict(),
              "ledger": {"total": ledger.total, "up": ledger.up, "down": ledger.down, "by_tag": ledger.by_tag()}}
    if cfg.out:
        stem = Path(cfg.out)
        stem.parent.mkdir(parents=True, exist_ok=True)
        ledger.to_csv(stem.with_suffix(".ledger.csv"))
        stem.with_suffix(".trace.json").write_text(json.dumps(ledger.to_trace()))
    _emit_json(report, cfg.out)


def _tight_one(cfg, seed):
    chk = experiments.check_tight(d=cfg.d, n=cfg.n, seeds=[seed], need=1)
    return {"seed": seed, "distortion": chk.detail["distortions"][0], "success": chk.passed,
            "bound": chk.detail["bound"]}


def cmd_stress_tight(cfg):
    runs = _map(cfg, _tight_one, cfg.seeds)
    frac = sum(r["success"] for r in runs) / len(runs)
    _emit_json({**cfg.header(), "success_fraction": frac, "runs": runs}, cfg.out)


def cmd_verify(cfg):
    names = cfg.checks or list(experiments.ALL_CHECKS)
    unknown = [c for c in names if c not in experiments.ALL_CHECKS]
    if unknown:
        raise ConfigError(f"unknown checks {unknown}; available: {list(experiments.ALL_CHECKS)}")
    results = []
    for name in names:
        chk = experiments.ALL_CHECKS[name]()
        print(chk.line(), file=sys.stderr)
        results.append(chk.to_dict())
    _emit_json({**cfg.header(), "all_passed": all(r["passed"] for r in results), "checks": results}, cfg.out)


def _map(cfg, fn, seeds):
    if cfg.jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            return list(pool.map(fn, [cfg] * len(seeds), seeds))
    return [fn(cfg, s) for s in seeds]


COMMANDS = {"gen": cmd_gen, "embed": cmd_embed, "regress": cmd_regress, "dist-regress": cmd_dist_regress,
            "stress-tight": cmd_stress_tight, "verify": cmd_verify}


def run_command(cfg: ExperimentConfig) -> int:
    out = COMMANDS[cfg.command](cfg)
    if out is not None:
        _emit_json({**cfg.header(), **out}, None)
    return 0


def _fail(exc, status):
    code = getattr(exc, "code", type(exc).__name__)
    print(json.dumps({"error": code, "type": type(exc).__name__, "message": str(exc), "exit_code": status}),
          file=sys.stderr)
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return run_command(cfg)
    except (*NUMERIC_ERRORS, np.linalg.LinAlgError) as exc:
        return _fail(exc, 3)
    except (ExpSketchError, ValueError, TypeError, OSError) as exc:
        return _fail(exc, 2)
    except ArithmeticError as exc:
        return _fail(exc, 3)


if __name__ == "__main__":
    sys.exit(main())
