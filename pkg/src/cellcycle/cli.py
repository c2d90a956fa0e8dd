"""Command-line front end.

Each subcommand reads an optional INI config (sections ``[model]``,
``[experiment]`` and ``[run]``), applies flag overrides, runs one experiment
and writes CSV files plus ``summary.txt`` and ``summary.kv`` atomically into
the output directory.

Exit codes: 0 success, 1 usage or validation failure, 2 runtime error.
"""

from __future__ import annotations

import argparse
import configparser
import datetime as _dt
import json
import math
import os
import re
import sys
import tempfile
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from . import chain_sim, coupling_engine, ergodicity_lab, fm_metric, limit_lab
from .chain_sim import EmpiricalMeasure
from .errors import CellCycleError, ConfigParseError, InvalidParams, UnknownModel
from .model_core import Probe, audit_assumptions, builtin_model

SUBCOMMANDS = ("audit", "simulate", "push", "fm", "couple", "mix", "invariant", "clt", "lil")


class UsageError(Exception):
    pass


def _vector(text) -> list:
    if isinstance(text, (int, float)):
        return [float(text)]
    return [float(v) for v in str(text).split(",")]


def _positive_int(text) -> int:
    v = int(text)
    if v < 1:
        raise ValueError(f"expected a positive integer, got {v}")
    return v


def _nonneg_int(text) -> int:
    v = int(text)
    if v < 0:
        raise ValueError(f"expected a nonnegative integer, got {v}")
    return v


def _bool(text) -> bool:
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_param(text: str):
    """Model parameter: number, JSON list, ``1,2`` vector or ``1,0;0,1`` matrix."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    try:
        if ";" in text:
            return [[float(v) for v in row.split(",")] for row in text.split(";")]
        if "," in text:
            return [float(v) for v in text.split(",")]
    except ValueError:
        pass
    raise ValueError(f"cannot parse model parameter value {text!r}")


# key -> (parser, default); None defaults mean "derived at run time"
RUN_KEYS: dict = {
    "seed": (int, 0),
    "output": (str, "."),
    "threads": (_positive_int, 1),
    "timestamp": (_bool, True),
}

EXPERIMENT_KEYS: dict = {
    "audit": {"n_x": (_positive_int, 33), "n_nodes": (_positive_int, 256)},
    "simulate": {"x0": (_vector, None), "n": (_nonneg_int, 100), "reps": (_positive_int, 1)},
    "push": {"input": (str, None), "x0": (_vector, None), "n": (_nonneg_int, 10), "particles": (_positive_int, 10_000)},
    "fm": {"cap": (_positive_int, fm_metric.DEFAULT_CAP)},
    "couple": {
        "x0": (_vector, None),
        "y0": (_vector, None),
        "n": (_nonneg_int, 100),
        "reps": (_positive_int, 1000),
        "kappa": (float, None),
    },
    "mix": {
        "x1": (_vector, [0.0]),
        "x2": (_vector, [10.0]),
        "n_max": (_positive_int, 30),
        "particles": (_positive_int, 10_000),
        "cap": (_positive_int, fm_metric.DEFAULT_CAP),
    },
    "invariant": {
        "burn_in": (_nonneg_int, 1000),
        "n_samples": (_positive_int, 10_000),
        "thin": (_positive_int, 1),
        "x0": (_vector, None),
    },
    "clt": {
        "observable": (str, "linear"),
        "shift": (str, "auto"),
        "n": (_positive_int, 2000),
        "reps": (_positive_int, 1000),
        "x0": (_vector, None),
        "burn_in": (_nonneg_int, 1000),
        "n_samples": (_positive_int, 100_000),
    },
    "lil": {
        "observable": (str, "linear"),
        "shift": (str, "auto"),
        "n_max": (_positive_int, 100_000),
        "reps": (_positive_int, 50),
        "x0": (_vector, None),
        "burn_in": (_nonneg_int, 1000),
        "n_samples": (_positive_int, 100_000),
    },
}


@dataclass
class RunConfig:
    command: str
    model: str = "affine1d"
    model_params: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)
    seed: int = 0
    output: str = "."
    threads: int = 1
    timestamp: bool = True
    files: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _key_lines(path: str) -> dict:
    """``(section, key) -> line number`` for error messages."""
    out, section = {}, None
    with open(path) as fh:
        for no, line in enumerate(fh, 1):
            m = re.match(r"\s*\[([^\]]+)\]", line)
            if m:
                section = m.group(1).strip()
                continue
            m = re.match(r"\s*([^#;=:\s][^=:]*?)\s*[=:]", line)
            if m and section:
                out[(section, m.group(1).strip().lower())] = no
    return out


def read_config(path: str, command: str) -> dict:
    """Parse an INI run config into ``{"model": {...}, "experiment": {...}, "run": {...}}`` of raw strings."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigParseError(f"{path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigParseError(f"{path}: {exc}".replace("\n", " ")) from None
    lines = _key_lines(path)
    allowed = {"model": None, "experiment": EXPERIMENT_KEYS[command], "run": RUN_KEYS}
    out = {"model": {}, "experiment": {}, "run": {}}
    for section in cp.sections():
        if section not in allowed:
            raise ConfigParseError(f"{path}: unknown section [{section}]")
        for key, val in cp.items(section):
            keys = allowed[section]
            if keys is not None and key not in keys:
                no = lines.get((section, key), "?")
                raise ConfigParseError(f"{path}:{no}: unknown key {key!r} in [{section}] for {command!r}")
            out[section][key] = (val, lines.get((section, key), "?"))
    return out


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cellcycle", description="Cell-cycle Markov chain experiments")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}", parser_class=_Parser)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", help="INI file with [model], [experiment] and [run] sections")
        sp.add_argument("--model", help="builtin model name")
        sp.add_argument("--seed", help="64-bit RNG seed")
        sp.add_argument("--output", "-o", help="output directory")
        sp.add_argument("--threads", help="cap on worker threads")
        sp.add_argument("--no-timestamp", action="store_true", help="omit the timestamp header line")
        for key in EXPERIMENT_KEYS[name]:
            sp.add_argument("--" + key.replace("_", "-"), dest="exp_" + key)
        if name == "fm":
            sp.add_argument("files", nargs=2, help="two particle CSV files")
    return p


def _model_flags(extra: list) -> dict:
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) < 3:
            raise UsageError(f"unexpected argument {tok!r}")
        if "=" in tok:
            key, val = tok[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"flag {tok} needs a value")
            key, val = tok[2:], extra[i + 1]
            i += 2
        out[key.replace("-", "_")] = val
    return out


def _convert(parser: Callable, raw, where: str):
    try:
        return parser(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigParseError(f"{where}: {exc}") from None


def parse_args(argv) -> RunConfig:
    parser = _build_parser()
    if not argv:
        raise UsageError(parser.format_usage() + "cellcycle: error: a subcommand is required")
    if argv[0] in ("-h", "--help"):
        parser.print_help()
        raise SystemExit(0)
    if argv[0] not in SUBCOMMANDS:
        raise UsageError(parser.format_usage() + f"cellcycle: error: unknown subcommand {argv[0]!r}")
    ns, extra = parser.parse_known_args(argv)
    cmd = ns.command
    cfg = RunConfig(cmd)
    file_cfg = read_config(ns.config, cmd) if ns.config else {"model": {}, "experiment": {}, "run": {}}
    src = ns.config or "config"

    # model: config, then flags
    model = dict(file_cfg["model"])
    name = model.pop("name", (None, None))[0]
    params = {k: _convert(_parse_param, v, f"{src}:{no}: [model] {k}") for k, (v, no) in model.items()}
    for k, v in _model_flags(extra).items():
        params[k] = _convert(_parse_param, v, f"flag --{k}")
    cfg.model = ns.model or name or "affine1d"
    cfg.model_params = params

    # run section
    for key, (conv, default) in RUN_KEYS.items():
        val = default
        if key in file_cfg["run"]:
            raw, no = file_cfg["run"][key]
            val = _convert(conv, raw, f"{src}:{no}: [run] {key}")
        flag = getattr(ns, key, None)
        if flag is not None:
            val = _convert(conv, flag, f"flag --{key}")
        setattr(cfg, key, val)
    if ns.no_timestamp:
        cfg.timestamp = False

    for key, (conv, default) in EXPERIMENT_KEYS[cmd].items():
        val = default
        if key in file_cfg["experiment"]:
            raw, no = file_cfg["experiment"][key]
            val = _convert(conv, raw, f"{src}:{no}: [experiment] {key}")
        flag = getattr(ns, "exp_" + key)
        if flag is not None:
            val = _convert(conv, flag, f"flag --{key.replace('_', '-')}")
        cfg.experiment[key] = val
    if cmd == "fm":
        cfg.files = list(ns.files)
    if not 0 <= cfg.seed < 2**64:
        raise ConfigParseError("seed must be a 64-bit unsigned integer")
    return cfg


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(_fmt(x) for x in np.asarray(v).ravel().tolist())
    return str(v)


def atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class Result:
    summary: dict
    tables: dict = field(default_factory=dict)  # file name -> (header, rows)
    text: str = ""  # extra human-readable block


def _header_line(cfg: RunConfig) -> str:
    if not cfg.timestamp:
        return ""
    now = _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat()
    return f"# generated {now}\n"


def write_outputs(cfg: RunConfig, res: Result) -> str:
    os.makedirs(cfg.output, exist_ok=True)
    head = _header_line(cfg)
    for name, (header, rows) in res.tables.items():
        atomic_write(os.path.join(cfg.output, name), head + chain_sim.rows_to_csv(header, rows))
    meta = {"command": cfg.command, "model": cfg.model, "seed": cfg.seed}
    meta.update({f"param.{k}": v for k, v in sorted(cfg.model_params.items())})
    meta.update({f"experiment.{k}": v for k, v in cfg.experiment.items() if v is not None})
    kv = {**meta, **res.summary}
    kv_text = "".join(f"{k}={_fmt(v)}\n" for k, v in kv.items())
    atomic_write(os.path.join(cfg.output, "summary.kv"), kv_text)
    width = max(len(k) for k in res.summary) if res.summary else 0
    body = "".join(f"{k:<{width}} = {_fmt(v)}\n" for k, v in res.summary.items())
    text = f"{cfg.command} on {cfg.model} (seed {cfg.seed})\n{res.text}{body}"
    atomic_write(os.path.join(cfg.output, "summary.txt"), head + text)
    return text


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _point(spec, v, default=None):
    if v is None:
        v = spec.x_bar if default is None else default
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.size == 1 and spec.dim > 1:
        arr = np.full(spec.dim, arr[0])
    if arr.size != spec.dim:
        raise InvalidParams(f"point has {arr.size} coordinates, model dimension is {spec.dim}")
    return arr


def _cmd_audit(cfg, spec, rng):
    e = cfg.experiment
    audit = audit_assumptions(spec, Probe(n_x=e["n_x"], n_nodes=e["n_nodes"]))
    rows = [[k, v.status, v.evidence] for k, v in audit.verdicts.items()]
    summary = {"Lambda1": audit.Lambda1, "Lambda2": audit.Lambda2, "Lambda2d": audit.Lambda2d, "delta": audit.delta,
               "c": audit.c, "M1": audit.M1, "M2": audit.M2}
    summary.update({f"verdict.{k}": v.status for k, v in audit.verdicts.items()})
    return Result(summary, {"audit.csv": (["assumption", "status", "evidence"], rows)}, audit.table() + "\n")


def _cmd_simulate(cfg, spec, rng):
    e = cfg.experiment
    x0 = _point(spec, e["x0"])
    if e["reps"] == 1:
        traj = chain_sim.simulate(spec, x0, e["n"], rng)
        final = traj.states[-1]
        return Result({"steps": e["n"], "final": final}, {"trajectory.csv": chain_sim.trajectory_rows(traj)})
    states = chain_sim.simulate_many(spec, np.repeat(x0[None], e["reps"], axis=0), e["n"], rng)
    header = ["replicate", "n"] + [f"x{k}" for k in range(spec.dim)]
    rows = [[str(r), str(n)] + [repr(float(v)) for v in states[n, r]] for r in range(states.shape[1]) for n in range(states.shape[0])]
    final = states[-1]
    return Result({"steps": e["n"], "reps": e["reps"], "final_mean": final.mean(axis=0)}, {"states.csv": (header, rows)})


def _cmd_push(cfg, spec, rng):
    e = cfg.experiment
    if e["input"]:
        mu = chain_sim.read_measure_csv(e["input"])
    else:
        mu = EmpiricalMeasure.dirac(_point(spec, e["x0"]), spec.dim)
    mu = chain_sim.resample_equal(mu, e["particles"], rng)
    out = chain_sim.pushforward(spec, mu, e["n"], rng=rng)
    return Result({"particles": len(out), "mean": out.mean(), "var": out.var()}, {"measure.csv": chain_sim.measure_rows(out)})


def _cmd_fm(cfg, spec, rng):
    a, b = (chain_sim.read_measure_csv(f) for f in cfg.files)
    cap = cfg.experiment["cap"]
    if len(a) + len(b) > cap:
        d = fm_metric.fm_distance_capped(a, b, cap=cap)
    else:
        d = fm_metric.fm_distance(a, b, cap=cap)
    return Result({"fm_distance": d}, text=f"{_fmt(d)}\n")


def _cmd_couple(cfg, spec, rng):
    e = cfg.experiment
    x0 = _point(spec, e["x0"])
    y0 = _point(spec, e["y0"], default=spec.x_bar + 1.0)
    if e["kappa"] is None:
        batch = coupling_engine.simulate_coupled_many(spec, x0, y0, e["n"], e["reps"], rng)
        coupled = batch.theta[1:].astype(bool).all(axis=0)
        return Result({"reps": e["reps"], "steps": e["n"], "full_coupling_fraction": float(coupled.mean())},
                      {"coupled.csv": coupling_engine.coupled_rows(batch, spec)})
    diag = coupling_engine.coupling_diagnostics(spec, x0, y0, e["kappa"], e["n"], e["reps"], rng)
    ns = np.arange(len(diag.hit_survival))
    series = [[str(n), repr(float(s)), repr(float(g)), repr(float(se)), repr(float(v))]
              for n, s, g, se, v in zip(ns, diag.hit_survival, diag.gap_mean, diag.gap_se, diag.vbar_series)]
    times = [[str(r), _fmt(h), _fmt(t)] for r, (h, t) in enumerate(zip(diag.hit_times, diag.couple_times))]
    finite = diag.couple_times[np.isfinite(diag.couple_times)]
    summary = {"kappa": diag.kappa, "threshold": diag.threshold, "censoring_rate": diag.censoring_rate,
               "full_coupling_fraction": diag.full_coupling_fraction,
               "mean_hit_time": float(np.mean(diag.hit_times[np.isfinite(diag.hit_times)])) if np.isfinite(diag.hit_times).any() else math.inf,
               "mean_couple_time_uncensored": float(finite.mean()) if finite.size else math.inf}
    if diag.hit_fit is not None:
        summary["hit_q"] = diag.hit_fit.q
    if diag.q_fit is not None:
        summary["gap_q"] = diag.q_fit.q
        summary["gap_r_squared"] = diag.q_fit.r_squared
    return Result(summary, {"coupling_series.csv": (["n", "hit_survival", "gap_mean", "gap_se", "vbar_mean"], series),
                            "coupling_times.csv": (["replicate", "hit_time", "couple_time"], times)})


def _cmd_mix(cfg, spec, rng):
    e = cfg.experiment
    mu1 = EmpiricalMeasure.dirac(_point(spec, e["x1"]), spec.dim)
    mu2 = EmpiricalMeasure.dirac(_point(spec, e["x2"]), spec.dim)
    curve = ergodicity_lab.mixing_curve(spec, mu1, mu2, e["n_max"], e["particles"], rng, e["cap"])
    rows = [[str(n), repr(float(d)), repr(float(f))] for n, d, f in zip(curve.n, curve.distance, curve.floor_series)]
    summary = {"noise_floor": curve.noise_floor}
    try:
        fit = ergodicity_lab.fit_rate(curve)
        summary.update({"q": fit.q, "C": fit.C, "r_squared": fit.r_squared, "fit_window": list(fit.n_range)})
    except CellCycleError as exc:
        summary["fit"] = f"unavailable ({type(exc).__name__})"
    return Result(summary, {"mixing.csv": (["n", "distance", "self_distance"], rows)})


def _cmd_invariant(cfg, spec, rng):
    e = cfg.experiment
    x0 = None if e["x0"] is None else _point(spec, e["x0"])
    est = ergodicity_lab.estimate_invariant(spec, e["burn_in"], e["n_samples"], e["thin"], rng, x0)
    summary = {"mean": est.mean(), "var": est.var(), "halves_distance": est.halves_distance,
               "noise_floor": est.noise_floor, "stationary": est.stationary}
    return Result(summary, {"invariant.csv": chain_sim.measure_rows(est.measure)})


def _observable(spec, e, mu_star):
    kind = e["observable"]
    if kind == "zero":
        return limit_lab.zero_observable()
    shift = float(mu_star.mean()[0]) if e["shift"] == "auto" else float(e["shift"])
    if kind == "linear":
        return limit_lab.linear_observable(shift)
    if kind == "const":
        return limit_lab.Observable(lambda x: np.full(len(x), shift), 0.0, abs(shift), centered=False)
    raise InvalidParams(f"unknown observable {kind!r}; choose linear, zero or const")


def _cmd_clt(cfg, spec, rng):
    e = cfg.experiment
    mu_star = ergodicity_lab.estimate_invariant(spec, e["burn_in"], e["n_samples"], 10, rng).measure
    obs = _observable(spec, e, mu_star)
    mu0 = None if e["x0"] is None else EmpiricalMeasure.dirac(_point(spec, e["x0"]), spec.dim)
    rep = limit_lab.clt_experiment(spec, obs, e["n"], e["reps"], rng, mu_star=mu_star, mu0=mu0)
    rows = [[str(i), repr(float(s))] for i, s in enumerate(rep.samples)]
    return Result(rep.summary(), {"clt_samples.csv": (["replicate", "S_n"], rows)})


def _cmd_lil(cfg, spec, rng):
    e = cfg.experiment
    mu_star = ergodicity_lab.estimate_invariant(spec, e["burn_in"], e["n_samples"], 10, rng).measure
    obs = _observable(spec, e, mu_star)
    x0 = None if e["x0"] is None else _point(spec, e["x0"])
    rep = limit_lab.lil_experiment(spec, obs, e["n_max"], e["reps"], rng=rng, mu_star=mu_star, x0=x0)
    st = rep.lil_endpoint_stats
    rows = [[str(r), str(int(n)), repr(float(v))] for r, path in enumerate(st["paths"]) for n, v in zip(st["checkpoints"], path)]
    return Result(rep.summary(), {"lil_paths.csv": (["replicate", "n", "R_n"], rows)})


COMMANDS = {
    "audit": _cmd_audit,
    "simulate": _cmd_simulate,
    "push": _cmd_push,
    "fm": _cmd_fm,
    "couple": _cmd_couple,
    "mix": _cmd_mix,
    "invariant": _cmd_invariant,
    "clt": _cmd_clt,
    "lil": _cmd_lil,
}


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cfg = parse_args(argv)
        spec = builtin_model(cfg.model, cfg.model_params)
    except UsageError as exc:
        print(exc, file=stderr)
        return 1
    except (ConfigParseError, UnknownModel, InvalidParams, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=stderr)
        return 1
    rng = np.random.default_rng(cfg.seed)
    try:
        with threadpool_limits(limits=cfg.threads):
            res = COMMANDS[cfg.command](cfg, spec, rng)
            text = write_outputs(cfg, res)
    except InvalidParams as exc:  # bad points or observable names in the experiment section
        print(f"error: {type(exc).__name__}: {exc}", file=stderr)
        return 1
    except Exception as exc:  # every module error maps to exit 2
        print(f"error: {type(exc).__name__}: {exc}", file=stderr)
        return 2
    print(text, end="", file=stdout)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":  # pragma: no cover
    main()
