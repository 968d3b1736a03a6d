"""Command-line front end.

``hetheat <subcommand> [--config FILE] [overrides]`` with subcommands
kernel-table, conditions, covariance, sample, clt, asclt, diagnostics, all.
A leading ``run`` token is accepted and ignored.  Artifacts go to
``<output_dir>/<run-id>/`` where the run id is a short hash of the resolved
configuration.

Exit codes: 0 success, 2 invalid configuration, 3 numeric failure.  Errors
are printed to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import chaos, quadvar, sampler
from .cache import ENV_VAR, GramCache
from .covariance import (
    InvalidGramError,
    QuadratureError,
    QuadratureSpec,
    build_gram,
    loglog_slope,
    variogram,
    verify_condition,
)
from .kernel import DomainError, PiecewiseKernel, e_minus, e_plus, green_fn, make_medium
from .plotting import emit_plot
from .sampler import FactorizationError

SUBCOMMANDS = ("kernel-table", "conditions", "covariance", "sample", "clt", "asclt", "diagnostics")

DEFAULTS = {
    "medium": [1.0, 4.0, 1.0, 2.0],
    "t": 1.0,
    "t_max": 10.0,
    "n_list": [16, 32, 64, 128, 256, 512],
    "m_replicas": 10_000,
    "K": 12,
    "n_paths": 8,
    "seed": 0,
    "tolerances": {"rel": 1e-8, "abs": 1e-12, "max_subdivisions": 200},
    "u": 0.5,
    "x": 0.0,
    "z_range": [-3.0, 3.0, 0.1],
    "h_exponents": list(range(3, 12)),
    "sample_replicas": 16,
    "output_dir": "output",
    "cache_dir": None,
}

# keys that locate files but do not change results
_NON_HASHED = ("output_dir", "cache_dir")


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class NumericFailure(RuntimeError):
    def __init__(self, module: str, op: str, exc: BaseException):
        super().__init__(f"{module}.{op}: {exc}")
        self.module = module
        self.op = op
        self.exc = exc


# --------------------------------------------------------------------------
# configuration


def _parse_floats(text: str, field: str, sep: str = ",") -> list[float]:
    try:
        return [float(p) for p in text.split(sep)]
    except ValueError:
        raise ConfigError(field, f"cannot parse {text!r} as numbers") from None


def _parse_ints(text: str, field: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",")]
    except ValueError:
        raise ConfigError(field, f"cannot parse {text!r} as integers") from None


def load_config(path: str | None, overrides: dict) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError("config", f"file not found: {path}")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config", "top level must be an object")
        unknown = sorted(set(user) - set(DEFAULTS))
        if unknown:
            raise ConfigError(unknown[0], "unknown key")
        for key, val in user.items():
            if key == "tolerances" and isinstance(val, dict):
                cfg["tolerances"].update(val)
            else:
                cfg[key] = val
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if os.environ.get(ENV_VAR) and overrides.get("cache_dir") is None:
        cfg["cache_dir"] = os.environ[ENV_VAR]
    validate_config(cfg)
    # canonical types so that equivalent configs hash identically
    cfg["medium"] = [float(v) for v in cfg["medium"]]
    for key in ("t", "t_max", "u", "x"):
        cfg[key] = float(cfg[key])
    cfg["z_range"] = [float(v) for v in cfg["z_range"]]
    cfg["tolerances"] = {k: (int(v) if k == "max_subdivisions" else float(v))
                         for k, v in sorted(cfg["tolerances"].items())}
    return cfg


def _number(cfg, key, lo=None, hi=None, integer=False, lo_open=False):
    v = cfg[key]
    ok_type = isinstance(v, int) if integer else isinstance(v, (int, float))
    if isinstance(v, bool) or not ok_type or not math.isfinite(v):
        raise ConfigError(key, f"expected a finite {'integer' if integer else 'number'}, got {v!r}")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(key, f"must be {'>' if lo_open else '>='} {lo}, got {v!r}")
    if hi is not None and v > hi:
        raise ConfigError(key, f"must be <= {hi}, got {v!r}")


def validate_config(cfg: dict) -> None:
    med = cfg["medium"]
    if not (isinstance(med, (list, tuple)) and len(med) == 4):
        raise ConfigError("medium", "expected four numbers a1,a2,rho1,rho2")
    try:
        make_medium(*[float(v) for v in med])
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError("medium", str(exc)) from None
    _number(cfg, "t_max", 0, lo_open=True)
    _number(cfg, "t", 0, cfg["t_max"], lo_open=True)
    nl = cfg["n_list"]
    if not (isinstance(nl, list) and nl and all(isinstance(n, int) and not isinstance(n, bool) for n in nl)):
        raise ConfigError("n_list", "expected a nonempty list of integers")
    if any(n < 1 for n in nl) or any(b <= a for a, b in zip(nl, nl[1:])):
        raise ConfigError("n_list", f"must be positive and strictly increasing, got {nl}")
    if nl[-1] > 8192:
        raise ConfigError("n_list", "N above 8192 is not supported")
    _number(cfg, "m_replicas", 1000, integer=True)
    _number(cfg, "K", 1, 13, integer=True)
    _number(cfg, "n_paths", 1, integer=True)
    _number(cfg, "seed", 0, integer=True)
    _number(cfg, "u", 0, lo_open=True)
    _number(cfg, "x")
    _number(cfg, "sample_replicas", 1, integer=True)
    zr = cfg["z_range"]
    if not (isinstance(zr, list) and len(zr) == 3 and all(isinstance(v, (int, float)) for v in zr)):
        raise ConfigError("z_range", "expected start:stop:step")
    if not (zr[2] > 0 and zr[1] >= zr[0]):
        raise ConfigError("z_range", "need step > 0 and stop >= start")
    hx = cfg["h_exponents"]
    if not (isinstance(hx, list) and len(hx) >= 2 and all(isinstance(v, int) and 3 <= v <= 11 for v in hx)):
        raise ConfigError("h_exponents", "expected at least two integers in [3, 11]")
    tol = cfg["tolerances"]
    if not isinstance(tol, dict) or set(tol) - {"rel", "abs", "max_subdivisions"}:
        raise ConfigError("tolerances", "allowed keys: rel, abs, max_subdivisions")
    try:
        QuadratureSpec(**_quad_kwargs(tol))
    except (TypeError, ValueError) as exc:
        raise ConfigError("tolerances", str(exc)) from None
    if not isinstance(cfg["output_dir"], str) or not cfg["output_dir"]:
        raise ConfigError("output_dir", "expected a nonempty path")


def _quad_kwargs(tol: dict) -> dict:
    return {
        "rel_tol": float(tol.get("rel", 1e-8)),
        "abs_tol": float(tol.get("abs", 1e-12)),
        "max_subdivisions": int(tol.get("max_subdivisions", 200)),
    }


def config_hash(cfg: dict) -> str:
    hashed = {k: v for k, v in cfg.items() if k not in _NON_HASHED}
    blob = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


# --------------------------------------------------------------------------
# stages


class Run:
    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.seed = int(cfg["seed"])
        self.medium = make_medium(*[float(v) for v in cfg["medium"]])
        self.kernel = PiecewiseKernel(self.medium)
        self.q = QuadratureSpec(**_quad_kwargs(cfg["tolerances"]))
        self.cache = GramCache(cfg["cache_dir"]) if cfg["cache_dir"] else GramCache()
        self.out = Path(cfg["output_dir"]) / self.hash
        self.timings: dict[str, float] = {}
        self.results: dict[str, object] = {}
        self.artifacts: list[str] = []

    @property
    def extra(self) -> dict:
        return {"seed": self.seed, "config_hash": self.hash}

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def describe(self) -> str:
        return f"seed={self.seed} config_hash={self.hash}"

    def gram(self, n: int):
        return build_gram(self.kernel, self.cfg["t"], n, self.q, self.cache)

    def write_rows(self, name: str, header: list[str], rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header + list(self.extra))
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row]
                           + list(self.extra.values()))

    # ---- subcommands

    def kernel_table(self):
        a, b, step = (float(v) for v in self.cfg["z_range"])
        n = int(round((b - a) / step)) + 1
        z = np.round(a + step * np.arange(n), 12)
        u, x = float(self.cfg["u"]), float(self.cfg["x"])
        m = self.medium
        g = green_fn(m, u, x, z)
        em = e_minus(m, u, x, z)
        ep = e_plus(m, u, x, z)
        rows = []
        for i in range(n):
            right = z[i] > 0
            w = 1.0 / math.sqrt(m.a2 if right else m.a1)
            rows.append([float(z[i]), "right" if right else "left", w, float(g[i]), float(em[i]), float(ep[i])])
        self.write_rows("kernel_table.csv", ["z", "side", "weight", "green", "e_minus", "e_plus"], rows)
        emit_plot({f"G(u={u:g}, x={x:g}, .)": (z, g)}, "line", self.path("kernel_table.svg"),
                  title="fundamental solution", xlabel="z", ylabel="G", description=self.describe())
        self.results["kernel_table"] = {"rows": n}

    def conditions(self):
        t = float(self.cfg["t"])
        hs = sorted((2.0**-e for e in set(self.cfg["h_exponents"])), reverse=True)
        reports = [verify_condition(self.kernel, t, c, hs, self.q) for c in ("H1", "H2", "H3")]
        rows = [r.row() for r in reports]
        header = list(rows[0])
        self.write_rows("conditions.csv", header, [[r[h] for h in header] for r in rows])
        var = variogram(self.kernel, t, hs, q=self.q)
        slope = loglog_slope(hs, var)
        self.write_rows("variogram.csv", ["h", "increment_variance", "slope", "gamma_hat"],
                        [[h, float(v), slope, slope / 2] for h, v in zip(hs, var)])
        emit_plot({"E[(u(x+h)-u(x))^2]": (hs, var)}, "loglog", self.path("variogram.svg"),
                  title="variogram", xlabel="h", ylabel="increment variance",
                  description=self.describe())
        self.results["conditions"] = {
            r.condition: {"constant": r.constant, "passed": r.passed, "slope": r.slope} for r in reports
        }
        self.results["conditions"]["variogram_slope"] = slope

    def covariance(self):
        rows = []
        for n in self.cfg["n_list"]:
            g = self.gram(n)
            r = g.correlation
            lag1 = np.append(np.diag(r, 1), np.nan)
            for j in range(n):
                rows.append([n, j, float(g.entries[j, j]), float(lag1[j])])
        self.write_rows("covariance.csv", ["n", "j", "variance", "corr_next"], rows)
        self.results["covariance"] = {"n_list": list(self.cfg["n_list"])}

    def sample(self):
        n = self.cfg["n_list"][0]
        g = self.gram(n)
        samples = sampler.cholesky_sample(g, self.seed, int(self.cfg["sample_replicas"]))
        rows = []
        for s in samples:
            st = quadvar.v_stat(s, g)
            rows.append([s.replica_id, n, st.v, st.v_tilde] + [float(d) for d in s.increments])
        self.write_rows("samples.csv", ["replica_id", "n", "v", "v_tilde"] + [f"d{j}" for j in range(n)], rows)
        self.results["sample"] = {"n": n, "replicas": len(samples)}

    def clt(self):
        rep = quadvar.clt_experiment(self.kernel, self.cfg["t"], self.cfg["n_list"],
                                     int(self.cfg["m_replicas"]), self.seed, self.q, self.cache)
        rep.write_csv(self.path("clt.csv"), self.extra)
        ns = [r.n for r in rep.rows]
        emit_plot({"KS": (ns, [r.ks for r in rep.rows]),
                   "Berry-Esseen value": (ns, [r.be_value for r in rep.rows])},
                  "loglog", self.path("clt.svg"), title="distance to N(0,1)", xlabel="N",
                  ylabel="distance", description=self.describe())
        self.results["clt"] = {"ks_slope": rep.slope, "be_slope": rep.be_slope, "ks_floor": rep.ks_floor}

    def asclt(self):
        rep = quadvar.asclt_experiment(self.kernel, self.cfg["t"], int(self.cfg["K"]),
                                       n_paths=int(self.cfg["n_paths"]), seed=self.seed,
                                       q=self.q, cache=self.cache)
        rep.write_csv(self.path("asclt.csv"), self.extra)
        series = {f"path {p.replica_id}": (rep.levels, p.averages["cos"]) for p in rep.paths}
        series["E cos(Z)"] = (rep.levels, [rep.targets["cos"]] * len(rep.levels))
        emit_plot(series, "line", self.path("asclt.svg"), title="lacunary averages of cos",
                  xlabel="K", ylabel="A_K(cos)", description=self.describe())
        chk = rep.check()
        self.results["asclt"] = {
            "note": rep.note,
            "targets": rep.targets,
            "paths_passing": {k: int(v.sum()) for k, v in chk.items()},
        }

    def diagnostics(self):
        diags = [chaos.chaos_diagnostics(self.gram(n)) for n in self.cfg["n_list"]]
        chaos.write_diagnostics_csv(diags, self.path("diagnostics.csv"), self.extra)
        top = 2 ** int(math.floor(math.log2(self.cfg["n_list"][-1])))
        hyp = chaos.asclt_hypotheses(self.gram(top))
        rows = []
        for i, lvl in enumerate(hyp.levels):
            c3 = hyp.cond3_partial[i - 1] if i >= 1 else ""
            c4 = hyp.cond4_partial[i - 1] if i >= 1 else ""
            rows.append([lvl, hyp.contraction[i], lvl * hyp.contraction[i], c3, c4])
        self.write_rows("asclt_hypotheses.csv",
                        ["l", "contraction_sq", "l_times_contraction", "cond3_partial", "cond4_partial"], rows)
        self.results["diagnostics"] = {
            "e_vsq": [d.e_vsq for d in diags],
            "be_slope": loglog_slope([d.n for d in diags], [d.be_bound for d in diags])
            if len(diags) > 1 else None,
            "hypotheses_note": hyp.note,
        }


_STAGES = {
    "kernel-table": ("kernel", "green_fn", Run.kernel_table),
    "conditions": ("covariance", "verify_condition", Run.conditions),
    "covariance": ("covariance", "build_gram", Run.covariance),
    "sample": ("sampler", "cholesky_sample", Run.sample),
    "clt": ("quadvar", "clt_experiment", Run.clt),
    "asclt": ("quadvar", "asclt_experiment", Run.asclt),
    "diagnostics": ("chaos", "chaos_diagnostics", Run.diagnostics),
}

_NUMERIC = (QuadratureError, FactorizationError, InvalidGramError, np.linalg.LinAlgError,
            FloatingPointError, DomainError)


def execute(subcommand: str, cfg: dict) -> dict:
    run = Run(cfg)
    run.out.mkdir(parents=True, exist_ok=True)
    names = SUBCOMMANDS if subcommand == "all" else (subcommand,)
    for name in names:
        module, op, fn = _STAGES[name]
        t0 = time.perf_counter()
        try:
            fn(run)
        except _NUMERIC as exc:
            raise NumericFailure(module, op, exc) from exc
        run.timings[name] = time.perf_counter() - t0
    report = {
        "subcommand": subcommand,
        "config": cfg,
        "config_hash": run.hash,
        "seed": run.seed,
        "results": run.results,
        "timings_s": run.timings,
        "cache": {"dir": str(run.cache.root), "hits": run.cache.hits, "misses": run.cache.misses},
        "artifacts": run.artifacts,
    }
    (run.out / "report.json").write_text(json.dumps(report, indent=1, default=_json_default) + "\n")
    report["output"] = str(run.out)
    return report


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hetheat", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS + ("all",))
    ap.add_argument("--config", help="JSON configuration file")
    ap.add_argument("--medium", help="a1,a2,rho1,rho2")
    ap.add_argument("--t", type=float)
    ap.add_argument("--t-max", type=float, dest="t_max")
    ap.add_argument("--n", help="comma-separated N ladder")
    ap.add_argument("--m", type=int, help="replicas per N")
    ap.add_argument("--K", type=int, help="finest dyadic level for asclt")
    ap.add_argument("--paths", type=int, dest="n_paths")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--u", type=float)
    ap.add_argument("--x", type=float)
    ap.add_argument("--z-range", dest="z_range", help="start:stop:step")
    ap.add_argument("--output", dest="output_dir")
    ap.add_argument("--cache-dir", dest="cache_dir")
    return ap


_VALUE_FLAGS = ("--z-range", "--x", "--medium", "--u", "--t")


def _overrides(ns: argparse.Namespace) -> dict:
    ov = {
        "t": ns.t, "t_max": ns.t_max, "m_replicas": ns.m, "K": ns.K, "n_paths": ns.n_paths,
        "seed": ns.seed, "u": ns.u, "x": ns.x, "output_dir": ns.output_dir, "cache_dir": ns.cache_dir,
    }
    if ns.medium is not None:
        ov["medium"] = _parse_floats(ns.medium, "medium")
    if ns.n is not None:
        ov["n_list"] = _parse_ints(ns.n, "n_list")
    if ns.z_range is not None:
        ov["z_range"] = _parse_floats(ns.z_range, "z_range", ":")
    return ov


def _fail(code: int, payload: dict) -> int:
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "run":
        argv = argv[1:]
    # values such as "-3:3:0.1" would otherwise be read as options
    for i in range(len(argv) - 1):
        if argv[i] in _VALUE_FLAGS and argv[i + 1].startswith("-"):
            argv[i] = f"{argv[i]}={argv[i + 1]}"
            argv[i + 1] = None
    argv = [a for a in argv if a is not None]
    ns = build_parser().parse_args(argv)
    try:
        cfg = load_config(ns.config, _overrides(ns))
    except ConfigError as exc:
        return _fail(2, {"error": "config", "field": exc.field, "message": exc.message})
    try:
        report = execute(ns.subcommand, cfg)
    except NumericFailure as exc:
        return _fail(3, {"error": "numeric", "module": exc.module, "op": exc.op,
                         "type": type(exc.exc).__name__, "message": str(exc.exc)})
    print(json.dumps({"output": report["output"], "config_hash": report["config_hash"],
                      "timings_s": report["timings_s"], "cache": report["cache"]}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
