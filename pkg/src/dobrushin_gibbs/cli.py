"""Command-line front end: ``dobrushin-gibbs <subcommand> --config PATH ...``.

The config is a JSON object (or, as a shortcut, a ``key = value`` model file).
Every output file starts with a ``#`` header line naming the tool version,
the SHA-256 of the resolved config and the master seed.  Numbers are written
with 17 significant digits; each CSV gets a JSON mirror.

Exit codes: 0 success, 2 configuration error, 3 model assumption violated.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .concentration import (
    OBSERVABLES,
    empirical_tail,
    one_sweep_mean,
    one_sweep_values,
    sweep_t1_constant,
    t1_constant,
    t1_mgf_check,
)
from .core import GroundMetric
from .dobrushin import (
    CLOSED_FORM_MAX_N,
    coefficient_matrix,
    q_closed_form,
    q_product,
    ricci_lower_bound,
    update_matrix,
    verify_lemma_bounds,
)
from .kernel_exact import build_transition_matrix, evolve, exact_w1_to_stationary, hamming_cost
from .models import MODEL_KEYS, ConditionalModel, ModelError, SpecError, exact_gibbs_measure, model_from_dict, parse_model_text
from .sampler import THREADS_ENV, draw_initial_states, estimate_w1_decay, simulation_summary
from .transport import exact_ot_finite

EXIT_CONFIG = 2
EXIT_ASSUMPTION = 3
SEED_MAX = (1 << 64) - 1
SUBCOMMANDS = ("coeffs", "exact", "couple", "simulate", "concentrate", "report")
CONFIG_KEYS = {
    "model", "seed", "x0", "y0", "k_max", "replicas", "n", "t_grid", "observable", "C1",
    "lambda_grid", "mgf_draws", "plan_ks",
}
ENUMERATION_LIMIT = 4096


class ConfigError(Exception):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class AssumptionError(Exception):
    def __init__(self, reason: str, **details):
        super().__init__(reason)
        self.reason = reason
        self.details = details


# --------------------------------------------------------------------------
# formatting


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return "%.17g" % float(v)


def _json_value(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return None if not math.isfinite(f) else float("%.17g" % f)
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_json_value(x) for x in v]
    if isinstance(v, dict):
        return {k: _json_value(x) for k, x in v.items()}
    return v


class Writer:
    def __init__(self, out: Path, fmt_: str, header: dict):
        self.out = out
        self.format = fmt_
        self.header = header
        self.written: list[Path] = []
        out.mkdir(parents=True, exist_ok=True)

    def header_line(self) -> str:
        return (f"# dobrushin-gibbs {self.header['version']} config_sha256={self.header['config_sha256']} "
                f"seed={self.header['seed']}")

    def table(self, name: str, columns, rows, meta: dict | None = None):
        if self.format == "csv":
            path = self.out / f"{name}.csv"
            lines = [self.header_line(), ",".join(columns)]
            lines += [",".join(fmt(v) for v in row) for row in rows]
            path.write_text("\n".join(lines) + "\n")
            self.written.append(path)
        doc = {"header": self.header, "columns": list(columns),
               "rows": [[_json_value(v) for v in row] for row in rows]}
        if meta:
            doc["meta"] = _json_value(meta)
        path = self.out / f"{name}.json"
        path.write_text(json.dumps(doc) + "\n")
        self.written.append(path)

    def key_values(self, name: str, items: dict):
        self.table(name, ["key", "value"], [[k, v] for k, v in items.items()])


# --------------------------------------------------------------------------
# config


def _load_config(path: str | None) -> tuple[dict, Path]:
    if path is None:
        raise ConfigError("--config is required", "config")
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", "config") from None
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}", "config") from None
    else:
        cfg = {"model": parse_model_text(text)}
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object", "config")
    unknown = sorted(set(cfg) - CONFIG_KEYS)
    if unknown:
        key = unknown[0]
        hint = " (it is a model key; put it under 'model')" if key in MODEL_KEYS else ""
        raise ConfigError(f"unknown config key {key!r}{hint}", key)
    return cfg, p.parent


def _resolve_model_spec(cfg: dict, base: Path) -> dict:
    spec = cfg.get("model")
    if spec is None:
        raise ConfigError("config needs a 'model'", "model")
    if isinstance(spec, str):
        mp = Path(spec)
        if not mp.is_absolute():
            mp = base / mp
        try:
            return parse_model_text(mp.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read model file {mp}: {exc.strerror}", "model") from None
    if not isinstance(spec, dict):
        raise ConfigError("'model' must be an object or a path", "model")
    return spec


def _int(cfg, key, default, minimum=None):
    v = cfg.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or v != int(v):
        raise ConfigError(f"key {key!r} must be an integer, got {v!r}", key)
    v = int(v)
    if minimum is not None and v < minimum:
        raise ConfigError(f"key {key!r} must be >= {minimum}, got {v}", key)
    return v


def _floats(cfg, key, default=None):
    v = cfg.get(key, default)
    try:
        arr = np.asarray(v, dtype=np.float64).reshape(-1)
    except (TypeError, ValueError):
        raise ConfigError(f"key {key!r} must be a list of numbers", key) from None
    if arr.size == 0 or not np.all(np.isfinite(arr)):
        raise ConfigError(f"key {key!r} must be a non-empty list of finite numbers", key)
    return arr


def _state(model: ConditionalModel, cfg: dict, key: str, default):
    v = cfg.get(key)
    if v is None:
        return default
    try:
        return model.configuration(v)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"key {key!r}: {exc}", key) from None


def _seed(args, cfg) -> int:
    raw = args.seed if args.seed is not None else cfg.get("seed", 0)
    try:
        seed = int(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {raw!r}", "seed") from None
    if isinstance(raw, float) and raw != seed or not 0 <= seed <= SEED_MAX:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {raw!r}", "seed")
    return seed


def _threads(args) -> int:
    raw = args.threads if args.threads is not None else os.environ.get(THREADS_ENV, "1")
    try:
        k = int(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"thread count must be a positive integer, got {raw!r}", "threads") from None
    if k < 1:
        raise ConfigError(f"thread count must be a positive integer, got {raw!r}", "threads")
    return k


def _observable(model, cfg):
    default = "linear_sum" if model.metric is GroundMetric.ABSOLUTE else "up_fraction"
    name = cfg.get("observable", default)
    if name not in OBSERVABLES:
        raise ConfigError(f"observable must be one of {sorted(OBSERVABLES)}, got {name!r}", "observable")
    finite_obs = name != "linear_sum"
    if finite_obs and (not model.finite or model.alphabet != 2):
        raise ConfigError(f"observable {name!r} needs a binary alphabet", "observable")
    if not finite_obs and model.finite:
        raise ConfigError("observable 'linear_sum' needs real-valued sites", "observable")
    return OBSERVABLES[name](model.n_sites)


def _default_y0(model, x0):
    if model.finite:
        return (x0 + 1) % model.alphabet
    return x0 + 1.0


def _enumerable(model) -> bool:
    return model.finite and model.alphabet**model.n_sites <= ENUMERATION_LIMIT


# --------------------------------------------------------------------------
# subcommands


def cmd_coeffs(model, cfg, seed, threads, w: Writer):
    C = coefficient_matrix(model)
    n = model.n_sites
    cols = ["row", *[f"col_{j + 1}" for j in range(n)]]
    w.table("coefficients", cols, [[i + 1, *C.C[i]] for i in range(n)])
    brows = []
    for i in range(n):
        B = update_matrix(C, i)
        brows += [[i + 1, k + 1, *B[k]] for k in range(n)]
    w.table("update_matrices", ["site", *cols], brows)
    prod = q_product(C)
    qrows = [["product", k + 1, *prod.Q[k]] for k in range(n)]
    if n <= CLOSED_FORM_MAX_N:
        Qc = q_closed_form(C)
        qrows += [["closed_form", k + 1, *Qc[k]] for k in range(n)]
    w.table("q_matrix", ["source", *cols], qrows)
    cert = verify_lemma_bounds(C)
    items = {"n_sites": n, "r": C.r, "r1": C.r1, "h1": C.r < 1, "h2": C.r1 < 1, "h2_half": C.r1 < 0.5}
    items.update({f"q_{k}": v for k, v in cert.as_dict().items() if k not in ("r", "r1")})
    items["ricci_lower_bound"] = ricci_lower_bound(C.r1) if C.r1 < 1 else float("nan")
    w.key_values("certificate", items)


def _require_h1(model):
    C = coefficient_matrix(model)
    if not C.r < 1:
        raise AssumptionError("dobrushin_r_not_below_one", r=C.r)
    return C


def cmd_exact(model, cfg, seed, threads, w: Writer):
    if not _enumerable(model):
        raise AssumptionError("state_space_not_enumerable", limit=ENUMERATION_LIMIT)
    C = _require_h1(model)
    x0 = _state(model, cfg, "x0", model.reference_configuration())
    k_max = _int(cfg, "k_max", 15, 0)
    tm = build_transition_matrix(model)
    mu = exact_gibbs_measure(model)
    rows = exact_w1_to_stationary(tm, mu, x0, range(k_max + 1), r=C.r)
    w.table("exact", ["k", "w1_exact", "tv_half", "bound_nrk"],
            [[row.k, row.w1_exact, row.tv_half, row.bound_nrk] for row in rows])
    plan_ks = [int(k) for k in _floats(cfg, "plan_ks", [1])]
    if tm.size <= 64:
        cost = hamming_cost(tm.configurations())
        laws = evolve(tm, x0, plan_ks)
        for k in plan_ks:
            plan = exact_ot_finite(cost, laws[k], mu)
            w.table(f"plan_k{k}", ["source", "target", "mass"],
                    [[int(s), int(t), m] for s, t, m in plan.support], {"cost": plan.cost, "gap": plan.gap})


def cmd_couple(model, cfg, seed, threads, w: Writer):
    C = _require_h1(model)
    x0 = _state(model, cfg, "x0", model.reference_configuration())
    y_raw = cfg.get("y0")
    if y_raw == "stationary":
        if not _enumerable(model):
            raise ConfigError("y0 = 'stationary' needs an enumerable model", "y0")
        replicas = _int(cfg, "replicas", 10000, 1)
        y0 = draw_initial_states(model, exact_gibbs_measure(model), replicas, seed)
    else:
        y0 = _state(model, cfg, "y0", _default_y0(model, x0))
        replicas = _int(cfg, "replicas", 10000, 1)
    k_max = _int(cfg, "k_max", 20, 0)
    rep = estimate_w1_decay(model, x0, y0, k_max, replicas, seed, threads=threads, C=C)
    w.table("couple", rep.header(), rep.rows(), {"r": rep.r, "replicas": replicas, "coalesced_at": rep.coalesced_at})


def cmd_simulate(model, cfg, seed, threads, w: Writer):
    x0 = _state(model, cfg, "x0", model.reference_configuration())
    replicas = _int(cfg, "replicas", 1000, 1)
    k_max = _int(cfg, "k_max", 100, 0)
    f = _observable(model, cfg)
    s = simulation_summary(model, x0, k_max, replicas, seed, f, threads=threads)
    n = model.n_sites
    cols = ["sweep", *[f"mean_site_{i + 1}" for i in range(n)], f"mean_{f.name}", f"stderr_{f.name}"]
    w.table("simulate", cols, [[k, *s.mean_site[k], s.obs_mean[k], s.obs_stderr[k]] for k in range(k_max + 1)])


def cmd_concentrate(model, cfg, seed, threads, w: Writer):
    x0 = _state(model, cfg, "x0", model.reference_configuration())
    replicas = _int(cfg, "replicas", 10000, 1000)
    n = _int(cfg, "n", 200, 1)
    t_grid = _floats(cfg, "t_grid", np.linspace(0.01, 0.1, 10))
    if np.any(t_grid <= 0):
        raise ConfigError("t_grid values must be positive", "t_grid")
    f = _observable(model, cfg)
    C1 = float(cfg["C1"]) if "C1" in cfg else None
    if C1 is not None and not C1 > 0:
        raise ConfigError("C1 must be positive", "C1")
    rep = empirical_tail(model, f, x0, n, t_grid, replicas, seed, C1=C1, threads=threads)
    w.table("concentrate", list(rep.COLUMNS), rep.rows(),
            {"centering": rep.centering, "centering_exact": rep.centering_exact, "mu_f": rep.mu_f,
             "tail_count_b": rep.tail_count_b.tolist(), "observable": f.name})
    if "lambda_grid" in cfg:
        lam = _floats(cfg, "lambda_grid")
        draws = _int(cfg, "mgf_draws", 100000, 10000)
        Cm = coefficient_matrix(model)
        if not Cm.r1 < 1:
            raise AssumptionError("dobrushin_r1_not_below_one", r1=Cm.r1)
        C = sweep_t1_constant(model.n_sites, rep.C1, Cm.r1)
        vals = one_sweep_values(model, x0, f, draws, seed, threads=threads)
        try:
            mean = one_sweep_mean(model, x0, f)
        except ModelError:
            mean = None
        rows = t1_mgf_check(vals, f.alpha, lam, C, mean=mean)
        w.table("mgf", ["lambda", "log_mgf", "bound", "slack", "margin", "stable", "holds"],
                [[r.lam, r.log_mgf, r.bound, r.slack, r.margin, r.stable, r.holds] for r in rows],
                {"C": C, "draws": draws})


def cmd_report(model, cfg, seed, threads, w: Writer):
    C = coefficient_matrix(model)
    cert = verify_lemma_bounds(C)
    items = {
        "model_kind": model.kind,
        "model_fingerprint": model.fingerprint(),
        "n_sites": model.n_sites,
        "r": C.r,
        "r1": C.r1,
        "h1": C.r < 1,
        "h2": C.r1 < 1,
        "h2_half": C.r1 < 0.5,
        "q_inf_norm": cert.inf_norm,
        "q_one_norm": cert.one_norm,
        "q_one_norm_bound": cert.one_norm_bound,
        "ricci_lower_bound": ricci_lower_bound(C.r1) if C.r1 < 1 else float("nan"),
    }
    try:
        items["t1_constant"] = t1_constant(model)
        if C.r1 < 1:
            items["sweep_t1_constant"] = sweep_t1_constant(model.n_sites, items["t1_constant"], C.r1)
    except ValueError:
        pass
    if _enumerable(model) and C.r < 1:
        x0 = _state(model, cfg, "x0", model.reference_configuration())
        k_max = _int(cfg, "k_max", 15, 0)
        tm = build_transition_matrix(model)
        mu = exact_gibbs_measure(model)
        rows = exact_w1_to_stationary(tm, mu, x0, [0, k_max], r=C.r)
        items["w1_exact_k0"] = rows[0].w1_exact
        items[f"w1_exact_k{k_max}"] = rows[-1].w1_exact
        items[f"bound_nrk_k{k_max}"] = rows[-1].bound_nrk
    w.key_values("report", items)


COMMANDS = {
    "coeffs": cmd_coeffs,
    "exact": cmd_exact,
    "couple": cmd_couple,
    "simulate": cmd_simulate,
    "concentrate": cmd_concentrate,
    "report": cmd_report,
}


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dobrushin-gibbs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=COMMANDS[name].__name__.replace("cmd_", ""))
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--seed", metavar="U64", help="master seed (overrides the config; default 0)")
        p.add_argument("--out", default="out", metavar="DIR")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--threads", metavar="K", help=f"worker threads (default ${THREADS_ENV} or 1)")
    return parser


def config_hash(command: str, cfg: dict, model_spec: dict, seed: int) -> str:
    resolved = {k: v for k, v in cfg.items() if k not in ("model", "seed")}
    blob = json.dumps({"command": command, "config": resolved, "model": model_spec, "seed": seed},
                      sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _fail(code: int, payload: dict) -> int:
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, base = _load_config(args.config)
        seed = _seed(args, cfg)
        threads = _threads(args)
        spec = _resolve_model_spec(cfg, base)
        model = model_from_dict(spec)
        header = {"version": __version__, "config_sha256": config_hash(args.command, cfg, spec, seed), "seed": seed}
        writer = Writer(Path(args.out), args.format, header)
        COMMANDS[args.command](model, cfg, seed, threads, writer)
    except (ConfigError, SpecError) as exc:
        return _fail(EXIT_CONFIG, {"error": "config", "key": exc.key, "message": str(exc)})
    except AssumptionError as exc:
        return _fail(EXIT_ASSUMPTION, {"error": "model_assumption", "reason": exc.reason,
                                       **_json_value(exc.details)})
    for path in writer.written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
