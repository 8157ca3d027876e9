"""Command-line frontend.

Every subcommand takes its parameters from inline flags, from a JSON config
file (``--config``), or both; flags win over the file. Unknown config keys
are rejected. Results go to an output directory as CSV plus a JSON manifest,
both carrying the resolved config and seed.

Exit status: 0 on success, 1 on invalid input, 2 on numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments as ex
from . import meanfield as mf
from . import region
from . import sim

OUTPUT_ENV = "ALOHASTAB_OUTPUT_DIR"
DEFAULT_OUTPUT = "alohastab-out"

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


# --- value parsers ---------------------------------------------------------------


def _vector(v, name):
    if isinstance(v, str):
        try:
            v = [float(x) for x in v.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"{name}: expected comma-separated numbers, got {v!r}") from None
    if not isinstance(v, (list, tuple)) or not v or not all(_is_number(x) for x in v):
        raise ConfigError(f"{name}: expected a non-empty array of numbers")
    return [float(x) for x in v]


def _int_vector(v, name):
    out = _vector(v, name)
    if any(x != int(x) for x in out):
        raise ConfigError(f"{name}: expected integers")
    return [int(x) for x in out]


def _index_list(v, name):
    if isinstance(v, str) and not v.strip():
        return []
    if isinstance(v, (list, tuple)) and not v:
        return []
    return _int_vector(v, name)


def _is_number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _float(v, name):
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"{name}: expected a number, got {v!r}") from None
    if not _is_number(v):
        raise ConfigError(f"{name}: expected a number")
    return float(v)


def _int(v, name):
    x = _float(v, name)
    if x != int(x):
        raise ConfigError(f"{name}: expected an integer")
    return int(x)


def _bool(v, name):
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("true", "false", "1", "0", "yes", "no"):
        return v.lower() in ("true", "1", "yes")
    raise ConfigError(f"{name}: expected true or false")


def _str(v, name):
    if not isinstance(v, str):
        raise ConfigError(f"{name}: expected a string")
    return v


def _str_list(v, name):
    if isinstance(v, str):
        v = [x.strip() for x in v.split(",") if x.strip()]
    if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
        raise ConfigError(f"{name}: expected a list of strings")
    return v


def _as_json(v, name):
    if isinstance(v, str):
        try:
            return json.loads(v)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{name}: invalid JSON ({e.msg})") from None
    return v


# --- config schemas ---------------------------------------------------------------

# key -> (parser, default, flag help)
REQUIRED = object()

MODEL_KEYS = {
    "p": (_float, None, "attempt intensity of a single class"),
    "lambda": (_float, None, "arrival rate of a single class"),
    "b": (_float, 1.0, "slot availability"),
    "classes": (_as_json, None, "list of class objects (JSON)"),
    "speed": (_str, "fast", "modulation time scale: fast or slow"),
}

SIM_MODEL_KEYS = {
    "bracket": (_vector, [0.7, 1.3], "bisection bracket as multiples of the analytic limit"),
    "slots": (_int, ex.DEFAULT_SLOTS, "slots per replication"),
    "replications": (_int, ex.DEFAULT_REPLICATIONS, "replications per probe"),
    "backend": (_str, None, "simulation backend: compiled or python"),
}

SCHEMAS: dict[tuple[str, str], dict] = {
    ("region", "contains"): {"p": (_vector, REQUIRED, "attempt probabilities"),
                             "lambda": (_vector, REQUIRED, "arrival rates")},
    ("region", "sstar"): {"p": (_vector, REQUIRED, "attempt probabilities"),
                          "alpha": (_vector, REQUIRED, "traffic direction")},
    ("region", "capacity"): {"lambda": (_vector, REQUIRED, "arrival rates"),
                             "tol": (_float, region.ROOT_TOL, "fixed-point tolerance")},
    ("region", "csma"): {"p": (_vector, REQUIRED, "attempt probabilities"),
                         "alpha": (_vector, REQUIRED, "traffic direction"),
                         "sigma": (_int, 1, "slots per transmission"),
                         "tol": (_float, region.ROOT_TOL, "root tolerance")},
    ("region", "exact2"): {"p": (_vector, REQUIRED, "two attempt probabilities"),
                           "lambda": (_vector, REQUIRED, "two arrival rates")},
    ("region", "khom"): {"p": (_vector, REQUIRED, "attempt probabilities"),
                         "alpha": (_vector, REQUIRED, "traffic direction")},
    ("meanfield", "roots"): {"lambda": (_float, REQUIRED, "total arrival rate"),
                             "b": (_float, 1.0, "slot availability")},
    ("meanfield", "classify"): {**MODEL_KEYS, "tol": (_float, mf.CLASSIFY_TOL, "comparison tolerance")},
    ("meanfield", "integrate"): {**MODEL_KEYS,
                                 "tau_end": (_float, 100.0, "integration horizon"),
                                 "dt": (_float, mf.DEFAULT_DT, "RK4 step"),
                                 "k_max": (_int, mf.DEFAULT_KMAX, "queue truncation level"),
                                 "sample_every": (_int, 10, "record every n-th step"),
                                 "start": (_str, "empty", "initial state: empty, lower or upper")},
    ("meanfield", "fixed-points"): {**MODEL_KEYS,
                                    "k_max": (_int, mf.DEFAULT_KMAX, "queue truncation level")},
    ("simulate", "run"): {"p": (_vector, REQUIRED, "attempt probabilities"),
                          "lambda": (_vector, None, "Bernoulli arrival rates (if arrivals not given)"),
                          "arrivals": (_as_json, None, "list of tagged arrival models (JSON)"),
                          "b": (_float, 1.0, "slot availability"),
                          "sigma": (_int, 1, "slots per transmission"),
                          "saturated": (_index_list, [], "indices of saturated users"),
                          "slots": (_int, 1_000_000, "number of slots"),
                          "checkpoint_interval": (_int, None, "slots between backlog samples"),
                          "initial_backlog": (_int_vector, None, "initial buffer contents"),
                          "backend": (_str, None, "simulation backend: compiled or python")},
    ("simulate", "estimate-sstar"): {"p": (_vector, REQUIRED, "attempt probabilities"),
                                     "alpha": (_vector, REQUIRED, "traffic direction"),
                                     "arrival": (_str, "bernoulli", "bernoulli or hypergeometric"),
                                     "a": (_float, ex.HG_A, "hyper-geometric mixture parameter"),
                                     "b": (_float, 1.0, "slot availability"),
                                     "sigma": (_int, 1, "slots per transmission"),
                                     **SIM_MODEL_KEYS,
                                     "bracket": (_vector, None, "absolute bracket on the total rate"),
                                     "resolution": (_float, None, "target bracket half-width")},
    ("experiment", "example1"): {"x": (_vector, [1.0, 2.0, 5.0, 10.0, 20.0, 50.0], "x values"),
                                 "simulate": (_bool, False, "run the simulation cross-check"),
                                 "models": (_str_list, ["bernoulli", "hypergeometric"], "arrival models"),
                                 "workers": (_int, 1, "concurrent sweep points"), **SIM_MODEL_KEYS},
    ("experiment", "example2"): {"x": (_vector, [0.1, 0.5, 1.0, 2.0, 5.0, 47 / 7, 10.0], "x values"),
                                 "simulate": (_bool, False, "run the simulation cross-check"),
                                 "models": (_str_list, ["bernoulli", "hypergeometric"], "arrival models"),
                                 "workers": (_int, 1, "concurrent sweep points"), **SIM_MODEL_KEYS},
    ("experiment", "example3"): {"n": (_int_vector, list(range(2, 11)), "numbers of users"),
                                 "simulate": (_bool, False, "run the simulation cross-check"),
                                 "models": (_str_list, ["bernoulli"], "arrival models"),
                                 "workers": (_int, 1, "concurrent sweep points"), **SIM_MODEL_KEYS},
    ("experiment", "finite-region"): {**MODEL_KEYS,
                                      "n": (_int_vector, [10, 20, 50, 100, 200, 500, 1000], "system sizes"),
                                      "alpha": (_vector, None, "class traffic direction")},
    ("experiment", "bistability"): {**MODEL_KEYS,
                                    "tau_end": (_float, 100.0, "integration horizon"),
                                    "dt": (_float, mf.DEFAULT_DT, "RK4 step"),
                                    "k_max": (_int, mf.DEFAULT_KMAX, "queue truncation level")},
}

COMMON_KEYS = {"seed", "out"}


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def _key_line(text: str, key: str) -> int | None:
    needle = json.dumps(key)
    for no, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return no
    return None


def load_config(path: str, group: str, action: str) -> dict:
    """Read a JSON config file and reject keys the subcommand does not know."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config ({e.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: {e.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}:1: config must be a JSON object")
    allowed = set(SCHEMAS[(group, action)]) | COMMON_KEYS | {"command"}
    for key in data:
        if key not in allowed:
            raise ConfigError(f"{path}:{_key_line(text, key) or 1}: unknown field {key!r} "
                              f"for '{group} {action}'")
    cmd = data.get("command")
    if cmd is not None and cmd != f"{group} {action}":
        raise ConfigError(f"{path}:{_key_line(text, 'command') or 1}: config is for {cmd!r}, "
                          f"not '{group} {action}'")
    data["_text"] = text
    return data


def resolve(group: str, action: str, flags: dict, config_path: str | None) -> dict:
    """Merge defaults, config file and flags into a validated parameter dict."""
    schema = SCHEMAS[(group, action)]
    raw = load_config(config_path, group, action) if config_path else {}
    text = raw.pop("_text", "")
    raw.pop("command", None)
    out: dict = {}
    for key, (parse, default, _) in schema.items():
        val = flags.get(key)
        where = key
        if val is None and key in raw:
            val = raw[key]
            where = f"{config_path}:{_key_line(text, key) or 1}: {key}"
        if val is None:
            if default is REQUIRED:
                raise ConfigError(f"missing required parameter {_flag(key)}")
            out[key] = default
            continue
        out[key] = parse(val, where)
    seed = flags.get("seed")
    if seed is None:
        seed = raw.get("seed", 0)
    out["seed"] = _int(seed, "seed")
    if out["seed"] < 0:
        raise ConfigError("seed must be nonnegative")
    out["out"] = flags.get("out") or raw.get("out") or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT
    return out


# --- builders ---------------------------------------------------------------------


def _need(cfg, *keys):
    for k in keys:
        if cfg.get(k) is None:
            raise ConfigError(f"missing required parameter {_flag(k)}")


def build_class_model(cfg: dict) -> mf.ClassModel:
    if cfg.get("classes") is not None:
        classes = cfg["classes"]
        if not isinstance(classes, list) or not classes:
            raise ConfigError("classes: expected a non-empty list")
        specs = []
        allowed = {"beta", "p", "lambda", "kernel", "g"}
        for i, c in enumerate(classes):
            if not isinstance(c, dict):
                raise ConfigError(f"classes[{i}]: expected an object")
            extra = set(c) - allowed
            if extra:
                raise ConfigError(f"classes[{i}]: unknown field(s) {sorted(extra)}")
            try:
                kernel = c.get("kernel")
                g = c.get("g")
                specs.append(mf.ClassSpec(
                    _float(c["beta"], f"classes[{i}].beta"), _float(c["p"], f"classes[{i}].p"),
                    _float(c["lambda"], f"classes[{i}].lambda"),
                    None if kernel is None else tuple(tuple(float(x) for x in row) for row in kernel),
                    None if g is None else tuple(float(x) for x in g)))
            except KeyError as e:
                raise ConfigError(f"classes[{i}]: missing field {e.args[0]!r}") from None
        if cfg.get("p") is not None or cfg.get("lambda") is not None:
            raise ConfigError("give either classes or a single-class --p/--lambda, not both")
        return mf.ClassModel(tuple(specs), cfg["speed"], cfg["b"])
    _need(cfg, "p", "lambda")
    return mf.ClassModel((mf.ClassSpec(1.0, cfg["p"], cfg["lambda"]),), cfg["speed"], cfg["b"])


def build_arrival(obj, where: str):
    if not isinstance(obj, dict) or "type" not in obj:
        raise ConfigError(f"{where}: expected an object with a 'type' field")
    kind = obj["type"]
    fields = {k: v for k, v in obj.items() if k != "type"}
    known = {"bernoulli": {"lambda"}, "hypergeometric": {"lambda", "a"},
             "markov": {"lambda", "kernel", "g", "speed"}}
    if kind not in known:
        raise ConfigError(f"{where}: unknown arrival type {kind!r}")
    extra = set(fields) - known[kind]
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {sorted(extra)} for {kind}")
    try:
        lam = _float(fields["lambda"], f"{where}.lambda")
        if kind == "bernoulli":
            return sim.Bernoulli(lam)
        if kind == "hypergeometric":
            return sim.HyperGeometricMixture(lam, _float(fields.get("a", ex.HG_A), f"{where}.a"))
        return sim.MarkovModulated(fields["kernel"], fields["g"], lam, fields.get("speed", "fast"))
    except KeyError as e:
        raise ConfigError(f"{where}: missing field {e.args[0]!r}") from None


def build_system(cfg: dict) -> sim.FiniteSystemSpec:
    _need(cfg, "p")
    p = cfg["p"]
    if cfg.get("arrivals") is not None:
        if cfg.get("lambda") is not None:
            raise ConfigError("give either arrivals or --lambda, not both")
        arr = cfg["arrivals"]
        if not isinstance(arr, list):
            raise ConfigError("arrivals: expected a list")
        models = tuple(build_arrival(a, f"arrivals[{i}]") for i, a in enumerate(arr))
    else:
        _need(cfg, "lambda")
        models = tuple(sim.Bernoulli(x) for x in cfg["lambda"])
    if len(models) != len(p):
        raise ConfigError(f"{len(p)} attempt probabilities but {len(models)} arrival processes")
    return sim.FiniteSystemSpec(tuple(p), models, b=cfg["b"], sigma=cfg["sigma"],
                                saturated=frozenset(cfg["saturated"]))


# --- output -----------------------------------------------------------------------


def _jsonable(v):
    return json.loads(json.dumps(v, default=ex._json_default))


class Output:
    """Writes result files under the output directory, all stamped with the config."""

    def __init__(self, command: str, cfg: dict):
        self.command = command
        self.cfg = cfg
        self.dir = Path(cfg["out"])
        self.stem = command.replace(" ", "_").replace("-", "_")
        self.files: list[str] = []

    def _header(self) -> str:
        conf = {k: v for k, v in self.cfg.items() if k != "out"}
        return (f"# command: {self.command}\n# seed: {self.cfg['seed']}\n"
                f"# config: {json.dumps(_jsonable(conf), sort_keys=True)}\n")

    def csv(self, suffix: str, header: list, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
        return self._write(f"{self.stem}{suffix}.csv", self._header() + buf.getvalue())

    def csv_from(self, suffix: str, writer) -> Path:
        """Let a library writer produce the body, then stamp it."""
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / f"{self.stem}{suffix}.csv"
        writer(path)
        body = path.read_text()
        return self._write(path.name, self._header() + body)

    def manifest(self, results: dict) -> Path:
        doc = {"command": self.command, "version": __version__, "seed": self.cfg["seed"],
               "config": {k: v for k, v in self.cfg.items() if k != "out"},
               "files": sorted(self.files), "results": results}
        text = json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"
        return self._write(f"{self.stem}.json", text, track=False)

    def _write(self, name: str, text: str, track: bool = True) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / name
        path.write_text(text)
        if track:
            self.files.append(name)
        return path


def fmt(x) -> str:
    """Five significant digits for console output."""
    if x is None:
        return "none"
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.5g}"
    if isinstance(x, (list, tuple, np.ndarray)):
        return "[" + ", ".join(fmt(v) for v in x) + "]"
    return str(x)


def say(**kv) -> None:
    print("  ".join(f"{k}={fmt(v)}" for k, v in kv.items()))


# --- handlers -----------------------------------------------------------------------


def h_region(action: str, cfg: dict, out: Output) -> dict:
    if action == "contains":
        inside = region.approx_region_contains(cfg["lambda"], cfg["p"])
        lam = np.asarray(cfg["lambda"])
        res = {"inside": inside, "s": float(lam.sum())}
        if lam.sum() > 0:
            st = region.shat_star(lam / lam.sum(), cfg["p"])
            res["s_star"] = st.s_star
        say(**res)
    elif action == "sstar":
        st = region.shat_star(cfg["alpha"], cfg["p"])
        res = {"s_star": st.s_star, "i_star": st.i_star + 1, "rho_star": st.rho_star.tolist()}
        say(**res)
    elif action == "capacity":
        p = region.capacity_region_solve(cfg["lambda"], cfg["tol"])
        res = {"feasible": p is not None, "p": None if p is None else p.tolist()}
        say(**res)
    elif action == "csma":
        s = region.csma_shat_star(cfg["alpha"], cfg["p"], cfg["sigma"], cfg["tol"])
        res = {"s_star": s, "utilization": s * cfg["sigma"]}
        say(**res)
    elif action == "exact2":
        res = {"inside": region.exact_region2_contains(cfg["lambda"], cfg["p"])}
        say(**res)
    else:  # khom
        res = {"s_star": region.k_homogeneous_sstar(cfg["alpha"], cfg["p"])}
        say(**res)
    out.csv("", list(res), [[_cell(v) for v in res.values()]])
    return res


def _cell(v):
    if isinstance(v, (list, tuple)):
        return ";".join(repr(float(x)) for x in v)
    if isinstance(v, bool):
        return str(v).lower()
    return "" if v is None else v


def h_meanfield(action: str, cfg: dict, out: Output) -> dict:
    if action == "roots":
        lo, hi = mf.gamma_roots(cfg["lambda"], cfg["b"])
        print(f"{fmt(lo)}, {fmt(hi)}")
        res = {"gamma_lower": lo, "gamma_upper": hi}
        out.csv("", list(res), [[lo, hi]])
        return res
    model = build_class_model(cfg)
    if action == "classify":
        v = mf.classify_stability(model, cfg["tol"])
        res = {"verdict": v.verdict, "gamma_lower": v.gamma_lower, "gamma_upper": v.gamma_upper,
               "zeta": v.zeta, "margins": list(v.margins)}
        say(**res)
        out.csv("", ["verdict", "gamma_lower", "gamma_upper", "zeta"],
                [[v.verdict, _cell(v.gamma_lower), _cell(v.gamma_upper), v.zeta]])
        return res
    if action == "fixed-points":
        fps = mf.fixed_points(model, cfg["k_max"])
        rows = []
        for f in fps:
            say(kind=f.kind, gamma=f.gamma, consistency=f.consistency, residual=f.residual)
            rows.append([f.kind, f.gamma, f.consistency, f.residual]
                        + [float(x) for x in f.state.empty_prob()])
        if not fps:
            print("no fixed point")
        V = model.n_classes
        out.csv("", ["kind", "gamma", "consistency", "residual"] + [f"Q_{v}_0" for v in range(V)], rows)
        return {"fixed_points": [{"kind": f.kind, "gamma": f.gamma, "consistency": f.consistency,
                                  "residual": f.residual} for f in fps]}
    # integrate
    start = cfg["start"]
    if start == "empty":
        q0 = mf.MeanFieldState.empty(model, cfg["k_max"])
    elif start in ("lower", "upper"):
        fps = {f.kind: f for f in mf.fixed_points(model, cfg["k_max"])}
        if start not in fps:
            raise ConfigError(f"start={start!r}: the model has no {start} fixed point")
        q0 = fps[start].state
    else:
        raise ConfigError("start must be empty, lower or upper")
    traj = mf.mf_integrate(q0, model, cfg["tau_end"], cfg["dt"], sample_every=cfg["sample_every"])
    res = {"gamma_end": float(traj.gamma[-1]), "W_end": float(traj.W[-1]),
           "max_mass_drift": traj.max_mass_drift, "max_workload_residual": traj.max_workload_residual,
           "max_tail": traj.max_tail}
    say(**res)
    out.csv_from("_trajectory", traj.write_csv)
    return res


def h_simulate(action: str, cfg: dict, out: Output) -> dict:
    if action == "run":
        spec = build_system(cfg)
        rep = sim.run_sim(spec, cfg["slots"], cfg["seed"], cfg["checkpoint_interval"],
                          backend=cfg["backend"], initial_backlog=cfg["initial_backlog"])
        tracked = [i for i in range(spec.n) if i not in spec.saturated]
        drift = sim.drift_verdict(rep) if tracked else None
        res = {"throughput": rep.throughput.tolist(), "backlog": rep.backlog.tolist(),
               "empty_fraction": rep.empty_fraction, "collision_fraction": rep.collision_fraction,
               "conserved": rep.conserved(),
               "drift_verdict": None if drift is None else drift.verdict,
               "drift_slope": None if drift is None else drift.slope}
        say(**res)
        out.csv("", ["user", "arrivals", "departures", "successes", "backlog", "throughput"],
                [[i, int(rep.arrivals[i]), int(rep.departures[i]), int(rep.successes[i]),
                  int(rep.backlog[i]), float(rep.throughput[i])] for i in range(spec.n)])
        out.csv_from("_trace", rep.write_trace)
        return res
    # estimate-sstar
    _need(cfg, "p", "alpha")
    p, alpha = cfg["p"], cfg["alpha"]
    if len(p) != len(alpha):
        raise ConfigError("p and alpha need the same length")
    arrival = ex._arrival(cfg["arrival"]) if cfg["arrival"] == "bernoulli" else \
        sim.HyperGeometricMixture(0.0, cfg["a"]) if cfg["arrival"] == "hypergeometric" else None
    if arrival is None:
        raise ConfigError("arrival must be bernoulli or hypergeometric")
    tmpl = sim.FiniteSystemSpec(tuple(p), tuple(arrival for _ in p), b=cfg["b"], sigma=cfg["sigma"])
    if cfg["bracket"] is None:
        a = np.asarray(alpha) / np.sum(alpha)
        ref = region.shat_star(a, p).s_star if cfg["sigma"] == 1 and cfg["b"] == 1.0 else \
            region.csma_shat_star(a, p, cfg["sigma"]) * cfg["b"]
        bracket = (0.7 * ref, 1.3 * ref)
    else:
        if len(cfg["bracket"]) != 2:
            raise ConfigError("bracket: expected two numbers")
        bracket = tuple(cfg["bracket"])
    est = sim.estimate_sstar_sim(alpha, tmpl, bracket, cfg["slots"], cfg["replications"], cfg["seed"],
                                 resolution=cfg["resolution"], backend=cfg["backend"])
    res = {"s_hat": est.s_hat, "half_width": est.half_width, "inconclusive": est.inconclusive,
           "bracket": list(bracket)}
    say(**res)
    out.csv("_probes", ["s", "verdict", "slopes"],
            [[s, v, ";".join(repr(float(x)) for x in sl)] for s, v, sl in est.probes])
    res["seeds"] = est.seeds
    return res


def _sim_opts(cfg):
    return {"slots": cfg["slots"], "replications": cfg["replications"], "seed": cfg["seed"],
            "backend": cfg["backend"], "bracket": tuple(cfg["bracket"])}


def h_experiment(action: str, cfg: dict, out: Output) -> dict:
    if action in ("example1", "example2", "example3"):
        fn = {"example1": ex.example1, "example2": ex.example2, "example3": ex.example3}[action]
        params = cfg["n"] if action == "example3" else cfg["x"]
        res = fn(params, simulate=cfg["simulate"], models=tuple(cfg["models"]),
                 sim=_sim_opts(cfg), workers=cfg["workers"])
        for r in res.rows:
            say(param=r.param, s_analytic=r.s_analytic, s_closed_form=r.s_closed_form,
                i_star=r.i_star + 1, **({"model": r.arrival_model, "s_simulated": r.s_simulated}
                                        if cfg["simulate"] else {}))
        out.csv_from("", res.write_csv)
        return {"sweep": res.manifest(), "rows": res.rows}
    model = build_class_model(cfg)
    if action == "finite-region":
        rows, bound = ex.finite_region_check(model, cfg["n"], cfg["alpha"])
        for r in rows:
            say(N=r.n, s_N=r.s_n, s_inf=r.s_inf, scaled_gap=r.scaled_gap)
        say(bound=bound)
        out.csv_from("", lambda path: ex.write_convergence_csv(rows, path))
        return {"bound": bound, "rows": rows}
    rep = ex.bistability_demo(model, cfg["tau_end"], cfg["dt"], cfg["k_max"])
    say(verdict=rep.verdict, gamma_lower=rep.gamma_lower, gamma_upper=rep.gamma_upper,
        from_empty=rep.limit_from_empty, from_upper=rep.limit_from_upper)
    out.csv("", ["verdict", "gamma_lower", "gamma_upper", "limit_from_empty", "limit_from_upper", "gap"],
            [[rep.verdict, rep.gamma_lower, rep.gamma_upper, rep.limit_from_empty,
              rep.limit_from_upper, rep.gap]])
    return {"report": rep}


HANDLERS = {"region": h_region, "meanfield": h_meanfield, "simulate": h_simulate,
            "experiment": h_experiment}


# --- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="alohastab", description="Stability of slotted random access")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    groups = ap.add_subparsers(dest="group", required=True)
    by_group: dict[str, argparse._SubParsersAction] = {}
    for group, action in SCHEMAS:
        if group not in by_group:
            gp = groups.add_parser(group)
            by_group[group] = gp.add_subparsers(dest="action", required=True)
        sp = by_group[group].add_parser(action)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
        sp.add_argument("--seed", help="random seed (default 0)")
        for key, (_, default, text) in SCHEMAS[(group, action)].items():
            suffix = " (required)" if default is REQUIRED else "" if default is None else f" (default {default})"
            sp.add_argument(_flag(key), dest=key, default=None, help=text + suffix)
    return ap


def dispatch(group: str, action: str, flags: dict, config_path: str | None = None) -> int:
    """Run one subcommand; returns the exit status."""
    command = f"{group} {action}"
    try:
        cfg = resolve(group, action, flags, config_path)
        out = Output(command, cfg)
        results = HANDLERS[group](action, cfg, out)
        out.manifest(results)
    except (ConfigError, sim.BracketError) as e:
        # BracketError signals a bracket that does not straddle the limit
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (region.ConvergenceError, mf.TruncationError, FloatingPointError,
            NumericalFailure, ArithmeticError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except RuntimeError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("group", "action", "config", "verbose")}
    return dispatch(args.group, args.action, flags, args.config)


if __name__ == "__main__":
    sys.exit(main())
