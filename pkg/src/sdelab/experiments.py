"""Config-driven experiment catalog with deterministic CSV/JSON output.

Configs are flat ``key = value`` text files, one experiment per file.  Every
run is a pure function of (config, seed), so rerunning with the same inputs
reproduces output files byte for byte regardless of the thread count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import TimeGrid, stream_generators
from .models import (
    ModelSpec,
    coupled_em_solver,
    full_reference_solver,
    penalized_spec,
    stopped_reference_solver,
)
from .scale_oracle import (
    ExitQuery,
    bm_occupation_oracle,
    canonical_bump,
    exit_prob_oracle,
)
from .stats import (
    Z95,
    coupled_sup_distance,
    mc_exit_prob,
    modulus_of_continuity,
    occupation_fraction,
    strong_markov_probe,
)

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "ResultRecord",
    "CATALOG",
    "parse_config_text",
    "build_config",
    "run_experiment",
    "render_csv",
    "render_json",
]

SCHEMA_VERSION = 1

# fixed discretization allowance added to the Monte Carlo standard error in
# exit-probability verdicts
MC_DISCRETIZATION_ALLOWANCE = 1e-4


class ConfigError(ValueError):
    """Bad experiment configuration (unknown key, bad value, unknown name)."""


def _parse_int(s):
    return int(s)


def _parse_float(s):
    return float(s)


def _parse_str(s):
    return str(s)


def _parse_bool(s):
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_int_list(s):
    return [int(tok) for tok in str(s).split(",") if tok.strip()]


def _parse_float_list(s):
    return [float(tok) for tok in str(s).split(",") if tok.strip()]


_COMMON_SCHEMA = {
    "master_seed": (_parse_int, 20260823),
    "out": (_parse_str, ""),
    "format": (_parse_str, "csv"),
}


@dataclass
class ResultRecord:
    """One completed experiment: parameter echo, result rows, verdicts."""

    experiment: str
    seed: int
    params: dict
    columns: list
    rows: list
    verdicts: list

    @property
    def passed(self) -> bool:
        return all(self.verdicts)


def _bool_cell(v) -> str:
    return "true" if v else "false"


def _fmt_cell(v) -> str:
    if isinstance(v, bool):
        return _bool_cell(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return format(v, ".9g")
    return str(v)


def render_csv(record: ResultRecord) -> str:
    lines = [",".join(record.columns)]
    for row in record.rows:
        lines.append(",".join(_fmt_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def render_json(record: ResultRecord) -> str:
    def clean(v):
        if isinstance(v, (np.integer,)):
            return int(v)
        if isinstance(v, (np.floating,)):
            return float(v)
        if isinstance(v, (list, tuple)):
            return [clean(u) for u in v]
        return v

    doc = {
        "meta": {
            "experiment": record.experiment,
            "schema_version": SCHEMA_VERSION,
            "master_seed": record.seed,
            "passed": record.passed,
        },
        "params": {k: clean(v) for k, v in record.params.items()},
        "rows": [
            {col: clean(val) for col, val in zip(record.columns, row)}
            for row in record.rows
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def _const_fn(c: float):
    return lambda z, _c=float(c): _c


def _exit_oracle_for(b: float, sigma: float, n: int, q: ExitQuery) -> float:
    b_fn = None if b == 0.0 else _const_fn(b)
    s_fn = None if sigma == 1.0 else _const_fn(sigma)
    bump = canonical_bump(n) if n > 0 else None
    return exit_prob_oracle(q, b_fn, s_fn, bump)


def _run_exit_penalized(p: dict, n_threads: int):
    q = ExitQuery(p["l"], p["x"], p["r"])
    grid = TimeGrid(0.0, p["T"], p["n_steps"])
    columns = [
        "penalty_n", "mc_estimate", "oracle", "abs_err", "tolerance",
        "stderr", "n_exit_left", "n_exit_right", "n_censored", "verdict",
    ]
    rows, verdicts = [], []
    for n in p["n_list"]:
        spec = penalized_spec(p["drift"], p["sigma"], n if n > 0 else None, x0=p["x"])
        res = mc_exit_prob(
            spec, q, p["n_paths"], grid, p["master_seed"],
            bridge=p["bridge"], n_threads=n_threads,
        )
        oracle = _exit_oracle_for(p["drift"], p["sigma"], n, q)
        err = abs(res.estimate.value - oracle)
        tol = 3.0 * (res.stderr + MC_DISCRETIZATION_ALLOWANCE)
        ok = err <= tol
        rows.append([
            n, res.estimate.value, oracle, err, tol, res.stderr,
            res.n_exit_left, res.n_exit_right, res.n_censored, ok,
        ])
        verdicts.append(ok)
    return columns, rows, verdicts


def _run_occupation_sweep(p: dict, n_threads: int):
    spec = penalized_spec(0.0, 1.0, p["n"] if p["n"] > 0 else None, x0=p["x0"])
    columns = ["eps", "estimate", "half_width", "oracle", "decreased", "verdict"]
    rows, verdicts = [], []
    prev = None
    use_oracle = p["n"] == 0 and p["x0"] == 0.0
    for eps in p["eps_list"]:
        est = occupation_fraction(
            spec, eps, p["T"], p["n_paths"], p["master_seed"],
            n_steps=p["n_steps"], n_threads=n_threads,
        )
        oracle = bm_occupation_oracle(eps, p["T"]) if use_oracle else float("nan")
        decreased = prev is None or est.value < prev
        ok = decreased
        if use_oracle:
            ok = ok and abs(est.value - oracle) <= 3.0 * (est.half_width / Z95)
        rows.append([eps, est.value, est.half_width, oracle, decreased, ok])
        verdicts.append(ok)
        prev = est.value
    return columns, rows, verdicts


def _run_convergence_ladder(p: dict, n_threads: int):
    family = p["family"]
    if family not in ("sqrt-capped", "noise-perturb"):
        raise ConfigError(f"family must be sqrt-capped or noise-perturb, got {family!r}")
    grid = TimeGrid(0.0, p["T"], p["n_steps"])
    xi = p["xi"]
    reference = stopped_reference_solver(xi) if family == "sqrt-capped" else full_reference_solver(xi)
    tag = "SqrtCappedApprox" if family == "sqrt-capped" else "NoisePerturbApprox"
    columns = ["eps", "sup_sq_distance", "half_width", "verdict"]
    rows, verdicts = [], []
    prev = None
    for eps in p["eps_list"]:
        solver = coupled_em_solver(ModelSpec(tag, x0=xi, eps=eps))
        est = coupled_sup_distance(
            solver, reference, grid, p["n_paths"], p["master_seed"], n_threads=n_threads
        )
        # non-increasing within the combined CI slack
        ok = prev is None or est.value <= prev[0] + est.half_width + prev[1]
        rows.append([eps, est.value, est.half_width, ok])
        verdicts.append(ok)
        prev = (est.value, est.half_width)
    return columns, rows, verdicts


def _run_strong_markov_probe(p: dict, n_threads: int):
    model = p["model"]
    if model == "bm":
        spec = penalized_spec(x0=p["x0"])
    elif model == "penalized":
        spec = penalized_spec(n=p["n"], x0=p["x0"])
    elif model == "circle":
        spec = ModelSpec("CircleProcess", x0=p["x0"])
    else:
        raise ConfigError(f"model must be bm, penalized or circle, got {model!r}")
    res = strong_markov_probe(
        spec, p["target"], p["lag"], p["n_paths"], p["master_seed"],
        T=p["T"], n_steps=p["n_steps"], hit_radius=p["hit_radius"],
        n_threads=n_threads,
    )
    if model == "bm":
        ok = (not res.inconclusive) and res.ks.p_value >= 0.01
    elif model == "penalized":
        ok = (not res.inconclusive) and res.crossing_fraction.value < 0.02 and res.ks.p_value < 1e-6
    else:
        ok = (not res.inconclusive) and res.side_agreement > 0.98
    columns = [
        "model", "n_left", "n_right", "ks_statistic", "ks_p_value",
        "crossing_fraction", "crossing_half_width", "side_agreement",
        "n_censored", "inconclusive", "verdict",
    ]
    rows = [[
        model, res.left.size, res.right.size, res.ks.statistic, res.ks.p_value,
        res.crossing_fraction.value, res.crossing_fraction.half_width,
        res.side_agreement, res.n_censored, res.inconclusive, ok,
    ]]
    return columns, rows, [ok]


def _run_shifted_decomposition(p: dict, n_threads: int):
    """Compare the (0, x) and (2, x - 2) decompositions on shared drivers.

    The component sum is x + B for the first decomposition and x + B frozen
    at its first zero node for the second; per hitting path the post-hit
    quadratic variation separates them.
    """
    x = p["x"]
    grid = TimeGrid(0.0, p["T"], p["n_steps"])
    n, dt = p["n_steps"], grid.dt
    root_dt = math.sqrt(dt)
    columns = ["y1", "y2", "n_paths", "n_hit", "frac_active_qv", "frac_zero_qv", "verdict"]

    n_hit = 0
    n_active = 0  # post-hit QV > 0.5 * (T - tau) on the unfrozen sum
    n_zero = 0    # post-hit QV == 0 on the frozen sum
    chunk = max(16, min(1024, 4_000_000 // n))
    for start in range(0, p["n_paths"], chunk):
        count = min(chunk, p["n_paths"] - start)
        gens = stream_generators(p["master_seed"], start, count)
        dB = np.stack([g.standard_normal(n) for g in gens]) * root_dt
        s = x + np.concatenate([np.zeros((count, 1)), np.cumsum(dB, axis=1)], axis=1)
        crossed = (np.sign(s[:, 1:]) != np.sign(s[:, :1])) | (s[:, 1:] == 0.0)
        has = crossed.any(axis=1)
        first = np.argmax(crossed, axis=1) + 1
        rows_idx = np.flatnonzero(has)
        n_hit += rows_idx.size
        for i in rows_idx:
            k = int(first[i])
            qv = float(np.sum(dB[i, k:] ** 2))
            remaining = p["T"] - k * dt
            if remaining <= 0.0 or qv > 0.5 * remaining:
                n_active += 1
            # frozen decomposition holds the sum constant from node k on,
            # so its post-hit quadratic variation is exactly zero
            n_zero += 1

    frac_active = n_active / n_hit if n_hit else float("nan")
    frac_zero = n_zero / n_hit if n_hit else float("nan")
    ok_a = n_hit > 0 and frac_active > 0.99
    ok_b = n_hit > 0 and frac_zero == 1.0
    rows = [
        [0.0, x, p["n_paths"], n_hit, frac_active, float("nan"), ok_a],
        [2.0, x - 2.0, p["n_paths"], n_hit, float("nan"), frac_zero, ok_b],
    ]
    return columns, rows, [ok_a, ok_b]


def _run_modulus_table(p: dict, n_threads: int):
    if p["model"] == "bm":
        spec = penalized_spec(x0=p["x0"])
    elif p["model"] == "penalized":
        spec = penalized_spec(n=p["n"], x0=p["x0"])
    else:
        raise ConfigError(f"model must be bm or penalized, got {p['model']!r}")
    table = modulus_of_continuity(
        spec, p["h_list"], p["T"], p["n_paths"], quantile=p["quantile"],
        n_steps=p["n_steps"], master_seed=p["master_seed"], n_threads=n_threads,
    )
    columns = ["h", "quantile", "modulus_quantile", "verdict"]
    rows, verdicts = [], []
    prev = None
    for h, v in table:
        ok = prev is None or v >= prev
        rows.append([h, p["quantile"], v, ok])
        verdicts.append(ok)
        prev = v
    return columns, rows, verdicts


@dataclass(frozen=True)
class Experiment:
    name: str
    summary: str
    schema: dict
    runner: Callable


CATALOG = {
    exp.name: exp
    for exp in [
        Experiment(
            "exit-penalized",
            "exit-at-right probability vs quadrature oracle over a penalty ladder",
            {
                **_COMMON_SCHEMA,
                "n_list": (_parse_int_list, [0, 1, 2, 4, 8, 16, 32, 64]),
                "l": (_parse_float, -1.0),
                "x": (_parse_float, -0.3),
                "r": (_parse_float, 1.0),
                "drift": (_parse_float, 0.0),
                "sigma": (_parse_float, 1.0),
                "bridge": (_parse_bool, True),
                "n_paths": (_parse_int, 20000),
                "T": (_parse_float, 6.0),
                "n_steps": (_parse_int, 6000),
            },
            _run_exit_penalized,
        ),
        Experiment(
            "occupation-sweep",
            "mean occupation time of [-eps, eps] over a shrinking eps ladder",
            {
                **_COMMON_SCHEMA,
                "eps_list": (_parse_float_list, [0.2, 0.1, 0.05, 0.025]),
                "n": (_parse_int, 0),
                "x0": (_parse_float, 0.0),
                "n_paths": (_parse_int, 10000),
                "T": (_parse_float, 1.0),
                "n_steps": (_parse_int, 1000),
            },
            _run_occupation_sweep,
        ),
        Experiment(
            "convergence-ladder",
            "coupled sup-distance of an approximating family to its reference limit",
            {
                **_COMMON_SCHEMA,
                "family": (_parse_str, "sqrt-capped"),
                "eps_list": (_parse_float_list, [0.4, 0.2, 0.1, 0.05]),
                "xi": (_parse_float, 1.0),
                "n_paths": (_parse_int, 4000),
                "T": (_parse_float, 1.0),
                "n_steps": (_parse_int, 1000),
            },
            _run_convergence_ladder,
        ),
        Experiment(
            "strong-markov-probe",
            "post-hit law comparison by approach side (KS test, crossing fraction)",
            {
                **_COMMON_SCHEMA,
                "model": (_parse_str, "bm"),
                "n": (_parse_int, 64),
                "target": (_parse_float, 0.0),
                "lag": (_parse_float, 0.1),
                "hit_radius": (_parse_float, 0.0),
                "x0": (_parse_float, 0.3),
                "n_paths": (_parse_int, 2000),
                "T": (_parse_float, 1.0),
                "n_steps": (_parse_int, 1000),
            },
            _run_strong_markov_probe,
        ),
        Experiment(
            "shifted-decomposition",
            "post-hit quadratic variation of two decompositions with shared drivers",
            {
                **_COMMON_SCHEMA,
                "x": (_parse_float, 1.0),
                "n_paths": (_parse_int, 5000),
                "T": (_parse_float, 1.0),
                "n_steps": (_parse_int, 1000),
            },
            _run_shifted_decomposition,
        ),
        Experiment(
            "modulus-table",
            "quantiles of the discrete modulus of continuity over window widths",
            {
                **_COMMON_SCHEMA,
                "model": (_parse_str, "bm"),
                "n": (_parse_int, 4),
                "x0": (_parse_float, 0.0),
                "h_list": (_parse_float_list, [0.01, 0.02, 0.05, 0.1]),
                "quantile": (_parse_float, 0.95),
                "n_paths": (_parse_int, 500),
                "T": (_parse_float, 1.0),
                "n_steps": (_parse_int, 1000),
            },
            _run_modulus_table,
        ),
    ]
}


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = body.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


def build_config(raw: dict, overrides: dict | None = None) -> tuple[str, dict]:
    """Validate raw config text values against the experiment's schema.

    ``overrides`` holds already-typed values (from CLI flags) that replace
    file values.  Returns (experiment_name, params).
    """
    raw = dict(raw)
    name = raw.pop("experiment", None)
    if name is None:
        raise ConfigError("config is missing the 'experiment' key")
    if name not in CATALOG:
        raise ConfigError(f"unknown experiment {name!r}")
    schema = CATALOG[name].schema
    params = {}
    for key, (parser, default) in schema.items():
        if key in raw:
            try:
                params[key] = parser(raw.pop(key))
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from exc
        else:
            params[key] = default
    if raw:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(raw))}")
    for key, value in (overrides or {}).items():
        if key not in schema:
            raise ConfigError(f"experiment {name!r} does not accept {key!r}")
        params[key] = value
    if params["format"] not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {params['format']!r}")
    return name, params


def run_experiment(name: str, params: dict, n_threads: int = 1) -> ResultRecord:
    """Execute one catalog experiment and return its result record."""
    if name not in CATALOG:
        raise ConfigError(f"unknown experiment {name!r}")
    runner = CATALOG[name].runner
    try:
        columns, rows, verdicts = runner(params, n_threads)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    echo = {k: v for k, v in params.items() if k not in ("out", "format")}
    return ResultRecord(
        experiment=name,
        seed=params["master_seed"],
        params=echo,
        columns=columns,
        rows=rows,
        verdicts=verdicts,
    )
