"""Command line front end: ``vnentropy {index,entropies,renyi-curve,check}``.

Data goes to stdout (or ``--out``), logs to stderr.  Exit codes: 0 success,
1 property violation, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import chan
from .entropy import (
    araki,
    h_closed_form_subalgebra,
    h_downward,
    h_partition_search,
    is_monotone,
    s_p,
    s_tau,
    upper_bound_gap_formula,
    upper_bound_value,
)
from .harness import SUITES, theorem_harness
from .inclusion import build_inclusion, instance_digest
from .tower import Tower, downward_criterion, extend_upward

SCHEMA_VERSION = 1
COLUMNS = ("schema_version", "command", "instance_digest", "quantity", "method", "p", "value", "margin", "seed")

log = logging.getLogger("vnentropy")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

_TOP_KEYS = {"inclusion", "channels", "params", "format"}
_INCLUSION_KEYS = {"dims_small", "adjacency", "trace", "extend_upward"}
_PARAM_DEFAULTS = {
    "seed": 1,
    "trials": 100,
    "budget": 10_000,
    "tol": 1e-9,
    "slack": 1e-8,
    "pgrid": [0.5, 1.0, 1.5, 2.0, 4.0, math.inf],
    "suites": list(SUITES),
}


def _number(value, where: str) -> float:
    """Numbers may be JSON numbers or decimal/fraction strings such as ``"1/3"``."""
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("inf", "infinity"):
            return math.inf
        try:
            return float(Fraction(text))
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"{where}: cannot read {value!r} as a number") from None
    raise ConfigError(f"{where}: expected a number, got {type(value).__name__}")


def _integer(value, where: str) -> int:
    x = _number(value, where)
    if not math.isfinite(x) or x != int(x):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    return int(x)


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")


def _parse_inclusion(obj) -> dict:
    _check_keys(obj, _INCLUSION_KEYS, "inclusion")
    for key in ("dims_small", "adjacency"):
        if key not in obj:
            raise ConfigError(f"inclusion.{key}: missing")
    dims = obj["dims_small"]
    if not isinstance(dims, list) or not dims:
        raise ConfigError("inclusion.dims_small: expected a non-empty list")
    dims = [_integer(v, f"inclusion.dims_small[{i}]") for i, v in enumerate(dims)]
    adj = obj["adjacency"]
    if not isinstance(adj, list) or not adj or not all(isinstance(r, list) for r in adj):
        raise ConfigError("inclusion.adjacency: expected a list of rows")
    adj = [[_integer(v, f"inclusion.adjacency[{i}][{j}]") for j, v in enumerate(r)] for i, r in enumerate(adj)]
    if len({len(r) for r in adj}) != 1:
        raise ConfigError("inclusion.adjacency: rows have different lengths")
    if len(adj) != len(dims):
        raise ConfigError(f"inclusion.adjacency: needs {len(dims)} rows (one per block of dims_small), got {len(adj)}")
    tr = obj.get("trace", "markov")
    if isinstance(tr, str):
        if tr != "markov":
            raise ConfigError(f"inclusion.trace: unknown token {tr!r} (use \"markov\" or a list)")
    elif isinstance(tr, list):
        tr = [_number(v, f"inclusion.trace[{i}]") for i, v in enumerate(tr)]
    else:
        raise ConfigError("inclusion.trace: expected \"markov\" or a list of numbers")
    upward = obj.get("extend_upward", False)
    if not isinstance(upward, bool):
        raise ConfigError("inclusion.extend_upward: expected true or false")
    return {"dims_small": dims, "adjacency": adj, "trace": tr, "extend_upward": upward}


def _parse_params(obj) -> dict:
    _check_keys(obj, _PARAM_DEFAULTS, "params")
    out = dict(_PARAM_DEFAULTS)
    for key, val in obj.items():
        where = f"params.{key}"
        if key in ("seed", "trials", "budget"):
            out[key] = _integer(val, where)
        elif key in ("tol", "slack"):
            out[key] = _number(val, where)
        elif key == "pgrid":
            if not isinstance(val, list) or not val:
                raise ConfigError(f"{where}: expected a non-empty list")
            out[key] = [_number(v, f"{where}[{i}]") for i, v in enumerate(val)]
        elif key == "suites":
            if not isinstance(val, list) or any(s not in SUITES for s in val):
                raise ConfigError(f"{where}: expected a list drawn from {', '.join(SUITES)}")
            out[key] = list(val)
    return out


def load_config(text: str | None) -> dict:
    """Parse and validate a JSON config, filling defaults."""
    raw = {}
    if text is not None:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"line {err.lineno}, column {err.colno}: {err.msg}") from None
    _check_keys(raw, _TOP_KEYS, "config")
    cfg = {
        "inclusion": _parse_inclusion(raw["inclusion"]) if "inclusion" in raw else None,
        "channels": raw.get("channels", {"phi": "identity", "psi": "cond_exp"}),
        "params": _parse_params(raw.get("params", {})),
        "format": raw.get("format", "csv"),
    }
    _check_keys(cfg["channels"], {"phi", "psi"}, "channels")
    cfg["channels"].setdefault("phi", "identity")
    cfg["channels"].setdefault("psi", "cond_exp")
    if cfg["format"] not in ("csv", "json"):
        raise ConfigError("format: expected \"csv\" or \"json\"")
    return cfg


# ---------------------------------------------------------------------------
# Instances and channels
# ---------------------------------------------------------------------------


@dataclass
class Setup:
    tower: Tower
    down: object | None
    digest: str


def build_setup(spec: dict) -> Setup:
    try:
        inc = build_inclusion(spec["dims_small"], spec["adjacency"], spec["trace"], normalize=True)
    except ValueError as err:
        raise ConfigError(f"inclusion: {err}") from None
    if spec["extend_upward"]:
        down = extend_upward(inc)
        if not down.markov:
            log.warning("lower trace is not Markov; the downward formula does not apply")
        return Setup(down.tower, down if down.markov else None, instance_digest(down.inc))
    return Setup(Tower(inc), None, instance_digest(inc))


def build_channel(desc, tower: Tower, where: str) -> chan.LinearMap:
    inc = tower.inc
    if isinstance(desc, str):
        desc = {desc: {}}
    if not isinstance(desc, dict) or len(desc) != 1:
        raise ConfigError(f"{where}: a channel is a name or a one-key object")
    (name, arg), = desc.items()
    if name == "identity":
        return chan.identity_map(inc.big)
    if name == "cond_exp":
        return chan.conditional_expectation_map(inc)
    if name == "from_multiplier_random":
        if isinstance(arg, (int, str)):
            arg = {"seed": arg}
        _check_keys(arg, {"seed", "rank", "unital"}, where)
        seed = _integer(arg.get("seed", 0), f"{where}.seed")
        rank = arg.get("rank")
        rank = None if rank is None else _integer(rank, f"{where}.rank")
        return chan.random_bimodule_channel(tower, seed, bool(arg.get("unital", True)), rank)
    if name == "convex":
        _check_keys(arg, {"maps", "weights"}, where)
        maps = [build_channel(d, tower, f"{where}.maps[{i}]") for i, d in enumerate(arg.get("maps", []))]
        weights = [_number(w, f"{where}.weights[{i}]") for i, w in enumerate(arg.get("weights", []))]
        if not maps or len(maps) != len(weights):
            raise ConfigError(f"{where}: maps and weights must be non-empty and of equal length")
        if any(w < 0 for w in weights):
            raise ConfigError(f"{where}.weights: must be non-negative")
        return chan.convex_combination(maps, weights)
    if name == "compose":
        if not isinstance(arg, list) or not arg:
            raise ConfigError(f"{where}: compose takes a non-empty list; the rightmost map is applied first")
        return chan.compose([build_channel(d, tower, f"{where}[{i}]") for i, d in enumerate(arg)])
    raise ConfigError(f"{where}: unknown channel {name!r}")


def _is_id_pair(cfg) -> bool:
    ch = cfg["channels"]
    norm = lambda d: d if isinstance(d, str) else (next(iter(d)) if isinstance(d, dict) and len(d) == 1 else None)
    return norm(ch["phi"]) == "identity" and norm(ch["psi"]) == "cond_exp"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


class Rows:
    def __init__(self, command: str, digest: str = "", seed=None):
        self.command, self.digest, self.seed = command, digest, seed
        self.rows: list[dict] = []

    def add(self, quantity, method, value, margin=None, p=None, seed=None, digest=None):
        self.rows.append({
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "instance_digest": self.digest if digest is None else digest,
            "quantity": quantity,
            "method": method,
            "p": p,
            "value": value,
            "margin": margin,
            "seed": self.seed if seed is None else seed,
        })


def cmd_index(cfg) -> tuple[Rows, int]:
    setup = _require_setup(cfg)
    inc = setup.tower.inc
    rows = Rows("index", setup.digest)
    s, m = inc.trace_small.weights, inc.big.dims
    closed = float(sum(m[l] * inc.adjacency[k, l] * s[k] for k, l in inc.central_pairs()))
    rows.add("index", "pimsner-popa-basis", inc.index, abs(inc.index - closed))
    rows.add("delta", "pimsner-popa-basis", inc.delta)
    ok, witness = downward_criterion(inc)
    rows.add("downward_criterion", "a_kl<=n_k", int(ok))
    for k, l in witness:
        rows.add("criterion_violation", f"k={k};l={l}", int(inc.adjacency[k, l]))
    return rows, 0


def _require_setup(cfg) -> Setup:
    if cfg["inclusion"] is None:
        raise ConfigError("inclusion: missing (this command needs an inclusion)")
    return build_setup(cfg["inclusion"])


def _channels(cfg, tower):
    ch = cfg["channels"]
    return build_channel(ch["phi"], tower, "channels.phi"), build_channel(ch["psi"], tower, "channels.psi")


def cmd_entropies(cfg) -> tuple[Rows, int]:
    setup = _require_setup(cfg)
    t, prm = setup.tower, cfg["params"]
    rows = Rows("entropies", setup.digest, prm["seed"])
    phi, psi = _channels(cfg, t)
    if not chan.majorizes(phi, psi, t, prm["tol"]):
        log.warning("phi is not majorized by psi; entropies are +inf")
    st = s_tau(phi, psi, t, prm["tol"]).value
    ar = araki(phi, psi, t.inc.trace_big, tol=prm["tol"]).value
    rows.add("S_tau", "multiplier", st, _gap(st, ar))
    rows.add("S_araki", "correspondence", ar, _gap(st, ar))
    violated = False
    if _is_id_pair(cfg):
        h = h_closed_form_subalgebra(t.inc)
        ub = upper_bound_value(t)
        gap_formula = upper_bound_gap_formula(t.inc)
        rows.add("H", "closed-form", h)
        rows.add("upper_bound", "closed-form", ub, _gap(ub, st))
        rows.add("gap", "multiplier-minus-closed-form", st - h, _gap(st - h, gap_formula))
    if setup.down is not None:
        hd = h_downward(phi, psi, setup.down, prm["tol"]).value
        rows.add("H", "downward", hd, _gap(hd, st))
    res = h_partition_search(phi, psi, t, budget=prm["budget"], seed=prm["seed"],
                             e_minus1=setup.down.e_minus1 if setup.down is not None else None)
    margin = st - res.best
    rows.add("H_lower_bound", "search", res.best, margin)
    violated |= margin < -prm["slack"]
    lr = chan.lam(phi, psi, t, prm["tol"])
    rows.add("lambda", "multiplier" + ("+support-failure" if lr.paper_convention_infinite else ""), lr.value)
    return rows, int(violated)


def _gap(a: float, b: float) -> float:
    if math.isinf(a) and math.isinf(b) and a == b:
        return 0.0
    return abs(a - b)


def cmd_renyi_curve(cfg) -> tuple[Rows, int]:
    setup = _require_setup(cfg)
    t, prm = setup.tower, cfg["params"]
    rows = Rows("renyi-curve", setup.digest, prm["seed"])
    grid = prm["pgrid"]
    if any(not (p >= 0.5) for p in grid):
        raise ConfigError("params.pgrid: every p must lie in [1/2, inf]")
    grid = sorted(grid)
    phi, psi = _channels(cfg, t)
    curve = []
    for p in grid:
        v = s_p(phi, psi, t, p, prm["tol"])
        rows.add("S_p", "raw", v.raw.value, p=p)
        rows.add("S_p", "delta-prefixed", v.prefixed, p=p)
        rows.add("S_p", "normalized", v.normalized.value, p=p)
        curve.append(v.normalized.value)
    mono = is_monotone(curve, prm["slack"])
    rows.add("monotone_in_p", "normalized", int(mono))
    lr = chan.lam(phi, psi, t, prm["tol"])
    if lr.paper_convention_infinite:
        rows.add("neg_log_lambda", "multiplier+support-failure", math.nan)
    else:
        rows.add("neg_log_lambda", "multiplier", -math.log(lr.value), _gap(-math.log(lr.value), curve[-1]) if math.isinf(grid[-1]) else None)
    if setup.down is not None:
        rows.add("H", "downward", h_downward(phi, psi, setup.down, prm["tol"]).value)
    elif _is_id_pair(cfg):
        rows.add("H", "closed-form", h_closed_form_subalgebra(t.inc))
    return rows, 0 if mono else 1


def cmd_check(cfg) -> tuple[Rows, int, dict]:
    prm = cfg["params"]
    report = theorem_harness(prm["suites"], prm["trials"], prm["seed"], prm["slack"])
    rows = Rows("check", "", prm["seed"])
    for r in report.rows:
        rows.add(r.suite, "harness" + ("+skipped" if r.skipped else ""), r.lhs, r.margin,
                 seed=r.seed, digest=r.instance_digest)
    summary = report.summary()
    for suite, s in summary.items():
        log.info("%s: %d trials, %d violations, %d skipped, min margin %.3e",
                 suite, s["trials"], s["violations"], s["skipped"], s["min_margin"])
    for v in report.violations:
        log.error("violation in %s (trial %d): reproduce with seed %d, margin %.3e",
                  v.suite, v.trial, v.seed, v.margin)
    extra = {"summary": summary, "violations": [r.__dict__ for r in report.violations]}
    return rows, int(bool(report.violations)), extra


COMMANDS = {"index": cmd_index, "entropies": cmd_entropies, "renyi-curve": cmd_renyi_curve, "check": cmd_check}


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def render_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in COLUMNS])
    return buf.getvalue()


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return _fmt(v)
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_json_safe(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return _json_safe(v.item())
    return v


def render_json(rows: list[dict], cfg: dict, extra: dict | None = None) -> str:
    payload = {"schema_version": SCHEMA_VERSION, "config": cfg, "rows": rows}
    if extra:
        payload.update(extra)
    return json.dumps(_json_safe(payload), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _parse_pgrid(text: str) -> list[float]:
    return [_number(part, "--pgrid") for part in text.replace("|", ",").split(",") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vnentropy", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON job file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--trials", type=int)
    ap.add_argument("--budget", type=int)
    ap.add_argument("--tol", type=float)
    ap.add_argument("--pgrid", help="comma separated orders, 'inf' allowed")
    ap.add_argument("--out", help="write data here instead of stdout")
    ap.add_argument("--format", choices=("csv", "json"))
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        text = None
        if args.config:
            try:
                with open(args.config, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as err:
                raise ConfigError(f"--config: {err}") from None
        cfg = load_config(text)
        prm = cfg["params"]
        for key in ("seed", "trials", "budget", "tol"):
            if getattr(args, key) is not None:
                prm[key] = getattr(args, key)
        if args.pgrid:
            prm["pgrid"] = _parse_pgrid(args.pgrid)
        if args.format:
            cfg["format"] = args.format
        log.info("config: %s", json.dumps(_json_safe(cfg), sort_keys=True))
        result = COMMANDS[args.command](cfg)
    except ConfigError as err:
        log.error("config error: %s", err)
        return 2
    except (ValueError, np.linalg.LinAlgError, FloatingPointError) as err:
        log.error("numerical failure: %s", err)
        return 3
    rows, status = result[0], result[1]
    extra = result[2] if len(result) > 2 else None
    text = render_csv(rows.rows) if cfg["format"] == "csv" else render_json(rows.rows, cfg, extra)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
