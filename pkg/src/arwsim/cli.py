"""Command-line front end.

Subcommands: stabilize, ek-scan, explode, nucleate, rhoc, check-lemmas,
selftest.  Every data-producing run writes a CSV table (fixed columns
per subcommand) plus a JSON summary holding the effective parameters,
library version, instruction-mixer identifier, and a git-style blob
hash of the CSV.  Runs are reproducible: equal (command, parameters,
seed) give byte-identical CSV regardless of --workers.

Options may come from a flat ``key = value`` config file (--config);
explicit flags override file values.  ARW_WORKERS provides the default
worker count.  Exit codes: 0 success, 1 self-check failure, 2 config
error, 3 capped-run dominance (more than 10% of trials capped).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .core import ArwError, Configuration
from .experiments import (
    ek_curve,
    estimate_rho_c,
    explode_curve,
    fit_decay,
    nucleate_ensemble,
)
from .initdist import IidSpec, PoissonMarginal, SleepMix, parse_env_spec, spec_params
from .lemmas import run_all
from .stabilizer import DEFAULT_CAP, Fifo, Leftmost, RandomQueue, Rightmost, stabilize
from .stacks import MIXER_ID, Params, RandomSource, ScriptedSource, derive_seed

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_CAPPED = 3
CAPPED_LIMIT = 0.10


# -- option schema ---------------------------------------------------------------


@dataclass(frozen=True)
class Opt:
    name: str  # long flag, without the leading --
    typ: Callable
    default: object = None
    help: str = ""
    required: bool = False

    @property
    def key(self) -> str:
        # attribute / summary key; "lambda" is a python keyword
        return "lam" if self.name == "lambda" else self.name.replace("-", "_")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise ValueError("must be >= 1")
    return v


_COMMON = [
    Opt("seed", int, 1, "master seed; every trial derives its own streams"),
    Opt("cap", int, DEFAULT_CAP, "per-run toppling budget"),
    Opt("workers", _positive_int, None, "worker threads (default: ARW_WORKERS or 1)"),
    Opt("out", str, None, "output CSV path", required=True),
]

_LAW = [
    Opt("rho", float, None, "mean density of the i.i.d. truncated-Poisson law"),
    Opt("q", float, None, "sleep mix: solitary particles start asleep with this probability"),
    Opt("spec", str, None, "environment-law file (overrides --rho; see README for keys)"),
]

_SCHEMAS: dict[str, list[Opt]] = {
    "stabilize": [
        Opt("lambda", float, None, "sleep rate", required=True),
        Opt("config-file", str, None, "configuration text file (site<TAB>state)", required=True),
        Opt("v", str, None, "region to stabilize, LO:HI (halo must stay inside the window)", required=True),
        Opt("policy", str, "fifo", "toppling order: fifo | leftmost | rightmost | random"),
        Opt("policy-seed", int, 0, "seed for the random policy"),
        *_COMMON,
    ],
    "ek-scan": [
        Opt("lambda", float, None, "sleep rate", required=True),
        Opt("kmin", _positive_int, None, "smallest k", required=True),
        Opt("kmax", _positive_int, None, "largest k", required=True),
        Opt("step", _positive_int, 25, "grid step"),
        Opt("trials", _positive_int, 500, "trials per grid point"),
        *_LAW,
        *_COMMON,
    ],
    "explode": [
        Opt("lambda", float, None, "sleep rate", required=True),
        Opt("R", str, None, "comma-separated reach radii, e.g. 50,100,200", required=True),
        Opt("pad", int, 0, "extra window sites beyond ±(R+1)"),
        Opt("trials", _positive_int, 500, "trials per radius"),
        *_LAW,
        *_COMMON,
    ],
    "nucleate": [
        Opt("lambda", float, None, "sleep rate", required=True),
        Opt("m", _positive_int, 20, "coverage radius the excursion must reach"),
        Opt("K", _positive_int, 300, "scan horizon (and excursion limit)"),
        Opt("trials", _positive_int, 500, "number of trials"),
        Opt("shift-allowance", _positive_int, 16, "search radius for a nonvacant origin"),
        *_LAW,
        *_COMMON,
    ],
    "rhoc": [
        Opt("lambda", float, None, "sleep rate", required=True),
        Opt("k", _positive_int, 100, "containment scale used by the bisection"),
        Opt("rho-lo", float, 0.05, "initial bracket, lower density"),
        Opt("rho-hi", float, 0.999, "initial bracket, upper density"),
        Opt("trials", _positive_int, 300, "trials per bisection step"),
        Opt("tol", float, 0.02, "bracket width to stop at"),
        Opt("q", float, None, "sleep mix (default 0)"),
        *_COMMON,
    ],
    "check-lemmas": [
        Opt("seed", int, 1, "master seed for the random instances"),
        Opt("instances", _positive_int, 500, "instances per suite (window-growth scales to 40%)"),
        Opt("out", str, None, "optional CSV path"),
    ],
    "selftest": [
        Opt("out", str, None, "optional CSV path"),
    ],
}

_HELP = {
    "stabilize": "stabilize a configuration from a text fixture and dump the result",
    "ek-scan": "containment probability over a grid of k",
    "explode": "probability that waking the origin spreads activity to both ±R",
    "nucleate": "growing-interval nucleation trials with midstream scans",
    "rhoc": "bisection estimate of the density where containment crosses 1/2",
    "check-lemmas": "run the exact invariant suites (abelian, preemptive, monotonicity, cesàro)",
    "selftest": "mixer and engine known-answer checks",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arwsim",
        description="Activated-random-walk simulator and experiment harness.",
    )
    parser.add_argument("--version", action="version", version=f"arwsim {__version__}")
    subs = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name, opts in _SCHEMAS.items():
        sp = subs.add_parser(name, help=_HELP[name])
        sp.add_argument("--config", type=str, default=None, help="flat key=value option file")
        for o in opts:
            sp.add_argument(f"--{o.name}", dest=o.key, type=o.typ, default=None, help=o.help)
    return parser


def _load_kv(path: str) -> dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ArwError(f"config: cannot read {path!r}: {e}") from None
    out: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ArwError(f"config line {ln}: expected KEY = VALUE, got {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def _resolve(command: str, ns: argparse.Namespace) -> dict:
    """Merge flag > config-file > schema default into an effective dict."""
    file_vals = _load_kv(ns.config) if ns.config else {}
    known = {o.name for o in _SCHEMAS[command]}
    for key in file_vals:
        if key not in known:
            raise ArwError(f"config key {key!r} is not an option of {command}")
    eff = {}
    for o in _SCHEMAS[command]:
        v = getattr(ns, o.key)
        if v is None and o.name in file_vals:
            try:
                v = o.typ(file_vals[o.name])
            except ValueError as e:
                raise ArwError(f"config key {o.name!r}: bad value {file_vals[o.name]!r} ({e})") from None
        if v is None:
            v = o.default
        if v is None and o.required:
            raise ArwError(f"{command}: missing required option --{o.name}")
        eff[o.key] = v
    if "workers" in eff and eff["workers"] is None:
        env = os.environ.get("ARW_WORKERS", "").strip()
        if env:
            try:
                eff["workers"] = _positive_int(env)
            except ValueError:
                raise ArwError(f"ARW_WORKERS: bad value {env!r}") from None
        else:
            eff["workers"] = 1
    return eff


def argv_for(command: str, params: dict) -> list[str]:
    """Rebuild an argv that reproduces a run from its summary parameters."""
    argv = [command]
    env_keys = {"law"}
    for o in _SCHEMAS[command]:
        v = params.get(o.key)
        if v is None or o.key in env_keys:
            continue
        argv += [f"--{o.name}", str(v)]
    return argv


# -- output helpers ----------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


def _write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _git_blob_sha1(path: str) -> str:
    with open(path, "rb") as f:
        data = f.read()
    h = hashlib.sha1()
    h.update(b"blob %d\x00" % len(data))
    h.update(data)
    return h.hexdigest()


def _write_summary(command: str, params: dict, csv_path: str | None, extras: dict, exit_status: int) -> None:
    payload = {
        "command": command,
        "version": __version__,
        "mixer": MIXER_ID,
        "params": {k: v for k, v in params.items()},
        "exit_status": exit_status,
    }
    if csv_path:
        payload["outputs"] = {
            "csv": csv_path,
            "git_blob_sha1": _git_blob_sha1(csv_path),
        }
    payload.update(extras)
    with open(_summary_path(csv_path or params.get("out") or f"{command}.csv"), "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _summary_path(csv_path: str) -> str:
    return csv_path + ".summary.json"


def _resolve_law(eff: dict, default_q: float) -> tuple[object, SleepMix]:
    """Environment law from --spec file or --rho/--q flags."""
    if eff.get("spec"):
        try:
            with open(eff["spec"], "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise ArwError(f"spec: cannot read {eff['spec']!r}: {e}") from None
        spec, mix = parse_env_spec(text)
        if eff.get("rho") is not None:
            raise ArwError("give either --spec or --rho, not both")
        if eff.get("q") is not None:
            mix = SleepMix(eff["q"])
        return spec, mix
    if eff.get("rho") is None:
        raise ArwError("missing required option --rho (or an environment --spec file)")
    q = eff["q"] if eff.get("q") is not None else default_q
    return IidSpec(PoissonMarginal(eff["rho"])), SleepMix(q)


# -- subcommands --------------------------------------------------------------------


def _cmd_ek_scan(eff: dict) -> int:
    if eff["kmin"] > eff["kmax"]:
        raise ArwError(f"need kmin <= kmax, got {eff['kmin']} > {eff['kmax']}")
    spec, mix = _resolve_law(eff, default_q=0.0)
    k_grid = list(range(eff["kmin"], eff["kmax"] + 1, eff["step"]))
    rows = ek_curve(
        eff["lam"], spec, mix, k_grid, eff["trials"], eff["seed"],
        cap=eff["cap"], workers=eff["workers"],
    )
    _write_csv(
        eff["out"],
        ["k", "trials", "successes", "p_hat", "ci_lo", "ci_hi", "capped"],
        [(r.k, r.trials, r.successes, r.p_hat, r.ci_lo, r.ci_hi, r.capped) for r in rows],
    )
    total = sum(r.trials for r in rows)
    capped = sum(r.capped for r in rows)
    status = EXIT_CAPPED if capped > CAPPED_LIMIT * total else EXIT_OK
    extras = {"law": spec_params(spec, mix), "counts": {"trials": total, "capped": capped}}
    try:
        fit = fit_decay(rows)
        extras["fit"] = {
            "c_hat": fit.c_hat, "C_hat": fit.C_hat, "r_squared": fit.r_squared,
            "c_lo": fit.c_lo, "c_hi": fit.c_hi, "n_points": fit.n_points,
        }
    except ArwError:
        pass  # fewer than 3 positive estimates; curve stands on its own
    _write_summary("ek-scan", eff, eff["out"], extras, status)
    for r in rows:
        print(f"k={r.k}: p_hat={_fmt(r.p_hat)} [{_fmt(r.ci_lo)}, {_fmt(r.ci_hi)}] capped={r.capped}")
    return status


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ArwError(f"{flag}: want comma-separated integers, got {text!r}") from None
    if not values:
        raise ArwError(f"{flag}: empty list")
    return values


def _cmd_explode(eff: dict) -> int:
    spec, mix = _resolve_law(eff, default_q=1.0)
    r_values = _parse_int_list(eff["R"], "--R")
    if eff["pad"] < 0:
        raise ArwError(f"--pad must be >= 0, got {eff['pad']}")
    rows = explode_curve(
        eff["lam"], spec, mix, r_values, eff["trials"], eff["seed"],
        cap=eff["cap"], workers=eff["workers"], pad=eff["pad"],
    )
    _write_csv(
        eff["out"],
        ["R", "trials", "reached_both", "stabilized", "capped", "p_hat", "ci_lo", "ci_hi"],
        [
            (r.R, r.trials, r.reached_both, r.stabilized, r.capped, r.p_hat, r.ci_lo, r.ci_hi)
            for r in rows
        ],
    )
    total = sum(r.trials for r in rows)
    capped = sum(r.capped for r in rows)
    status = EXIT_CAPPED if capped > CAPPED_LIMIT * total else EXIT_OK
    _write_summary(
        "explode", eff, eff["out"],
        {"law": spec_params(spec, mix), "counts": {"trials": total, "capped": capped}},
        status,
    )
    for r in rows:
        print(f"R={r.R}: p_hat={_fmt(r.p_hat)} [{_fmt(r.ci_lo)}, {_fmt(r.ci_hi)}] capped={r.capped}")
    return status


def _cmd_nucleate(eff: dict) -> int:
    if eff["m"] > eff["K"]:
        raise ArwError(f"need m <= K, got m={eff['m']}, K={eff['K']}")
    spec, mix = _resolve_law(eff, default_q=1.0)
    summary, _ = nucleate_ensemble(
        eff["lam"], spec, mix, eff["m"], eff["K"], eff["trials"], eff["seed"],
        cap=eff["cap"], workers=eff["workers"], shift_allowance=eff["shift_allowance"],
    )
    _write_csv(
        eff["out"],
        ["m", "K", "trials", "covered", "success", "p_hat", "ci_lo", "ci_hi"],
        [
            (
                summary.m, summary.K, summary.trials, summary.covered, summary.success,
                summary.p_hat, summary.ci_lo, summary.ci_hi,
            )
        ],
    )
    status = EXIT_CAPPED if summary.capped > CAPPED_LIMIT * summary.trials else EXIT_OK
    _write_summary(
        "nucleate", eff, eff["out"],
        {
            "law": spec_params(spec, mix),
            "counts": {
                "trials": summary.trials, "covered": summary.covered,
                "success": summary.success, "capped": summary.capped,
                "vacant": summary.vacant,
            },
        },
        status,
    )
    print(
        f"m={summary.m} K={summary.K}: covered={summary.covered} success={summary.success} "
        f"p_hat={_fmt(summary.p_hat)} capped={summary.capped} vacant={summary.vacant}"
    )
    return status


def _cmd_rhoc(eff: dict) -> int:
    mix = SleepMix(eff["q"] if eff.get("q") is not None else 0.0)
    est = estimate_rho_c(
        eff["lam"], eff["k"], mix, eff["rho_lo"], eff["rho_hi"],
        eff["trials"], eff["tol"], eff["seed"], cap=eff["cap"], workers=eff["workers"],
    )
    _write_csv(
        eff["out"],
        ["iter", "rho_lo", "rho_hi", "rho_mid", "p_hat"],
        [(s.iteration, s.rho_lo, s.rho_hi, s.rho_mid, s.p_hat) for s in est.steps],
    )
    capped = sum(s.effective < eff["trials"] for s in est.steps)  # steps touched by caps
    total_capped = sum(eff["trials"] - s.effective for s in est.steps)
    total = eff["trials"] * len(est.steps)
    status = EXIT_CAPPED if total and total_capped > CAPPED_LIMIT * total else EXIT_OK
    _write_summary(
        "rhoc", eff, eff["out"],
        {
            "estimate": {
                "rho_hat": est.rho_hat,
                "bracket": list(est.bracket),
                "widened": est.widened,
            },
            "counts": {"trials": total, "capped": total_capped, "steps_with_caps": capped},
        },
        status,
    )
    print(
        f"rho_hat={_fmt(est.rho_hat)} bracket=[{_fmt(est.bracket[0])}, {_fmt(est.bracket[1])}]"
        f" widened={est.widened}"
    )
    return status


_POLICIES = {
    "fifo": lambda eff: Fifo(),
    "leftmost": lambda eff: Leftmost(),
    "rightmost": lambda eff: Rightmost(),
    "random": lambda eff: RandomQueue(eff["policy_seed"]),
}


def _parse_interval(text: str, flag: str) -> tuple[int, int]:
    try:
        lo_s, hi_s = text.split(":")
        return int(lo_s), int(hi_s)
    except ValueError:
        raise ArwError(f"{flag}: want LO:HI, got {text!r}") from None


def _cmd_stabilize(eff: dict) -> int:
    try:
        with open(eff["config_file"], "r", encoding="utf-8") as f:
            config = Configuration.from_text(f.read())
    except OSError as e:
        raise ArwError(f"config-file: cannot read {eff['config_file']!r}: {e}") from None
    region = _parse_interval(eff["v"], "--v")
    if eff["policy"] not in _POLICIES:
        raise ArwError(f"policy: unknown policy {eff['policy']!r} (want one of {sorted(_POLICIES)})")
    policy = _POLICIES[eff["policy"]](eff)
    source = RandomSource(eff["seed"], Params(eff["lam"]))
    rep = stabilize(config, source, region, policy=policy, cap=eff["cap"])
    rows = []
    for site in config.sites():
        before = config[site]
        after = rep.final[site]
        tok_b = "s" if before.asleep else str(before.count)
        tok_a = "s" if after.asleep else str(after.count)
        rows.append((site, tok_b, tok_a, rep.odometer[site]))
    _write_csv(eff["out"], ["site", "before", "after", "odometer"], rows)
    status = EXIT_CAPPED if rep.capped else EXIT_OK
    _write_summary(
        "stabilize", eff, eff["out"],
        {
            "counts": {
                "topplings": rep.topplings,
                "visited": len(rep.visited),
                "capped": int(rep.capped),
            },
            "arrivals": {str(k): v for k, v in rep.arrivals.items()},
        },
        status,
    )
    print(f"topplings={rep.topplings} visited={len(rep.visited)} capped={rep.capped}")
    return status


def _cmd_check_lemmas(eff: dict) -> int:
    n = eff["instances"]
    growth = max(1, (n * 2) // 5)
    results = run_all(
        eff["seed"],
        instances_abelian=n,
        instances_preemptive=n,
        instances_monotone=n,
        instances_growth=growth,
    )
    rows = [(r.name, r.instances, r.failures, r.ok) for r in results]
    if eff.get("out"):
        _write_csv(eff["out"], ["suite", "instances", "failures", "passed"], rows)
        _write_summary(
            "check-lemmas", eff, eff["out"],
            {"suites": {r.name: {"instances": r.instances, "failures": r.failures} for r in results}},
            EXIT_OK if all(r.ok for r in results) else EXIT_CHECK_FAILED,
        )
    for r in results:
        verdict = "PASS" if r.ok else "FAIL"
        print(f"{r.name}: {verdict} ({r.instances} instances, {r.failures} failures)")
        for note in r.notes:
            print(f"  {note}")
    return EXIT_OK if all(r.ok for r in results) else EXIT_CHECK_FAILED


def _selftest_checks() -> list[tuple[str, bool, str]]:
    from . import _kernels
    from .core import active
    from .stacks import Instruction, raw_draw

    checks: list[tuple[str, bool, str]] = []

    # mixer known answers, frozen once: any drift silently invalidates
    # every archived seed, so fail loudly instead
    expected = {
        (0, 0, 0): 9980495420927582993,
        (1, 5, 7): 9090347190001225330,
        (12345, -3, 2): 16683983179127239207,
        (2**63, 17, 1000): 773206344278449744,
    }
    ok = all(raw_draw(seed, site, idx) == want for (seed, site, idx), want in expected.items())
    checks.append(("mixer-known-answers", ok, "raw_draw matches frozen vectors"))

    sites = np.array([0, 5, -3, 17, -1000], dtype=np.int64)
    indices = np.array([0, 7, 2, 1000, 123], dtype=np.int64)
    got = _kernels.raw_grid(np.uint64(99), sites, indices)
    want = [raw_draw(99, int(s), int(i)) for s, i in zip(sites, indices)]
    checks.append(
        ("mixer-python-vs-compiled", all(int(g) == w for g, w in zip(got, want)),
         "compiled mixer equals the python reference")
    )

    # one hand-traced scripted stabilization
    cfg = Configuration.from_dict({1: active(1)}, -1, 3)
    src = ScriptedSource.from_stacks({1: [Instruction.RIGHT], 2: [Instruction.SLEEP]})
    rep = stabilize(cfg, src, (1, 2), cap=100)
    ok = (
        rep.odometer.as_dict() == {1: 1, 2: 1}
        and rep.final[2].asleep
        and not rep.capped
        and rep.arrivals == {0: False, 3: False}
    )
    checks.append(("scripted-stabilize", ok, "hand-traced two-site example"))

    # python and compiled engines agree on random instances
    ok = True
    for i in range(20):
        rng = np.random.default_rng(derive_seed(4242, i))
        counts = rng.integers(0, 3, size=12)
        asleep = (counts == 1) & (rng.random(12) < 0.5)
        config = Configuration(-5, counts, asleep)
        source = RandomSource(int(rng.integers(0, 2**62)), Params(1.0))
        a = stabilize(config, source, (-4, 5), engine="python")
        b = stabilize(config, source, (-4, 5), engine="numba")
        if a.odometer != b.odometer or a.final != b.final or a.topplings != b.topplings:
            ok = False
            break
    checks.append(("engine-equivalence", ok, "python and compiled engines agree"))

    rows1 = ek_curve(1.0, IidSpec(PoissonMarginal(0.5)), SleepMix(0.0), [5, 10], 40, 7, workers=1)
    rows2 = ek_curve(1.0, IidSpec(PoissonMarginal(0.5)), SleepMix(0.0), [5, 10], 40, 7, workers=4)
    checks.append(("worker-determinism", rows1 == rows2, "1 worker equals 4 workers"))
    return checks


def _cmd_selftest(eff: dict) -> int:
    checks = _selftest_checks()
    for name, ok, detail in checks:
        print(f"{name}: {'PASS' if ok else 'FAIL'} ({detail})")
    if eff.get("out"):
        _write_csv(eff["out"], ["check", "passed"], [(n, ok) for n, ok, _ in checks])
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_CHECK_FAILED


_RUNNERS = {
    "stabilize": _cmd_stabilize,
    "ek-scan": _cmd_ek_scan,
    "explode": _cmd_explode,
    "nucleate": _cmd_nucleate,
    "rhoc": _cmd_rhoc,
    "check-lemmas": _cmd_check_lemmas,
    "selftest": _cmd_selftest,
}


def run(argv: Sequence[str] | None = None) -> int:
    """Parse argv, run the subcommand, and return the exit status."""
    parser = _build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        parser.print_help()
        return EXIT_CONFIG
    try:
        eff = _resolve(ns.command, ns)
        return _RUNNERS[ns.command](eff)
    except ArwError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
