"""Exact structural invariants, checked on randomized instances.

These are the properties the whole experimental method leans on: the
stabilization outcome is independent of the toppling order (abelian),
pre-waking sites that would be visited anyway changes nothing
(preemptive), odometers grow monotonically with extra wakes and larger
regions, and weighted Cesàro averages converge to half the density.
Each suite runs a fixed number of seeded random instances and reports
exact failures; the CLI's check-lemmas command and the acceptance tests
both call these functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Configuration, wake
from .experiments import cesaro_check
from .stabilizer import Fifo, Leftmost, RandomQueue, Rightmost, stabilize
from .stacks import Params, RandomSource, derive_seed

__all__ = [
    "SuiteResult",
    "check_abelian",
    "check_preemptive",
    "check_monotone_wake",
    "check_window_growth",
    "check_cesaro",
    "run_all",
]

_SUITE_CAP = 10**7


@dataclass
class SuiteResult:
    """Outcome of one invariant suite: exact check, zero tolerance."""

    name: str
    instances: int
    failures: int
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.failures == 0


def _random_instance(rng: np.random.Generator):
    """Small seeded instance: region, halo window, mixed sleepers, lam in
    {0.5, 1, 2}, at most 3 particles per site."""
    lam = float(rng.choice([0.5, 1.0, 2.0]))
    width = int(rng.integers(2, 51))
    vlo = int(rng.integers(-25, 26 - width))
    vhi = vlo + width - 1
    n = width + 2
    if width <= 12:
        probs = [0.3, 0.3, 0.2, 0.2]  # narrow instances may run dense
    else:
        probs = [0.5, 0.3, 0.15, 0.05]
    counts = rng.choice(np.arange(4), size=n, p=probs)
    q = float(rng.choice([0.0, 0.5, 1.0]))
    asleep = (counts == 1) & (rng.random(n) < q)
    config = Configuration(vlo - 1, counts, asleep)
    source = RandomSource(int(rng.integers(0, 2**63)), Params(lam))
    return config, source, (vlo, vhi)


def _note(notes: list[str], i: int, msg: str) -> None:
    if len(notes) < 5:
        notes.append(f"instance {i}: {msg}")


def check_abelian(seed: int, instances: int = 500) -> SuiteResult:
    """Stabilization outcome must not depend on the toppling order.

    Each instance is stabilized under leftmost, rightmost, FIFO
    (compiled), and seeded-random policies; the odometers, final
    configurations, and visited sets must agree exactly.  A capped run
    counts as a failure — the suite cap is far above what these small
    instances need, so hitting it means non-termination.
    """
    failures = 0
    notes: list[str] = []
    for i in range(instances):
        rng = np.random.default_rng(derive_seed(seed, 10, i))
        config, source, region = _random_instance(rng)
        policies = [
            Leftmost(),
            Rightmost(),
            Fifo(),
            RandomQueue(derive_seed(seed, 11, i)),
        ]
        reports = [
            stabilize(config, source, region, policy=p, cap=_SUITE_CAP) for p in policies
        ]
        if any(r.capped for r in reports):
            failures += 1
            _note(notes, i, "capped (termination)")
            continue
        base = reports[0]
        for p, r in zip(policies[1:], reports[1:]):
            if (
                r.odometer != base.odometer
                or r.final != base.final
                or r.visited != base.visited
            ):
                failures += 1
                _note(notes, i, f"{type(p).__name__} disagrees with Leftmost")
                break
    return SuiteResult("abelian", instances, failures, notes)


def check_preemptive(seed: int, instances: int = 500) -> SuiteResult:
    """Waking any set of sites the stabilization visits anyway must not
    change the odometer or the final configuration."""
    failures = 0
    notes: list[str] = []
    for i in range(instances):
        rng = np.random.default_rng(derive_seed(seed, 20, i))
        config, source, region = _random_instance(rng)
        base = stabilize(config, source, region, cap=_SUITE_CAP)
        if base.capped:
            failures += 1
            _note(notes, i, "capped (termination)")
            continue
        visited = sorted(base.visited)
        if not visited:
            continue
        take = rng.random(len(visited)) < 0.7
        subset = [s for s, keep in zip(visited, take) if keep]
        woken = wake(config, subset)
        rerun = stabilize(woken, source, region, cap=_SUITE_CAP)
        if rerun.odometer != base.odometer or rerun.final != base.final:
            failures += 1
            _note(notes, i, f"pre-waking {len(subset)} visited sites changed the outcome")
    return SuiteResult("preemptive", instances, failures, notes)


def check_monotone_wake(seed: int, instances: int = 500) -> SuiteResult:
    """Waking more sites can only increase the odometer, pointwise."""
    failures = 0
    notes: list[str] = []
    for i in range(instances):
        rng = np.random.default_rng(derive_seed(seed, 30, i))
        config, source, region = _random_instance(rng)
        sites = list(range(region[0], region[1] + 1))
        big = rng.random(len(sites)) < 0.5
        small = big & (rng.random(len(sites)) < 0.6)
        u_small = [s for s, keep in zip(sites, small) if keep]
        u_big = [s for s, keep in zip(sites, big) if keep]
        r1 = stabilize(wake(config, u_small), source, region, cap=_SUITE_CAP)
        r2 = stabilize(wake(config, u_big), source, region, cap=_SUITE_CAP)
        if r1.capped or r2.capped:
            failures += 1
            _note(notes, i, "capped (termination)")
            continue
        if not r1.odometer.pointwise_leq(r2.odometer):
            failures += 1
            _note(notes, i, "odometer decreased under a larger wake set")
    return SuiteResult("monotone-wake", instances, failures, notes)


def check_window_growth(seed: int, instances: int = 200) -> SuiteResult:
    """Stabilizing a larger region can only increase the odometer."""
    failures = 0
    notes: list[str] = []
    for i in range(instances):
        rng = np.random.default_rng(derive_seed(seed, 40, i))
        config, source, (vlo, vhi) = _random_instance(rng)
        while vhi - vlo + 1 < 7:  # need room for strict nesting
            config, source, (vlo, vhi) = _random_instance(rng)
        # strictly nested V1 ⊂ V2 ⊂ V3 inside the sampled window
        v3 = (vlo, vhi)
        v2 = (vlo + int(rng.integers(1, 3)), vhi - int(rng.integers(1, 3)))
        v1 = (v2[0] + 1, v2[1] - 1)
        rs = [stabilize(config, source, v, cap=_SUITE_CAP) for v in (v1, v2, v3)]
        if any(r.capped for r in rs):
            failures += 1
            _note(notes, i, "capped (termination)")
            continue
        if not (
            rs[0].odometer.pointwise_leq(rs[1].odometer)
            and rs[1].odometer.pointwise_leq(rs[2].odometer)
        ):
            failures += 1
            _note(notes, i, f"odometer shrank under region growth {v1} ⊂ {v2} ⊂ {v3}")
    return SuiteResult("window-growth", instances, failures, notes)


def check_cesaro(
    n: int = 100_000,
    tol_constant: float = 2e-2,
    tol_alternating: float = 2e-2,
    tol_slow: float = 1e-1,
) -> SuiteResult:
    """Weighted Cesàro averages of three closed-form families.

    If the running means of a_j converge to rho, the weighted averages
    (1/n²) Σ j·a_j must converge to rho/2.  The families cover constant,
    oscillating, and slowly-converging behaviour; each is checked at
    length ``n`` against its exact target within its tolerance.
    """
    j = np.arange(1, n + 1, dtype=np.float64)
    families = [
        ("constant", np.full(n, 2.0), 2.0, tol_constant),
        ("alternating", np.where(j % 2 == 0, 1.0, -1.0), 0.0, tol_alternating),
        ("slowly-varying", 1.0 + 1.0 / np.sqrt(j), 1.0, tol_slow),
    ]
    failures = 0
    notes: list[str] = []
    for name, seq, rho, tol in families:
        row = cesaro_check(seq, [n])[0]
        err_mean = abs(row.mean - rho)
        err_weighted = abs(row.weighted - rho / 2.0)
        if err_mean > tol or err_weighted > tol:
            failures += 1
            notes.append(
                f"{name}: mean err {err_mean:.2e}, weighted err {err_weighted:.2e} > tol {tol:g}"
            )
    return SuiteResult("cesaro", len(families), failures, notes)


def run_all(
    seed: int,
    instances_abelian: int = 500,
    instances_preemptive: int = 500,
    instances_monotone: int = 500,
    instances_growth: int = 200,
) -> list[SuiteResult]:
    """Run every exact suite with its standard instance counts."""
    return [
        check_abelian(seed, instances_abelian),
        check_preemptive(seed, instances_preemptive),
        check_monotone_wake(seed, instances_monotone),
        check_window_growth(seed, instances_growth),
        check_cesaro(),
    ]
