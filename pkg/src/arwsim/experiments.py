"""Monte-Carlo experiments over the toppling engines.

Single-trial primitives (containment scans, growing-interval nucleation
trials, reach trials) plus ensemble drivers that aggregate them into
curves with exact binomial confidence intervals.  Ensembles derive one
child seed per trial from the master seed, so results are reproducible
and independent of the worker count; capped runs are excluded from
estimates and reported alongside them.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats as _sps

from .core import ArwError, Configuration, IllegalToppleError, WindowError, wake
from .initdist import EnvSpec, IidSpec, PoissonMarginal, SleepMix, sample_configuration
from .stabilizer import (
    DEFAULT_CAP,
    FIFO,
    Policy,
    RunStatus,
    event_ek,
    excursion,
    stabilize_watching,
)
from .stacks import Params, RandomSource, Source, derive_seed

__all__ = [
    "clopper_pearson",
    "EkProbe",
    "ScanResult",
    "x_scan",
    "y_scan",
    "NucleationReport",
    "nucleation_trial",
    "ReachedBoth",
    "Stabilized",
    "Capped",
    "ReachOutcome",
    "reach_trial",
    "EkCurveRow",
    "ek_curve",
    "DecayFit",
    "fit_decay",
    "BisectionStep",
    "RhoCEstimate",
    "estimate_rho_c",
    "CesaroRow",
    "cesaro_check",
    "ExplodeRow",
    "explode_curve",
    "NucleateSummary",
    "nucleate_ensemble",
]


def clopper_pearson(successes: int, trials: int, alpha: float = 0.05) -> tuple[float, float]:
    """Exact (conservative) binomial confidence interval.

    Returns the trivial interval (0, 1) when ``trials`` is zero.
    """
    if trials < 0 or not (0 <= successes <= max(trials, 0)):
        raise ArwError(f"bad counts: {successes} successes of {trials} trials")
    if not (0.0 < alpha < 1.0):
        raise ArwError(f"alpha must be in (0, 1), got {alpha}")
    if trials == 0:
        return (0.0, 1.0)
    lo = 0.0 if successes == 0 else float(_sps.beta.ppf(alpha / 2, successes, trials - successes + 1))
    hi = 1.0 if successes == trials else float(_sps.beta.ppf(1 - alpha / 2, successes + 1, trials - successes))
    return (lo, hi)


def _pmap(fn: Callable, items: Iterable, workers: int) -> list:
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    _warm_kernels()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


_warmed = False


def _warm_kernels() -> None:
    # First call of a cached numba kernel triggers load/compile; doing it
    # once up front keeps the thread pool out of the compiler.
    global _warmed
    if _warmed:
        return
    from .core import active
    from .stabilizer import stabilize

    cfg = Configuration.from_dict({0: active(1)}, -2, 2)
    stabilize(cfg, RandomSource(1, Params(1.0)), (-1, 1), cap=100)
    excursion(cfg, RandomSource(1, Params(1.0)), 0, (-1, 1), cap=100)
    _warmed = True


# -- containment scans ----------------------------------------------------------


@dataclass(frozen=True)
class EkProbe:
    """One containment probe along a scan."""

    k: int
    holds: bool | None
    topplings: int
    capped: bool


@dataclass
class ScanResult:
    """First-contained-prefix scan.

    ``found_k`` is the smallest k in [n, K] whose containment event
    holds, None if every probe failed (censored at K) — unless
    ``capped_at`` is set, in which case the scan is undetermined from
    that k on.
    """

    side: int
    n: int
    K: int
    found_k: int | None
    capped_at: int | None
    probes: list[EkProbe]

    @property
    def censored(self) -> bool:
        return self.found_k is None and self.capped_at is None

    @property
    def determined(self) -> bool:
        return self.capped_at is None


def x_scan(
    config: Configuration,
    source: Source,
    n: int,
    K: int,
    cap: int = DEFAULT_CAP,
    u0=None,
    side: int = 1,
    engine: str = "auto",
) -> ScanResult:
    """Scan k = n..K for the first k whose containment event holds.

    Each probe re-reads the *original* configuration; with ``u0`` the
    probes run midstream, reading every site's stack from the given
    offset (the outcome of a previous run).  Stops at the first capped
    probe with an undetermined result.
    """
    if not (1 <= n <= K):
        raise ArwError(f"need 1 <= n <= K, got n={n}, K={K}")
    if side not in (1, -1):
        raise ArwError(f"side must be +1 or -1, got {side}")
    a, b = (0, K + 1) if side == 1 else (-K - 1, 0)
    if not (config.lo <= a and b <= config.hi):
        raise WindowError(f"scan needs window covering [{a}, {b}], have [{config.lo}, {config.hi}]")
    probes: list[EkProbe] = []
    for k in range(n, K + 1):
        res = event_ek(config, source, k, cap=cap, side=side, u0=u0, engine=engine)
        probes.append(EkProbe(k, res.holds, res.report.topplings, res.report.capped))
        if res.holds is None:
            return ScanResult(side, n, K, None, k, probes)
        if res.holds:
            return ScanResult(side, n, K, k, None, probes)
    return ScanResult(side, n, K, None, None, probes)


def y_scan(
    config: Configuration,
    source: Source,
    n: int,
    K: int,
    cap: int = DEFAULT_CAP,
    u0=None,
    engine: str = "auto",
) -> ScanResult:
    """Mirror-image scan over ⟦-K, -1⟧."""
    return x_scan(config, source, n, K, cap=cap, u0=u0, side=-1, engine=engine)


# -- nucleation -----------------------------------------------------------------


@dataclass
class NucleationReport:
    """One growing-interval nucleation trial.

    The excursion topples from an active particle at the origin until
    the visited interval ``v0`` is stable; ``covered`` says it reached
    ⟦-m, m⟧.  The two scans then run on the *original* configuration
    midstream, with stack offsets ``u0`` equal to the excursion's
    odometer.
    """

    m: int
    K: int
    v0: tuple[int, int]
    u0: object  # Odometer
    covered: bool
    excursion_capped: bool
    excursion_topplings: int
    right_scan: ScanResult | None
    left_scan: ScanResult | None

    @property
    def success(self) -> bool:
        return (
            not self.excursion_capped
            and self.covered
            and self.right_scan is not None
            and self.left_scan is not None
            and self.right_scan.censored
            and self.left_scan.censored
        )

    @property
    def determined(self) -> bool:
        if self.excursion_capped:
            return False
        if not self.covered:
            return True
        return self.right_scan.determined and self.left_scan.determined


def nucleation_trial(
    config: Configuration,
    source: Source,
    m: int,
    K: int,
    cap: int = DEFAULT_CAP,
    engine: str = "auto",
) -> NucleationReport:
    """Excursion from the origin, then midstream scans on both sides."""
    if not (1 <= m <= K):
        raise ArwError(f"need 1 <= m <= K, got m={m}, K={K}")
    if not (config.lo <= -K - 1 and K + 1 <= config.hi):
        raise WindowError(
            f"nucleation needs window covering [{-K - 1}, {K + 1}], have [{config.lo}, {config.hi}]"
        )
    if not config[0].is_active:
        raise IllegalToppleError("nucleation needs an active particle at the origin")
    exc = excursion(config, source, 0, (-K, K), cap=cap, engine=engine)
    covered = exc.completed and exc.region[0] <= -m and exc.region[1] >= m
    right_scan = left_scan = None
    if covered:
        right_scan = x_scan(config, source, m, K, cap=cap, u0=exc.odometer, engine=engine)
        left_scan = x_scan(config, source, m, K, cap=cap, u0=exc.odometer, side=-1, engine=engine)
    return NucleationReport(
        m=m,
        K=K,
        v0=exc.region,
        u0=exc.odometer,
        covered=covered,
        excursion_capped=not exc.completed,
        excursion_topplings=exc.topplings,
        right_scan=right_scan,
        left_scan=left_scan,
    )


# -- reach trials ---------------------------------------------------------------


@dataclass(frozen=True)
class ReachedBoth:
    topplings: int


@dataclass(frozen=True)
class Stabilized:
    """Stable before reaching both watch sites; extremes are the
    rightmost and leftmost visited sites."""

    max_right: int
    max_left: int
    topplings: int


@dataclass(frozen=True)
class Capped:
    topplings: int


ReachOutcome = ReachedBoth | Stabilized | Capped


def reach_trial(
    config: Configuration,
    source: Source,
    R: int,
    cap: int = DEFAULT_CAP,
    policy: Policy = FIFO,
    engine: str = "auto",
) -> ReachOutcome:
    """Does activity spread to both ±R before the window stabilizes?

    Topples the whole window interior (the window edges absorb), stops
    as soon as both ±R have seen an active particle.  With the minimal
    window ⟦-R-1, R+1⟧ the watch sites sit next to the absorbing edges;
    a padded window lets activity roam further before being absorbed.
    """
    if R < 1:
        raise ArwError(f"R must be >= 1, got {R}")
    if not (config.lo <= -R - 1 and R + 1 <= config.hi):
        raise WindowError(
            f"reach trial needs window covering [{-R - 1}, {R + 1}], have [{config.lo}, {config.hi}]"
        )
    if not config.active_sites():
        raise ArwError("reach trial needs at least one active site")
    run = stabilize_watching(
        config,
        source,
        (config.lo + 1, config.hi - 1),
        watch=(-R, R),
        cap=cap,
        policy=policy,
        engine=engine,
    )
    if run.hit_lo and run.hit_hi:
        return ReachedBoth(run.topplings)
    if run.status is RunStatus.CAPPED:
        return Capped(run.topplings)
    support = run.odometer.support() or [0]
    return Stabilized(max_right=max(support), max_left=min(support), topplings=run.topplings)


# -- ensemble drivers -----------------------------------------------------------


@dataclass(frozen=True)
class EkCurveRow:
    k: int
    trials: int
    successes: int
    capped: int
    p_hat: float
    ci_lo: float
    ci_hi: float


def _rate_row(successes: int, effective: int) -> tuple[float, float, float]:
    if effective <= 0:
        return (math.nan, math.nan, math.nan)
    lo, hi = clopper_pearson(successes, effective)
    return (successes / effective, lo, hi)


def ek_curve(
    lam: float,
    spec: EnvSpec,
    mix: SleepMix,
    k_grid: Sequence[int],
    trials: int,
    seed: int,
    cap: int = DEFAULT_CAP,
    workers: int = 1,
) -> list[EkCurveRow]:
    """Empirical containment probability for each k in the grid.

    Every (k, trial) pair gets its own configuration and stack seeds
    derived from the master seed, so the curve is reproducible and
    independent of the worker count.  Capped trials are excluded from
    the estimate and reported in the row.
    """
    if trials < 1:
        raise ArwError(f"trials must be >= 1, got {trials}")
    params = Params(lam)
    rows: list[EkCurveRow] = []
    for k in k_grid:
        k = int(k)
        if k < 1:
            raise ArwError(f"grid entries must be >= 1, got {k}")

        def one(t: int, k: int = k):
            sigma = sample_configuration(spec, mix, (0, k + 1), derive_seed(seed, 1, k, t))
            src = RandomSource(derive_seed(seed, 2, k, t), params)
            return event_ek(sigma, src, k, cap=cap).holds

        outcomes = _pmap(one, range(trials), workers)
        successes = sum(1 for o in outcomes if o is True)
        capped = sum(1 for o in outcomes if o is None)
        p_hat, ci_lo, ci_hi = _rate_row(successes, trials - capped)
        rows.append(EkCurveRow(k, trials, successes, capped, p_hat, ci_lo, ci_hi))
    return rows


@dataclass(frozen=True)
class DecayFit:
    """Log-linear fit p(k) ≈ C·exp(-c·k) over strictly positive estimates."""

    c_hat: float
    C_hat: float
    r_squared: float
    c_lo: float  # 95% band on the decay rate
    c_hi: float
    n_points: int
    k_range: tuple[int, int]


def fit_decay(table: Iterable) -> DecayFit:
    """Least-squares fit of log p against k.

    Accepts ``EkCurveRow``s or plain (k, p) pairs; only strictly
    positive, finite estimates enter the fit, and at least three are
    required.  The rate band is the usual t-based 95% interval on the
    slope; a constant table fits c = 0 with r² defined as 1.
    """
    pairs = []
    for row in table:
        if hasattr(row, "k") and hasattr(row, "p_hat"):
            k, p = row.k, row.p_hat
        else:
            k, p = row
        if math.isfinite(p) and p > 0.0:
            pairs.append((float(k), float(p)))
    if len(pairs) < 3:
        raise ArwError(f"need at least 3 strictly positive estimates, got {len(pairs)}")
    x = np.array([k for k, _ in pairs])
    y = np.log(np.array([p for _, p in pairs]))
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx == 0.0:
        raise ArwError("all estimates share one k; cannot fit a rate")
    slope = float(((x - xm) * (y - ym)).sum()) / sxx
    intercept = ym - slope * xm
    resid = y - (slope * x + intercept)
    ss_res = float((resid**2).sum())
    ss_tot = float(((y - ym) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    df = len(pairs) - 2
    se = math.sqrt(ss_res / df / sxx)
    tcrit = float(_sps.t.ppf(0.975, df))
    c_hat = -slope
    return DecayFit(
        c_hat=c_hat,
        C_hat=math.exp(intercept),
        r_squared=r2,
        c_lo=c_hat - tcrit * se,
        c_hi=c_hat + tcrit * se,
        n_points=len(pairs),
        k_range=(int(x.min()), int(x.max())),
    )


@dataclass(frozen=True)
class BisectionStep:
    iteration: int
    rho_lo: float
    rho_hi: float
    rho_mid: float
    p_hat: float
    successes: int
    effective: int


@dataclass
class RhoCEstimate:
    rho_hat: float
    bracket: tuple[float, float]
    widened: bool
    steps: list[BisectionStep]


def estimate_rho_c(
    lam: float,
    k: int,
    mix: SleepMix,
    rho_lo: float,
    rho_hi: float,
    trials: int,
    tol: float,
    seed: int,
    cap: int = DEFAULT_CAP,
    workers: int = 1,
    trial_runner: Callable[[float, int, int], tuple[int, int]] | None = None,
) -> RhoCEstimate:
    """Bisection on the density at which p(containment at k) crosses 1/2.

    The containment probability decreases in the density, so the
    midpoint moves up while p̂ > 1/2.  ``trial_runner(rho, trials,
    seed)`` must return (successes, capped); the default samples i.i.d.
    truncated-Poisson configurations and evaluates the containment
    event, and tests inject synthetic runners here.  If the recorded
    midpoints are non-monotone beyond CI overlap the bracket is widened
    to cover the ambiguity and flagged.
    """
    if not (0.0 < rho_lo < rho_hi):
        raise ArwError(f"need 0 < rho_lo < rho_hi, got [{rho_lo}, {rho_hi}]")
    if tol <= 0.0:
        raise ArwError(f"tol must be > 0, got {tol}")
    if k < 1:
        raise ArwError(f"k must be >= 1, got {k}")
    params = Params(lam)

    if trial_runner is None:

        def trial_runner(rho: float, n_trials: int, seed_: int) -> tuple[int, int]:
            trunc = max(30, int(3 * rho) + 20)
            spec = IidSpec(PoissonMarginal(rho, trunc))

            def one(t: int):
                sigma = sample_configuration(spec, mix, (0, k + 1), derive_seed(seed_, 1, t))
                src = RandomSource(derive_seed(seed_, 2, t), params)
                return event_ek(sigma, src, k, cap=cap).holds

            outcomes = _pmap(one, range(n_trials), workers)
            return (
                sum(1 for o in outcomes if o is True),
                sum(1 for o in outcomes if o is None),
            )

    steps: list[BisectionStep] = []
    lo, hi = float(rho_lo), float(rho_hi)
    it = 0
    while hi - lo > tol and it < 60:
        it += 1
        mid = (lo + hi) / 2.0
        successes, capped = trial_runner(mid, trials, derive_seed(seed, 3, it))
        effective = trials - capped
        p_hat = successes / effective if effective > 0 else math.nan
        steps.append(BisectionStep(it, lo, hi, mid, p_hat, successes, effective))
        if not math.isfinite(p_hat):
            break
        if p_hat > 0.5:
            lo = mid
        else:
            hi = mid

    # Flag crossings that are non-monotone beyond what the CIs allow:
    # p̂ should fall as rho rises, so a significantly *rising* pair marks
    # an ambiguous range that the bracket must cover.
    widened = False
    blo, bhi = lo, hi
    pts = sorted((s for s in steps if math.isfinite(s.p_hat)), key=lambda s: s.rho_mid)
    for i in range(len(pts)):
        ci_i = clopper_pearson(pts[i].successes, pts[i].effective)
        for j in range(i + 1, len(pts)):
            ci_j = clopper_pearson(pts[j].successes, pts[j].effective)
            if ci_i[1] < ci_j[0]:  # p significantly increased with rho
                widened = True
                blo = min(blo, pts[i].rho_mid)
                bhi = max(bhi, pts[j].rho_mid)
    if not steps or not math.isfinite(steps[-1].p_hat):
        widened = True
    return RhoCEstimate(rho_hat=(lo + hi) / 2.0, bracket=(blo, bhi), widened=widened, steps=steps)


# -- deterministic averages ------------------------------------------------------


@dataclass(frozen=True)
class CesaroRow:
    n: int
    mean: float  # (1/n)  Σ_{j<=n} a_j
    weighted: float  # (1/n²) Σ_{j<=n} j·a_j


def cesaro_check(seq: Sequence[float], n_values: Sequence[int]) -> list[CesaroRow]:
    """Plain and weighted averages of a sequence at the given lengths.

    If (1/n)Σa_j converges to ρ then (1/n²)Σ j·a_j converges to ρ/2;
    the rows expose both so tests and the lemma suite can compare.
    """
    a = np.asarray(list(seq), dtype=np.float64)
    if a.size == 0:
        raise ArwError("need a nonempty sequence")
    n_values = [int(n) for n in n_values]
    if not n_values:
        raise ArwError("need at least one length")
    if min(n_values) < 1 or max(n_values) > a.size:
        raise ArwError(f"lengths must lie in [1, {a.size}]")
    j = np.arange(1, a.size + 1, dtype=np.float64)
    cum = np.cumsum(a)
    cum_w = np.cumsum(j * a)
    return [CesaroRow(n, float(cum[n - 1]) / n, float(cum_w[n - 1]) / (n * n)) for n in n_values]


# -- ensemble curves for the CLI --------------------------------------------------


@dataclass(frozen=True)
class ExplodeRow:
    R: int
    trials: int
    reached_both: int
    stabilized: int
    capped: int
    p_hat: float
    ci_lo: float
    ci_hi: float


def explode_curve(
    lam: float,
    spec: EnvSpec,
    mix: SleepMix,
    r_values: Sequence[int],
    trials: int,
    seed: int,
    cap: int = DEFAULT_CAP,
    workers: int = 1,
    pad: int = 0,
) -> list[ExplodeRow]:
    """Fraction of sampled configurations whose activity reaches both ±R.

    Each trial samples the window ⟦-R-1-pad, R+1+pad⟧, wakes site 0, and
    runs a reach trial watching ±R.  A configuration with no particle
    anywhere counts as trivially stabilized.
    """
    if trials < 1:
        raise ArwError(f"trials must be >= 1, got {trials}")
    if pad < 0:
        raise ArwError(f"pad must be >= 0, got {pad}")
    params = Params(lam)
    rows: list[ExplodeRow] = []
    for R in r_values:
        R = int(R)
        if R < 1:
            raise ArwError(f"R must be >= 1, got {R}")
        window = (-R - 1 - pad, R + 1 + pad)

        def one(t: int, R: int = R, window=window):
            sigma = sample_configuration(spec, mix, window, derive_seed(seed, 1, R, t))
            sigma = wake(sigma, [0])
            if not sigma.active_sites():
                return Stabilized(0, 0, 0)
            src = RandomSource(derive_seed(seed, 2, R, t), params)
            return reach_trial(sigma, src, R, cap=cap)

        outcomes = _pmap(one, range(trials), workers)
        reached = sum(1 for o in outcomes if isinstance(o, ReachedBoth))
        capped = sum(1 for o in outcomes if isinstance(o, Capped))
        stab = trials - reached - capped
        p_hat, ci_lo, ci_hi = _rate_row(reached, trials - capped)
        rows.append(ExplodeRow(R, trials, reached, stab, capped, p_hat, ci_lo, ci_hi))
    return rows


@dataclass(frozen=True)
class NucleateSummary:
    m: int
    K: int
    trials: int
    covered: int
    success: int
    capped: int
    vacant: int
    p_hat: float
    ci_lo: float
    ci_hi: float


def _shift_to_nonvacant(
    config: Configuration, allowance: int, target: tuple[int, int]
) -> Configuration | None:
    """Translate so the origin is nonvacant, then crop to ``target``.

    Picks the occupied site closest to 0 (ties to the left-absolute
    order |s|, then s).  Returns None when no site within the allowance
    is occupied.
    """
    best = None
    for s in sorted(range(-allowance, allowance + 1), key=lambda s: (abs(s), s)):
        if config.lo <= s <= config.hi and config.counts[s - config.lo] > 0:
            best = s
            break
    if best is None:
        return None
    shifted_lo = config.lo - best
    shifted = Configuration(shifted_lo, config.counts, config.asleep)
    a = target[0] - shifted_lo
    b = target[1] - shifted_lo
    if a < 0 or b >= len(shifted):
        raise WindowError("shift allowance exceeds the sampled margin")
    return Configuration(target[0], shifted.counts[a : b + 1], shifted.asleep[a : b + 1])


def nucleate_ensemble(
    lam: float,
    spec: EnvSpec,
    mix: SleepMix,
    m: int,
    K: int,
    trials: int,
    seed: int,
    cap: int = DEFAULT_CAP,
    workers: int = 1,
    shift_allowance: int = 16,
) -> tuple[NucleateSummary, list[NucleationReport | None]]:
    """Run nucleation trials over sampled environments.

    Each trial samples ⟦-K-1-S, K+1+S⟧ (S the shift allowance), shifts
    the configuration so the origin is nonvacant, wakes the origin, and
    runs a nucleation trial.  Trials with no particle near the origin
    are counted as vacant and excluded, as are capped ones.
    """
    if trials < 1:
        raise ArwError(f"trials must be >= 1, got {trials}")
    params = Params(lam)
    window = (-K - 1 - shift_allowance, K + 1 + shift_allowance)

    def one(t: int) -> NucleationReport | None:
        sigma = sample_configuration(spec, mix, window, derive_seed(seed, 1, m, K, t))
        shifted = _shift_to_nonvacant(sigma, shift_allowance, (-K - 1, K + 1))
        if shifted is None:
            return None
        src = RandomSource(derive_seed(seed, 2, m, K, t), params)
        return nucleation_trial(wake(shifted, [0]), src, m, K, cap=cap)

    reports = _pmap(one, range(trials), workers)
    vacant = sum(1 for r in reports if r is None)
    capped = sum(1 for r in reports if r is not None and not r.determined)
    covered = sum(1 for r in reports if r is not None and r.determined and r.covered)
    success = sum(1 for r in reports if r is not None and r.success)
    effective = trials - vacant - capped
    p_hat, ci_lo, ci_hi = _rate_row(success, effective)
    summary = NucleateSummary(
        m=m,
        K=K,
        trials=trials,
        covered=covered,
        success=success,
        capped=capped,
        vacant=vacant,
        p_hat=p_hat,
        ci_lo=ci_lo,
        ci_hi=ci_hi,
    )
    return summary, reports
