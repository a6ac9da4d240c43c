"""Initial particle laws and density functionals.

Configurations are sampled from translation-covariant environment laws:
i.i.d. site marginals, a finite-state hidden Markov modulation drawn
from its stationary chain, or a periodic pattern with a uniform random
phase.  Independently of the particle counts, a sleep mix puts each
solitary particle to sleep with probability ``q``.

Sampling is driven by numpy's seeded generator with a fixed draw order
(hidden states, then counts, then sleep flags), so a (spec, mix, window,
seed) tuple pins the configuration exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ArwError, Configuration, WindowError

__all__ = [
    "FiniteMarginal",
    "PoissonMarginal",
    "Marginal",
    "IidSpec",
    "MarkovModSpec",
    "PeriodicPhaseSpec",
    "EnvSpec",
    "SleepMix",
    "mean_density",
    "sample_configuration",
    "empirical_density",
    "weighted_profile",
    "HypothesisRow",
    "hypothesis_check",
    "parse_env_spec",
    "spec_params",
]

_PROB_TOL = 1e-9


@dataclass(frozen=True)
class FiniteMarginal:
    """Finitely supported law on particle counts: ((count, prob), ...)."""

    support: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        if not self.support:
            raise ArwError("finite marginal needs a nonempty support")
        norm = []
        seen = set()
        total = 0.0
        for count, prob in self.support:
            c = int(count)
            p = float(prob)
            if c < 0:
                raise ArwError(f"marginal support counts must be >= 0, got {c}")
            if c in seen:
                raise ArwError(f"duplicate count {c} in marginal support")
            if not (0.0 <= p <= 1.0):
                raise ArwError(f"marginal probability out of [0, 1]: {p}")
            seen.add(c)
            total += p
            norm.append((c, p))
        if abs(total - 1.0) > _PROB_TOL:
            raise ArwError(f"marginal probabilities sum to {total}, want 1")
        object.__setattr__(self, "support", tuple(norm))

    def tables(self) -> tuple[np.ndarray, np.ndarray]:
        counts = np.array([c for c, _ in self.support], dtype=np.int64)
        probs = np.array([p for _, p in self.support], dtype=np.float64)
        return counts, probs / probs.sum()

    @property
    def mean(self) -> float:
        return float(sum(c * p for c, p in self.support))

    @property
    def variance(self) -> float:
        m = self.mean
        return float(sum(p * (c - m) ** 2 for c, p in self.support))


@dataclass(frozen=True)
class PoissonMarginal:
    """Poisson(rho) truncated at ``truncation`` and renormalized.

    The truncation tail is astronomically small for the densities in
    play (rho <= 2 leaves relative mass < 1e-20 beyond 30), so the
    truncated mean is quoted as the law's exact mean.
    """

    rho: float
    truncation: int = 30

    def __post_init__(self) -> None:
        rho = float(self.rho)
        if not (math.isfinite(rho) and rho > 0.0):
            raise ArwError(f"poisson density must be finite and > 0, got {self.rho!r}")
        if self.truncation < 20:
            raise ArwError(f"truncation must be >= 20, got {self.truncation}")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "truncation", int(self.truncation))

    def tables(self) -> tuple[np.ndarray, np.ndarray]:
        counts = np.arange(self.truncation + 1, dtype=np.int64)
        pmf = np.empty(counts.size, dtype=np.float64)
        pmf[0] = math.exp(-self.rho)
        for j in range(1, counts.size):
            pmf[j] = pmf[j - 1] * self.rho / j
        return counts, pmf / pmf.sum()

    @property
    def mean(self) -> float:
        counts, probs = self.tables()
        return float(np.dot(counts, probs))

    @property
    def variance(self) -> float:
        counts, probs = self.tables()
        m = float(np.dot(counts, probs))
        return float(np.dot(probs, (counts - m) ** 2))


Marginal = FiniteMarginal | PoissonMarginal


@dataclass(frozen=True)
class IidSpec:
    """Independent identically distributed site counts."""

    marginal: Marginal


@dataclass(frozen=True)
class MarkovModSpec:
    """Hidden-Markov modulated counts.

    A hidden state per site is drawn from the stationary law of
    ``transition`` and stepped left to right; site counts are then
    independent draws from the state's marginal.  The transition matrix
    must be primitive (irreducible and aperiodic) so the stationary law
    is unique and the environment is ergodic.
    """

    transition: tuple[tuple[float, ...], ...]
    marginals: tuple[Marginal, ...]

    def __post_init__(self) -> None:
        P = np.array(self.transition, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
            raise ArwError("transition must be a square matrix")
        if (P < 0).any():
            raise ArwError("transition entries must be >= 0")
        if np.abs(P.sum(axis=1) - 1.0).max() > _PROB_TOL:
            raise ArwError("transition rows must each sum to 1")
        n = P.shape[0]
        if len(self.marginals) != n:
            raise ArwError(f"need {n} marginals for a {n}-state chain, got {len(self.marginals)}")
        # Wielandt bound: a primitive boolean matrix B has B^m all-positive
        # for m = (n-1)^2 + 1; if that power has a zero the chain is not
        # primitive and the stationary sampling story breaks down.
        B = (P > 0).astype(np.int64)
        C = np.eye(n, dtype=np.int64)
        for _ in range((n - 1) ** 2 + 1):
            C = np.minimum(C @ B, 1)
        if not (C > 0).all():
            raise ArwError("transition matrix must be primitive (irreducible and aperiodic)")
        object.__setattr__(
            self, "transition", tuple(tuple(float(x) for x in row) for row in self.transition)
        )
        object.__setattr__(self, "marginals", tuple(self.marginals))

    def stationary(self) -> np.ndarray:
        P = np.array(self.transition, dtype=np.float64)
        n = P.shape[0]
        A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
        b = np.zeros(n + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(A, b, rcond=None)
        pi = np.clip(pi, 0.0, None)
        return pi / pi.sum()


@dataclass(frozen=True)
class PeriodicPhaseSpec:
    """Deterministic periodic pattern with a uniform random phase."""

    pattern: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.pattern:
            raise ArwError("periodic pattern must be nonempty")
        pat = tuple(int(c) for c in self.pattern)
        if any(c < 0 for c in pat):
            raise ArwError("pattern counts must be >= 0")
        object.__setattr__(self, "pattern", pat)


EnvSpec = IidSpec | MarkovModSpec | PeriodicPhaseSpec


@dataclass(frozen=True)
class SleepMix:
    """Each solitary particle starts asleep with probability ``q``."""

    q: float = 0.0

    def __post_init__(self) -> None:
        q = float(self.q)
        if not (0.0 <= q <= 1.0):
            raise ArwError(f"sleep mix q must be in [0, 1], got {self.q!r}")
        object.__setattr__(self, "q", q)


def mean_density(spec: EnvSpec) -> float:
    """Expected particles per site under the environment law."""
    if isinstance(spec, IidSpec):
        return spec.marginal.mean
    if isinstance(spec, MarkovModSpec):
        pi = spec.stationary()
        return float(sum(p * m.mean for p, m in zip(pi, spec.marginals)))
    if isinstance(spec, PeriodicPhaseSpec):
        return float(np.mean(spec.pattern))
    raise ArwError(f"unknown environment spec {spec!r}")


def _draw_counts(spec: EnvSpec, rng: np.random.Generator, lo: int, n: int) -> np.ndarray:
    if isinstance(spec, IidSpec):
        vals, probs = spec.marginal.tables()
        return rng.choice(vals, size=n, p=probs)
    if isinstance(spec, MarkovModSpec):
        P = np.array(spec.transition, dtype=np.float64)
        cum = np.cumsum(P, axis=1)
        cum_pi = np.cumsum(spec.stationary())
        u = rng.random(n)
        states = np.empty(n, dtype=np.int64)
        states[0] = min(int(np.searchsorted(cum_pi, u[0], side="right")), P.shape[0] - 1)
        for i in range(1, n):
            states[i] = min(
                int(np.searchsorted(cum[states[i - 1]], u[i], side="right")), P.shape[0] - 1
            )
        counts = np.zeros(n, dtype=np.int64)
        for s in range(P.shape[0]):
            idx = np.flatnonzero(states == s)
            if idx.size:
                vals, probs = spec.marginals[s].tables()
                counts[idx] = rng.choice(vals, size=idx.size, p=probs)
        return counts
    if isinstance(spec, PeriodicPhaseSpec):
        pat = np.array(spec.pattern, dtype=np.int64)
        p = pat.size
        shift = int(rng.integers(p))
        sites = np.arange(lo, lo + n, dtype=np.int64)
        return pat[(sites + shift) % p]
    raise ArwError(f"unknown environment spec {spec!r}")


def sample_configuration(
    spec: EnvSpec,
    mix: SleepMix,
    window: tuple[int, int],
    seed: int,
) -> Configuration:
    """Sample a configuration on the closed window from (spec, mix, seed)."""
    lo, hi = int(window[0]), int(window[1])
    if hi < lo:
        raise ArwError(f"window [{lo}, {hi}] is empty")
    n = hi - lo + 1
    rng = np.random.default_rng(int(seed) % 2**64)
    counts = _draw_counts(spec, rng, lo, n)
    u = rng.random(n)
    asleep = (counts == 1) & (u < mix.q)
    return Configuration(lo, counts, asleep)


def empirical_density(config: Configuration, n: int, side: int = 1) -> float:
    """Particles per site over the strip ⟦1, n⟧ (side=+1) or ⟦-n, -1⟧."""
    if n < 1:
        raise ArwError(f"strip length must be >= 1, got {n}")
    if side not in (1, -1):
        raise ArwError(f"side must be +1 or -1, got {side}")
    a, b = (1, n) if side == 1 else (-n, -1)
    if not (config.lo <= a and b <= config.hi):
        raise WindowError(f"strip [{a}, {b}] outside window [{config.lo}, {config.hi}]")
    i = a - config.lo
    return float(config.counts[i : i + n].sum()) / n


def weighted_profile(config: Configuration, n: int) -> float:
    """Centre-of-mass functional (1/n²) Σ_{j=1..n} j·|σ(j)|."""
    if n < 1:
        raise ArwError(f"strip length must be >= 1, got {n}")
    if not (config.lo <= 1 and n <= config.hi):
        raise WindowError(f"strip [1, {n}] outside window [{config.lo}, {config.hi}]")
    i = 1 - config.lo
    counts = config.counts[i : i + n]
    j = np.arange(1, n + 1, dtype=np.float64)
    return float(np.dot(j, counts)) / (n * n)


@dataclass(frozen=True)
class HypothesisRow:
    """Mass and density checks for one strip length."""

    n: int
    weighted_mass: float  # Σ_{j<=n} j·|σ(j)|
    strip_particles: int  # Σ_{j<=n} |σ(j)|
    mass_ok: bool  # weighted_mass >= (rho_c_ref + eps) n²/2
    density_ok: bool  # strip_particles <= beta·n


def hypothesis_check(
    config: Configuration,
    n_values: Sequence[int],
    eps: float,
    beta: float,
    rho_c_ref: float,
) -> list[HypothesisRow]:
    """Evaluate the explosion-sufficient growth conditions on ⟦1, n⟧.

    For each n: the weighted mass Σ j·|σ(j)| must reach
    (rho_c_ref + eps)·n²/2 while the plain particle count stays below
    beta·n.  ``rho_c_ref`` is caller-supplied (the critical density has
    no closed form; estimates come from the bisection experiment).
    """
    if eps <= 0 or beta <= 0:
        raise ArwError("eps and beta must be > 0")
    n_values = [int(n) for n in n_values]
    if not n_values:
        raise ArwError("need at least one strip length")
    n_max = max(n_values)
    if min(n_values) < 1:
        raise ArwError("strip lengths must be >= 1")
    if not (config.lo <= 1 and n_max <= config.hi):
        raise WindowError(f"strip [1, {n_max}] outside window [{config.lo}, {config.hi}]")
    i = 1 - config.lo
    counts = config.counts[i : i + n_max].astype(np.float64)
    j = np.arange(1, n_max + 1, dtype=np.float64)
    cum_mass = np.cumsum(j * counts)
    cum_cnt = np.cumsum(counts)
    rows = []
    for n in n_values:
        wm = float(cum_mass[n - 1])
        sp = int(cum_cnt[n - 1])
        rows.append(
            HypothesisRow(
                n=n,
                weighted_mass=wm,
                strip_particles=sp,
                mass_ok=wm >= (rho_c_ref + eps) * n * n / 2.0,
                density_ok=sp <= beta * n,
            )
        )
    return rows


# -- flat text format for environment laws -------------------------------------


def _parse_marginal(text: str, key: str) -> Marginal:
    parts = text.strip().split(None, 1)
    if len(parts) != 2:
        raise ArwError(f"{key}: want 'poisson RHO' or 'finite C:P,C:P,...', got {text!r}")
    kind, body = parts[0].lower(), parts[1]
    if kind == "poisson":
        try:
            return PoissonMarginal(float(body))
        except ValueError:
            raise ArwError(f"{key}: bad poisson density {body!r}") from None
    if kind == "finite":
        support = []
        for item in body.split(","):
            item = item.strip()
            if not item:
                continue
            try:
                c, p = item.split(":")
                support.append((int(c), float(p)))
            except ValueError:
                raise ArwError(f"{key}: bad support entry {item!r} (want COUNT:PROB)") from None
        return FiniteMarginal(tuple(support))
    raise ArwError(f"{key}: unknown marginal kind {kind!r}")


def parse_env_spec(text: str) -> tuple[EnvSpec, SleepMix]:
    """Parse the flat key=value environment format.

    Common keys: ``kind`` (poisson | finite | markov | periodic) and
    ``q`` (sleep mix, default 0).  Per kind:

    - poisson:  ``rho`` (required), ``truncation`` (default 30)
    - finite:   ``support = C:P, C:P, ...``
    - markov:   ``transition = p q ; r s``  plus ``marginal.N = poisson RHO``
                or ``marginal.N = finite C:P,...`` for each state N
    - periodic: ``pattern = c0 c1 c2 ...``

    Blank lines and ``#`` comments are ignored.  Unknown or malformed
    keys raise :class:`ArwError` naming the key.
    """
    kv: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ArwError(f"line {ln}: expected KEY = VALUE, got {raw!r}")
        key, val = line.split("=", 1)
        key = key.strip().lower()
        if key in kv:
            raise ArwError(f"line {ln}: duplicate key {key!r}")
        kv[key] = val.strip()

    def take(key: str, default: str | None = None) -> str:
        if key in kv:
            return kv.pop(key)
        if default is not None:
            return default
        raise ArwError(f"missing required key {key!r}")

    kind = take("kind").lower()
    try:
        mix = SleepMix(float(take("q", "0")))
    except ValueError:
        raise ArwError("q: not a number") from None

    spec: EnvSpec
    if kind == "poisson":
        try:
            rho = float(take("rho"))
        except ValueError:
            raise ArwError("rho: not a number") from None
        try:
            trunc = int(take("truncation", "30"))
        except ValueError:
            raise ArwError("truncation: not an integer") from None
        spec = IidSpec(PoissonMarginal(rho, trunc))
    elif kind == "finite":
        spec = IidSpec(_parse_marginal("finite " + take("support"), "support"))
    elif kind == "markov":
        rows = []
        for row_text in take("transition").split(";"):
            try:
                rows.append(tuple(float(x) for x in row_text.split()))
            except ValueError:
                raise ArwError(f"transition: bad row {row_text.strip()!r}") from None
        n = len(rows)
        marginals = []
        for s in range(n):
            marginals.append(_parse_marginal(take(f"marginal.{s}"), f"marginal.{s}"))
        spec = MarkovModSpec(tuple(rows), tuple(marginals))
    elif kind == "periodic":
        try:
            pattern = tuple(int(x) for x in take("pattern").split())
        except ValueError:
            raise ArwError("pattern: counts must be integers") from None
        spec = PeriodicPhaseSpec(pattern)
    else:
        raise ArwError(f"kind: unknown environment kind {kind!r}")

    if kv:
        raise ArwError(f"unknown key {sorted(kv)[0]!r} for kind {kind!r}")
    return spec, mix


def spec_params(spec: EnvSpec, mix: SleepMix) -> dict:
    """JSON-safe description of an environment law (for run summaries)."""
    out: dict = {"q": mix.q}
    if isinstance(spec, IidSpec):
        m = spec.marginal
        if isinstance(m, PoissonMarginal):
            out.update(kind="poisson", rho=m.rho, truncation=m.truncation)
        else:
            out.update(kind="finite", support=[list(x) for x in m.support])
    elif isinstance(spec, MarkovModSpec):
        margs = []
        for m in spec.marginals:
            if isinstance(m, PoissonMarginal):
                margs.append({"kind": "poisson", "rho": m.rho, "truncation": m.truncation})
            else:
                margs.append({"kind": "finite", "support": [list(x) for x in m.support]})
        out.update(kind="markov", transition=[list(r) for r in spec.transition], marginals=margs)
    elif isinstance(spec, PeriodicPhaseSpec):
        out.update(kind="periodic", pattern=list(spec.pattern))
    else:
        raise ArwError(f"unknown environment spec {spec!r}")
    out["mean_density"] = mean_density(spec)
    return out
