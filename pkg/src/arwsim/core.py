"""Configurations, odometers, and single-site toppling.

The state space lives on a finite closed window ``[lo, hi]`` of the
integer line.  Each site is empty, holds one sleeping particle, or holds
``n >= 1`` active particles; a sleeping particle always sits alone.
Site states are totally ordered Empty < Sleeping < Active{1} < Active{2}
< ... — the order under which waking and adding particles are monotone.

Toppling a site with an active particle consumes the next unread
instruction of that site's stack: a step moves one particle to a
neighbour (waking any sleeper there), a sleep attempt puts the particle
to sleep if it is alone and is a no-op otherwise.  The odometer counts
instructions consumed per site.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Mapping

import numpy as np

from .stacks import Instruction, Source

__all__ = [
    "ArwError",
    "WindowError",
    "IllegalToppleError",
    "SiteState",
    "EMPTY",
    "SLEEPING",
    "active",
    "particle_count",
    "state_leq",
    "Configuration",
    "config_leq",
    "Odometer",
    "Effect",
    "ToppleEvent",
    "wake",
    "is_stable",
    "topple",
]


class ArwError(Exception):
    """Base class for simulation errors."""


class WindowError(ArwError):
    """A site or region fell outside the configured window."""


class IllegalToppleError(ArwError):
    """Toppling was requested at a site with no active particle."""


@dataclass(frozen=True)
class SiteState:
    """State of a single site: ``count`` particles, optionally asleep.

    ``asleep`` implies ``count == 1``; a sleeping particle is alone by
    construction (any arrival wakes it).
    """

    count: int
    asleep: bool = False

    def __post_init__(self) -> None:
        if self.count < 0:
            raise ValueError(f"particle count must be >= 0, got {self.count}")
        if self.asleep and self.count != 1:
            raise ValueError(f"a sleeping site holds exactly one particle, got {self.count}")

    @property
    def is_active(self) -> bool:
        return self.count >= 1 and not self.asleep

    def __repr__(self) -> str:
        if self.count == 0:
            return "EMPTY"
        if self.asleep:
            return "SLEEPING"
        return f"active({self.count})"


EMPTY = SiteState(0)
SLEEPING = SiteState(1, asleep=True)


def active(n: int = 1) -> SiteState:
    """State with ``n >= 1`` active particles."""
    if n < 1:
        raise ValueError(f"active state needs >= 1 particle, got {n}")
    return SiteState(n)


def particle_count(state: SiteState) -> int:
    """Number of particles at the site; a sleeper counts as one."""
    return state.count


def _order_key(state: SiteState) -> float:
    # Empty -> 0, Sleeping -> 1/2, Active{n} -> n: the total order under
    # which waking a site moves strictly up and arrivals never move down.
    return 0.5 if state.asleep else float(state.count)


def state_leq(a: SiteState, b: SiteState) -> bool:
    """Total order Empty < Sleeping < Active{1} < Active{2} < ..."""
    return _order_key(a) <= _order_key(b)


class Configuration:
    """Particle layout over the closed window ``[lo, hi]``.

    Backed by two aligned arrays: int64 particle counts and a boolean
    sleeping flag (set only where ``count == 1``).  Mutable; engines
    work on copies so callers keep their inputs.
    """

    __slots__ = ("lo", "counts", "asleep")

    def __init__(self, lo: int, counts, asleep=None):
        counts = np.asarray(counts, dtype=np.int64).copy()
        if counts.ndim != 1 or counts.size == 0:
            raise ValueError("counts must be a nonempty 1-d array")
        if (counts < 0).any():
            raise ValueError("particle counts must be >= 0")
        if asleep is None:
            asleep = np.zeros(counts.size, dtype=bool)
        else:
            asleep = np.asarray(asleep, dtype=bool).copy()
            if asleep.shape != counts.shape:
                raise ValueError("asleep flags must align with counts")
            if (asleep & (counts != 1)).any():
                raise ValueError("sleeping sites must hold exactly one particle")
        self.lo = int(lo)
        self.counts = counts
        self.asleep = asleep

    # -- constructors ---------------------------------------------------

    @classmethod
    def empty(cls, lo: int, hi: int) -> "Configuration":
        if hi < lo:
            raise ValueError(f"window [{lo}, {hi}] is empty")
        return cls(lo, np.zeros(hi - lo + 1, dtype=np.int64))

    @classmethod
    def from_states(cls, lo: int, states: Iterable[SiteState]) -> "Configuration":
        states = list(states)
        counts = np.array([s.count for s in states], dtype=np.int64)
        asleep = np.array([s.asleep for s in states], dtype=bool)
        return cls(lo, counts, asleep)

    @classmethod
    def from_dict(cls, mapping: Mapping[int, SiteState], lo: int, hi: int) -> "Configuration":
        """Window ``[lo, hi]`` with the given states; unlisted sites empty."""
        cfg = cls.empty(lo, hi)
        for site, state in mapping.items():
            cfg[site] = state
        return cfg

    # -- geometry -------------------------------------------------------

    @property
    def hi(self) -> int:
        return self.lo + self.counts.size - 1

    @property
    def window(self) -> tuple[int, int]:
        return (self.lo, self.hi)

    def sites(self) -> range:
        return range(self.lo, self.hi + 1)

    def __len__(self) -> int:
        return self.counts.size

    def _index(self, site: int) -> int:
        i = site - self.lo
        if not (0 <= i < self.counts.size):
            raise WindowError(f"site {site} outside window [{self.lo}, {self.hi}]")
        return i

    # -- access ---------------------------------------------------------

    def __getitem__(self, site: int) -> SiteState:
        i = self._index(site)
        return SiteState(int(self.counts[i]), bool(self.asleep[i]))

    def __setitem__(self, site: int, state: SiteState) -> None:
        i = self._index(site)
        self.counts[i] = state.count
        self.asleep[i] = state.asleep

    def __iter__(self) -> Iterator[tuple[int, SiteState]]:
        for site in self.sites():
            yield site, self[site]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return (
            self.lo == other.lo
            and self.counts.shape == other.counts.shape
            and bool((self.counts == other.counts).all())
            and bool((self.asleep == other.asleep).all())
        )

    def copy(self) -> "Configuration":
        return Configuration(self.lo, self.counts, self.asleep)

    def total_particles(self) -> int:
        return int(self.counts.sum())

    def active_sites(self) -> list[int]:
        idx = np.flatnonzero((self.counts >= 1) & ~self.asleep)
        return [self.lo + int(i) for i in idx]

    def __repr__(self) -> str:
        return f"Configuration([{self.lo}, {self.hi}], {self.total_particles()} particles)"

    # -- text round trip --------------------------------------------------

    def to_text(self) -> str:
        """One ``site<TAB>state`` line per site; state is 0, s, or k >= 1."""
        lines = []
        for site in self.sites():
            i = site - self.lo
            tok = "s" if self.asleep[i] else str(int(self.counts[i]))
            lines.append(f"{site}\t{tok}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Configuration":
        """Inverse of :meth:`to_text`; blank lines and ``#`` comments allowed.

        The listed sites must form a contiguous interval.
        """
        entries: dict[int, SiteState] = {}
        for ln, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ArwError(f"line {ln}: expected 'site<TAB>state', got {raw!r}")
            try:
                site = int(parts[0])
            except ValueError:
                raise ArwError(f"line {ln}: bad site {parts[0]!r}") from None
            if site in entries:
                raise ArwError(f"line {ln}: duplicate site {site}")
            tok = parts[1]
            if tok == "s":
                entries[site] = SLEEPING
            else:
                try:
                    n = int(tok)
                except ValueError:
                    raise ArwError(f"line {ln}: bad state {tok!r} (want 0, s, or k >= 1)") from None
                if n < 0:
                    raise ArwError(f"line {ln}: bad state {tok!r} (want 0, s, or k >= 1)")
                entries[site] = SiteState(n)
        if not entries:
            raise ArwError("no sites in configuration text")
        lo, hi = min(entries), max(entries)
        missing = [s for s in range(lo, hi + 1) if s not in entries]
        if missing:
            raise ArwError(f"window [{lo}, {hi}] is missing site {missing[0]}")
        return cls.from_states(lo, (entries[s] for s in range(lo, hi + 1)))


def config_leq(a: Configuration, b: Configuration) -> bool:
    """Pointwise ``state_leq`` with empty padding outside either window."""
    lo = min(a.lo, b.lo)
    hi = max(a.hi, b.hi)

    def state(cfg: Configuration, site: int) -> SiteState:
        return cfg[site] if cfg.lo <= site <= cfg.hi else EMPTY

    return all(state_leq(state(a, s), state(b, s)) for s in range(lo, hi + 1))


class Odometer:
    """Per-site count of consumed instructions; zero off its range."""

    __slots__ = ("lo", "counts")

    def __init__(self, lo: int, counts):
        counts = np.asarray(counts, dtype=np.int64).copy()
        if counts.ndim != 1 or counts.size == 0:
            raise ValueError("counts must be a nonempty 1-d array")
        if (counts < 0).any():
            raise ValueError("odometer values must be >= 0")
        self.lo = int(lo)
        self.counts = counts

    @classmethod
    def zeros(cls, lo: int, hi: int) -> "Odometer":
        if hi < lo:
            raise ValueError(f"range [{lo}, {hi}] is empty")
        return cls(lo, np.zeros(hi - lo + 1, dtype=np.int64))

    @classmethod
    def from_dict(cls, mapping: Mapping[int, int], lo: int | None = None, hi: int | None = None) -> "Odometer":
        if not mapping and (lo is None or hi is None):
            raise ValueError("empty mapping needs an explicit range")
        lo = min(mapping) if lo is None else lo
        hi = max(mapping) if hi is None else hi
        od = cls.zeros(lo, hi)
        for site, n in mapping.items():
            od.counts[od._index(site)] = n
        if (od.counts < 0).any():
            raise ValueError("odometer values must be >= 0")
        return od

    @property
    def hi(self) -> int:
        return self.lo + self.counts.size - 1

    def _index(self, site: int) -> int:
        i = site - self.lo
        if not (0 <= i < self.counts.size):
            raise WindowError(f"site {site} outside odometer range [{self.lo}, {self.hi}]")
        return i

    def __getitem__(self, site: int) -> int:
        i = site - self.lo
        if 0 <= i < self.counts.size:
            return int(self.counts[i])
        return 0

    def add(self, site: int, n: int = 1) -> None:
        self.counts[self._index(site)] += n

    def total(self) -> int:
        return int(self.counts.sum())

    def support(self) -> list[int]:
        return [self.lo + int(i) for i in np.flatnonzero(self.counts)]

    def as_dict(self) -> dict[int, int]:
        return {self.lo + int(i): int(self.counts[i]) for i in np.flatnonzero(self.counts)}

    def copy(self) -> "Odometer":
        return Odometer(self.lo, self.counts)

    def pointwise_leq(self, other: "Odometer") -> bool:
        sites = set(self.support()) | set(other.support())
        return all(self[s] <= other[s] for s in sites)

    def subtract(self, other: "Odometer") -> "Odometer":
        """Pointwise difference over this odometer's range; must stay >= 0."""
        out = self.counts.copy()
        for i in range(out.size):
            out[i] -= other[self.lo + i]
        if (out < 0).any():
            raise ValueError("subtraction would go negative")
        return Odometer(self.lo, out)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Odometer):
            return NotImplemented
        return self.as_dict() == other.as_dict()

    def __repr__(self) -> str:
        return f"Odometer({self.as_dict()})"


class Effect(Enum):
    """What a single toppling did."""

    MOVED_LEFT = "moved_left"
    MOVED_RIGHT = "moved_right"
    FELL_ASLEEP = "fell_asleep"
    SLEEP_NOOP = "sleep_noop"


@dataclass(frozen=True)
class ToppleEvent:
    site: int
    instruction: Instruction
    effect: Effect


def wake(config: Configuration, sites: Iterable[int]) -> Configuration:
    """Copy of ``config`` with sleepers at the given sites woken.

    Empty and already-active sites are unchanged.  Sites outside the
    window raise :class:`WindowError` — waking off-window is a caller
    bug, not a no-op.
    """
    out = config.copy()
    for site in sites:
        i = out._index(site)
        out.asleep[i] = False
    return out


def is_stable(config: Configuration, region: Iterable[int]) -> bool:
    """True iff no site of ``region`` holds an active particle."""
    for site in region:
        if config[site].is_active:
            return False
    return True


def topple(
    config: Configuration,
    odometer: Odometer,
    source: Source,
    site: int,
) -> ToppleEvent:
    """Execute one instruction at ``site``, in place.

    Reads ``instruction_at(source, site, odometer[site])`` and
    increments the odometer at ``site``.  A step moves one particle to
    the neighbour (waking any sleeper there); a sleep attempt puts a
    lone particle to sleep and is a no-op when the site is crowded.

    Raises :class:`IllegalToppleError` if ``site`` has no active
    particle and :class:`WindowError` if a step would leave the window.
    """
    i = config._index(site)
    if not (config.counts[i] >= 1 and not config.asleep[i]):
        raise IllegalToppleError(f"site {site} has no active particle")
    instr = source.instruction_at(site, odometer[site])
    if instr is Instruction.SLEEP:
        odometer.add(site)
        if config.counts[i] == 1:
            config.asleep[i] = True
            return ToppleEvent(site, instr, Effect.FELL_ASLEEP)
        return ToppleEvent(site, instr, Effect.SLEEP_NOOP)
    dest = site + 1 if instr is Instruction.RIGHT else site - 1
    j = dest - config.lo
    if not (0 <= j < config.counts.size):
        raise WindowError(f"step from {site} to {dest} leaves window [{config.lo}, {config.hi}]")
    odometer.add(site)
    config.counts[i] -= 1
    config.counts[j] += 1
    config.asleep[j] = False  # arrivals wake sleepers
    effect = Effect.MOVED_RIGHT if instr is Instruction.RIGHT else Effect.MOVED_LEFT
    return ToppleEvent(site, instr, effect)
