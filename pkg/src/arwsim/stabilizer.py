"""Legal-toppling engines.

``stabilize`` runs legal topplings inside a fixed region (with a
one-site halo absorbing whatever leaves) until no active particle
remains, a midstream variant starts reading each site's stack at a
given offset, ``excursion`` topples only the currently visited interval
and lets it grow, and ``event_ek`` evaluates the boundary-containment
event used by the critical-density experiments.

By the abelian property the odometer and final configuration of an
uncapped stabilization do not depend on the toppling order, so the
choice of policy is free; the FIFO policy additionally has a compiled
twin (_kernels) that follows the identical queue discipline, making the
two engines interchangeable even mid-run.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from . import core
from .core import (
    ArwError,
    Configuration,
    Effect,
    IllegalToppleError,
    Odometer,
    WindowError,
    wake,
)
from .stacks import RandomSource, Source, _GOLDEN, _MASK64, _fin64

__all__ = [
    "DEFAULT_CAP",
    "Leftmost",
    "Rightmost",
    "Fifo",
    "RandomQueue",
    "Policy",
    "FIFO",
    "RunStatus",
    "StabilizeReport",
    "WatchedRun",
    "ExcursionReport",
    "EkResult",
    "stabilize",
    "stabilize_midstream",
    "stabilize_watching",
    "excursion",
    "event_ek",
]

DEFAULT_CAP = 10**8

try:
    from . import _kernels
except ImportError:  # pragma: no cover - numba is a hard dependency
    _kernels = None


# -- toppling-order policies ------------------------------------------------


@dataclass(frozen=True)
class Leftmost:
    """Always topple the leftmost active site."""


@dataclass(frozen=True)
class Rightmost:
    """Always topple the rightmost active site."""


@dataclass(frozen=True)
class Fifo:
    """First-in-first-out site queue (the compiled engine's order)."""


@dataclass(frozen=True)
class RandomQueue:
    """Topple a uniformly random active site, seeded for reproducibility."""

    seed: int


Policy = Leftmost | Rightmost | Fifo | RandomQueue
FIFO = Fifo()


class RunStatus(Enum):
    STABLE = "stable"
    CAPPED = "capped"
    EARLY = "early"
    OVERFLOW = "overflow"


_STATUS_FROM_CODE = {
    0: RunStatus.STABLE,
    1: RunStatus.CAPPED,
    2: RunStatus.EARLY,
    3: RunStatus.OVERFLOW,
}


# -- reports ------------------------------------------------------------------


@dataclass
class StabilizeReport:
    """Outcome of stabilizing a region.

    ``odometer`` counts only the instructions consumed by this run
    (offsets excluded); ``visited`` is the set of region sites with a
    positive odometer; ``arrivals`` flags the two halo sites.  When
    ``capped`` is False the final configuration is stable on the region.
    """

    odometer: Odometer
    final: Configuration
    visited: frozenset[int]
    arrivals: dict[int, bool]
    topplings: int
    capped: bool


@dataclass
class WatchedRun:
    """Outcome of a stabilization that may stop once both watch sites
    have seen an active particle."""

    odometer: Odometer
    final: Configuration
    topplings: int
    status: RunStatus
    hit_lo: bool
    hit_hi: bool


@dataclass
class ExcursionReport:
    """Outcome of a growing-interval excursion.

    ``region`` is the visited interval; the odometer is positive exactly
    on it when the run completed (status STABLE).
    """

    region: tuple[int, int]
    odometer: Odometer
    final: Configuration
    topplings: int
    status: RunStatus

    @property
    def completed(self) -> bool:
        return self.status is RunStatus.STABLE


@dataclass
class EkResult:
    """Boundary-containment verdict: ``holds`` is None when the run was
    capped and the event is undetermined."""

    holds: bool | None
    boundary: int
    report: StabilizeReport


# -- ordered bags backing the python engine -----------------------------------


class _FifoBag:
    __slots__ = ("dq", "inq")

    def __init__(self) -> None:
        self.dq: deque[int] = deque()
        self.inq: set[int] = set()

    def push(self, site: int) -> None:
        if site not in self.inq:
            self.dq.append(site)
            self.inq.add(site)

    def pop(self, is_active: Callable[[int], bool]) -> int:
        site = self.dq.popleft()
        self.inq.remove(site)
        return site

    def has_active(self, is_active: Callable[[int], bool]) -> bool:
        return bool(self.dq)


class _HeapBag:
    # Entries may be stale duplicates; pops discard entries whose site is
    # no longer active.  Every active site always retains at least one
    # entry, so the heap top (after discards) is the extremal active site.
    __slots__ = ("heap", "sign")

    def __init__(self, sign: int) -> None:
        self.heap: list[int] = []
        self.sign = sign

    def push(self, site: int) -> None:
        heapq.heappush(self.heap, self.sign * site)

    def _settle(self, is_active: Callable[[int], bool]) -> None:
        while self.heap and not is_active(self.sign * self.heap[0]):
            heapq.heappop(self.heap)

    def pop(self, is_active: Callable[[int], bool]) -> int:
        self._settle(is_active)
        return self.sign * heapq.heappop(self.heap)

    def has_active(self, is_active: Callable[[int], bool]) -> bool:
        self._settle(is_active)
        return bool(self.heap)


class _RandomBag:
    # Exact active set with O(1) swap-removal; picks are driven by a
    # counter hash so runs are reproducible for a given seed.
    __slots__ = ("items", "pos", "seed", "ctr")

    def __init__(self, seed: int) -> None:
        self.items: list[int] = []
        self.pos: dict[int, int] = {}
        self.seed = int(seed) & _MASK64
        self.ctr = 0

    def push(self, site: int) -> None:
        if site not in self.pos:
            self.pos[site] = len(self.items)
            self.items.append(site)

    def pop(self, is_active: Callable[[int], bool]) -> int:
        self.ctr += 1
        r = _fin64((self.seed + self.ctr * _GOLDEN) & _MASK64)
        idx = r % len(self.items)
        site = self.items[idx]
        last = self.items[-1]
        self.items[idx] = last
        self.pos[last] = idx
        self.items.pop()
        del self.pos[site]
        return site

    def has_active(self, is_active: Callable[[int], bool]) -> bool:
        return bool(self.items)


def _new_bag(policy: Policy):
    if isinstance(policy, Fifo):
        return _FifoBag()
    if isinstance(policy, Leftmost):
        return _HeapBag(+1)
    if isinstance(policy, Rightmost):
        return _HeapBag(-1)
    if isinstance(policy, RandomQueue):
        return _RandomBag(policy.seed)
    raise ArwError(f"unknown policy {policy!r}")


# -- engine plumbing -----------------------------------------------------------


def _u0_array(u0: Odometer | None, lo: int, n: int) -> np.ndarray:
    arr = np.zeros(n, dtype=np.int64)
    if u0 is not None:
        a = max(lo, u0.lo)
        b = min(lo + n - 1, u0.hi)
        if a <= b:
            arr[a - lo : b - lo + 1] = u0.counts[a - u0.lo : b - u0.lo + 1]
    return arr


def _validate_region(config: Configuration, region: tuple[int, int]) -> tuple[int, int]:
    try:
        vlo, vhi = int(region[0]), int(region[1])
    except (TypeError, ValueError, IndexError):
        raise ArwError(f"malformed region {region!r}; want (lo, hi)") from None
    if vhi < vlo:
        raise ArwError(f"malformed region [{vlo}, {vhi}]")
    if not (config.lo <= vlo - 1 and vhi + 1 <= config.hi):
        raise WindowError(
            f"region [{vlo}, {vhi}] needs its halo inside window [{config.lo}, {config.hi}]"
        )
    return vlo, vhi


def _pick_engine(engine: str, policy: Policy, source: Source) -> str:
    if engine not in ("auto", "python", "numba"):
        raise ArwError(f"unknown engine {engine!r}")
    compiled_ok = (
        _kernels is not None
        and isinstance(policy, Fifo)
        and isinstance(source, RandomSource)
    )
    if engine == "numba":
        if not compiled_ok:
            raise ArwError("compiled engine requires the FIFO policy and a RandomSource")
        return "numba"
    if engine == "python":
        return "python"
    return "numba" if compiled_ok else "python"


@dataclass
class _RawRun:
    topplings: int
    status: RunStatus
    arrived_lo: bool
    arrived_hi: bool
    hit_lo: bool
    hit_hi: bool
    odometer: Odometer  # this run's consumption only


def _run_python(
    work: Configuration,
    source: Source,
    vlo: int,
    vhi: int,
    policy: Policy,
    cap: int,
    u0_arr: np.ndarray,
    watch: tuple[int, int] | None,
    stop_on_both: bool,
) -> _RawRun:
    # The working odometer starts at the offsets so core.topple reads the
    # right stack indices; the report subtracts them again.
    work_od = Odometer(work.lo, u0_arr)
    bag = _new_bag(policy)
    for site in range(vlo, vhi + 1):
        if work[site].is_active:
            bag.push(site)

    def is_active(site: int) -> bool:
        return work[site].is_active

    wlo, whi = watch if watch is not None else (None, None)
    hit_lo = wlo is not None and work.lo <= wlo <= work.hi and work[wlo].is_active
    hit_hi = whi is not None and work.lo <= whi <= work.hi and work[whi].is_active
    arrived_lo = False
    arrived_hi = False
    t = 0
    status = RunStatus.STABLE
    while bag.has_active(is_active):
        if stop_on_both and hit_lo and hit_hi:
            status = RunStatus.EARLY
            break
        if t >= cap:
            status = RunStatus.CAPPED
            break
        x = bag.pop(is_active)
        ev = core.topple(work, work_od, source, x)
        t += 1
        if ev.effect is Effect.SLEEP_NOOP:
            bag.push(x)
        elif ev.effect in (Effect.MOVED_LEFT, Effect.MOVED_RIGHT):
            if work[x].is_active:
                bag.push(x)
            dest = x + 1 if ev.effect is Effect.MOVED_RIGHT else x - 1
            if dest == wlo:
                hit_lo = True
            if dest == whi:
                hit_hi = True
            if dest < vlo:
                arrived_lo = True
            elif dest > vhi:
                arrived_hi = True
            else:
                bag.push(dest)
    od = Odometer(work.lo, work_od.counts - u0_arr)
    return _RawRun(t, status, arrived_lo, arrived_hi, hit_lo, hit_hi, od)


def _run_numba(
    work: Configuration,
    source: RandomSource,
    vlo: int,
    vhi: int,
    cap: int,
    u0_arr: np.ndarray,
    watch: tuple[int, int] | None,
    stop_on_both: bool,
) -> _RawRun:
    n = len(work)
    odo = np.zeros(n, dtype=np.int64)
    wl = watch[0] - work.lo if watch is not None else -1
    wh = watch[1] - work.lo if watch is not None else -1
    t, code, alo, ahi, hlo, hhi = _kernels.fifo_stabilize(
        work.counts,
        work.asleep.view(np.uint8),
        odo,
        u0_arr,
        np.int64(work.lo),
        np.int64(vlo - work.lo),
        np.int64(vhi - work.lo),
        np.uint64(source.seed),
        np.uint64(source.threshold),
        np.int64(cap),
        np.int64(wl),
        np.int64(wh),
        stop_on_both,
    )
    return _RawRun(
        int(t), _STATUS_FROM_CODE[int(code)], bool(alo), bool(ahi), bool(hlo), bool(hhi),
        Odometer(work.lo, odo),
    )


def _run(
    config: Configuration,
    source: Source,
    region: tuple[int, int],
    policy: Policy,
    cap: int,
    u0: Odometer | None,
    engine: str,
    watch: tuple[int, int] | None = None,
    stop_on_both: bool = False,
) -> tuple[Configuration, _RawRun, int, int]:
    vlo, vhi = _validate_region(config, region)
    if cap < 0:
        raise ArwError(f"cap must be >= 0, got {cap}")
    work = config.copy()
    u0_arr = _u0_array(u0, work.lo, len(work))
    which = _pick_engine(engine, policy, source)
    if which == "numba":
        raw = _run_numba(work, source, vlo, vhi, cap, u0_arr, watch, stop_on_both)
    else:
        raw = _run_python(work, source, vlo, vhi, policy, cap, u0_arr, watch, stop_on_both)
    return work, raw, vlo, vhi


# -- public operations ---------------------------------------------------------


def stabilize(
    config: Configuration,
    source: Source,
    region: tuple[int, int],
    policy: Policy = FIFO,
    cap: int = DEFAULT_CAP,
    u0: Odometer | None = None,
    engine: str = "auto",
) -> StabilizeReport:
    """Stabilize ``region`` (inclusive interval) of ``config``.

    Particles stepping out of the region land on its halo sites and are
    never toppled again.  ``u0`` shifts every site's first stack read to
    the given offset; the returned odometer counts only this run.  Pure:
    the input configuration is not modified.
    """
    work, raw, vlo, vhi = _run(config, source, region, policy, cap, u0, engine)
    od = raw.odometer
    visited = frozenset(s for s in od.support() if vlo <= s <= vhi)
    return StabilizeReport(
        odometer=od,
        final=work,
        visited=visited,
        arrivals={vlo - 1: raw.arrived_lo, vhi + 1: raw.arrived_hi},
        topplings=raw.topplings,
        capped=raw.status is RunStatus.CAPPED,
    )


def stabilize_midstream(
    config: Configuration,
    source: Source,
    region: tuple[int, int],
    u0: Odometer,
    policy: Policy = FIFO,
    cap: int = DEFAULT_CAP,
    engine: str = "auto",
) -> StabilizeReport:
    """Stabilize with per-site stack offsets ``u0``: the first
    instruction read at site ``i`` has index ``u0[i]``, as if a previous
    run had already consumed that prefix."""
    return stabilize(config, source, region, policy=policy, cap=cap, u0=u0, engine=engine)


def stabilize_watching(
    config: Configuration,
    source: Source,
    region: tuple[int, int],
    watch: tuple[int, int],
    policy: Policy = FIFO,
    cap: int = DEFAULT_CAP,
    u0: Odometer | None = None,
    engine: str = "auto",
    stop_on_both: bool = True,
) -> WatchedRun:
    """Stabilize ``region`` while watching two sites.

    A watch site is hit when it holds an active particle initially or an
    active particle lands on it.  With ``stop_on_both`` the run halts as
    soon as both are hit (status EARLY); the final configuration is then
    a legal mid-run state, not necessarily stable.
    """
    wlo, whi = int(watch[0]), int(watch[1])
    work, raw, _, _ = _run(
        config, source, region, policy, cap, u0, engine,
        watch=(wlo, whi), stop_on_both=stop_on_both,
    )
    return WatchedRun(
        odometer=raw.odometer,
        final=work,
        topplings=raw.topplings,
        status=raw.status,
        hit_lo=raw.hit_lo,
        hit_hi=raw.hit_hi,
    )


def excursion(
    config: Configuration,
    source: Source,
    origin: int,
    limits: tuple[int, int],
    cap: int = DEFAULT_CAP,
    policy: Policy = FIFO,
    u0: Odometer | None = None,
    engine: str = "auto",
) -> ExcursionReport:
    """Topple only the currently visited interval until it stabilizes.

    The visited interval starts as ``{origin}`` (which must hold an
    active particle) and grows by one site whenever a particle lands
    just outside it.  ``limits`` bound the growth; an arrival beyond
    them ends the run with status OVERFLOW.  On STABLE the odometer is
    positive exactly on the visited interval and no particle ever left
    it.
    """
    glo, ghi = int(limits[0]), int(limits[1])
    if ghi < glo:
        raise ArwError(f"malformed limits [{glo}, {ghi}]")
    if not (glo <= origin <= ghi):
        raise ArwError(f"origin {origin} outside limits [{glo}, {ghi}]")
    if not (config.lo <= glo - 1 and ghi + 1 <= config.hi):
        raise WindowError(
            f"limits [{glo}, {ghi}] need their halo inside window [{config.lo}, {config.hi}]"
        )
    if not config[origin].is_active:
        raise IllegalToppleError(f"excursion origin {origin} has no active particle")
    if cap < 0:
        raise ArwError(f"cap must be >= 0, got {cap}")

    work = config.copy()
    u0_arr = _u0_array(u0, work.lo, len(work))
    which = _pick_engine(engine, policy, source)

    if which == "numba":
        odo = np.zeros(len(work), dtype=np.int64)
        t, code, rlo_i, rhi_i = _kernels.fifo_excursion(
            work.counts,
            work.asleep.view(np.uint8),
            odo,
            u0_arr,
            np.int64(work.lo),
            np.int64(origin - work.lo),
            np.int64(glo - work.lo),
            np.int64(ghi - work.lo),
            np.uint64(source.seed),
            np.uint64(source.threshold),
            np.int64(cap),
        )
        return ExcursionReport(
            region=(work.lo + int(rlo_i), work.lo + int(rhi_i)),
            odometer=Odometer(work.lo, odo),
            final=work,
            topplings=int(t),
            status=_STATUS_FROM_CODE[int(code)],
        )

    work_od = Odometer(work.lo, u0_arr)
    bag = _new_bag(policy)
    bag.push(origin)
    rlo = rhi = origin

    def is_active(site: int) -> bool:
        return work[site].is_active

    t = 0
    status = RunStatus.STABLE
    while bag.has_active(is_active):
        if t >= cap:
            status = RunStatus.CAPPED
            break
        x = bag.pop(is_active)
        ev = core.topple(work, work_od, source, x)
        t += 1
        if ev.effect is Effect.SLEEP_NOOP:
            bag.push(x)
        elif ev.effect in (Effect.MOVED_LEFT, Effect.MOVED_RIGHT):
            if work[x].is_active:
                bag.push(x)
            dest = x + 1 if ev.effect is Effect.MOVED_RIGHT else x - 1
            if dest < glo or dest > ghi:
                status = RunStatus.OVERFLOW
                break
            if dest < rlo:
                rlo = dest
            elif dest > rhi:
                rhi = dest
            bag.push(dest)
    od = Odometer(work.lo, work_od.counts - u0_arr)
    return ExcursionReport(
        region=(rlo, rhi),
        odometer=od,
        final=work,
        topplings=t,
        status=status,
    )


def event_ek(
    config: Configuration,
    source: Source,
    k: int,
    cap: int = DEFAULT_CAP,
    side: int = 1,
    u0: Odometer | None = None,
    policy: Policy = FIFO,
    engine: str = "auto",
) -> EkResult:
    """Containment event for the first ``k`` sites on one side of the origin.

    Wakes every sleeper on ⟦1, k⟧ (side=+1; mirrored for side=-1),
    stabilizes that interval, and reports whether no particle was sent
    to the outer boundary site k+1 (resp. -k-1).  ``holds`` is None when
    the run capped and the event is undetermined.
    """
    if k < 1:
        raise ArwError(f"k must be >= 1, got {k}")
    if side not in (1, -1):
        raise ArwError(f"side must be +1 or -1, got {side}")
    if side == 1:
        region = (1, k)
        boundary = k + 1
    else:
        region = (-k, -1)
        boundary = -k - 1
    woken = wake(config, range(region[0], region[1] + 1))
    rep = stabilize(woken, source, region, policy=policy, cap=cap, u0=u0, engine=engine)
    holds = None if rep.capped else not rep.arrivals[boundary]
    return EkResult(holds=holds, boundary=boundary, report=rep)
