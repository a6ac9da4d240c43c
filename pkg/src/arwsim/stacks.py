"""Per-site instruction stacks for activated random walk.

Every lattice site carries an infinite stack of toppling instructions
(step left, step right, or try to fall asleep).  A lone active particle
draws a sleep instruction with probability ``lam / (1 + lam)``; otherwise
it steps to a uniformly random neighbour.

Stacks are realised lazily through a counter-based hash: instruction
``index`` at ``site`` is a pure function of ``(seed, site, index)``.
There is no stream state, so every legal toppling order reads the same
stacks and any entry can be inspected at random — the property the
abelian machinery depends on.  The mixer is a splitmix64 finalizer
chain; sites are folded onto the nonnegative integers with a zig-zag
code before keying so that negative sites get distinct streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

__all__ = [
    "MIXER_ID",
    "Instruction",
    "Params",
    "RandomSource",
    "ScriptedSource",
    "sleep_probability",
    "sleep_threshold",
    "instruction_at",
    "stack_prefix",
    "zigzag",
    "site_key",
    "raw_draw",
    "derive_seed",
]

# Bumping any constant below changes every simulated trajectory, so the
# mixer carries a version tag that is embedded in CLI summaries.
MIXER_ID = "splitmix64-zigzag-v1"

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15  # 2**64 / golden ratio, odd
_SITE_SALT = 0xD1B54A32D192ED03
_DERIVE_SALT = 0x9FB21C651E98DF25
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class Instruction(IntEnum):
    """One stack entry."""

    LEFT = 0
    RIGHT = 1
    SLEEP = 2


@dataclass(frozen=True)
class Params:
    """Model parameters.

    ``lam`` is the sleep rate: while an active particle is alone on its
    site, each instruction it reads is a sleep attempt with probability
    ``lam / (1 + lam)`` and a unit step otherwise.
    """

    lam: float

    def __post_init__(self) -> None:
        lam = float(self.lam)
        if not (math.isfinite(lam) and lam >= 0.0):
            raise ValueError(f"sleep rate must be finite and >= 0, got {self.lam!r}")
        object.__setattr__(self, "lam", lam)


def sleep_probability(params: Params) -> float:
    """Probability that a single stack entry is a sleep instruction."""
    return params.lam / (1.0 + params.lam)


def sleep_threshold(params: Params) -> int:
    """Sleep cutoff for raw 64-bit draws: sleep iff ``raw < threshold``.

    Clamped to 2**64 - 1 so the value always fits in a uint64; the
    induced bias is at most 2**-64.
    """
    t = int(sleep_probability(params) * 2.0**64)
    return min(t, _MASK64)


def _fin64(z: int) -> int:
    # splitmix64 finalizer on python ints masked to 64 bits
    z ^= z >> 30
    z = (z * _MIX1) & _MASK64
    z ^= z >> 27
    z = (z * _MIX2) & _MASK64
    z ^= z >> 31
    return z


def zigzag(site: int) -> int:
    """Fold signed integers onto the nonnegative integers, injectively."""
    return 2 * site if site >= 0 else -2 * site - 1


def site_key(seed: int, site: int) -> int:
    """Per-site stream key; distinct sites get unrelated keys."""
    h = _fin64((seed + _GOLDEN) & _MASK64)
    return _fin64(((h ^ zigzag(site)) * _SITE_SALT) & _MASK64)


def raw_draw(seed: int, site: int, index: int) -> int:
    """64-bit hash of ``(seed, site, index)``, uniform on [0, 2**64)."""
    return _fin64((site_key(seed, site) + (index + 1) * _GOLDEN) & _MASK64)


def derive_seed(master: int, *words: int) -> int:
    """Derive a child seed from a master seed and integer tags.

    Used to hand independent streams to trials without coordination:
    ``derive_seed(seed, tag, k, t)`` differs for every tag/grid/trial
    combination.  Salted differently from :func:`site_key` so derived
    seeds never collide structurally with per-site keys.
    """
    h = _fin64((int(master) + _GOLDEN) & _MASK64)
    for w in words:
        h = _fin64(((h ^ zigzag(int(w))) * _DERIVE_SALT) & _MASK64)
    return h


def _classify(raw: int, threshold: int) -> Instruction:
    if raw < threshold:
        return Instruction.SLEEP
    # Direction comes from the low bit.  The top bits are correlated with
    # the threshold comparison (at lam=1 every non-sleep draw has its top
    # bit set), so they must not be reused for the direction.
    return Instruction.RIGHT if raw & 1 else Instruction.LEFT


def _fin64_np(z: np.ndarray) -> np.ndarray:
    # vectorised finalizer; uint64 arrays wrap silently
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_MIX1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_MIX2)
    z = z ^ (z >> np.uint64(31))
    return z


class RandomSource:
    """Counter-based i.i.d. instruction stacks, reproducible by seed.

    ``instruction_at`` is a pure function of its arguments; two sources
    with equal ``(seed, params)`` are interchangeable.
    """

    __slots__ = ("seed", "params", "threshold")

    def __init__(self, seed: int, params: Params | float):
        self.seed = int(seed) & _MASK64
        self.params = params if isinstance(params, Params) else Params(float(params))
        self.threshold = sleep_threshold(self.params)

    def instruction_at(self, site: int, index: int) -> Instruction:
        if index < 0:
            raise ValueError(f"stack index must be >= 0, got {index}")
        return _classify(raw_draw(self.seed, site, index), self.threshold)

    def raw_block(self, site: int, start: int, count: int) -> np.ndarray:
        """Raw 64-bit draws for indices ``start .. start+count-1`` as uint64."""
        if start < 0 or count < 0:
            raise ValueError("start and count must be >= 0")
        key = site_key(self.seed, site)
        idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            return _fin64_np(np.uint64(key) + idx * np.uint64(_GOLDEN))

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed}, lam={self.params.lam})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RandomSource):
            return NotImplemented
        return self.seed == other.seed and self.params == other.params

    def __hash__(self) -> int:
        return hash((self.seed, self.params))


class ScriptedSource:
    """Deterministic stacks for tests and worked examples.

    ``table`` maps ``(site, index)`` to an instruction; entries not in
    the table read as ``default``.  ``from_stacks`` builds the table
    from per-site instruction lists.
    """

    __slots__ = ("table", "default")

    def __init__(
        self,
        table: dict[tuple[int, int], Instruction] | None = None,
        default: Instruction = Instruction.SLEEP,
    ):
        self.table = {} if table is None else dict(table)
        self.default = Instruction(default)
        for (site, index), instr in self.table.items():
            if index < 0:
                raise ValueError(f"stack index must be >= 0, got {index} at site {site}")
            self.table[(site, index)] = Instruction(instr)

    @classmethod
    def from_stacks(
        cls,
        stacks: dict[int, list[Instruction]],
        default: Instruction = Instruction.SLEEP,
    ) -> "ScriptedSource":
        table = {
            (site, i): instr
            for site, entries in stacks.items()
            for i, instr in enumerate(entries)
        }
        return cls(table, default)

    def instruction_at(self, site: int, index: int) -> Instruction:
        if index < 0:
            raise ValueError(f"stack index must be >= 0, got {index}")
        return self.table.get((site, index), self.default)

    def __repr__(self) -> str:
        return f"ScriptedSource({len(self.table)} entries, default={self.default.name})"


Source = RandomSource | ScriptedSource


def instruction_at(source: Source, site: int, index: int) -> Instruction:
    """Instruction ``index`` of the stack at ``site``."""
    return source.instruction_at(site, index)


def stack_prefix(source: Source, site: int, length: int) -> list[Instruction]:
    """The first ``length`` instructions of the stack at ``site``."""
    if length < 0:
        raise ValueError(f"prefix length must be >= 0, got {length}")
    return [source.instruction_at(site, i) for i in range(length)]
