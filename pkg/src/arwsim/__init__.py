"""Activated random walk on the integer line: simulator and experiments.

Active particles perform simple random walks and try to fall asleep at
rate lam while alone; sleeping particles wake when visited.  The
dynamics are realized site-wise through per-site instruction stacks, so
stabilization outcomes are independent of the toppling order and can be
replayed midstream.  On top of the engines sit the Monte-Carlo
experiments used to probe the critical density and explosivity.
"""

__version__ = "0.1.0"

from .core import (
    ArwError,
    Configuration,
    EMPTY,
    Effect,
    IllegalToppleError,
    Odometer,
    SLEEPING,
    SiteState,
    ToppleEvent,
    WindowError,
    active,
    config_leq,
    is_stable,
    particle_count,
    state_leq,
    topple,
    wake,
)
from .stacks import (
    MIXER_ID,
    Instruction,
    Params,
    RandomSource,
    ScriptedSource,
    derive_seed,
    instruction_at,
    sleep_probability,
    stack_prefix,
)
from .stabilizer import (
    DEFAULT_CAP,
    EkResult,
    ExcursionReport,
    FIFO,
    Fifo,
    Leftmost,
    RandomQueue,
    Rightmost,
    RunStatus,
    StabilizeReport,
    WatchedRun,
    event_ek,
    excursion,
    stabilize,
    stabilize_midstream,
    stabilize_watching,
)
from .initdist import (
    EnvSpec,
    FiniteMarginal,
    IidSpec,
    MarkovModSpec,
    PeriodicPhaseSpec,
    PoissonMarginal,
    SleepMix,
    empirical_density,
    hypothesis_check,
    mean_density,
    parse_env_spec,
    sample_configuration,
    weighted_profile,
)
from .experiments import (
    Capped,
    DecayFit,
    NucleationReport,
    ReachedBoth,
    ScanResult,
    Stabilized,
    cesaro_check,
    clopper_pearson,
    ek_curve,
    estimate_rho_c,
    explode_curve,
    fit_decay,
    nucleate_ensemble,
    nucleation_trial,
    reach_trial,
    x_scan,
    y_scan,
)

__all__ = [name for name in dir() if not name.startswith("_")]
