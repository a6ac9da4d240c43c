"""Site states, configurations, odometers, and single topplings."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from arwsim.core import (
    EMPTY,
    SLEEPING,
    ArwError,
    Configuration,
    Effect,
    IllegalToppleError,
    Odometer,
    SiteState,
    WindowError,
    active,
    config_leq,
    is_stable,
    particle_count,
    state_leq,
    topple,
    wake,
)
from arwsim.stacks import Instruction, Params, RandomSource, ScriptedSource

LEFT, RIGHT, SLEEP = Instruction.LEFT, Instruction.RIGHT, Instruction.SLEEP


# -- site states -----------------------------------------------------------------


def test_particle_count_treats_sleeper_as_one():
    assert particle_count(EMPTY) == 0
    assert particle_count(SLEEPING) == 1
    assert particle_count(active(3)) == 3


def test_site_state_invariants():
    with pytest.raises(ValueError):
        SiteState(-1)
    with pytest.raises(ValueError):
        SiteState(2, asleep=True)  # sleepers are alone by construction
    with pytest.raises(ValueError):
        SiteState(0, asleep=True)
    with pytest.raises(ValueError):
        active(0)


def test_is_active():
    assert not EMPTY.is_active
    assert not SLEEPING.is_active
    assert active(1).is_active and active(5).is_active


def test_state_order_chain():
    chain = [EMPTY, SLEEPING, active(1), active(2), active(7)]
    for i, a in enumerate(chain):
        for j, b in enumerate(chain):
            assert state_leq(a, b) == (i <= j)


# -- configurations ----------------------------------------------------------------


def test_configuration_window_and_access():
    cfg = Configuration.from_dict({-1: SLEEPING, 1: active(2)}, -2, 2)
    assert cfg.window == (-2, 2)
    assert len(cfg) == 5
    assert cfg[-1] == SLEEPING and cfg[1] == active(2) and cfg[0] == EMPTY
    assert cfg.total_particles() == 3
    assert cfg.active_sites() == [1]
    with pytest.raises(WindowError):
        cfg[3]


def test_configuration_rejects_malformed_input():
    with pytest.raises(ValueError):
        Configuration(0, [])
    with pytest.raises(ValueError):
        Configuration(0, [1, -1])
    with pytest.raises(ValueError):
        Configuration(0, [2, 0], [True, False])  # sleeping needs count == 1
    with pytest.raises(ValueError):
        Configuration(0, [1, 1], [True])
    with pytest.raises(ValueError):
        Configuration.empty(3, 2)


def test_copy_is_independent():
    cfg = Configuration.from_dict({0: active(1)}, 0, 2)
    dup = cfg.copy()
    dup[0] = EMPTY
    assert cfg[0] == active(1)


def test_text_round_trip():
    cfg = Configuration.from_states(-1, [active(2), SLEEPING, EMPTY, active(1)])
    text = cfg.to_text()
    assert text.splitlines()[1] == "0\ts"
    assert Configuration.from_text(text) == cfg


def test_from_text_accepts_comments_and_blanks():
    cfg = Configuration.from_text("# fixture\n1\t2\n\n2\ts  # trailing note\n3\t0\n")
    assert cfg.window == (1, 3)
    assert cfg[1] == active(2) and cfg[2] == SLEEPING and cfg[3] == EMPTY


@pytest.mark.parametrize(
    "text",
    [
        "",  # no sites
        "1\t1\n3\t1\n",  # gap at 2
        "1\t1\n1\t2\n",  # duplicate
        "1\tx\n",  # bad token
        "1\t-2\n",  # negative count
        "one\t1\n",  # bad site
        "1\t1\t1\n",  # wrong arity
    ],
)
def test_from_text_rejects_malformed(text):
    with pytest.raises(ArwError):
        Configuration.from_text(text)


def test_config_leq_pads_with_empty():
    a = Configuration.from_dict({0: SLEEPING}, 0, 1)
    b = Configuration.from_dict({0: active(1), 1: active(2), 2: active(1)}, -1, 2)
    assert config_leq(a, b)
    assert not config_leq(b, a)


# -- odometer ------------------------------------------------------------------------


def test_odometer_reads_zero_outside_range():
    od = Odometer.from_dict({1: 3, 2: 1})
    assert od[1] == 3 and od[2] == 1
    assert od[0] == 0 and od[100] == 0
    assert od.support() == [1, 2]
    assert od.total() == 4
    assert od.as_dict() == {1: 3, 2: 1}


def test_odometer_add_subtract_and_order():
    od = Odometer.zeros(0, 3)
    od.add(1)
    od.add(1, 2)
    bigger = Odometer.from_dict({1: 5, 3: 1}, 0, 3)
    assert od.pointwise_leq(bigger)
    assert not bigger.pointwise_leq(od)
    diff = bigger.subtract(od)
    assert diff.as_dict() == {1: 2, 3: 1}
    with pytest.raises(ValueError):
        od.subtract(bigger)  # would go negative


def test_odometer_equality_ignores_zero_padding():
    assert Odometer.from_dict({1: 2}, 0, 5) == Odometer.from_dict({1: 2}, 1, 1)
    assert Odometer.from_dict({1: 2}) != Odometer.from_dict({1: 3})


# -- wake -----------------------------------------------------------------------------


def test_wake_examples():
    cfg = Configuration.from_states(0, [SLEEPING, EMPTY, active(2)])
    woken = wake(cfg, [0, 1, 2])
    assert woken[0] == active(1)  # sleeper wakes
    assert woken[1] == EMPTY  # nothing to wake
    assert woken[2] == active(2)  # already active
    assert cfg[0] == SLEEPING  # input untouched


def test_wake_off_window_is_an_error():
    cfg = Configuration.empty(0, 2)
    with pytest.raises(WindowError):
        wake(cfg, [3])


def test_wake_moves_up_in_the_state_order():
    cfg = Configuration.from_states(0, [SLEEPING, SLEEPING, active(1)])
    assert config_leq(cfg, wake(cfg, [0, 1, 2]))


# -- topple ---------------------------------------------------------------------------


def test_topple_sleep_alone_falls_asleep():
    cfg = Configuration.from_dict({0: active(1)}, -1, 1)
    od = Odometer.zeros(-1, 1)
    ev = topple(cfg, od, ScriptedSource.from_stacks({0: [SLEEP]}), 0)
    assert ev.effect is Effect.FELL_ASLEEP and ev.instruction is SLEEP
    assert cfg[0] == SLEEPING
    assert od[0] == 1


def test_topple_sleep_on_crowded_site_is_a_consumed_noop():
    cfg = Configuration.from_dict({0: active(2)}, -1, 1)
    od = Odometer.zeros(-1, 1)
    src = ScriptedSource.from_stacks({0: [SLEEP, RIGHT]})
    ev = topple(cfg, od, src, 0)
    assert ev.effect is Effect.SLEEP_NOOP
    assert cfg[0] == active(2)  # unchanged, but the instruction is gone
    assert od[0] == 1
    ev = topple(cfg, od, src, 0)  # next topple reads index 1
    assert ev.effect is Effect.MOVED_RIGHT
    assert cfg[0] == active(1) and cfg[1] == active(1)


def test_topple_step_onto_sleeper_wakes_it():
    cfg = Configuration.from_dict({0: active(1), 1: SLEEPING}, -1, 2)
    od = Odometer.zeros(-1, 2)
    ev = topple(cfg, od, ScriptedSource.from_stacks({0: [RIGHT]}), 0)
    assert ev.effect is Effect.MOVED_RIGHT
    assert cfg[0] == EMPTY
    assert cfg[1] == active(2)  # arrival + woken sleeper


def test_topple_requires_an_active_particle():
    od = Odometer.zeros(0, 2)
    src = ScriptedSource()
    for state in (EMPTY, SLEEPING):
        cfg = Configuration.from_dict({1: state}, 0, 2)
        with pytest.raises(IllegalToppleError):
            topple(cfg, od, src, 1)


def test_topple_step_out_of_window_is_an_error():
    cfg = Configuration.from_dict({0: active(1)}, 0, 1)
    od = Odometer.zeros(0, 1)
    with pytest.raises(WindowError):
        topple(cfg, od, ScriptedSource.from_stacks({0: [LEFT]}), 0)


def test_topple_reads_index_from_odometer():
    # with the odometer preset to 1 the site reads its second instruction
    cfg = Configuration.from_dict({0: active(1)}, -1, 1)
    od = Odometer.from_dict({0: 1}, -1, 1)
    src = ScriptedSource.from_stacks({0: [SLEEP, RIGHT]})
    ev = topple(cfg, od, src, 0)
    assert ev.effect is Effect.MOVED_RIGHT
    assert od[0] == 2


def test_topple_conserves_particles():
    rng = np.random.default_rng(7)
    cfg = Configuration(0, rng.integers(0, 3, 10))
    od = Odometer.zeros(0, 9)
    src = RandomSource(3, Params(1.0))
    total = cfg.total_particles()
    for _ in range(200):
        actives = cfg.active_sites()
        inner = [s for s in actives if 0 < s < 9]
        if not inner:
            break
        topple(cfg, od, src, inner[0])
        assert cfg.total_particles() == total


def test_is_stable():
    cfg = Configuration.from_states(0, [EMPTY, SLEEPING, active(1)])
    assert is_stable(cfg, [0, 1])
    assert not is_stable(cfg, [0, 1, 2])


@given(st.integers(0, 4), st.booleans())
def test_state_leq_is_reflexive_and_total(n, asleep):
    s = SiteState(1, asleep=True) if asleep else SiteState(n)
    assert state_leq(s, s)
    assert state_leq(EMPTY, s)
