import logging
import time

import pytest
from hypothesis import given, settings, strategies as st

from amtscope.errors import ConfigurationError
from amtscope.observer import Observer, Policy, TimerEvent
from amtscope.runtime import start_runtime

MS = 1_000_000


def feed(obs, task_id, label, *steps):
    """``steps`` are (kind, ms offset from the previous event)."""
    t = 0
    for kind, dt_ms in steps:
        t += dt_ms * MS
        obs.record_timer(TimerEvent(task_id, label, kind, t))


def test_start_stop():
    obs = Observer()
    feed(obs, 1, "work", ("start", 0), ("stop", 5))
    p = obs.profiles()["work"]
    assert (p.calls, p.total_ns) == (1, 5 * MS)


def test_yield_gap_is_excluded():
    obs = Observer()
    feed(obs, 1, "work", ("start", 0), ("yield", 1), ("resume", 3), ("stop", 1))
    assert obs.profiles()["work"].total_ns == 2 * MS


def test_stop_without_start_is_logged(caplog):
    obs = Observer()
    with caplog.at_level(logging.WARNING):
        feed(obs, 9, "work", ("stop", 1))
    assert obs.sequencing_errors == 1
    assert "sequencing" in caplog.text
    assert obs.profiles() == {}


@pytest.mark.parametrize("steps", [
    [("start", 0), ("start", 1)],
    [("start", 0), ("resume", 1)],
    [("start", 0), ("yield", 1), ("yield", 1)],
    [("start", 0), ("yield", 1), ("stop", 1)],
    [("resume", 0)],
    [("start", 0), ("bogus", 1)],
])
def test_bad_sequences_are_counted(steps):
    obs = Observer()
    feed(obs, 1, "t", *steps)
    assert obs.sequencing_errors == 1


@given(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50)), min_size=1, max_size=6))
def test_inclusive_time_sums_running_segments(segments):
    # (run, wait) pairs: run for `run` ms, then yield and wait `wait` ms
    obs = Observer()
    steps = [("start", 0)]
    for k, (run, wait) in enumerate(segments):
        if k:
            steps.append(("resume", segments[k - 1][1]))
        last = k == len(segments) - 1
        steps.append(("stop" if last else "yield", run))
    feed(obs, 1, "t", *steps)
    assert obs.profiles()["t"].total_ns == sum(r for r, _ in segments) * MS
    assert obs.sequencing_errors == 0


def test_runtime_timers_and_profile_conservation():
    rt = start_runtime(2, 2)
    obs = Observer(rt)

    def gen_task():
        yield
        yield rt.spawn(0, lambda: time.sleep(0.002), label="inner")
        return 1

    handles = [rt.spawn(i % 2, lambda: time.sleep(0.001), label="sleep") for i in range(20)]
    handles.append(rt.spawn(0, gen_task, label="gen"))
    for h in handles:
        rt.wait(h)
    stats = rt.shutdown()
    obs.stop()
    profiles = obs.profiles()
    assert profiles["sleep"].calls == 20
    assert profiles["gen"].calls == 1 and profiles["inner"].calls == 1
    assert obs.sequencing_errors == 0
    assert sum(p.total_ns for p in profiles.values()) <= stats.total_busy_ns


def test_sampler_ticks_at_period():
    rt = start_runtime(1, 1)
    obs = Observer(rt, timers=False)
    stream = obs.run_periodic_sampler(100 * MS, ["runtime/idle-rate"])
    time.sleep(1.05)
    obs.stop()
    rt.shutdown()
    assert 9 <= len(stream) <= 11
    gaps = [b - a for a, b in zip(stream.ticks, stream.ticks[1:])]
    assert abs(sum(gaps) / len(gaps) - 100 * MS) < 20 * MS
    assert len(stream.samples) == len(stream)


def test_sampler_without_queries_samples_energy_only():
    rt = start_runtime(1, 1)
    obs = Observer(rt)
    stream = obs.run_periodic_sampler(20 * MS)
    time.sleep(0.2)
    obs.stop()
    rt.shutdown()
    assert stream.samples == []
    values = [e.joules for e in stream.energy]
    assert values and values == sorted(values)


def test_sampler_rejects_bad_configuration():
    rt = start_runtime(1, 1)
    obs = Observer(rt)
    try:
        with pytest.raises(ConfigurationError):
            obs.run_periodic_sampler(0)
        with pytest.raises(Exception):
            obs.run_periodic_sampler(10 * MS, ["no/such"])
    finally:
        obs.stop()
        rt.shutdown()


def test_sampler_csv(tmp_path):
    rt = start_runtime(2, 1)
    obs = Observer(rt)
    stream = obs.run_periodic_sampler(10 * MS, ["runtime/steals"])
    time.sleep(0.1)
    obs.stop()
    rt.shutdown()
    path = tmp_path / "s.csv"
    stream.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "tick_ns,query,locality,value"
    assert len(lines) == 1 + len(stream.rows())


def test_policies_run_in_registration_order():
    obs = Observer()
    order = []
    for i in range(2):
        obs.register_policy(Policy("E", lambda o, i=i: order.append(i)))
    obs.emit_event("E")
    assert order == [0, 1]


def test_unemitted_event_and_no_listeners():
    obs = Observer()
    p = Policy("never", lambda o: None)
    obs.register_policy(p)
    obs.emit_event("other")
    assert p.invocations == 0


def test_raising_action_does_not_stop_the_rest():
    obs = Observer()
    seen = []

    def bad(o):
        raise RuntimeError("x")

    first = Policy("E", bad)
    obs.register_policy(first)
    obs.register_policy(Policy("E", lambda o: seen.append(1)))
    obs.emit_event("E")
    assert seen == [1]
    assert len(first.errors) == 1 and first.invocations == 1


def test_action_can_tune_parameters():
    obs = Observer()
    obs.parameters["chunk"] = 1
    obs.register_policy(Policy("grow", lambda o: o.parameters.update(chunk=o.parameters["chunk"] * 2)))
    obs.emit_event("grow")
    obs.emit_event("grow")
    assert obs.parameters["chunk"] == 4


def test_periodic_policy():
    obs = Observer()
    p = Policy(200 * MS, lambda o: None)
    obs.register_policy(p)
    time.sleep(1.05)
    obs.stop()
    assert 4 <= p.invocations <= 6


def test_invalid_policy_triggers():
    obs = Observer()
    with pytest.raises(ConfigurationError):
        obs.register_policy(Policy("", lambda o: None))
    with pytest.raises(ConfigurationError):
        obs.register_policy(Policy(10, lambda o: None))


@settings(max_examples=25)
@given(st.lists(st.booleans(), min_size=1, max_size=12), st.integers(1, 20))
def test_policy_order_is_deterministic(raises, emissions):
    obs = Observer()
    order = []

    def action(i, bad):
        def run(o):
            order.append(i)
            if bad:
                raise ValueError(i)
        return run

    for i, bad in enumerate(raises):
        obs.register_policy(Policy("E", action(i, bad)))
    for _ in range(emissions):
        obs.emit_event("E")
    assert order == list(range(len(raises))) * emissions
