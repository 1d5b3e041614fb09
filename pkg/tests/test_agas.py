import random
import threading

import pytest
from hypothesis import given, settings, strategies as st

from amtscope.agas import INVALID_GID, Agas, GlobalId, agas_overhead_percent
from amtscope.errors import QueryError, ResolutionError
from amtscope.runtime import RuntimeStats, WorkerStats, start_runtime


def test_register_gives_distinct_nonzero_gids():
    agas = Agas(4)
    a = agas.register_object(0, "a")
    b = agas.register_object(1, "b")
    assert a.value != 0 and b.value != 0 and a != b
    assert agas.resolve(a) == (0, "a")
    assert agas.resolve(b) == (1, "b")


def test_register_on_unknown_locality():
    with pytest.raises(QueryError):
        Agas(4).register_object(7, None)


def test_resolve_invalid_gid():
    agas = Agas(1)
    with pytest.raises(ResolutionError):
        agas.resolve(INVALID_GID)
    with pytest.raises(ValueError):
        GlobalId(-1)


def test_migrate_then_resolve():
    agas = Agas(4)
    g = agas.register_object(0, "x")
    agas.migrate(g, 3)
    assert agas.resolve(g) == (3, "x")
    assert agas.entry(g).generation == 1


def test_migrate_to_current_owner_bumps_generation():
    agas = Agas(2)
    g = agas.register_object(1, None)
    agas.migrate(g, 1)
    entry = agas.entry(g)
    assert entry.owner == 1 and entry.generation == 1


def test_hundred_random_migrations():
    agas = Agas(4)
    g = agas.register_object(0, None)
    rng = random.Random(5)
    dests = [rng.randrange(4) for _ in range(100)]
    for d in dests:
        agas.migrate(g, d)
    assert agas.entry(g).generation == 100
    assert agas.resolve(g)[0] == dests[-1]


def test_unregister():
    agas = Agas(1)
    g = agas.register_object(0, None)
    agas.unregister(g)
    assert len(agas) == 0
    with pytest.raises(ResolutionError):
        agas.resolve(g)
    with pytest.raises(ResolutionError):
        agas.unregister(g)


def test_resolve_many_matches_resolve():
    agas = Agas(3)
    gids = [agas.register_object(i % 3, i) for i in range(20)]
    assert agas.resolve_many(gids) == [agas.resolve(g) for g in gids]
    with pytest.raises(ResolutionError):
        agas.resolve_many(gids + [GlobalId(10**6)])


def _stats(busy_ns):
    return RuntimeStats(1, 1, busy_ns, (WorkerStats(0, 0, busy_ns, 0, 0, 0),))


def test_overhead_is_zero_without_agas_calls():
    assert agas_overhead_percent(_stats(10**9), Agas(1)) == 0.0


def test_overhead_arithmetic():
    agas = Agas(1)
    agas.clock.add(10_000_000)  # 10 ms
    assert agas_overhead_percent(_stats(10 * 10**9), agas) == pytest.approx(0.1)


def test_overhead_reset_and_cap():
    agas = Agas(1)
    agas.clock.add(5_000)
    assert agas.overhead_percent(1_000, reset=True) == 100.0
    assert agas.overhead_percent(1_000) == 0.0
    assert agas.overhead_percent(0) == 0.0


@settings(max_examples=50)
@given(st.lists(st.integers(0, 10**9), max_size=20), st.integers(0, 10**12))
def test_overhead_in_range(adds, busy):
    agas = Agas(1)
    for ns in adds:
        agas.clock.add(ns)
    pct = agas.overhead_percent(busy)
    assert 0.0 <= pct <= 100.0
    assert (pct > 0) == (sum(adds) > 0 and busy > 0)


def test_per_locality_overhead_counter():
    rt = start_runtime(2, 1)
    try:
        gids = [rt.agas.register_object(i % 2, i) for i in range(8)]
        handles = [rt.spawn(i % 2, lambda: rt.agas.resolve_many(gids)) for i in range(50)]
        for h in handles:
            rt.wait(h)
        samples = rt.counters.read_counter("agas/overhead")
        assert len(samples) == 2
        assert all(0 <= s.value <= 10_000 for s in samples)
    finally:
        rt.shutdown()


def test_single_owner_under_concurrent_migration():
    agas = Agas(4)
    gids = [agas.register_object(0, None) for _ in range(16)]
    errors = []

    def mover(seed):
        rng = random.Random(seed)
        for _ in range(500):
            agas.migrate(rng.choice(gids), rng.randrange(4))

    def reader():
        for _ in range(2000):
            for g in gids:
                owner, _ = agas.resolve(g)
                if not 0 <= owner < 4:
                    errors.append(owner)

    threads = [threading.Thread(target=mover, args=(s,)) for s in range(4)]
    threads.append(threading.Thread(target=reader))
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert sum(agas.entry(g).generation for g in gids) == 2000


def test_single_thread_sees_generations_in_order():
    agas = Agas(2)
    g = agas.register_object(0, None)
    seen = []
    done = threading.Event()

    def watch():
        while not done.is_set():
            seen.append(agas.entry(g).generation)

    t = threading.Thread(target=watch)
    t.start()
    for i in range(300):
        agas.migrate(g, i % 2)
    done.set()
    t.join()
    assert seen == sorted(seen)
