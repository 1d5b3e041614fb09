"""Active global address space: global ids mapped to their owning locality."""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass
from typing import Any

from .errors import QueryError, ResolutionError

_now = time.perf_counter_ns
_ident = threading.get_ident


class GlobalId(int):
    """64-bit global object id; 0 is reserved as invalid."""

    __slots__ = ()

    def __new__(cls, value):
        value = int(value)
        if not 0 <= value < 1 << 64:
            raise ValueError(f"gid out of 64-bit range: {value}")
        return super().__new__(cls, value)

    @property
    def value(self):
        return int(self)

    def __repr__(self):
        return f"GlobalId({int(self)})"

    def __str__(self):
        return f"gid:{int(self):#x}"


INVALID_GID = GlobalId(0)


@dataclass(frozen=True, slots=True)
class AgasEntry:
    gid: GlobalId
    owner: int
    local_ref: Any
    generation: int = 0


class AgasClock:
    """Wall time spent inside AGAS entry points, summed over calling threads.

    Each thread only ever writes its own slot, so accumulation needs no lock;
    resets move a baseline instead of touching the slots.
    """

    def __init__(self):
        self._slots: dict[int, int] = {}
        self._baseline = 0
        self._reset_lock = threading.Lock()

    def add(self, ns: int):
        tid = _ident()
        slots = self._slots
        slots[tid] = slots.get(tid, 0) + ns

    def _raw(self):
        return sum(list(self._slots.values()))

    def read(self, reset=False) -> int:
        with self._reset_lock:
            raw = self._raw()
            value = raw - self._baseline
            if reset:
                self._baseline = raw
        return value

    def read_threads(self, idents) -> int:
        """Raw cumulative time of the given threads (ignores resets)."""
        slots = self._slots
        return sum(slots.get(i, 0) for i in idents)

    @property
    def cumulative_agas_ns(self):
        return self.read()


class Agas:
    """gid -> :class:`AgasEntry` registry.

    Entries are immutable and replaced whole, so lookups need no lock; writers
    serialize on one of ``stripes`` locks chosen by gid.
    """

    def __init__(self, num_localities: int, stripes: int = 16):
        if num_localities < 1:
            raise ValueError("num_localities must be >= 1")
        self.num_localities = num_localities
        self._table: dict[int, AgasEntry] = {}
        self._locks = [threading.Lock() for _ in range(stripes)]
        self._next = itertools.count(1)
        self.clock = AgasClock()

    def _check_locality(self, loc):
        if not (isinstance(loc, int) and 0 <= loc < self.num_localities):
            raise QueryError(f"unknown locality {loc!r} ({self.num_localities} localities)")

    def _lock_for(self, gid):
        return self._locks[gid % len(self._locks)]

    def register_object(self, owner: int, local_ref: Any) -> GlobalId:
        t0 = _now()
        try:
            self._check_locality(owner)
            gid = GlobalId(next(self._next))
            with self._lock_for(gid):
                self._table[gid] = AgasEntry(gid, owner, local_ref, 0)
            return gid
        finally:
            self.clock.add(_now() - t0)

    def resolve(self, gid: GlobalId) -> tuple[int, Any]:
        t0 = _now()
        entry = self._table.get(gid)
        self.clock.add(_now() - t0)
        if entry is None:
            raise ResolutionError(f"{gid} is not registered")
        return entry.owner, entry.local_ref

    def resolve_many(self, gids) -> list[tuple[int, Any]]:
        """Resolve a batch of gids under a single pair of clock reads."""
        get = self._table.get
        t0 = _now()
        entries = list(map(get, gids))
        self.clock.add(_now() - t0)
        out = []
        for g, e in zip(gids, entries):
            if e is None:
                raise ResolutionError(f"{g} is not registered")
            out.append((e.owner, e.local_ref))
        return out

    def entry(self, gid: GlobalId) -> AgasEntry:
        entry = self._table.get(gid)
        if entry is None:
            raise ResolutionError(f"{gid} is not registered")
        return entry

    def migrate(self, gid: GlobalId, dest: int):
        t0 = _now()
        try:
            self._check_locality(dest)
            with self._lock_for(gid):
                old = self._table.get(gid)
                if old is None:
                    raise ResolutionError(f"{gid} is not registered")
                self._table[gid] = AgasEntry(old.gid, dest, old.local_ref, old.generation + 1)
        finally:
            self.clock.add(_now() - t0)

    def unregister(self, gid: GlobalId):
        t0 = _now()
        try:
            with self._lock_for(gid):
                if self._table.pop(gid, None) is None:
                    raise ResolutionError(f"{gid} is not registered")
        finally:
            self.clock.add(_now() - t0)

    def __len__(self):
        return len(self._table)

    def overhead_percent(self, busy_ns: int, reset: bool = False) -> float:
        """100 * AGAS time / total worker busy time (0 when nothing was busy)."""
        agas_ns = self.clock.read(reset)
        if busy_ns <= 0:
            return 0.0
        return min(100.0, 100.0 * agas_ns / busy_ns)


def agas_overhead_percent(runtime_stats, agas: Agas, reset: bool = False) -> float:
    """AGAS overhead against the busy time recorded in ``runtime_stats``."""
    return agas.overhead_percent(runtime_stats.total_busy_ns, reset)
