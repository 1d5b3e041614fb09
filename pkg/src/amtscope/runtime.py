"""Multi-locality task runtime with futures, work stealing and idle accounting.

Localities are in-process partitions of worker threads.  A task spawned on
a locality is queued on one of that locality's workers once all of its
dependencies have completed; idle workers steal from random peers of the
same locality, never across localities.

A task body is called with the payloads of its dependencies as positional
arguments.  If the body returns a generator, the task becomes a coroutine:
``yield`` suspends it and requeues it; ``value = yield handle`` suspends it
until ``handle`` completes.
"""

from __future__ import annotations

import enum
import inspect
import itertools
import logging
import random
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .agas import Agas
from .counters import CounterRegistry, fixed_point_percent
from .energy import EnergySource
from .errors import ConfigurationError, DependencyError, LifecycleError, QueryError

logger = logging.getLogger(__name__)

_now = time.perf_counter_ns
_tls = threading.local()


class TaskState(enum.Enum):
    PENDING = "pending"
    RUNNING = "running"
    YIELDED = "yielded"
    COMPLETED = "completed"


class TaskHandle:
    """Future for one task's payload."""

    __slots__ = (
        "id", "label", "locality", "runtime", "state", "start_ns", "end_ns",
        "_work", "_deps", "_remaining", "_callbacks", "_result", "_exc",
        "_gen", "_send", "_throw", "__weakref__",
    )

    def __init__(self, runtime, task_id, locality, work, deps, label):
        self.id = task_id
        self.label = label
        self.locality = locality
        self.runtime = runtime
        self.state = TaskState.PENDING
        self.start_ns = None
        self.end_ns = None
        self._work = work
        self._deps = deps
        self._remaining = 0
        self._callbacks = []
        self._result = None
        self._exc = None
        self._gen = None
        self._send = None
        self._throw = None

    def done(self):
        return self.state is TaskState.COMPLETED

    def failed(self):
        return self.state is TaskState.COMPLETED and self._exc is not None

    def exception(self):
        return self._exc

    def result(self, timeout=None):
        return self.runtime.wait(self, timeout)

    def __repr__(self):
        return f"<TaskHandle #{self.id} {self.label!r} on {self.locality} {self.state.value}>"


def _label_of(work):
    return getattr(work, "__qualname__", None) or getattr(work, "__name__", None) or type(work).__name__


class Worker:
    """One scheduler thread.

    ``_acct`` is ``(busy_ns, idle_ns, is_busy, since_ns)``; it is only written by
    the worker thread and always replaced as a whole, so readers never see a
    torn state.
    """

    def __init__(self, runtime, locality, index, seed):
        self.runtime = runtime
        self.locality = locality
        self.index = index
        self.id = locality.id * runtime.workers_per_locality + index
        self.deque = deque()
        self.rng = random.Random(seed)
        self.steals = 0
        self.tasks_completed = 0
        self.epoch_start = None
        self._acct = (0, 0, False, 0)
        self.thread = None

    def snapshot(self, now=None):
        """``(busy_ns, idle_ns)`` including the interval still open at ``now``."""
        if now is None:
            now = _now()
        busy, idle, is_busy, since = self._acct
        open_ns = now - since
        if open_ns > 0:
            if is_busy:
                busy += open_ns
            else:
                idle += open_ns
        return busy, idle

    @property
    def busy_ns(self):
        return self.snapshot()[0]

    @property
    def idle_ns(self):
        return self.snapshot()[1]

    def _find(self):
        try:
            return self.deque.pop()
        except IndexError:
            pass
        peers = self.locality.workers
        n = len(peers)
        if n > 1:
            start = self.rng.randrange(n - 1)
            for k in range(n - 1):
                victim = peers[(self.index + 1 + (start + k) % (n - 1)) % n]
                try:
                    task = victim.deque.popleft()
                except IndexError:
                    continue
                self.steals += 1
                return task
        return None

    def run(self):
        _tls.worker = self
        rt = self.runtime
        cond = self.locality.cond
        peers = self.locality.workers
        idle_wait = rt.idle_wait_s
        while True:
            task = self._find()
            if task is not None:
                busy, idle, is_busy, since = self._acct
                if not is_busy:
                    now = _now()
                    self._acct = (busy, idle + now - since, True, now)
                self._execute(task)
                continue
            busy, idle, is_busy, since = self._acct
            if is_busy:
                now = _now()
                self._acct = (busy + now - since, idle, False, now)
            with cond:
                if rt._stopping:
                    break
                if not any(p.deque for p in peers):
                    cond.wait(idle_wait)
        busy, idle, is_busy, since = self._acct
        now = _now()
        if is_busy:
            self._acct = (busy + now - since, idle, False, now)
        _tls.worker = None

    def _execute(self, task):
        rt = self.runtime
        listener = rt.listener
        now = _now()
        if task.start_ns is None:
            task.start_ns = now
            kind = "start"
        else:
            kind = "resume"
        task.state = TaskState.RUNNING
        if listener is not None:
            listener(task.id, task.label, kind, now)
        try:
            gen = task._gen
            if gen is None:
                deps = task._deps
                if deps:
                    for d in deps:
                        if d._exc is not None:
                            raise DependencyError(f"dependency {d!r} failed") from d._exc
                    out = task._work(*[d._result for d in deps])
                else:
                    out = task._work()
                if not inspect.isgenerator(out):
                    self._finish(task, out, None, listener)
                    return
                task._gen = gen = out
            send, throw = task._send, task._throw
            task._send = task._throw = None
            try:
                if throw is not None:
                    yielded = gen.throw(throw)
                else:
                    yielded = gen.send(send)
            except StopIteration as stop:
                self._finish(task, stop.value, None, listener)
                return
            task.state = TaskState.YIELDED
            if listener is not None:
                listener(task.id, task.label, "yield", _now())
            rt._suspend(task, yielded)
        except Exception as exc:
            self._finish(task, None, exc, listener)

    def _finish(self, task, result, exc, listener):
        now = _now()
        task.end_ns = now
        if listener is not None:
            listener(task.id, task.label, "stop", now)
        task._result = result
        task._exc = exc
        task._deps = None
        task._work = None
        task._gen = None
        self.tasks_completed += 1
        self.runtime._complete(task)


class Locality:
    def __init__(self, runtime, loc_id, workers, seed):
        self.id = loc_id
        self.runtime = runtime
        self.cond = threading.Condition(threading.Lock())
        self.workers = []
        self.workers.extend(
            Worker(runtime, self, w, seed * 1_000_003 + loc_id * 1009 + w) for w in range(workers)
        )
        self._rr = itertools.count()
        self._reset_lock = threading.Lock()
        self._idle_base = [(0, 0)] * workers
        self._steal_base = 0
        self._agas_base = (0, 0)

    @property
    def steal_counter(self):
        return sum(w.steals for w in self.workers)

    def activity_ns(self, now=None):
        """Mean ``(busy_ns, idle_ns)`` over this locality's workers since the epoch."""
        if now is None:
            now = self.runtime._clock()
        snaps = [w.snapshot(now) for w in self.workers]
        n = len(snaps)
        return sum(s[0] for s in snaps) / n, sum(s[1] for s in snaps) / n

    def idle_rate(self, reset=False) -> float:
        now = self.runtime._clock()
        with self._reset_lock:
            snaps = [w.snapshot(now) for w in self.workers]
            rates = []
            for (busy, idle), (b0, i0) in zip(snaps, self._idle_base):
                window = (busy - b0) + (idle - i0)
                rates.append((idle - i0) / window if window > 0 else 1.0)
            if reset:
                self._idle_base = snaps
        return 100.0 * min(1.0, max(0.0, sum(rates) / len(rates)))

    def agas_overhead_percent(self, reset=False) -> float:
        """AGAS time spent on this locality's worker threads over their busy time."""
        rt = self.runtime
        now = rt._clock()
        idents = [w.thread.ident for w in self.workers if w.thread is not None]
        with self._reset_lock:
            agas_ns = rt.agas.clock.read_threads(idents)
            busy_ns = sum(w.snapshot(now)[0] for w in self.workers)
            a0, b0 = self._agas_base
            if reset:
                self._agas_base = (agas_ns, busy_ns)
        if busy_ns - b0 <= 0:
            return 0.0
        return min(100.0, 100.0 * (agas_ns - a0) / (busy_ns - b0))

    def steals(self, reset=False) -> int:
        with self._reset_lock:
            total = self.steal_counter
            value = total - self._steal_base
            if reset:
                self._steal_base = total
        return value


@dataclass(frozen=True)
class WorkerStats:
    locality: int
    worker: int
    busy_ns: int
    idle_ns: int
    tasks_completed: int
    steals: int


@dataclass(frozen=True)
class RuntimeStats:
    localities: int
    workers_per_locality: int
    wall_ns: int
    workers: tuple = field(default_factory=tuple)

    @property
    def total_busy_ns(self):
        return sum(w.busy_ns for w in self.workers)

    @property
    def total_idle_ns(self):
        return sum(w.idle_ns for w in self.workers)

    @property
    def tasks_completed(self):
        return sum(w.tasks_completed for w in self.workers)

    def steals(self, locality):
        return sum(w.steals for w in self.workers if w.locality == locality)

    def idle_rate(self, locality):
        rates = [w.idle_ns / (w.busy_ns + w.idle_ns) for w in self.workers
                 if w.locality == locality and w.busy_ns + w.idle_ns > 0]
        return 100.0 * sum(rates) / len(rates) if rates else 100.0


class Runtime:
    """Scheduler handle returned by :func:`start_runtime`.

    ``listener``, when set, is called as ``listener(task_id, label, kind, ts_ns)``
    for every start/yield/resume/stop transition, on the worker thread.
    """

    def __init__(self, localities: int, workers_per_locality: int, seed: int = 0,
                 energy: Optional[EnergySource] = None, idle_wait_s: float = 0.05):
        if not isinstance(localities, int) or localities < 1:
            raise ConfigurationError(f"localities must be an int >= 1, got {localities!r}")
        if not isinstance(workers_per_locality, int) or workers_per_locality < 1:
            raise ConfigurationError(
                f"workers_per_locality must be an int >= 1, got {workers_per_locality!r}"
            )
        self.num_localities = localities
        self.workers_per_locality = workers_per_locality
        self.seed = seed
        self.idle_wait_s = idle_wait_s
        self.listener: Optional[Callable[[int, str, str, int], None]] = None
        self.localities = [Locality(self, i, workers_per_locality, seed) for i in range(localities)]
        self._ids = itertools.count(1)
        self._lock = threading.Lock()
        self._drained = threading.Condition(self._lock)
        self._outstanding = 0
        self._started = False
        self._draining = False
        self._closed = False
        self._stopping = False
        self._epoch = None
        self._stopped_at = None
        self.agas = Agas(localities)
        self.counters = CounterRegistry(localities)
        self.energy = energy if energy is not None else EnergySource()
        self._install_builtin_counters()

    # lifecycle -----------------------------------------------------------

    def start(self):
        if self._started:
            raise LifecycleError("runtime already started")
        self._started = True
        self._epoch = _now()
        for loc in self.localities:
            for w in loc.workers:
                w.epoch_start = self._epoch
                w._acct = (0, 0, False, self._epoch)
        self.energy.bind(self._activity_seconds, self.num_localities)
        for loc in self.localities:
            for w in loc.workers:
                w.thread = threading.Thread(
                    target=w.run, name=f"amt-L{loc.id}-W{w.index}", daemon=True
                )
                w.thread.start()
        return self

    def __enter__(self):
        if not self._started:
            self.start()
        return self

    def __exit__(self, *exc):
        if not self._closed and not self._draining:
            self.shutdown()
        return False

    def _clock(self):
        return self._stopped_at if self._stopped_at is not None else _now()

    @property
    def all_workers(self):
        return [w for loc in self.localities for w in loc.workers]

    def shutdown(self, timeout: Optional[float] = None) -> RuntimeStats:
        """Drain every outstanding task, stop the workers and return final stats."""
        if not self._started:
            raise LifecycleError("runtime was never started")
        with self._lock:
            if self._draining or self._closed:
                raise LifecycleError("runtime is already shut down")
            self._draining = True
            drained = self._drained.wait_for(lambda: self._outstanding == 0, timeout)
            self._closed = True
            pending = self._outstanding
        self._stopping = True
        for loc in self.localities:
            with loc.cond:
                loc.cond.notify_all()
        me = threading.current_thread()
        for w in self.all_workers:
            if w.thread is not me:
                w.thread.join()
        self._stopped_at = _now()
        if not drained:
            raise LifecycleError(f"shutdown timed out with {pending} tasks outstanding")
        return self.stats()

    @property
    def running(self):
        return self._started and not self._closed

    # tasks ---------------------------------------------------------------

    def _check_locality(self, locality):
        if not (isinstance(locality, int) and 0 <= locality < self.num_localities):
            raise QueryError(f"unknown locality {locality!r} ({self.num_localities} localities)")

    def spawn(self, locality: int, work: Callable, deps=(), label: Optional[str] = None) -> TaskHandle:
        """Queue ``work`` on ``locality``; it runs once every handle in ``deps`` completed."""
        self._check_locality(locality)
        deps = tuple(deps)
        for d in deps:
            if not isinstance(d, TaskHandle) or d.runtime is not self:
                raise ValueError(f"invalid dependency {d!r}")
        task = TaskHandle(self, next(self._ids), locality, work, deps,
                          label if label is not None else _label_of(work))
        with self._lock:
            if not self._started or self._closed:
                raise LifecycleError("spawn on a runtime that is not running")
            if self._draining:
                worker = getattr(_tls, "worker", None)
                if worker is None or worker.runtime is not self:
                    raise LifecycleError("spawn during shutdown")
            self._outstanding += 1
            remaining = 0
            for d in deps:
                if d.state is not TaskState.COMPLETED:
                    d._callbacks.append(task)
                    remaining += 1
            task._remaining = remaining
        if remaining == 0:
            self._enqueue(task)
        return task

    def ready(self, value: Any = None, locality: int = 0) -> TaskHandle:
        """An already-completed handle carrying ``value``."""
        task = TaskHandle(self, next(self._ids), locality, None, (), "ready")
        task._result = value
        task.state = TaskState.COMPLETED
        task._callbacks = None
        now = _now()
        task.start_ns = task.end_ns = now
        return task

    def _enqueue(self, task, behind=False):
        loc = self.localities[task.locality]
        worker = getattr(_tls, "worker", None)
        if worker is None or worker.locality is not loc:
            workers = loc.workers
            worker = workers[next(loc._rr) % len(workers)]
        with loc.cond:
            if behind:
                worker.deque.appendleft(task)
            else:
                worker.deque.append(task)
            loc.cond.notify()

    def _complete(self, task):
        with self._lock:
            task.state = TaskState.COMPLETED
            callbacks = task._callbacks
            task._callbacks = None
            self._outstanding -= 1
            if self._outstanding == 0:
                self._drained.notify_all()
            ready = []
            for cb in callbacks:
                if isinstance(cb, TaskHandle):
                    cb._remaining -= 1
                    if cb._remaining == 0:
                        ready.append(cb)
        for cb in callbacks:
            if not isinstance(cb, TaskHandle):
                cb(task)
        for t in ready:
            self._enqueue(t)

    def _suspend(self, task, yielded):
        if isinstance(yielded, TaskHandle):
            def resume(h, task=task):
                if h._exc is not None:
                    task._throw = h._exc
                else:
                    task._send = h._result
                self._enqueue(task)

            with self._lock:
                if yielded.state is not TaskState.COMPLETED:
                    yielded._callbacks.append(resume)
                    return
            resume(yielded)
        else:
            # a bare yield lets everything already queued run first
            self._enqueue(task, behind=True)

    def wait(self, handle: TaskHandle, timeout: Optional[float] = None) -> Any:
        """Block until ``handle`` completes; return its payload or re-raise its error."""
        if not isinstance(handle, TaskHandle) or handle.runtime is not self:
            raise ValueError(f"invalid handle {handle!r}")
        if handle.state is not TaskState.COMPLETED:
            event = None
            with self._lock:
                if handle.state is not TaskState.COMPLETED:
                    event = threading.Event()
                    handle._callbacks.append(lambda _h: event.set())
            if event is not None and not event.wait(timeout):
                raise TimeoutError(f"{handle!r} did not complete within {timeout}s")
        if handle._exc is not None:
            raise handle._exc
        return handle._result

    # accounting ----------------------------------------------------------

    def locality(self, locality: int) -> Locality:
        self._check_locality(locality)
        return self.localities[locality]

    def idle_rate(self, locality: int, reset: bool = False) -> float:
        """Percent of time the locality's workers found nothing runnable (per-worker mean)."""
        return self.locality(locality).idle_rate(reset)

    def _activity_seconds(self, locality):
        busy, idle = self.localities[locality].activity_ns()
        return busy / 1e9, idle / 1e9

    def total_busy_ns(self):
        now = self._clock()
        return sum(w.snapshot(now)[0] for w in self.all_workers)

    def stats(self) -> RuntimeStats:
        now = self._clock()
        workers = []
        for loc in self.localities:
            for w in loc.workers:
                busy, idle = w.snapshot(now)
                workers.append(WorkerStats(loc.id, w.index, busy, idle, w.tasks_completed, w.steals))
        wall = now - self._epoch if self._epoch is not None else 0
        return RuntimeStats(self.num_localities, self.workers_per_locality, wall, tuple(workers))

    def agas_overhead_percent(self, reset: bool = False) -> float:
        return self.agas.overhead_percent(self.total_busy_ns(), reset)

    def _install_builtin_counters(self):
        reg = self.counters
        reg.install_counter_type(
            "runtime/idle-rate",
            lambda loc, reset: fixed_point_percent(self.localities[loc].idle_rate(reset)),
            "percent of time with no work ready to schedule (fixed point, x100)",
        )
        reg.install_counter_type(
            "runtime/steals",
            lambda loc, reset: self.localities[loc].steals(reset),
            "tasks stolen between workers of the locality",
        )
        reg.install_counter_type(
            "agas/overhead",
            lambda loc, reset: fixed_point_percent(self.localities[loc].agas_overhead_percent(reset)),
            "percent of busy time spent in AGAS code (fixed point, x100)",
        )
        reg.install_counter_type(
            "observer/energy",
            lambda loc, reset: self.energy.read_locality(loc, reset),
            "energy consumed in joules",
        )


def start_runtime(localities: int, workers_per_locality: int, seed: int = 0, **kwargs) -> Runtime:
    return Runtime(localities, workers_per_locality, seed=seed, **kwargs).start()
