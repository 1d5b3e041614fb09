"""Introspection: task timers, a periodic counter sampler and a policy engine.

Timers follow each task through its dependency chain (start, yield, resume,
stop), not the Python call stack, so a task that yields and later resumes on
another worker is still accounted as one invocation.  Time between a yield
and the matching resume is not charged to the task.

Periodic work (sampler ticks, periodic policies) runs on one control thread.
Triggered policies run synchronously on the thread calling
:meth:`Observer.emit_event`, in registration order.
"""

from __future__ import annotations

import csv
import heapq
import itertools
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Union

from .counters import CounterQuery, CounterSample
from .errors import ConfigurationError

logger = logging.getLogger(__name__)

_now = time.perf_counter_ns

KINDS = ("start", "stop", "yield", "resume")
MIN_PERIOD_NS = 1_000_000


@dataclass(frozen=True)
class TimerEvent:
    task_id: int
    label: str
    kind: str
    timestamp: int


@dataclass
class TaskProfile:
    label: str
    calls: int = 0
    total_ns: int = 0
    max_ns: int = 0

    @property
    def mean_ns(self):
        return self.total_ns / self.calls if self.calls else 0.0

    def merge(self, other):
        self.calls += other.calls
        self.total_ns += other.total_ns
        self.max_ns = max(self.max_ns, other.max_ns)


@dataclass
class Policy:
    """``trigger`` is an event name (triggered) or a period in ns (periodic)."""

    trigger: Union[str, int]
    action: Callable[["Observer"], Any]
    id: Optional[int] = None
    invocations: int = 0
    errors: list = field(default_factory=list)

    @property
    def periodic(self):
        return not isinstance(self.trigger, str)


@dataclass(frozen=True)
class EnergySample:
    timestamp: int
    joules: float


class SampleStream:
    """Tick batches produced by the periodic sampler."""

    def __init__(self):
        self.start_ns = None
        self.ticks: list[int] = []
        self.samples: list[tuple[int, CounterSample]] = []
        self.energy: list[EnergySample] = []
        self._lock = threading.Lock()

    def append_tick(self, tick_ns, samples, joules):
        with self._lock:
            self.ticks.append(tick_ns)
            self.samples.extend((tick_ns, s) for s in samples)
            if joules is not None:
                self.energy.append(EnergySample(tick_ns, joules))

    def __len__(self):
        return len(self.ticks)

    def rows(self):
        """``(tick_ns, query, locality, value)`` tuples, energy included as ``observer/energy``."""
        with self._lock:
            out = [(t, str(s.query), s.locality, s.value) for t, s in self.samples]
            out.extend((e.timestamp, "observer/energy", "*", e.joules) for e in self.energy)
        out.sort(key=lambda r: (r[0], r[1], str(r[2])))
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tick_ns", "query", "locality", "value"])
            w.writerows(self.rows())


class _ControlThread:
    """Runs periodic jobs at absolute deadlines so periods do not drift."""

    def __init__(self):
        self._jobs = []
        self._seq = itertools.count()
        self._cond = threading.Condition()
        self._stop = False
        self._thread = None

    def add(self, period_ns, fn, start_ns=None):
        first = (start_ns if start_ns is not None else _now()) + period_ns
        with self._cond:
            heapq.heappush(self._jobs, (first, next(self._seq), period_ns, fn))
            self._cond.notify()
        if self._thread is None:
            self._thread = threading.Thread(target=self._run, name="amt-control", daemon=True)
            self._thread.start()

    def _run(self):
        while True:
            with self._cond:
                while not self._stop:
                    if self._jobs:
                        delay = (self._jobs[0][0] - _now()) / 1e9
                        if delay <= 0:
                            break
                        self._cond.wait(delay)
                    else:
                        self._cond.wait()
                if self._stop:
                    return
                due, seq, period, fn = heapq.heappop(self._jobs)
                heapq.heappush(self._jobs, (due + period, seq, period, fn))
            try:
                fn(due)
            except Exception:
                logger.exception("periodic job failed")

    def stop(self):
        with self._cond:
            self._stop = True
            self._cond.notify_all()
        if self._thread is not None and self._thread is not threading.current_thread():
            self._thread.join()


class Observer:
    """APEX-style observer attached to a :class:`~amtscope.runtime.Runtime`.

    ``timers`` hooks the runtime's task transitions into :meth:`record_timer`.
    """

    def __init__(self, runtime=None, timers=True):
        self.runtime = runtime
        self._open: dict[int, tuple] = {}
        self._local = threading.local()
        self._all_profiles: list[dict] = []
        self._profiles_lock = threading.Lock()
        self.sequencing_errors = 0
        self._error_lock = threading.Lock()
        self._policies: list[Policy] = []
        self._triggered: dict[str, tuple] = {}
        self._policy_lock = threading.Lock()
        self._control = _ControlThread()
        self.streams: list[SampleStream] = []
        self.parameters: dict[str, Any] = {}
        if runtime is not None and timers:
            runtime.listener = self._on_task_event

    # timers --------------------------------------------------------------

    def _profiles(self):
        try:
            return self._local.profiles
        except AttributeError:
            profiles = self._local.profiles = {}
            with self._profiles_lock:
                self._all_profiles.append(profiles)
            return profiles

    def _on_task_event(self, task_id, label, kind, ts):
        # open task state: (segment_start, accumulated_ns, last_kind)
        opened = self._open
        if kind == "start":
            if task_id in opened:
                return self._reject(task_id, kind)
            opened[task_id] = (ts, 0, "start")
            return
        state = opened.get(task_id)
        if state is None:
            return self._reject(task_id, kind)
        seg, acc, last = state
        if kind == "stop":
            if last == "yield":
                return self._reject(task_id, kind)
            del opened[task_id]
            inclusive = acc + ts - seg
            try:
                profiles = self._local.profiles
            except AttributeError:
                profiles = self._profiles()
            p = profiles.get(label)
            if p is None:
                p = profiles[label] = TaskProfile(label)
            p.calls += 1
            p.total_ns += inclusive
            if inclusive > p.max_ns:
                p.max_ns = inclusive
        elif kind == "yield":
            if last == "yield":
                return self._reject(task_id, kind)
            opened[task_id] = (seg, acc + ts - seg, "yield")
        elif kind == "resume":
            if last != "yield":
                return self._reject(task_id, kind)
            opened[task_id] = (ts, acc, "resume")
        else:
            return self._reject(task_id, kind)

    def _reject(self, task_id, kind):
        with self._error_lock:
            self.sequencing_errors += 1
        logger.warning("timer sequencing error: %r for task %s", kind, task_id)

    def record_timer(self, event: TimerEvent):
        """Fold one event into its task-type profile; out-of-order events are logged and dropped."""
        self._on_task_event(event.task_id, event.label, event.kind, event.timestamp)

    def profiles(self) -> dict[str, TaskProfile]:
        merged: dict[str, TaskProfile] = {}
        with self._profiles_lock:
            tables = list(self._all_profiles)
        for table in tables:
            for label, p in list(table.items()):
                m = merged.setdefault(label, TaskProfile(label))
                m.merge(p)
        return dict(sorted(merged.items()))

    # sampling ------------------------------------------------------------

    def run_periodic_sampler(self, period_ns: int, queries=(), reset: bool = False,
                             energy: bool = True) -> SampleStream:
        """Read ``queries`` (and energy) every ``period_ns`` on the control thread.

        Each tick reads with ``reset`` (false by default, so values are
        cumulative); with ``reset=True`` each tick covers one window.
        """
        if period_ns < MIN_PERIOD_NS:
            raise ConfigurationError(f"sampler period must be >= 1 ms, got {period_ns} ns")
        if queries and self.runtime is None:
            raise ConfigurationError("counter queries need a runtime")
        parsed = self.runtime.counters.validate(queries) if queries else []
        stream = SampleStream()
        counters = self.runtime.counters if self.runtime is not None else None
        energy_src = self.runtime.energy if (energy and self.runtime is not None) else None

        def tick(due):
            samples = []
            for q in parsed:
                samples.extend(counters.read_counter(q, reset))
            joules = energy_src.read_energy() if energy_src is not None else None
            stream.append_tick(_now(), samples, joules)

        stream.start_ns = _now()
        self.streams.append(stream)
        self._control.add(period_ns, tick, start_ns=stream.start_ns)
        return stream

    def read_energy(self, reset: bool = False) -> float:
        if self.runtime is None:
            return 0.0
        return self.runtime.energy.read_energy(reset)

    # policies ------------------------------------------------------------

    def register_policy(self, policy: Policy) -> int:
        if isinstance(policy.trigger, str):
            if not policy.trigger:
                raise ConfigurationError("event name must be non-empty")
        elif not (isinstance(policy.trigger, int) and policy.trigger >= MIN_PERIOD_NS):
            raise ConfigurationError(f"invalid policy trigger {policy.trigger!r}")
        with self._policy_lock:
            policy.id = len(self._policies)
            self._policies.append(policy)
            if not policy.periodic:
                # immutable snapshot per event keeps emit_event lock-free
                self._triggered[policy.trigger] = self._triggered.get(policy.trigger, ()) + (policy,)
        if policy.periodic:
            self._control.add(policy.trigger, lambda due, p=policy: self._invoke(p))
        return policy.id

    def _invoke(self, policy):
        policy.invocations += 1
        try:
            policy.action(self)
        except Exception as exc:
            policy.errors.append(exc)
            logger.warning("policy %s raised %r", policy.id, exc)

    def emit_event(self, name: str):
        for policy in self._triggered.get(name, ()):
            self._invoke(policy)

    @property
    def policies(self):
        return list(self._policies)

    def stop(self):
        """Stop the control thread and detach timers."""
        self._control.stop()
        if self.runtime is not None and self.runtime.listener == self._on_task_event:
            self.runtime.listener = None
