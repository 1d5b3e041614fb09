"""Experiment driver: instrumented runs, overhead comparison and CSV exports."""

from __future__ import annotations

import csv
import enum
import gc
import json
import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

from .amr.octree import Octree
from .amr.workload import COUNTER_NAMES, AmrSimulation
from .counters import parse_counter_query
from .energy import EnergySource
from .errors import ConfigurationError, ExportError
from .observer import MIN_PERIOD_NS, Observer, Policy, SampleStream
from .runtime import Runtime

logger = logging.getLogger(__name__)

IDLE_RATE = "runtime/idle-rate"
AMR_BOUNDARIES = COUNTER_NAMES["amr_boundaries"][0]
SAMPLED_COUNTERS = (
    IDLE_RATE,
    AMR_BOUNDARIES,
    COUNTER_NAMES["subgrids"][0],
    COUNTER_NAMES["leaves"][0],
    "runtime/steals",
)
DEFAULT_SAMPLE_PERIOD_MS = 1000.0

SCATTER_COLUMNS = ("window_ns", "locality", "idle_rate_percent", "amr_boundaries_per_second")
SPATIAL_COLUMNS = ("level", "x0", "y0", "z0", "x1", "y1", "z1", "owner", "idle_rate_percent",
                   "mean_field")
OVERHEAD_COLUMNS = ("mode", "repetitions", "median_subgrids_per_second", "spread",
                    "overhead_percent")


class InstrumentationMode(str, enum.Enum):
    I = "I"
    II = "II"
    III = "III"
    IV = "IV"

    @property
    def counters(self):
        return self in (InstrumentationMode.I, InstrumentationMode.III)

    @property
    def observer(self):
        return self in (InstrumentationMode.I, InstrumentationMode.II)

    @property
    def description(self):
        return {
            "I": "counters + observer",
            "II": "observer only",
            "III": "counters only",
            "IV": "bare runtime",
        }[self.value]

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ConfigurationError(f"mode must be one of I, II, III, IV, got {value!r}") from None


ALL_MODES = tuple(InstrumentationMode)


@dataclass
class RunReport:
    mode: str
    localities: int
    workers: int
    scenario_digest: str
    wall_seconds: float
    subgrids_processed: int
    subgrids_per_second: float
    energy_kj: float
    subgrids_per_kj: float
    idle_rate_series: list = field(default_factory=list)
    agas_overhead_percent: float = 0.0
    task_profiles: dict = field(default_factory=dict)
    counter_samples: list = field(default_factory=list)
    idle_rates: list = field(default_factory=list)
    steps: int = 0
    seed: int = 0
    initial_total_mass: float = 0.0
    final_total_mass: float = 0.0
    final_leaf_count: int = 0
    leaves: list = field(default_factory=list)

    @staticmethod
    def throughput(subgrids, wall_seconds):
        return subgrids / wall_seconds if wall_seconds > 0 else math.inf

    @staticmethod
    def per_kj(subgrids, energy_kj):
        return subgrids / energy_kj if energy_kj > 0 else math.inf

    def to_dict(self):
        return asdict(self)

    def to_json(self, path=None, indent=2):
        text = json.dumps(self.to_dict(), indent=indent)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class OverheadReport:
    localities: int
    workers: int
    scenario_digest: str
    repetitions: int
    throughputs: dict = field(default_factory=dict)

    def median(self, mode):
        return statistics.median(self.throughputs[InstrumentationMode.parse(mode).value])

    def spread(self, mode):
        values = self.throughputs[InstrumentationMode.parse(mode).value]
        return max(values) - min(values)

    def overhead_percent(self, mode):
        mode = InstrumentationMode.parse(mode)
        if mode is InstrumentationMode.IV:
            return 0.0
        base = self.median(InstrumentationMode.IV)
        return (base - self.median(mode)) / base * 100.0

    def modes(self):
        return [m for m in ALL_MODES if m.value in self.throughputs]

    def rows(self):
        return [
            (m.value, len(self.throughputs[m.value]), self.median(m), self.spread(m),
             self.overhead_percent(m))
            for m in self.modes()
        ]

    def to_dict(self):
        d = asdict(self)
        d["summary"] = [dict(zip(OVERHEAD_COLUMNS, r)) for r in self.rows()]
        return d

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(OVERHEAD_COLUMNS)
            w.writerows(self.rows())

    def format_table(self):
        lines = [f"{'mode':<5} {'config':<20} {'median sg/s':>12} {'spread':>10} {'overhead %':>11}"]
        for mode, _, med, spread, ovh in self.rows():
            desc = InstrumentationMode(mode).description
            lines.append(f"{mode:<5} {desc:<20} {med:>12.1f} {spread:>10.1f} {ovh:>11.2f}")
        return "\n".join(lines)


def _check_positive_int(name, value):
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConfigurationError(f"{name} must be an int >= 1, got {value!r}")


def _worker_totals(stats):
    return {(w.locality, w.worker): (w.busy_ns, w.idle_ns) for w in stats.workers}


def _window_idle_rates(before, after, localities):
    """Per-worker-mean idle percent per locality between two stats snapshots."""
    rates = [[] for _ in range(localities)]
    for key, (busy, idle) in after.items():
        b0, i0 = before.get(key, (0, 0))
        db, di = busy - b0, idle - i0
        rates[key[0]].append(di / (db + di) if db + di > 0 else 1.0)
    return [100.0 * sum(r) / len(r) for r in rates]


def _idle_series(stream: SampleStream, localities):
    series = [[] for _ in range(localities)]
    for tick, sample in stream.samples:
        if sample.query.name == IDLE_RATE:
            series[sample.locality].append([tick - stream.start_ns, sample.value / 100.0])
    return series


def _counter_rows(stream: SampleStream):
    return [
        {"tick_ns": tick - stream.start_ns, "query": sample.query.name,
         "locality": sample.locality, "value": sample.value}
        for tick, sample in stream.samples
    ]


def _leaf_rows(tree: Octree):
    return [
        {"level": leaf.level, "index": list(leaf.index), "owner": leaf.owner,
         "mean": float(leaf.cells.mean())}
        for leaf in tree.leaves()
    ]


def run_scenario(config, mode="IV", localities: int = 1, workers: int = 1, seed: int = 0,
                 sample_period_ms: Optional[float] = None,
                 energy_source: Union[str, EnergySource, None] = None,
                 steps: Optional[int] = None, keep_tree: bool = False) -> RunReport:
    """One instrumented run of ``config``.

    Modes I and III install the workload counters and sample them every
    ``sample_period_ms`` with reset, so each sample covers one window.
    Modes I and II attach an observer (task timers, energy sampling and a
    ``step_complete`` policy).  Mode IV runs the bare runtime.
    """
    mode = InstrumentationMode.parse(mode)
    _check_positive_int("localities", localities)
    _check_positive_int("workers", workers)
    config.validate()
    steps = config.steps if steps is None else steps
    if not isinstance(steps, int) or steps < 0:
        raise ConfigurationError(f"steps must be an int >= 0, got {steps!r}")
    period_ms = DEFAULT_SAMPLE_PERIOD_MS if sample_period_ms is None else float(sample_period_ms)
    period_ns = int(period_ms * 1e6)
    if period_ns < MIN_PERIOD_NS:
        raise ConfigurationError(f"sample period must be >= 1 ms, got {period_ms} ms")
    if isinstance(energy_source, EnergySource):
        energy = energy_source
    else:
        try:
            energy = EnergySource.from_spec(energy_source or "model")
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None

    rt = Runtime(localities, workers, seed=seed, energy=energy)
    rt.start()
    observer = None
    sampler_host = None
    stream = None
    try:
        if mode.observer:
            observer = Observer(rt, timers=True)
            observer.parameters["steps_observed"] = 0

            def count_step(obs):
                obs.parameters["steps_observed"] += 1

            observer.register_policy(Policy("step_complete", count_step))
        on_event = observer.emit_event if observer is not None else None
        sim = AmrSimulation(rt, config, on_event=on_event)
        if mode.counters:
            sim.install_counters()
            queries = [f"{name}@locality#*" for name in SAMPLED_COUNTERS]
            # mode III has no observer: a timer-less one only hosts the sampler
            sampler_host = observer if observer is not None else Observer(rt, timers=False)
            stream = sampler_host.run_periodic_sampler(period_ns, queries, reset=True,
                                                       energy=observer is not None)
        elif observer is not None:
            stream = observer.run_periodic_sampler(period_ns, (), energy=True)

        initial_mass = sim.total_mass()
        gc.collect()  # garbage from a previous run must not be collected inside this one
        energy.read_energy(reset=True)
        before = _worker_totals(rt.stats())
        t0 = time.perf_counter()
        sim.run(steps)
        wall = time.perf_counter() - t0
        after = _worker_totals(rt.stats())
        joules = energy.read_energy()
    finally:
        if sampler_host is not None:
            sampler_host.stop()
        if observer is not None and observer is not sampler_host:
            observer.stop()
        if rt.running:
            rt.shutdown()

    subgrids = sim.counters.subgrids_processed
    energy_kj = joules / 1000.0
    report = RunReport(
        mode=mode.value,
        localities=localities,
        workers=workers,
        scenario_digest=config.digest(),
        wall_seconds=wall,
        subgrids_processed=subgrids,
        subgrids_per_second=RunReport.throughput(subgrids, wall),
        energy_kj=energy_kj,
        subgrids_per_kj=RunReport.per_kj(subgrids, energy_kj),
        idle_rate_series=_idle_series(stream, localities) if mode.counters else [],
        agas_overhead_percent=rt.agas_overhead_percent(),
        task_profiles={
            label: {"calls": p.calls, "total_ns": p.total_ns, "max_ns": p.max_ns,
                    "mean_ns": p.mean_ns}
            for label, p in observer.profiles().items()
        } if observer is not None else {},
        counter_samples=_counter_rows(stream) if mode.counters else [],
        idle_rates=_window_idle_rates(before, after, localities),
        steps=sim.steps_done,
        seed=seed,
        initial_total_mass=initial_mass,
        final_total_mass=sim.total_mass(),
        final_leaf_count=len(sim.tree.leaves()),
        leaves=_leaf_rows(sim.tree),
    )
    if keep_tree:
        report.tree = sim.tree
    return report


def compare_modes(config, localities: int = 2, workers: int = 4, repetitions: int = 5,
                  seed: int = 0, modes: Sequence = ALL_MODES, progress=None,
                  **run_kwargs) -> OverheadReport:
    """Run every mode ``repetitions`` times, round-robin, and compare throughput to mode IV.

    Odd rounds visit the modes in reverse so no mode always runs first.
    """
    if not isinstance(repetitions, int) or repetitions < 3:
        raise ConfigurationError(f"repetitions must be an int >= 3, got {repetitions!r}")
    modes = [InstrumentationMode.parse(m) for m in modes]
    if InstrumentationMode.IV not in modes:
        modes.append(InstrumentationMode.IV)
    config.validate()
    out = OverheadReport(localities, workers, config.digest(), repetitions,
                         {m.value: [] for m in modes})
    for rep in range(repetitions):
        for mode in (modes if rep % 2 == 0 else modes[::-1]):
            report = run_scenario(config, mode, localities, workers, seed=seed, **run_kwargs)
            out.throughputs[mode.value].append(report.subgrids_per_second)
            if progress is not None:
                progress(rep, mode, report)
    return out


# exports -------------------------------------------------------------------


def _sample_rows(source):
    """Normalize a report, a sample stream or raw rows to dicts with relative ticks."""
    if isinstance(source, SampleStream):
        return _counter_rows(source)
    if isinstance(source, RunReport):
        return list(source.counter_samples)
    if isinstance(source, Mapping):
        return list(source.get("counter_samples", ()))
    return list(source)


def scatter_rows(source):
    """``(window_ns, locality, idle_rate_percent, amr_boundaries_per_second)`` tuples.

    ``window_ns`` is the end of the window relative to the sampler start;
    samples must come from a resetting sampler so each value covers one window.
    """
    by_tick: dict[int, dict] = {}
    for row in _sample_rows(source):
        name = parse_counter_query(row["query"]).name
        if name in (IDLE_RATE, AMR_BOUNDARIES):
            by_tick.setdefault(row["tick_ns"], {})[name, row["locality"]] = row["value"]
    ticks = sorted(by_tick)
    localities = sorted({loc for t in ticks for (_, loc) in by_tick[t]})
    rows = []
    for loc in localities:
        prev = 0
        for tick in ticks:
            values = by_tick[tick]
            for name in (IDLE_RATE, AMR_BOUNDARIES):
                if (name, loc) not in values:
                    raise ExportError(f"no {name} sample for locality {loc} at tick {tick}")
            window_s = (tick - prev) / 1e9
            if window_s <= 0:
                raise ExportError(f"non-increasing sample ticks at {tick}")
            rows.append((tick, loc, values[IDLE_RATE, loc] / 100.0,
                         values[AMR_BOUNDARIES, loc] / window_s))
            prev = tick
    return rows


def export_scatter(source, path) -> int:
    """Write the idle-rate vs. AMR-boundaries-per-second dataset; returns the row count."""
    rows = scatter_rows(source)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCATTER_COLUMNS)
        w.writerows(rows)
    return len(rows)


def _leaf_records(source):
    if isinstance(source, Octree):
        return [(leaf.level, leaf.index, leaf.owner,
                 float(leaf.cells.mean()) if leaf.cells is not None else math.nan)
                for leaf in source.leaves()]
    if isinstance(source, RunReport):
        source = source.leaves
    return [(r["level"], tuple(r["index"]), r["owner"], r["mean"]) for r in source]


def spatial_rows(source, idle_rates: Union[Mapping, Sequence]):
    if not isinstance(idle_rates, Mapping):
        idle_rates = dict(enumerate(idle_rates))
    rows = []
    for level, index, owner, mean in _leaf_records(source):
        if owner not in idle_rates:
            raise ExportError(f"leaf L{level} {tuple(index)} has unknown owner {owner!r}")
        h = 1.0 / (1 << level)
        i, j, k = index
        rows.append((level, i * h, j * h, k * h, (i + 1) * h, (j + 1) * h, (k + 1) * h,
                     owner, float(idle_rates[owner]), mean))
    return rows


def export_spatial_idle(source, idle_rates: Union[Mapping, Sequence, None] = None, path=None) -> int:
    """Project per-locality idle rates onto the leaves, in Morton order.

    ``source`` is an :class:`Octree`, a :class:`RunReport` or a list of leaf
    records; with a report, ``idle_rates`` defaults to the report's own.
    """
    if idle_rates is None:
        if not isinstance(source, RunReport):
            raise ExportError("idle rates are required unless exporting from a report")
        idle_rates = source.idle_rates
    rows = spatial_rows(source, idle_rates)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SPATIAL_COLUMNS)
        w.writerows(rows)
    return len(rows)


def median_idle_rate(report: RunReport) -> float:
    return statistics.median(report.idle_rates)


def max_boundary_not_max_idle(rows: Iterable) -> tuple[int, int]:
    """``(hits, windows)``: windows where the busiest-boundary locality is not the idlest."""
    windows: dict[int, list] = {}
    for tick, loc, idle, bps in rows:
        windows.setdefault(tick, []).append((loc, idle, bps))
    hits = 0
    for entries in windows.values():
        top_b = max(entries, key=lambda e: (e[2], -e[0]))
        top_i = max(entries, key=lambda e: (e[1], -e[0]))
        hits += top_b[0] != top_i[0]
    return hits, len(windows)
