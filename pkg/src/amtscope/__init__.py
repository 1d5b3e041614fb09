"""A small introspectable many-task runtime with an octree AMR workload.

Localities are simulated in-process.  The pieces:

* :mod:`amtscope.runtime` - work-stealing scheduler, futures, idle accounting
* :mod:`amtscope.agas` - global object ids and their owners
* :mod:`amtscope.counters` - named counters with read/reset
* :mod:`amtscope.observer` - task timers, periodic sampling, policies
* :mod:`amtscope.amr` - the advection workload on a 2:1 balanced octree
* :mod:`amtscope.harness` - instrumentation modes, overhead and exports
"""

from .agas import INVALID_GID, Agas, GlobalId
from .counters import AtomicCounter, CounterQuery, CounterRegistry, parse_counter_query
from .energy import EnergySource
from .errors import (
    AmtError,
    ConfigurationError,
    ContractError,
    CounterParseError,
    DependencyError,
    ExportError,
    LifecycleError,
    QueryError,
    RegistrationError,
    ResolutionError,
)
from .harness import (
    InstrumentationMode,
    OverheadReport,
    RunReport,
    compare_modes,
    export_scatter,
    export_spatial_idle,
    run_scenario,
)
from .observer import Observer, Policy
from .runtime import Runtime, TaskHandle, start_runtime

__version__ = "0.1.0"

__all__ = [
    "Agas", "AmtError", "AtomicCounter", "ConfigurationError", "ContractError",
    "CounterParseError", "CounterQuery", "CounterRegistry", "DependencyError", "EnergySource",
    "ExportError", "GlobalId", "INVALID_GID", "InstrumentationMode", "LifecycleError",
    "Observer", "OverheadReport", "Policy", "QueryError", "RegistrationError",
    "ResolutionError", "RunReport", "Runtime", "TaskHandle", "compare_modes",
    "export_scatter", "export_spatial_idle", "parse_counter_query", "run_scenario",
    "start_runtime",
]
