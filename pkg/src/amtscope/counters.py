"""Performance-counter framework.

Counters are named ``namespace/counter`` and backed by a provider callable
``provider(locality, reset) -> value``.  Queries use the textual form::

    workload/subgrid_leaves@locality#0
    runtime/idle-rate@locality#*
    runtime/idle-rate              (same as @locality#*)

Every counter, built-in or application-defined, is read through
:meth:`CounterRegistry.read_counter` with identical reset semantics: the
value accumulated since the previous reset is returned and, when ``reset``
is true, the accumulator is zeroed in the same critical section.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional, Union

from .errors import CounterParseError, QueryError, RegistrationError

WILDCARD = "*"
_LOCALITY_PREFIX = "@locality#"

Provider = Callable[[int, bool], Union[int, float]]


class AtomicCounter:
    """An integer accumulator with an atomic read-then-zero.

    ``total`` keeps the lifetime sum and is unaffected by resets.
    """

    __slots__ = ("_lock", "_value", "_total")

    def __init__(self):
        self._lock = threading.Lock()
        self._value = 0
        self._total = 0

    def add(self, n=1):
        with self._lock:
            self._value += n
            self._total += n

    def read(self, reset=False):
        with self._lock:
            value = self._value
            if reset:
                self._value = 0
        return value

    @property
    def total(self):
        return self._total


def _scan_segment(text, pos, what):
    start = pos
    if pos >= len(text) or not (text[pos].isalpha() or text[pos] == "_") or not text[pos].isascii():
        raise CounterParseError(f"expected {what} name", text, pos)
    pos += 1
    while pos < len(text) and text[pos].isascii() and (text[pos].isalnum() or text[pos] in "_-"):
        pos += 1
    return text[start:pos], pos


@dataclass(frozen=True)
class CounterQuery:
    namespace: str
    counter: str
    locality: Union[int, str] = WILDCARD

    @property
    def name(self):
        return f"{self.namespace}/{self.counter}"

    @property
    def is_wildcard(self):
        return self.locality == WILDCARD

    def __str__(self):
        return f"{self.name}{_LOCALITY_PREFIX}{self.locality}"


def parse_counter_query(text: str) -> CounterQuery:
    """Parse ``<namespace>/<counter>[@locality#(<digits>|*)]``."""
    if not isinstance(text, str):
        raise TypeError(f"query must be str, not {type(text).__name__}")
    namespace, pos = _scan_segment(text, 0, "namespace")
    if pos >= len(text) or text[pos] != "/":
        raise CounterParseError("expected '/'", text, pos)
    counter, pos = _scan_segment(text, pos + 1, "counter")
    if pos == len(text):
        return CounterQuery(namespace, counter)
    if not text.startswith(_LOCALITY_PREFIX, pos):
        raise CounterParseError(f"expected {_LOCALITY_PREFIX!r}", text, pos)
    pos += len(_LOCALITY_PREFIX)
    rest = text[pos:]
    if rest == WILDCARD:
        return CounterQuery(namespace, counter)
    if not rest:
        raise CounterParseError("expected locality id or '*'", text, pos)
    for offset, ch in enumerate(rest):
        if not ("0" <= ch <= "9"):
            raise CounterParseError("expected digit", text, pos + offset)
    return CounterQuery(namespace, counter, int(rest))


def parse_counter_name(name: str):
    """Validate a bare counter name; returns ``(namespace, counter)``."""
    query = parse_counter_query(name)
    if _LOCALITY_PREFIX in name:
        raise CounterParseError("counter names carry no locality", name, name.index("@"))
    return query.namespace, query.counter


@dataclass(frozen=True)
class CounterDescriptor:
    name: str
    provider: Provider
    description: str = ""


@dataclass(frozen=True)
class CounterSample:
    query: CounterQuery
    locality: int
    value: Union[int, float]
    timestamp: int


class CounterRegistry:
    """Registry of installed counter types for a fixed number of localities."""

    def __init__(self, num_localities: int):
        if num_localities < 1:
            raise ValueError("num_localities must be >= 1")
        self.num_localities = num_localities
        self._types: dict[str, CounterDescriptor] = {}
        self._install_lock = threading.Lock()

    def install_counter_type(self, name: str, provider: Provider, description: str = ""):
        parse_counter_name(name)
        if not callable(provider):
            raise TypeError("provider must be callable")
        with self._install_lock:
            if name in self._types:
                raise RegistrationError(f"counter {name!r} is already installed")
            # copy-on-write keeps lock-free readers consistent
            types = dict(self._types)
            types[name] = CounterDescriptor(name, provider, description)
            self._types = types

    def uninstall_counter_type(self, name: str):
        with self._install_lock:
            types = dict(self._types)
            if types.pop(name, None) is None:
                raise QueryError(f"counter {name!r} is not installed")
            self._types = types

    def is_installed(self, name: str) -> bool:
        return name in self._types

    def descriptor(self, name: str) -> CounterDescriptor:
        try:
            return self._types[name]
        except KeyError:
            raise QueryError(f"unknown counter {name!r}") from None

    def localities_for(self, query: CounterQuery):
        if query.is_wildcard:
            return range(self.num_localities)
        if not 0 <= query.locality < self.num_localities:
            raise QueryError(
                f"locality {query.locality} out of range for {self.num_localities} localities"
            )
        return (query.locality,)

    def read_counter(self, query: Union[CounterQuery, str], reset: bool = False) -> list[CounterSample]:
        if isinstance(query, str):
            query = parse_counter_query(query)
        provider = self.descriptor(query.name).provider
        samples = []
        for loc in self.localities_for(query):
            value = provider(loc, reset)
            samples.append(CounterSample(query, loc, value, time.perf_counter_ns()))
        return samples

    def list_counters(self, pattern: str = "") -> list[tuple[str, str]]:
        return sorted(
            (name, d.description) for name, d in self._types.items() if name.startswith(pattern)
        )

    def validate(self, queries):
        """Parse and check a list of queries up front; returns CounterQuery objects."""
        parsed = []
        for q in queries:
            if isinstance(q, str):
                q = parse_counter_query(q)
            self.descriptor(q.name)
            self.localities_for(q)
            parsed.append(q)
        return parsed


def per_locality_provider(counters: list[AtomicCounter]) -> Provider:
    """Provider over one :class:`AtomicCounter` per locality."""

    def provider(locality: int, reset: bool):
        return counters[locality].read(reset)

    return provider


def fixed_point_percent(percent: Optional[float]) -> int:
    """Percent as a 64-bit integer scaled by 100 (12.34 % -> 1234)."""
    return int(round((percent or 0.0) * 100))
