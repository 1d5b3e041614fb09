"""Energy sources: a synthetic busy/idle power model or a platform energy file.

The platform file holds a cumulative microjoule counter that wraps at
``max_energy_range_uj`` (the powercap convention, e.g.
``/sys/class/powercap/intel-rapl:0/energy_uj``).
"""

from __future__ import annotations

import logging
import os
import threading

logger = logging.getLogger(__name__)

DEFAULT_P_BUSY = 100.0
DEFAULT_P_IDLE = 30.0


def _read_int(path):
    with open(path) as fh:
        return int(fh.read().strip())


class EnergySource:
    """Cumulative energy in joules.

    In ``"model"`` mode each locality draws ``p_busy`` watts while busy and
    ``p_idle`` watts while idle, with busy/idle time taken as the mean over
    that locality's workers.  Model joules are only meaningful relative to
    each other.
    """

    def __init__(self, mode="model", path=None, p_busy=DEFAULT_P_BUSY, p_idle=DEFAULT_P_IDLE,
                 max_range_uj=None):
        if mode not in ("model", "platform"):
            raise ValueError(f"unknown energy mode {mode!r}")
        if mode == "platform" and not path:
            raise ValueError("platform mode needs a path")
        if p_busy < 0 or p_idle < 0:
            raise ValueError("power parameters must be non-negative")
        self.mode = mode
        self.path = path
        self.p_busy = float(p_busy)
        self.p_idle = float(p_idle)
        self.max_range_uj = max_range_uj
        self._activity = None
        self._num_localities = 1
        self._lock = threading.Lock()
        self._baselines = None
        self._last_raw = None
        self._cum_uj = 0
        self._platform_baseline = 0

    @classmethod
    def from_spec(cls, spec: str, **kwargs):
        """``"model"`` or ``"platform:<path>"``."""
        if spec == "model":
            return cls("model", **kwargs)
        if spec.startswith("platform:") and len(spec) > len("platform:"):
            return cls("platform", path=spec[len("platform:"):], **kwargs)
        raise ValueError(f"energy source must be 'model' or 'platform:<path>', got {spec!r}")

    def bind(self, activity, num_localities):
        """Attach ``activity(locality) -> (busy_s, idle_s)`` and start counting."""
        self._activity = activity
        self._num_localities = num_localities
        self._baselines = [0.0] * num_localities
        if self.mode == "platform":
            try:
                self._last_raw = _read_int(self.path)
                if self.max_range_uj is None:
                    range_file = os.path.join(os.path.dirname(self.path), "max_energy_range_uj")
                    if os.path.exists(range_file):
                        self.max_range_uj = _read_int(range_file)
            except (OSError, ValueError) as exc:
                self._fallback(exc)

    def _fallback(self, exc):
        logger.warning("energy file %s unreadable (%s); falling back to the power model",
                       self.path, exc)
        self.mode = "model"

    def poll(self):
        """Fold the current platform reading into the wrap-corrected total."""
        if self.mode != "platform":
            return
        try:
            raw = _read_int(self.path)
        except (OSError, ValueError) as exc:
            self._fallback(exc)
            return
        with self._lock:
            last = self._last_raw
            if raw >= last:
                self._cum_uj += raw - last
            elif self.max_range_uj:
                self._cum_uj += (self.max_range_uj - last) + raw
            else:
                # range unknown: count only what is certain
                self._cum_uj += raw
            self._last_raw = raw

    def _model_joules(self, loc):
        busy_s, idle_s = self._activity(loc)
        return self.p_busy * busy_s + self.p_idle * idle_s

    def read_locality(self, loc, reset=False) -> float:
        """Joules attributed to one locality since the last reset.

        Platform energy is node-wide and is reported on locality 0 only.
        """
        if self.mode == "platform":
            self.poll()
        if self.mode == "platform":
            return self._read_platform(reset) if loc == 0 else 0.0
        if self._activity is None:
            return 0.0
        with self._lock:
            value = self._model_joules(loc)
            out = value - self._baselines[loc]
            if reset:
                self._baselines[loc] = value
        return max(0.0, out)

    def _read_platform(self, reset):
        with self._lock:
            out = self._cum_uj - self._platform_baseline
            if reset:
                self._platform_baseline = self._cum_uj
        return out / 1e6

    def read_energy(self, reset=False) -> float:
        if self.mode == "platform":
            self.poll()
        if self.mode == "platform":
            return self._read_platform(reset)
        return sum(self.read_locality(loc, reset) for loc in range(self._num_localities))
