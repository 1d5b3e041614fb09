import logging

import pytest
from hypothesis import given, strategies as st

from amtscope.energy import EnergySource


def bound(activity, n=1, **kw):
    src = EnergySource("model", **kw)
    src.bind(activity, n)
    return src


def test_model_zero_elapsed():
    assert bound(lambda loc: (0.0, 0.0)).read_energy() == 0.0


def test_model_two_busy_seconds():
    assert bound(lambda loc: (2.0, 0.0)).read_energy() == pytest.approx(200.0)


def test_model_idle_power_and_localities():
    src = bound(lambda loc: (1.0, float(loc)), n=3)
    # 3 x 100 J busy + (0 + 1 + 2) s x 30 W idle
    assert src.read_energy() == pytest.approx(390.0)
    assert src.read_locality(2) == pytest.approx(160.0)


def test_model_reset():
    t = {"busy": 1.0}
    src = bound(lambda loc: (t["busy"], 0.0))
    assert src.read_energy(reset=True) == pytest.approx(100.0)
    t["busy"] = 1.5
    assert src.read_energy() == pytest.approx(50.0)


def test_unbound_source_reads_zero():
    assert EnergySource().read_energy() == 0.0


def test_spec_parsing():
    assert EnergySource.from_spec("model").mode == "model"
    src = EnergySource.from_spec("platform:/sys/x/energy_uj")
    assert src.mode == "platform" and src.path == "/sys/x/energy_uj"
    for bad in ("platform:", "rapl", ""):
        with pytest.raises(ValueError):
            EnergySource.from_spec(bad)


def test_platform_counter_and_wrap(tmp_path):
    f = tmp_path / "energy_uj"
    (tmp_path / "max_energy_range_uj").write_text("1000000\n")
    f.write_text("900000\n")
    src = EnergySource.from_spec(f"platform:{f}")
    src.bind(lambda loc: (0.0, 0.0), 2)
    f.write_text("950000\n")
    assert src.read_energy() == pytest.approx(0.05)
    f.write_text("20000\n")  # wrapped once
    assert src.read_energy() == pytest.approx(0.12)
    assert src.read_locality(1) == 0.0


def test_platform_falls_back_to_model(tmp_path, caplog):
    src = EnergySource.from_spec(f"platform:{tmp_path / 'missing'}")
    with caplog.at_level(logging.WARNING):
        src.bind(lambda loc: (1.0, 0.0), 1)
    assert src.mode == "model"
    assert "falling back" in caplog.text
    assert src.read_energy() == pytest.approx(100.0)


@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=20))
def test_model_energy_is_monotone(increments):
    state = [0.0, 0.0]
    src = bound(lambda loc: tuple(state))
    last = 0.0
    for db, di in increments:
        state[0] += db
        state[1] += di
        value = src.read_energy()
        assert value >= last - 1e-9
        last = value
