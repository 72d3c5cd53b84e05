import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from btmpc.cycles import (
    MPH,
    CycleError,
    DriveCycle,
    PreviewMode,
    build_flow_profile,
    bundled_cycle,
    get_cycle,
    load_cycle,
    preview,
    resample,
)


def write(tmp_path, text, name="c.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_examples(tmp_path):
    c = load_cycle(write(tmp_path, "0,0\n1,0\n"))
    assert len(c) == 2 and np.all(c.speeds == 0) and c.dt == 1.0
    c = load_cycle(write(tmp_path, "time_s,speed\n0,10\n1,20\n"), units="mph")
    np.testing.assert_allclose(c.speeds, [4.4704, 8.9408])
    with pytest.raises(CycleError, match="increasing"):
        load_cycle(write(tmp_path, "0,0\n2,1\n1,2\n"))


def test_load_errors(tmp_path):
    with pytest.raises(CycleError, match="negative"):
        load_cycle(write(tmp_path, "0,0\n1,-1\n"))
    with pytest.raises(CycleError, match="parse"):
        load_cycle(write(tmp_path, "0,0\n1,x\n"))
    with pytest.raises(CycleError, match="non-uniform"):
        load_cycle(write(tmp_path, "0,0\n1,1\n3,1\n"))
    with pytest.raises(CycleError, match="units"):
        load_cycle(write(tmp_path, "0,0\n1,1\n"), units="furlong")


def test_cycle_validation():
    with pytest.raises(CycleError):
        DriveCycle(1.0, np.array([1.0]))
    with pytest.raises(CycleError):
        DriveCycle(0.0, np.array([1.0, 2.0]))
    c = DriveCycle(1.0, [1.0, 2.0])
    with pytest.raises(ValueError):
        c.speeds[0] = 5.0


def test_bundled_cycles():
    udds = bundled_cycle("udds")
    assert len(udds) == 1370 and udds.dt == 1.0
    assert udds.speeds.max() == pytest.approx(91.25 * 1000 / 3600, abs=0.01)
    assert np.sum(udds.speeds) * udds.dt == pytest.approx(11990, rel=0.01)
    nycc = bundled_cycle("NYCC")
    assert len(nycc) == 598
    assert np.sum(nycc.speeds) == pytest.approx(1899, rel=0.01)
    assert nycc.speeds.max() <= 12.5
    assert get_cycle("udds").name == "udds"
    with pytest.raises(CycleError):
        bundled_cycle("wltp")


def test_resample_examples():
    c = DriveCycle(1.0, [0.0, 10.0])
    assert resample(c, 1.0) is c
    np.testing.assert_allclose(resample(c, 0.5).speeds, [0.0, 5.0, 10.0])
    ramp = DriveCycle(1.0, np.arange(11.0))
    np.testing.assert_allclose(resample(ramp, 5.0).speeds, [0.0, 5.0, 10.0])
    with pytest.raises(CycleError):
        resample(c, 0.0)


def test_flow_examples():
    const = DriveCycle(1.0, np.full(600, 7.0))
    np.testing.assert_allclose(build_flow_profile(const).flow_speeds, 7.0)
    pulse = np.zeros(600)
    pulse[300:320] = 10.0
    flow = build_flow_profile(DriveCycle(1.0, pulse)).flow_speeds
    assert flow.max() < 10.0
    udds = bundled_cycle("udds")
    f = build_flow_profile(udds, 250.0).flow_speeds
    assert f.max() < udds.speeds.max()
    stops = udds.speeds == 0
    assert np.all(f[stops][5:-5] > 0)


def test_flow_is_centered_moving_average():
    rng = np.random.default_rng(3)
    v = rng.uniform(0, 20, 400)
    f = build_flow_profile(DriveCycle(1.0, v), 50.0).flow_speeds
    half = 25
    for k in (0, 10, 200, 399):
        lo, hi = max(0, k - half), min(v.size, k + half + 1)
        assert f[k] == pytest.approx(v[lo:hi].mean())


def test_flow_shift_equivariant():
    rng = np.random.default_rng(4)
    v = rng.uniform(0, 20, 1000)
    f = build_flow_profile(DriveCycle(1.0, v), 100.0).flow_speeds
    g = build_flow_profile(DriveCycle(1.0, np.roll(v, 7)), 100.0).flow_speeds
    np.testing.assert_allclose(g[300:700], f[293:693])
    with pytest.raises(CycleError):
        build_flow_profile(DriveCycle(2.0, v), 1.0)


def test_preview_examples():
    udds = bundled_cycle("udds")
    flow = build_flow_profile(udds)
    p = preview(udds, flow, 100, 60, 1.0, mode=PreviewMode.EXACT_FULL_CYCLE)
    np.testing.assert_array_equal(p.speeds, udds.speeds[100:161])
    assert p.speeds.size == 61

    # blend formula on synthetic series: V_veh = 10, V_flow = 6
    c = DriveCycle(0.5, np.full(200, 10.0))
    from btmpc.cycles import FlowProfile

    fl = FlowProfile(250.0, np.full(200, 6.0))
    p = preview(c, fl, 0, 60, 0.5, 15.0, 15.0, PreviewMode.EXACT_SHORT_THEN_FLOW)
    t = np.arange(61) * 0.5
    assert p.speeds[t == 15.0][0] == pytest.approx(10.0)
    assert p.speeds[t == 22.5][0] == pytest.approx(8.0)
    assert p.speeds[t == 30.0][0] == pytest.approx(6.0)


def test_preview_equal_speeds_blend_is_identity():
    c = DriveCycle(1.0, np.full(100, 9.0))
    flow = build_flow_profile(c)
    a = preview(c, flow, 10, 50, 1.0, mode=PreviewMode.EXACT_FULL_CYCLE)
    b = preview(c, flow, 10, 50, 1.0, mode=PreviewMode.EXACT_SHORT_THEN_FLOW)
    np.testing.assert_allclose(a.speeds, b.speeds)


def test_preview_pads_with_terminal_flow():
    udds = bundled_cycle("udds")
    flow = build_flow_profile(udds)
    p = preview(udds, flow, len(udds) - 5, 20, 1.0)
    assert np.all(p.speeds[5:] == flow.flow_speeds[-1])
    with pytest.raises(CycleError):
        preview(udds, flow, len(udds), 5, 1.0)


@given(st.integers(0, 1369), st.sampled_from([1.0, 5.0]), st.integers(1, 60))
def test_preview_properties(k, step, steps):
    udds = bundled_cycle("udds")
    flow = build_flow_profile(udds)
    ex = preview(udds, flow, k, steps, step, mode=PreviewMode.EXACT_FULL_CYCLE)
    fl = preview(udds, flow, k, steps, step, mode=PreviewMode.EXACT_SHORT_THEN_FLOW)
    bound = max(udds.speeds.max(), flow.flow_speeds.max())
    for p in (ex, fl):
        assert p.speeds.size == steps + 1
        assert np.all(p.speeds >= 0) and np.all(p.speeds <= bound + 1e-12)
    m = min(steps, int(15.0 / step)) + 1
    np.testing.assert_allclose(ex.speeds[:m], fl.speeds[:m])
