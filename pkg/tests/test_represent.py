"""Probe datasets, LDR, per-layer probing and latent steering."""
import numpy as np
import pytest


# ---------------------------------------------------------------------------
# Probe datasets
# ---------------------------------------------------------------------------

def test_balanced_and_deterministic():
    from eidoslab.represent import make_probe_dataset

    a = make_probe_dataset("trend", count=5, length=32, seed=3)
    b = make_probe_dataset("trend", count=5, length=32, seed=3)
    assert a.class0.shape == a.class1.shape == (5, 32)
    np.testing.assert_array_equal(a.class1, b.class1)


def test_trend_probe_slopes_have_opposite_sign():
    from eidoslab.represent import make_probe_dataset

    ds = make_probe_dataset("trend", count=20, length=64, sigma=0.0)
    t = np.arange(64)
    up = [np.polyfit(t, row, 1)[0] for row in ds.class1]
    down = [np.polyfit(t, row, 1)[0] for row in ds.class0]
    assert min(up) > 0 > max(down)
    assert all(0.5 / 63 - 1e-12 <= s <= 2.0 / 63 + 1e-12 for s in up)


def test_trend_steer_baseline_is_flat():
    from eidoslab.represent import make_probe_dataset

    ds = make_probe_dataset("trend", count=3, length=16, sigma=0.0, purpose="steer")
    assert np.all(ds.class0 == 0.0)


def test_periodicity_classes():
    from eidoslab.represent import make_probe_dataset

    ds = make_probe_dataset("periodicity", count=50, length=256, sigma=0.0)
    spec1 = np.abs(np.fft.rfft(ds.class1, axis=1))[:, 1:]
    spec0 = np.abs(np.fft.rfft(ds.class0, axis=1))[:, 1:]
    # a sine concentrates its energy; white noise spreads it
    assert np.median(spec1.max(axis=1) / spec1.sum(axis=1)) > 2 * np.median(spec0.max(axis=1) / spec0.sum(axis=1))


def test_unknown_kind():
    from eidoslab.errors import ConfigError
    from eidoslab.represent import make_probe_dataset

    with pytest.raises(ConfigError):
        make_probe_dataset("seasonality")


# ---------------------------------------------------------------------------
# LDR
# ---------------------------------------------------------------------------

def test_point_masses():
    from eidoslab.represent import ldr

    a = np.zeros((10, 3))
    b = np.tile([3.0, 4.0, 0.0], (10, 1))
    assert ldr(a, b, eps=1e-6) == pytest.approx(25.0 / 1e-6)


def test_gaussian_population_value():
    from eidoslab.represent import ldr

    rng = np.random.default_rng(0)
    a = rng.normal(0.0, 1.0, size=100_000)
    b = rng.normal(2.0, 1.0, size=100_000)
    assert ldr(a, b) == pytest.approx(2.0, rel=0.05)


def test_same_distribution_near_zero():
    from eidoslab.represent import ldr

    rng = np.random.default_rng(1)
    assert ldr(rng.normal(size=(50_000, 2)), rng.normal(size=(50_000, 2))) < 1e-3


def test_rotation_invariant(rng):
    from scipy.stats import ortho_group

    from eidoslab.represent import ldr

    a, b = rng.normal(size=(40, 4)), rng.normal(1.0, 2.0, size=(40, 4))
    Q = ortho_group.rvs(4, random_state=7)
    assert ldr(a @ Q, b @ Q) == pytest.approx(ldr(a, b), rel=1e-10)


def test_scaling_identity(rng):
    from eidoslab.represent import ldr

    a, b = rng.normal(size=(30, 3)), rng.normal(0.5, 1.0, size=(30, 3))
    c = 3.0
    assert ldr(c * a, c * b, eps=c * c * 1e-6) == pytest.approx(ldr(a, b, eps=1e-6), rel=1e-12)


def test_empty_class():
    from eidoslab.errors import ConfigError
    from eidoslab.represent import ldr

    with pytest.raises(ConfigError):
        ldr(np.zeros((0, 2)), np.ones((3, 2)))


# ---------------------------------------------------------------------------
# States and probing
# ---------------------------------------------------------------------------

def test_state_bookkeeping(tiny_model, rng):
    from eidoslab.represent import extract_all_states, extract_states

    series = rng.normal(size=(7, 12))
    allst = extract_all_states(tiny_model, series, batch=3, workers=2)
    assert allst.shape == (3, 7, 16)
    np.testing.assert_allclose(extract_states(tiny_model, series, 2, batch=4), allst[2], atol=1e-12)


def test_identical_inputs_identical_states(tiny_model, rng):
    from eidoslab.represent import extract_states

    row = rng.normal(size=12)
    states = extract_states(tiny_model, np.stack([row, row]), 1)
    np.testing.assert_allclose(states[0], states[1], atol=1e-12)


def test_layer_zero_is_last_value_embedding(tiny_model, rng):
    from eidoslab.datagen import znorm
    from eidoslab.represent import extract_states

    row = rng.normal(size=12)
    got = extract_states(tiny_model, row[None, :], 0)[0]
    expected = tiny_model.embed(znorm(row)[0][-1:]).data[0]
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_layer_out_of_range(tiny_model, rng):
    from eidoslab.errors import ConfigError
    from eidoslab.represent import extract_states

    with pytest.raises(ConfigError):
        extract_states(tiny_model, rng.normal(size=(2, 8)), 3)


def test_probe_sweep_curve(tiny_model, tiny_cfg):
    from eidoslab.model import EidosModel
    from eidoslab.represent import make_probe_dataset, probe_sweep

    ds = make_probe_dataset("trend", count=4, length=16)
    df = probe_sweep(tiny_model, ds, control=EidosModel.init(tiny_cfg, seed=9), batch=4, progress=False)
    assert df["layer"].tolist() == [0, 1, 2]
    assert {"ldr", "ldr_random"} <= set(df.columns)
    assert np.all(df["ldr"] >= 0)


# ---------------------------------------------------------------------------
# Steering
# ---------------------------------------------------------------------------

@pytest.fixture()
def steer_set():
    from eidoslab.represent import make_probe_dataset

    return make_probe_dataset("trend", count=6, length=16, purpose="steer")


def test_direction_is_unit_and_antisymmetric(tiny_model, steer_set):
    from eidoslab.represent import ProbeDataset, extract_direction

    d = extract_direction(tiny_model, steer_set, 2)
    assert np.linalg.norm(d.v_unit) == pytest.approx(1.0, abs=1e-9)
    assert d.energy > 0
    swapped = ProbeDataset("trend", steer_set.class1, steer_set.class0, "steer")
    np.testing.assert_array_equal(extract_direction(tiny_model, swapped, 2).v_unit, -d.v_unit)


def test_identical_classes_are_degenerate(tiny_model, steer_set):
    from eidoslab.errors import DegenerateDirectionError
    from eidoslab.represent import ProbeDataset, extract_direction

    same = ProbeDataset("trend", steer_set.class1, steer_set.class1.copy())
    with pytest.raises(DegenerateDirectionError):
        extract_direction(tiny_model, same, 1)


def test_zero_alpha_is_identity(tiny_model, steer_set, rng):
    from eidoslab.represent import extract_direction, steer_forecast

    d = extract_direction(tiny_model, steer_set, 1)
    base, steered = steer_forecast(tiny_model, rng.normal(size=16), 8, d, 0.0)
    np.testing.assert_array_equal(base.quantiles, steered.quantiles)


def test_nonzero_alpha_moves_forecast(tiny_model, steer_set, rng):
    from eidoslab.represent import extract_direction, steer_forecast

    d = extract_direction(tiny_model, steer_set, 1)
    base, steered = steer_forecast(tiny_model, rng.normal(size=16), 8, d, 0.5, positions="last")
    assert not np.allclose(base.quantiles, steered.quantiles)


def test_injection_scales_with_energy():
    from eidoslab.errors import DegenerateDirectionError
    from eidoslab.represent import ConceptDirection

    d = ConceptDirection(1, np.array([0.6, 0.8]), (np.zeros(2), np.ones(2)), energy=5.0)
    np.testing.assert_allclose(d.injection(0.2), [0.6, 0.8])
    with pytest.raises(DegenerateDirectionError):
        ConceptDirection(1, np.array([1.0, 1.0]), (np.zeros(2), np.ones(2)), energy=1.0)


def test_alpha_sweep_trace(tiny_model, steer_set, tmp_path):
    from eidoslab.plots import plot_steer_sweep
    from eidoslab.represent import alpha_sweep, extract_direction

    d = extract_direction(tiny_model, steer_set, 2)
    trace, rho = alpha_sweep(tiny_model, steer_set.class0[:2], 8, d, [-0.5, 0.0, 0.5], progress=False)
    assert len(trace) == 6
    assert -1.0 <= rho <= 1.0 or np.isnan(rho)
    zero = trace[trace["alpha"] == 0.0]
    np.testing.assert_array_equal(zero["response"].to_numpy(), zero["baseline_response"].to_numpy())
    path = plot_steer_sweep(trace, tmp_path / "steer.svg")
    assert "<svg" in path.read_text(encoding="utf-8")


def test_response():
    from eidoslab.represent import response

    assert response("trend", 2.0 * np.arange(5.0)) == pytest.approx(2.0)
    assert response("periodicity", np.ones(4)) == 0.0


def test_probe_plot_is_svg(tmp_path):
    import pandas as pd

    from eidoslab.plots import plot_probe_curves

    df = pd.DataFrame({"layer": [0, 1, 2], "ldr": [0.1, 0.5, 2.0], "ldr_random": [0.1, 0.1, 0.2]})
    path = plot_probe_curves(df, tmp_path / "probe.svg", "trend")
    assert "<svg" in path.read_text(encoding="utf-8")
