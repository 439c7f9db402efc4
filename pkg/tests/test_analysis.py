import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bhtwofold.analysis import (Method, activation_times, default_window, extrema_ridges,
                                fit_velocity, twofold_report)
from bhtwofold.dispersion import DispersionRelation, velocity_set
from bhtwofold.errors import EmptySignal, InsufficientPoints
from bhtwofold.maps import CorrelationMap, read_map
from bhtwofold.model import BoseHubbardParams
from bhtwofold.quasiparticle import AnalyticMapSpec, predict_map

from synthetic import sharp_cone, two_velocity

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="module")
def cone():
    return sharp_cone()


def test_activation_on_sharp_cone(cone):
    pts = activation_times(cone, 0.1)
    assert pts.shape == (30, 2)
    fit = fit_velocity(pts)
    assert fit.velocity == pytest.approx(3.0, abs=0.02)
    # threshold crossing sits a fixed lag behind the front
    lag = pts[:, 1] - pts[:, 0] / 3.0
    assert np.ptp(lag) < 0.02
    assert fit.n_points == 30 and fit.stderr >= 0


def test_eta_to_one_gives_row_maximum():
    # damped rows have a single global maximum
    R = np.arange(1, 11)
    t = np.arange(1, 501) * 0.01
    s = np.clip(t[None, :] - R[:, None] / 3, 0, None)
    m = CorrelationMap("G2", R, t, np.sin(2 * s) * np.exp(-s))
    pts = activation_times(m, 0.999999)
    arg = t[np.argmax(m.values, axis=1)]
    np.testing.assert_allclose(pts[:, 1], arg, atol=0.01)


def test_activation_errors(cone):
    zero = CorrelationMap("G2", [1, 2], [0.1, 0.2], np.zeros((2, 2)))
    with pytest.raises(EmptySignal):
        activation_times(zero)
    for eta in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            activation_times(cone, eta)


def test_fit_exact_line_and_jitter():
    t = np.linspace(1, 5, 20)
    fit = fit_velocity(np.column_stack([3 * t + 1, t]))
    assert fit.velocity == pytest.approx(3.0, abs=1e-12)
    assert fit.stderr < 1e-10 and fit.residual_rms < 1e-10
    rng = np.random.default_rng(7)
    jit = t * (1 + 0.01 * rng.standard_normal(t.size))
    fit = fit_velocity(np.column_stack([3 * t, jit]))
    assert fit.velocity == pytest.approx(3.0, abs=0.05)


def test_fit_needs_three_points():
    with pytest.raises(InsufficientPoints):
        fit_velocity(np.array([[1.0, 1.0], [2.0, 2.0]]))
    with pytest.raises(InsufficientPoints):
        fit_velocity(np.array([[1.0, 1.0], [2.0, 1.0], [3.0, 1.0]]))
    with pytest.raises(InsufficientPoints):
        fit_velocity(np.column_stack([np.arange(10.0), np.arange(10.0)]), window=(20, 30))


def test_window_restricts_fit():
    R = np.arange(1.0, 21.0)
    t = np.where(R <= 10, R / 2, R / 5 + 3)
    assert fit_velocity(np.column_stack([R, t]), window=(1, 10)).velocity == pytest.approx(2.0)
    assert fit_velocity(np.column_stack([R, t]), window=(11, 20)).velocity == pytest.approx(5.0)


def test_monotone_map_has_no_ridges():
    R = np.arange(1, 20)
    t = np.linspace(0.1, 5, 100)
    m = CorrelationMap("G2", R, t, 1 - np.exp(-np.outer(1 / R, t)))
    assert extrema_ridges(m) == []
    assert extrema_ridges(m, axis="R") == []


@pytest.mark.parametrize("axis", ["t", "R"])
def test_carrier_ridges_recover_phase_velocity(axis):
    # cos(k R - w t) inside a cone: crests travel at w/k = 2
    R = np.arange(1, 41)
    t = np.arange(1, 601) * 0.02
    vals = np.where(R[:, None] < 8 * t[None, :], np.cos(0.8 * R[:, None] - 1.6 * t[None, :]), 0)
    ridges = extrema_ridges(CorrelationMap("G2", R, t, vals), axis=axis)
    assert ridges
    slopes = [fit_velocity(r.points, method=Method.RIDGE).velocity for r in ridges
              if len(r.points) >= 10]
    assert np.median(slopes) == pytest.approx(2.0, rel=0.01)


def test_two_velocity_fixture():
    m = read_map(DATA / "two_velocity.csv")
    rep = twofold_report(m, 0.1, ridge_axis="R")
    assert rep.V_CE == pytest.approx(4.0, rel=0.02)
    assert rep.V_m == pytest.approx(2.0, rel=0.02)
    assert rep.flags == []
    assert not rep.single_cone


def test_deep_mi_full_map_is_single_cone():
    p = BoseHubbardParams(J=1, U=200, nbar=1, M=2, N=2)
    m = predict_map(AnalyticMapSpec(p, 40, 8.0, 0.02, N_k=2048, dispersion="effective"))
    rep = twofold_report(m, 0.1, velocity_set(DispersionRelation("effective", nbar=1)),
                         ridge_axis="R")
    assert rep.V_CE == pytest.approx(6.0, rel=0.05)
    assert "SINGLE_CONE" in rep.flags


@given(lam=st.floats(1e-6, 1e6))
@settings(max_examples=25, deadline=None)
def test_normalization_invariance(lam):
    m = two_velocity(R_max=20, t_max=6.0)
    a = twofold_report(m, 0.1, ridge_axis="R")
    b = twofold_report(m.scaled(lam), 0.1, ridge_axis="R", noise_floor=1e-10 * min(lam, 1))
    np.testing.assert_array_equal(activation_times(m), activation_times(m.scaled(lam)))
    assert a.V_CE == b.V_CE and a.flags == b.flags
    # vertex refinement divides differences of scaled samples: equal up to rounding
    assert b.V_m == pytest.approx(a.V_m, rel=1e-12)


@given(shift=st.floats(-3.0, 3.0))
@settings(max_examples=15, deadline=None)
def test_time_translation_covariance(shift):
    m = sharp_cone(R_max=15, t_max=8.0, dt=0.02)
    a = fit_velocity(activation_times(m))
    b = fit_velocity(activation_times(m.shifted(shift)))
    assert b.velocity == pytest.approx(a.velocity, rel=1e-9)
    assert b.intercept == pytest.approx(a.intercept - a.velocity * shift, abs=1e-7)


def test_eta_robustness(cone):
    rep = twofold_report(cone, 0.1, eta_scan=[0.05, 0.1, 0.2, 0.3])
    v = [e["V_CE"] for e in rep.eta_scan]
    assert (max(v) - min(v)) / np.mean(v) < 0.03


def test_report_text_round_trips():
    m = read_map(DATA / "two_velocity.csv")
    rep = twofold_report(m, 0.1, velocity_set(DispersionRelation("free")), ridge_axis="R")
    d = json.loads(rep.to_text())
    assert d["kind"] == "G2" and d["eta"] == 0.1
    assert d["V_CE"] == pytest.approx(rep.V_CE)
    assert set(d["relative_deviations"]) >= {"V_CE", "V_m"}
    assert rep.to_text() == twofold_report(m, 0.1, velocity_set(DispersionRelation("free")),
                                           ridge_axis="R").to_text()


def test_default_window_for_engine_maps():
    m = sharp_cone(engine="tebd")
    m = CorrelationMap("G2", m.R_values, m.t_values, m.values,
                       {"engine": "tebd", "params": {"M": 16}})
    assert default_window(m) == (4, 12)
    assert default_window(sharp_cone()) == (1, 30)
