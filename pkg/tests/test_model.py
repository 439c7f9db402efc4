import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bhtwofold.errors import CapacityError, InvalidParameter
from bhtwofold.model import (INFINITE, BoseHubbardParams, QuenchProtocol, load_quench_config,
                             parse_u0, poisson_cutoff, validate)


def poisson_tail(n, lam):
    # independent route: direct summation of the pmf
    return 1.0 - sum(math.exp(-lam) * lam**m / math.factorial(m) for m in range(n + 1))


def test_poisson_cutoff_nbar5():
    assert poisson_cutoff(5, 0.01) == 11
    # the stricter tail tolerance lands on the conservative value
    assert poisson_cutoff(5, 0.002) == 13


@given(lam=st.floats(0.1, 8.0), tol=st.floats(1e-4, 0.3))
@settings(max_examples=60, deadline=None)
def test_poisson_cutoff_is_minimal(lam, tol):
    n = poisson_cutoff(lam, tol)
    assert poisson_tail(n, lam) <= tol + 1e-12
    if n > 0:
        assert poisson_tail(n - 1, lam) > tol - 1e-12


@pytest.mark.parametrize("lam,tol", [(0, 0.1), (-1, 0.1), (1, 0), (1, 1.0)])
def test_poisson_cutoff_rejects(lam, tol):
    with pytest.raises(InvalidParameter):
        poisson_cutoff(lam, tol)


def test_params_invariants():
    p = BoseHubbardParams(J=1, U=24, nbar=1, M=8, N=8, n_max=3)
    assert validate(p) is p
    assert p.local_dim == 4
    with pytest.raises(InvalidParameter, match="J > 0"):
        BoseHubbardParams(J=0, M=2, N=2)
    with pytest.raises(InvalidParameter, match="U >= 0"):
        BoseHubbardParams(U=-1, M=2, N=2)
    with pytest.raises(InvalidParameter, match="1/\\(2M\\)"):
        BoseHubbardParams(nbar=1, M=4, N=6, n_max=3)
    with pytest.raises(CapacityError):
        BoseHubbardParams(nbar=2, M=4, N=8, n_max=1)


def test_from_filling_rounds_and_defaults():
    p = BoseHubbardParams.from_filling(0.5, 9, U=50)
    assert p.N == 5
    assert p.n_max == poisson_cutoff(0.5, 0.01)
    p = BoseHubbardParams.from_filling(1, 16, U=8, n_max=3)
    assert (p.N, p.n_max, p.U) == (16, 3, 8)


def test_protocol_samples_and_checks():
    pr = QuenchProtocol(INFINITE, 24, 1, 4.0, 0.1)
    t = pr.sample_times()
    assert pr.n_samples == 40
    assert t[0] == pytest.approx(0.1) and t[-1] == pytest.approx(4.0)
    assert pr.observables == ("G1", "G2")
    assert pr.as_dict()["u0"] == "inf"
    with pytest.raises(InvalidParameter, match="integer filling"):
        QuenchProtocol(INFINITE, 24, 0.5, 4.0, 0.1)
    with pytest.raises(InvalidParameter):
        QuenchProtocol(2.0, 24, 1, 1.0, 2.0)
    with pytest.raises(InvalidParameter):
        QuenchProtocol(2.0, 24, 1, 1.0, 0.1, observables=("G3",))


def test_parse_u0():
    assert parse_u0("inf") is INFINITE
    assert parse_u0(" Infinite ") is INFINITE
    assert parse_u0("3.5") == 3.5
    assert repr(INFINITE) == "INFINITE"


def test_load_config(tmp_path):
    cfg_path = tmp_path / "q.ini"
    cfg_path.write_text(
        "[quench]\nengine = tebd  # comment\nu0 = inf\nu1 = 24\nnbar = 1\nM = 8\nn_max = 3\n"
        "T = 4\ndt_sample = 0.1\nobservables = G2\n\n[tebd]\nchi = 64\ndt = 0.01\n"
        "\n[analysis]\neta = 0.1\nwindow = 2,6\n")
    cfg = load_quench_config(cfg_path)
    assert cfg.engine == "tebd"
    assert cfg.protocol.u0 is INFINITE and cfg.protocol.observables == ("G2",)
    assert cfg.params.U == 24 and cfg.params.N == 8
    assert cfg.knobs == {"chi": 64, "dt": 0.01}
    assert cfg.analysis["window"] == "2,6"


def test_load_config_errors(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[quench]\nengine = ed\nu0 = inf\nnbar = 1\nM = 8\nT = 1\ndt_sample = 0.1\n")
    with pytest.raises(InvalidParameter, match="u1"):
        load_quench_config(bad)
    with pytest.raises(InvalidParameter):
        load_quench_config(tmp_path / "missing.ini")


@given(M=st.integers(2, 30), nbar=st.floats(0.05, 4.0))
def test_from_filling_always_valid(M, nbar):
    p = BoseHubbardParams.from_filling(nbar, M)
    assert abs(p.N / p.M - nbar) <= 0.5 / M + 1e-12
    assert np.isclose(validate(p).nbar, nbar)
