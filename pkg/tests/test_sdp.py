import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distcert.sdp import MatrixVariable, lmi_margin, min_spectral_norm


def _lyapunov(A):
    return lambda P: A.T @ P @ A - P


def test_margin_negative_for_stable_matrix():
    A = np.array([[0.5, 0.2], [0.0, 0.6]])
    res = lmi_margin(_lyapunov(A), [MatrixVariable("P", 2, 1.0)], 100.0)
    assert res.status == "optimal"
    P = res.values["P"]
    assert np.linalg.eigvalsh(P).min() >= 1.0 - 1e-7
    assert np.linalg.eigvalsh(A.T @ P @ A - P).max() <= res.t + 1e-7
    assert res.t < 0


def test_margin_positive_for_unstable_matrix():
    A = np.array([[1.1, 0.0], [0.0, 0.5]])
    res = lmi_margin(_lyapunov(A), [MatrixVariable("P", 2, 1.0)], 100.0)
    assert res.t > 0


def test_margin_respects_floor():
    res = lmi_margin(lambda P: P - 5 * np.eye(1), [MatrixVariable("P", 1, 0.0)], 10.0, t_floor=1.0)
    assert res.t == pytest.approx(-1.0, abs=1e-6)


def test_spectral_norm_shift():
    nrm, y = min_spectral_norm(np.diag([1.0, 3.0]), [np.eye(2)])
    assert nrm == pytest.approx(1.0, abs=1e-6)
    assert y[0] == pytest.approx(-2.0, abs=1e-5)


def test_spectral_norm_rectangular():
    M0 = np.array([[1.0, 2.0, 0.0], [0.0, 1.0, 0.0]])
    E = np.zeros((2, 3))
    E[0, 1] = 1.0
    nrm, y = min_spectral_norm(M0, [E])
    assert nrm == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_spectral_norm_never_worse_than_start(diag):
    M0 = np.diag(diag)
    E = np.zeros((3, 3))
    E[0, 0] = 1.0
    nrm, _ = min_spectral_norm(M0, [E])
    assert nrm <= np.linalg.norm(M0, 2) + 1e-6
    assert nrm >= max(abs(diag[1]), abs(diag[2])) - 1e-6
