import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distcert.algorithms import (CATALOG_NAMES, CatalogError, InconsistentOptimumError, Realization,
                                 RealizationError, catalog, check_fixed_point, check_implementable,
                                 construct_fixed_point, evaluation_order, fixed_point_diagnostic,
                                 load_realization, matches_feedthrough_pattern, save_realization)
from distcert.linalg import projector
from distcert.simulate import optimum, random_laplacian, random_quadratics

SVL_PARAMS = {"beta": 0.9, "gamma": 1.9, "delta": 1.0}


def build(name, alpha=0.1, mu=1.0):
    if name == "SVL":
        return catalog(name, alpha, **SVL_PARAMS)
    return catalog(name, alpha, mu, m=1.0, L=10.0)


def _scalar(**kw):
    base = dict(A=[[1.0]], B_u=[[1.0]], B_v=[[0.0]], C_y=[[1.0]], D_yu=[[0.0]], D_yv=[[0.0]],
                C_z=[[1.0]], D_zu=[[0.0]], D_zv=[[0.0]], F_x=np.zeros((0, 1)), F_u=np.zeros((0, 1)))
    base.update(kw)
    return Realization(**base)


def test_extra_block():
    r = catalog("EXTRA", 0.1, 1.0)
    np.testing.assert_allclose(r.A, [[2, -1, 0.1], [1, 0, 0], [0, 0, 0]])
    np.testing.assert_allclose(r.B_u, [[-0.1], [0], [1]])
    np.testing.assert_allclose(r.B_v, [[-1], [0], [0]])
    np.testing.assert_allclose(r.C_y, [[1, 0, 0]])
    np.testing.assert_allclose(r.C_z, [[1, -0.5, 0]])
    np.testing.assert_allclose(r.F_x, [[1, -1, 0.1]])
    np.testing.assert_allclose(r.F_u, [[0]])
    for key in ("D_yu", "D_yv", "D_zu", "D_zv"):
        assert not np.any(getattr(r, key))


def test_nids_block():
    r = catalog("NIDS", 0.2, 1.0)
    np.testing.assert_allclose(r.C_z, [[1, -0.5, 0.1]])
    np.testing.assert_allclose(r.D_zu, [[-0.1]])
    np.testing.assert_allclose(r.D_zv, [[0]])


def test_svl_template():
    r = catalog("SVL", 0.2, beta=0.5, gamma=1.5, delta=1.0)
    np.testing.assert_allclose(r.A, np.eye(2) + [[0, 0.5], [0, 0]])
    assert r.n_states == 2 and r.n_comm == 1
    np.testing.assert_allclose(r.F_x, [[0, 1]])


def test_catalog_errors():
    with pytest.raises(CatalogError):
        catalog("Gossip", 0.1)
    with pytest.raises(CatalogError):
        catalog("EXTRA", None)
    with pytest.raises(CatalogError):
        catalog("SVL", 0.1, beta=1.0)
    with pytest.raises(CatalogError):
        catalog("EXTRA", -0.1)
    with pytest.raises(CatalogError):
        catalog("NIDS", 0.1, 0.0)
    with pytest.raises(CatalogError):
        catalog("uDIG", 0.1, 1.0)


@pytest.mark.parametrize("name", CATALOG_NAMES)
def test_catalog_passes_structural_checks(name):
    r = build(name)
    ok, wit = check_fixed_point(r)
    assert ok and fixed_point_diagnostic(r) is None
    assert check_implementable(r)
    # witness identities
    nx = r.n_states
    p, q = wit.p_vec, wit.q_vec
    np.testing.assert_allclose((r.A - np.eye(nx)) @ p, 0, atol=1e-8)
    np.testing.assert_allclose(r.F_x @ p, 0, atol=1e-8)
    assert r.C_y @ p == pytest.approx([1.0])
    np.testing.assert_allclose((r.A - np.eye(nx)) @ q, r.B_u.ravel(), atol=1e-8)
    np.testing.assert_allclose(r.C_y @ q, r.D_yu.ravel(), atol=1e-8)
    np.testing.assert_allclose(r.C_z @ q, r.D_zu.ravel(), atol=1e-8)


def test_svl_without_beta_has_no_fixed_point():
    r = catalog("SVL", 0.1, beta=0.0, gamma=1.0, delta=1.0)
    ok, wit = check_fixed_point(r)
    assert not ok and wit is None
    assert "range" in fixed_point_diagnostic(r)


def test_rank_counterexample():
    assert not check_fixed_point(_scalar())[0]


def test_proximal_feedthrough_not_implementable():
    r = _scalar(D_yu=[[-0.5]], B_u=[[0.0]])
    assert not matches_feedthrough_pattern(r)
    assert not check_implementable(r)
    assert evaluation_order(r) is None


def test_feedthrough_patterns():
    assert matches_feedthrough_pattern(catalog("EXTRA", 0.1, 1.0))
    assert matches_feedthrough_pattern(catalog("NIDS", 0.1, 1.0))
    uextra = catalog("uEXTRA", 0.1, 1.0, m=1.0, L=10.0)
    assert not matches_feedthrough_pattern(uextra)
    order = evaluation_order(uextra)
    assert order.index(("v", 0)) < order.index(("z", 1))


def test_construct_fixed_point_zero():
    r = catalog("EXTRA", 0.1, 1.0)
    _, wit = check_fixed_point(r)
    fp = construct_fixed_point(r, wit, np.zeros((3, 2)), np.zeros(2))
    assert not np.any(fp.x)


def test_construct_fixed_point_rejects_inconsistent_gradients():
    r = catalog("EXTRA", 0.1, 1.0)
    _, wit = check_fixed_point(r)
    with pytest.raises(InconsistentOptimumError):
        construct_fixed_point(r, wit, np.ones((3, 1)), np.zeros(1))


def _one_step(r, fp, Lap):
    """Apply the state equations once in evaluation order at the fixed point."""
    X, u = fp.x, fp.u
    y = np.einsum("a,iad->id", r.C_y[0], X) + r.D_yu[0, 0] * u
    z = np.einsum("ja,iad->ijd", r.C_z, X) + r.D_zu[None, :, 0, None] * u[:, None, :]
    v = np.zeros_like(z)
    for kind, j in evaluation_order(r):
        if kind == "z":
            z[:, j] += np.einsum("l,ild->id", r.D_zv[j], v)
        elif kind == "v":
            v[:, j] = Lap @ z[:, j]
    y = y + np.einsum("b,ibd->id", r.D_yv[0], v)
    Xn = (np.einsum("ab,ibd->iad", r.A, X) + r.B_u[None, :, 0, None] * u[:, None, :]
          + np.einsum("ab,ibd->iad", r.B_v, v))
    return Xn, y, z, v


@pytest.mark.parametrize("name", CATALOG_NAMES)
def test_fixed_point_is_stationary(name):
    r = build(name)
    n, d = 4, 2
    funcs = random_quadratics(n, d, 1.0, 10.0, seed=5)
    y_opt, g = optimum(funcs)
    _, wit = check_fixed_point(r)
    fp = construct_fixed_point(r, wit, g, y_opt)
    Pc = np.eye(n) - projector(n)
    assert np.abs(Pc @ fp.y).max() < 1e-10
    assert np.abs(fp.u.sum(axis=0)).max() < 1e-10
    assert np.abs(np.einsum("ik,kpd->ipd", Pc, fp.z)).max() < 1e-10
    assert not np.any(fp.v)
    for seed in range(3):
        Xn, y, z, v = _one_step(r, fp, random_laplacian(n, 0.7, seed))
        np.testing.assert_allclose(Xn, fp.x, atol=1e-10)
        np.testing.assert_allclose(y, fp.y, atol=1e-10)
        np.testing.assert_allclose(v, 0, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(CATALOG_NAMES[:-1]), st.floats(1e-3, 1.0), st.floats(0.2, 2.0))
def test_catalog_fixed_point_property(name, alpha, mu):
    r = catalog(name, alpha, mu, m=1.0, L=10.0)
    assert check_fixed_point(r)[0]
    assert check_implementable(r)


def test_json_round_trip(tmp_path):
    r = catalog("DIGing", 0.05, 1.2)
    path = tmp_path / "diging.json"
    save_realization(r, path)
    data = json.loads(path.read_text())
    assert data["n_states"] == 3 and data["n_comm"] == 2 and data["n_invariants"] == 1
    back = load_realization(path)
    for key, val in r.matrices().items():
        np.testing.assert_array_equal(getattr(back, key), val)


def test_json_rejects_bad_files(tmp_path):
    data = catalog("EXTRA", 0.1, 1.0).to_dict()
    bad = dict(data, n_states=4)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    with pytest.raises(RealizationError):
        load_realization(path)
    text = json.dumps(data).replace("2.0", "NaN", 1)
    path.write_text(text)
    with pytest.raises(RealizationError):
        load_realization(path)
    missing = {k: v for k, v in data.items() if k != "B_v"}
    path.write_text(json.dumps(missing))
    with pytest.raises(RealizationError):
        load_realization(path)


def test_realization_shape_validation():
    with pytest.raises(RealizationError):
        _scalar(B_u=[[1.0], [2.0]])
    with pytest.raises(RealizationError):
        _scalar(A=[[np.inf]])
