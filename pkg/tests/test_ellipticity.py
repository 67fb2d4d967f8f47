import cmath
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pelliptic.ellipticity import (
    Lambda_of,
    MatrixField,
    PreconditionError,
    apply_Ip,
    delta_p,
    delta_p_field,
    ellipticity_report,
    field_from_json,
    identify_V,
    identify_V_inv,
    identify_W,
    identify_W_inv,
    lambda_of,
    load_matrix,
    matrix_from_json,
    matrix_to_json,
    p_range,
    real_form_embedding,
    rotation_angle,
    sector_angle,
    sector_angles,
)
from pelliptic.numerics import ParameterError, StructureError

I2 = np.eye(2)


def _rand_complex(rng, d):
    return rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))


def _rand_accretive(rng, d):
    A = _rand_complex(rng, d)
    shift = max(0.0, -lambda_of(A)) + rng.uniform(0.05, 1.0)
    return A + shift * np.eye(d)


def _form(A, xi, mu):
    # direct sesquilinear evaluation of Re <A xi, xi + mu conj(xi)>
    w = xi + mu * np.conj(xi)
    return float(np.real(np.vdot(w, A @ xi)))


def _sphere(rng, n, d):
    Z = rng.normal(size=(n, d)) + 1j * rng.normal(size=(n, d))
    return Z / np.linalg.norm(Z, axis=1, keepdims=True)


# -- lambda / Lambda ---------------------------------------------------------

def test_lambda_examples():
    assert lambda_of(I2) == pytest.approx(1.0)
    assert lambda_of(np.diag([1.0, 2.0])) == pytest.approx(1.0)
    # Hermitian part [[1, i/2], [-i/2, 1]] has eigenvalues 1/2, 3/2
    assert lambda_of([[1, 1j], [0, 1]]) == pytest.approx(0.5, abs=1e-14)


def test_Lambda_examples():
    assert Lambda_of(I2) == pytest.approx(1.0)
    assert Lambda_of(np.diag([1.0, 2.0])) == pytest.approx(2.0)
    # A*A = [[1, i], [-i, 2]]: eigenvalues (3 +- sqrt 5)/2
    top = math.sqrt((3 + math.sqrt(5)) / 2)
    assert Lambda_of([[1, 1j], [0, 1]]) == pytest.approx(top, abs=1e-13)
    assert top == pytest.approx((1 + math.sqrt(5)) / 2)


def test_lambda_can_be_negative():
    assert lambda_of(-I2) == pytest.approx(-1.0)


# -- real embedding ----------------------------------------------------------

def test_embedding_examples():
    assert np.allclose(real_form_embedding(I2, 0.0), np.eye(4))
    assert np.allclose(real_form_embedding(1.0, 1.0), np.diag([2.0, 0.0]))


@pytest.mark.parametrize("d", [1, 2, 3, 5])
def test_embedding_matches_direct_form(d):
    rng = np.random.default_rng(d)
    for _ in range(5):
        A = _rand_complex(rng, d)
        mu = rng.uniform(0, 2)
        M = real_form_embedding(A, mu)
        assert np.allclose(M, M.T)
        for xi in _sphere(rng, 200, d):
            v = identify_V(xi)
            assert abs(v @ M @ v - _form(A, xi, mu)) <= 1e-12


def test_embedding_rejects_negative_mu():
    with pytest.raises(ParameterError):
        real_form_embedding(I2, -0.1)


# -- delta_p -----------------------------------------------------------------

def test_delta_examples():
    assert delta_p(I2, 2) == pytest.approx(1.0)
    assert delta_p(I2, 4) == pytest.approx(0.5, abs=1e-12)
    assert abs(delta_p(cmath.exp(1j * math.pi / 3), 4)) <= 1e-10


def test_delta_brute_force_identity():
    rng = np.random.default_rng(0)
    X = _sphere(rng, 1_000_000, 2)
    vals = np.real(np.sum(np.conj(X + 0.5 * np.conj(X)) * X, axis=1))
    # sampled minimum approaches from above
    assert vals.min() >= delta_p(I2, 4) - 1e-12
    assert vals.min() - delta_p(I2, 4) <= 1e-4


def test_delta_scalar_closed_form():
    for theta in np.linspace(-1.4, 1.4, 15):
        for p in (1.3, 2.0, 3.0, 7.0):
            assert delta_p(cmath.exp(1j * theta), p) == pytest.approx(
                math.cos(theta) - abs(1 - 2 / p), abs=1e-12)


def test_delta_mu_keyword():
    A = cmath.exp(0.4j)
    assert delta_p(A, mu=0.5) == pytest.approx(delta_p(A, 4))
    # mu above 1 is allowed
    assert delta_p(1.0, mu=2.0) == pytest.approx(-1.0)
    with pytest.raises(ParameterError):
        delta_p(A)
    with pytest.raises(ParameterError):
        delta_p(A, 4, mu=0.5)
    with pytest.raises(ParameterError):
        delta_p(A, 0)


def test_delta_field_examples():
    n = 5
    assert delta_p_field(MatrixField.constant(I2, n), 4) == pytest.approx(0.5)
    assert delta_p_field(MatrixField(np.array([I2, 2 * I2])), 2) == pytest.approx(1.0)
    assert delta_p_field(MatrixField(np.array([I2, -I2])), 2) < 0
    with pytest.raises(StructureError):
        delta_p_field(MatrixField(np.zeros((0, 2, 2))), 2)


def test_pair_constants_examples():
    from pelliptic.ellipticity import pair_constants

    assert pair_constants(I2, 3 * I2, 2) == pytest.approx((1.0, 1.0, 3.0))
    rng = np.random.default_rng(5)
    A, B = _rand_accretive(rng, 3), _rand_accretive(rng, 3)
    assert pair_constants(A, A, 3) == pytest.approx((delta_p(A, 3), lambda_of(A), Lambda_of(A)))
    assert pair_constants(A, B, 3) == pytest.approx(
        (min(delta_p(A, 3), delta_p(B, 3)), min(lambda_of(A), lambda_of(B)),
         max(Lambda_of(A), Lambda_of(B))))
    with pytest.raises(StructureError):
        pair_constants(I2, np.eye(3), 2)


# -- invariants --------------------------------------------------------------

def test_conjugate_symmetry():
    rng = np.random.default_rng(1)
    for _ in range(200):
        A = _rand_complex(rng, int(rng.integers(1, 5)))
        for p in (2.5, 4.0, 17.0):
            q = p / (p - 1)
            assert abs(delta_p(A, p) - delta_p(A, q)) <= 1e-12


def test_monotone_in_p():
    rng = np.random.default_rng(2)
    ps = np.linspace(2, 32, 20)
    for _ in range(200):
        A = _rand_accretive(rng, int(rng.integers(1, 5)))
        vals = [delta_p(A, p) for p in ps]
        assert np.all(np.diff(vals) <= 1e-12)


def test_delta_two_is_lambda_and_upper_bound():
    rng = np.random.default_rng(3)
    for _ in range(200):
        A = _rand_complex(rng, int(rng.integers(1, 5)))
        assert abs(delta_p(A, 2) - lambda_of(A)) <= 1e-12
        Lam = Lambda_of(A)
        for p in (1.5, 3.0, 10.0):
            dp = delta_p(A, p)
            assert dp <= lambda_of(A) + 1e-12
            assert dp <= lambda_of(A) + abs(1 - 2 / p) * Lam + 1e-12


def test_real_elliptic_is_p_elliptic_everywhere():
    rng = np.random.default_rng(4)
    for _ in range(50):
        d = int(rng.integers(1, 5))
        R = rng.normal(size=(d, d))
        A = R + (max(0.0, -lambda_of(R)) + 0.1) * np.eye(d)
        for p in (3.0, 10.0, 100.0, 1000.0):
            assert delta_p(A, p) > 0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31), st.floats(0, 3))
def test_delta_is_sampled_lower_bound(d, seed, mu):
    rng = np.random.default_rng(seed)
    A = _rand_complex(rng, d)
    dm = delta_p(A, mu=mu)
    X = _sphere(rng, 2000, d)
    vals = [_form(A, x, mu) for x in X]
    assert min(vals) >= dm - 1e-10


# -- ranges and angles -------------------------------------------------------

def test_p_range_identity_and_real():
    assert p_range(I2) == (1.0, math.inf)
    assert delta_p(I2, 10) > 0 and delta_p(I2, 100) > 0
    assert p_range(np.array([[2.0, 1.0], [-0.5, 1.0]])) == (1.0, math.inf)


def test_p_range_scalar():
    pmin, pmax = p_range(cmath.exp(1j * math.pi / 3))
    assert pmax == pytest.approx(4.0, rel=1e-8)
    assert 1 / pmin + 1 / pmax == pytest.approx(1.0, abs=1e-9)
    # sampled check on either side of the root
    alpha = np.linspace(0, 2 * np.pi, 10_001)
    xi = np.exp(1j * alpha)
    A = cmath.exp(1j * math.pi / 3)
    for p, sign in ((3.9, 1), (4.1, -1)):
        mu = 1 - 2 / p
        vals = np.real(np.conj(xi + mu * np.conj(xi)) * A * xi)
        assert sign * vals.min() > 0


def test_p_range_random_roots():
    rng = np.random.default_rng(6)
    for _ in range(20):
        A = _rand_accretive(rng, 2)
        pmin, pmax = p_range(A)
        if math.isinf(pmax):
            continue
        assert 1 / pmin + 1 / pmax == pytest.approx(1.0, abs=1e-9)
        assert delta_p(A, pmax * (1 - 1e-6)) > -1e-9
        assert delta_p(A, pmax * (1 + 1e-3)) < 0


def test_p_range_requires_accretive():
    with pytest.raises(PreconditionError):
        p_range(-I2)


def test_rotation_angle_examples():
    assert rotation_angle(I2, 2) == pytest.approx(math.pi / 2, abs=2e-6)
    assert rotation_angle(I2, 4) == pytest.approx(math.pi / 3, abs=1e-5)
    assert rotation_angle(cmath.exp(1j * math.pi / 6), 2) == pytest.approx(math.pi / 3, abs=1e-5)


def test_rotation_angle_precondition():
    with pytest.raises(PreconditionError, match="Delta_p"):
        rotation_angle(cmath.exp(1.2j), 4)


def test_sector_angle_examples():
    assert sector_angle(I2) == pytest.approx(math.pi / 4)
    assert sector_angle(np.diag([1.0, 2.0])) == pytest.approx(math.atan(2))
    assert sector_angle(1.0) == pytest.approx(math.pi / 4)
    std, lit = sector_angles(np.diag([1.0, 2.0]))
    assert lit == pytest.approx(math.atan(0.5))
    assert std + lit == pytest.approx(math.pi / 2)
    with pytest.raises(PreconditionError):
        sector_angle(-I2)


def test_sector_contains_numerical_range():
    rng = np.random.default_rng(8)
    for _ in range(30):
        A = _rand_accretive(rng, 3)
        w0 = sector_angle(A)
        for xi in _sphere(rng, 500, 3):
            z = np.vdot(xi, A @ xi)
            assert abs(cmath.phase(z)) <= w0 + 1e-12


def test_report_invariants():
    rng = np.random.default_rng(9)
    for _ in range(10):
        A = _rand_accretive(rng, 2)
        p = 3.0
        if delta_p(A, p) <= 0:
            continue
        r = ellipticity_report(A, p)
        assert r.lambda_ <= r.Lambda
        assert r.delta_p <= r.lambda_ + r.mu * r.Lambda + 1e-12
        if math.isfinite(r.p_max):
            assert 1 / r.p_min + 1 / r.p_max == pytest.approx(1.0, abs=1e-9)
        assert 0 < r.theta <= math.pi / 2
    r = ellipticity_report(-I2, 2)
    assert math.isnan(r.omega0) and math.isnan(r.theta)


# -- I_p and identifications -------------------------------------------------

def test_apply_Ip():
    rng = np.random.default_rng(0)
    xi = rng.normal(size=4) + 1j * rng.normal(size=4)
    assert np.allclose(apply_Ip(xi, 2), xi)
    assert np.allclose(apply_Ip(np.array([1j]), 4), [0.5j])
    x = rng.normal(size=3)
    assert np.allclose(apply_Ip(x, 5), (2 - 2 / 5) * x)
    with pytest.raises(ParameterError):
        apply_Ip(xi, 1.0)


def test_identify_maps():
    assert np.array_equal(identify_V(np.array([1 + 2j])), [1.0, 2.0])
    rng = np.random.default_rng(1)
    for _ in range(100):
        z = rng.normal(size=3) + 1j * rng.normal(size=3)
        w = rng.normal(size=3) + 1j * rng.normal(size=3)
        assert abs(np.real(np.vdot(w, z)) - identify_V(z) @ identify_V(w)) <= 1e-15 * 10
        assert np.array_equal(identify_V_inv(identify_V(z)), z)
        x = identify_W(z, w)
        assert np.array_equal(x[:3], z.real) and np.array_equal(x[6:9], w.real)
        z2, w2 = identify_W_inv(x)
        assert np.array_equal(z2, z) and np.array_equal(w2, w)
    # scalar pair ordering
    assert np.array_equal(identify_W(np.array([1 + 2j]), np.array([3 + 4j])), [1, 2, 3, 4])


# -- JSON --------------------------------------------------------------------

def test_json_round_trip(tmp_path):
    A = np.array([[1 + 2j, -0.5], [0.25j, 3.0]])
    doc = matrix_to_json(A)
    assert np.array_equal(matrix_from_json(doc), A)
    path = tmp_path / "A.json"
    path.write_text(json.dumps(doc))
    assert np.array_equal(load_matrix(path), A)


def test_json_errors():
    with pytest.raises(StructureError):
        matrix_from_json({"d": 2, "entries": [[[1, 0]]]})
    with pytest.raises(StructureError):
        matrix_from_json({"entries": []})


def test_field_json():
    doc = {"cells": {"0,1": {"d": 1, "entries": [[[2, 0]]]}}, "default": {"d": 1, "entries": [[[1, 0]]]}}
    F = field_from_json(doc, [(0, 0), (0, 1), (1, 0)])
    assert np.allclose(F.matrices[:, 0, 0], [1, 2, 1])
    with pytest.raises(StructureError):
        field_from_json({"cells": {}}, [(0, 0)])
