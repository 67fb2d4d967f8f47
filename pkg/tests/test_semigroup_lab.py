import cmath
import math
from pathlib import Path

import numpy as np
import pytest

from pelliptic.bellman import BellmanParams, choose_delta
from pelliptic.ellipticity import Lambda_of, MatrixField, PreconditionError, delta_p, lambda_of
from pelliptic.numerics import StructureError
from pelliptic.semigroup_lab import (
    DIRICHLET,
    NEUMANN,
    CrankNicolson,
    GridDomain,
    TimeGrid,
    assemble,
    bilinear_embedding,
    contractivity_experiment,
    dissipation_value,
    dissipativity_check,
    flow_trace,
    load_problem,
    lp_ball_invariance_probe,
    lp_norm,
    resolvent_apply,
    semigroup_apply,
    to_csv,
    truncation_convergence,
)

DATA = Path(__file__).parent / "data"


def _sine(dom, k=1):
    return dom.restrict(lambda x: np.sin(k * np.pi * x))


def _one_cell(V):
    dom = GridDomain(1.0, np.ones(1, bool), {"left": NEUMANN, "right": NEUMANN})
    return dom, assemble(dom, 1.0, V)


# -- domain ------------------------------------------------------------------

def test_interval_nodes():
    dom = GridDomain.interval(129)
    assert dom.h == pytest.approx(1 / 128)
    assert dom.n_free == 127 and dom.case == DIRICHLET
    assert dom.eliminated[0] and dom.eliminated[-1]
    assert GridDomain.interval(9, NEUMANN, NEUMANN).case == NEUMANN
    assert GridDomain.interval(9, DIRICHLET, NEUMANN).case == "mixed"


def test_domain_validation():
    with pytest.raises(StructureError):
        GridDomain(0.1, np.ones(4, bool), {"left": "robin", "right": NEUMANN})
    with pytest.warns(UserWarning):
        GridDomain(0.1, np.array([True, False, True]), {"left": NEUMANN, "right": NEUMANN})


def test_restrict_extend_round_trip():
    dom = GridDomain.rectangle(5, 6, 0.2, labels={"left": DIRICHLET, "right": NEUMANN,
                                                  "bottom": NEUMANN, "top": DIRICHLET})
    rng = np.random.default_rng(0)
    u = rng.normal(size=dom.n_free) + 1j * rng.normal(size=dom.n_free)
    assert np.array_equal(dom.restrict(dom.extend(u)), u)
    assert np.all(dom.extend(u)[dom.eliminated] == 0)


def test_mixed_problem_file():
    prob = load_problem(DATA / "mixed2d.json")
    dom = prob.domain
    assert dom.case == "mixed"
    assert not dom.mask.all()
    LA, _ = prob.operators()
    assert LA.n == dom.n_free
    assert np.all(LA.V >= 0)


# -- assembly ----------------------------------------------------------------

def test_dirichlet_stencil():
    L = assemble(GridDomain.interval(5), 1.0)
    want = np.array([[32, -16, 0], [-16, 32, -16], [0, -16, 32]], dtype=complex)
    assert np.allclose(L.matrix.toarray(), want, atol=1e-12)


def test_neumann_kernel():
    rng = np.random.default_rng(1)
    dom = GridDomain.rectangle(7, 5, 0.1, labels={s: NEUMANN for s in ("left", "right", "top", "bottom")})
    mats = rng.normal(size=(dom.mask.sum(), 2, 2)) + 1j * rng.normal(size=(dom.mask.sum(), 2, 2))
    L = assemble(dom, MatrixField(mats + 3 * np.eye(2)))
    assert np.linalg.norm(L @ np.ones(L.n)) <= 1e-12


def test_constant_potential_adds_diagonal():
    dom = GridDomain.interval(17, DIRICHLET, NEUMANN)
    A = cmath.exp(0.3j)
    L0 = assemble(dom, A)
    L1 = assemble(dom, A, 2.5)
    np.testing.assert_array_equal((L1.matrix - L0.matrix).toarray(), np.diag(np.full(L0.n, 2.5 * 1.0 + 0j)))


def test_hermitian_for_real_symmetric():
    dom = GridDomain.rectangle(6, 6, 0.2)
    L = assemble(dom, np.array([[2.0, 0.5], [0.5, 1.0]]), 1.0)
    M = L.matrix.toarray()
    assert np.max(np.abs(M - M.conj().T)) <= 1e-12
    assert np.linalg.eigvalsh(M).min() >= -1e-12


def test_negative_potential_rejected():
    dom = GridDomain.interval(9)
    V = np.zeros(9)
    V[4] = -1
    with pytest.raises(PreconditionError, match=r"\(4,\)"):
        assemble(dom, 1.0, V)
    with pytest.raises(StructureError):
        assemble(GridDomain.rectangle(4, 4, 0.25), 1.0)


def test_discrete_accretivity():
    rng = np.random.default_rng(2)
    dom = GridDomain.rectangle(8, 7, 0.1, labels={"left": DIRICHLET, "right": NEUMANN,
                                                  "bottom": DIRICHLET, "top": NEUMANN})
    n = int(dom.mask.sum())
    mats = rng.normal(size=(n, 2, 2)) + 1j * rng.normal(size=(n, 2, 2))
    shift = max(0.0, -min(lambda_of(m) for m in mats)) + 0.3
    F = MatrixField(mats + shift * np.eye(2))
    L = assemble(dom, F, rng.uniform(0, 2, dom.shape))
    lam = lambda_of(F)
    vol = dom.cell_volume
    for _ in range(50):
        u = rng.normal(size=L.n) + 1j * rng.normal(size=L.n)
        form = vol * np.real(np.vdot(u, L.matrix @ u))
        energy = vol * np.sum(np.abs(L.gradient(u)) ** 2)
        assert form >= lam * energy - 1e-10


def test_lp_norm_examples():
    assert lp_norm(np.ones(7), 1, 1.0) == pytest.approx(7)
    assert lp_norm(np.array([1, -3j, 2]), np.inf, 0.1) == 3
    u = np.array([1.0, 2.0, 3.0])
    assert lp_norm(u, 2, 0.25, dim=2) == pytest.approx(np.linalg.norm(u) * 0.25)


# -- evolution ---------------------------------------------------------------

def test_semigroup_zero_time():
    L = assemble(GridDomain.interval(17), 1.0)
    f = np.arange(L.n) + 1j
    np.testing.assert_array_equal(semigroup_apply(L, f, 0.0), f)


@pytest.mark.parametrize("t", [0.05, 0.1, 0.25])
def test_heat_decay(t):
    dom = GridDomain.interval(129)
    L = assemble(dom, 1.0)
    f = _sine(dom)
    n = 64
    u = semigroup_apply(L, f, t, n_steps=n)
    err = lp_norm(u - math.exp(-math.pi**2 * t) * f, 2, dom.h)
    assert err <= 2 * (dom.h**2 + (t / n) ** 2) * lp_norm(f, 2, dom.h)


def test_neumann_potential_constant():
    dom = GridDomain.interval(33, NEUMANN, NEUMANN)
    c, t = 1.7, 0.1
    L = assemble(dom, 1.0, c)
    one = np.ones(L.n)
    n = 2000
    u = semigroup_apply(L, one, t, n_steps=n)
    dt = t / n
    cn = ((1 - c * dt / 2) / (1 + c * dt / 2)) ** n
    assert np.max(np.abs(u - cn)) <= 1e-12
    assert np.max(np.abs(u - math.exp(-c * t))) <= 1e-10


def test_semigroup_property():
    rng = np.random.default_rng(3)
    L = assemble(GridDomain.interval(65, DIRICHLET, NEUMANN), cmath.exp(0.4j), 1.0)
    f = rng.normal(size=L.n) + 1j * rng.normal(size=L.n)
    dt = 1e-3
    ts, tt = 7 * dt, 12 * dt
    both = semigroup_apply(L, f, ts + tt, n_steps=19)
    split = semigroup_apply(L, semigroup_apply(L, f, ts, n_steps=7), tt, n_steps=12)
    assert np.linalg.norm(both - split) <= 10 * 1e-12 * 19 * np.linalg.norm(f)


def test_mass_conservation_neumann():
    rng = np.random.default_rng(4)
    dom = GridDomain.rectangle(9, 7, 0.125, labels={s: NEUMANN for s in ("left", "right", "top", "bottom")})
    n = int(dom.mask.sum())
    R = rng.normal(size=(n, 2, 2)) * 0.3 + 2 * np.eye(2)
    L = assemble(dom, MatrixField(R))
    f = rng.normal(size=L.n)
    u = semigroup_apply(L, f, 0.05)
    assert abs(np.sum(u) - np.sum(f)) * dom.cell_volume <= 1e-10


def test_l2_contractive_rotated():
    rng = np.random.default_rng(5)
    A = np.array([[1.0, 0.4j], [-0.2, 1.5]])
    dom = GridDomain.rectangle(8, 8, 1 / 7)
    om = math.atan(Lambda_of(A) / lambda_of(A))
    for _ in range(100):
        phi = rng.uniform(-1, 1) * (math.pi / 2 - om) * 0.999
        L = assemble(dom, A, rng.uniform(0, 3), phi)
        f = rng.normal(size=L.n) + 1j * rng.normal(size=L.n)
        u = semigroup_apply(L, f, rng.uniform(1e-4, 0.1))
        assert np.linalg.norm(u) <= (1 + 1e-10) * np.linalg.norm(f)


def test_step_failure_reports_index():
    from pelliptic.numerics import SolverError

    L = assemble(GridDomain.interval(9), 1.0)
    cn = CrankNicolson(L, 1e-3)
    bad = np.full(L.n, np.nan, dtype=complex)
    with pytest.raises(SolverError, match="step 5"):
        cn.step(bad, 1, first_index=5)


# -- resolvent ---------------------------------------------------------------

def test_resolvent_single_cell():
    _, L = _one_cell(1.0)
    f = np.array([3.0 - 1j])
    x = resolvent_apply(L, -1.0, f)
    assert np.allclose(x, f / (-2.0))


def test_resolvent_bounds_and_asymptotics():
    rng = np.random.default_rng(6)
    L = assemble(GridDomain.interval(65), cmath.exp(0.5j), 0.5)
    f = rng.normal(size=L.n) + 1j * rng.normal(size=L.n)
    x = resolvent_apply(L, -1.0, f)
    assert np.linalg.norm(x) <= np.linalg.norm(f)
    errs = [np.linalg.norm(s * resolvent_apply(L, -s, f) + f) for s in (1e4, 1e6, 1e8)]
    assert errs[0] > errs[1] > errs[2] and errs[2] <= 1e-3 * np.linalg.norm(f)


def test_resolvent_rejects_sector():
    L = assemble(GridDomain.interval(17), 1.0)
    with pytest.raises(PreconditionError):
        resolvent_apply(L, 5.0 + 1j, np.ones(L.n))


# -- contractivity and dissipativity ----------------------------------------

@pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 10.0])
def test_contractive_real(p):
    dom = GridDomain.interval(65)
    x = dom.coordinates()[0]
    F = MatrixField((1 + 0.5 * np.sin(3 * x))[:, None, None])
    L = assemble(dom, F, 2 + np.cos(x))
    assert contractivity_experiment(L, p, n_trials=10, seed=1) <= 1 + 1e-8


def test_contractive_p2_rotated():
    A = cmath.exp(0.3j)
    L = assemble(GridDomain.interval(65), A)
    phi = 0.9 * (math.pi / 2 - math.atan(Lambda_of(A) / lambda_of(A)))
    assert contractivity_experiment(L, 2.0, phase=phi, n_trials=10) <= 1 + 1e-10


def test_complex_scalar_refinement():
    theta, p = 0.6, 3.0
    assert delta_p(cmath.exp(1j * theta), p) > 0
    excess = []
    for n in (33, 65, 129):
        L = assemble(GridDomain.interval(n), cmath.exp(1j * theta))
        excess.append(max(0.0, contractivity_experiment(L, p, n_trials=8, seed=2) - 1))
    assert excess[-1] <= excess[0] + 1e-12
    assert max(excess) <= 1e-2


def test_dissipativity_cases():
    dom = GridDomain.interval(65)
    assert dissipativity_check(assemble(dom, 1.0, 1.0), 2.0, n_trials=50) >= -1e-12
    good = assemble(dom, cmath.exp(0.6j))
    assert delta_p(cmath.exp(0.6j), 3.0) > 0
    assert dissipativity_check(good, 3.0, n_trials=50) >= -1e-8
    bad = assemble(dom, cmath.exp(1.3j))
    assert delta_p(cmath.exp(1.3j), 4.0) < 0
    assert dissipativity_check(bad, 4.0, n_trials=50) < 0


def test_dissipation_value_p2_is_form():
    rng = np.random.default_rng(7)
    L = assemble(GridDomain.interval(33), 1.0 + 0.2j, 1.0)
    u = rng.normal(size=L.n) + 1j * rng.normal(size=L.n)
    want = np.real(np.vdot(u, L.matrix @ u)) / np.vdot(u, u).real
    assert dissipation_value(L, u, 2.0) == pytest.approx(want)


def test_lp_ball_probe():
    neu = assemble(GridDomain.interval(17, NEUMANN, NEUMANN), 1.0)
    assert lp_ball_invariance_probe(neu, 3.0, n_trials=20)
    dir_ = assemble(GridDomain.interval(17), 1.0)
    assert lp_ball_invariance_probe(dir_, 1.5, n_trials=20)
    LA, _ = load_problem(DATA / "mixed2d.json").operators()
    assert lp_ball_invariance_probe(LA, 4.0, n_trials=100)


# -- bilinear embedding ------------------------------------------------------

def test_embedding_zero_data():
    L = assemble(GridDomain.interval(33), 1.0)
    rep = bilinear_embedding(L, L, np.zeros(L.n), _sine(L.domain), 3.0)
    assert rep.value == 0.0 and rep.ratio == 0.0


def test_embedding_no_potential_density():
    dom = GridDomain.interval(33)
    L = assemble(dom, 1.0)
    f, g = _sine(dom), _sine(dom, 2)
    rep = bilinear_embedding(L, L, f, g, 3.0)
    want = dom.cell_volume * np.sum(np.abs(L.gradient(f)[:, 0]) * np.abs(L.gradient(g)[:, 0]))
    assert rep.integrand[0] == pytest.approx(want)


def test_embedding_heat_oracle():
    dom = GridDomain.interval(129)
    L = assemble(dom, 1.0)
    f = _sine(dom)
    rep = bilinear_embedding(L, L, f, f, 2.0)
    # int_0^inf int_0^1 pi^2 e^{-2 pi^2 t} cos^2(pi x) dx dt = 1/4
    assert rep.value == pytest.approx(0.25, rel=0.02)
    assert math.isfinite(rep.ratio) and rep.tail_estimate >= 0
    long = bilinear_embedding(L, L, f, f, 2.0, TimeGrid(T_max=2 * rep.T_max))
    assert long.value == pytest.approx(rep.value, rel=0.01)


def test_embedding_grid_mismatch():
    La = assemble(GridDomain.interval(17), 1.0)
    Lb = assemble(GridDomain.interval(33), 1.0)
    with pytest.raises(StructureError):
        bilinear_embedding(La, Lb, np.ones(La.n), np.ones(Lb.n), 2.0)


# -- flow --------------------------------------------------------------------

def _flow_setup(n=65):
    dom = GridDomain.interval(n)
    x = dom.coordinates()[0]
    f = dom.restrict(np.sin(np.pi * x) + 0.3j * np.sin(3 * np.pi * x))
    g = dom.restrict(4 * x * (1 - x) * np.exp(2j * x))
    return dom, f, g


def test_flow_zero():
    dom, _, _ = _flow_setup(33)
    L = assemble(dom, 1.0)
    tr = flow_trace(L, L, np.zeros(L.n), np.zeros(L.n), BellmanParams(3.0, 0.1), times=[0.01, 0.02])
    assert np.all(tr.E == 0)


def test_flow_decomposition():
    dom, f, g = _flow_setup()
    A = cmath.exp(1j * math.pi / 8)
    LA, LB = assemble(dom, A, 1.0), assemble(dom, 1.0, 0.5)
    p = 4.0
    params = BellmanParams(p, choose_delta(p, A, 1.0))
    times = np.geomspace(1e-3, 0.2, 12)
    tr = flow_trace(LA, LB, f, g, params, times=times)
    rel = np.abs(-tr.dE_numeric - (tr.I1 + tr.I2)) / np.abs(tr.I1 + tr.I2)
    assert rel.max() <= 1e-3
    assert np.all(np.diff(tr.E) <= 1e-8)
    vol = dom.cell_volume
    bound = (1 + params.delta) * (vol * np.sum(np.abs(f) ** p) + vol * np.sum(np.abs(g) ** params.q))
    assert tr.E[0] <= bound
    assert len(tr.rows()) == len(times)


def test_flow_rejects_bad_times():
    dom, f, g = _flow_setup(17)
    L = assemble(dom, 1.0)
    with pytest.raises(ValueError):
        flow_trace(L, L, f, g, BellmanParams(3.0, 0.1), times=[0.1, 0.05])


# -- truncation --------------------------------------------------------------

def test_truncation_bounded_potential_exact():
    dom = GridDomain.interval(33)
    V = np.linspace(0, 5, 33)
    tab = truncation_convergence(dom, 1.0, V, 1.0, np.ones(dom.n_free), [5, 10])
    assert np.all(tab.e_grad == 0) and np.all(tab.e_pot == 0)


def test_truncation_inverse_distance():
    dom = GridDomain.interval(129)
    with np.errstate(divide="ignore"):
        V = 1.0 / dom.coordinates()[0]
    n_list = [2.0**k for k in range(0, 9)]
    tab = truncation_convergence(dom, 1.0, V, 1.0, np.ones(dom.n_free), n_list)
    assert np.all(np.diff(tab.e_grad) <= 1e-12)
    assert np.all(np.diff(tab.e_pot) <= 1e-12)
    assert tab.e_grad[-1] <= 1e-10 and tab.e_pot[-1] <= 1e-10
    assert tab.e_grad[0] > 0


def test_truncation_single_cell_matches_closed_form():
    # no gradient part; e_pot(n) = |sqrt(v) / (s + v) - sqrt(V) / (s + V)| with v = min(V, n)
    V, s = 50.0, 10.0
    dom, _ = _one_cell(V)
    n_list = np.array([1, 2, 4, 8, 16, 32, 64.0])
    tab = truncation_convergence(dom, 1.0, np.array([V]), s, np.ones(1), n_list)
    v = np.minimum(V, n_list)
    want = np.abs(np.sqrt(v) / (s + v) - math.sqrt(V) / (s + V))
    assert np.allclose(tab.e_pot, want, rtol=1e-12, atol=1e-15)
    assert np.all(tab.e_grad == 0)
    # the curve is not monotone in n: this is the algebra, not a solver artefact
    assert np.any(np.diff(tab.e_pot) > 0)


def test_csv_header():
    text = to_csv(["n", "e_grad"], [(1, 0.5), (2, 1 / 3)])
    assert text.splitlines()[0] == "n,e_grad"
    assert text.splitlines()[2] == "2,0.33333333333333331"
