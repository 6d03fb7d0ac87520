import math

import numpy as np
import pytest

from dislocore.atomistic import (
    AtomisticModel, SolverError, build_dofmap, build_terms, read_checkpoint, write_checkpoint,
)
from dislocore.experiments import Setup, build_point
from dislocore.kernels import available, get_backend
from dislocore.lattice import LOWER, SUB_A, SUB_B, UPPER, build_lattice
from dislocore.potentials import HarmonicTriplet, ThreeBodyPotential, TwoBodyPotential


def tanh_profile(x):
    return 0.5 * (1.0 + np.tanh(np.asarray(x)))


def brute_force_energy(lat, V, U, u):
    """Lattice energy increment by direct enumeration over stored atoms with
    minimum-image vectors in y. Three-body terms: centre i, neighbours j, k
    of the same layer within the cutoff; weight 1/6 per ordered pair when
    all three share a sublattice, 1/2 when j is on the other sublattice and
    k on the centre's. Pair terms: every upper/lower pair."""
    Y = lat.y_length
    ex = np.array([1.0, 0.0])
    terms = []

    def rel(i, j):
        d = lat.pos[j] - lat.pos[i]
        d[..., 1] -= Y * np.round(d[..., 1] / Y)
        return d

    for i in range(lat.n_atoms):
        same_layer = np.nonzero(lat.layer == lat.layer[i])[0]
        r = rel(i, same_layer)
        n = np.linalg.norm(r, axis=1)
        near = (n > 1e-12) & (n < V.rc)
        nb, rv = same_layer[near], r[near]
        own = lat.kappa[nb] == lat.kappa[i]
        for a in range(len(nb)):
            for b in range(len(nb)):
                if not own[b] or a == b:
                    continue
                if own[a]:
                    w = 1.0 / 6.0
                else:
                    w = 0.5
                r1, r2 = rv[a], rv[b]
                d1 = (u[nb[a]] - u[i]) * ex
                d2 = (u[nb[b]] - u[i]) * ex
                terms.append(w * (float(V.value(r1 + d1, r2 + d2)) - float(V.value(r1, r2))))
    up = np.nonzero(lat.layer == UPPER)[0]
    low = np.nonzero(lat.layer == LOWER)[0]
    for i in up:
        xi = -rel(i, low)
        inc = U.value(xi + np.outer(u[i] - u[low], ex)) - U.value(xi)
        terms.extend(inc.tolist())
    return math.fsum(terms)


@pytest.fixture(scope="module")
def patch():
    lat = build_lattice(6.0, 3, 2.5)
    return lat, ThreeBodyPotential(), TwoBodyPotential(r_cut=2.5, blend=0.5)


@pytest.mark.parametrize("backend", available())
def test_energy_matches_bruteforce_oracle(patch, backend):
    lat, V, U = patch
    rng = np.random.default_rng(7)
    u = 0.02 * rng.standard_normal(lat.n_atoms)
    tab = build_terms(lat, V, U)
    E = get_backend(backend).evaluate(u, tab, 0)[0]
    want = brute_force_energy(lat, V, U, u)
    assert abs(E - want) <= 1e-12 * max(1.0, abs(want))


def test_zero_and_translated_fields_have_zero_energy(patch):
    lat, V, U = patch
    tab = build_terms(lat, V, U)
    be = get_backend("numpy")
    E, g, _, _ = be.evaluate(np.zeros(lat.n_atoms), tab, 1)
    assert E == 0.0
    # perfect lattice equilibrium along x
    assert np.max(np.abs(g[lat.interior])) <= 1e-12
    E = be.evaluate(np.full(lat.n_atoms, 0.37), tab, 0)[0]
    assert abs(E) <= 1e-13


@pytest.fixture(scope="module")
def point():
    return build_point(Setup(), 0.1)


@pytest.fixture(scope="module")
def solved(point):
    return point.model.solve()


def test_gradient_finite_difference(point):
    m = point.model
    rng = np.random.default_rng(1)
    x = m.sampled_dofs() + 1e-3 * rng.standard_normal(m.ndof)
    g = m.gradient(x)
    h = 1e-5
    for i in rng.choice(m.ndof, 20, replace=False):
        e = np.zeros(m.ndof)
        e[i] = h
        fd = (m.energy(x + e) - m.energy(x - e)) / (2 * h)
        assert abs(fd - g[i]) <= 1e-6 * abs(g[i])


def test_hessian_apply_finite_difference(point):
    m = point.model
    rng = np.random.default_rng(2)
    x = m.sampled_dofs() + 1e-3 * rng.standard_normal(m.ndof)
    h = 1e-5
    for _ in range(10):
        v = rng.standard_normal(m.ndof)
        hv = m.hessian_apply(x, v)
        fd = (m.gradient(x + h * v) - m.gradient(x - h * v)) / (2 * h)
        assert np.linalg.norm(fd - hv) <= 1e-5 * np.linalg.norm(hv)


def test_band_hessian_matches_apply(point):
    m = point.model
    rng = np.random.default_rng(3)
    x = m.sampled_dofs()
    ab = m.hessian_band(x)
    for _ in range(3):
        v = rng.standard_normal(m.ndof)
        assert np.allclose(AtomisticModel._band_matvec(ab, v), m.hessian_apply(x, v), rtol=1e-12, atol=1e-10)


def test_newton_converges_quadratically(point, solved):
    m = point.model
    assert solved.residual <= 1e-10
    assert np.max(np.abs(m.forces(solved.x))) == pytest.approx(solved.residual, rel=1e-12)
    hist = [r for r in solved.history if r > 1e-11]
    tail = hist[-3:]
    for a, b in zip(tail[:-1], tail[1:]):
        assert b <= 10.0 * a * a
    assert solved.energy <= m.energy(m.sampled_dofs())


def test_solution_constraints(point, solved):
    m = point.model
    lat, d = m.lat, m.dmap
    u = d.full(solved.x)
    # ADC: atoms on x = 0 are pinned to 1/4, straddling pairs average to 1/4
    assert np.all(u[d.pinned] == 0.25)
    assert np.max(np.abs(u[d.paired[:, 0]] + u[d.paired[:, 1]] - 0.5)) <= 1e-15
    assert np.allclose(lat.pos[d.paired, 0], [-0.5, 0.5])
    # one constraint per upper crystallographic row
    rows = {(k, c) for k, c in zip(lat.kappa[lat.layer == UPPER], lat.cell[lat.layer == UPPER, 1])}
    assert d.adc_count == len(rows) == 2 * 2 * lat.n_y
    # layer antisymmetry on every stored pair
    low = np.nonzero(lat.layer == LOWER)[0]
    partner = lat.index(UPPER, lat.kappa[low], lat.cell[low, 0], lat.cell[low, 1])
    ok = partner >= 0
    assert np.array_equal(u[low[ok]], -u[partner[ok]])


def test_far_field_limits(point, solved):
    m = point.model
    lat = m.lat
    u = m.dmap.full(solved.x)
    up = np.nonzero(lat.layer == UPPER)[0]
    low = lat.index(LOWER, lat.kappa[up], lat.cell[up, 0], lat.cell[up, 1])
    ok = low >= 0
    perp = u[up[ok]] - u[low[ok]]
    x = lat.pos[up[ok], 0]
    edge = lat.L - 2 * lat.R_cut
    right = np.abs(x - edge) < 1.0
    left = np.abs(x + edge) < 1.0
    assert np.all(np.abs(perp[right] - 1.0) <= 1e-2)
    assert np.all(np.abs(perp[left]) <= 1e-2)


def test_dofmap_roundtrip(point):
    d = point.model.dmap
    rng = np.random.default_rng(4)
    x = rng.standard_normal(d.ndof)
    assert np.array_equal(d.restrict(d.full(x)), x)
    v = rng.standard_normal(d.ndof)
    g = rng.standard_normal(len(d.dof))
    # reduce is the transpose of expand
    assert d.reduce(g) @ v == pytest.approx(g @ d.expand(v), rel=1e-12)


def test_restricted_terms_give_same_gradient():
    lat = build_lattice(10.0, 1, 2.5)
    V, U = ThreeBodyPotential(), TwoBodyPotential(r_cut=2.5)
    a = AtomisticModel(lat, V, U, 0.1, tanh_profile, restrict_terms=True)
    b = AtomisticModel(lat, V, U, 0.1, tanh_profile, restrict_terms=False)
    x = a.sampled_dofs()
    assert np.allclose(a.gradient(x), b.gradient(x), rtol=1e-12, atol=1e-12)
    assert a.tab.n_terms < b.tab.n_terms


def test_quadratic_energy_against_direct_factorisation():
    # with harmonic springs and no inter-layer coupling the reduced energy is
    # quadratic, so the solver must reproduce the direct linear solve
    lat = build_lattice(8.0, 1, 2.0)
    V, U = HarmonicTriplet(), TwoBodyPotential(De=0.0, r_cut=2.0)
    m = AtomisticModel(lat, V, U, 0.1, tanh_profile)
    n = m.ndof
    x0 = np.zeros(n)
    H = np.stack([m.hessian_apply(x0, e) for e in np.eye(n)], axis=1)
    assert np.allclose(H, H.T, atol=1e-10)
    direct = np.linalg.solve(H, -m.gradient(x0))
    res = m.solve(x0=x0, tol=1e-11)
    assert res.residual <= 1e-11
    assert np.max(np.abs(res.x - direct)) <= 1e-9 * max(1.0, np.max(np.abs(direct)))


def test_solver_error_reports_iterate(point):
    m = point.model
    with pytest.raises(SolverError) as info:
        m.solve(max_iter=0)
    assert info.value.x is not None
    assert info.value.residual > 0


def test_rejects_nonpositive_eps():
    lat = build_lattice(8.0, 1, 2.0)
    with pytest.raises(ValueError):
        AtomisticModel(lat, ThreeBodyPotential(), TwoBodyPotential(), 0.0, tanh_profile)


def test_dofmap_classifies_rows():
    lat = build_lattice(8.0, 2, 2.0)
    d = build_dofmap(lat, lambda x: 0.5 * tanh_profile(0.1 * x))
    x = lat.pos[:, 0]
    assert np.all(np.abs(x[d.pinned]) < 1e-9)
    assert np.all(lat.layer[d.pinned] == UPPER)
    # each pinned or paired atom has no dof of its own
    assert np.all(d.dof[d.pinned] == -1)
    assert np.array_equal(d.dof[d.paired[:, 0]], d.dof[d.paired[:, 1]])
    assert np.all(d.coef[d.paired[:, 0]] == -1.0)


@pytest.mark.skipif("cython" not in available(), reason="compiled backend not built")
def test_backends_agree(point):
    m = point.model
    rng = np.random.default_rng(5)
    u = m.dmap.full(m.sampled_dofs() + 1e-3 * rng.standard_normal(m.ndof))
    v = m.dmap.expand(rng.standard_normal(m.ndof))
    a, b = get_backend("numpy"), get_backend("cython")
    Ea, ga, h3a, h2a = a.evaluate(u, m.tab, 2)
    Eb, gb, h3b, h2b = b.evaluate(u, m.tab, 2)
    assert Ea == pytest.approx(Eb, rel=1e-12)
    assert np.allclose(ga, gb, rtol=1e-11, atol=1e-11)
    assert np.allclose(h3a, h3b, rtol=1e-11, atol=1e-11)
    assert np.allclose(a.hessvec(m.tab, h3a, h2a, v), b.hessvec(m.tab, h3b, h2b, v), rtol=1e-11, atol=1e-10)


def test_checkpoint_roundtrip(tmp_path, point, solved):
    p = tmp_path / "x.ckpt"
    params = point.model.checkpoint_params()
    write_checkpoint(p, params, solved.x)
    raw = p.read_bytes()
    assert raw[:5] == b"DCOR1"
    assert len(raw) == 5 + 8 + 8 * len(params) + 8 + 8 * len(solved.x)
    q, x = read_checkpoint(p)
    assert np.array_equal(q, params)
    assert np.array_equal(x, solved.x)
    p.write_bytes(raw[:-3])
    with pytest.raises(ValueError):
        read_checkpoint(p)
    p.write_bytes(b"XXXXX" + raw[5:])
    with pytest.raises(ValueError):
        read_checkpoint(p)


def test_field_rows(point, solved):
    rows = point.model.field_rows(solved.x)
    assert len(rows) == point.model.lat.n_atoms
    assert {r[2] for r in rows} == {"A", "B"} and {r[3] for r in rows} == {"+", "-"}


def test_y_replication_invariance():
    a = build_point(Setup(n_y=1), 0.06)
    b = build_point(Setup(n_y=2), 0.06)
    ea = a.model.error_norm(a.model.solve().x)
    eb = b.model.error_norm(b.model.solve().x)
    assert eb == pytest.approx(ea, rel=1e-10)
