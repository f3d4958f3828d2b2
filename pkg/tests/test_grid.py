import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cablelab.errors import InvalidArgument
from cablelab.grid import (
    GridFunction,
    MollifierBank,
    check_resolution,
    dissipativity_constant,
    inner_product,
    laplacian_matrix,
    make_grid,
    mollifier_build,
    mollifier_family,
    mollifier_mass,
)


def test_grid_m3():
    g = make_grid(3)
    assert g.h == 0.25
    np.testing.assert_allclose(g.nodes, [0.25, 0.5, 0.75], rtol=0, atol=1e-15)


def test_grid_m99():
    g = make_grid(99)
    assert g.h == pytest.approx(0.01, abs=1e-16)
    assert g.nodes[49] == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("M", [2, 0, -4])
def test_grid_too_small(M):
    with pytest.raises(InvalidArgument):
        make_grid(M)


@given(st.integers(3, 5000))
def test_grid_nodes_ordered_and_interior(M):
    g = make_grid(M)
    assert np.all(np.diff(g.nodes) > 0)
    assert 0 < g.nodes[0] and g.nodes[-1] < 1
    assert abs(g.h * (M + 1) - 1.0) <= 2.2e-16


def test_grid_function_rejects_bad_values():
    g = make_grid(5)
    with pytest.raises(InvalidArgument):
        GridFunction(g, np.zeros(4))
    with pytest.raises(InvalidArgument):
        GridFunction(g, np.array([0, 1, np.nan, 0, 0.0]))


def test_inner_product_sine_squared():
    g = make_grid(199)
    u = g.sample(lambda s: np.sin(np.pi * s))
    assert inner_product(u, u) == pytest.approx(0.5, abs=1e-4)


def test_inner_product_parabola():
    g = make_grid(199)
    u = g.sample(lambda s: s * (1 - s))
    assert inner_product(u, u) == pytest.approx(1 / 30, abs=1e-4)


def test_inner_product_zero():
    g = make_grid(50)
    v = GridFunction(g, np.random.default_rng(1).standard_normal(50))
    assert inner_product(g.zeros(), v) == 0.0


def test_inner_product_grid_mismatch():
    with pytest.raises(InvalidArgument):
        inner_product(make_grid(10).zeros(), make_grid(11).zeros())


def test_inner_product_symmetric_bilinear():
    rng = np.random.default_rng(2)
    g = make_grid(64)
    worst = 0.0
    for _ in range(1000):
        u, v, w = (GridFunction(g, rng.standard_normal(64)) for _ in range(3))
        a, b = rng.standard_normal(2)
        lhs = inner_product(u * a + v * b, w)
        rhs = a * inner_product(u, w) + b * inner_product(v, w)
        scale = abs(a) * u.norm() * w.norm() + abs(b) * v.norm() * w.norm()
        worst = max(worst, abs(lhs - rhs) / scale, abs(inner_product(u, v) - inner_product(v, u)))
    assert worst <= 1e-12


def test_mollifier_peak_value():
    # z_1 = 1/4 is node 100 for M = 399
    g = make_grid(399)
    m = mollifier_build(1, 4, g)
    j = int(round(0.25 / g.h)) - 1
    assert g.nodes[j] == pytest.approx(0.25, abs=1e-15)
    assert m.samples.values[j] == pytest.approx(4 * np.exp(-1.0), rel=1e-12)
    assert np.argmax(m.samples.values) == j


def test_mollifier_vanishes_at_support_edge():
    g = make_grid(399)
    m = mollifier_build(2, 4, g)
    for edge in (0.25, 0.75):
        j = int(round(edge / g.h)) - 1
        assert m.samples.values[j] == 0.0


def test_mollifier_norm_matches_bump_integral(J2):
    for N in (2, 4, 8):
        g = make_grid(400 * N)
        m = mollifier_build(1, N, g)
        assert m.samples.norm() ** 2 == pytest.approx(N * J2, rel=1e-6)


@pytest.mark.parametrize("i,N", [(0, 4), (4, 4), (1, 1)])
def test_mollifier_bad_index(i, N):
    with pytest.raises(InvalidArgument):
        mollifier_build(i, N, make_grid(400))


@given(st.integers(2, 16), st.data())
def test_mollifier_support_sign_norm(N, data):
    i = data.draw(st.integers(1, N - 1))
    g = make_grid(50 * N + data.draw(st.integers(0, 40)))
    m = mollifier_build(i, N, g)
    vals = m.samples.values
    assert np.all(vals >= 0)
    outside = np.abs(g.nodes - i / N) >= 1.0 / N
    assert np.all(vals[outside] == 0)
    assert m.samples.norm() <= np.sqrt(2 * N) * 1.02


def test_mollifier_project_matches_inner_product():
    g = make_grid(400)
    x = g.sample(lambda s: np.cos(3 * s))
    for m in mollifier_family(8, g):
        assert m.project(x) == pytest.approx(inner_product(x, m.samples), rel=1e-13)


def test_mollifier_mass_constant():
    # integral of exp(-1/(1-u^2)) over (-1, 1)
    assert mollifier_mass() == pytest.approx(0.443993816168, rel=1e-11)


def test_resolution_rule():
    check_resolution(8, make_grid(400))
    with pytest.raises(InvalidArgument):
        check_resolution(8, make_grid(399))


def test_bank_matches_family():
    g = make_grid(400)
    bank = MollifierBank.build(8, g)
    fam = mollifier_family(8, g)
    x = g.sample(lambda s: s**2)
    np.testing.assert_allclose(bank.project(x.values), [m.project(x) for m in fam], rtol=1e-13)
    w = np.arange(1.0, 8.0)
    np.testing.assert_allclose(bank.combine(w), sum(wi * m.samples.values for wi, m in zip(w, fam)),
                               atol=1e-12)


def test_laplacian_stencil():
    g = make_grid(9)
    L = laplacian_matrix(g).toarray()
    assert np.allclose(L[4, 3:6] * g.h**2, [1, -2, 1])
    assert L[4, 2] == 0 and L[4, 6] == 0
    assert np.allclose(L, L.T)


def test_laplacian_first_eigenvalue():
    g = make_grid(199)
    dense = np.linalg.eigvalsh(laplacian_matrix(g).toarray())
    np.testing.assert_allclose(np.sort(dense), laplacian_matrix(g).eigenvalues(), atol=1e-6)
    assert np.all(dense < 0)
    assert dense.max() == pytest.approx(-np.pi**2, rel=0.01)
    assert -dense.max() == pytest.approx(dissipativity_constant(g), rel=1e-10)


def test_laplacian_on_sine():
    errs = []
    for M in (49, 99, 199):
        g = make_grid(M)
        u = g.sample(lambda s: np.sin(np.pi * s))
        Lu = laplacian_matrix(g) @ u
        errs.append(np.max(np.abs(Lu.values + np.pi**2 * u.values)))
    # second order: halving h quarters the error
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.05)


def test_laplacian_dissipative():
    rng = np.random.default_rng(3)
    g = make_grid(120)
    L = laplacian_matrix(g)
    c = dissipativity_constant(g)
    for _ in range(100):
        u = GridFunction(g, rng.standard_normal(120))
        assert inner_product(L @ u, u) <= -c * u.norm() ** 2 * (1 - 1e-10)
