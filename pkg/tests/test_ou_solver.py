"""Galerkin OU operator: assembly, torsion and first eigenpair.

Oracles
-------
* torsion on an interval: integrating factor ``v' = e^{x^2/2}(C - int_a^x e^{-t^2/2})``
  evaluated with mpmath (frozen values below);
* Lambda(-1, 1) = 2 exactly: ``He_2(x) = x^2 - 1`` vanishes at +-1 and nowhere inside;
* Lambda(-2, 2) and Lambda(0, 1): zeros of Kummer functions ``M(-lam/2, 1/2, x^2/2)``
  and ``x M((1-lam)/2, 3/2, x^2/2)`` found with mpmath;
* an independent finite-difference eigen-solver (tridiagonal, Richardson).
"""
import numpy as np
import pytest
from scipy import integrate
from scipy.linalg import eigh_tridiagonal

from gausskj.geometry import ConvexPolygon, Disk, HalfLine, Interval, ScalarField, build_mesh, gaussian_measure
from gausskj.ou_solver import (NumericalError, assemble, dirichlet_energy, halfspace_frequency, l2_mass,
                               rayleigh_quotient, solve_frequency, solve_torsion, torsional_rigidity)
from gausskj.special import gaussian_quantile, halfspace_torsion, halfspace_torsion_function

# mpmath, dps=40
TORSION_INTERVAL_M1_1 = 0.2970416210764640679134198435171543
V_INTERVAL_AT_0 = 0.5957493185127576531403653014031525
V_INTERVAL_AT_05 = 0.4653626184408129280350663313954281
LAMBDA_M2_2 = 0.2429928807655775357935655271978575
LAMBDA_0_1 = 9.440202892191266818618717730130

SQUARE = ConvexPolygon(((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)))


def fd_eigenvalue(a, b, n):
    """Smallest eigenvalue of -(w u')' = lam w u, w = e^{-x^2/2}, by symmetric finite differences."""
    x = np.linspace(a, b, n + 1)
    h = x[1] - x[0]
    w = np.exp(-x ** 2 / 2)
    wm = np.exp(-((x[:-1] + x[1:]) / 2) ** 2 / 2)
    d = (wm[:-1] + wm[1:]) / h ** 2 / w[1:-1]
    e = -wm[1:-1] / h ** 2 / np.sqrt(w[1:-2] * w[2:-1])
    return eigh_tridiagonal(d, e, select="i", select_range=(0, 0))[0][0]


class TestAssembly:
    def test_single_hat(self):
        ops = assemble(build_mesh(Interval(0, 1), 0.5))
        assert ops.A.shape == (1, 1)
        dens = lambda x: np.exp(-x * x / 2) / np.sqrt(2 * np.pi)
        hat = lambda x: 1 - abs(x - 0.5) / 0.5
        stiff = integrate.quad(lambda x: 4 * dens(x), 0, 1)[0]
        mass = integrate.quad(lambda x: hat(x) ** 2 * dens(x), 0, 1, points=[0.5])[0]
        load = integrate.quad(lambda x: hat(x) * dens(x), 0, 1, points=[0.5])[0]
        # 3-point Gauss per element against the density: 3e-8 (stiffness) and 4e-6
        # (mass, with the extra hat^2 factor) at this element size
        assert ops.A[0, 0] == pytest.approx(stiff, rel=1e-6, abs=0)
        assert ops.M[0, 0] == pytest.approx(mass, rel=1e-4, abs=0)
        assert ops.b[0] == pytest.approx(load, rel=1e-4, abs=0)

    @pytest.mark.parametrize("domain", [Interval(-2, 2), Disk((0.3, 0.1), 0.8), HalfLine(0.4)])
    def test_symmetric_exactly(self, domain):
        ops = assemble(build_mesh(domain, 0.1))
        assert abs(ops.A - ops.A.T).max() == 0
        assert abs(ops.M - ops.M.T).max() == 0

    def test_positive_definite(self):
        ops = assemble(build_mesh(Interval(-2, 2), 0.1))
        assert np.linalg.eigvalsh(ops.A.toarray()).min() > 0
        assert np.linalg.eigvalsh(ops.M.toarray()).min() > 0
        ops = assemble(build_mesh(SQUARE, 0.15))
        assert np.linalg.eigvalsh(ops.A.toarray()).min() > 0

    def test_constants_in_kernel(self):
        # full (unconstrained) stiffness annihilates constants: no drift term is discretised
        ops = assemble(build_mesh(Disk((0, 0), 1.0), 0.1))
        assert np.abs(ops.stiffness @ np.ones(ops.stiffness.shape[0])).max() < 1e-14


class TestTorsion:
    def test_interval_oracle(self):
        m = build_mesh(Interval(-1, 1), 1e-3)
        v = solve_torsion(m).values
        x = m.nodes[:, 0]
        assert x[1000] == 0.0 and x[1500] == 0.5
        assert abs(v[1000] - V_INTERVAL_AT_0) <= 1e-6
        assert abs(v[1500] - V_INTERVAL_AT_05) <= 1e-6
        T, _ = torsional_rigidity(m)
        assert T == pytest.approx(TORSION_INTERVAL_M1_1, rel=1e-6, abs=0)

    @pytest.mark.parametrize("s", [-1.0, 0.0, 1.0])
    def test_halfline_second_order(self, s):
        errs = []
        for h in (0.04, 0.02):
            m = build_mesh(HalfLine(s), h)
            errs.append(np.max(np.abs(solve_torsion(m).values - halfspace_torsion_function(s, m.nodes[:, 0]))))
        assert 3 <= errs[0] / errs[1] <= 5

    @pytest.mark.parametrize("s", [-1.0, 0.0, 1.0])
    def test_halfline_rigidity(self, s):
        T, _ = torsional_rigidity(build_mesh(HalfLine(s), 1e-3))
        assert T == pytest.approx(halfspace_torsion(s), rel=1e-3, abs=0)

    @pytest.mark.parametrize("domain", [Interval(-2.5, 0.3), SQUARE, Disk((0.8, 0.0), 0.6), HalfLine(0.7)])
    def test_boundary_and_sign(self, domain):
        m = build_mesh(domain, 0.05)
        v = solve_torsion(m).values
        assert np.all(v[m.boundary_nodes] == 0)
        assert v.min() >= -1e-12 * v.max()

    @pytest.mark.parametrize("domain", [Interval(-1, 1), SQUARE, Disk((0, 0), 1.0)])
    def test_four_characterisations(self, domain):
        T, d = torsional_rigidity(build_mesh(domain, 0.05))
        for val in (d.energy, d.ratio, d.functional):
            assert val == pytest.approx(T, rel=1e-10, abs=0)
        assert d.relative_gap <= 1e-10

    def test_supremum_property(self):
        m = build_mesh(Disk((0.2, -0.1), 0.9), 0.06)
        T, d = torsional_rigidity(m)
        rng = np.random.default_rng(7)
        inner = m.interior_nodes
        x = m.nodes
        for k in range(10):
            w = np.zeros(m.n_nodes)
            if k < 5:
                w[inner] = rng.uniform(0, 1, len(inner))
            else:
                a = rng.normal(size=2)
                w = d.field.values * (1.5 + np.sin(x @ a + rng.uniform(0, 6)))
            f = ScalarField(m, w)
            from gausskj.geometry import integrate_field
            val = integrate_field(m, f) ** 2 / dirichlet_energy(m, f)
            assert val <= T * (1 + 1e-12)

    def test_monotone_in_domain(self):
        t1, _ = torsional_rigidity(build_mesh(Interval(-1, 1), 0.01))
        t2, _ = torsional_rigidity(build_mesh(Interval(-2, 2), 0.01))
        assert t2 > t1

    def test_saint_venant_square(self):
        T, _ = torsional_rigidity(build_mesh(SQUARE, 0.05))
        s_star = gaussian_quantile(1 - gaussian_measure(SQUARE))
        assert T <= halfspace_torsion(s_star)

    def test_square_convergence(self):
        T = [torsional_rigidity(build_mesh(SQUARE, h))[0] for h in (0.1, 0.05, 0.025)]
        # successive differences shrink at order >= 1.8
        assert (T[1] - T[0]) / (T[2] - T[1]) >= 2 ** 1.8

    def test_no_interior(self):
        with pytest.raises(NumericalError) as exc:
            solve_torsion(build_mesh(Interval(0, 1), 1.0))
        assert exc.value.stage == "torsion"


class TestFrequency:
    def test_halfspace_forced_pair(self):
        m = build_mesh(HalfLine(0.0), 1e-3)
        res = solve_frequency(m)
        assert abs(res.eigenvalue - 1) <= 1e-4
        assert res.residual <= res.tolerance
        # eigenfunction is x_1 (P1 exact), normalised in L^2(gamma); the Neumann end at
        # x = 12 bends it where the weight is ~1e-30, so compare on x <= 6
        x = m.nodes[:, 0]
        near = x <= 6
        np.testing.assert_allclose(res.eigenfunction.values[near], x[near] / np.sqrt(0.5), rtol=1e-6, atol=1e-9)
        assert abs(halfspace_frequency(0.0, 1e-3) - 1) <= 1e-4

    def test_interval_exact(self):
        # Richardson of the P1 values against the closed form
        l1 = solve_frequency(build_mesh(Interval(-1, 1), 1e-2)).eigenvalue
        l2 = solve_frequency(build_mesh(Interval(-1, 1), 5e-3)).eigenvalue
        assert (4 * l2 - l1) / 3 == pytest.approx(2.0, rel=1e-6, abs=0)
        assert 3.5 <= (l1 - 2) / (l2 - 2) <= 4.5

    def test_interval_fd_oracle(self):
        a, b = fd_eigenvalue(-1, 1, 2000), fd_eigenvalue(-1, 1, 4000)
        oracle = (4 * b - a) / 3
        l1 = solve_frequency(build_mesh(Interval(-1, 1), 1e-2)).eigenvalue
        l2 = solve_frequency(build_mesh(Interval(-1, 1), 5e-3)).eigenvalue
        assert (4 * l2 - l1) / 3 == pytest.approx(oracle, rel=1e-6, abs=0)

    def test_wide_interval(self):
        lam = solve_frequency(build_mesh(Interval(-2, 2), 1e-3)).eigenvalue
        assert lam == pytest.approx(LAMBDA_M2_2, rel=1e-5, abs=0)

    def test_square_product(self):
        # Lambda of [0,1]^2 = 2 Lambda([0,1]) by separation of variables
        lam = [solve_frequency(build_mesh(SQUARE, h)).eigenvalue for h in (0.1, 0.05)]
        errs = [abs(v - 2 * LAMBDA_0_1) for v in lam]
        assert errs[1] <= 2e-3 * 2 * LAMBDA_0_1
        assert errs[0] / errs[1] >= 2 ** 1.8

    def test_monotone_in_domain(self):
        l1 = solve_frequency(build_mesh(Interval(-1, 1), 0.01)).eigenvalue
        l2 = solve_frequency(build_mesh(Interval(-2, 2), 0.01)).eigenvalue
        assert l1 > l2

    @pytest.mark.parametrize("domain", [Interval(-2.5, 0.3), SQUARE, Disk((0.8, 0.0), 0.6), HalfLine(-0.5)])
    def test_eigenpair_properties(self, domain):
        m = build_mesh(domain, 0.04)
        res = solve_frequency(m)
        u = res.eigenfunction
        assert res.positive
        assert np.all(u.values[m.interior_nodes] > 0)
        assert np.all(u.values[m.boundary_nodes] == 0)
        assert l2_mass(m, u) == pytest.approx(1.0, rel=1e-12)
        assert res.residual <= 1e-10
        assert rayleigh_quotient(m, u) == pytest.approx(res.eigenvalue, rel=1e-10)

    def test_rayleigh_lower_bound(self):
        m = build_mesh(Disk((0, 0), 1.0), 0.06)
        lam = solve_frequency(m).eigenvalue
        rng = np.random.default_rng(3)
        for _ in range(10):
            w = np.zeros(m.n_nodes)
            w[m.interior_nodes] = rng.normal(size=len(m.interior_nodes))
            assert rayleigh_quotient(m, ScalarField(m, w)) >= lam - 1e-10

    def test_rayleigh_of_x1(self):
        m = build_mesh(HalfLine(0.0), 0.01)
        assert rayleigh_quotient(m, ScalarField.from_function(m, lambda x: x[:, 0])) == pytest.approx(1.0, rel=1e-10)

    def test_rayleigh_zero(self):
        m = build_mesh(Interval(0, 1), 0.1)
        with pytest.raises(ValueError):
            rayleigh_quotient(m, ScalarField(m, np.zeros(m.n_nodes)))

    def test_fine_mesh_tolerance_is_rounding_level(self):
        res = solve_frequency(build_mesh(HalfLine(0.0), 5e-4))
        assert 1e-10 <= res.tolerance <= 1e-7
        assert res.residual <= res.tolerance
