import math

import numpy as np
import pytest

from fracglap import (ExteriorModel, GridFunction, InadmissibleError, Kernel,
                      Lattice, NonlocalProblem, assemble_quadratic,
                      convexity_probe, energy, gradient, make_power, solve,
                      sphere_measure, weak_residual)
from fracglap.solver import _energy_values, _gradient_omega

from helpers import line_problem, oracle_energy, quadratic_oracle


@pytest.fixture(scope="module")
def p2_problem():
    return line_problem(h=1 / 32, s=0.5, p=2.0, datum="sin")


class TestEnergy:
    def test_constant_data_zero_energy(self):
        prob = line_problem(datum=2.5)
        v = prob.datum_extension(2.5)
        assert energy(prob, v) == 0.0

    def test_three_node_hand_enumeration(self):
        # one domain node between two halo nodes; every ordered pair
        # and the radial tail term written out by hand
        lat = Lattice.from_box([0.0], [2.0], 1.0)
        omega = np.array([False, True, False])
        datum = GridFunction(lat, [0.3, 0.0, -0.2], ExteriorModel(kind="zero"))
        prob = NonlocalProblem(lat, omega, make_power(2.0), Kernel(), 0.5,
                               datum, truncation_radius=1.0)
        v = prob.datum_extension(0.7)
        pair_part = 2 * ((0.7 - 0.3) ** 2 / 2 + (0.7 + 0.2) ** 2 / 2)
        far = 2 * sphere_measure(1) * (0.7 ** 2 / 2) * 1.0
        assert energy(prob, v) == pytest.approx(pair_part + far, rel=1e-14)

    def test_two_domain_one_halo_six_ordered_pairs(self):
        # two domain nodes and one halo node give six ordered-pair
        # terms; both orderings of each pair carry the same value
        lat = Lattice.from_box([0.0], [3.0], 1.0)
        omega = np.array([False, True, True, False])
        s, h = 0.4, 1.0
        fvals = np.array([0.5, 0.0, 0.0, -0.3])
        datum = GridFunction(lat, fvals, ExteriorModel(kind="zero"))
        prob = NonlocalProblem(lat, omega, make_power(3.0), Kernel(), s,
                               datum, truncation_radius=1.0)
        a, b = 0.8, -0.1
        v = prob.datum_extension([a, b])
        G = lambda t: abs(t) ** 3 / 3
        pair_part = 2 * (G(a - 0.5) + G(a - b) + G(b + 0.3)) * h ** 2
        far = 2 * sphere_measure(1) * h \
            * (abs(a) ** 3 + abs(b) ** 3) / 3 * 1.0 / (s * 3) * 1.0 ** (-s * 3)
        assert energy(prob, v) == pytest.approx(pair_part + far, rel=1e-13)

    def test_quadratic_matches_matrix_oracle(self, p2_problem):
        prob = p2_problem
        A, b, c0, oi = quadratic_oracle(prob)
        rng = np.random.default_rng(0)
        for _ in range(3):
            vom = rng.normal(size=oi.size)
            v = prob.datum_extension(vom)
            want = oracle_energy(A, b, c0, vom)
            assert energy(prob, v) == pytest.approx(want, rel=1e-12)

    def test_translation_invariance(self):
        c = 1.234
        prob = line_problem(h=1 / 16, datum="sin")
        lat = prob.lattice
        f2 = GridFunction(lat, prob.exterior_datum.values + c,
                          ExteriorModel(kind="constant",
                                        value=prob.exterior_datum.exterior.value + c))
        prob2 = NonlocalProblem(lat, prob.omega_mask, prob.nf, prob.kernel,
                                prob.s, f2,
                                truncation_radius=prob.truncation_radius)
        rng = np.random.default_rng(1)
        vom = rng.normal(size=int(prob.omega_mask.sum()))
        e1 = energy(prob, prob.datum_extension(vom))
        e2 = energy(prob2, prob2.datum_extension(vom + c))
        assert e2 == pytest.approx(e1, rel=1e-12)

    def test_scaling_covariance_power_family(self):
        c = 2.5
        p = 3.0
        prob = line_problem(h=1 / 16, p=p, datum="sin")
        lat = prob.lattice
        f2 = GridFunction(lat, c * prob.exterior_datum.values,
                          ExteriorModel(kind="constant",
                                        value=c * prob.exterior_datum.exterior.value))
        prob2 = NonlocalProblem(lat, prob.omega_mask, prob.nf, prob.kernel,
                                prob.s, f2,
                                truncation_radius=prob.truncation_radius)
        rng = np.random.default_rng(2)
        vom = rng.normal(size=int(prob.omega_mask.sum()))
        e1 = energy(prob, prob.datum_extension(vom))
        e2 = energy(prob2, prob2.datum_extension(c * vom))
        assert e2 == pytest.approx(c ** p * e1, rel=1e-12)
        g1 = _gradient_omega(prob, prob.datum_extension(vom).values)
        g2 = _gradient_omega(prob2, prob2.datum_extension(c * vom).values)
        np.testing.assert_allclose(g2, c ** (p - 1) * g1, rtol=1e-11)

    def test_inadmissible_rejected(self, p2_problem):
        v = p2_problem.datum_extension(0.0)
        v.values[np.flatnonzero(p2_problem.halo_mask)[0]] += 0.1
        with pytest.raises(InadmissibleError):
            energy(p2_problem, v)


class TestGradient:
    @pytest.mark.parametrize("family,p", [("power", 1.5), ("power", 2.0),
                                          ("power", 3.0), ("power_log", 2.0)])
    def test_matches_central_differences(self, family, p):
        prob = line_problem(h=1 / 16, s=0.6, p=p, family=family)
        rng = np.random.default_rng(5)
        v = prob.datum_extension(rng.normal(size=int(prob.omega_mask.sum())))
        g = _gradient_omega(prob, v.values)
        idx = np.flatnonzero(prob.omega_mask)
        eps = 1e-6
        for k in range(0, idx.size, 3):
            vp = v.values.copy()
            vp[idx[k]] += eps
            vm = v.values.copy()
            vm[idx[k]] -= eps
            fd = (_energy_values(prob, vp) - _energy_values(prob, vm)) / (2 * eps)
            assert g[k] == pytest.approx(fd, rel=2e-6, abs=1e-12)

    def test_constant_data_zero_gradient(self):
        prob = line_problem(datum=1.5)
        g = gradient(prob, prob.datum_extension(1.5))
        assert np.abs(g.values).max() == 0.0

    def test_quadratic_matrix_gradient(self, p2_problem):
        prob = p2_problem
        A, b, _, oi = quadratic_oracle(prob)
        rng = np.random.default_rng(3)
        vom = rng.normal(size=oi.size)
        g = _gradient_omega(prob, prob.datum_extension(vom).values)
        np.testing.assert_allclose(g, A @ vom - b, rtol=1e-11, atol=1e-13)

    def test_gradient_supported_on_domain(self, p2_problem):
        g = gradient(p2_problem, p2_problem.datum_extension(0.0))
        assert np.all(g.values[p2_problem.halo_mask] == 0.0)


class TestSolve:
    def test_constant_data_immediate(self):
        prob = line_problem(datum=2.0)
        rep = solve(prob)
        assert rep.converged and rep.iterations == 0
        np.testing.assert_allclose(rep.minimizer.values, 2.0)
        assert rep.final_energy == 0.0

    @pytest.mark.parametrize("s", [0.3, 0.5, 0.7])
    def test_quadratic_matches_direct_solve(self, s):
        prob = line_problem(h=1 / 32, s=s, p=2.0, datum="sin")
        rep = solve(prob, tol=1e-10)
        assert rep.converged
        A, b, _, oi = quadratic_oracle(prob)
        direct = np.linalg.solve(A, b)
        err = np.abs(rep.minimizer.values[prob.omega_mask] - direct).max()
        assert err < 1e-8

    def test_harmonic_start_is_instant_for_quadratic(self, p2_problem):
        rep = solve(p2_problem, tol=1e-8, initial="harmonic")
        assert rep.converged and rep.iterations == 0

    def test_monotone_descent(self):
        prob = line_problem(h=1 / 32, s=0.5, p=3.0, datum="cusp")
        rep = solve(prob, tol=1e-9)
        assert rep.converged
        hist = np.array(rep.energy_history)
        slack = 1e-12 * (1.0 + np.abs(hist[:-1]))
        assert np.all(np.diff(hist) <= slack)

    def test_nonlinear_minimality_probes(self):
        prob = line_problem(h=1 / 32, s=0.5, p=3.0, datum="sin")
        rep = solve(prob, tol=1e-9)
        assert rep.converged
        e0 = energy(prob, rep.minimizer)
        rng = np.random.default_rng(7)
        base = rep.minimizer.values
        for _ in range(100):
            pert = base.copy()
            pert[prob.omega_mask] += 0.01 * rng.normal(
                size=int(prob.omega_mask.sum()))
            assert _energy_values(prob, pert) > e0

    def test_minimizer_scaling_homogeneous(self):
        c = 3.0
        prob = line_problem(h=1 / 16, s=0.5, p=1.5, datum="sin")
        rep = solve(prob, tol=1e-11)
        lat = prob.lattice
        f2 = GridFunction(lat, c * prob.exterior_datum.values,
                          ExteriorModel(kind="constant",
                                        value=c * prob.exterior_datum.exterior.value))
        prob2 = NonlocalProblem(lat, prob.omega_mask, prob.nf, prob.kernel,
                                prob.s, f2,
                                truncation_radius=prob.truncation_radius)
        rep2 = solve(prob2, tol=1e-11)
        np.testing.assert_allclose(rep2.minimizer.values,
                                   c * rep.minimizer.values, atol=5e-7)

    def test_maximum_principle_probe(self):
        prob = line_problem(h=1 / 32, s=0.6, p=3.0, datum="sin")
        rep = solve(prob, tol=1e-9)
        f = prob.exterior_datum.values[prob.halo_mask]
        u = rep.minimizer.values[prob.omega_mask]
        lo = min(f.min(), prob.exterior_datum.exterior.value)
        hi = max(f.max(), prob.exterior_datum.exterior.value)
        assert u.min() >= lo - 1e-8 and u.max() <= hi + 1e-8

    def test_single_node_domain_bisection(self):
        lat = Lattice.from_box([0.0], [2.0], 1.0)
        omega = np.array([False, True, False])
        datum = GridFunction(lat, [1.0, 0.0, -0.5],
                             ExteriorModel(kind="zero"))
        prob = NonlocalProblem(lat, omega, make_power(3.0), Kernel(), 0.5,
                               datum, truncation_radius=1.0)
        rep = solve(prob, tol=1e-10)
        assert rep.converged
        assert rep.details["mode"] == "scalar_bisection"
        g = _gradient_omega(prob, rep.minimizer.values)
        assert abs(g[0]) <= rep.details["threshold"]

    def test_non_convergence_reported_not_raised(self):
        prob = line_problem(h=1 / 32, s=0.5, p=2.0, datum="sin")
        rep = solve(prob, tol=1e-13, max_iter=2)
        assert not rep.converged
        assert rep.iterations == 2
        assert rep.minimizer is not None

    def test_weighted_kernel_instance(self):
        k = Kernel.from_config({"form": "weighted", "lambda": 0.5,
                                "Lambda": 2.0, "frequency": 2.0})
        prob = line_problem(h=1 / 16, s=0.5, p=2.0, datum="sin", kernel=k)
        rep = solve(prob, tol=1e-9)
        assert rep.converged
        assert weak_residual(prob, rep.minimizer) <= rep.details["threshold"]


class TestWeakResidual:
    def test_zero_at_minimizer(self, p2_problem):
        rep = solve(p2_problem, tol=1e-10)
        assert weak_residual(p2_problem, rep.minimizer) \
            <= rep.details["threshold"]

    def test_positive_off_minimizer(self, p2_problem):
        v = p2_problem.datum_extension(0.0)
        assert weak_residual(p2_problem, v) > 1e-3

    def test_equals_matrix_residual_for_quadratic(self, p2_problem):
        A, b, _, oi = quadratic_oracle(p2_problem)
        rng = np.random.default_rng(11)
        vom = rng.normal(size=oi.size)
        v = p2_problem.datum_extension(vom)
        want = float(np.abs(A @ vom - b).max())
        assert weak_residual(p2_problem, v) == pytest.approx(want, rel=1e-11)

    def test_matches_gradient_components(self, p2_problem):
        rng = np.random.default_rng(12)
        v = p2_problem.datum_extension(
            rng.normal(size=int(p2_problem.omega_mask.sum())))
        g = gradient(p2_problem, v)
        assert weak_residual(p2_problem, v) == pytest.approx(
            float(np.abs(g.values).max()), rel=1e-13)


class TestConvexity:
    def test_equal_candidates_equality(self, p2_problem):
        v = p2_problem.datum_extension(0.3)
        rep = convexity_probe(p2_problem, v, v)
        assert rep["convex_ok"] and rep["strict_ok"]
        assert all(abs(r["defect"]) < 1e-12 for r in rep["samples"])

    def test_strict_for_distinct(self):
        prob = line_problem(h=1 / 16, s=0.5, p=3.0)
        rng = np.random.default_rng(13)
        n = int(prob.omega_mask.sum())
        v1 = prob.datum_extension(rng.normal(size=n))
        v2 = prob.datum_extension(rng.normal(size=n))
        rep = convexity_probe(prob, v1, v2)
        assert rep["convex_ok"] and rep["strict_ok"]
        assert all(r["defect"] > 0 for r in rep["samples"])

    def test_quadratic_defect_identity(self, p2_problem):
        # defect = 0.5 theta (1-theta) d'Ad for the quadratic profile
        prob = p2_problem
        A, _, _, oi = quadratic_oracle(prob)
        rng = np.random.default_rng(14)
        w1 = rng.normal(size=oi.size)
        w2 = rng.normal(size=oi.size)
        rep = convexity_probe(prob, prob.datum_extension(w1),
                              prob.datum_extension(w2))
        d = w1 - w2
        quad_dist = 0.5 * d @ A @ d
        for r in rep["samples"]:
            th = r["theta"]
            assert r["defect"] == pytest.approx(th * (1 - th) * quad_dist,
                                                rel=1e-9, abs=1e-12)


class TestProblemValidation:
    def test_domain_on_boundary_rejected(self):
        lat = Lattice.from_box([0.0], [2.0], 1.0)
        omega = np.array([True, True, False])
        datum = GridFunction(lat, np.zeros(3), ExteriorModel(kind="zero"))
        with pytest.raises(ValueError, match="strictly inside"):
            NonlocalProblem(lat, omega, make_power(2.0), Kernel(), 0.5,
                            datum, truncation_radius=1.0)

    def test_truncation_beyond_halo_rejected(self):
        lat = Lattice.from_box([0.0], [2.0], 1.0)
        omega = np.array([False, True, False])
        datum = GridFunction(lat, np.zeros(3), ExteriorModel(kind="zero"))
        with pytest.raises(ValueError, match="truncation"):
            NonlocalProblem(lat, omega, make_power(2.0), Kernel(), 0.5,
                            datum, truncation_radius=1.5)

    def test_missing_model_rejected(self):
        lat = Lattice.from_box([0.0], [2.0], 1.0)
        omega = np.array([False, True, False])
        datum = GridFunction(lat, np.zeros(3))
        with pytest.raises(ValueError, match="model"):
            NonlocalProblem(lat, omega, make_power(2.0), Kernel(), 0.5,
                            datum, truncation_radius=1.0)

    def test_divergent_exterior_energy_rejected(self):
        lat = Lattice.from_box([-2.0], [2.0], 0.5)
        omega = (np.abs(lat.coords[:, 0]) < 0.6)
        model = ExteriorModel(kind="power", value=1.0, exponent=1.5)
        datum = GridFunction(lat, np.zeros(lat.n_nodes), model)
        with pytest.raises(ValueError, match="diverges"):
            NonlocalProblem(lat, omega, make_power(2.0), Kernel(), 0.5,
                            datum, truncation_radius=1.0)

    def test_assemble_requires_quadratic(self):
        prob = line_problem(h=1 / 16, p=3.0)
        with pytest.raises(ValueError):
            assemble_quadratic(prob)

    def test_deterministic_energy(self, p2_problem):
        v = p2_problem.datum_extension(0.25)
        assert energy(p2_problem, v) == energy(p2_problem, v)


class TestTwoDimensional:
    def test_solve_and_oracle_2d(self):
        from helpers import square_problem
        prob = square_problem(h=1 / 8, s=0.5, p=2.0, rext=1.0)
        rep = solve(prob, tol=1e-10)
        assert rep.converged
        A, b, _, oi = quadratic_oracle(prob)
        direct = np.linalg.solve(A, b)
        err = np.abs(rep.minimizer.values[prob.omega_mask] - direct).max()
        assert err < 1e-8
