import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adampc.adaptation import (
    AdaptationError,
    EstimatorState,
    ExcitationBoundError,
    compute_error_radii,
    predict,
    project_hull,
    update,
)
from adampc.geometry import Polytope
from adampc.model import ParamHull

from test_model import INITIAL_ESTIMATE, TRUE_A, TRUE_B, VERTEX_PAIRS

TRUE_THETA = np.hstack([TRUE_A, TRUE_B])


def box_hull():
    return ParamHull.interval_from_pairs(VERTEX_PAIRS)


class TestEstimatorState:
    def test_validation(self):
        with pytest.raises(AdaptationError):
            EstimatorState(TRUE_THETA, lam=0.0, alpha=0.1)
        with pytest.raises(AdaptationError):
            EstimatorState(TRUE_THETA, lam=0.1, alpha=2.0)

    def test_excitation_bound(self):
        est = EstimatorState(TRUE_THETA, lam=0.05, alpha=0.5)
        assert est.excitation_bound == pytest.approx(30.0)


class TestPredict:
    def test_initial_estimate_first_column(self):
        est = EstimatorState(INITIAL_ESTIMATE, lam=0.01, alpha=0.1)
        # regressor e1 picks out the first column of A_hat
        pred = predict(est, [1.0, 0.0, 0.0, 0.0])
        assert np.allclose(pred, [-0.4, 0.35])

    def test_matches_matrix_product(self):
        rng = np.random.default_rng(2)
        est = EstimatorState(INITIAL_ESTIMATE, lam=0.01, alpha=0.1)
        z = rng.normal(size=4)
        assert np.allclose(predict(est, z), INITIAL_ESTIMATE @ z)


class TestProjection:
    def test_box_is_entrywise_clip(self):
        hull = box_hull()
        lower, upper = hull.box_bounds
        M = upper + 0.3
        P = project_hull(M, hull)
        assert np.allclose(P, upper)
        inside = 0.25 * lower + 0.75 * upper
        assert np.allclose(project_hull(inside, hull), inside)

    def test_idempotent(self):
        rng = np.random.default_rng(6)
        for hull in (box_hull(), ParamHull.from_pairs(VERTEX_PAIRS)):
            M = rng.normal(scale=2.0, size=(2, 4))
            P = project_hull(M, hull)
            assert np.allclose(project_hull(P, hull), P, atol=1e-7)
            assert hull.contains(P, tol=1e-6)

    def test_segment_closed_form(self):
        # hull = segment between two matrices; projection has a closed form:
        # clamp of <M - V0, D> / <D, D> with D = V1 - V0.
        V0 = np.zeros((1, 2))
        V1 = np.array([[2.0, 0.0]])
        hull = ParamHull([V0, V1], 1, 1)
        rng = np.random.default_rng(8)
        for _ in range(20):
            M = rng.normal(scale=3.0, size=(1, 2))
            t = np.clip(((M - V0) * (V1 - V0)).sum() / ((V1 - V0) ** 2).sum(), 0, 1)
            expect = V0 + t * (V1 - V0)
            assert np.allclose(project_hull(M, hull), expect, atol=1e-7)

    def test_grid_oracle_triangle(self):
        # 2-entry hull with three vertices; compare against a dense grid over
        # barycentric weights.
        V = [np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])]
        hull = ParamHull(V, 1, 1)
        rng = np.random.default_rng(12)
        ws = np.linspace(0, 1, 201)
        for _ in range(10):
            M = rng.normal(scale=1.5, size=(1, 2))
            best, best_d = None, np.inf
            for w1 in ws:
                for w2 in ws:
                    if w1 + w2 > 1:
                        continue
                    P = w1 * V[1] + w2 * V[2]
                    d = np.linalg.norm(P - M)
                    if d < best_d:
                        best, best_d = P, d
            got = project_hull(M, hull)
            assert np.linalg.norm(got - M) <= best_d + 1e-4


class TestUpdate:
    def test_scalar_hand_example(self):
        # scalar system, hull = [0, 2] on both entries of [a, b]
        hull = ParamHull.interval_from_pairs(
            [([[0.0]], [[0.0]]), ([[2.0]], [[2.0]])]
        )
        est = EstimatorState(np.array([[1.0, 1.0]]), lam=0.1, alpha=0.5)
        # x=2, u=1, true theta=[0.5, 1] -> x_next = 2.
        # innovation = 2 - (1*2 + 1*1) = -1
        # step: theta - 0.1 * outer(1, [2,1]) = [0.8, 0.9]; inside the box
        new = update(est, [2.0], [2.0, 1.0], hull)
        assert np.allclose(new.theta_hat, [[0.8, 0.9]])
        assert np.allclose(new.last_prediction_error, [-1.0])

    def test_excitation_violation_raises(self):
        est = EstimatorState(INITIAL_ESTIMATE, lam=0.1, alpha=1.0)  # bound = 10
        hull = box_hull()
        z = np.array([3.0, 0.0, 2.0, 0.0])  # |z|^2 = 13 > 10
        with pytest.raises(ExcitationBoundError):
            update(est, [0.0, 0.0], z, hull)

    def test_error_monotone_under_exact_data(self):
        """Estimation error never increases when data comes from a hull plant."""
        hull = box_hull()
        est = EstimatorState(INITIAL_ESTIMATE, lam=0.04, alpha=0.1)
        rng = np.random.default_rng(44)
        err = np.linalg.norm(est.theta_hat - TRUE_THETA)
        for _ in range(100):
            z = rng.uniform(-1.5, 1.5, size=4)
            x_next = TRUE_THETA @ z
            est = update(est, x_next, z, hull)
            new_err = np.linalg.norm(est.theta_hat - TRUE_THETA)
            assert new_err <= err + 1e-12
            err = new_err

    def test_error_decrement_bound(self):
        """Squared-error decrease is at least alpha*lam*|innovation|^2 before
        projection; projection onto a set containing the truth cannot undo it."""
        hull = box_hull()
        est = EstimatorState(INITIAL_ESTIMATE, lam=0.03, alpha=0.2)
        rng = np.random.default_rng(7)
        for _ in range(50):
            z = rng.uniform(-2.0, 2.0, size=4)
            x_next = TRUE_THETA @ z
            innov = x_next - predict(est, z)
            before = np.linalg.norm(est.theta_hat - TRUE_THETA) ** 2
            est = update(est, x_next, z, hull)
            after = np.linalg.norm(est.theta_hat - TRUE_THETA) ** 2
            assert after <= before - est.alpha * est.lam * float(innov @ innov) + 1e-10

    def test_innovation_bounded_by_radius(self):
        hull = box_hull()
        Xe = Polytope.inf_ball(3.25, 2)
        radii = compute_error_radii(hull, Xe, 4.0, alpha=0.1)
        est = EstimatorState(INITIAL_ESTIMATE, lam=0.01, alpha=0.1)
        rng = np.random.default_rng(91)
        for _ in range(100):
            x = rng.uniform(-3.25, 3.25, size=2)
            u = rng.uniform(-2.8, 2.8, size=2)
            z = np.concatenate([x, u])
            x_next = TRUE_THETA @ z
            est = update(est, x_next, z, hull)
            assert np.linalg.norm(est.last_prediction_error) <= radii.sqrt_delta_xtilde + 1e-9


class TestErrorRadii:
    def test_hand_example(self):
        # d_theta = 1 hull, x_m = sqrt(2), u_m = sqrt(2) -> delta_xtilde = 4
        hull = ParamHull.interval_from_pairs(
            [(np.zeros((1, 1)), [[0.0]]), ([[np.sqrt(0.5)]], [[np.sqrt(0.5)]])]
        )
        Xe = Polytope.inf_ball(np.sqrt(2), 1)
        radii = compute_error_radii(hull, Xe, np.sqrt(2), alpha=0.1)
        assert radii.d_theta == pytest.approx(1.0)
        assert radii.delta_xtilde == pytest.approx(4.0)
        assert radii.delta_theta == pytest.approx(1.9 * 2.0)

    def test_admissibility(self):
        hull = box_hull()
        Xe = Polytope.inf_ball(3.25, 2)
        radii = compute_error_radii(hull, Xe, 4.0, alpha=0.05)
        cap = (2.0 - 0.05) / 0.02
        assert radii.admissible(0.02, 0.05) == (
            radii.x_m**2 + radii.u_m**2 <= cap + 1e-12
        )

    def test_singleton_hull_zero_radii(self):
        hull = ParamHull.from_pairs([(TRUE_A, TRUE_B)])
        radii = compute_error_radii(hull, Polytope.inf_ball(1.0, 2), 1.0, 0.5)
        assert radii.delta_xtilde == 0.0
        assert radii.delta_theta == 0.0

    def test_alpha_validation(self):
        with pytest.raises(AdaptationError):
            compute_error_radii(box_hull(), Polytope.inf_ball(1.0, 2), 1.0, 2.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_projection_never_farther_than_vertices(seed):
    rng = np.random.default_rng(seed)
    hull = box_hull()
    M = rng.normal(scale=2.0, size=(2, 4))
    P = project_hull(M, hull)
    dist = np.linalg.norm(P - M)
    for v in hull.vertices:
        assert dist <= np.linalg.norm(v - M) + 1e-9
