import numpy as np
import pytest
from scipy.optimize import nnls

from msct import ConfigurationError, StepSizeError
from msct.geometry import ScanGeometry, parallel_geometry
from msct.optimizers import (
    BacktrackConfig,
    BregmanState,
    Regularizer,
    SmoothDataFit,
    bregman_distance,
    bregman_solve,
    descent_gap,
    fbs_solve,
    grad_f,
)
from msct.prox import ProxConfig
from msct.regularizers import build_xi
from msct.tomo import XRayTransform

TIGHT = ProxConfig(5000, 1e-13)


def _problem(n=8, angles=12, seed=0, noise=0.01):
    rng = np.random.default_rng(seed)
    op = XRayTransform(parallel_geometry(angles, int(1.5 * n), 1.0), (n, n), 1.0)
    u_true = np.zeros((n, n))
    u_true[n // 4: 3 * n // 4, n // 4: 3 * n // 4] = 1.0
    b = op.forward(u_true) + noise * rng.standard_normal(op.range_shape)
    return SmoothDataFit(op, b), u_true


def _identity_fit(b):
    # One vertical unit-length ray through each pixel of a 1 x k image.
    b = np.asarray(b, dtype=float)
    op = XRayTransform(ScanGeometry("parallel", (0.0,), b.size, 1.0), (1, b.size), 1.0)
    assert np.allclose(op.matrix.toarray(), np.eye(b.size))
    return SmoothDataFit(op, b.reshape(1, -1))


def test_gradient_zero_at_exact_data():
    fit, u = _problem(noise=0.0)
    fit = SmoothDataFit(fit.op, fit.op.forward(u))
    assert np.max(np.abs(grad_f(fit, u))) < 1e-12


def test_gradient_finite_differences():
    fit, _ = _problem()
    rng = np.random.default_rng(1)
    u = rng.random((8, 8))
    for _ in range(5):
        d = rng.standard_normal((8, 8))
        exact = np.vdot(grad_f(fit, u), d)
        est = [(fit.value(u + h * d) - fit.value(u - h * d)) / (2 * h) for h in (1e-2, 1e-3, 1e-4)]
        assert min(abs(e - exact) for e in est) <= 1e-5 * abs(exact)


def test_gradient_zero_data_is_gram():
    fit, _ = _problem()
    fit = SmoothDataFit(fit.op, np.zeros(fit.op.range_shape))
    u = np.random.default_rng(2).random((8, 8))
    g = grad_f(fit, u)
    np.testing.assert_allclose(g, fit.op.adjoint(fit.op.forward(u)))
    assert np.vdot(g, u) == pytest.approx(np.sum(fit.op.forward(u) ** 2))


def test_fbs_identity_operator_without_regularizer():
    b = np.array([0.0, 0.5, 2.0, 1.0, 3.0])
    fit = _identity_fit(b)
    u, trace = fbs_solve(fit, Regularizer(0.0), tol=1e-14, max_iters=500)
    np.testing.assert_allclose(u.ravel(), b, atol=1e-8)
    H = trace.column("H")
    assert np.all(np.diff(H) <= 1e-10 * np.abs(H[1:]) + 1e-15)


def test_fbs_infinite_tolerance_stops_after_one_step():
    fit, _ = _problem()
    _, trace = fbs_solve(fit, Regularizer(0.01), tol=np.inf)
    assert len(trace) == 1


def test_fbs_descent_and_monotone_objective():
    fit, _ = _problem(seed=3, noise=0.05)
    w = build_xi(_problem()[1] + 0.1)
    for weight in (None, w):
        u, trace = fbs_solve(fit, Regularizer(0.05, weight), max_iters=150, tol=1e-12)
        assert np.all(u >= 0)
        assert np.all(trace.column("descent_slack") >= -1e-10 * np.maximum(1, trace.column("F")))
        H = trace.column("H")
        assert np.all(H[1:] - H[:-1] <= 1e-10 * np.abs(H[:-1]))
        assert np.all(np.isnan(trace.column("ssim")))


def test_fbs_records_metrics_with_reference():
    fit, u_true = _problem()
    _, trace = fbs_solve(fit, Regularizer(0.01), max_iters=5, reference=u_true)
    assert np.all(np.isfinite(trace.column("ssim")))
    assert trace.best("ssim") is not None


def test_descent_gap_agrees_with_trace():
    fit, _ = _problem()
    u0 = np.ones((8, 8))
    sigma = 0.5 / fit.op.norm() ** 2
    u1 = np.maximum(u0 - sigma * grad_f(fit, u0), 0)
    assert descent_gap(fit, u0, u1, sigma) >= 0


def test_nonnegative_least_squares_agreement():
    rng = np.random.default_rng(4)
    op = XRayTransform(parallel_geometry(16, 9, 0.5), (4, 4), 0.5)
    assert np.linalg.matrix_rank(op.matrix.toarray()) == 16
    b = op.forward(rng.random((4, 4))) + 0.3 * rng.standard_normal(op.range_shape)
    x_ref, _ = nnls(op.matrix.toarray(), b.ravel())
    assert np.any(x_ref == 0)
    fit = SmoothDataFit(op, b)
    u_fbs, _ = fbs_solve(fit, Regularizer(0.0), tol=1e-300, max_iters=20000, u0=np.zeros((4, 4)))
    state, _ = bregman_solve(fit, Regularizer(0.0), max_iters=20000)
    np.testing.assert_allclose(u_fbs.ravel(), x_ref, atol=1e-6)
    np.testing.assert_allclose(state.u.ravel(), x_ref, atol=1e-6)


def test_bregman_zero_data_stays_zero():
    fit, _ = _problem()
    fit = SmoothDataFit(fit.op, np.zeros(fit.op.range_shape))
    seen = []
    state, trace = bregman_solve(fit, Regularizer(0.1), max_iters=20,
                                 callback=lambda t, s, rec: seen.append(np.abs(s.u).max()))
    assert max(seen) == 0.0
    assert np.all(state.u == 0) and np.all(state.q == 0)


def test_bregman_subgradient_invariant():
    fit, _ = _problem(seed=5, noise=0.05)
    reg = Regularizer(0.2, None, 1.0, True, TIGHT)
    rng = np.random.default_rng(6)
    states = []
    bregman_solve(fit, reg, max_iters=12, callback=lambda t, s, rec: states.append((s.u.copy(), s.q.copy())))
    for u, q in states[::3]:
        g_u = reg.value(u)
        for _ in range(50):
            w = np.maximum(u + rng.standard_normal(u.shape) * rng.choice([1e-3, 1e-1, 1.0]), 0)
            assert reg.value(w) >= g_u + np.vdot(q, w - u) - 1e-8


def test_bregman_distance_properties():
    fit, _ = _problem(seed=7)
    reg = Regularizer(0.3, None, 1.0, True, TIGHT)
    u = np.random.default_rng(8).random((8, 8))
    assert bregman_distance(reg, u, u, np.zeros_like(u)) == 0.0
    zero = np.zeros_like(u)
    assert bregman_distance(reg, u, zero, zero) == pytest.approx(reg.value(u))
    states = []
    bregman_solve(fit, reg, max_iters=15, callback=lambda t, s, rec: states.append((s.u.copy(), s.q.copy())))
    for ut, qt in states:
        for other, _ in states:
            assert bregman_distance(reg, other, ut, qt) >= -1e-10 * max(1.0, reg.value(other))


def test_bregman_descent_and_checkpoints():
    fit, u_true = _problem(seed=9, noise=0.05)
    state, trace = bregman_solve(fit, Regularizer(0.1, build_xi(u_true + 0.1)), max_iters=30, checkpoint_every=10,
                                 checkpoints=(5,), reference=u_true)
    assert state.t == 30 and len(trace) == 30
    assert set(trace.checkpoints) == {5, 10, 20, 30, "best_ssim"}
    np.testing.assert_array_equal(trace.checkpoints[30], state.u)
    assert np.all(trace.column("descent_slack") >= -1e-10 * np.maximum(1, trace.column("F")))
    assert np.all(state.u >= 0)


def test_bregman_resume_continues_numbering():
    fit, _ = _problem(seed=10)
    reg = Regularizer(0.1)
    half, _ = bregman_solve(fit, reg, max_iters=5)
    rest, trace = bregman_solve(fit, reg, max_iters=5, state=half)
    assert rest.t == 10
    assert list(trace.column("iter")) == [6, 7, 8, 9, 10]
    assert np.all(rest.u >= 0)


def test_determinism():
    fit, u_true = _problem(seed=11)
    runs = [fbs_solve(fit, Regularizer(0.02), max_iters=20, reference=u_true) for _ in range(2)]
    np.testing.assert_array_equal(runs[0][0], runs[1][0])
    for col in ("sigma", "backtracks", "F", "G", "H", "ssim"):
        np.testing.assert_array_equal(runs[0][1].column(col), runs[1][1].column(col))


def test_step_size_failure_carries_trace():
    fit, _ = _problem()
    bt = BacktrackConfig(sigma0=1e6, max_backtracks=0)
    with pytest.raises(StepSizeError) as info:
        fbs_solve(fit, Regularizer(0.01), bt)
    assert info.value.trace is not None
    with pytest.raises(StepSizeError):
        bregman_solve(fit, Regularizer(0.01), bt, max_iters=3)


@pytest.mark.parametrize("kwargs", [dict(sigma0=-1.0), dict(rho_down=1.0), dict(rho_up=1.0), dict(max_backtracks=-1)])
def test_backtrack_validation(kwargs):
    with pytest.raises(ConfigurationError):
        BacktrackConfig(**kwargs)


def test_solver_argument_validation():
    fit, _ = _problem()
    with pytest.raises(ConfigurationError):
        fbs_solve(fit, Regularizer(0.1), tol=0.0)
    with pytest.raises(ConfigurationError):
        fbs_solve(fit, Regularizer(0.1), u0=np.ones((3, 3)))
    with pytest.raises(ConfigurationError):
        bregman_solve(fit, Regularizer(0.1), max_iters=0)
    with pytest.raises(ConfigurationError):
        Regularizer(-1.0)
    with pytest.raises(ConfigurationError):
        SmoothDataFit(fit.op, np.zeros((2, 2)))


def test_bregman_state_zero():
    s = BregmanState.zero((3, 4))
    assert s.t == 0 and not s.u.any() and not s.q.any()
