import math

import numpy as np
import pytest

from waapo.grid import GridShape, StateGrid
from waapo.surrogate import (
    QuadraticAlignmentLoss,
    SurrogateModel,
    grad_check,
    rollout,
    rollout_adjoint,
    spectral_radius,
    step,
)

SHAPE = GridShape(4, 4, 2)


def step_oracle(z, shifts, w, coupling, gain):
    """Straight-line reimplementation of the step formula, loops only."""
    rows, cols, chans = z.shape
    a = np.zeros_like(z)
    for n in range(chans):
        for i in range(rows):
            for j in range(cols):
                a[i, j, n] = z[i, (j - shifts[n]) % cols, n]
    d = np.zeros_like(z)
    for n in range(chans):
        for i in range(rows):
            for j in range(cols):
                acc = 0.0
                for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ii = i + di
                    jj = (j + dj) % cols
                    if not 0 <= ii < rows:
                        continue
                    acc += a[ii, jj, n] - a[i, j, n]
                d[i, j, n] = a[i, j, n] + w * acc
    c = np.zeros_like(z)
    for i in range(rows):
        for j in range(cols):
            for n in range(chans):
                c[i, j, n] = sum(coupling[n, m] * d[i, j, m] for m in range(chans))
    return c + gain * np.tanh(c)


def rotation_model(shape, shift=1):
    return SurrogateModel(
        shape=shape,
        advection_shift=(shift,) * shape.channels,
        diffusion_weight=0.0,
        coupling_matrix=np.eye(shape.channels),
        nonlinearity_gain=0.0,
        seed=0,
    )


def random_state(shape, seed):
    rng = np.random.default_rng(seed)
    return StateGrid(rng.standard_normal(shape.as_tuple()))


class TestSpectralRadius:
    def test_matches_eigvals(self):
        # Estimator contract: a few 1e-3 relative when the dominant
        # eigenvalues are a complex pair, exact-ish otherwise.
        rng = np.random.default_rng(3)
        for _ in range(5):
            a = rng.standard_normal((5, 5))
            want = float(np.abs(np.linalg.eigvals(a)).max())
            got = spectral_radius(a)
            assert got == pytest.approx(want, rel=1e-2)

    def test_rotation_matrix(self):
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])
        assert spectral_radius(rot) == pytest.approx(1.0, abs=1e-9)

    def test_construction_rejects_expanding_coupling(self):
        with pytest.raises(ValueError):
            SurrogateModel(
                shape=SHAPE,
                advection_shift=(0, 0),
                diffusion_weight=0.0,
                coupling_matrix=1.5 * np.eye(2),
                nonlinearity_gain=0.0,
                seed=0,
            )


class TestModelConstruction:
    def test_from_seed_deterministic(self):
        a = SurrogateModel.from_seed(SHAPE, 42)
        b = SurrogateModel.from_seed(SHAPE, 42)
        assert np.array_equal(a.coupling_matrix, b.coupling_matrix)
        assert a.advection_shift == b.advection_shift

    def test_from_seed_seed_sensitivity(self):
        a = SurrogateModel.from_seed(SHAPE, 1)
        b = SurrogateModel.from_seed(SHAPE, 2)
        assert not np.array_equal(a.coupling_matrix, b.coupling_matrix)

    def test_diffusion_weight_range(self):
        with pytest.raises(ValueError):
            SurrogateModel.from_seed(SHAPE, 0, diffusion_weight=0.3)


class TestStep:
    def test_zero_fixed_point(self):
        model = SurrogateModel.from_seed(SHAPE, 7)
        out = step(model, StateGrid.zeros(SHAPE))
        assert np.all(out.values == 0.0)

    def test_pure_rotation(self):
        model = rotation_model(SHAPE)
        z = random_state(SHAPE, 0)
        out = step(model, z)
        assert np.array_equal(out.values, np.roll(z.values, 1, axis=1))

    def test_matches_straight_line_oracle(self):
        model = SurrogateModel.from_seed(SHAPE, 9, diffusion_weight=0.1, nonlinearity_gain=0.2)
        z = random_state(SHAPE, 1)
        got = step(model, z).values
        want = step_oracle(
            z.values,
            model.advection_shift,
            model.diffusion_weight,
            model.coupling_matrix,
            model.nonlinearity_gain,
        )
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_shape_mismatch(self):
        model = SurrogateModel.from_seed(SHAPE, 0)
        from waapo.errors import ShapeError

        with pytest.raises(ShapeError):
            step(model, StateGrid.zeros(GridShape(3, 4, 2)))

    def test_deterministic(self):
        model = SurrogateModel.from_seed(SHAPE, 5)
        z = random_state(SHAPE, 2)
        assert np.array_equal(step(model, z).values, step(model, z).values)


class TestRollout:
    def test_horizon_one(self):
        model = SurrogateModel.from_seed(SHAPE, 3)
        z = random_state(SHAPE, 3)
        traj = rollout(model, z, 1)
        assert traj.horizon == 1
        assert np.array_equal(traj.final.values, step(model, z).values)

    def test_recurrence(self):
        model = SurrogateModel.from_seed(SHAPE, 3)
        z = random_state(SHAPE, 4)
        t5 = rollout(model, z, 5)
        t4 = rollout(model, z, 4)
        assert np.array_equal(t5.final.values, step(model, t4.final).values)

    def test_rotation_full_circle(self):
        model = rotation_model(SHAPE)
        z = random_state(SHAPE, 5)
        traj = rollout(model, z, SHAPE.lon)
        assert np.array_equal(traj.final.values, z.values)

    def test_zero_horizon_rejected(self):
        model = SurrogateModel.from_seed(SHAPE, 0)
        with pytest.raises(ValueError):
            rollout(model, StateGrid.zeros(SHAPE), 0)

    def test_long_rollout_stays_finite(self):
        model = SurrogateModel.from_seed(SHAPE, 8)
        z = random_state(SHAPE, 6)
        z = StateGrid(z.values / np.linalg.norm(z.values))
        traj = rollout(model, z, 100)
        assert np.isfinite(traj.final.values).all()


class TestAdjoint:
    def test_empty_cotangents_zero_gradient(self):
        model = SurrogateModel.from_seed(SHAPE, 1)
        g = rollout_adjoint(model, random_state(SHAPE, 7), 3, {})
        assert np.all(g.values == 0.0)

    def test_linearity(self):
        model = SurrogateModel.from_seed(SHAPE, 1)
        z = random_state(SHAPE, 8)
        rng = np.random.default_rng(9)
        u = rng.standard_normal(SHAPE.as_tuple())
        v = rng.standard_normal(SHAPE.as_tuple())
        a, b = 1.7, -0.3
        combined = rollout_adjoint(model, z, 3, {3: a * u + b * v}).values
        parts = a * rollout_adjoint(model, z, 3, {3: u}).values + b * rollout_adjoint(model, z, 3, {3: v}).values
        np.testing.assert_allclose(combined, parts, rtol=1e-12, atol=1e-14)

    def test_linear_model_adjoint_is_transpose(self):
        # Build the explicit matrix of one linear step on a 2x2x1 grid and
        # compare against the adjoint applied to basis cotangents.
        shape = GridShape(2, 2, 1)
        model = SurrogateModel(
            shape=shape,
            advection_shift=(1,),
            diffusion_weight=0.2,
            coupling_matrix=np.array([[0.9]]),
            nonlinearity_gain=0.0,
            seed=0,
        )
        dim = shape.cells
        fwd = np.zeros((dim, dim))
        adj = np.zeros((dim, dim))
        for k in range(dim):
            e = np.zeros(dim)
            e[k] = 1.0
            fwd[:, k] = step(model, StateGrid(e.reshape(shape.as_tuple()))).values.ravel()
            z0 = StateGrid.zeros(shape)
            adj[:, k] = rollout_adjoint(model, z0, 1, {1: e.reshape(shape.as_tuple())}).values.ravel()
        np.testing.assert_allclose(adj, fwd.T, rtol=1e-12, atol=1e-14)

    def test_zero_gain_identity_coupling_transpose(self):
        shape = GridShape(3, 4, 1)
        model = SurrogateModel(
            shape=shape,
            advection_shift=(2,),
            diffusion_weight=0.15,
            coupling_matrix=np.eye(1),
            nonlinearity_gain=0.0,
            seed=0,
        )
        target = StateGrid.zeros(shape)
        err = grad_check(model, random_state(shape, 10), 3, QuadraticAlignmentLoss(target), fd_epsilon=1e-6)
        assert err < 1e-9

    def test_quadratic_on_linear_model_fd_exact(self):
        model = SurrogateModel.from_seed(SHAPE, 2, nonlinearity_gain=0.0)
        target = random_state(SHAPE, 11)
        err = grad_check(model, random_state(SHAPE, 12), 4, QuadraticAlignmentLoss(target), fd_epsilon=1e-4)
        assert err < 1e-8

    def test_full_nonlinear_fd(self):
        shape = GridShape(8, 8, 2)
        model = SurrogateModel.from_seed(shape, 4, nonlinearity_gain=0.2)
        target = random_state(shape, 13)
        err = grad_check(model, random_state(shape, 14), 4, QuadraticAlignmentLoss(target), fd_epsilon=1e-4)
        assert err < 1e-5

    def test_dot_product_identity(self):
        # <Jx, y> == <x, J^T y> with Jx from central differences.
        model = SurrogateModel.from_seed(SHAPE, 11)
        z0 = random_state(SHAPE, 5)
        rng = np.random.default_rng(6)
        horizon, eps = 4, 1e-5
        for _ in range(20):
            x = rng.standard_normal(SHAPE.as_tuple())
            x /= np.linalg.norm(x)
            y = rng.standard_normal(SHAPE.as_tuple())
            y /= np.linalg.norm(y)
            plus = rollout(model, StateGrid(z0.values + eps * x), horizon).final.values
            minus = rollout(model, StateGrid(z0.values - eps * x), horizon).final.values
            jx = (plus - minus) / (2.0 * eps)
            jty = rollout_adjoint(model, z0, horizon, {horizon: y}).values
            assert abs(np.sum(jx * y) - np.sum(x * jty)) < 1e-10

    def test_determinism(self):
        model = SurrogateModel.from_seed(SHAPE, 11)
        z0 = random_state(SHAPE, 5)
        u = random_state(SHAPE, 6).values
        a = rollout_adjoint(model, z0, 4, {4: u, 1: u}).values
        b = rollout_adjoint(model, z0, 4, {4: u, 1: u}).values
        assert np.array_equal(a, b)

    def test_cotangent_index_validation(self):
        model = SurrogateModel.from_seed(SHAPE, 11)
        with pytest.raises(IndexError):
            rollout_adjoint(model, random_state(SHAPE, 5), 2, {3: np.zeros(SHAPE.as_tuple())})
