import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cov2pose import losses
from cov2pose.codec import encode_pose_to_spd, gram_schmidt_so3
from cov2pose.errors import DegenerateRotation, InvalidInput

from oracles import central_fd, random_rotation, random_spd, random_sym, rel_err, rotation_z

FLOOR = np.arccos(1 - 1e-7)  # loss value at the arccos clamp, about 4.5e-4 rad


def test_geodesic_examples(rng):
    R = random_rotation(rng)
    assert losses.geodesic_rotation_loss(R, R)[0] <= 1e-3
    assert np.isclose(losses.geodesic_rotation_loss(R @ rotation_z(np.pi), R)[0], np.pi, atol=1e-3)
    assert np.isclose(losses.geodesic_rotation_loss(R @ rotation_z(np.pi / 2), R)[0], np.pi / 2, atol=1e-12)


def test_geodesic_matches_angle(rng):
    for _ in range(20):
        a = rng.uniform(0.01, 3.1)
        R = random_rotation(rng)
        assert np.isclose(losses.geodesic_rotation_loss(R @ rotation_z(a), R)[0], a, atol=1e-9)


def test_geodesic_rejects_non_rotation():
    with pytest.raises(InvalidInput):
        losses.geodesic_rotation_loss(2 * np.eye(3), np.eye(3))
    with pytest.raises(InvalidInput):
        losses.geodesic_rotation_loss(np.diag([1.0, 1, -1]), np.eye(3))
    with pytest.raises(InvalidInput):
        losses.geodesic_rotation_loss(np.eye(2), np.eye(2))


def test_geodesic_gradient_zero_on_clamp(rng):
    R = random_rotation(rng)
    _, g = losses.geodesic_rotation_loss(R, R)
    assert np.all(g == 0)


def test_pose_loss_perfect():
    b, _ = losses.pose_loss([1.0, 0, 0], [0.0, 1, 0], [0.2, 0.3, 0.4], np.eye(3), [0.2, 0.3, 0.4])
    assert b.regularizer == 0 and b.total <= 1e-3


def test_pose_loss_scaled_u():
    b, _ = losses.pose_loss([2.0, 0, 0], [0.0, 1, 0], [0.0, 0, 0], np.eye(3), [0.0, 0, 0])
    # everything beyond the clamp floor is the regularizer: lambda * (2 - 1)^2
    assert b.regularizer == 1.0
    assert abs(b.total - b.rotation_geodesic - 1e-3) < 1e-15
    assert b.rotation_geodesic <= FLOOR * (1 + 1e-6)


def test_breakdown_identity(rng):
    u, v, t = rng.standard_normal((3, 6, 3))
    R = np.stack([random_rotation(rng) for _ in range(6)])
    b, _ = losses.pose_loss(u, v, t, R, rng.standard_normal((6, 3)), lam=0.37)
    assert abs(b.total - (b.rotation_geodesic + b.translation_l2 + 0.37 * b.regularizer)) < 1e-12
    assert min(b.rotation_geodesic, b.translation_l2, b.regularizer) >= 0
    row = b.as_row()
    assert row["lambda"] == 0.37 and "lam" not in row


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.1, 10), st.integers(0, 10 ** 6))
def test_rotation_term_scale_invariant(a, c, seed):
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, 3))
    R = random_rotation(rng)
    b1, _ = losses.pose_loss(u, v, np.zeros(3), R, np.zeros(3))
    b2, _ = losses.pose_loss(a * u, c * v, np.zeros(3), R, np.zeros(3))
    assert abs(b1.rotation_geodesic - b2.rotation_geodesic) < 1e-7
    assert b1.total >= 0 and b2.total >= 0


@pytest.mark.parametrize("seed", range(5))
def test_pose_loss_gradient_fd(seed):
    rng = np.random.default_rng(seed)
    u, v, t = rng.standard_normal((3, 3))
    R, tg = random_rotation(rng), rng.standard_normal(3)
    b, (du, dv, dt) = losses.pose_loss(u, v, t, R, tg)
    assert b.total > 1e-2
    x0 = np.concatenate([u, v, t])
    g = np.concatenate([du, dv, dt])

    def f(x):
        return losses.pose_loss(x[:3], x[3:6], x[6:], R, tg)[0].total

    for k in range(9):
        assert rel_err(central_fd(f, x0, np.eye(9)[k]), g[k], floor=1e-8) < 1e-5


def test_pose_loss_batch_gradient_is_of_mean(rng):
    u, v, t = rng.standard_normal((3, 4, 3))
    R = np.stack([random_rotation(rng) for _ in range(4)])
    tg = rng.standard_normal((4, 3))
    _, (du, _, _) = losses.pose_loss(u, v, t, R, tg)
    _, (du0, _, _) = losses.pose_loss(u[0], v[0], t[0], R[0], tg[0])
    assert np.allclose(du[0], du0 / 4)


def test_pose_loss_degenerate():
    with pytest.raises(DegenerateRotation):
        losses.pose_loss([1.0, 0, 0], [2.0, 0, 0], [0.0, 0, 0], np.eye(3), [0.0, 0, 0])


def test_log_tangent_examples(rng):
    Z = random_spd(rng, 4)
    assert losses.log_tangent_frobenius_loss(Z, Z)[0] < 1e-20
    val, _ = losses.log_tangent_frobenius_loss(np.diag([np.e ** 2, 1, 1, np.e ** -2]), np.eye(4))
    assert np.isclose(val, 8.0)


def test_log_tangent_gradient_fd(rng):
    Zp, Zg = random_spd(rng, 4), random_spd(rng, 4)
    _, G = losses.log_tangent_frobenius_loss(Zp, Zg)
    for _ in range(5):
        D = random_sym(rng, 4)
        fd = central_fd(lambda x: losses.log_tangent_frobenius_loss(x, Zg)[0], Zp, D)
        assert rel_err(fd, np.sum(G * D)) < 1e-5


def test_log_tangent_target_construction(rng):
    # ground truth encoded from the first two rotation columns reproduces R exactly
    R = random_rotation(rng)
    Zg = encode_pose_to_spd((R[:, 0], R[:, 1], np.zeros(3)))
    L = np.linalg.cholesky(Zg)
    assert np.allclose(gram_schmidt_so3(L[1:, 0], L[[2, 3, 3], [1, 1, 2]]), R)
