import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cov2pose import codec
from cov2pose.codec import PoseParams6D, TranslationStats
from cov2pose.errors import DegenerateRotation, InvalidInput, NotPositiveDefinite, Overflow

from oracles import central_fd, random_rotation, rel_err

Z3 = np.zeros(3)


def _random_params(rng, n=None, scale=1.0):
    shape = (3,) if n is None else (n, 3)
    return PoseParams6D(rng.standard_normal(shape), rng.standard_normal(shape), scale * rng.standard_normal(shape))


# -- factor layout ------------------------------------------------------------------

def test_zero_params_give_identity():
    assert np.array_equal(codec.build_factor((Z3, Z3, Z3)), np.eye(4))
    assert np.array_equal(codec.encode_pose_to_spd((Z3, Z3, Z3)), np.eye(4))


def test_single_axis_translation():
    L = codec.build_factor((Z3, Z3, np.array([1.0, 0, 0])))
    assert np.allclose(L, np.diag([np.e, 1, 1, 1 / np.e]))


def test_factor_layout():
    u, v, t = np.array([1.0, 2, 3]), np.array([4.0, 5, 6]), np.array([0.1, 0.2, 0.3])
    L = codec.build_factor((u, v, t))
    assert (L[1, 0], L[2, 0], L[3, 0]) == (1, 2, 3)
    assert (L[2, 1], L[3, 1], L[3, 2]) == (4, 5, 6)
    assert np.allclose(np.diag(L), np.exp([0.1, 0.2, 0.3, -0.6]))
    assert np.all(np.triu(L, 1) == 0)
    assert abs(np.prod(np.diag(L)) - 1) < 1e-9


def test_unit_determinant(rng):
    p = _random_params(rng, 200)
    S = codec.encode_pose_to_spd(p)
    assert np.abs(np.linalg.det(S) - 1).max() < 1e-8
    assert np.linalg.eigvalsh(S).min() > 0


def test_build_factor_errors():
    with pytest.raises(Overflow):
        codec.build_factor((Z3, Z3, np.array([51.0, 0, 0])))
    with pytest.raises(InvalidInput):
        codec.build_factor((Z3, Z3, np.array([np.nan, 0, 0])))
    with pytest.raises(InvalidInput):
        codec.build_factor((Z3, np.zeros(2), Z3))


# -- decode ---------------------------------------------------------------------------

def test_decode_identity():
    p = codec.decode_spd_to_params(np.eye(4))
    assert all(np.allclose(x, 0) for x in p)


def test_decode_diagonal():
    p = codec.decode_spd_to_params(np.diag([np.e ** 2, 1, 1, np.e ** -2]))
    assert np.allclose(p.t, [1, 0, 0]) and np.allclose(p.u, 0) and np.allclose(p.v, 0)


def test_round_trip_ten_thousand(rng):
    p = _random_params(rng, 10000)
    q = codec.decode_spd_to_params(codec.encode_pose_to_spd(p))
    err = max(np.abs(a - b).max() for a, b in zip(p, q))
    assert err < 1e-10


def test_decode_rejects_non_spd():
    with pytest.raises(NotPositiveDefinite):
        codec.decode_spd_to_params(-np.eye(4))


def test_encode_is_continuous(rng):
    # Lipschitz bound on the box |p| <= 2: the factor entries are smooth there
    for _ in range(50):
        p = rng.uniform(-2, 2, (3, 3))
        d = rng.standard_normal((3, 3))
        d /= np.linalg.norm(d)
        for delta in (1e-2, 1e-4, 1e-6):
            q = p + delta * d
            gap = np.linalg.norm(codec.encode_pose_to_spd(tuple(p)) - codec.encode_pose_to_spd(tuple(q)))
            assert gap < 2000 * delta


def test_decode_factor_backward_fd(rng):
    p = _random_params(rng)
    L = codec.build_factor(p)
    du, dv, dt = rng.standard_normal((3, 3))
    dL = codec.decode_factor_backward(L, du, dv, dt)
    D = np.tril(rng.standard_normal((4, 4)))
    D[3, 3] = 0

    def f(x):
        q = codec.decode_factor(x)
        return np.sum(q.u * du) + np.sum(q.v * dv) + np.sum(q.t * dt)

    assert rel_err(central_fd(f, L, D), np.sum(dL * D)) < 1e-7


# -- Gram-Schmidt -----------------------------------------------------------------------

def test_gs_examples():
    assert np.allclose(codec.gram_schmidt_so3([1, 0, 0], [0, 1, 0]), np.eye(3))
    assert np.allclose(codec.gram_schmidt_so3([2, 0, 0], [1, 1, 0]), np.eye(3))


def test_gs_scale_invariance(rng):
    u, v = rng.standard_normal((2, 3))
    R = codec.gram_schmidt_so3(u, v)
    assert np.allclose(codec.gram_schmidt_so3(3.7 * u, 0.01 * v), R, atol=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=6, max_size=6))
def test_gs_always_rotation(vals):
    u, v = np.array(vals[:3]), np.array(vals[3:])
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < 1e-3 or nv < 1e-3 or np.linalg.norm(np.cross(u, v)) < 1e-3 * nu * nv:
        return
    R = codec.gram_schmidt_so3(u, v)
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-8
    assert abs(np.linalg.det(R) - 1) < 1e-8


def test_gs_degenerate_names_sample():
    u = np.array([[1.0, 0, 0], [1, 1, 0], [0, 0, 0]])
    v = np.array([[0.0, 1, 0], [2, 2, 0], [0, 1, 0]])
    with pytest.raises(DegenerateRotation) as info:
        codec.gram_schmidt_so3(u, v)
    assert info.value.index == 1


def test_gs_zero_vector():
    with pytest.raises(DegenerateRotation):
        codec.gram_schmidt_so3([0, 0, 0], [0, 1, 0])


def test_gs_rotation_to_6d_round_trip(rng):
    R = random_rotation(rng)
    assert np.allclose(codec.gram_schmidt_so3(*codec.rotation_to_6d(R)), R, atol=1e-14)


def test_gs_backward_zero(rng):
    du, dv = codec.gram_schmidt_backward([1.0, 2, 3], [0.0, 1, 5], np.zeros((3, 3)))
    assert np.all(du == 0) and np.all(dv == 0)


@pytest.mark.parametrize("target", ["trace", "r02", "random"])
def test_gs_backward_fd(rng, target):
    u, v = rng.standard_normal((2, 3))
    dR = {"trace": np.eye(3), "r02": np.eye(3)[:, :1] @ np.eye(3)[2:], "random": rng.standard_normal((3, 3))}[target]
    du, dv = codec.gram_schmidt_backward(u, v, dR)
    for k in range(3):
        e = np.eye(3)[k]
        fu = central_fd(lambda x: np.sum(dR * codec.gram_schmidt_so3(x, v)), u, e)
        fv = central_fd(lambda x: np.sum(dR * codec.gram_schmidt_so3(u, x)), v, e)
        assert rel_err(fu, du[k], floor=1e-9) < 1e-5
        assert rel_err(fv, dv[k], floor=1e-9) < 1e-5


def test_gs_backward_frozen_values():
    # central differences of R[0, 2] at u=(1, 2, .5), v=(-.3, 1, 2), computed once and frozen
    dR = np.zeros((3, 3))
    dR[0, 2] = 1.0
    du, dv = codec.gram_schmidt_backward([1, 2, 0.5], [-0.3, 1, 2], dR)
    assert np.allclose(du, [-0.2410610486225373, 0.14808035836422206, -0.11019933648936941], atol=1e-9)
    assert np.allclose(dv, [0.17466711571545446, -0.10729551397359316, 0.07984782429693027], atol=1e-9)


def test_gs_batched_backward_matches_single(rng):
    u, v = rng.standard_normal((2, 4, 3))
    dR = rng.standard_normal((4, 3, 3))
    du, dv = codec.gram_schmidt_backward(u, v, dR)
    for b in range(4):
        a, c = codec.gram_schmidt_backward(u[b], v[b], dR[b])
        assert np.allclose(du[b], a) and np.allclose(dv[b], c)


# -- translation statistics -----------------------------------------------------------

def test_normalize_examples():
    stats = TranslationStats([0.1, -0.2, 0.5], [0.2, 0.4, 0.3])
    assert np.allclose(codec.normalize_translation(stats.t_min, stats), 0)
    assert np.allclose(codec.normalize_translation(stats.t_min + stats.t_range, stats), 1)
    t = np.array([0.13, 0.07, 0.71])
    assert np.allclose(codec.denormalize_translation(codec.normalize_translation(t, stats), stats), t, atol=1e-15)


def test_stats_identical_and_single():
    s = codec.compute_translation_stats(np.tile([1.0, 2.0, 3.0], (10, 1)))
    assert np.allclose(s.t_range, 1e-6) and np.allclose(s.t_min, [1, 2, 3])
    assert np.allclose(codec.compute_translation_stats([[1.0, 2.0, 3.0]]).t_range, 1e-6)


def test_stats_uniform_grid():
    g = np.linspace(0, 1, 10001)
    s = codec.compute_translation_stats(np.stack([g, g, g], axis=1))
    # percentile oracle on the sorted list: index 0.01 * (n - 1)
    srt = np.sort(g)
    lo, hi = srt[100], srt[9900]
    assert np.allclose(s.t_min, lo) and np.allclose(s.t_range, hi - lo)
    assert np.allclose(s.t_min, 0.01) and np.allclose(s.t_range, 0.98)


def test_stats_validation():
    with pytest.raises(InvalidInput):
        TranslationStats([0, 0, 0], [1, 0, 1])
    with pytest.raises(InvalidInput):
        codec.compute_translation_stats(np.zeros((0, 3)))
    with pytest.raises(InvalidInput):
        TranslationStats.from_text("t_min_x = 1\n")


def test_stats_text_round_trip(rng):
    s = TranslationStats(rng.standard_normal(3), rng.random(3) + 0.1)
    text = s.to_text()
    assert len(text.strip().splitlines()) == 6
    back = TranslationStats.from_text(text)
    assert np.array_equal(back.t_min, s.t_min) and np.array_equal(back.t_range, s.t_range)


# -- Euler variant ----------------------------------------------------------------------

def test_euler_examples():
    assert np.array_equal(codec.build_factor_euler(Z3, Z3), np.eye(3))
    assert np.allclose(codec.euler_to_rotation(Z3), np.eye(3))
    assert np.allclose(codec.euler_to_rotation([0, 0, np.pi / 2]), [[0, -1, 0], [1, 0, 0], [0, 0, 1]])
    theta, t = codec.decode_euler(np.diag([np.e ** 2, 1, 1]))
    assert np.allclose(theta, [1, 0, 0]) and np.allclose(t, 0)


def test_euler_layout_and_round_trip(rng):
    theta, t = rng.standard_normal((2, 500, 3))
    L = codec.build_factor_euler(theta, t)
    assert np.allclose(L[0, 1, 0], t[0, 0]) and np.allclose(L[0, 2, 0], t[0, 1]) and np.allclose(L[0, 2, 1], t[0, 2])
    th2, t2 = codec.decode_euler(L @ np.swapaxes(L, 1, 2))
    assert np.abs(th2 - theta).max() < 1e-10 and np.abs(t2 - t).max() < 1e-10


def test_euler_orthogonality_and_order(rng):
    th = rng.uniform(0, 2 * np.pi, (100, 3))
    R = codec.euler_to_rotation(th)
    assert np.abs(np.swapaxes(R, 1, 2) @ R - np.eye(3)).max() < 1e-12
    c, s = np.cos(th[0]), np.sin(th[0])
    Rx = np.array([[1, 0, 0], [0, c[0], -s[0]], [0, s[0], c[0]]])
    Ry = np.array([[c[1], 0, s[1]], [0, 1, 0], [-s[1], 0, c[1]]])
    Rz = np.array([[c[2], -s[2], 0], [s[2], c[2], 0], [0, 0, 1]])
    assert np.allclose(R[0], Rz @ Ry @ Rx)


def test_euler_overflow():
    with pytest.raises(Overflow):
        codec.build_factor_euler([60.0, 0, 0], Z3)


def test_euler_backward_fd(rng):
    th = rng.standard_normal(3)
    dR = rng.standard_normal((3, 3))
    g = codec.euler_to_rotation_backward(th, dR)
    for k in range(3):
        fd = central_fd(lambda x: np.sum(dR * codec.euler_to_rotation(x)), th, np.eye(3)[k])
        assert rel_err(fd, g[k]) < 1e-7
    L = codec.build_factor_euler(th, rng.standard_normal(3))
    dth, dt = rng.standard_normal((2, 3))
    dL = codec.decode_euler_factor_backward(L, dth, dt)
    D = np.tril(rng.standard_normal((3, 3)))
    f = lambda x: np.sum(codec.decode_euler_factor(x)[0] * dth) + np.sum(codec.decode_euler_factor(x)[1] * dt)
    assert rel_err(central_fd(f, L, D), np.sum(dL * D)) < 1e-7
