"""Independent reference implementations used by the tests.

Nothing here imports the package's math; loops and textbook formulas only.
"""

import numpy as np

H = 1e-5


def central_fd(f, x, direction, h=H):
    """Directional derivative of scalar ``f`` at ``x`` along ``direction``."""
    return (f(x + h * direction) - f(x - h * direction)) / (2.0 * h)


def rel_err(a, b, floor=1e-12):
    return abs(a - b) / max(abs(a), abs(b), floor)


def random_sym(rng, n):
    a = rng.standard_normal((n, n))
    return 0.5 * (a + a.T)


def random_spd(rng, n, spread=1.0):
    """SPD matrix with eigenvalues spread over ``[0.5, 0.5 + spread * n]``."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = 0.5 + spread * np.arange(1, n + 1) + 0.1 * rng.random(n)
    return (q * lam) @ q.T


def spd_with_eigs(rng, lam):
    q, _ = np.linalg.qr(rng.standard_normal((len(lam), len(lam))))
    return (q * np.asarray(lam)) @ q.T


def covariance_loop(F):
    """Spatial covariance of a ``(C, H, W)`` map by explicit loops."""
    C = F.shape[0]
    X = F.reshape(C, -1)
    N = X.shape[1]
    mu = [sum(X[c, p] for c in range(C)) / C for p in range(N)]
    S = np.zeros((N, N))
    for p in range(N):
        for q in range(N):
            S[p, q] = sum((X[c, p] - mu[p]) * (X[c, q] - mu[q]) for c in range(C)) / (C - 1)
    return S


def add_loop(points, R1, t1, R2, t2):
    total = 0.0
    for p in points:
        a = [sum(R1[i][k] * p[k] for k in range(3)) + t1[i] for i in range(3)]
        b = [sum(R2[i][k] * p[k] for k in range(3)) + t2[i] for i in range(3)]
        total += sum((a[i] - b[i]) ** 2 for i in range(3)) ** 0.5
    return total / len(points)


def adds_loop(points, R1, t1, R2, t2):
    moved_gt = [[sum(R2[i][k] * p[k] for k in range(3)) + t2[i] for i in range(3)] for p in points]
    total = 0.0
    for p in points:
        a = [sum(R1[i][k] * p[k] for k in range(3)) + t1[i] for i in range(3)]
        best = min(sum((a[i] - b[i]) ** 2 for i in range(3)) ** 0.5 for b in moved_gt)
        total += best
    return total / len(points)


def auc_step_integral(errors, T):
    """Integrate the empirical accuracy curve ``acc(x) = #{e < x} / n`` on ``[0, T]``
    piece by piece between sorted breakpoints, then divide by ``T``."""
    e = sorted(errors)
    n = len(e)
    knots = [0.0] + [min(max(x, 0.0), T) for x in e] + [T]
    area = 0.0
    for k in range(len(knots) - 1):
        lo, hi = knots[k], knots[k + 1]
        if hi <= lo:
            continue
        below = sum(1 for x in e if x <= lo)
        area += (hi - lo) * below / n
    return area / T


def rotation_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
