"""Independent oracles shared by the unit and acceptance suites."""
import math

import numpy as np
import sympy as sp

from irlanding.lightfield import LightSource


def bounce_oracle(src: LightSource, rho, p, n=100):
    """Brute-force single bounce off the 1 m x 1 m panel at y=1, x in [-0.5,0.5], z in [0,1]."""
    u = (np.arange(n) + 0.5) / n
    X, Z = np.meshgrid(u - 0.5, u, indexing="ij")
    c = np.column_stack([X.ravel(), np.ones(X.size), Z.ravel()])
    area = 1.0 / (n * n)
    normal = np.array([0.0, -1.0, 0.0])
    r_in = c - src.position
    d_in = np.linalg.norm(r_in, axis=1)
    cos_src = (r_in @ src.axis) / d_in
    e = np.where(cos_src > 0, src.power * np.clip(cos_src, 0, None) ** src.lambert_exponent / d_in**2, 0)
    cos_in = (-r_in @ normal) / d_in
    r_out = np.asarray(p) - c
    d_out = np.linalg.norm(r_out, axis=1)
    cos_out = (r_out @ normal) / d_out
    contrib = rho * e * np.clip(cos_in, 0, None) * area / math.pi * np.clip(cos_out, 0, None) / d_out**2
    return contrib.sum()


def symbolic_gradient(power, m, pos, axis):
    x, y, z = sp.symbols("x y z", real=True)
    r = sp.Matrix([x - pos[0], y - pos[1], z - pos[2]])
    d = sp.sqrt(r.dot(r))
    a = sp.Matrix(axis) / sp.sqrt(sum(v**2 for v in axis))
    expr = power * (r.dot(a) / d) ** m / d**2
    grad = [sp.lambdify((x, y, z), sp.diff(expr, v)) for v in (x, y, z)]
    return lambda p: np.array([g(*p) for g in grad], dtype=float)


def brute_sweep(angles, counts, min_signal):
    """Independent oracle: explicit loop over every bin."""
    order = sorted(range(len(angles)), key=lambda i: angles[i] % (2 * math.pi))
    a = [angles[i] % (2 * math.pi) for i in order]
    v = [counts[i] for i in order]
    if max(v) - min(v) < min_signal:
        return None
    n = len(v)
    best = None
    for i in range(n):
        s = (v[i - 1] + v[i] + v[(i + 1) % n]) / 3.0
        key = (s, v[i], -a[i])
        if best is None or key > best[0]:
            best = (key, a[i])
    return best[1]
