import mpmath
import numpy as np
import sympy as sp

from magmap import Dataset


def random_dataset(n, seed=0, half_width=0.4, scale=5.0, t=False):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-half_width, half_width, (n, 3))
    y = scale * rng.standard_normal((n, 3))
    return Dataset(x, y, np.sort(rng.uniform(0, 100, n)) if t else None)


def fd_jacobian(f, X, h=1e-6):
    """(k, 3, 3) central-difference Jacobian ``J[:, i, j] = d f_i / d x_j``."""
    J = np.empty((len(X), 3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        J[:, :, j] = (f(X + e) - f(X - e)) / (2 * h)
    return J


def curl_from_jacobian(J):
    return np.stack([J[:, 2, 1] - J[:, 1, 2], J[:, 0, 2] - J[:, 2, 0], J[:, 1, 0] - J[:, 0, 1]], axis=1)


def cube_grid(half_width, k):
    g = np.linspace(-half_width, half_width, k)
    return np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)


def _sympy_curl_builder():
    """Cross-Hessian of the SE potential kernel, derived symbolically."""
    x = sp.symbols("x0:3")
    z = sp.symbols("z0:3")
    s2, ell = sp.symbols("s2 ell", positive=True)
    kappa = s2 * sp.exp(-sum((a - b) ** 2 for a, b in zip(x, z)) / (2 * ell**2))
    entries = [[sp.diff(kappa, x[i], z[j]) for j in range(3)] for i in range(3)]
    fn = sp.lambdify((*x, *z, s2, ell), entries, "numpy")

    def curl(X1, X2, sigma2, l):
        X1 = np.asarray(X1, float).reshape(-1, 3)
        X2 = np.asarray(X2, float).reshape(-1, 3)
        A = X1[:, None, :] * np.ones((1, len(X2), 1))
        B = X2[None, :, :] * np.ones((len(X1), 1, 1))
        E = fn(*A.transpose(2, 0, 1), *B.transpose(2, 0, 1), sigma2, l)
        K = np.empty((len(X1), len(X2), 3, 3))
        for i in range(3):
            for j in range(3):
                K[:, :, i, j] = np.broadcast_to(E[i][j], K.shape[:2])
        return K.transpose(0, 2, 1, 3).reshape(3 * len(X1), 3 * len(X2))

    return curl


SYMPY_CURL = _sympy_curl_builder()


def mp_cross_hessian(x, x2, sigma2, ell, step):
    """Central-difference cross-Hessian of the SE kernel in 30-digit arithmetic."""
    mpmath.mp.dps = 30
    h = mpmath.mpf(step)

    def kap(a, b):
        r2 = sum((mpmath.mpf(p) - mpmath.mpf(q)) ** 2 for p, q in zip(a, b))
        return mpmath.mpf(sigma2) * mpmath.exp(-r2 / (2 * mpmath.mpf(ell) ** 2))

    H = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            def sh(v, k, s):
                out = [mpmath.mpf(c) for c in v]
                out[k] += s * h
                return out

            val = (
                kap(sh(x, i, 1), sh(x2, j, 1))
                - kap(sh(x, i, 1), sh(x2, j, -1))
                - kap(sh(x, i, -1), sh(x2, j, 1))
                + kap(sh(x, i, -1), sh(x2, j, -1))
            ) / (4 * h * h)
            H[i, j] = float(val)
    return H
