"""Independent oracles shared by the unit and acceptance tests.

Everything here is written as direct transliteration (nested loops, explicit
index arithmetic), deliberately not sharing code with the package.
"""

import numpy as np

from hsirestore import Rng


def oracle_depthwise(x, kernels):
    """Nested-loop depthwise convolution, true orientation, zero padding."""
    n, h, w, m = x.shape
    k = kernels.shape[0]
    mult = kernels.shape[2]
    p = (k - 1) // 2
    out = np.zeros((n, h, w, m * mult), dtype=np.float64)
    for b in range(n):
        for i in range(h):
            for j in range(w):
                for c in range(m):
                    for q in range(mult):
                        acc = 0.0
                        for k1 in range(k):
                            for k2 in range(k):
                                ii = i + p - k1
                                jj = j + p - k2
                                if 0 <= ii < h and 0 <= jj < w:
                                    acc += float(kernels[k1, k2, q]) * float(x[b, ii, jj, c])
                        out[b, i, j, c * mult + q] = acc
    return out


def oracle_pointwise(x, weights, bias):
    """Per-pixel matrix-vector product."""
    n, h, w, cin = x.shape
    cout = weights.shape[0]
    out = np.zeros((n, h, w, cout), dtype=np.float64)
    for b in range(n):
        for i in range(h):
            for j in range(w):
                for l in range(cout):
                    acc = float(bias[l])
                    for c in range(cin):
                        acc += float(weights[l, c]) * float(x[b, i, j, c])
                    out[b, i, j, l] = acc
    return out


def rel_err(approx, exact):
    """Symmetric norm-based relative error."""
    a = np.asarray(approx, dtype=np.float64).ravel()
    b = np.asarray(exact, dtype=np.float64).ravel()
    return float(np.linalg.norm(a - b) / (np.linalg.norm(a) + np.linalg.norm(b) + 1e-300))


def grad_matches(fd, analytic, rtol, atol=1e-7):
    """Gradient agreement: norm-based relative error, with an absolute floor
    for exactly-zero gradients (a bias feeding batchnorm has true gradient 0,
    so both sides are pure rounding noise there)."""
    fd = np.asarray(fd, dtype=np.float64).ravel()
    an = np.asarray(analytic, dtype=np.float64).ravel()
    if np.linalg.norm(fd - an) <= atol:
        return True
    return rel_err(fd, an) < rtol


def central_diff(f, arr, h=1e-5):
    """Central-difference gradient of scalar f() with respect to arr, in place."""
    flat = arr.reshape(-1)
    grad = np.empty(flat.size, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(arr.shape)


def random_f64(rng: Rng, shape):
    return np.asarray(rng.normals(int(np.prod(shape))).reshape(shape))
