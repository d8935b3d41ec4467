"""Vectorized closed-form quartic roots."""

from __future__ import annotations

import numpy as np

_CUBE_ROOTS_OF_UNITY = np.exp(2j * np.pi * np.arange(3) / 3)


def _cbrt(z):
    """Principal complex cube root."""
    return np.where(z == 0, 0, np.exp(np.log(np.where(z == 0, 1, z)) / 3.0))


def cubic_roots(a, b, c):
    """Roots of the monic cubic ``t^3 + a t^2 + b t + c``, shape ``(..., 3)``."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    c = np.asarray(c, dtype=complex)
    P = b - a * a / 3.0
    Q = 2.0 * a ** 3 / 27.0 - a * b / 3.0 + c
    disc = np.sqrt(Q * Q / 4.0 + P ** 3 / 27.0)
    w1 = -Q / 2.0 + disc
    w2 = -Q / 2.0 - disc
    w = np.where(np.abs(w1) >= np.abs(w2), w1, w2)
    C = _cbrt(w)[..., None] * _CUBE_ROOTS_OF_UNITY
    safe = np.where(C == 0, 1, C)
    t = np.where(C == 0, 0, C - P[..., None] / (3.0 * safe))
    return t - a[..., None] / 3.0


def quartic_roots(coeffs):
    """Roots of ``c4 x^4 + c3 x^3 + c2 x^2 + c1 x + c0``; ``coeffs[..., i] = c_{4-i}``.

    Ferrari's method with the resolvent root of largest modulus.  Callers must
    ensure ``c4 != 0``.
    """
    coeffs = np.asarray(coeffs, dtype=complex)
    lead = coeffs[..., 0]
    a, b, c, d = (coeffs[..., i] / lead for i in range(1, 5))
    p = b - 3.0 * a * a / 8.0
    q = c - a * b / 2.0 + a ** 3 / 8.0
    r = d - a * c / 4.0 + a * a * b / 16.0 - 3.0 * a ** 4 / 256.0
    # y^4 + p y^2 + q y + r = (y^2 + p/2 + m)^2 - 2m (y - q/(4m))^2
    ms = cubic_roots(p, p * p / 4.0 - r, -q * q / 8.0)
    pick = np.argmax(np.abs(ms), axis=-1)
    m = np.take_along_axis(ms, pick[..., None], axis=-1)[..., 0]
    s = np.sqrt(2.0 * m)
    s_safe = np.where(s == 0, 1, s)
    # biquadratic fallback when q == 0 and m == 0
    t1 = np.where(s == 0, 0, q / s_safe)
    roots = []
    for sign in (1.0, -1.0):
        ss = sign * s
        disc = np.sqrt(ss * ss - 4.0 * (p / 2.0 + m - sign * t1 / 2.0))
        roots.append((-ss + disc) / 2.0)
        roots.append((-ss - disc) / 2.0)
    y = np.stack(roots, axis=-1)
    return y - a[..., None] / 4.0
