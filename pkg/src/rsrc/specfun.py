"""Bessel functions of order 0 and 1, the Hankel function H_0^(1) and the
2-D Helmholtz Green's function.

Three evaluation regimes, all vectorised over numpy arrays:

* ``t <= T_SERIES``: ascending power series.
* ``T_SERIES < t <= T_ASYMP``: Miller backward recurrence for J_n, with Y_0
  and Y_1 taken from the Neumann series in the even-order J's.
* ``t > T_ASYMP``: Hankel asymptotic expansion.

The asymptotic series alone is not good enough at t = 8 (its smallest term
there is ~1e-7), which is why the middle regime exists.
"""
import math

import numpy as np

EULER_GAMMA = 0.57721566490153286061
T_MIN = 1e-12
T_SERIES = 8.0
T_ASYMP = 25.0

_N_SERIES = 40
_N_ASYMP = 26
_TWO_OVER_PI = 2.0 / math.pi


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


class CoincidentPointError(DomainError):
    """Source and field point closer than T_MIN."""


def _harmonic(n):
    return np.concatenate([[0.0], np.cumsum(1.0 / np.arange(1, n + 1))])


_H = _harmonic(_N_SERIES + 1)


def _asarray(t):
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise DomainError("non-finite argument")
    return t


# -- regime 1: power series ---------------------------------------------------

def _series(t):
    """Return (J0, Y0, J1, Y1) by power series; Y's are NaN at t == 0."""
    h = 0.5 * t
    q = -h * h
    term0 = np.ones_like(t)          # (-1)^p (t/2)^{2p} / (p!)^2
    term1 = h.copy()                 # (-1)^p (t/2)^{2p+1} / (p!(p+1)!)
    j0 = np.zeros_like(t)
    j1 = np.zeros_like(t)
    s0 = np.zeros_like(t)            # sum H_p * term0, p >= 1
    s1 = np.zeros_like(t)            # sum (H_p + H_{p+1}) * term1
    for p in range(_N_SERIES):
        if p > 0:
            term0 = term0 * q / (p * p)
            term1 = term1 * q / (p * (p + 1))
        j0 += term0
        j1 += term1
        s0 += _H[p] * term0
        s1 += (_H[p] + _H[p + 1]) * term1
    with np.errstate(divide="ignore", invalid="ignore"):
        lg = np.log(h) + EULER_GAMMA
        y0 = _TWO_OVER_PI * (lg * j0 - s0)
        y1 = _TWO_OVER_PI * lg * j1 - _TWO_OVER_PI / t - s1 / math.pi
    return j0, y0, j1, y1


# -- regime 2: Miller recurrence ---------------------------------------------

def _miller(t):
    nstart = 2 * int(math.ceil((1.3 * float(np.max(t)) + 40.0) / 2.0))
    jp1 = np.zeros_like(t)
    jn = np.full_like(t, 1e-300)
    norm = np.zeros_like(t)
    neu = np.zeros_like(t)           # sum_{k>=1} (-1)^k J_{2k} / k
    dneu = np.zeros_like(t)          # sum_{k>=1} (-1)^k J'_{2k} / k
    j1 = None
    for n in range(nstart, 0, -1):
        # jn holds J_n (unnormalised), jp1 holds J_{n+1}
        jm1 = (2.0 * n / t) * jn - jp1
        if n % 2 == 0:
            kk = n // 2
            sgn = -1.0 if kk % 2 else 1.0
            norm += 2.0 * jn
            neu += sgn * jn / kk
            dneu += sgn * 0.5 * (jm1 - jp1) / kk
        if n == 1:
            j1 = jn
        jp1, jn = jn, jm1
        # rescale to avoid overflow in deep recurrences
        big = np.abs(jn) > 1e250
        if np.any(big):
            f = np.where(big, 1e-250, 1.0)
            jn, jp1 = jn * f, jp1 * f
            norm, neu, dneu = norm * f, neu * f, dneu * f
            j1 = j1 * f if j1 is not None else None
    j0 = jn
    norm += j0
    j0 = j0 / norm
    j1 = j1 / norm
    neu = neu / norm
    dneu = dneu / norm
    lg = np.log(0.5 * t) + EULER_GAMMA
    y0 = _TWO_OVER_PI * (lg * j0 - 2.0 * neu)
    # Y1 = -Y0'
    dy0 = _TWO_OVER_PI * (j0 / t - lg * j1 - 2.0 * dneu)
    return j0, y0, j1, -dy0


# -- regime 3: Hankel asymptotics --------------------------------------------

def _asymp_coeffs(nu):
    mu = 4.0 * nu * nu
    a = [1.0]
    for k in range(1, _N_ASYMP + 1):
        a.append(a[-1] * (mu - (2 * k - 1) ** 2) / (k * 8.0))
    return a


_A0 = _asymp_coeffs(0)
_A1 = _asymp_coeffs(1)


def _pq(coef, t):
    inv = 1.0 / t
    p = np.zeros_like(t)
    q = np.zeros_like(t)
    for k in range(_N_ASYMP, -1, -1):
        c = coef[k] * inv ** k
        if k % 2 == 0:
            p += c if (k // 2) % 2 == 0 else -c
        else:
            q += c if ((k - 1) // 2) % 2 == 0 else -c
    return p, q


def _asymptotic(t):
    amp = np.sqrt(_TWO_OVER_PI / t)
    c, s = np.cos(t), np.sin(t)
    r2 = math.sqrt(0.5)
    # chi0 = t - pi/4, chi1 = t - 3pi/4
    c0, s0 = r2 * (c + s), r2 * (s - c)
    c1, s1 = r2 * (s - c), -r2 * (c + s)
    p0, q0 = _pq(_A0, t)
    p1, q1 = _pq(_A1, t)
    j0 = amp * (p0 * c0 - q0 * s0)
    y0 = amp * (p0 * s0 + q0 * c0)
    j1 = amp * (p1 * c1 - q1 * s1)
    y1 = amp * (p1 * s1 + q1 * c1)
    return j0, y0, j1, y1


def _all(t):
    """(J0, Y0, J1, Y1) for a float array t >= 0."""
    out = [np.empty_like(t) for _ in range(4)]
    regimes = [
        (t <= T_SERIES, _series),
        ((t > T_SERIES) & (t <= T_ASYMP), _miller),
        (t > T_ASYMP, _asymptotic),
    ]
    for mask, fn in regimes:
        if np.any(mask):
            for o, v in zip(out, fn(t[mask])):
                o[mask] = v
    return out


def _eval(t, idx, need_positive):
    t = _asarray(t)
    if need_positive:
        if np.any(t < T_MIN):
            raise DomainError("argument below t_min=%g" % T_MIN)
    elif np.any(t < 0):
        raise DomainError("negative argument")
    flat = np.atleast_1d(t).ravel()
    vals = _all(flat)
    res = [vals[i].reshape(t.shape) for i in idx]
    if t.ndim == 0:
        res = [float(r) for r in res]
    return res[0] if len(res) == 1 else tuple(res)


def bessel_j0(t):
    """J_0(t) for t >= 0."""
    return _eval(t, [0], False)


def bessel_j1(t):
    """J_1(t) for t >= 0."""
    return _eval(t, [2], False)


def bessel_y0(t):
    """Y_0(t) for t >= T_MIN."""
    return _eval(t, [1], True)


def bessel_y1(t):
    """Y_1(t) for t >= T_MIN."""
    return _eval(t, [3], True)


def j0_y0(t):
    """(J_0(t), Y_0(t)) in one pass, t >= T_MIN."""
    return _eval(t, [0, 1], True)


def hankel0_1(t):
    """H_0^(1)(t) = J_0(t) + i Y_0(t) as a complex value/array."""
    j, y = j0_y0(t)
    return j + 1j * np.asarray(y) if np.ndim(t) else complex(j, y)


def green_r(k, r):
    """G_k at distance r: -(i/4) H_0^(1)(k r).

    Returns complex with Re = Y_0(kr)/4 and Im = -J_0(kr)/4.
    """
    r = _asarray(r)
    if np.any(r < T_MIN):
        raise CoincidentPointError("coincident points: |x-y| < %g" % T_MIN)
    j, y = j0_y0(k * r)
    return 0.25 * (np.asarray(y) - 1j * np.asarray(j)) if np.ndim(j) \
        else complex(0.25 * y, -0.25 * j)


def green(k, x, y):
    """Green's function G_k(x, y) for points (..., 2); broadcasts (k too)."""
    if not np.all(np.asarray(k) > 0):
        raise DomainError("wavenumber must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x - y
    r = np.hypot(d[..., 0], d[..., 1])
    return green_r(k, r)
