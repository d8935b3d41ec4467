"""Globally optimal saturated-consensus rotation search.

The rotation is ``R(u, theta)`` with the axis ``u`` given in polar
coordinates ``(alpha, phi)`` and ``theta in [0, pi]``.  For an association of
an image normal ``n`` with a map direction ``v`` the signed residual is

    f(theta, u) = n.v + h1(u) sin(theta) + h2(u) (1 - cos(theta))
    h1(u) = u . (v x n),    h2(u) = n^T [u]x^2 v

which equals ``n . R(u, theta) v``.  The searched rotation therefore maps
world directions into the camera frame; the camera-to-world rotation of the
pose is its transpose.

Only the axis is branched.  For a cube of axes, exact extremes of ``h1`` and
``h2`` over the cube give two sinusoids bracketing ``f``; the amplitudes
where the bracket admits ``|f| <= eps`` form at most a few intervals per
association and the best amplitude is found by saturated interval stabbing.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._poly import quartic_roots
from .exceptions import EmptyAssociationError
from .geometry import AxisAngle, polar_to_unit, unit_to_polar
from .saturation import SaturationSpec, WeightTable
from .stabbing import (IntervalSet, StabResult, TaggedInterval, sat_stab, sigma_lookup,
                       stab_batch)

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
_TINY = 1e-12
_EDGE_CACHE_LIMIT = 4096


@dataclass(frozen=True)
class Association:
    """One putative 2D-3D line match with cached rotation geometry."""

    query_index: int
    map_index: int
    n_c: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        n = np.array(self.n_c, dtype=float)
        v = np.array(self.v, dtype=float)
        n /= np.linalg.norm(n)
        v /= np.linalg.norm(v)
        n.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "n_c", n)
        object.__setattr__(self, "v", v)

    @property
    def dot(self) -> float:
        return float(self.n_c @ self.v)

    @property
    def m(self) -> np.ndarray:
        return _unit_or_orthogonal(self.v + self.n_c, self.v)

    @property
    def m_perp(self) -> np.ndarray:
        return _unit_or_orthogonal(self.v - self.n_c, self.v)

    @property
    def c(self) -> np.ndarray:
        return _unit_or_orthogonal(np.cross(self.v, self.n_c), self.v)

    @property
    def M(self) -> np.ndarray:
        """Symmetric matrix with ``h2(u) = u^T M u - n.v``."""
        return 0.5 * (np.outer(self.n_c, self.v) + np.outer(self.v, self.n_c))


def _unit_or_orthogonal(x, ref):
    n = np.linalg.norm(x)
    if n > 1e-12:
        return x / n
    # degenerate (n = +-v): any unit vector orthogonal to ref
    a = np.eye(3)[np.argmin(np.abs(ref))]
    y = np.cross(ref, a)
    return y / np.linalg.norm(y)


@dataclass(frozen=True, order=True)
class AxisCube:
    """Polar-coordinate box of rotation axes."""

    alpha_lo: float
    alpha_hi: float
    phi_lo: float
    phi_hi: float

    def __post_init__(self):
        if not (0.0 <= self.alpha_lo <= self.alpha_hi <= math.pi + 1e-12):
            raise ValueError(f"bad alpha range [{self.alpha_lo}, {self.alpha_hi}]")
        if not (0.0 <= self.phi_lo <= self.phi_hi <= TWO_PI + 1e-12):
            raise ValueError(f"bad phi range [{self.phi_lo}, {self.phi_hi}]")

    @classmethod
    def sphere(cls) -> "AxisCube":
        return cls(0.0, math.pi, 0.0, TWO_PI)

    @classmethod
    def point(cls, alpha, phi) -> "AxisCube":
        return cls(alpha, alpha, phi, phi)

    @property
    def width(self) -> float:
        return max(self.alpha_hi - self.alpha_lo, self.phi_hi - self.phi_lo)

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.alpha_lo + self.alpha_hi), 0.5 * (self.phi_lo + self.phi_hi)

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha_lo, self.alpha_hi, self.phi_lo, self.phi_hi])

    def split(self) -> list["AxisCube"]:
        am, pm = self.center
        return [AxisCube(a0, a1, p0, p1)
                for a0, a1 in ((self.alpha_lo, am), (am, self.alpha_hi))
                for p0, p1 in ((self.phi_lo, pm), (pm, self.phi_hi))]

    def contains(self, u) -> bool:
        return bool(_contains(self.as_array()[None, :], *unit_to_polar(np.asarray(u)))[0])


def _contains(cubes, alpha, phi):
    """Membership of axes with polar coords (alpha, phi) in cubes (N, 4); broadcasts."""
    a0, a1, p0, p1 = (cubes[..., i] for i in range(4))
    in_a = (alpha >= a0) & (alpha <= a1)
    pole = np.abs(np.sin(alpha)) < 1e-12
    in_p = ((phi >= p0) & (phi <= p1)) | ((phi + TWO_PI >= p0) & (phi + TWO_PI <= p1))
    return in_a & (in_p | pole)


class RotationProblem:
    """Associations packed into arrays for vectorized bounding."""

    def __init__(self, associations: Sequence[Association], spec: SaturationSpec):
        if not associations:
            raise EmptyAssociationError("rotation search needs at least one association")
        self.associations = list(associations)
        self.spec = spec
        n = np.array([a.n_c for a in associations])
        v = np.array([a.v for a in associations])
        self.n, self.v = n, v
        self.query = np.array([a.query_index for a in associations], dtype=np.intp)
        self.dot = np.einsum("ij,ij->i", n, v)
        cross = np.cross(v, n)
        self.cross = cross
        self.cross_norm = np.linalg.norm(cross, axis=1)
        c_hat = np.array([a.c for a in associations])
        self.alpha_c, self.phi_c = unit_to_polar(c_hat)
        self.m = np.array([a.m for a in associations])
        self.m_perp = np.array([a.m_perp for a in associations])
        # eigenvalues of M on m and m_perp
        self.lam_plus = 0.5 * (1.0 + self.dot)
        self.lam_minus = -0.5 * (1.0 - self.dot)
        self.Mmat = 0.5 * (n[:, :, None] * v[:, None, :] + v[:, :, None] * n[:, None, :])
        self.m_polar = [unit_to_polar(s * self.m) for s in (1.0, -1.0)]
        self.mp_polar = [unit_to_polar(s * self.m_perp) for s in (1.0, -1.0)]

        # samples are renumbered densely for the sigma table
        self.sample_ids, self.sample = np.unique(self.query, return_inverse=True)
        counts = np.bincount(self.sample)
        self.tables = {k: WeightTable(spec, int(c)) for k, c in enumerate(counts)}
        self.sigma_table = sigma_lookup(self.tables, len(counts))
        # split cubes share their parents' edges, so per-edge work is memoized
        self._parallel_cache: dict[float, np.ndarray] = {}
        self._meridian_cache: dict[float, np.ndarray] = {}

    def __len__(self):
        return len(self.associations)

    def _edge_rows(self, cache, keys, compute):
        """Per-edge arrays for every key, computing missing edges in one batch."""
        uniq, inv = np.unique(keys, return_inverse=True)
        missing = [k for k in uniq.tolist() if k not in cache]
        if missing:
            rows = compute(np.array(missing)[:, None])
            if len(cache) + len(missing) > _EDGE_CACHE_LIMIT:
                cache.clear()
            cache.update(zip(missing, rows))
        return np.stack([cache[k] for k in uniq.tolist()])[inv.reshape(np.shape(keys))]

    def parallel_stationary(self, alphas):
        """Stationary azimuths of h2 along constant-alpha arcs: (len, M, 4)."""
        Mm = self.Mmat

        def compute(a):
            sa, ca = np.sin(a), np.cos(a)
            B = sa * sa * 0.5 * (Mm[:, 0, 0] - Mm[:, 1, 1])
            C = sa * sa * Mm[:, 0, 1]
            D = 2.0 * sa * ca * Mm[:, 0, 2]
            E = 2.0 * sa * ca * Mm[:, 1, 2]
            return _trig_stationary(B, C, D, E)

        return self._edge_rows(self._parallel_cache, alphas, compute)

    def meridian_stationary(self, phis):
        """Stationary polar angles (mod pi) along constant-phi arcs: (len, M, 2)."""
        Mm = self.Mmat

        def compute(p):
            cp, sp = np.cos(p), np.sin(p)
            Mee = Mm[:, 0, 0] * cp * cp + 2.0 * Mm[:, 0, 1] * cp * sp + Mm[:, 1, 1] * sp * sp
            Mez = Mm[:, 0, 2] * cp + Mm[:, 1, 2] * sp
            # q(alpha) = P + Q cos 2a + S sin 2a
            gamma = np.arctan2(Mez, 0.5 * (Mm[:, 2, 2] - Mee))
            return np.stack([np.mod(0.5 * gamma + 0.5 * j * math.pi, math.pi) for j in range(2)], axis=-1)

        return self._edge_rows(self._meridian_cache, phis, compute)

    def h2_at(self, u):
        """h2 for axes u (..., 3) against all associations -> (..., M)."""
        um = u @ self.m.T
        up = u @ self.m_perp.T
        return self.lam_plus * um ** 2 + self.lam_minus * up ** 2 - self.dot

    def h1_at(self, u):
        return u @ self.cross.T


# ---------------------------------------------------------------- h1 / h2 ----

def h1(u, a: Association) -> float:
    """``u . (v x n)``, the sine coefficient of the residual."""
    return float(np.dot(u, np.cross(a.v, a.n_c)))


def h2(u, a: Association) -> float:
    """``n^T [u]x^2 v``, the versine coefficient of the residual."""
    u = np.asarray(u, dtype=float)
    return float(a.n_c @ (np.outer(u, u) - np.eye(3)) @ a.v)


def _h1_bounds_batch(cubes, prob: RotationProblem):
    """Exact extremes of h1 over each cube: arrays (N, M)."""
    a0, a1, p0, p1 = (cubes[:, i:i + 1] for i in range(4))
    ac, pc = prob.alpha_c[None, :], prob.phi_c[None, :]
    sac, cac = np.sin(ac), np.cos(ac)

    # azimuth nearest to / farthest from the c-axis meridian
    c0, c1 = np.cos(p0 - pc), np.cos(p1 - pc)
    inside = ((pc >= p0) & (pc <= p1)) | ((pc + TWO_PI >= p0) & (pc + TWO_PI <= p1))
    anti = np.mod(pc + math.pi, TWO_PI)
    anti_in = ((anti >= p0) & (anti <= p1)) | ((anti + TWO_PI >= p0) & (anti + TWO_PI <= p1))
    cos_near = np.where(inside, 1.0, np.maximum(c0, c1))
    cos_far = np.where(anti_in, -1.0, np.minimum(c0, c1))

    def profile(alpha, cosd):
        return sac * cosd * np.sin(alpha) + cac * np.cos(alpha)

    def stationary(cosd):
        # zero of d/dalpha in [0, pi)
        return np.mod(np.arctan2(sac * cosd, cac), math.pi)

    def near(target):
        return np.clip(target, a0, a1)

    def far(target):
        return np.where(np.abs(a0 - target) >= np.abs(a1 - target), a0, a1)

    half = 0.5 * math.pi
    # maximizer ladder, azimuth fixed at the near meridian
    st = stationary(cos_near)
    alpha_max = np.select(
        [cos_near >= 1.0,
         cos_near == 0.0,
         cos_near < 0.0,
         (ac < half) & (a0 >= ac),
         (ac > half) & (a1 <= math.pi - ac)],
        [near(ac),
         np.where(ac <= half, a0, a1),
         far(st),
         a0,
         a1],
        default=near(st))
    # minimizer ladder, azimuth fixed at the far meridian
    st = stationary(cos_far)
    alpha_min = np.select(
        [cos_far > 0.0,
         cos_far == 0.0,
         (ac < half) & (a1 <= math.pi - ac),
         (ac > half) & (a0 >= math.pi - ac)],
        [far(st),
         np.where(ac <= half, a1, a0),
         a1,
         a0],
        default=near(st))
    cn = prob.cross_norm[None, :]
    hi = cn * profile(alpha_max, cos_near)
    lo = cn * profile(alpha_min, cos_far)
    return lo, hi


def _h2_bounds_batch(cubes, prob: RotationProblem):
    """Exact extremes of h2 over each cube: arrays (N, M)."""
    a0, a1, p0, p1 = (cubes[:, i:i + 1] for i in range(4))
    Mm = prob.Mmat
    M00, M01, M02 = Mm[:, 0, 0], Mm[:, 0, 1], Mm[:, 0, 2]
    M11, M12, M22 = Mm[:, 1, 1], Mm[:, 1, 2], Mm[:, 2, 2]

    def quad(sa, ca, cp, sp):
        return (sa * sa * (M00 * cp * cp + 2.0 * M01 * cp * sp + M11 * sp * sp)
                + 2.0 * sa * ca * (M02 * cp + M12 * sp) + ca * ca * M22)

    lo = np.full((len(cubes), len(prob)), np.inf)
    hi = np.full((len(cubes), len(prob)), -np.inf)

    def visit(alpha, phi):
        val = quad(np.sin(alpha), np.cos(alpha), np.cos(phi), np.sin(phi))
        np.minimum(lo, val, out=lo)
        np.maximum(hi, val, out=hi)

    # corners
    for a in (a0, a1):
        for p in (p0, p1):
            visit(a, p)

    # meridian arcs
    for p in (p0, p1):
        cp, sp = np.cos(p), np.sin(p)
        alphas = prob.meridian_stationary(p[:, 0])
        for j in range(alphas.shape[-1]):
            alpha = np.clip(alphas[..., j], a0, a1)
            val = quad(np.sin(alpha), np.cos(alpha), cp, sp)
            np.minimum(lo, val, out=lo)
            np.maximum(hi, val, out=hi)

    # parallel arcs
    for a in (a0, a1):
        phis = prob.parallel_stationary(a[:, 0])
        for k in range(phis.shape[-1]):
            visit(a, np.clip(np.mod(phis[..., k], TWO_PI), p0, p1))

    # interior critical points
    for al, ph in prob.m_polar:
        hit = _contains(cubes[:, None, :], al[None, :], ph[None, :])
        hi = np.where(hit, prob.lam_plus[None, :], hi)
    for al, ph in prob.mp_polar:
        hit = _contains(cubes[:, None, :], al[None, :], ph[None, :])
        lo = np.where(hit, prob.lam_minus[None, :], lo)
    return lo - prob.dot, hi - prob.dot


def _trig_stationary(B, C, D, E, newton_steps: int = 1):
    """Stationary points of ``B cos 2p + C sin 2p + D cos p + E sin p``.

    With ``z = exp(i p)`` the derivative times ``z^2`` is a quartic in ``z``
    whose roots on the unit circle are the stationary azimuths.  Returns four
    candidate angles per entry; spurious ones are harmless since callers only
    evaluate the function there.
    """
    B, C, D, E = np.broadcast_arrays(B, C, D, E)
    scale = np.maximum(np.maximum(np.abs(B), np.abs(C)), np.maximum(np.abs(D), np.abs(E)))
    lead = C + 1j * B
    degenerate = np.abs(lead) <= 1e-9 * scale
    # degenerate leads get the harmless stand-in z^4 - 1
    safe = np.where(degenerate, 1.0, lead)
    c3 = np.where(degenerate, 0.0, 0.5 * (E + 1j * D))
    c1 = np.where(degenerate, 0.0, 0.5 * (E - 1j * D))
    c0 = np.where(degenerate, -1.0, C - 1j * B)
    z = quartic_roots(np.stack([safe, c3, np.zeros_like(c3), c1, c0], axis=-1))
    ang = np.angle(z)
    Bq, Cq, Dq, Eq = (x[..., None] for x in (B, C, D, E))
    for _ in range(newton_steps):
        s1, c1_, s2, c2 = np.sin(ang), np.cos(ang), np.sin(2 * ang), np.cos(2 * ang)
        g = -2 * Bq * s2 + 2 * Cq * c2 - Dq * s1 + Eq * c1_
        dg = -4 * Bq * c2 - 4 * Cq * s2 - Dq * c1_ - Eq * s1
        with np.errstate(divide="ignore", invalid="ignore"):
            step = g / dg
        ok = np.isfinite(step) & (np.abs(step) < 0.1)
        ang = np.where(ok, ang - np.where(ok, step, 0.0), ang)
    # degree-1 fallback: -D sin p + E cos p = 0
    p1 = np.arctan2(E, D)[..., None]
    fallback = np.concatenate([p1, p1 + math.pi, p1, p1 + math.pi], axis=-1)
    return np.where(degenerate[..., None], fallback, ang)


def h1_bounds(cube: AxisCube, a: Association) -> tuple[float, float]:
    lo, hi = _h1_bounds_batch(cube.as_array()[None, :], RotationProblem([a], SaturationSpec.identity()))
    return float(lo[0, 0]), float(hi[0, 0])


def h2_bounds(cube: AxisCube, a: Association) -> tuple[float, float]:
    lo, hi = _h2_bounds_batch(cube.as_array()[None, :], RotationProblem([a], SaturationSpec.identity()))
    return float(lo[0, 0]), float(hi[0, 0])


# ------------------------------------------------------------ theta sets ----

def _sublevel(A, B, C, eps):
    """{theta in [0, pi] : A + B sin(t) + C (1 - cos(t)) <= eps} as two intervals."""
    R = np.hypot(B, C)
    psi = np.arctan2(-C, B)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(R > _TINY, (eps - A - C) / np.where(R > _TINY, R, 1.0),
                     np.where(A + C <= eps, np.inf, -np.inf))
    a = np.arcsin(np.clip(s, -1.0, 1.0))
    full = s >= 1.0
    none = s < -1.0
    los, his = [], []
    for g_lo, g_hi in ((-math.pi - a, a), (math.pi - a, TWO_PI + a)):
        lo = np.maximum(g_lo - psi, 0.0)
        hi = np.minimum(g_hi - psi, math.pi)
        los.append(lo)
        his.append(hi)
    lo = np.stack(los, axis=-1)
    hi = np.stack(his, axis=-1)
    valid = (lo <= hi) & ~none[..., None]
    lo = np.where(full[..., None], np.array([0.0, 1.0]), lo)
    hi = np.where(full[..., None], np.array([math.pi, 0.0]), hi)
    valid = np.where(full[..., None], np.array([True, False]), valid)
    return lo, hi, valid


def _theta_batch(A, h1_lo, h1_hi, h2_lo, h2_hi, eps):
    """Amplitude sets satisfying both bracket conditions: (..., 4) lo/hi/valid."""
    l1, u1, v1 = _sublevel(A, h1_lo, h2_lo, eps)
    l2, u2, v2 = _sublevel(-A, -h1_hi, -h2_hi, eps)
    lo = np.maximum(l1[..., :, None], l2[..., None, :])
    hi = np.minimum(u1[..., :, None], u2[..., None, :])
    valid = v1[..., :, None] & v2[..., None, :] & (lo <= hi)
    shape = lo.shape[:-2] + (4,)
    return lo.reshape(shape), hi.reshape(shape), valid.reshape(shape)


def theta_intervals(A, h1_lo, h1_hi, h2_lo, h2_hi, eps) -> IntervalSet:
    """Amplitudes in ``[0, pi]`` where ``f_L <= eps`` and ``f_U >= -eps``."""
    if h1_lo > h1_hi or h2_lo > h2_hi:
        raise ValueError("bounds must satisfy lo <= hi")
    lo, hi, valid = _theta_batch(np.float64(A), np.float64(h1_lo), np.float64(h1_hi),
                                 np.float64(h2_lo), np.float64(h2_hi), eps)
    return IntervalSet(np.stack([lo[valid], hi[valid]], axis=-1))


# -------------------------------------------------------------- bounding ----

def _point_intervals(prob: RotationProblem, alpha, phi, eps):
    u = polar_to_unit(alpha, phi)
    g1 = prob.h1_at(u)
    g2 = prob.h2_at(u)
    return _theta_batch(prob.dot, g1, g1, g2, g2, eps)


def _bounds_batch(cubes, prob: RotationProblem, eps):
    """Upper bounds, lower bounds and lower-bound amplitudes for cubes (N, 4)."""
    cubes = np.asarray(cubes, dtype=float)
    N, M = len(cubes), len(prob)
    a_c = 0.5 * (cubes[:, 0] + cubes[:, 1])
    p_c = 0.5 * (cubes[:, 2] + cubes[:, 3])
    lo, hi, valid = _point_intervals(prob, a_c, p_c, eps)
    sample = np.repeat(prob.sample, 4)
    lower, theta = stab_batch(lo.reshape(N, 4 * M), hi.reshape(N, 4 * M), sample,
                              valid.reshape(N, 4 * M), prob.sigma_table)
    l1, u1 = _h1_bounds_batch(cubes, prob)
    l2, u2 = _h2_bounds_batch(cubes, prob)
    lo, hi, valid = _theta_batch(prob.dot[None, :], l1, u1, l2, u2, eps)
    upper, _ = stab_batch(lo.reshape(N, 4 * M), hi.reshape(N, 4 * M), sample,
                          valid.reshape(N, 4 * M), prob.sigma_table)
    # the upper bound relaxes the lower one; guard rounding at point cubes
    upper = np.maximum(upper, lower)
    return upper, lower, theta


def _as_problem(associations, spec) -> RotationProblem:
    if isinstance(associations, RotationProblem):
        return associations
    return RotationProblem(list(associations), spec)


def _center_stab(prob: RotationProblem, alpha, phi, eps) -> StabResult:
    lo, hi, valid = _point_intervals(prob, np.array([alpha]), np.array([phi]), eps)
    lo, hi, valid = lo[0], hi[0], valid[0]
    intervals = [TaggedInterval(lo[i, j], hi[i, j], int(prob.sample[i]))
                 for i in range(len(prob)) for j in range(4) if valid[i, j]]
    return sat_stab(intervals, prob.tables)


def lower_bound(cube: AxisCube, associations, spec: SaturationSpec,
                epsilon: float | None = None) -> tuple[float, IntervalSet]:
    """Best objective with the axis fixed at the cube center, and its amplitudes."""
    if not len(associations):
        return 0.0, IntervalSet.empty()
    prob = _as_problem(associations, spec)
    eps = spec.epsilon if epsilon is None else epsilon
    res = _center_stab(prob, *cube.center, eps)
    return res.value, res.optimal_regions


def upper_bound(cube: AxisCube, associations, spec: SaturationSpec,
                epsilon: float | None = None) -> float:
    """Objective bound valid for every axis in the cube and every amplitude."""
    if not len(associations):
        return 0.0
    prob = _as_problem(associations, spec)
    eps = spec.epsilon if epsilon is None else epsilon
    upper, _, _ = _bounds_batch(cube.as_array()[None, :], prob, eps)
    return float(upper[0])


@dataclass(frozen=True)
class BnBNode:
    """One bounded cube.  The solver works on batched arrays; this is the
    per-node view used for inspection and tests."""

    cube: AxisCube
    upper: float
    lower: float
    best_theta_regions: IntervalSet

    def __post_init__(self):
        if self.lower > self.upper + 1e-9:
            raise ValueError(f"lower bound {self.lower} exceeds upper bound {self.upper}")

    @classmethod
    def evaluate(cls, cube: AxisCube, associations, spec: SaturationSpec,
                 epsilon: float | None = None) -> "BnBNode":
        if not len(associations):
            return cls(cube, 0.0, 0.0, IntervalSet.empty())
        prob = _as_problem(associations, spec)
        eps = spec.epsilon if epsilon is None else epsilon
        upper, _, _ = _bounds_batch(cube.as_array()[None, :], prob, eps)
        res = _center_stab(prob, *cube.center, eps)
        return cls(cube, max(float(upper[0]), res.value), res.value, res.optimal_regions)


def objective(prob: RotationProblem, rotation: AxisAngle, eps: float) -> float:
    """Saturated consensus of a fixed rotation (search parameterization)."""
    f = residuals(prob, rotation)
    inl = np.abs(f) <= eps
    counts = np.bincount(prob.sample, weights=inl, minlength=len(prob.tables)).astype(int)
    return float(sum(prob.tables[k].sigma(int(c)) for k, c in enumerate(counts)))


def residuals(prob: RotationProblem, rotation: AxisAngle) -> np.ndarray:
    u = rotation.axis
    s, c = math.sin(rotation.theta), math.cos(rotation.theta)
    return prob.dot + s * prob.h1_at(u) + (1.0 - c) * prob.h2_at(u)


# ------------------------------------------------------------------- BnB ----

@dataclass
class RotationConfig:
    epsilon_r: float = 0.015
    gap: float = 1e-6
    min_cube_width: float = 1e-3
    max_nodes: int = 400_000
    batch_size: int = 32
    max_candidates: int = 512
    prior_side_length: str | None = None  # "pi", "pi/2" or None
    tie_resolution: float = 4e-3
    max_tie_nodes: int = 4000
    cluster_deg: float = 2.0


@dataclass
class RotationCandidate:
    rotation: AxisAngle
    value: float
    inliers: np.ndarray  # association indices with residual <= eps
    cluster: int = 0  # tie cluster id; clusters are ordered by size
    leader: bool = True

    @property
    def matrix(self) -> np.ndarray:
        """Camera-to-world rotation matrix."""
        return self.rotation.matrix().T


@dataclass
class RotationSolution:
    candidates: list[RotationCandidate]
    value: float
    upper: float
    certified: bool
    nodes: int
    iterations: int = 0
    stats: dict = field(default_factory=dict)

    @property
    def rotations(self) -> list[AxisAngle]:
        return [c.rotation for c in self.candidates]

    @property
    def inlier_sets(self) -> list[np.ndarray]:
        return [c.inliers for c in self.candidates]

    @property
    def leaders(self) -> list[RotationCandidate]:
        """One representative per tie cluster."""
        return [c for c in self.candidates if c.leader]


def hemisphere_cubes() -> list[AxisCube]:
    return [AxisCube(0.0, math.pi, 0.0, math.pi), AxisCube(0.0, math.pi, math.pi, TWO_PI)]


def solve_rotation(associations, spec: SaturationSpec, config: RotationConfig | None = None,
                   prior_cube: AxisCube | None = None) -> RotationSolution:
    """Best-first branch and bound over rotation axes.

    Terminates when the best remaining upper bound is within ``config.gap`` of
    the incumbent, or when cubes shrink below ``config.min_cube_width``.
    Cubes that may still tie the optimum are then subdivided down to
    ``config.tie_resolution`` so that the optimal set is sampled evenly.  Every
    sampled axis whose value ties the optimum contributes one rotation per
    optimal amplitude region.  Ties are grouped into clusters and each
    cluster is led by its centroid whenever the centroid itself ties.
    """
    config = config or RotationConfig()
    if not len(associations):
        raise EmptyAssociationError("rotation search needs at least one association")
    prob = _as_problem(associations, spec)
    eps = config.epsilon_r
    gap = config.gap

    roots = [prior_cube] if prior_cube is not None else hemisphere_cubes()
    heap: list = []
    best = -math.inf
    cands: list[tuple[float, int, tuple]] = []
    maybe_tied: list[tuple[float, tuple]] = []
    counter = 0
    nodes = 0
    leaf_upper = -math.inf
    iterations = 0

    def push_eval(cube_arr, queue=True):
        nonlocal best, counter, nodes, cands
        upper, lower, theta = _bounds_batch(cube_arr, prob, eps)
        nodes += len(cube_arr)
        top = float(lower.max())
        if top > best + gap:
            best = top
            cands = [c for c in cands if c[0] >= best - gap]
        kept = []
        for i in range(len(cube_arr)):
            box = tuple(float(x) for x in cube_arr[i])
            if lower[i] >= best - gap:
                cands.append((float(lower[i]), counter, box))
            if queue and upper[i] > best + gap:
                width = max(box[1] - box[0], box[3] - box[2])
                heapq.heappush(heap, (-float(upper[i]), -width, box, counter))
            elif upper[i] >= best - gap:
                kept.append((float(upper[i]), box))
            counter += 1
        return kept

    maybe_tied += push_eval(np.array([c.as_array() for c in roots]))
    certified = True
    while heap:
        if -heap[0][0] - best <= gap:
            break
        if nodes >= config.max_nodes:
            certified = False
            break
        iterations += 1
        batch = []
        while heap and len(batch) < config.batch_size and -heap[0][0] - best > gap:
            neg_up, neg_w, box, _ = heapq.heappop(heap)
            if -neg_w < config.min_cube_width:
                leaf_upper = max(leaf_upper, -neg_up)
                continue
            batch.extend(AxisCube(*box).split())
        if batch:
            maybe_tied += push_eval(np.array([c.as_array() for c in batch]))

    remaining = -heap[0][0] if heap else -math.inf
    upper = max(best, leaf_upper, remaining if not certified else -math.inf)

    if certified and config.tie_resolution > 0:
        # sample the optimal set evenly: split every cube that may still tie
        pool = [b for u, b in maybe_tied if u >= best - gap]
        pool += [b for nu, _, b, _ in heap if -nu >= best - gap]
        spent = 0
        while pool and spent < config.max_tie_nodes:
            wide = [b for b in pool if max(b[1] - b[0], b[3] - b[2]) >= config.tie_resolution]
            if not wide:
                break
            children = [c.as_array() for b in wide[: config.batch_size * 4] for c in AxisCube(*b).split()]
            rest = wide[config.batch_size * 4:]
            spent += len(children)
            pool = rest + [b for u, b in push_eval(np.array(children), queue=False) if u >= best - gap]

    cands = [c for c in cands if c[0] >= best - gap]
    cands.sort(key=lambda c: (-c[0], c[1]))
    candidates = _expand_candidates(prob, cands[: config.max_candidates], eps)
    candidates = _order_ties(prob, candidates, best, gap, eps, config.cluster_deg)
    log.debug("rotation BnB: %d nodes, value %.6f, upper %.6f", nodes, best, upper)
    return RotationSolution(candidates, best, upper, certified, nodes, iterations,
                            {"leaf_upper": leaf_upper})


def _expand_candidates(prob, cands, eps) -> list[RotationCandidate]:
    out = []
    seen = set()
    for value, _, box in cands:
        alpha = 0.5 * (box[0] + box[1])
        phi = 0.5 * (box[2] + box[3])
        out.extend(_axis_candidates(prob, alpha, phi, eps, seen))
    return out


def _axis_candidates(prob, alpha, phi, eps, seen=None) -> list[RotationCandidate]:
    res = _center_stab(prob, alpha, phi, eps)
    out = []
    for theta in res.optimal_regions.midpoints():
        key = (round(alpha, 12), round(phi, 12), round(float(theta), 12))
        if seen is not None:
            if key in seen:
                continue
            seen.add(key)
        rot = AxisAngle(alpha, phi, float(theta))
        inl = np.flatnonzero(np.abs(residuals(prob, rot)) <= eps)
        out.append(RotationCandidate(rot, res.value, inl))
    return out


def _chordal_mean(mats) -> np.ndarray:
    U, _, Vt = np.linalg.svd(np.mean(mats, axis=0))
    D = np.diag([1.0, 1.0, np.linalg.det(U @ Vt)])
    return U @ D @ Vt


def _order_ties(prob, candidates, best, gap, eps, cluster_deg) -> list[RotationCandidate]:
    """Group tied rotations into clusters, each led by its centroid when that ties."""
    if len(candidates) < 2:
        return candidates
    mats = [c.rotation.matrix() for c in candidates]
    cos_tol = 1.0 + 2.0 * math.cos(math.radians(cluster_deg))
    label = [-1] * len(candidates)
    clusters = []
    for i in range(len(candidates)):
        if label[i] >= 0:
            continue
        label[i] = len(clusters)
        members, stack = [i], [i]
        while stack:  # single linkage
            a = stack.pop()
            for j in range(len(candidates)):
                if label[j] < 0 and np.trace(mats[a].T @ mats[j]) >= cos_tol:
                    label[j] = label[i]
                    members.append(j)
                    stack.append(j)
        clusters.append(sorted(members))
    clusters.sort(key=lambda m: (-len(m), m[0]))

    leaders, followers = [], []
    for cid, members in enumerate(clusters):
        group = [candidates[j] for j in members]
        for c in group:
            c.cluster, c.leader = cid, False
        lead = None
        if len(members) > 1:
            center = AxisAngle.from_matrix(_chordal_mean([mats[j] for j in members]))
            options = _axis_candidates(prob, center.alpha, center.phi, eps)
            options = [o for o in options if o.value >= best - gap]
            if options:
                lead = min(options, key=lambda o: abs(o.rotation.theta - center.theta))
        if lead is None:
            center_m = _chordal_mean([mats[j] for j in members])
            k = min(range(len(group)), key=lambda j: -np.trace(center_m.T @ mats[members[j]]))
            lead = group.pop(k)
        lead.cluster, lead.leader = cid, True
        leaders.append(lead)
        followers.extend(group)
    return leaders + followers
