"""Saturation functions ``sigma_k(N) = sum_{n <= N} w_k(n)``.

Three kinds are supported:

``identity``
    ``w(n) = 1``; plain consensus maximization (inlier counting).
``truncated``
    ``w(n) = 1{n == 1}``; counts settled samples.
``likelihood``
    ``w(n) = log((M + nC) / (M + (n - 1)C))`` so that
    ``sigma(N) = log(1 + C N / M)``, with ``C = u / eps * q / (1 - q)``.
    Each additional inlier of a sample earns less, and a sample with many
    putative associations ``M`` earns less per inlier.

Natural logarithms are used throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import ContractViolation, UnsupportedSaturationError

KINDS = ("identity", "truncated", "likelihood")


@dataclass(frozen=True)
class SaturationSpec:
    kind: str = "likelihood"
    q: float = 0.9
    epsilon: float = 0.015
    upper_bound: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedSaturationError(f"unknown saturation kind {self.kind!r}")
        if not 0.0 < self.q < 1.0:
            raise ValueError("q must lie in (0, 1)")
        if not 0.0 < self.epsilon < self.upper_bound:
            raise ValueError("need 0 < epsilon < upper_bound")

    @classmethod
    def identity(cls, epsilon=0.015, upper_bound=1.0) -> "SaturationSpec":
        return cls("identity", 0.5, epsilon, upper_bound)

    @classmethod
    def truncated(cls, epsilon=0.015, upper_bound=1.0) -> "SaturationSpec":
        return cls("truncated", 0.5, epsilon, upper_bound)


def scaling_constant(spec: SaturationSpec) -> float:
    """``C = u / eps * q / (1 - q)`` of the likelihood design."""
    if spec.kind != "likelihood":
        raise UnsupportedSaturationError("the scaling constant is defined for the likelihood kind only")
    return spec.upper_bound / spec.epsilon * spec.q / (1.0 - spec.q)


def _check_count(M_k: int, n: int, low: int) -> None:
    if M_k < 1:
        raise ContractViolation(f"association count must be positive, got {M_k}")
    if not low <= n <= M_k:
        raise ContractViolation(f"count {n} outside [{low}, {M_k}]")


def weight(spec: SaturationSpec, M_k: int, n: int) -> float:
    """Weight of the ``n``-th inlier of a sample with ``M_k`` associations."""
    _check_count(M_k, n, 1)
    if spec.kind == "identity":
        return 1.0
    if spec.kind == "truncated":
        return 1.0 if n == 1 else 0.0
    C = scaling_constant(spec)
    return math.log1p(C / (M_k + (n - 1) * C))


def sigma(spec: SaturationSpec, M_k: int, N: int) -> float:
    """Cumulative weight of the first ``N`` inliers."""
    _check_count(M_k, N, 0)
    return float(sigma_array(spec, M_k, N))


def sigma_array(spec: SaturationSpec, M, N) -> np.ndarray:
    """Vectorized ``sigma`` for arrays of counts; ``N`` is clipped to ``[0, M]``."""
    M = np.asarray(M, dtype=float)
    N = np.clip(np.asarray(N, dtype=float), 0.0, M)
    if spec.kind == "identity":
        return N
    if spec.kind == "truncated":
        return (N >= 1).astype(float)
    return np.log1p(scaling_constant(spec) * N / M)


class WeightTable:
    """Memoized prefix sums ``sigma_k(0..M_k)`` for one sample."""

    def __init__(self, spec: SaturationSpec, M_k: int):
        if M_k < 1:
            raise ContractViolation("a weight table needs at least one association")
        self.spec = spec
        self.M_k = int(M_k)
        self.sigmas = _prefix(spec, self.M_k)

    def sigma(self, N: int) -> float:
        """``sigma_k`` with counts beyond ``M_k`` saturating at ``sigma_k(M_k)``."""
        return self.sigmas[min(max(N, 0), self.M_k)]

    def weight(self, n: int) -> float:
        return weight(self.spec, self.M_k, n)

    def __repr__(self):
        return f"WeightTable(kind={self.spec.kind!r}, M_k={self.M_k})"


@lru_cache(maxsize=4096)
def _prefix(spec: SaturationSpec, M_k: int) -> np.ndarray:
    out = sigma_array(spec, M_k, np.arange(M_k + 1))
    out.setflags(write=False)
    return out


def weight_tables(spec: SaturationSpec, counts) -> dict[int, WeightTable]:
    """One table per sample id, given ``{sample_id: M_k}``."""
    return {k: WeightTable(spec, m) for k, m in dict(counts).items()}
