"""
Prior distributions the batch-shaping loss can match a feature to.

Each prior exposes an exact, vectorized CDF and PDF in 64-bit arithmetic.
The Beta CDF is the regularized incomplete beta function, evaluated with a
modified Lentz continued fraction and the usual symmetry switch.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Tuple

import numpy as np
from scipy.special import betaln, ndtr, ndtri

from .constants import (
    BETA_CLAMP,
    BETACF_EPS,
    BETACF_FPMIN,
    BETACF_MAX_ITERATIONS,
    PPF_ITERATIONS,
    PRIOR_KINDS,
)

logger = logging.getLogger("PriorSpec")


def _betacf(a: float, b: float, x: np.ndarray) -> np.ndarray:
    """
    Continued fraction of the incomplete beta function (modified Lentz),
    evaluated for all x at once until every entry has converged.
    """
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < BETACF_FPMIN, BETACF_FPMIN, d)
    d = 1.0 / d
    h = d.copy()
    for m in range(1, BETACF_MAX_ITERATIONS + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < BETACF_FPMIN, BETACF_FPMIN, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < BETACF_FPMIN, BETACF_FPMIN, c)
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < BETACF_FPMIN, BETACF_FPMIN, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < BETACF_FPMIN, BETACF_FPMIN, c)
        d = 1.0 / d
        delta = d * c
        h *= delta
        if np.all(np.abs(delta - 1.0) < BETACF_EPS):
            break
    else:
        logger.warning(f"_betacf: no convergence after {BETACF_MAX_ITERATIONS} iterations for a={a}, b={b}")
    return h


def regularized_incomplete_beta(a: float, b: float, x: np.ndarray) -> np.ndarray:
    """
    I_x(a, b) for x in (0, 1).
    """
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape
    x = np.atleast_1d(x)
    front = np.exp(a * np.log(x) + b * np.log1p(-x) - betaln(a, b))
    lower = x < (a + 1.0) / (a + b + 2.0)
    out = np.empty_like(x)
    if np.any(lower):
        xl = x[lower]
        out[lower] = front[lower] * _betacf(a, b, xl) / a
    if np.any(~lower):
        xu = x[~lower]
        out[~lower] = 1.0 - front[~lower] * _betacf(b, a, 1.0 - xu) / b
    return out.reshape(shape)


@dataclass(frozen=True)
class PriorSpec:
    """
    A named prior: beta (a, b), gaussian (mu, sigma) or uniform (lo, hi).
    """

    kind: str
    params: Tuple[float, ...]

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ValueError(f"PriorSpec: unknown kind '{self.kind}', expected one of {PRIOR_KINDS}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if len(self.params) != 2:
            raise ValueError(f"PriorSpec: {self.kind} takes 2 parameters, got {self.params}")
        p, q = self.params
        if self.kind == "beta" and (p <= 0 or q <= 0):
            raise ValueError(f"PriorSpec: beta shapes must be positive, got a={p}, b={q}")
        if self.kind == "gaussian" and q <= 0:
            raise ValueError(f"PriorSpec: gaussian stddev must be positive, got {q}")
        if self.kind == "uniform" and not p < q:
            raise ValueError(f"PriorSpec: uniform needs lo < hi, got lo={p}, hi={q}")

    @classmethod
    def beta(cls, a: float, b: float) -> "PriorSpec":
        return cls("beta", (a, b))

    @classmethod
    def gaussian(cls, mu: float = 0.0, sigma: float = 1.0) -> "PriorSpec":
        return cls("gaussian", (mu, sigma))

    @classmethod
    def uniform(cls, lo: float = 0.0, hi: float = 1.0) -> "PriorSpec":
        return cls("uniform", (lo, hi))

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "PriorSpec":
        return cls(str(d["kind"]), tuple(d["params"]))

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "params": list(self.params)}

    @property
    def support(self) -> Tuple[float, float]:
        if self.kind == "beta":
            return (0.0, 1.0)
        if self.kind == "gaussian":
            return (-np.inf, np.inf)
        return self.params

    @property
    def mean(self) -> float:
        p, q = self.params
        if self.kind == "beta":
            return p / (p + q)
        if self.kind == "gaussian":
            return p
        return (p + q) / 2.0

    def cdf(self, x: Any) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        p, q = self.params
        if self.kind == "beta":
            return regularized_incomplete_beta(p, q, np.clip(x, BETA_CLAMP, 1.0 - BETA_CLAMP))
        if self.kind == "gaussian":
            return ndtr((x - p) / q)
        return np.clip((x - p) / (q - p), 0.0, 1.0)

    def pdf(self, x: Any) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        p, q = self.params
        if self.kind == "beta":
            x = np.clip(x, BETA_CLAMP, 1.0 - BETA_CLAMP)
            return np.exp((p - 1.0) * np.log(x) + (q - 1.0) * np.log1p(-x) - betaln(p, q))
        if self.kind == "gaussian":
            z = (x - p) / q
            return np.exp(-0.5 * z * z) / (q * np.sqrt(2.0 * np.pi))
        return np.where((x >= p) & (x <= q), 1.0 / (q - p), 0.0)

    def ppf(self, u: Any) -> np.ndarray:
        """
        Inverse CDF, by bisection for the beta prior.
        """
        u = np.asarray(u, dtype=np.float64)
        p, q = self.params
        if self.kind == "gaussian":
            return p + q * ndtri(u)
        if self.kind == "uniform":
            return p + u * (q - p)
        lo = np.zeros_like(u)
        hi = np.ones_like(u)
        for _ in range(PPF_ITERATIONS):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return self.ppf(rng.uniform(size=size))


def cdf(spec: PriorSpec, x: Any) -> np.ndarray:
    return spec.cdf(x)


def pdf(spec: PriorSpec, x: Any) -> np.ndarray:
    return spec.pdf(x)
