"""Closed-form model of the intersection attack and its expectations.

One observed transaction pins the target inside a window holding x other
transactions; a non-target user whose transaction share is p slips into that
window with probability 1 - (1-p)^x.  Across m observations the user is
excluded from the running intersection as soon as one later window misses it,
and the unique-identification probability multiplies the per-round detection
probability with the exclusion probabilities of the first window's other
members.

Expectations over real user populations are evaluated by seeded Monte-Carlo
sampling of (p, x, n) tuples from the measured distributions, with reported
standard errors; exact tuple enumeration over continuous empirical supports
is combinatorially infeasible and the expectations are the quantities of
interest.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ledger import ActivityStats

__all__ = [
    "AnalyticsError",
    "DistributionSet",
    "ExpectedFi",
    "ExpectedSuccess",
    "ModelParams",
    "Pmf",
    "appearance_prob",
    "exclusion_prob",
    "expected_fi",
    "expected_success",
    "heatmap_grid",
    "success_rate",
    "write_model_report",
]

PMF_TOL = 1e-9
DEFAULT_SAMPLES = 1_000_000
CHUNK = 20_000

# Histogram edges for reporting where exclusion-probability mass sits; the
# interesting structure is crowded against 1.
_F_EDGES = np.unique(np.concatenate([
    np.linspace(0.0, 0.99, 100),
    np.array([0.999, 0.9999, 0.99999, 0.999999]),
    np.array([1.0 + 1e-12]),
]))


class AnalyticsError(ValueError):
    """Invalid model input."""


@dataclass(frozen=True)
class Pmf:
    """Discrete distribution with explicit support."""

    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) != len(self.probs) or not self.values:
            raise AnalyticsError("pmf needs aligned, non-empty support")
        if any(p < 0 for p in self.probs):
            raise AnalyticsError("pmf has negative mass")
        if abs(sum(self.probs) - 1.0) > PMF_TOL:
            raise AnalyticsError("pmf does not sum to 1")

    @classmethod
    def point(cls, value: float) -> "Pmf":
        return cls((float(value),), (1.0,))

    @classmethod
    def from_counts(cls, counts: Mapping[float, float]) -> "Pmf":
        total = float(sum(counts.values()))
        items = sorted(counts.items())
        return cls(tuple(float(v) for v, _ in items),
                   tuple(c / total for _, c in items))

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        values = np.asarray(self.values)
        if len(values) == 1:
            return np.full(size, values[0])
        idx = rng.choice(len(values), size=size, p=np.asarray(self.probs))
        return values[idx]

    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))


@dataclass(frozen=True)
class DistributionSet:
    """Measured activity distributions: user shares, window transaction and
    window pseudonym counts."""

    f_p: Pmf
    f_x: Pmf
    f_n: Pmf

    @classmethod
    def from_activity(cls, stats: ActivityStats) -> "DistributionSet":
        # Transaction shares over observed initiators: users that never
        # transacted cannot appear in any window, so they carry no mass.
        shares = [v for v in stats.p.values() if v > 0]
        if not shares:
            raise AnalyticsError("activity stats contain no transacting users")
        uniform = 1.0 / len(shares)
        counts: dict[float, float] = {}
        for share in shares:
            counts[share] = counts.get(share, 0.0) + uniform
        f_p = Pmf(tuple(sorted(counts)), tuple(counts[v] for v in sorted(counts)))
        return cls(
            f_p=f_p,
            f_x=Pmf.from_counts(stats.pdf_x),
            f_n=Pmf.from_counts(stats.pdf_n),
        )

    @classmethod
    def point_mass(cls, p: float, x: float, n: float) -> "DistributionSet":
        return cls(Pmf.point(p), Pmf.point(x), Pmf.point(n))

    def truncate_p(self, theta_p: float) -> "DistributionSet":
        """Drop share values at or above theta_p and renormalize (the model
        analogue of filtering active users out of candidate sets)."""
        keep = [(v, w) for v, w in zip(self.f_p.values, self.f_p.probs) if v < theta_p]
        if not keep:
            raise AnalyticsError(f"no share mass below theta_p={theta_p}")
        total = sum(w for _, w in keep)
        f_p = Pmf(tuple(v for v, _ in keep), tuple(w / total for _, w in keep))
        return DistributionSet(f_p, self.f_x, self.f_n)

    def discretize_p(self, bins: int = 200) -> "DistributionSet":
        """Compress the share support onto logarithmic bins (for huge dumps)."""
        values = np.asarray(self.f_p.values)
        probs = np.asarray(self.f_p.probs)
        lo, hi = values.min(), values.max()
        if lo <= 0 or bins < 2 or lo == hi:
            return self
        edges = np.geomspace(lo, hi, bins + 1)
        idx = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, bins - 1)
        mass = np.bincount(idx, weights=probs, minlength=bins)
        centers = np.sqrt(edges[:-1] * edges[1:])
        keep = mass > 0
        f_p = Pmf(tuple(centers[keep]), tuple(mass[keep] / mass[keep].sum()))
        return DistributionSet(f_p, self.f_x, self.f_n)


def appearance_prob(p: float, x: float) -> float:
    """Probability a share-p user initiates at least one of x transactions."""
    if not 0.0 <= p <= 1.0:
        raise AnalyticsError("p must be a probability")
    if x < 0:
        raise AnalyticsError("x must be nonnegative")
    return float(_appearance(np.asarray([p]), np.asarray([x]))[0])


def _appearance(p: np.ndarray, x: np.ndarray) -> np.ndarray:
    # 1 - (1-p)^x via log1p/expm1; p == 1 maps through -inf cleanly.
    with np.errstate(divide="ignore", invalid="ignore"):
        log_q = np.log1p(-p) * x
        out = -np.expm1(log_q)
    out = np.where((p >= 1.0) & (x > 0), 1.0, out)
    return np.where(x == 0, 0.0, out)


def _exclusion(p: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Exclusion probability for share draws p against window counts xs.

    p has shape (n,), xs has shape (n, m-1); an empty second axis (single
    round) yields 0: with no later window the first-round set passes through
    and nobody is excluded.
    """
    if xs.shape[1] == 0:
        return np.zeros(len(p))
    appear = _appearance(np.repeat(p, xs.shape[1]), xs.reshape(-1))
    return 1.0 - np.prod(appear.reshape(xs.shape), axis=1)


def exclusion_prob(p: float, xs: Sequence[float]) -> float:
    """Probability a share-p user drops out of an m-round intersection,
    given the later windows' transaction counts xs = (x_2 .. x_m)."""
    if not 0.0 <= p <= 1.0:
        raise AnalyticsError("p must be a probability")
    arr = np.asarray(list(xs), dtype=float).reshape(1, -1)
    return float(_exclusion(np.asarray([p]), arr)[0])


@dataclass(frozen=True)
class ModelParams:
    """Inputs of the closed-form unique-identification probability."""

    alpha: float
    m: int
    p: tuple[float, ...]  # shares of the n-1 non-target members of round 1
    xs: tuple[float, ...]  # transaction counts of rounds 2..m
    n: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise AnalyticsError("alpha must be a probability")
        if self.m < 1:
            raise AnalyticsError("m must be at least 1")
        if self.n < 1:
            raise AnalyticsError("n must be at least 1")
        if len(self.xs) != self.m - 1:
            raise AnalyticsError("xs must list rounds 2..m")
        if len(self.p) != self.n - 1:
            raise AnalyticsError("p must cover the n-1 non-target members")
        if any(not 0.0 <= v <= 1.0 for v in self.p):
            raise AnalyticsError("shares must be probabilities")


def success_rate(params: ModelParams) -> float:
    """alpha^m times the probability that every non-target member of the
    first window is excluded by the later rounds."""
    if not params.p:
        return params.alpha ** params.m
    xs = np.asarray(params.xs, dtype=float)
    p = np.asarray(params.p, dtype=float)
    f = _exclusion(p, np.broadcast_to(xs, (len(p), len(xs))))
    return float(params.alpha ** params.m * np.prod(f))


@dataclass(frozen=True)
class ExpectedFi:
    mean: float
    stderr: float
    samples: int
    hist_edges: tuple[float, ...]
    hist_mass: tuple[float, ...]

    def mass_above(self, value: float) -> float:
        edges = np.asarray(self.hist_edges)
        mass = np.asarray(self.hist_mass)
        return float(mass[np.asarray(edges[:-1]) >= value].sum())


def expected_fi(dists: DistributionSet, m: int,
                samples: int = DEFAULT_SAMPLES, seed: int = 0) -> ExpectedFi:
    """Monte-Carlo expectation and distribution of the exclusion probability."""
    if m < 1:
        raise AnalyticsError("m must be at least 1")
    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    hist = np.zeros(len(_F_EDGES) - 1)
    done = 0
    while done < samples:
        size = min(CHUNK, samples - done)
        p = dists.f_p.sample(rng, size)
        xs = dists.f_x.sample(rng, (size, m - 1))
        f = _exclusion(p, xs)
        total += float(f.sum())
        total_sq += float((f * f).sum())
        hist += np.histogram(f, bins=_F_EDGES)[0]
        done += size
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0)
    return ExpectedFi(
        mean=mean,
        stderr=math.sqrt(var / samples),
        samples=samples,
        hist_edges=tuple(_F_EDGES),
        hist_mass=tuple(hist / samples),
    )


@dataclass(frozen=True)
class ExpectedSuccess:
    e_p: float  # expected unique-identification probability
    e_r: float  # expected false-positive rate, 1 - E[P_t']
    stderr_p: float
    stderr_r: float
    samples: int
    alpha: float
    m: int
    filtered: bool


def expected_success(dists: DistributionSet, alpha: float, m: int,
                     theta_p: float | None = None,
                     samples: int = DEFAULT_SAMPLES, seed: int = 0) -> ExpectedSuccess:
    """Monte-Carlo expectations of success and false-positive rates.

    Draws (n, x_2..x_m, p_1..p_{n-1}) tuples from the measured distributions;
    theta_p, when given, truncates the share distribution below the
    active-user threshold first (the optimized identification regime).
    """
    if not 0.0 <= alpha <= 1.0:
        raise AnalyticsError("alpha must be a probability")
    if m < 1:
        raise AnalyticsError("m must be at least 1")
    use = dists.truncate_p(theta_p) if theta_p is not None else dists
    rng = np.random.default_rng(seed)
    alpha_m = alpha ** m

    sum_p = sum_p_sq = 0.0
    sum_t = sum_t_sq = 0.0
    done = 0
    while done < samples:
        size = min(CHUNK, samples - done)
        n = use.f_n.sample(rng, size).astype(np.int64)
        xs = use.f_x.sample(rng, (size, m - 1))
        counts = np.maximum(n - 1, 0)
        total_draws = int(counts.sum())
        p_t_prime = np.ones(size)
        if total_draws:
            p_draws = use.f_p.sample(rng, total_draws)
            seg = np.repeat(np.arange(size), counts)
            f = _exclusion(p_draws, xs[seg])
            nonzero = counts > 0
            starts = np.concatenate([[0], np.cumsum(counts)[:-1]])[nonzero]
            p_t_prime[nonzero] = np.multiply.reduceat(f, starts)
        success = alpha_m * p_t_prime
        sum_p += float(success.sum())
        sum_p_sq += float((success * success).sum())
        sum_t += float(p_t_prime.sum())
        sum_t_sq += float((p_t_prime * p_t_prime).sum())
        done += size

    e_p = sum_p / samples
    var_p = max(sum_p_sq / samples - e_p * e_p, 0.0)
    e_t = sum_t / samples
    var_t = max(sum_t_sq / samples - e_t * e_t, 0.0)
    return ExpectedSuccess(
        e_p=e_p,
        e_r=1.0 - e_t,
        stderr_p=math.sqrt(var_p / samples),
        stderr_r=math.sqrt(var_t / samples),
        samples=samples,
        alpha=alpha,
        m=m,
        filtered=theta_p is not None,
    )


def heatmap_grid(dists: DistributionSet, alphas: Sequence[float], ms: Sequence[int],
                 theta_p: float | None = None, samples: int = 100_000,
                 seed: int = 0) -> list[ExpectedSuccess]:
    """Expected success over an (alpha, m) grid, one seeded evaluation each."""
    rows = []
    for i, m in enumerate(ms):
        for j, alpha in enumerate(alphas):
            rows.append(expected_success(dists, alpha, m, theta_p=theta_p,
                                         samples=samples,
                                         seed=seed + 1000 * i + j))
    return rows


def write_model_report(rows: Iterable[ExpectedSuccess], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "m", "filter", "E_P", "E_R",
                         "stderr_P", "stderr_R", "samples"])
        for row in rows:
            writer.writerow([
                row.alpha, row.m, int(row.filtered),
                repr(row.e_p), repr(row.e_r),
                repr(row.stderr_p), repr(row.stderr_r), row.samples,
            ])
