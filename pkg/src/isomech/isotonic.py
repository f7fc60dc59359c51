"""Ranking-constrained least squares via pool-adjacent-violators.

The central object is the Euclidean projection of a score vector onto the
descending cone ``x[0] >= x[1] >= ... >= x[n-1]``, computed by a stack-based
pool-adjacent-violators pass in O(n).  On top of it sit

  * ``isotonic_mechanism``     -- projection onto the cone induced by an
    author-reported ranking (permute, project, un-permute),
  * ``coarse_isotonic_mechanism`` -- the block variant, reduced to a
    data-dependent full ranking,
  * ``ranking_constrained_mle``   -- the same constraint solved on the
    natural-parameter scale of an exponential family; its adjusted means
    coincide with the plain projection.

Ranking convention throughout: position 1 of a ranking names the BEST item
(largest mean).  All operations are pure functions; nothing here keeps state.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np

from .errors import ValidationError
from .expfam import Family

__all__ = [
    "Ranking",
    "CoarseRanking",
    "IsotonicFit",
    "pava_descending",
    "project_descending",
    "project_descending_batch",
    "isotonic_mechanism",
    "coarse_isotonic_mechanism",
    "coarse_to_permutation",
    "ranking_constrained_mle",
]


@dataclass(frozen=True)
class Ranking:
    """Permutation of {1..n}; ``perm[k]`` is the item claimed to be (k+1)-th best."""

    perm: tuple[int, ...]

    def __init__(self, perm: Iterable[int]):
        object.__setattr__(self, "perm", tuple(int(p) for p in perm))
        n = len(self.perm)
        seen = [False] * n
        for p in self.perm:
            if not 1 <= p <= n or seen[p - 1]:
                raise ValidationError(f"not a permutation of 1..{n}: {self.perm}")
            seen[p - 1] = True

    def __len__(self) -> int:
        return len(self.perm)

    def __iter__(self) -> Iterator[int]:
        return iter(self.perm)

    def as_indices(self) -> np.ndarray:
        """0-based item indices, best first."""
        return np.asarray(self.perm, dtype=np.intp) - 1

    def inverse(self) -> "Ranking":
        inv = [0] * len(self.perm)
        for pos, item in enumerate(self.perm, start=1):
            inv[item - 1] = pos
        return Ranking(inv)

    @classmethod
    def identity(cls, n: int) -> "Ranking":
        return cls(range(1, n + 1))

    @classmethod
    def from_scores(cls, scores) -> "Ranking":
        """Truthful ranking of a score vector: descending, ties by ascending index."""
        x = np.asarray(scores, dtype=float)
        order = np.argsort(-x, kind="stable")
        return cls(order + 1)

    @classmethod
    def all_rankings(cls, n: int) -> Iterator["Ranking"]:
        for perm in itertools.permutations(range(1, n + 1)):
            yield cls(perm)


@dataclass(frozen=True)
class CoarseRanking:
    """Ordered blocks partitioning {1..n}; earlier blocks claim larger means."""

    blocks: tuple[tuple[int, ...], ...]

    def __init__(self, blocks: Iterable[Iterable[int]]):
        normalized = tuple(tuple(sorted(int(i) for i in block)) for block in blocks)
        object.__setattr__(self, "blocks", normalized)
        if not normalized or any(len(b) == 0 for b in normalized):
            raise ValidationError("blocks must be nonempty")
        flat = [i for block in normalized for i in block]
        n = len(flat)
        if sorted(flat) != list(range(1, n + 1)):
            raise ValidationError(f"blocks do not partition 1..{n}: {normalized}")

    @property
    def n(self) -> int:
        return sum(len(b) for b in self.blocks)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(b) for b in self.blocks)

    @classmethod
    def from_ranking(cls, ranking: Ranking, sizes: Sequence[int]) -> "CoarseRanking":
        """Blocks of the given sizes read off a full ranking, best block first."""
        if sum(sizes) != len(ranking):
            raise ValidationError("block sizes must sum to the ranking length")
        blocks, pos = [], 0
        for size in sizes:
            blocks.append(ranking.perm[pos : pos + size])
            pos += size
        return cls(blocks)

    @classmethod
    def singletons(cls, ranking: Ranking) -> "CoarseRanking":
        return cls((i,) for i in ranking.perm)

    @classmethod
    def all_coarse_rankings(cls, n: int, sizes: Sequence[int]) -> Iterator["CoarseRanking"]:
        """Every ordered partition of {1..n} into blocks of the given sizes."""
        if sum(sizes) != n:
            raise ValidationError("block sizes must sum to n")

        def rec(remaining: frozenset[int], level: int):
            if level == len(sizes):
                yield ()
                return
            for combo in itertools.combinations(sorted(remaining), sizes[level]):
                for rest in rec(remaining - set(combo), level + 1):
                    yield (combo,) + rest

        for blocks in rec(frozenset(range(1, n + 1)), 0):
            yield cls(blocks)


Constraint = Union[Ranking, CoarseRanking]


@dataclass(frozen=True)
class IsotonicFit:
    """Result of one ranking-constrained least-squares fit.

    ``pools`` lists half-open segments (start, stop, value) of equal adjusted
    scores over the constraint-sorted order.  ``theta_hat`` is present only
    when a family was supplied; pooled means on the boundary of the mean
    image carry +-inf sentinels there.
    """

    x: np.ndarray
    constraint: Constraint
    mu_hat: np.ndarray
    pools: tuple[tuple[int, int, float], ...]
    theta_hat: Optional[np.ndarray] = None


def _check_scores(x, n_expected: Optional[int] = None) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError("scores must be a nonempty 1-d vector")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("scores must be finite (no NaN/inf)")
    if n_expected is not None and arr.size != n_expected:
        raise ValidationError(
            f"length mismatch: {arr.size} scores vs constraint on {n_expected} items"
        )
    return arr


def pava_descending(y: np.ndarray, weights: Optional[np.ndarray] = None):
    """Weighted least-squares fit of a nonincreasing vector to ``y``.

    Stack-based pool-adjacent-violators: each element is pushed once and
    merged at most once, so the pass is O(n).  Returns (fitted, pools) with
    pools as (start, stop, value) half-open segments.  Weights default to
    ones; the mechanisms here never need anything else.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != y.shape or np.any(w <= 0):
        raise ValidationError("weights must be positive and match the scores")

    # parallel stacks: pooled (weighted sum, weight, length)
    sums = np.empty(n)
    wts = np.empty(n)
    lens = np.empty(n, dtype=np.intp)
    top = -1
    for i in range(n):
        s, ww, ln = y[i] * w[i], w[i], 1
        # merge while the new pool's mean exceeds its left neighbour's
        while top >= 0 and sums[top] * ww < s * wts[top]:
            s += sums[top]
            ww += wts[top]
            ln += lens[top]
            top -= 1
        top += 1
        sums[top], wts[top], lens[top] = s, ww, ln

    fitted = np.empty(n)
    pools = []
    pos = 0
    for j in range(top + 1):
        value = sums[j] / wts[j]
        stop = pos + int(lens[j])
        fitted[pos:stop] = value
        pools.append((pos, stop, float(value)))
        pos = stop
    return fitted, tuple(pools)


def project_descending(x, weights=None) -> IsotonicFit:
    """Euclidean projection onto the descending cone x1 >= x2 >= ... >= xn."""
    arr = _check_scores(x)
    fitted, pools = pava_descending(arr, weights)
    return IsotonicFit(
        x=arr, constraint=Ranking.identity(arr.size), mu_hat=fitted, pools=pools
    )


def isotonic_mechanism(x, ranking: Ranking) -> IsotonicFit:
    """Adjusted scores under a reported ranking (position 1 = best item).

    Equivalent to permuting the scores into the claimed order, projecting
    onto the descending cone, and un-permuting.
    """
    if not isinstance(ranking, Ranking):
        ranking = Ranking(ranking)
    arr = _check_scores(x, len(ranking))
    idx = ranking.as_indices()
    fitted_sorted, pools = pava_descending(arr[idx])
    mu_hat = np.empty_like(arr)
    mu_hat[idx] = fitted_sorted
    return IsotonicFit(x=arr, constraint=ranking, mu_hat=mu_hat, pools=pools)


def coarse_to_permutation(coarse: CoarseRanking, x) -> Ranking:
    """Full ranking induced by a coarse ranking on a score vector.

    Block order is kept; within each block items are sorted by descending
    score, ties broken by ascending item index.  Pooled fit values do not
    depend on the tie rule.
    """
    if not isinstance(coarse, CoarseRanking):
        coarse = CoarseRanking(coarse)
    arr = _check_scores(x, coarse.n)
    perm: list[int] = []
    for block in coarse.blocks:
        items = np.asarray(block, dtype=np.intp)
        order = np.argsort(-arr[items - 1], kind="stable")
        perm.extend(items[order])
    return Ranking(perm)


def coarse_isotonic_mechanism(x, coarse: CoarseRanking) -> IsotonicFit:
    """Adjusted scores under an ordered-blocks constraint.

    Solved by reduction to ``isotonic_mechanism`` with the block-respecting,
    score-sorted full ranking; with singleton blocks the two coincide
    exactly.
    """
    if not isinstance(coarse, CoarseRanking):
        coarse = CoarseRanking(coarse)
    ranking = coarse_to_permutation(coarse, x)
    fit = isotonic_mechanism(x, ranking)
    return IsotonicFit(
        x=fit.x, constraint=coarse, mu_hat=fit.mu_hat, pools=fit.pools
    )


def ranking_constrained_mle(family: Family, x, ranking: Ranking) -> IsotonicFit:
    """Maximum likelihood under the ranking chain on the natural parameters.

    Solves the separable convex program

        min sum_i [ -theta_i * X_i + b(theta_i) ]   s.t. theta chain per ranking

    by pooling adjacent violators on the theta scale, where a pool's fitted
    natural parameter is (b')^{-1} of its mean score.  The adjusted means
    b'(theta_hat) coincide with the plain least-squares projection; pooled
    means on the boundary of the mean image yield +-inf theta sentinels.
    """
    if not isinstance(ranking, Ranking):
        ranking = Ranking(ranking)
    arr = _check_scores(x, len(ranking))
    family.check_mean_hull(arr, "score")

    idx = ranking.as_indices()
    ys = arr[idx]
    n = ys.size

    def pool_theta(total: float, count: int) -> float:
        return float(family.natural_param(total / count, allow_boundary=True))

    sums = np.empty(n)
    lens = np.empty(n, dtype=np.intp)
    thetas = np.empty(n)
    top = -1
    for i in range(n):
        s, ln = ys[i], 1
        th = pool_theta(s, ln)
        while top >= 0 and thetas[top] < th:
            s += sums[top]
            ln += int(lens[top])
            top -= 1
            th = pool_theta(s, ln)
        top += 1
        sums[top], lens[top], thetas[top] = s, ln, th

    fitted_sorted = np.empty(n)
    theta_sorted = np.empty(n)
    pools = []
    pos = 0
    for j in range(top + 1):
        value = sums[j] / lens[j]
        stop = pos + int(lens[j])
        fitted_sorted[pos:stop] = value
        theta_sorted[pos:stop] = thetas[j]
        pools.append((pos, stop, float(value)))
        pos = stop

    mu_hat = np.empty_like(arr)
    theta_hat = np.empty_like(arr)
    mu_hat[idx] = fitted_sorted
    theta_hat[idx] = theta_sorted
    return IsotonicFit(
        x=arr, constraint=ranking, mu_hat=mu_hat, pools=tuple(pools),
        theta_hat=theta_hat,
    )


# ---------------------------------------------------------------------------
# Batched projection for Monte-Carlo loops
# ---------------------------------------------------------------------------

# For short vectors the projection has the closed min-max form
#   fit_k = max_{i <= k} min_{j >= k} mean(z[i..j])   (nondecreasing case)
# which vectorizes across rows; longer rows fall back to the scalar pass.
_MINMAX_MAX_N = 32
_MINMAX_MAX_CELLS = 40_000_000


def _batch_descending_minmax(rows: np.ndarray) -> np.ndarray:
    z = -rows  # nonincreasing fit of x == -(nondecreasing fit of -x)
    t, n = z.shape
    cs = np.concatenate([np.zeros((t, 1)), np.cumsum(z, axis=1)], axis=1)
    length = np.arange(n)[None, :] - np.arange(n)[:, None] + 1  # (i, j) -> j - i + 1
    num = cs[:, None, 1:] - cs[:, :-1][:, :, None]  # [t, i, j] = sum z[i..j]
    avg = np.where(length > 0, num / np.maximum(length, 1), np.inf)
    # suffix min over j, then prefix max over i; the fit sits on the diagonal
    suff = np.minimum.accumulate(avg[:, :, ::-1], axis=2)[:, :, ::-1]
    pref = np.maximum.accumulate(suff, axis=1)
    diag = pref[:, np.arange(n), np.arange(n)]
    return -diag


def project_descending_batch(rows) -> np.ndarray:
    """Row-wise descending projection of a (trials, n) matrix.

    Matches ``project_descending`` on every row; used by the Monte-Carlo
    drivers.  Short rows use a fully vectorized min-max evaluation, longer
    ones loop the scalar pass.
    """
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 2:
        raise ValidationError("expected a 2-d (trials, n) array")
    t, n = arr.shape
    if n == 0:
        raise ValidationError("rows must be nonempty")
    if n == 1:
        return arr.copy()
    if n <= _MINMAX_MAX_N and t * n * n <= _MINMAX_MAX_CELLS:
        return _batch_descending_minmax(arr)
    out = np.empty_like(arr)
    for k in range(t):
        out[k], _ = pava_descending(arr[k])
    return out
