"""Bandwidth/security lower bounds for size-only attackers.

A deterministic defense over a closed world of site sizes is equivalent to a
monotone partition of the sorted sizes: every site in a group is padded up to
the group's maximum.  The cost of a partition is the total bytes transmitted
across one visit to every site, sum over groups of (group max * group size).
This module computes minimum-cost partitions under both security notions via
dynamic programming, checks them against an exhaustive oracle, derives the
bandwidth-ratio lower-bound curve, and provides the constructive alternating
two-approximation for the binary shortest-common-supersequence view of the
problem.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

_INF = float("inf")


@dataclass(frozen=True)
class SiteSizes:
    """Positive site sizes, sorted ascending on construction."""

    sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.sizes:
            raise ValueError("at least one site size required")
        ordered = tuple(sorted(self.sizes))
        if any(s <= 0 for s in ordered):
            raise ValueError("site sizes must be positive")
        object.__setattr__(self, "sizes", ordered)

    def __len__(self) -> int:
        return len(self.sizes)

    @property
    def total(self) -> int:
        return sum(self.sizes)


@dataclass(frozen=True)
class PartitionResult:
    """A monotone partition with its cost and both security levels.

    ``boundaries`` are half-open index ranges over the sorted sizes; ``sizes_f``
    maps each transmitted size b to the number of sites padded to b (groups
    with equal maxima collapse into one observable size).
    """

    boundaries: tuple[tuple[int, int], ...]
    cost: int
    sizes_f: dict[int, int]
    nonuniform_security: Fraction
    uniform_security: Fraction


class Infeasible:
    """No partition satisfies the security constraint (n below 1/epsilon)."""

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return "Infeasible"


INFEASIBLE = Infeasible()


def _partition_result(sizes: SiteSizes,
                      boundaries: Sequence[tuple[int, int]]) -> PartitionResult:
    s = sizes.sizes
    n = len(s)
    cost = 0
    sizes_f: dict[int, int] = {}
    for start, end in boundaries:
        group_max = s[end - 1]
        members = end - start
        cost += group_max * members
        sizes_f[group_max] = sizes_f.get(group_max, 0) + members
    nonuniform = Fraction(len(sizes_f), n)
    uniform = max(Fraction(1, count) for count in sizes_f.values())
    return PartitionResult(tuple(boundaries), cost, sizes_f, nonuniform, uniform)


def min_cost_nonuniform(sizes: SiteSizes, k: int) -> tuple[int, PartitionResult]:
    """Minimum cost over monotone partitions into at most k groups.

    Table C[j][i] holds the optimal cost of covering the first i sites with
    at most j groups; the last group spans sites l+1..i for the best split
    point l, including the empty prefix l=0 so a single all-covering group is
    representable.
    """
    n = len(sizes)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    s = sizes.sizes
    cost = [[_INF] * (n + 1) for _ in range(k + 1)]
    split = [[-1] * (n + 1) for _ in range(k + 1)]
    for j in range(k + 1):
        cost[j][0] = 0
    for j in range(1, k + 1):
        for i in range(1, n + 1):
            best = _INF
            best_l = -1
            for l in range(0, i):
                prev = cost[j - 1][l]
                if prev is _INF:
                    continue
                candidate = prev + (i - l) * s[i - 1]
                if candidate < best:
                    best = candidate
                    best_l = l
            cost[j][i] = best
            split[j][i] = best_l
    boundaries: list[tuple[int, int]] = []
    i, j = n, k
    while i > 0:
        l = split[j][i]
        boundaries.append((l, i))
        i, j = l, j - 1
    boundaries.reverse()
    result = _partition_result(sizes, boundaries)
    return result.cost, result


def min_cost_uniform(sizes: SiteSizes,
                     epsilon: Union[Fraction, float, int]
                     ) -> Union[tuple[int, PartitionResult], Infeasible]:
    """Minimum cost over monotone partitions where every group holds at
    least ceil(1/epsilon) sites; Infeasible when fewer than that many sites
    exist at all."""
    eps = Fraction(epsilon)
    if not 0 < eps <= 1:
        raise ValueError(f"epsilon must be in (0, 1], got {epsilon}")
    min_group = -(-eps.denominator // eps.numerator)  # ceil(1/eps)
    n = len(sizes)
    if n < min_group:
        return INFEASIBLE
    s = sizes.sizes
    cost = [_INF] * (n + 1)
    split = [-1] * (n + 1)
    cost[0] = 0
    for i in range(min_group, n + 1):
        best = _INF
        best_l = -1
        for l in range(0, i - min_group + 1):
            if cost[l] is _INF:
                continue
            candidate = cost[l] + (i - l) * s[i - 1]
            if candidate < best:
                best = candidate
                best_l = l
        cost[i] = best
        split[i] = best_l
    boundaries: list[tuple[int, int]] = []
    i = n
    while i > 0:
        l = split[i]
        boundaries.append((l, i))
        i = l
    boundaries.reverse()
    result = _partition_result(sizes, boundaries)
    return result.cost, result


_BRUTE_FORCE_LIMIT = 16


def _enumerate_partitions(n: int):
    """All contiguous partitions of range(n) as boundary masks (2^(n-1))."""
    for mask in range(1 << (n - 1)):
        bounds = []
        start = 0
        for i in range(n - 1):
            if mask & (1 << i):
                bounds.append((start, i + 1))
                start = i + 1
        bounds.append((start, n))
        yield bounds


def brute_force_min_cost(sizes: SiteSizes, k: Union[int, Fraction, float],
                         uniform: bool = False) -> int:
    """Independent oracle: exhaustively enumerate monotone partitions.

    For the non-uniform constraint k is the maximum group count; for the
    uniform constraint k is epsilon and every group must hold at least
    ceil(1/epsilon) sites.  Refuses inputs past 16 sites.
    """
    n = len(sizes)
    if n > _BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force limited to {_BRUTE_FORCE_LIMIT} sites")
    s = sizes.sizes
    if uniform:
        eps = Fraction(k)
        min_group = -(-eps.denominator // eps.numerator)
        max_groups = None
    else:
        max_groups = int(k)
        if not 1 <= max_groups <= n:
            raise ValueError(f"k must be in [1, {n}], got {k}")
        min_group = 1
    best = None
    for bounds in _enumerate_partitions(n):
        if max_groups is not None and len(bounds) > max_groups:
            continue
        if min_group > 1 and any(e - b < min_group for b, e in bounds):
            continue
        cost = sum((e - b) * s[e - 1] for b, e in bounds)
        if best is None or cost < best:
            best = cost
    if best is None:
        raise ValueError("no feasible partition")
    return best


def lower_bound_bw_ratio(sizes: SiteSizes, k: int) -> Fraction:
    """Lower bound on the bandwidth ratio of any deterministic defense with
    non-uniform security k/n against a size-only attacker (closed world,
    uniform visits): optimal partition cost over the undefended total."""
    cost, _ = min_cost_nonuniform(sizes, k)
    return Fraction(cost, sizes.total)


def tradeoff_curve(sizes: SiteSizes,
                   ks: Iterable[int]) -> list[tuple[Fraction, Fraction]]:
    """One (epsilon = k/n, ratio) point per requested k; the ratio is
    non-increasing in epsilon."""
    n = len(sizes)
    return [(Fraction(k, n), lower_bound_bw_ratio(sizes, k)) for k in ks]


def scs_01_superseq(dirs: Sequence[str]) -> str:
    """Constructive two-approximation of the binary shortest common
    supersequence: the alternating string (01)^l contains every binary string
    of length at most l as a subsequence, and 2l is at most twice the
    optimum."""
    longest = 0
    for s in dirs:
        if any(ch not in "01" for ch in s):
            raise ValueError(f"not a binary string: {s!r}")
        longest = max(longest, len(s))
    return "01" * longest


def is_subsequence(needle: str, haystack: str) -> bool:
    it = iter(haystack)
    return all(ch in it for ch in needle)
