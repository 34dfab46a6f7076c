"""Closed-world experiment harness: the size-only attacker, security and
overhead metrics, and distance to the theoretical trade-off bound.

The attacker model matches the size-only adversary the lower bounds are
derived against: train empirical frequency tables of defended total sizes per
site, then guess the site whose table best explains an observed size,
breaking ties uniformly.  All metrics use exact rational arithmetic; decimal
rendering happens only at the reporting edge.
"""
from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Union

from .bounds import SiteSizes, lower_bound_bw_ratio
from .core import Trace, trace_duration_ms, trace_total_bytes


@dataclass
class SiteRecord:
    """One labeled site with its undefended and defended trace collections."""

    label: str
    undefended: list[Trace]
    defended: list[Trace]


@dataclass
class ClosedWorldDataset:
    """n labeled sites under a uniform visit distribution; every site holds
    at least one trace of each kind."""

    sites: list[SiteRecord]

    def __post_init__(self) -> None:
        if len(self.sites) < 2:
            raise ValueError("closed world needs at least 2 sites")
        for site in self.sites:
            if not site.undefended or not site.defended:
                raise ValueError(
                    f"site {site.label!r} is missing traces of one kind")
        labels = [s.label for s in self.sites]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate site labels")

    @property
    def n(self) -> int:
        return len(self.sites)


@dataclass
class SizeAttackModel:
    """Per-site multisets of defended total-byte observations (training
    folds only)."""

    tables: dict[str, Counter]

    def probability(self, label: str, size: int) -> Fraction:
        table = self.tables[label]
        total = sum(table.values())
        return Fraction(table.get(size, 0), total)

    def argmax_candidates(self, size: int) -> list[str]:
        """Site labels attaining the maximum empirical probability for the
        observed size; all sites tie when the size was never seen."""
        best = max(self.probability(label, size) for label in self.tables)
        return sorted(label for label in self.tables
                      if self.probability(label, size) == best)


def train_as(dataset: ClosedWorldDataset,
             fold: Optional[dict[str, Sequence[int]]] = None) -> SizeAttackModel:
    """Build the attacker's frequency tables from the given training fold
    (per-site defended trace indices); the whole dataset when omitted."""
    tables: dict[str, Counter] = {}
    for site in dataset.sites:
        if fold is None:
            indices = range(len(site.defended))
        else:
            indices = fold.get(site.label, [])
        sizes = [trace_total_bytes(site.defended[i]) for i in indices]
        if not sizes:
            raise ValueError(f"no training traces for site {site.label!r}")
        tables[site.label] = Counter(sizes)
    return SizeAttackModel(tables)


def as_guess(model: SizeAttackModel, observed_size: int,
             rng: random.Random) -> str:
    """The attacker's guess for one observation: the most likely site,
    chosen uniformly at random among ties."""
    candidates = model.argmax_candidates(observed_size)
    return rng.choice(candidates)


def _analytic_success(model: SizeAttackModel, observed_size: int,
                      true_label: str) -> Fraction:
    candidates = model.argmax_candidates(observed_size)
    if true_label in candidates:
        return Fraction(1, len(candidates))
    return Fraction(0)


def closed_world_success(dataset: ClosedWorldDataset, folds: int = 10,
                         seed: int = 0, analytic_ties: bool = True) -> Fraction:
    """Average success rate of the size-only attacker under stratified
    k-fold cross validation (leave-one-out when some site has too few
    traces).

    Ties are averaged analytically (probability 1/|ties|) by default;
    ``analytic_ties=False`` samples them with the seeded generator instead.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    rng = random.Random(seed)
    counts = [len(site.defended) for site in dataset.sites]
    plans = (_kfold_plan(dataset, folds, rng) if min(counts) >= folds
             else _loo_plan(dataset))

    site_success: dict[str, list[Fraction]] = {s.label: [] for s in dataset.sites}
    for train_fold, test_items in plans:
        model = train_as(dataset, train_fold)
        for label, trace_idx in test_items:
            site = next(s for s in dataset.sites if s.label == label)
            observed = trace_total_bytes(site.defended[trace_idx])
            if analytic_ties:
                outcome = _analytic_success(model, observed, label)
            else:
                outcome = Fraction(int(as_guess(model, observed, rng) == label))
            site_success[label].append(outcome)

    per_site = [sum(v) / len(v) for v in site_success.values()]
    return sum(per_site, Fraction(0)) / dataset.n


def _kfold_plan(dataset: ClosedWorldDataset, folds: int, rng: random.Random):
    """Stratified folds: each site's shuffled trace indices are split into
    ``folds`` contiguous chunks; fold f tests chunk f and trains on the
    rest."""
    shuffled = {}
    for site in dataset.sites:
        idx = list(range(len(site.defended)))
        rng.shuffle(idx)
        shuffled[site.label] = idx
    plans = []
    for f in range(folds):
        train_fold: dict[str, list[int]] = {}
        test_items: list[tuple[str, int]] = []
        for site in dataset.sites:
            idx = shuffled[site.label]
            chunk = idx[f::folds]
            train_fold[site.label] = [i for i in idx if i not in chunk]
            test_items.extend((site.label, i) for i in chunk)
        plans.append((train_fold, test_items))
    return plans


def _loo_plan(dataset: ClosedWorldDataset):
    """Leave-one-out: each defended trace is tested against a model trained
    on everything else (sites with a single trace keep it for training)."""
    plans = []
    for site in dataset.sites:
        for i in range(len(site.defended)):
            train_fold = {}
            for other in dataset.sites:
                idx = list(range(len(other.defended)))
                if other.label == site.label and len(idx) > 1:
                    idx.remove(i)
                train_fold[other.label] = idx
            plans.append((train_fold, [(site.label, i)]))
    return plans


def _mean_total(traces: Sequence[Trace], measure) -> Fraction:
    return Fraction(sum(measure(t) for t in traces), len(traces))


def bandwidth_ratio(dataset: ClosedWorldDataset) -> Fraction:
    """Expected defended bytes over expected undefended bytes under uniform
    visits."""
    defended = sum(_mean_total(s.defended, trace_total_bytes)
                   for s in dataset.sites)
    undefended = sum(_mean_total(s.undefended, trace_total_bytes)
                     for s in dataset.sites)
    if undefended == 0:
        raise ValueError("undefended corpus carries zero bytes")
    return defended / undefended


def latency_ratio(dataset: ClosedWorldDataset) -> Fraction:
    """Expected defended duration over expected undefended duration under
    uniform visits."""
    defended = sum(_mean_total(s.defended, trace_duration_ms)
                   for s in dataset.sites)
    undefended = sum(_mean_total(s.undefended, trace_duration_ms)
                     for s in dataset.sites)
    if undefended == 0:
        raise ValueError("undefended corpus has zero total duration")
    return defended / undefended


def _median_low(values: Sequence[int]) -> int:
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def dataset_site_sizes(dataset: ClosedWorldDataset) -> SiteSizes:
    """Site sizes for the lower bound: the per-site median undefended total
    (lower median, deterministic)."""
    return SiteSizes(tuple(
        _median_low([trace_total_bytes(t) for t in site.undefended])
        for site in dataset.sites))


def closeness_to_bound(measured_epsilon: Union[Fraction, float],
                       measured_bw_ratio: Union[Fraction, float],
                       sizes: SiteSizes) -> Fraction:
    """How far above the bandwidth lower bound a measured (security, ratio)
    point sits; 1 means the defense matches the bound.

    The measured security converts to the bound's group count by ceiling
    (never claims a tighter bound than the achieved security warrants).
    """
    eps = Fraction(measured_epsilon)
    if not 0 < eps <= 1:
        raise ValueError(f"epsilon must be in (0, 1], got {measured_epsilon}")
    n = len(sizes)
    scaled = eps * n
    k = int(scaled) if scaled.denominator == 1 else int(scaled) + 1
    bound = lower_bound_bw_ratio(sizes, k)
    return Fraction(measured_bw_ratio) / bound
