"""Friedman rank test, Nemenyi critical distance and Pearson correlation.

Scores come as a ``blocks x treatments`` matrix (e.g. embeddings x methods
when comparing methods).  Rank 1 is the best treatment within a block.
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

# Nemenyi critical values q_alpha(k): the studentized range statistic for
# infinite degrees of freedom divided by sqrt(2).  k <= 10 from Demsar (2006),
# Table 5; k = 11..20 from the same quantity computed to three decimals.
Q_ALPHA = {
    0.05: (1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164,
           3.219, 3.268, 3.313, 3.354, 3.391, 3.426, 3.458, 3.489, 3.517, 3.544),
    0.10: (1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920,
           2.978, 3.030, 3.077, 3.120, 3.159, 3.196, 3.230, 3.261, 3.291, 3.319),
}
K_MIN, K_MAX = 2, 20


class RankStatsError(ValueError):
    pass


def _matrix(scores):
    m = np.asarray(scores, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 2:
        raise RankStatsError(f"need at least 2 blocks x 2 treatments, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise RankStatsError("scores must be finite")
    return m


def rank_within_blocks(scores, higher_is_better=True):
    """Midranks per block; rank 1 is best."""
    m = _matrix(scores)
    keyed = -m if higher_is_better else m
    return np.array([stats.rankdata(row, method="average") for row in keyed])


def friedman(scores, higher_is_better=True):
    """Tie-corrected Friedman chi-square test.

    Returns ``(statistic, p_value, mean_ranks)``.  When every block is fully
    tied the statistic is 0 and the p-value 1.
    """
    ranks = rank_within_blocks(scores, higher_is_better)
    n, k = ranks.shape
    rank_sums = ranks.sum(axis=0)
    chi2 = 12.0 / (n * k * (k + 1)) * np.sum(rank_sums ** 2) - 3.0 * n * (k + 1)
    ties = 0.0
    for row in ranks:
        _, counts = np.unique(row, return_counts=True)
        ties += np.sum(counts ** 3 - counts)
    denom = 1.0 - ties / (n * (k ** 3 - k))
    if denom <= 0:
        return 0.0, 1.0, ranks.mean(axis=0)
    stat = max(chi2 / denom, 0.0)
    return float(stat), float(stats.chi2.sf(stat, k - 1)), ranks.mean(axis=0)


def nemenyi_cd(k, n, alpha=0.05):
    """Critical distance between mean ranks of ``k`` treatments over ``n`` blocks."""
    if alpha not in Q_ALPHA:
        raise RankStatsError(f"alpha must be one of {sorted(Q_ALPHA)}, got {alpha}")
    if not K_MIN <= k <= K_MAX:
        raise RankStatsError(f"k={k} outside the table range [{K_MIN}, {K_MAX}]")
    if n < 1:
        raise RankStatsError("need at least one block")
    return Q_ALPHA[alpha][k - 2] * math.sqrt(k * (k + 1) / (6.0 * n))


def cd_groups(mean_ranks, cd):
    """Maximal runs of rank-sorted treatments spanning at most ``cd``.

    These are the horizontal bars of a critical-difference diagram.  Groups
    are returned as index tuples, best rank first; a group contained in a
    larger one is dropped.
    """
    r = np.asarray(mean_ranks, dtype=np.float64)
    order = [int(i) for i in np.argsort(r, kind="stable")]
    groups = []
    for a in range(len(order)):
        b = a
        while b + 1 < len(order) and r[order[b + 1]] - r[order[a]] <= cd:
            b += 1
        group = tuple(order[a:b + 1])
        if not groups or not set(group) <= set(groups[-1]):
            groups.append(group)
    return groups


def not_different(mean_ranks, cd):
    """Boolean matrix: True where two treatments' ranks differ by at most ``cd``."""
    r = np.asarray(mean_ranks, dtype=np.float64)
    return np.abs(r[:, None] - r[None, :]) <= cd


@dataclass
class RankReport:
    treatments: list
    blocks: list
    mean_ranks: list
    statistic: float
    p_value: float
    alpha: float
    cd: float
    clusters: list

    @property
    def best(self):
        return self.treatments[int(np.argmin(self.mean_ranks))]

    def to_json(self):
        return json.dumps(asdict(self), indent=2)

    def diagram_data(self):
        return {"treatments": self.treatments, "mean_ranks": self.mean_ranks,
                "cd": self.cd, "clusters": self.clusters}


def rank_report(scores, treatments, blocks, alpha=0.05, higher_is_better=True):
    m = _matrix(scores)
    if m.shape != (len(blocks), len(treatments)):
        raise RankStatsError(f"scores {m.shape} vs {len(blocks)} blocks x {len(treatments)} treatments")
    stat, p, mean_ranks = friedman(m, higher_is_better)
    cd = nemenyi_cd(len(treatments), len(blocks), alpha)
    clusters = [[treatments[i] for i in g] for g in cd_groups(mean_ranks, cd)]
    return RankReport(list(treatments), list(blocks), [float(x) for x in mean_ranks],
                      stat, p, alpha, cd, clusters)


def pearson(xs, ys):
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise RankStatsError("pearson needs two equal-length vectors of length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise RankStatsError("pearson undefined for a constant vector")
    return max(-1.0, min(1.0, float(dx @ dy) / (sx * sy)))
