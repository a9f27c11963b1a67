"""Isolation forest outlier scoring for one-dimensional samples.

Trees split a subsample at uniformly random points within the node's value
range until a height limit of ceil(log2(subsample)) or single-point nodes.
Every input is then routed through every tree; short average paths mean easy
isolation, i.e. likely outliers.  Scores are 2^(-avg_path / c(psi)) and lie
in [0, 1], larger meaning more anomalous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_EULER_GAMMA = 0.5772156649015329


@dataclass
class ForestConfig:
    num_trees: int = 100
    subsample: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValueError("num_trees must be >= 1")
        if self.subsample < 2:
            raise ValueError("subsample must be >= 2")


@dataclass(frozen=True)
class ScoredValue:
    index: int
    value: float
    score: float


def average_path_length(n: int) -> float:
    """Expected unsuccessful-search path length in a binary tree over n points."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1) + _EULER_GAMMA) - 2.0 * (n - 1) / n


class _Tree:
    """One isolation tree, stored as parallel node arrays for batch traversal."""

    __slots__ = ("split", "left", "right", "leaf_path")

    def __init__(self, sorted_sample: np.ndarray, height_limit: int, rng: np.random.Generator):
        split, left, right, leaf_path = [], [], [], []

        def new_node():
            split.append(0.0)
            left.append(-1)
            right.append(-1)
            leaf_path.append(0.0)
            return len(split) - 1

        # Each stack item covers sorted_sample[lo:hi] at the given depth.
        stack = [(new_node(), 0, sorted_sample.size, 0)]
        while stack:
            node, lo, hi, depth = stack.pop()
            size = hi - lo
            if depth >= height_limit or size <= 1 or sorted_sample[lo] == sorted_sample[hi - 1]:
                leaf_path[node] = depth + average_path_length(size)
                continue
            p = rng.uniform(sorted_sample[lo], sorted_sample[hi - 1])
            mid = lo + int(np.searchsorted(sorted_sample[lo:hi], p, side="left"))
            split[node] = p
            l_node = new_node()
            r_node = new_node()
            left[node] = l_node
            right[node] = r_node
            stack.append((r_node, mid, hi, depth + 1))
            stack.append((l_node, lo, mid, depth + 1))

        self.split = np.array(split)
        self.left = np.array(left, dtype=np.intp)
        self.right = np.array(right, dtype=np.intp)
        self.leaf_path = np.array(leaf_path)

    def path_lengths(self, x: np.ndarray) -> np.ndarray:
        cur = np.zeros(x.size, dtype=np.intp)
        while True:
            at_leaf = self.left[cur] < 0
            if at_leaf.all():
                break
            nxt = np.where(x < self.split[cur], self.left[cur], self.right[cur])
            cur = np.where(at_leaf, cur, nxt)
        return self.leaf_path[cur]


def score_values(values, config: ForestConfig) -> np.ndarray:
    """Outlier scores in [0, 1] for each input value; deterministic per seed."""
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("values must be a nonempty 1-d sequence")
    if not np.all(np.isfinite(x)):
        raise ValueError("values must be finite")

    if x.size == 1:
        return np.array([0.5])  # no isolation signal from a single point

    rng = np.random.default_rng(config.seed)
    psi = min(config.subsample, x.size)
    height_limit = max(1, math.ceil(math.log2(psi)))

    path_sum = np.zeros(x.size)
    for _ in range(config.num_trees):
        if psi < x.size:
            sample = x[rng.choice(x.size, size=psi, replace=False)]
        else:
            sample = x
        tree = _Tree(np.sort(sample), height_limit, rng)
        path_sum += tree.path_lengths(x)

    avg = path_sum / config.num_trees
    return np.power(2.0, -avg / average_path_length(psi))


def fit_score(values, config: ForestConfig) -> list[ScoredValue]:
    """Score every value, keeping its position in the input list."""
    scores = score_values(values, config)
    vals = np.asarray(values, dtype=float)
    return [ScoredValue(i, float(v), float(s)) for i, (v, s) in enumerate(zip(vals, scores))]


def score_grouped(values, groups, config: ForestConfig, min_group_size: int = 4) -> np.ndarray:
    """Score values per group (e.g. per service), pooling undersized groups.

    Groups with fewer than ``min_group_size`` members borrow the forest built
    over the pooled values, since a forest over a couple of points is
    degenerate.  Group forests get seeds derived from (seed, group id) so the
    result does not depend on group iteration order.
    """
    x = np.asarray(values, dtype=float)
    g = np.asarray(groups)
    if x.shape != g.shape:
        raise ValueError("values and groups must have equal length")
    if x.size == 0:
        raise ValueError("values must be nonempty")

    scores = np.empty(x.size)
    pooled_scores = None
    for gid in np.unique(g):
        member = np.flatnonzero(g == gid)
        if member.size >= min_group_size:
            seed_seq = np.random.SeedSequence((config.seed, int(gid)))
            sub_cfg = ForestConfig(config.num_trees, config.subsample, seed_seq.generate_state(1)[0])
            scores[member] = score_values(x[member], sub_cfg)
        else:
            if pooled_scores is None:
                pooled_scores = score_values(x, config)
            scores[member] = pooled_scores[member]
    return scores


def exclusion_mask(scored: list[ScoredValue], outlier_ratio: float) -> set[int]:
    """Indices retained after dropping the floor(ratio * N) highest-scored values.

    Boundary ties are resolved by larger distance from the value median, then
    by smaller index, so the retained set is reproducible.
    """
    if not 0.0 <= outlier_ratio < 1.0:
        raise ValueError("outlier_ratio must be in [0, 1)")
    n = len(scored)
    n_remove = int(outlier_ratio * n)
    indices = np.array([sv.index for sv in scored], dtype=np.intp)
    if n_remove == 0:
        return set(indices.tolist())
    values = np.array([sv.value for sv in scored])
    s = np.array([sv.score for sv in scored])
    deviation = np.abs(values - np.median(values))
    order = np.lexsort((indices, -deviation, -s))
    return set(indices[order[n_remove:]].tolist())
