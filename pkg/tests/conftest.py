import numpy as np
import pytest

from qosfactor.data import ObservationMatrix, ObservationTensor


def random_matrix(seed, m=None, n=None, density=0.6, value_range=(0.5, 4.0)):
    """Seeded sparse matrix with dims <= 10 unless given."""
    r = np.random.default_rng(seed)
    m = m if m is not None else int(r.integers(3, 11))
    n = n if n is not None else int(r.integers(3, 11))
    n_obs = max(2, int(density * m * n))
    flat = r.choice(m * n, n_obs, replace=False)
    users, services = np.divmod(flat, n)
    values = r.uniform(*value_range, n_obs)
    return ObservationMatrix(m, n, users, services, values)


def random_tensor(seed, m=None, n=None, t=None, density=0.5, value_range=(0.1, 5.0)):
    r = np.random.default_rng(seed)
    m = m if m is not None else int(r.integers(4, 11))
    n = n if n is not None else int(r.integers(4, 11))
    t = t if t is not None else int(r.integers(4, 11))
    n_obs = max(2, int(density * m * n * t))
    flat = r.choice(m * n * t, n_obs, replace=False)
    users, rest = np.divmod(flat, n * t)
    services, times = np.divmod(rest, t)
    values = r.uniform(*value_range, n_obs)
    return ObservationTensor(m, n, t, users, services, times, values)


def rank_auc(scores, labels):
    """ROC AUC via the rank-sum statistic, ties averaged."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    order = np.argsort(scores)
    ranks = np.empty(scores.size)
    ss = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and ss[j + 1] == ss[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    n_pos = labels.sum()
    n_neg = labels.size - n_pos
    return (ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@pytest.fixture
def tiny_matrix():
    return ObservationMatrix.from_entries(3, 2, [(0, 0, 1.0), (1, 0, 0.5), (2, 1, 2.0)])
