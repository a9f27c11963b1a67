"""Latent factor model for static QoS prediction.

Fits user and service factor matrices to the observed entries of a sparse
matrix by row-wise gradient descent.  The residual loss is selectable (l2,
l1, or cauchy); with cauchy the per-entry pull is r / (gamma^2 + r^2), which
bounds the influence of any single observation.

Within one sweep every user row is updated against the current service
factors, then every service row against the already-updated user factors.
Rows of one factor are mutually independent given the other factor, so the
row loop is evaluated as one vectorized batch per side.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import ObservationMatrix
from .errors import DivergenceError
from .losses import Loss, _pull_raw, _term_raw, residual_pull

EPS_DIV = 1e-12

# Entries are processed in blocks sized to keep each (rows x rank) temporary
# near half a megabyte regardless of rank, so per-sweep cost stays linear
# instead of turning allocator- or cache-bound at larger problems.
def _block_rows(rank: int) -> int:
    return max(256, 65536 // max(rank, 1))


@dataclass
class MfConfig:
    """Hyperparameters for the gradient-descent matrix factorization."""

    rank: int = 30
    loss: Loss = field(default_factory=lambda: Loss.cauchy(1.0))
    reg_user: float = 1.0
    reg_service: float = 1.0
    lr_user: float = 0.003
    lr_service: float = 0.003
    max_iters: int = 500
    rel_tol: float = 1e-6
    seed: int = 0
    init_scale: float = 0.1

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.reg_user < 0 or self.reg_service < 0:
            raise ValueError("regularization must be nonnegative")
        if self.lr_user <= 0 or self.lr_service <= 0:
            raise ValueError("learning rates must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_tol < 0:
            raise ValueError("rel_tol must be nonnegative")
        if self.init_scale <= 0:
            raise ValueError("init_scale must be positive")

    @classmethod
    def response_time_profile(cls, **overrides) -> "MfConfig":
        """Defaults used for response-time data (seconds, values in [0, 20])."""
        cfg = cls(rank=30, loss=Loss.cauchy(1.0), reg_user=1.0, reg_service=1.0,
                  lr_user=0.003, lr_service=0.003)
        return replace(cfg, **overrides) if overrides else cfg

    @classmethod
    def throughput_profile(cls, **overrides) -> "MfConfig":
        """Defaults used for throughput data (kbps, wide value range)."""
        cfg = cls(rank=30, loss=Loss.cauchy(20.0), reg_user=0.01, reg_service=0.01,
                  lr_user=0.025, lr_service=0.025)
        return replace(cfg, **overrides) if overrides else cfg


@dataclass
class MfModel:
    """Fitted factors; read-only after fit (arrays are marked non-writeable)."""

    user_factors: np.ndarray  # (m, rank)
    service_factors: np.ndarray  # (n, rank)
    iterations_run: int = 0
    final_objective: float = float("nan")

    def freeze(self) -> "MfModel":
        self.user_factors.setflags(write=False)
        self.service_factors.setflags(write=False)
        return self


def _check_dims(matrix: ObservationMatrix, model: MfModel):
    if model.user_factors.shape[0] != matrix.m or model.service_factors.shape[0] != matrix.n:
        raise ValueError(
            f"model shapes {model.user_factors.shape}/{model.service_factors.shape} "
            f"do not match matrix {matrix.m}x{matrix.n}"
        )
    if model.user_factors.shape[1] != model.service_factors.shape[1]:
        raise ValueError("factor ranks differ between user and service matrices")


def _residuals(matrix: ObservationMatrix, u: np.ndarray, s: np.ndarray) -> np.ndarray:
    out = np.empty(matrix.n_entries)
    step = _block_rows(u.shape[1])
    for lo in range(0, matrix.n_entries, step):
        hi = min(lo + step, matrix.n_entries)
        out[lo:hi] = matrix.values[lo:hi] - np.einsum(
            "ij,ij->i", u[matrix.users[lo:hi]], s[matrix.services[lo:hi]]
        )
    return out


def objective(matrix: ObservationMatrix, model: MfModel, config: MfConfig) -> float:
    """Regularized data loss: 1/2 sum of loss terms + (reg/2) * squared factor norms."""
    _check_dims(matrix, model)
    u, s = model.user_factors, model.service_factors
    with np.errstate(over="ignore", invalid="ignore"):
        r = _residuals(matrix, u, s)
        data = 0.5 * float(np.sum(_term_raw(config.loss, r)))
        reg = 0.5 * config.reg_user * float(np.sum(u * u)) \
            + 0.5 * config.reg_service * float(np.sum(s * s))
    return data + reg


def grad_row_u(matrix: ObservationMatrix, model: MfModel, config: MfConfig, i: int) -> np.ndarray:
    """Gradient of the objective with respect to user row i."""
    _check_dims(matrix, model)
    if not 0 <= i < matrix.m:
        raise IndexError(f"user index {i} out of range for m={matrix.m}")
    u, s = model.user_factors, model.service_factors
    mask = matrix.users == i
    grad = config.reg_user * u[i].astype(float)
    if np.any(mask):
        cols = matrix.services[mask]
        r = matrix.values[mask] - s[cols] @ u[i]
        grad = grad - residual_pull(config.loss, r) @ s[cols]
    return grad


def grad_row_s(matrix: ObservationMatrix, model: MfModel, config: MfConfig, j: int) -> np.ndarray:
    """Gradient of the objective with respect to service row j."""
    _check_dims(matrix, model)
    if not 0 <= j < matrix.n:
        raise IndexError(f"service index {j} out of range for n={matrix.n}")
    u, s = model.user_factors, model.service_factors
    mask = matrix.services == j
    grad = config.reg_service * s[j].astype(float)
    if np.any(mask):
        rows = matrix.users[mask]
        r = matrix.values[mask] - u[rows] @ s[j]
        grad = grad - residual_pull(config.loss, r) @ u[rows]
    return grad


def _batched_grads(matrix, u, s, loss, reg, by, own, keys):
    """All row gradients of one side at once via blockwise segment sums.

    ``by`` is the CSR-style (order, ids, starts) index for the side being
    updated and ``keys`` the matching per-entry row indices.  Each block
    re-derives its local segment boundaries; partial sums for a segment that
    crosses a block edge accumulate across iterations.
    """
    order, _, _ = by
    pull_sums = np.zeros_like(own)
    step = _block_rows(own.shape[1])
    for lo in range(0, order.size, step):
        idx = order[lo:lo + step]
        u_rows = u[matrix.users[idx]]
        s_rows = s[matrix.services[idx]]
        r = matrix.values[idx] - np.einsum("ij,ij->i", u_rows, s_rows)
        against_rows = s_rows if own is u else u_rows
        contrib = _pull_raw(loss, r)[:, None] * against_rows
        block_keys = keys[idx]
        starts = np.concatenate(([0], np.flatnonzero(np.diff(block_keys)) + 1))
        pull_sums[block_keys[starts]] += np.add.reduceat(contrib, starts, axis=0)
    return reg * own - pull_sums


def fit(matrix: ObservationMatrix, config: MfConfig) -> MfModel:
    """Run gradient-descent sweeps until the relative objective change stalls.

    Raises DivergenceError when the objective leaves the finite range, which
    usually means the learning rate is too large for the data scale.
    """
    if matrix.n_entries == 0:
        raise ValueError("cannot fit an empty observation matrix")
    rng = np.random.default_rng(config.seed)
    u = rng.uniform(0.0, config.init_scale, size=(matrix.m, config.rank))
    s = rng.uniform(0.0, config.init_scale, size=(matrix.n, config.rank))
    model = MfModel(u, s)

    prev = objective(matrix, model, config)
    sweeps = 0
    for sweep in range(1, config.max_iters + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            gu = _batched_grads(matrix, u, s, config.loss, config.reg_user,
                                matrix.by_user, u, matrix.users)
            u -= config.lr_user * gu
            gs = _batched_grads(matrix, u, s, config.loss, config.reg_service,
                                matrix.by_service, s, matrix.services)
            s -= config.lr_service * gs

        cur = objective(matrix, model, config)
        sweeps = sweep
        if not np.isfinite(cur):
            raise DivergenceError(
                f"objective became non-finite at sweep {sweep}; reduce the learning rate"
            )
        if abs(prev - cur) / max(prev, EPS_DIV) < config.rel_tol:
            prev = cur
            break
        prev = cur

    model.iterations_run = sweeps
    model.final_objective = prev
    return model.freeze()


def predict(model: MfModel, pairs) -> np.ndarray:
    """Dot-product predictions for (user, service) index pairs; no clamping."""
    pairs = np.asarray(pairs, dtype=np.intp)
    if pairs.size == 0:
        return np.zeros(0, dtype=float)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValueError("pairs must be an (N, 2) array of indices")
    users, services = pairs[:, 0], pairs[:, 1]
    m, n = model.user_factors.shape[0], model.service_factors.shape[0]
    if users.min() < 0 or users.max() >= m:
        raise IndexError("user index out of range")
    if services.min() < 0 or services.max() >= n:
        raise IndexError("service index out of range")
    return np.einsum("ij,ij->i", model.user_factors[users], model.service_factors[services])
