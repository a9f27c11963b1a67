"""Nonnegative CP factorization of a sparse tensor under a Cauchy data loss.

Each sweep updates one factor matrix by an entrywise multiplicative rule

    F <- F * Num / (Den + reg * F)

where Num and Den accumulate, over the observed entries touching each row,
the reweighted data and reconstruction terms.  The per-entry weight
1 / (gamma^2 + residual^2) is evaluated once from the pre-sweep predictions;
this is the tangent majorizer of the Cauchy loss, so every sweep is a
descent step.  Multiplicative updates preserve nonnegativity exactly and
leave zero entries at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import ObservationTensor
from .errors import DivergenceError

EPS_DIV = 1e-12

# Entries are processed in blocks sized to keep each (rows x rank) temporary
# near half a megabyte regardless of rank, so per-sweep cost stays linear
# instead of turning allocator- or cache-bound at larger problems.
def _block_rows(rank: int) -> int:
    return max(256, 65536 // max(rank, 1))


@dataclass
class TfConfig:
    """Hyperparameters for the multiplicative-update tensor factorization."""

    rank: int = 15
    gamma: float = 10.0
    reg_user: float = 0.1
    reg_service: float = 0.1
    reg_time: float = 0.1
    max_iters: int = 500
    rel_tol: float = 1e-6
    seed: int = 0
    init_scale: float = 0.1
    denom_floor: float = 1e-12

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if min(self.reg_user, self.reg_service, self.reg_time) < 0:
            raise ValueError("regularization must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_tol < 0:
            raise ValueError("rel_tol must be nonnegative")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be positive")
        if not self.denom_floor > 0:
            raise ValueError("denom_floor must be positive")

    @classmethod
    def response_time_profile(cls, metric: str = "mae", **overrides) -> "TfConfig":
        """Defaults for response-time data; the loss scale differs per error metric."""
        gamma = {"mae": 10.0, "rmse": 35.0}[metric]
        cfg = cls(rank=15, gamma=gamma, reg_user=0.1, reg_service=0.1, reg_time=0.1)
        return replace(cfg, **overrides) if overrides else cfg

    @classmethod
    def throughput_profile(cls, **overrides) -> "TfConfig":
        cfg = cls(rank=15, gamma=5.0, reg_user=100.0, reg_service=100.0, reg_time=100.0)
        return replace(cfg, **overrides) if overrides else cfg


@dataclass
class TfModel:
    """Nonnegative factors; read-only after fit."""

    user_factors: np.ndarray  # (m, rank)
    service_factors: np.ndarray  # (n, rank)
    time_factors: np.ndarray  # (t, rank)
    iterations_run: int = 0
    final_objective: float = float("nan")

    def freeze(self) -> "TfModel":
        for arr in (self.user_factors, self.service_factors, self.time_factors):
            arr.setflags(write=False)
        return self


def _check_dims(tensor: ObservationTensor, model: TfModel):
    shapes = (model.user_factors.shape, model.service_factors.shape, model.time_factors.shape)
    if (shapes[0][0], shapes[1][0], shapes[2][0]) != (tensor.m, tensor.n, tensor.t):
        raise ValueError(f"factor shapes {shapes} do not match tensor "
                         f"{tensor.m}x{tensor.n}x{tensor.t}")
    if len({sh[1] for sh in shapes}) != 1:
        raise ValueError("factor ranks differ")


def predict_entry(model: TfModel, i: int, j: int, k: int) -> float:
    """Reconstructed value sum_l U[i,l] * S[j,l] * T[k,l]."""
    u, s, t = model.user_factors, model.service_factors, model.time_factors
    if not (0 <= i < u.shape[0] and 0 <= j < s.shape[0] and 0 <= k < t.shape[0]):
        raise IndexError(f"index ({i}, {j}, {k}) out of range")
    return float(np.sum(u[i] * s[j] * t[k]))


def predict_entries(model: TfModel, triples) -> np.ndarray:
    """Vectorized reconstruction for (user, service, time) index triples."""
    triples = np.asarray(triples, dtype=np.intp)
    if triples.size == 0:
        return np.zeros(0, dtype=float)
    if triples.ndim != 2 or triples.shape[1] != 3:
        raise ValueError("triples must be an (N, 3) array of indices")
    u, s, t = model.user_factors, model.service_factors, model.time_factors
    for col, bound, what in ((0, u.shape[0], "user"), (1, s.shape[0], "service"), (2, t.shape[0], "time")):
        if triples[:, col].min() < 0 or triples[:, col].max() >= bound:
            raise IndexError(f"{what} index out of range")
    return np.einsum("ij,ij,ij->i", u[triples[:, 0]], s[triples[:, 1]], t[triples[:, 2]])


def _predictions(tensor: ObservationTensor, model: TfModel) -> np.ndarray:
    out = np.empty(tensor.n_entries)
    step = _block_rows(model.user_factors.shape[1])
    for lo in range(0, tensor.n_entries, step):
        hi = min(lo + step, tensor.n_entries)
        out[lo:hi] = np.einsum(
            "ij,ij,ij->i",
            model.user_factors[tensor.users[lo:hi]],
            model.service_factors[tensor.services[lo:hi]],
            model.time_factors[tensor.times[lo:hi]],
        )
    return out


def objective(tensor: ObservationTensor, model: TfModel, config: TfConfig) -> float:
    """1/2 sum ln(1 + r^2/gamma^2) over observed entries plus L2 regularizers."""
    _check_dims(tensor, model)
    with np.errstate(over="ignore", invalid="ignore"):
        r = tensor.values - _predictions(tensor, model)
        data = 0.5 * float(np.sum(np.log1p((r / config.gamma) ** 2)))
    reg = 0.5 * (
        config.reg_user * float(np.sum(model.user_factors**2))
        + config.reg_service * float(np.sum(model.service_factors**2))
        + config.reg_time * float(np.sum(model.time_factors**2))
    )
    return data + reg


def _mu_update(tensor, model, config, mode: str) -> np.ndarray:
    """One multiplicative sweep of the given mode; returns the new factor matrix."""
    u, s, t = model.user_factors, model.service_factors, model.time_factors
    if mode == "user":
        by, own, reg, keys = tensor.by_user, u, config.reg_user, tensor.users
    elif mode == "service":
        by, own, reg, keys = tensor.by_service, s, config.reg_service, tensor.services
    else:
        by, own, reg, keys = tensor.by_time, t, config.reg_time, tensor.times

    order, _, _ = by
    num = np.zeros_like(own)
    den = np.zeros_like(own)
    step = _block_rows(own.shape[1])
    with np.errstate(over="ignore", invalid="ignore"):
        for lo in range(0, order.size, step):
            idx = order[lo:lo + step]
            u_rows = u[tensor.users[idx]]
            s_rows = s[tensor.services[idx]]
            t_rows = t[tensor.times[idx]]
            pred = np.einsum("ij,ij,ij->i", u_rows, s_rows, t_rows)
            r = tensor.values[idx] - pred
            # The multiplier is invariant to rescaling the per-entry weight, so
            # use gamma^2 / (gamma^2 + r^2) (and scale the regularizer to
            # match): numerator and denominator then stay at the data scale for
            # any gamma, leaving the floor to guard only observation-free rows.
            delta = 1.0 / (1.0 + (r / config.gamma) ** 2)
            if mode == "user":
                rhs = s_rows * t_rows
            elif mode == "service":
                rhs = u_rows * t_rows
            else:
                rhs = u_rows * s_rows
            block_keys = keys[idx]
            starts = np.concatenate(([0], np.flatnonzero(np.diff(block_keys)) + 1))
            ids = block_keys[starts]
            num[ids] += np.add.reduceat((delta * tensor.values[idx])[:, None] * rhs, starts, axis=0)
            den[ids] += np.add.reduceat((delta * pred)[:, None] * rhs, starts, axis=0)

        den = den + (config.gamma**2 * reg) * own
        # Rows with no data and no regularization stay fixed; a negative numerator
        # (possible only with negative observations) is clamped to keep factors >= 0.
        mult = np.maximum(num, 0.0) / np.maximum(den, config.denom_floor)
        mult[(den == 0.0) & (num == 0.0)] = 1.0
        return own * mult


def mu_sweep_u(tensor: ObservationTensor, model: TfModel, config: TfConfig) -> np.ndarray:
    _check_dims(tensor, model)
    return _mu_update(tensor, model, config, "user")


def mu_sweep_s(tensor: ObservationTensor, model: TfModel, config: TfConfig) -> np.ndarray:
    _check_dims(tensor, model)
    return _mu_update(tensor, model, config, "service")


def mu_sweep_t(tensor: ObservationTensor, model: TfModel, config: TfConfig) -> np.ndarray:
    _check_dims(tensor, model)
    return _mu_update(tensor, model, config, "time")


def fit(tensor: ObservationTensor, config: TfConfig) -> TfModel:
    """Alternate user/service/time sweeps until the objective change stalls."""
    if tensor.n_entries == 0:
        raise ValueError("cannot fit an empty observation tensor")
    rng = np.random.default_rng(config.seed)
    lo = config.denom_floor
    model = TfModel(
        rng.uniform(lo, config.init_scale, size=(tensor.m, config.rank)),
        rng.uniform(lo, config.init_scale, size=(tensor.n, config.rank)),
        rng.uniform(lo, config.init_scale, size=(tensor.t, config.rank)),
    )

    prev = objective(tensor, model, config)
    sweeps = 0
    for sweep in range(1, config.max_iters + 1):
        model.user_factors = mu_sweep_u(tensor, model, config)
        model.service_factors = mu_sweep_s(tensor, model, config)
        model.time_factors = mu_sweep_t(tensor, model, config)

        cur = objective(tensor, model, config)
        sweeps = sweep
        if not np.isfinite(cur):
            raise DivergenceError(f"objective became non-finite at sweep {sweep}")
        if abs(prev - cur) / max(prev, EPS_DIV) < config.rel_tol:
            prev = cur
            break
        prev = cur

    model.iterations_run = sweeps
    model.final_objective = prev
    return model.freeze()
