"""Residual loss kernels for the three supported M-estimators.

All kernels are pure scalar functions of a residual r, evaluated in double
precision.  They also accept numpy arrays and broadcast elementwise, which is
what the solvers rely on.  The public functions reject non-finite residuals;
the solvers use the underscored raw variants so that an overflow during a
divergent fit surfaces as a non-finite objective instead of a kernel error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

L2 = "l2"
L1 = "l1"
CAUCHY = "cauchy"

_KINDS = (L2, L1, CAUCHY)


@dataclass(frozen=True)
class Loss:
    """Which M-estimator weighs residuals; ``gamma`` is the Cauchy scale."""

    kind: str
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}, expected one of {_KINDS}")
        if self.kind == CAUCHY and not self.gamma > 0:
            raise ValueError(f"cauchy loss needs gamma > 0, got {self.gamma}")

    @classmethod
    def l2(cls) -> "Loss":
        return cls(L2)

    @classmethod
    def l1(cls) -> "Loss":
        return cls(L1)

    @classmethod
    def cauchy(cls, gamma: float) -> "Loss":
        return cls(CAUCHY, float(gamma))


def _check_finite(r):
    if not np.all(np.isfinite(r)):
        raise ValueError("residual must be finite")


def _shape_out(out):
    return out if out.ndim else float(out)


def _loss_raw(loss: Loss, r: np.ndarray) -> np.ndarray:
    if loss.kind == L2:
        return 0.5 * r * r
    if loss.kind == L1:
        return np.abs(r)
    return np.log1p((r / loss.gamma) ** 2)


def _term_raw(loss: Loss, r: np.ndarray) -> np.ndarray:
    if loss.kind == L2:
        return r * r
    if loss.kind == L1:
        return 2.0 * np.abs(r)
    return np.log1p((r / loss.gamma) ** 2)


def _pull_raw(loss: Loss, r: np.ndarray) -> np.ndarray:
    if loss.kind == L2:
        return r
    if loss.kind == L1:
        return np.sign(r)
    return r / (loss.gamma**2 + r * r)


def loss_value(loss: Loss, r):
    """Per-residual loss g(r): l2 -> r^2/2, l1 -> |r|, cauchy -> ln(1 + r^2/g^2)."""
    _check_finite(r)
    return _shape_out(_loss_raw(loss, np.asarray(r, dtype=float)))


def influence(loss: Loss, r):
    """Derivative g'(r); the l1 subgradient at 0 is taken to be 0."""
    _check_finite(r)
    r = np.asarray(r, dtype=float)
    if loss.kind == L2:
        out = r + 0.0
    elif loss.kind == L1:
        out = np.sign(r)
    else:
        out = 2.0 * r / (loss.gamma**2 + r * r)
    return _shape_out(out)


def cauchy_weight(gamma: float, r):
    """Reweighting factor 1 / (gamma^2 + r^2) used by the multiplicative updates."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    _check_finite(r)
    r = np.asarray(r, dtype=float)
    return _shape_out(1.0 / (gamma * gamma + r * r))


def objective_term(loss: Loss, r):
    """Summand of the data term before the shared 1/2 prefactor.

    l2 -> r^2 and l1 -> 2|r| so that 1/2 * sum reproduces the plain squared
    and absolute-error objectives; cauchy keeps ln(1 + r^2/g^2).
    """
    _check_finite(r)
    return _shape_out(_term_raw(loss, np.asarray(r, dtype=float)))


def residual_pull(loss: Loss, r):
    """d/dr of (1/2) * objective_term: the per-entry factor in the gradients.

    l2 -> r, l1 -> sign(r), cauchy -> r / (gamma^2 + r^2).
    """
    _check_finite(r)
    return _shape_out(_pull_raw(loss, np.asarray(r, dtype=float)) + 0.0)
