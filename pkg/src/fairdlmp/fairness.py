"""Jain's fairness index over masked, weighted aggregator allocations.

Suppliers (non-positive allocations) are excluded through a 0/1 mask;
consuming aggregators are weighted by 1 / (price * prosumer count) so
that equal weighted allocations mean power roughly proportional to
prosumer counts. The analytic gradient is the chain-rule derivative of
the masked index at fixed mask and is the module's source of truth
(validated against finite differences in the tests).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DEADBAND = 1e-9


class FairnessError(ValueError):
    pass


class NonsmoothPointError(FairnessError):
    """Allocation sits inside the mask deadband; the index is not differentiable there."""


@dataclass(frozen=True)
class FairnessContext:
    """Mask and weight vectors for one evaluation of the masked index."""

    z: np.ndarray          # 0/1 mask over aggregators, 1 = consumer
    n: np.ndarray          # weights 1/(c_k G_k) on the mask, 0 elsewhere
    sizes: np.ndarray      # prosumer counts G_k
    prices: np.ndarray     # prices c_k the weights were built from
    deadband: float = DEFAULT_DEADBAND

    @property
    def mask_count(self) -> int:
        return int(self.z.sum())

    @classmethod
    def from_allocation(cls, p: np.ndarray, c: np.ndarray, sizes: np.ndarray,
                        deadband: float = DEFAULT_DEADBAND) -> "FairnessContext":
        """Recompute mask and weights from the current allocation and prices."""
        p = np.asarray(p, dtype=float)
        c = np.asarray(c, dtype=float)
        sizes = np.asarray(sizes)
        if (c <= 0).any():
            raise FairnessError("weights need strictly positive prices")
        z = (p > deadband).astype(float)
        n = z / (c * sizes)
        return cls(z=z, n=n, sizes=sizes, prices=c, deadband=deadband)


def jain_scalar(x: np.ndarray) -> float:
    """Plain Jain index (sum x)^2 / (n * sum x^2) over the full vector length."""
    x = np.asarray(x, dtype=float)
    if (x < 0).any():
        raise FairnessError("allocations must be >= 0")
    s2 = float((x * x).sum())
    if s2 == 0.0:
        raise FairnessError("index undefined for an all-zero vector")
    s = float(x.sum())
    return s * s / (len(x) * s2)


def jain_masked(ctx: FairnessContext, p: np.ndarray) -> float:
    """Masked weighted index: (n.p)^2 / (|z| * ||n o p||^2)."""
    m = ctx.mask_count
    if m == 0:
        raise FairnessError("empty mask: no consuming aggregator")
    y = ctx.n * np.asarray(p, dtype=float)
    s = float(y.sum())
    s2 = float((y * y).sum())
    return s * s / (m * s2)


def jain_gradient(ctx: FairnessContext, p: np.ndarray, strict: bool = True) -> np.ndarray:
    """Gradient of jain_masked w.r.t. p at fixed mask; masked components are 0.

    With y = n o p, s = sum(y), q = sum(y^2):
        dJ/dp_k = (2 n_k / (|z| q)) * (s - s^2 * y_k / q).
    strict=True raises at points inside the mask deadband, where the
    mask itself can flip and the index is nonsmooth.
    """
    p = np.asarray(p, dtype=float)
    m = ctx.mask_count
    if m == 0:
        raise FairnessError("empty mask: no consuming aggregator")
    if strict and (np.abs(p) <= ctx.deadband).any():
        raise NonsmoothPointError("allocation inside mask deadband; gradient undefined")
    y = ctx.n * p
    s = float(y.sum())
    q = float((y * y).sum())
    grad = (2.0 * ctx.n / (m * q)) * (s - (s * s / q) * y)
    return np.where(ctx.z > 0, grad, 0.0)
