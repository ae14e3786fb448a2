"""Centered polynomial Gram matrices and implicit tensor distances.

The squared Frobenius distance between two order-r scatter tensors never has
to touch the d**r coefficient space: with K, Kbar, Kcross the Gram matrices
of the mean-centered source/target feature columns,

    ||X - Y||_F^2 = 1/N^2   * sum(K     ** r)
                  + 1/N*^2  * sum(Kbar  ** r)
                  - 2/(N N*) * sum(Kcross ** r)

because <x, y>^r equals the inner product of the r-fold outer products of
x and y.  The Grams are stored unpowered so one construction serves every
order r' = 2..r of the multi-order loss; the elementwise power is applied
on read.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ShapeError
from .tensors import FeatureMatrix, clamp_negative, unique_coeff_count

COST_MODES = ("explicit", "kernelized")


def _sym(g: np.ndarray) -> np.ndarray:
    # (G + G.T)/2 is bitwise symmetric, so elementwise powers stay symmetric.
    return (g + g.T) / 2.0


@dataclass(frozen=True)
class KernelBlocks:
    """Unpowered centered Grams for one source/target pair.

    `k_ss[n, m] = <x_n - mu, x_m - mu>`, `k_tt` analogously with the target
    mean, `k_st[n, m] = <x_n - mu, y_m - mu*>`.  Read them through
    `powered_*` to apply the polynomial order.
    """

    k_ss: np.ndarray = field(repr=False)
    k_tt: np.ndarray = field(repr=False)
    k_st: np.ndarray = field(repr=False)
    order: int

    def __post_init__(self):
        n, ns = self.k_st.shape
        if self.k_ss.shape != (n, n) or self.k_tt.shape != (ns, ns):
            raise ShapeError(
                f"inconsistent blocks: k_ss {self.k_ss.shape}, "
                f"k_tt {self.k_tt.shape}, k_st {self.k_st.shape}"
            )
        if self.order < 1:
            raise ArgumentError(f"order must be >= 1, got {self.order}")
        for name in ("k_ss", "k_tt", "k_st"):
            arr = getattr(self, name)
            arr.flags.writeable = False

    @property
    def num_source(self) -> int:
        return self.k_ss.shape[0]

    @property
    def num_target(self) -> int:
        return self.k_tt.shape[0]

    def powered_ss(self, order: int | None = None) -> np.ndarray:
        return self.k_ss ** (self.order if order is None else order)

    def powered_tt(self, order: int | None = None) -> np.ndarray:
        return self.k_tt ** (self.order if order is None else order)

    def powered_st(self, order: int | None = None) -> np.ndarray:
        return self.k_st ** (self.order if order is None else order)


def build_kernel_blocks(src: FeatureMatrix, tgt: FeatureMatrix, r: int) -> KernelBlocks:
    """Centered Grams for a source/target pair, each side centered by its own mean."""
    if src.dim != tgt.dim:
        raise ShapeError(f"dim mismatch: source d={src.dim}, target d={tgt.dim}")
    if r < 1:
        raise ArgumentError(f"order must be >= 1, got {r}")
    xc = src.data - src.data.mean(axis=1, keepdims=True)
    yc = tgt.data - tgt.data.mean(axis=1, keepdims=True)
    return KernelBlocks(
        k_ss=_sym(xc.T @ xc),
        k_tt=_sym(yc.T @ yc),
        k_st=xc.T @ yc,
        order=r,
    )


def kernel_tensor_inner(blocks: KernelBlocks, order: int | None = None) -> float:
    """<X^(r), Y^(r)> evaluated as the normalized sum of the powered cross Gram."""
    n, ns = blocks.num_source, blocks.num_target
    return float(blocks.powered_st(order).sum() / (n * ns))


def kernel_frob_dist_sq_from_blocks(blocks: KernelBlocks, order: int | None = None) -> float:
    """||X^(r) - Y^(r)||_F^2 from prebuilt blocks (reusable across orders)."""
    n, ns = blocks.num_source, blocks.num_target
    value = (
        blocks.powered_ss(order).sum() / (n * n)
        + blocks.powered_tt(order).sum() / (ns * ns)
        - 2.0 * blocks.powered_st(order).sum() / (n * ns)
    )
    return clamp_negative(value)


def kernel_frob_dist_sq(src: FeatureMatrix, tgt: FeatureMatrix, r: int) -> float:
    """Squared Frobenius distance between order-r scatters, tensors never built."""
    return kernel_frob_dist_sq_from_blocks(build_kernel_blocks(src, tgt, r))


def cost_model(d: int, n_src: int, n_tgt: int, r: int, mode: str) -> int:
    """Leading-term operation count for one Frobenius-distance evaluation.

    Explicit route: each of the C(d+r-1, r) unique coefficients costs r-1
    multiplications per sample, accumulated over the N + N* samples, plus one
    pass for the distance itself.  Kernelized route: the three Grams need
    N^2 + N N* + N*^2 centered dot products at 2d operations each; raising
    entries to the r-th power is negligible next to d and is left out.
    """
    if mode not in COST_MODES:
        raise ArgumentError(f"mode must be one of {COST_MODES}, got {mode!r}")
    if min(d, n_src, n_tgt, r) < 1:
        raise ArgumentError("sizes and order must all be >= 1")
    if mode == "explicit":
        coeffs = unique_coeff_count(d, r)
        return (n_src + n_tgt + 1) * coeffs * max(r - 1, 1)
    return 2 * (n_src * n_src + n_src * n_tgt + n_tgt * n_tgt) * d
