"""Mean vectors and packed super-symmetric scatter tensors.

The order-r scatter of feature vectors phi_1..phi_N (columns of a d x N
matrix) is the average of the r-fold outer products of the mean-centered
columns.  Order 2 is the biased covariance matrix; order 1 is identically
zero because of the centering.

A scatter tensor is invariant under any permutation of its r indices, so
only the coefficients at nondecreasing multi-indices i_1 <= ... <= i_r are
stored: C(d+r-1, r) numbers instead of d**r.  Inner products over the full
index range are recovered by weighting each stored coefficient with the
number of distinct permutations of its multi-index.
"""

from __future__ import annotations

import enum
import itertools
import math
import os
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ArgumentError, CapacityError, ShapeError

MEM_CAP_ENV = "SOHOT_MEM_CAP"
DEFAULT_MEM_CAP = 2**30

# Coefficient counts must stay addressable as array sizes.
_COUNT_LIMIT = 2**63 - 1


class Domain(enum.Enum):
    SOURCE = "source"
    TARGET = "target"


def memory_cap() -> int:
    """Coefficient cap for explicit tensors (override via SOHOT_MEM_CAP)."""
    raw = os.environ.get(MEM_CAP_ENV)
    if raw is None:
        return DEFAULT_MEM_CAP
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ArgumentError(f"{MEM_CAP_ENV} must be an integer, got {raw!r}") from exc
    if cap < 1:
        raise ArgumentError(f"{MEM_CAP_ENV} must be positive, got {cap}")
    return cap


@dataclass(frozen=True)
class FeatureMatrix:
    """A d x N block of feature vectors from one domain (and one class).

    Columns are samples.  `class_id` is None for mixed batches (e.g. raw
    stream output); per-class statistics always carry the label.
    """

    data: np.ndarray
    class_id: int | None = None
    domain: Domain = Domain.SOURCE

    def __post_init__(self):
        # Always copy: the stored block is frozen, the caller's array is not.
        arr = np.array(self.data, dtype=np.float64, order="C")
        if arr.ndim != 2:
            raise ArgumentError(f"feature matrix must be 2-D, got ndim={arr.ndim}")
        if arr.shape[1] < 1:
            raise ArgumentError("feature matrix needs at least one column")
        if not np.isfinite(arr).all():
            raise ArgumentError("feature matrix contains non-finite entries")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def num_samples(self) -> int:
        return self.data.shape[1]


def unique_coeff_count(d: int, r: int) -> int:
    """Number of unique coefficients of a super-symmetric order-r tensor."""
    if d < 1 or r < 1:
        raise ArgumentError(f"need d >= 1 and r >= 1, got d={d}, r={r}")
    count = math.comb(d + r - 1, r)
    if count > _COUNT_LIMIT:
        raise CapacityError(
            f"coefficient count C({d + r - 1},{r}) = {count} exceeds the "
            f"addressable limit {_COUNT_LIMIT}"
        )
    return count


@lru_cache(maxsize=32)
def packed_layout(d: int, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Multi-index table and permutation multiplicities for (d, r).

    Returns `(indices, multiplicity)` where `indices` has shape (D, r) with
    rows in lexicographic order (matching combinations_with_replacement) and
    `multiplicity[k]` is the number of distinct permutations of row k.
    """
    count = unique_coeff_count(d, r)
    if r == 1:
        idx = np.arange(d, dtype=np.int64)[:, None]
        mult = np.ones(d)
    elif r == 2:
        iu = np.triu_indices(d)
        idx = np.stack(iu, axis=1).astype(np.int64)
        mult = np.where(idx[:, 0] == idx[:, 1], 1.0, 2.0)
    else:
        idx = np.fromiter(
            itertools.chain.from_iterable(
                itertools.combinations_with_replacement(range(d), r)
            ),
            dtype=np.int64,
            count=count * r,
        ).reshape(count, r)
        fact_r = math.factorial(r)
        mult = np.empty(count)
        for k, row in enumerate(idx):
            denom = 1
            run = 1
            for j in range(1, r):
                if row[j] == row[j - 1]:
                    run += 1
                else:
                    denom *= math.factorial(run)
                    run = 1
            denom *= math.factorial(run)
            mult[k] = fact_r // denom
    idx.flags.writeable = False
    mult.flags.writeable = False
    return idx, mult


def packed_position(index: tuple[int, ...], d: int) -> int:
    """Rank of a (sorted) multi-index in the lexicographic packed layout."""
    key = tuple(sorted(index))
    r = len(key)
    rank = 0
    prev = 0
    for pos, value in enumerate(key):
        if not 0 <= value < d:
            raise ArgumentError(f"index {value} out of range for dim {d}")
        remaining = r - pos - 1
        for v in range(prev, value):
            # completions: nondecreasing tails of length `remaining` over {v..d-1}
            rank += math.comb((d - v) + remaining - 1, remaining)
        prev = value
    return rank


@dataclass(frozen=True)
class ScatterTensor:
    """Packed super-symmetric order-r scatter tensor with its mean vector."""

    order: int
    dim: int
    coeffs: np.ndarray = field(repr=False)
    mean: np.ndarray = field(repr=False)

    def __post_init__(self):
        expected = unique_coeff_count(self.dim, self.order)
        if self.coeffs.shape != (expected,):
            raise ShapeError(
                f"packed length {self.coeffs.shape} does not match the "
                f"required ({expected},) for d={self.dim}, r={self.order}"
            )
        if self.mean.shape != (self.dim,):
            raise ShapeError(f"mean must have shape ({self.dim},)")
        for name in ("coeffs", "mean"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def value_at(self, index: tuple[int, ...]) -> float:
        """Tensor entry at any index tuple (permutation-invariant by layout)."""
        if len(index) != self.order:
            raise ShapeError(f"index tuple must have length {self.order}")
        return float(self.coeffs[packed_position(index, self.dim)])

    def slice_matrix(self, fixed: tuple[int, ...] = ()) -> np.ndarray:
        """The d x d slice X[:, :, fixed...] as a dense matrix."""
        if len(fixed) != self.order - 2:
            raise ShapeError(f"need {self.order - 2} trailing indices, got {len(fixed)}")
        out = np.empty((self.dim, self.dim))
        for i in range(self.dim):
            for j in range(i, self.dim):
                out[i, j] = out[j, i] = self.value_at((i, j) + fixed)
        return out

    def frob_norm_sq(self) -> float:
        return tensor_inner(self, self)


def compute_mean(features: FeatureMatrix) -> np.ndarray:
    """Column average of the feature matrix."""
    return features.data.mean(axis=1)


def compute_scatter(features: FeatureMatrix, r: int, mem_cap: int | None = None) -> ScatterTensor:
    """Order-r scatter tensor of the (mean-centered) feature columns.

    Parameters
    ----------
    features : FeatureMatrix
        d x N block; N >= 1.
    r : int
        Tensor order, r >= 1.  r = 1 yields the all-zero tensor.
    mem_cap : int, optional
        Coefficient budget; defaults to `memory_cap()`.

    Raises
    ------
    CapacityError
        If the packed tensor needs more than `mem_cap` coefficients.
    """
    if r < 1:
        raise ArgumentError(f"order must be >= 1, got {r}")
    d = features.dim
    count = unique_coeff_count(d, r)
    cap = memory_cap() if mem_cap is None else mem_cap
    if count > cap:
        raise CapacityError(
            f"explicit order-{r} tensor over dim {d} needs {count} coefficients, "
            f"above the cap of {cap}"
        )
    mu = compute_mean(features)
    if r == 1:
        # Centering makes the first-order tensor vanish identically; return
        # the exact zero rather than summation dust.
        return ScatterTensor(order=1, dim=d, coeffs=np.zeros(count), mean=mu)
    centered = features.data - mu[:, None]
    if r == 2:
        # Order 2 is the covariance matrix; pack its upper triangle.
        cov = centered @ centered.T / features.num_samples
        iu = np.triu_indices(d)
        coeffs = np.ascontiguousarray(cov[iu])
        return ScatterTensor(order=2, dim=d, coeffs=coeffs, mean=mu)
    idx, _ = packed_layout(d, r)
    coeffs = np.zeros(count)
    # One sample at a time keeps peak memory at O(D) rather than O(D*N).
    for n in range(features.num_samples):
        z = centered[:, n]
        term = z[idx[:, 0]].copy()
        for j in range(1, r):
            term *= z[idx[:, j]]
        coeffs += term
    coeffs /= features.num_samples
    return ScatterTensor(order=r, dim=d, coeffs=coeffs, mean=mu)


def _check_compatible(a: ScatterTensor, b: ScatterTensor):
    if a.order != b.order or a.dim != b.dim:
        raise ShapeError(
            f"tensor mismatch: (r={a.order}, d={a.dim}) vs (r={b.order}, d={b.dim})"
        )


def tensor_inner(a: ScatterTensor, b: ScatterTensor) -> float:
    """Full inner product: sum over all d**r index tuples of entry products."""
    _check_compatible(a, b)
    _, mult = packed_layout(a.dim, a.order)
    # mult * (a*b) rather than (mult*a) * b: elementwise products commute
    # bitwise, making the result exactly symmetric in its arguments.
    return float(np.dot(mult, a.coeffs * b.coeffs))


def clamp_negative(value: float) -> float:
    """Zero out the tiny negatives that cancellation leaves in squared norms."""
    return 0.0 if value < 0.0 else value


def tensor_frob_dist_sq(a: ScatterTensor, b: ScatterTensor) -> float:
    """Squared Frobenius distance via <a,a> - 2<a,b> + <b,b>."""
    _check_compatible(a, b)
    # (aa + bb) first: addition commutes bitwise, so swapping the arguments
    # returns the identical float.
    value = (tensor_inner(a, a) + tensor_inner(b, b)) - 2.0 * tensor_inner(a, b)
    return clamp_negative(value)
