"""Synthetic domain-shift benchmark data and the feature-file format.

The generator draws class-conditional Gaussians for the source domain and
applies a per-class rigid-motion-plus-scale transform for the target: the
target mean is offset, and the target covariance is the source covariance
rotated and rescaled.  Those three knobs (mean offset, scale, orientation)
are exactly the kinds of discrepancy the scatter-alignment loss is built to
absorb, so the benchmark exposes the method's benefit at desk scale.

Feature files are plain UTF-8 CSV with header

    domain,split,label,f0,...,f{d-1}

domain in {source, target}, split in {train, test}, label a 0-based int.
Floats are written with shortest round-trip formatting, so save -> load is
value-exact and repeated runs are byte-identical.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, EmptyDatasetError, ParseError

DOMAIN_TAGS = ("source", "target")
SPLIT_TAGS = ("train", "test")


@dataclass
class LabeledDataset:
    """Inputs (dim x N, columns are samples) with integer labels."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[1],):
            raise ArgumentError(
                f"bad dataset shapes: x {self.x.shape}, y {self.y.shape}"
            )

    @property
    def dim(self) -> int:
        return self.x.shape[0]

    @property
    def num_samples(self) -> int:
        return self.x.shape[1]


@dataclass
class DomainSplits:
    """The four benchmark splits."""

    src_train: LabeledDataset
    src_test: LabeledDataset
    tgt_train: LabeledDataset
    tgt_test: LabeledDataset

    def blocks(self):
        yield "source", "train", self.src_train
        yield "source", "test", self.src_test
        yield "target", "train", self.tgt_train
        yield "target", "test", self.tgt_test


def rotation_matrix(dim: int, angle: float, plane: tuple[int, int] = (0, 1)) -> np.ndarray:
    """Rotation by `angle` radians in one coordinate plane of R^dim."""
    i, j = plane
    rot = np.eye(dim)
    c, s = math.cos(angle), math.sin(angle)
    rot[i, i] = rot[j, j] = c
    rot[i, j] = -s
    rot[j, i] = s
    return rot


@dataclass
class ShiftSpec:
    """Parameters of one synthetic domain-shift benchmark instance.

    Per class c the source distribution is N(means[c], covs[c]); the target
    distribution is N(means[c] + mean_offsets[c], R S R^T * scale) with R the
    rotation by `rotation_rad[c]`.  Rotations beyond dim 2 act in a fixed
    alternating pair of coordinate planes.
    """

    num_classes: int
    input_dim: int
    means: np.ndarray
    covs: np.ndarray
    mean_offsets: np.ndarray
    rotation_rad: np.ndarray
    scale: float = 1.0
    n_src_train: int = 20
    n_tgt_train: int = 3
    n_test: int = 200
    seed: int = 0

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.covs = np.asarray(self.covs, dtype=np.float64)
        self.mean_offsets = np.asarray(self.mean_offsets, dtype=np.float64)
        self.rotation_rad = np.asarray(self.rotation_rad, dtype=np.float64)
        c, d = self.num_classes, self.input_dim
        if c < 1 or d < 1:
            raise ArgumentError("need at least one class and one dimension")
        if (self.rotation_rad < 0).any() or (self.rotation_rad >= math.pi).any():
            raise ArgumentError("rotation angles must lie in [0, pi)")
        if not np.isfinite(self.mean_offsets).all() or not np.isfinite(self.scale):
            raise ArgumentError("target transform parameters must be finite")
        if self.scale <= 0:
            raise ArgumentError(f"scale must be positive, got {self.scale}")
        expected = {
            "means": (c, d),
            "covs": (c, d, d),
            "mean_offsets": (c, d),
            "rotation_rad": (c,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ArgumentError(f"{name} must have shape {shape}")
        if min(self.n_src_train, self.n_tgt_train, self.n_test) < 1:
            raise ArgumentError("sample counts must be positive")
        for k in range(c):
            cov = self.covs[k]
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise ArgumentError(f"covariance of class {k} is not symmetric")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError as exc:
                raise ArgumentError(f"covariance of class {k} is not positive definite") from exc

    def target_cov(self, class_id: int) -> np.ndarray:
        d = self.input_dim
        if d == 1:
            return self.covs[class_id] * self.scale
        planes = [(i, i + 1) for i in range(0, d - 1, 2)]
        rot = np.eye(d)
        for plane in planes:
            rot = rot @ rotation_matrix(d, float(self.rotation_rad[class_id]), plane)
        return self.scale * (rot @ self.covs[class_id] @ rot.T)


RING_RADIUS = 1.8
ELLIPSE_LONG = 2.2
ELLIPSE_SHORT = 0.3


def default_benchmark_spec(
    num_classes: int = 3,
    input_dim: int = 2,
    rotation_deg: float = 30.0,
    mean_shift: float = 1.0,
    scale: float = 1.0,
    n_src_train: int = 20,
    n_tgt_train: int = 3,
    n_test: int = 200,
    seed: int = 0,
) -> ShiftSpec:
    """The desk-scale benchmark geometry: oriented Gaussian blobs on a ring.

    Class means sit on a circle of radius 1.8; each class is an elongated
    ellipse (axes 2.2 / 0.3) whose long-axis orientation advances by
    180/num_classes degrees per class, so orientation carries class
    information beyond the means.  The target domain rotates each covariance
    by `rotation_deg` and offsets each mean by `mean_shift` along the
    class's tangential direction, swinging every cloud toward its
    neighbor's sector.
    """
    c, d = num_classes, input_dim
    means = np.zeros((c, d))
    covs = np.zeros((c, d, d))
    offsets = np.zeros((c, d))
    axes = np.full(d, ELLIPSE_SHORT**2)
    axes[0] = ELLIPSE_LONG**2
    for k in range(c):
        angle = 2.0 * math.pi * k / c + math.pi / 2.0
        means[k, 0] = RING_RADIUS * math.cos(angle)
        if d >= 2:
            means[k, 1] = RING_RADIUS * math.sin(angle)
        cov = np.diag(axes.copy())
        if d >= 2:
            orient = rotation_matrix(d, (math.pi / c * k) % math.pi)
            cov = orient @ cov @ orient.T
        covs[k] = cov
        # Tangential offset: perpendicular to the class's radial direction.
        offsets[k, 0] = -mean_shift * math.sin(angle)
        if d >= 2:
            offsets[k, 1] = mean_shift * math.cos(angle)
        else:
            offsets[k, 0] = mean_shift
    return ShiftSpec(
        num_classes=c,
        input_dim=d,
        means=means,
        covs=covs,
        mean_offsets=offsets,
        rotation_rad=np.full(c, math.radians(rotation_deg) % math.pi),
        scale=scale,
        n_src_train=n_src_train,
        n_tgt_train=n_tgt_train,
        n_test=n_test,
        seed=seed,
    )


def _draw_block(rng, mean, cov, count):
    chol = np.linalg.cholesky(cov)
    return mean[:, None] + chol @ rng.standard_normal((mean.size, count))


def generate(spec: ShiftSpec) -> DomainSplits:
    """Sample the four splits; deterministic for a fixed spec (incl. seed).

    Draw order is fixed (class-major, then source train/test, target
    train/test) so the stream of random numbers is stable.
    """
    rng = np.random.default_rng(spec.seed)
    per_split = {key: ([], []) for key in ("st", "se", "tt", "te")}
    counts = {
        "st": spec.n_src_train,
        "se": spec.n_test,
        "tt": spec.n_tgt_train,
        "te": spec.n_test,
    }
    for class_id in range(spec.num_classes):
        src_mean = spec.means[class_id]
        src_cov = spec.covs[class_id]
        tgt_mean = src_mean + spec.mean_offsets[class_id]
        tgt_cov = spec.target_cov(class_id)
        for key, mean, cov in (
            ("st", src_mean, src_cov),
            ("se", src_mean, src_cov),
            ("tt", tgt_mean, tgt_cov),
            ("te", tgt_mean, tgt_cov),
        ):
            xs, ys = per_split[key]
            xs.append(_draw_block(rng, mean, cov, counts[key]))
            ys.append(np.full(counts[key], class_id, dtype=np.int64))

    def build(key):
        xs, ys = per_split[key]
        return LabeledDataset(np.concatenate(xs, axis=1), np.concatenate(ys))

    return DomainSplits(
        src_train=build("st"),
        src_test=build("se"),
        tgt_train=build("tt"),
        tgt_test=build("te"),
    )


def _format_row(domain, split, label, column) -> str:
    feats = ",".join(repr(float(v)) for v in column)
    return f"{domain},{split},{label},{feats}"


def save_features(path, splits: DomainSplits) -> None:
    """Write the CSV feature file (LF endings, trailing newline)."""
    dim = splits.src_train.dim
    header = "domain,split,label," + ",".join(f"f{i}" for i in range(dim))
    lines = [header]
    for domain, split, dataset in splits.blocks():
        for col in range(dataset.num_samples):
            lines.append(_format_row(domain, split, int(dataset.y[col]), dataset.x[:, col]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_features(path) -> DomainSplits:
    """Parse a CSV feature file back into the four splits.

    Raises ParseError (with the 1-based line number) on any malformed row
    and EmptyDatasetError when no data rows are present.
    """
    with open(path, "r", encoding="utf-8") as fh:
        return _parse_features(fh)


def _parse_features(fh: io.TextIOBase) -> DomainSplits:
    header = fh.readline()
    if not header:
        raise EmptyDatasetError("feature file is empty")
    columns = header.rstrip("\n").rstrip("\r").split(",")
    if columns[:3] != ["domain", "split", "label"]:
        raise ParseError(f"bad header, expected domain,split,label,f0,..., got {header.strip()!r}", line=1)
    dim = len(columns) - 3
    if dim < 1 or columns[3:] != [f"f{i}" for i in range(dim)]:
        raise ParseError("feature columns must be named f0..f{d-1}", line=1)

    buckets: dict[tuple[str, str], tuple[list, list]] = {
        (d, s): ([], []) for d in DOMAIN_TAGS for s in SPLIT_TAGS
    }
    count = 0
    for lineno, raw in enumerate(fh, start=2):
        stripped = raw.rstrip("\n").rstrip("\r")
        if not stripped:
            continue
        parts = stripped.split(",")
        if len(parts) != 3 + dim:
            raise ParseError(
                f"expected {3 + dim} fields, found {len(parts)}", line=lineno
            )
        domain, split, label_text = parts[0], parts[1], parts[2]
        if domain not in DOMAIN_TAGS:
            raise ParseError(f"unknown domain tag {domain!r}", line=lineno)
        if split not in SPLIT_TAGS:
            raise ParseError(f"unknown split tag {split!r}", line=lineno)
        try:
            label = int(label_text)
        except ValueError:
            raise ParseError(f"label {label_text!r} is not an integer", line=lineno) from None
        if label < 0:
            raise ParseError(f"label must be >= 0, got {label}", line=lineno)
        try:
            values = [float(v) for v in parts[3:]]
        except ValueError:
            raise ParseError("non-numeric feature value", line=lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError("non-finite feature value", line=lineno)
        xs, ys = buckets[(domain, split)]
        xs.append(values)
        ys.append(label)
        count += 1
    if count == 0:
        raise EmptyDatasetError("feature file has a header but no data rows")

    def build(domain, split):
        xs, ys = buckets[(domain, split)]
        if not xs:
            return LabeledDataset(np.zeros((dim, 0)), np.zeros(0, dtype=np.int64))
        return LabeledDataset(np.asarray(xs).T, np.asarray(ys, dtype=np.int64))

    return DomainSplits(
        src_train=build("source", "train"),
        src_test=build("source", "test"),
        tgt_train=build("target", "train"),
        tgt_test=build("target", "test"),
    )
