"""Two-stream feature extractors: small feed-forward maps plus norm capping.

Each stream is a 2-layer map (input -> hidden -> feature, tanh in between)
standing in for a CNN trunk; source and target streams share an architecture
but own separate parameters.  Emitted feature columns are radially rescaled
onto the ball ||phi||_2^2 <= tau, which is the constraint the joint
objective places on feature vectors.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError
from .tensors import Domain, FeatureMatrix

DEFAULT_HIDDEN_DIM = 32
DEFAULT_FEATURE_DIM = 16


@dataclass
class StreamParams:
    """Weights of one stream: feature = w2 @ tanh(w1 @ x + b1) + b2."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def copy(self) -> "StreamParams":
        return StreamParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class TwoStreamModel:
    """Source/target stream parameters plus the classifier(s) on top.

    `w_star`/`b_star` are present only in dual-classifier mode, where each
    domain gets its own softmax head and `beta_prime` couples the two weight
    matrices.  `tau` caps the squared norm of emitted features.
    """

    theta_src: StreamParams
    theta_tgt: StreamParams
    clf_w: np.ndarray
    clf_b: np.ndarray
    w_star: np.ndarray | None = None
    b_star: np.ndarray | None = None
    lam: float = 1e-4
    lam_star: float = 1e-4
    beta_prime: float = 1e-3
    tau: float = 16.0 * DEFAULT_FEATURE_DIM

    def __post_init__(self):
        if self.theta_src.w1.shape != self.theta_tgt.w1.shape or (
            self.theta_src.w2.shape != self.theta_tgt.w2.shape
        ):
            raise ArgumentError("source and target streams must share an architecture")
        if (self.w_star is None) != (self.b_star is None):
            raise ArgumentError("dual mode needs both w_star and b_star")
        if self.tau <= 0:
            raise ArgumentError(f"tau must be positive, got {self.tau}")

    @property
    def dual(self) -> bool:
        return self.w_star is not None

    @property
    def feature_dim(self) -> int:
        return self.theta_src.w2.shape[0]

    @property
    def num_classes(self) -> int:
        return self.clf_w.shape[1]

    def stream(self, domain: Domain) -> StreamParams:
        return self.theta_src if domain is Domain.SOURCE else self.theta_tgt

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        """Stable (name, array) listing of every trainable array."""
        items = [(f"theta_src.{k}", v) for k, v in self.theta_src.arrays().items()]
        items += [(f"theta_tgt.{k}", v) for k, v in self.theta_tgt.arrays().items()]
        items += [("clf_w", self.clf_w), ("clf_b", self.clf_b)]
        if self.dual:
            items += [("w_star", self.w_star), ("b_star", self.b_star)]
        return items

    def copy(self) -> "TwoStreamModel":
        return copy.deepcopy(self)


def init_stream(rng: np.random.Generator, input_dim: int, hidden_dim: int, feature_dim: int) -> StreamParams:
    # Glorot-style scaling keeps tanh pre-activations in its linear-ish range.
    s1 = np.sqrt(2.0 / (input_dim + hidden_dim))
    s2 = np.sqrt(2.0 / (hidden_dim + feature_dim))
    return StreamParams(
        w1=rng.normal(0.0, s1, size=(hidden_dim, input_dim)),
        b1=np.zeros(hidden_dim),
        w2=rng.normal(0.0, s2, size=(feature_dim, hidden_dim)),
        b2=np.zeros(feature_dim),
    )


def init_two_stream(
    rng: np.random.Generator,
    input_dim: int,
    num_classes: int,
    hidden_dim: int = DEFAULT_HIDDEN_DIM,
    feature_dim: int = DEFAULT_FEATURE_DIM,
    dual: bool = False,
    lam: float = 1e-4,
    lam_star: float = 1e-4,
    beta_prime: float = 1e-3,
    tau: float | None = None,
) -> TwoStreamModel:
    """Fresh model; the target stream starts as a copy of the source stream.

    Mirrors starting both streams from the same pretrained trunk.  RNG
    consumption order is part of the determinism contract: stream first,
    then classifier (then the dual head, if any).
    """
    theta = init_stream(rng, input_dim, hidden_dim, feature_dim)
    clf_w = rng.normal(0.0, 1.0 / np.sqrt(feature_dim), size=(feature_dim, num_classes))
    w_star = b_star = None
    if dual:
        w_star = rng.normal(0.0, 1.0 / np.sqrt(feature_dim), size=(feature_dim, num_classes))
        b_star = np.zeros(num_classes)
    return TwoStreamModel(
        theta_src=theta,
        theta_tgt=theta.copy(),
        clf_w=clf_w,
        clf_b=np.zeros(num_classes),
        w_star=w_star,
        b_star=b_star,
        lam=lam,
        lam_star=lam_star,
        beta_prime=beta_prime,
        tau=(16.0 * feature_dim) if tau is None else tau,
    )


def project_ball(features: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rescale columns with ||phi||^2 > tau onto the ball boundary.

    Returns `(projected, scale, active)`; inactive columns have scale 1.
    """
    norms_sq = np.einsum("dm,dm->m", features, features)
    active = norms_sq > tau
    scale = np.ones_like(norms_sq)
    scale[active] = np.sqrt(tau / norms_sq[active])
    return features * scale, scale, active


def project_ball_backward(
    grad_out: np.ndarray, pre_projection: np.ndarray, scale: np.ndarray, active: np.ndarray
) -> np.ndarray:
    """Chain rule through the radial rescale.

    On active columns the Jacobian is s*(I - u u^T) with u the unit
    pre-projection feature; elsewhere it is the identity.
    """
    grad_in = grad_out.copy()
    if active.any():
        cols = pre_projection[:, active]
        norms = np.linalg.norm(cols, axis=0)
        units = cols / norms
        g = grad_out[:, active]
        grad_in[:, active] = scale[active] * (g - units * np.einsum("dm,dm->m", units, g))
    return grad_in


@dataclass
class StreamForward:
    """Forward pass with the caches backprop needs."""

    features: np.ndarray
    inputs: np.ndarray = field(repr=False)
    hidden: np.ndarray = field(repr=False)
    pre_projection: np.ndarray = field(repr=False)
    scale: np.ndarray = field(repr=False)
    active: np.ndarray = field(repr=False)


def stream_forward(params: StreamParams, inputs: np.ndarray, tau: float) -> StreamForward:
    if not np.isfinite(inputs).all():
        raise ArgumentError("stream inputs contain non-finite values")
    hidden = np.tanh(params.w1 @ inputs + params.b1[:, None])
    pre = params.w2 @ hidden + params.b2[:, None]
    projected, scale, active = project_ball(pre, tau)
    return StreamForward(
        features=projected,
        inputs=inputs,
        hidden=hidden,
        pre_projection=pre,
        scale=scale,
        active=active,
    )


def stream_backward(params: StreamParams, fwd: StreamForward, grad_features: np.ndarray) -> StreamParams:
    """Gradients of a scalar loss w.r.t. the stream parameters.

    `grad_features` is the loss gradient at the (projected) output columns.
    Returned in a StreamParams shell so shapes line up with the model.
    """
    g_pre = project_ball_backward(grad_features, fwd.pre_projection, fwd.scale, fwd.active)
    g_w2 = g_pre @ fwd.hidden.T
    g_b2 = g_pre.sum(axis=1)
    g_hidden = (params.w2.T @ g_pre) * (1.0 - fwd.hidden**2)
    g_w1 = g_hidden @ fwd.inputs.T
    g_b1 = g_hidden.sum(axis=1)
    return StreamParams(w1=g_w1, b1=g_b1, w2=g_w2, b2=g_b2)


def forward_features(model: TwoStreamModel, inputs: np.ndarray, domain: Domain) -> FeatureMatrix:
    """Features emitted by one stream for a block of input columns."""
    fwd = stream_forward(model.stream(domain), np.asarray(inputs, dtype=np.float64), model.tau)
    return FeatureMatrix(fwd.features, domain=domain)
