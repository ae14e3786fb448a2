"""Central finite-difference verification of every analytic gradient block.

Each named block pairs a closed-form gradient with a value-only function of
the same quantity; the check perturbs one coordinate at a time with a
central difference and reports the worst relative deviation over a batch of
random instances.  The value functions never share code with the gradient
formulas they certify (explicit tensor distances check the covariance form,
kernel distances check the kernelized form, and so on).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .losses import (
    AlignmentConfig,
    Batch,
    alignment_loss_weighted,
    full_objective,
    grad_explicit_cov_align,
    grad_kernelized_align,
    grad_mean_align,
    grad_weights,
    softmax_loss_and_grad,
)
from .kernels import kernel_frob_dist_sq
from .streams import init_two_stream, stream_forward
from .tensors import FeatureMatrix, compute_scatter, tensor_frob_dist_sq

DEFAULT_STEP = 1e-5


def fd_wrt_array(func: Callable[[], float], arr: np.ndarray, h: float = DEFAULT_STEP) -> np.ndarray:
    """Central finite differences of `func()` w.r.t. `arr`, perturbed in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        up = func()
        flat[i] = saved - h
        down = func()
        flat[i] = saved
        out[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst-coordinate deviation, scaled by the larger gradient magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = float(np.max(np.abs(analytic - numeric))) if analytic.size else 0.0
    denom = max(
        float(np.max(np.abs(analytic))) if analytic.size else 0.0,
        float(np.max(np.abs(numeric))) if numeric.size else 0.0,
    )
    if denom < 1e-12:
        return diff
    return diff / denom


@dataclass(frozen=True)
class BlockReport:
    name: str
    max_rel_err: float
    instances: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_err <= tol


def _random_pair(rng, d=None, n=None, ns=None):
    d = d or int(rng.integers(3, 7))
    n = n or int(rng.integers(3, 9))
    ns = ns or int(rng.integers(3, 9))
    return rng.normal(size=(d, n)), rng.normal(size=(d, ns))


def _check_explicit_cov(rng, h):
    x, y = _random_pair(rng)

    def dist():
        return tensor_frob_dist_sq(
            compute_scatter(FeatureMatrix(x), 2), compute_scatter(FeatureMatrix(y), 2)
        )

    g_src, g_tgt = grad_explicit_cov_align(FeatureMatrix(x), FeatureMatrix(y))
    return max(
        relative_error(g_src, fd_wrt_array(dist, x, h)),
        relative_error(g_tgt, fd_wrt_array(dist, y, h)),
    )


def _check_mean(rng, h):
    x, y = _random_pair(rng)

    def dist():
        return float(np.sum((x.mean(axis=1) - y.mean(axis=1)) ** 2))

    g_src, g_tgt = grad_mean_align(FeatureMatrix(x), FeatureMatrix(y))
    return max(
        relative_error(g_src, fd_wrt_array(dist, x, h)),
        relative_error(g_tgt, fd_wrt_array(dist, y, h)),
    )


def _check_kernelized(rng, h, order):
    x, y = _random_pair(rng)

    def dist():
        return kernel_frob_dist_sq(FeatureMatrix(x), FeatureMatrix(y), order)

    g_src, g_tgt = grad_kernelized_align(FeatureMatrix(x), FeatureMatrix(y), order)
    return max(
        relative_error(g_src, fd_wrt_array(dist, x, h)),
        relative_error(g_tgt, fd_wrt_array(dist, y, h)),
    )


def _random_groups(rng, num_classes, d):
    src, tgt = {}, {}
    for c in range(num_classes):
        x, y = _random_pair(rng, d=d)
        src[c] = FeatureMatrix(x, class_id=c)
        tgt[c] = FeatureMatrix(y, class_id=c)
    return src, tgt


def _check_weights(rng, h, which):
    num_classes = int(rng.integers(2, 5))
    max_order = int(rng.integers(2, 5))
    src, tgt = _random_groups(rng, num_classes, d=4)
    zeta = rng.uniform(0.2, 2.0, size=(max_order - 1, num_classes))
    zeta_bar = rng.uniform(0.2, 2.0, size=num_classes)

    def make_cfg(z, zb):
        return AlignmentConfig(
            num_classes=num_classes, sigma1=0.7, sigma2=1.3, alpha1=0.4, alpha2=0.9,
            max_order=max_order, weighted=True, zeta=z.copy(), zeta_bar=zb.copy(),
        )

    def value():
        terms = alignment_loss_weighted(src, tgt, make_cfg(zeta, zeta_bar))
        return terms.scatter_align + terms.mean_align + terms.weight_reg

    cfg = make_cfg(zeta, zeta_bar)
    terms = alignment_loss_weighted(src, tgt, cfg)
    g_zeta, g_zeta_bar = grad_weights(cfg, terms.scatter_dists, terms.mean_dists)
    if which == "zeta":
        return relative_error(g_zeta, fd_wrt_array(value, zeta, h))
    return relative_error(g_zeta_bar, fd_wrt_array(value, zeta_bar, h))


def _check_softmax(rng, h):
    d = int(rng.integers(3, 6))
    num_classes = int(rng.integers(2, 5))
    m = int(rng.integers(3, 9))
    w = rng.normal(size=(d, num_classes))
    b = rng.normal(size=num_classes)
    feats = rng.normal(size=(d, m))
    labels = rng.integers(0, num_classes, size=m)

    def value():
        return softmax_loss_and_grad(w, b, feats, labels)[0]

    _, g_w, g_b, g_f = softmax_loss_and_grad(w, b, feats, labels)
    return max(
        relative_error(g_w, fd_wrt_array(value, w, h)),
        relative_error(g_b, fd_wrt_array(value, b, h)),
        relative_error(g_f, fd_wrt_array(value, feats, h)),
    )


def _random_model_instance(rng):
    """Small model + batch with the norm cap active on some feature columns.

    The projection is non-smooth exactly on the ball surface, so instances
    whose features sit within 1e-3 of it are redrawn.
    """
    num_classes = 3
    input_dim = 3
    for _ in range(50):
        model = init_two_stream(
            rng, input_dim, num_classes, hidden_dim=5, feature_dim=4,
            lam=1e-3, tau=1.0,
        )
        # Non-zero biases so bias gradients are exercised away from zero.
        for theta in (model.theta_src, model.theta_tgt):
            theta.b1 += rng.normal(scale=0.3, size=theta.b1.shape)
            theta.b2 += rng.normal(scale=0.3, size=theta.b2.shape)
        batch = Batch(
            src_x=rng.normal(scale=1.5, size=(input_dim, 3 * num_classes)),
            src_y=np.repeat(np.arange(num_classes), 3),
            tgt_x=rng.normal(scale=1.5, size=(input_dim, 2 * num_classes)),
            tgt_y=np.repeat(np.arange(num_classes), 2),
        )
        cfg = AlignmentConfig(
            num_classes=num_classes, sigma1=0.5, sigma2=0.8, alpha1=0.2, alpha2=0.3,
            max_order=3, weighted=True,
            zeta=rng.uniform(0.5, 1.5, size=(2, num_classes)),
            zeta_bar=rng.uniform(0.5, 1.5, size=num_classes),
        )
        margins = []
        active = []
        for theta, x in ((model.theta_src, batch.src_x), (model.theta_tgt, batch.tgt_x)):
            fwd = stream_forward(theta, x, model.tau)
            norms_sq = np.einsum("dm,dm->m", fwd.pre_projection, fwd.pre_projection)
            margins.append(np.min(np.abs(norms_sq - model.tau)))
            active.append(bool(fwd.active.any()))
        if min(margins) > 1e-3 and all(active):
            return model, batch, cfg
    raise RuntimeError("could not draw a projection-safe gradcheck instance")  # pragma: no cover


def _check_stream(rng, h, side):
    model, batch, cfg = _random_model_instance(rng)

    def value():
        return full_objective(model, batch, cfg)[0].total

    _, grads = full_objective(model, batch, cfg)
    theta = model.theta_src if side == "source" else model.theta_tgt
    g_theta = grads.theta_src if side == "source" else grads.theta_tgt
    worst = 0.0
    for name, arr in theta.arrays().items():
        fd = fd_wrt_array(value, arr, h)
        worst = max(worst, relative_error(g_theta.arrays()[name], fd))
    return worst


def _check_classifier(rng, h):
    model, batch, cfg = _random_model_instance(rng)

    def value():
        return full_objective(model, batch, cfg)[0].total

    _, grads = full_objective(model, batch, cfg)
    return max(
        relative_error(grads.clf_w, fd_wrt_array(value, model.clf_w, h)),
        relative_error(grads.clf_b, fd_wrt_array(value, model.clf_b, h)),
    )


def run_gradcheck(
    seed: int = 0,
    orders: tuple[int, ...] = (2, 3, 4),
    instances: int = 20,
    h: float = DEFAULT_STEP,
    stream_instances: int | None = None,
) -> list[BlockReport]:
    """Evaluate every gradient block; returns one report row per block.

    `stream_instances` caps the (much slower) whole-model blocks; it
    defaults to `instances`.
    """
    rng = np.random.default_rng(seed)
    if stream_instances is None:
        stream_instances = instances
    blocks: list[tuple[str, Callable, int]] = [
        ("explicit_cov_grad", _check_explicit_cov, instances),
        ("mean_grad", _check_mean, instances),
    ]
    blocks += [
        (f"kernelized_grad_r{order}", lambda rng, h, o=order: _check_kernelized(rng, h, o), instances)
        for order in orders
    ]
    blocks += [
        ("weight_grad_zeta", lambda rng, h: _check_weights(rng, h, "zeta"), instances),
        ("weight_grad_zeta_bar", lambda rng, h: _check_weights(rng, h, "zeta_bar"), instances),
        ("softmax_grad", _check_softmax, instances),
        ("stream_grad_source", lambda rng, h: _check_stream(rng, h, "source"), stream_instances),
        ("stream_grad_target", lambda rng, h: _check_stream(rng, h, "target"), stream_instances),
        ("classifier_grad", _check_classifier, stream_instances),
    ]
    reports = []
    for name, check, count in blocks:
        worst = 0.0
        for _ in range(count):
            worst = max(worst, check(rng, h))
        reports.append(BlockReport(name=name, max_rel_err=worst, instances=count))
    return reports
