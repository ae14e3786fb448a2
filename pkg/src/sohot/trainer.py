"""Two-stream training loop, evaluation, checkpoints, and metric logs.

Training minimizes the joint objective with SGD + momentum.  Source inputs
flow through the source stream, target inputs through the target stream;
the classifier sits on top of both.  Evaluation uses the target stream only
(with the target head in dual-classifier mode).

Everything is deterministic under the config seed: parameter init, batch
sampling, and therefore the whole parameter trajectory and metric log.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .errors import ArgumentError, DivergenceError, ParseError
from .losses import AlignmentConfig, Batch, LossBreakdown, full_objective, softmax_loss_and_grad
from .streams import StreamParams, TwoStreamModel, stream_backward, stream_forward

METRICS_HEADER = "epoch,classifier,scatter_align,mean_align,weight_reg,l2_reg,total,target_acc"
CHECKPOINT_VERSION = 1


class StatScope(enum.Enum):
    FULL_CLASS = "full-class"
    MINI_BATCH = "minibatch"


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 30
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    align: AlignmentConfig | None = None
    stat_scope: StatScope = StatScope.MINI_BATCH
    eval_every: int = 10

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ArgumentError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ArgumentError("epochs, batch_size and eval_every must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ArgumentError(f"momentum must be in [0, 1), got {self.momentum}")


@dataclass
class EpochMetrics:
    epoch: int
    breakdown: LossBreakdown
    target_acc: float

    def row(self) -> str:
        b = self.breakdown
        values = [b.classifier, b.scatter_align, b.mean_align, b.weight_reg, b.l2_reg, b.total]
        return ",".join([str(self.epoch)] + [repr(float(v)) for v in values] + [repr(float(self.target_acc))])


def write_metrics_csv(path, log: list[EpochMetrics]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(METRICS_HEADER + "\n")
        for entry in log:
            fh.write(entry.row() + "\n")


class _BatchSampler:
    """Class-balanced batch draws: every class present whenever it has data.

    Per step each class contributes min(quota, N_c) samples per domain,
    drawn without replacement (classes at or under quota are taken whole and
    consume no randomness, so baseline and aligned runs stay in lockstep).
    """

    def __init__(self, source: LabeledDataset, target: LabeledDataset, num_classes: int, batch_size: int):
        self.src_idx = [np.flatnonzero(source.y == c) for c in range(num_classes)]
        self.tgt_idx = [np.flatnonzero(target.y == c) for c in range(num_classes)]
        self.quota = max(1, batch_size // max(1, num_classes))
        covered = self.quota * max(1, num_classes)
        self.steps_per_epoch = max(1, math.ceil(source.num_samples / covered))

    def _draw(self, rng, pools):
        chosen = []
        for pool in pools:
            if pool.size == 0:
                continue
            if pool.size <= self.quota:
                chosen.append(pool)
            else:
                chosen.append(rng.choice(pool, size=self.quota, replace=False))
        return np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64)

    def draw(self, rng) -> tuple[np.ndarray, np.ndarray]:
        return self._draw(rng, self.src_idx), self._draw(rng, self.tgt_idx)


class _FullBatchSampler:
    def __init__(self, source: LabeledDataset, target: LabeledDataset):
        self.src = np.arange(source.num_samples)
        self.tgt = np.arange(target.num_samples)
        self.steps_per_epoch = 1

    def draw(self, rng):
        return self.src, self.tgt


def _make_sampler(source, target, num_classes, tconfig):
    if tconfig.stat_scope is StatScope.FULL_CLASS:
        return _FullBatchSampler(source, target)
    return _BatchSampler(source, target, num_classes, tconfig.batch_size)


class _Sgd:
    """Classical momentum: v <- m v + g; p <- p - lr v."""

    def __init__(self, lr: float, momentum: float):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, name: str, param: np.ndarray, grad: np.ndarray) -> None:
        v = self.velocity.get(name)
        if v is None:
            v = np.zeros_like(param)
            self.velocity[name] = v
        v *= self.momentum
        v += grad
        param -= self.lr * v


def _check_data(source: LabeledDataset, target: LabeledDataset, num_classes: int):
    if source.num_samples < 1 or target.num_samples < 1:
        raise ArgumentError("both datasets must be nonempty")
    for name, ds in (("source", source), ("target", target)):
        if ds.y.size and (ds.y.min() < 0 or ds.y.max() >= num_classes):
            raise ArgumentError(f"{name} labels outside [0, {num_classes})")


def evaluate(model: TwoStreamModel, target_test: LabeledDataset) -> float:
    """Target-stream accuracy; argmax ties resolve to the smaller class id."""
    fwd = stream_forward(model.theta_tgt, target_test.x, model.tau)
    w = model.w_star if model.dual else model.clf_w
    b = model.b_star if model.dual else model.clf_b
    logits = w.T @ fwd.features + b[:, None]
    pred = np.argmax(logits, axis=0)
    return float(np.mean(pred == target_test.y))


def train(
    model: TwoStreamModel,
    source_data: LabeledDataset,
    target_data: LabeledDataset,
    tconfig: TrainConfig,
    eval_data: LabeledDataset | None = None,
) -> tuple[TwoStreamModel, list[EpochMetrics]]:
    """Run the joint objective trainer; mutates and returns `model`.

    The metric log gets one entry per `eval_every` epochs (and for the final
    epoch), with the epoch's mean loss breakdown and the accuracy on
    `eval_data` (target train split when not given).
    """
    cfg = tconfig.align if tconfig.align is not None else AlignmentConfig(num_classes=model.num_classes)
    _check_data(source_data, target_data, cfg.num_classes)
    eval_set = eval_data if eval_data is not None else target_data
    rng = np.random.default_rng(tconfig.seed)
    sampler = _make_sampler(source_data, target_data, cfg.num_classes, tconfig)
    opt = _Sgd(tconfig.learning_rate, tconfig.momentum)
    log: list[EpochMetrics] = []
    for epoch in range(1, tconfig.epochs + 1):
        sums = np.zeros(6)
        for _ in range(sampler.steps_per_epoch):
            src_take, tgt_take = sampler.draw(rng)
            batch = Batch(
                src_x=source_data.x[:, src_take],
                src_y=source_data.y[src_take],
                tgt_x=target_data.x[:, tgt_take],
                tgt_y=target_data.y[tgt_take],
            )
            breakdown, grads = full_objective(model, batch, cfg)
            if not math.isfinite(breakdown.total):
                raise DivergenceError(epoch)
            grad_map = dict(grads.param_items())
            for name, param in model.param_items():
                opt.step(name, param, grad_map[name])
            if cfg.weighted and grads.zeta is not None:
                opt.step("zeta", cfg.zeta, grads.zeta)
                opt.step("zeta_bar", cfg.zeta_bar, grads.zeta_bar)
                np.maximum(cfg.zeta, 0.0, out=cfg.zeta)
                np.maximum(cfg.zeta_bar, 0.0, out=cfg.zeta_bar)
            sums += [
                breakdown.classifier,
                breakdown.scatter_align,
                breakdown.mean_align,
                breakdown.weight_reg,
                breakdown.l2_reg,
                breakdown.total,
            ]
        if epoch % tconfig.eval_every == 0 or epoch == tconfig.epochs:
            mean = sums / sampler.steps_per_epoch
            log.append(
                EpochMetrics(
                    epoch=epoch,
                    breakdown=LossBreakdown(*mean),
                    target_acc=evaluate(model, eval_set),
                )
            )
    return model, log


def train_pooled_baseline(
    model: TwoStreamModel,
    source_data: LabeledDataset,
    target_data: LabeledDataset,
    tconfig: TrainConfig,
    eval_data: LabeledDataset | None = None,
) -> tuple[TwoStreamModel, list[EpochMetrics]]:
    """Softmax-only reference trainer on the pooled batch (no alignment code).

    Architecturally identical to `train` but the loss is only the pooled
    cross-entropy plus the classifier L2 term.  Used to certify that the
    aligned trainer with sigma1 = sigma2 = 0 follows the same trajectory.
    """
    num_classes = model.num_classes
    _check_data(source_data, target_data, num_classes)
    eval_set = eval_data if eval_data is not None else target_data
    rng = np.random.default_rng(tconfig.seed)
    sampler = _make_sampler(source_data, target_data, num_classes, tconfig)
    opt = _Sgd(tconfig.learning_rate, tconfig.momentum)
    log: list[EpochMetrics] = []
    for epoch in range(1, tconfig.epochs + 1):
        sums = np.zeros(6)
        for _ in range(sampler.steps_per_epoch):
            src_take, tgt_take = sampler.draw(rng)
            fwd_s = stream_forward(model.theta_src, source_data.x[:, src_take], model.tau)
            fwd_t = stream_forward(model.theta_tgt, target_data.x[:, tgt_take], model.tau)
            pooled = np.concatenate([fwd_s.features, fwd_t.features], axis=1)
            labels = np.concatenate([source_data.y[src_take], target_data.y[tgt_take]])
            loss, g_w, g_b, g_feat = softmax_loss_and_grad(model.clf_w, model.clf_b, pooled, labels)
            l2 = model.lam * float(np.sum(model.clf_w**2))
            g_w = g_w + 2.0 * model.lam * model.clf_w
            n_src = fwd_s.features.shape[1]
            grads = {
                "clf_w": g_w,
                "clf_b": g_b,
            }
            g_src = stream_backward(model.theta_src, fwd_s, np.ascontiguousarray(g_feat[:, :n_src]))
            g_tgt = stream_backward(model.theta_tgt, fwd_t, np.ascontiguousarray(g_feat[:, n_src:]))
            grads.update({f"theta_src.{k}": v for k, v in g_src.arrays().items()})
            grads.update({f"theta_tgt.{k}": v for k, v in g_tgt.arrays().items()})
            total = loss + l2
            if not math.isfinite(total):
                raise DivergenceError(epoch)
            for name, param in model.param_items():
                opt.step(name, param, grads[name])
            sums += [loss, 0.0, 0.0, 0.0, l2, total]
        if epoch % tconfig.eval_every == 0 or epoch == tconfig.epochs:
            mean = sums / sampler.steps_per_epoch
            log.append(
                EpochMetrics(
                    epoch=epoch,
                    breakdown=LossBreakdown(*mean),
                    target_acc=evaluate(model, eval_set),
                )
            )
    return model, log


def _encode_array(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "data": [float(v).hex() for v in arr.ravel()]}


def _decode_array(entry: dict) -> np.ndarray:
    values = np.array([float.fromhex(v) for v in entry["data"]])
    return values.reshape(entry["shape"])


def save_checkpoint(path, model: TwoStreamModel, align: AlignmentConfig, config_echo: dict) -> None:
    """Versioned structured-text checkpoint; byte-identical for equal state.

    Floats are stored as C99 hex strings, so reload is value-exact.
    """
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": config_echo,
        "model": {
            "dual": model.dual,
            "scalars": {
                "lam": model.lam,
                "lam_star": model.lam_star,
                "beta_prime": model.beta_prime,
                "tau": model.tau,
            },
            "arrays": {name: _encode_array(arr) for name, arr in model.param_items()},
        },
        "alignment": {
            "num_classes": align.num_classes,
            "sigma1": align.sigma1,
            "sigma2": align.sigma2,
            "alpha1": align.alpha1,
            "alpha2": align.alpha2,
            "max_order": align.max_order,
            "weighted": align.weighted,
            "zeta": _encode_array(align.zeta),
            "zeta_bar": _encode_array(align.zeta_bar),
        },
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[TwoStreamModel, AlignmentConfig, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint format_version {version!r}")
    arrays = {name: _decode_array(entry) for name, entry in payload["model"]["arrays"].items()}
    scalars = payload["model"]["scalars"]
    model = TwoStreamModel(
        theta_src=StreamParams(
            arrays["theta_src.w1"], arrays["theta_src.b1"],
            arrays["theta_src.w2"], arrays["theta_src.b2"],
        ),
        theta_tgt=StreamParams(
            arrays["theta_tgt.w1"], arrays["theta_tgt.b1"],
            arrays["theta_tgt.w2"], arrays["theta_tgt.b2"],
        ),
        clf_w=arrays["clf_w"],
        clf_b=arrays["clf_b"],
        w_star=arrays.get("w_star"),
        b_star=arrays.get("b_star"),
        lam=scalars["lam"],
        lam_star=scalars["lam_star"],
        beta_prime=scalars["beta_prime"],
        tau=scalars["tau"],
    )
    a = payload["alignment"]
    align = AlignmentConfig(
        num_classes=a["num_classes"],
        sigma1=a["sigma1"],
        sigma2=a["sigma2"],
        alpha1=a["alpha1"],
        alpha2=a["alpha2"],
        max_order=a["max_order"],
        weighted=a["weighted"],
        zeta=_decode_array(a["zeta"]) if a["weighted"] else None,
        zeta_bar=_decode_array(a["zeta_bar"]) if a["weighted"] else None,
    )
    return model, align, payload["config"]
