"""Paired-run experiments on the synthetic domain-shift benchmark.

Three named configurations share the data, the model init, and the training
schedule, differing only in the loss:

  "s+t"      pooled softmax baseline (no alignment),
  "so"       second-order alignment,
  "so+zeta"  second-order alignment with learnable per-class weights.

The "so+zeta" run doubles sigma1: the weighted loss divides its scatter term
by r * C instead of C, so at order 2 the doubled value reproduces the plain
loss strength when the weights sit at 1.

The pinned strengths below came from a one-time coarse grid search
(`grid_search` reruns it).  The library-default strengths target fc7-scale
activations whose per-class scatters are orders of magnitude larger than the
desk-scale features here, hence the rescale.  Feature norms are capped at
tau = 4 so the quartic scale-dependence of the scatter term cannot drift
between runs, and class statistics use the whole split (deterministic
full-batch training) rather than minibatch estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import ShiftSpec, default_benchmark_spec, generate
from .errors import ArgumentError
from .losses import AlignmentConfig
from .streams import init_two_stream
from .trainer import StatScope, TrainConfig, evaluate, train, train_pooled_baseline

BENCH_SIGMA1 = 0.1
BENCH_SIGMA2 = 0.003
BENCH_ALPHA1 = 1.0
BENCH_ALPHA2 = 1.0
BENCH_EPOCHS = 1000
BENCH_LEARNING_RATE = 0.01
BENCH_TAU = 4.0
BENCH_HIDDEN_DIM = 32
BENCH_FEATURE_DIM = 16
BENCH_SEEDS = tuple(range(10))

CONFIG_NAMES = ("s+t", "so", "so+zeta")


def benchmark_align_config(name: str, num_classes: int,
                           sigma1: float = BENCH_SIGMA1,
                           sigma2: float = BENCH_SIGMA2) -> AlignmentConfig | None:
    """Alignment settings for a named configuration (None for the baseline)."""
    if name == "s+t":
        return None
    if name == "so":
        return AlignmentConfig(
            num_classes=num_classes, sigma1=sigma1, sigma2=sigma2, max_order=2,
            weighted=False,
        )
    if name == "so+zeta":
        return AlignmentConfig(
            num_classes=num_classes, sigma1=2.0 * sigma1, sigma2=sigma2,
            alpha1=BENCH_ALPHA1, alpha2=BENCH_ALPHA2, max_order=2, weighted=True,
        )
    raise ArgumentError(f"unknown benchmark configuration {name!r}; pick from {CONFIG_NAMES}")


def run_benchmark_once(
    name: str,
    seed: int,
    spec: ShiftSpec | None = None,
    sigma1: float = BENCH_SIGMA1,
    sigma2: float = BENCH_SIGMA2,
    epochs: int = BENCH_EPOCHS,
) -> float:
    """Train one configuration on one seed; returns target-test accuracy.

    The seed controls the data draw, the model init, and the batch schedule
    together, so paired configurations see identical everything-but-loss.
    """
    spec = default_benchmark_spec(seed=seed) if spec is None else replace(spec, seed=seed)
    splits = generate(spec)
    align = benchmark_align_config(name, spec.num_classes, sigma1, sigma2)
    rng = np.random.default_rng(seed)
    model = init_two_stream(
        rng, spec.input_dim, spec.num_classes,
        hidden_dim=BENCH_HIDDEN_DIM, feature_dim=BENCH_FEATURE_DIM, tau=BENCH_TAU,
    )
    tconfig = TrainConfig(
        epochs=epochs,
        batch_size=30,
        learning_rate=BENCH_LEARNING_RATE,
        momentum=0.9,
        seed=seed,
        align=align,
        stat_scope=StatScope.FULL_CLASS,
        eval_every=epochs,
    )
    if name == "s+t":
        train_pooled_baseline(model, splits.src_train, splits.tgt_train, tconfig,
                              eval_data=splits.tgt_test)
    else:
        train(model, splits.src_train, splits.tgt_train, tconfig, eval_data=splits.tgt_test)
    return evaluate(model, splits.tgt_test)


@dataclass(frozen=True)
class BenchmarkResult:
    name: str
    accuracies: tuple[float, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))


def run_benchmark(name: str, seeds=BENCH_SEEDS, spec: ShiftSpec | None = None,
                  **kwargs) -> BenchmarkResult:
    """One configuration across seeds (each seed redraws data and init)."""
    accs = tuple(run_benchmark_once(name, seed, spec=spec, **kwargs) for seed in seeds)
    return BenchmarkResult(name=name, accuracies=accs)


def grid_search(
    sigma1_grid=(0.03, 0.1, 0.3, 1.0),
    sigma2_grid=(0.001, 0.003, 0.01, 0.1),
    seeds=range(3),
    epochs: int = 300,
) -> tuple[float, float, float]:
    """Re-derive the pinned strengths: best mean "so" accuracy on the grid.

    Returns `(sigma1, sigma2, accuracy)`.  Deliberately coarse; this mirrors
    how BENCH_SIGMA1/BENCH_SIGMA2 were selected (with a longer schedule).
    """
    best = (BENCH_SIGMA1, BENCH_SIGMA2, -1.0)
    for s1 in sigma1_grid:
        for s2 in sigma2_grid:
            result = run_benchmark("so", seeds=seeds, sigma1=s1, sigma2=s2, epochs=epochs)
            if result.mean > best[2]:
                best = (s1, s2, result.mean)
    return best
