"""Command-line interface: data generation, training, verification, benchmarks.

Commands
--------
gen        synthetic domain-shift dataset -> CSV
train      two-stream training on a feature CSV -> checkpoint + metrics
gradcheck  finite-difference report over every gradient block
equiv      explicit-vs-kernelized distance agreement report
bench      wall-clock + predicted-cost comparison of the two routes
rerun      repeat a run from its manifest

Exit codes: 0 success, 1 check failure, 2 usage or input error,
3 training divergence.  Every run writes one JSON manifest next to its
outputs; `rerun <manifest>` reproduces the run (timings aside) exactly.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import grid_search  # noqa: F401  (re-exported for demos)
from .data import default_benchmark_spec, generate, load_features, save_features
from .errors import (
    ArgumentError,
    CapacityError,
    DivergenceError,
    EmptyDatasetError,
    ParseError,
    SohotError,
)
from .gradcheck import run_gradcheck
from .kernels import build_kernel_blocks, cost_model, kernel_frob_dist_sq_from_blocks
from .losses import AlignmentConfig
from .streams import init_two_stream
from .tensors import (
    FeatureMatrix,
    compute_scatter,
    memory_cap,
    tensor_frob_dist_sq,
    unique_coeff_count,
)
from .trainer import (
    StatScope,
    TrainConfig,
    evaluate,
    save_checkpoint,
    train,
    train_pooled_baseline,
    write_metrics_csv,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3


def _write_manifest(path: Path, command: str, config: dict, artifacts: dict, timings: dict):
    payload = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "artifacts": artifacts,
        "timings": timings,
        "version": __version__,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise ArgumentError(f"{flag} expects a comma-separated integer list, got {text!r}") from None
    if not values:
        raise ArgumentError(f"{flag} must name at least one value")
    return values


# ----------------------------------------------------------------- gen

def run_gen(config: dict) -> int:
    t0 = time.perf_counter()
    spec = default_benchmark_spec(
        num_classes=config["classes"],
        input_dim=config["dim"],
        rotation_deg=config["rot_deg"],
        mean_shift=config["mean_shift"],
        scale=config["scale"],
        n_src_train=config["n_src"],
        n_tgt_train=config["n_tgt"],
        n_test=config["n_test"],
        seed=config["seed"],
    )
    splits = generate(spec)
    out = Path(config["out"])
    save_features(out, splits)
    _write_manifest(
        out.with_name(out.name + ".manifest.json"),
        "gen",
        config,
        {"dataset": str(out)},
        {"wall_s": time.perf_counter() - t0},
    )
    rows = sum(ds.num_samples for _, _, ds in splits.blocks())
    print(f"wrote {rows} rows to {out}")
    return EXIT_OK


def _add_gen(sub):
    p = sub.add_parser("gen", help="generate a synthetic domain-shift dataset")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--rot-deg", type=float, default=30.0, dest="rot_deg",
                   help="target covariance rotation, degrees in [0, 180)")
    p.add_argument("--mean-shift", type=float, default=1.0, dest="mean_shift")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--n-src", type=int, default=20, dest="n_src")
    p.add_argument("--n-tgt", type=int, default=3, dest="n_tgt")
    p.add_argument("--n-test", type=int, default=200, dest="n_test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)


# ----------------------------------------------------------------- train

def run_train(config: dict) -> int:
    t0 = time.perf_counter()
    splits = load_features(config["features"])
    if splits.src_train.num_samples == 0 or splits.tgt_train.num_samples == 0:
        raise ArgumentError("feature file must contain train rows for both domains")
    num_classes = int(max(splits.src_train.y.max(), splits.tgt_train.y.max())) + 1
    align = AlignmentConfig(
        num_classes=num_classes,
        sigma1=config["sigma1"],
        sigma2=config["sigma2"],
        alpha1=config["alpha1"],
        alpha2=config["alpha2"],
        max_order=config["order"],
        weighted=config["weighted"],
    )
    rng = np.random.default_rng(config["seed"])
    model = init_two_stream(
        rng,
        input_dim=splits.src_train.dim,
        num_classes=num_classes,
        hidden_dim=config["hidden"],
        feature_dim=config["feature_dim"],
        dual=config["dual_classifier"],
        lam=config["lam"],
        lam_star=config["lam"],
        beta_prime=config["beta_prime"],
        tau=config["tau"],
    )
    tconfig = TrainConfig(
        epochs=config["epochs"],
        batch_size=config["batch_size"],
        learning_rate=config["lr"],
        momentum=config["momentum"],
        seed=config["seed"],
        align=align,
        stat_scope=StatScope(config["stat_scope"]),
        eval_every=config["eval_every"],
    )
    eval_data = splits.tgt_test if splits.tgt_test.num_samples else splits.tgt_train
    if config["baseline"]:
        _, log = train_pooled_baseline(model, splits.src_train, splits.tgt_train, tconfig, eval_data)
    else:
        _, log = train(model, splits.src_train, splits.tgt_train, tconfig, eval_data)
    out_dir = Path(config["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = out_dir / "checkpoint.json"
    metrics = out_dir / "metrics.csv"
    save_checkpoint(checkpoint, model, align, config)
    write_metrics_csv(metrics, log)
    _write_manifest(
        out_dir / "manifest.json",
        "train",
        config,
        {"checkpoint": str(checkpoint), "metrics": str(metrics)},
        {"wall_s": time.perf_counter() - t0},
    )
    final_acc = evaluate(model, eval_data)
    print(f"final target accuracy: {final_acc!r}")
    return EXIT_OK


def _add_train(sub):
    p = sub.add_parser("train", help="train the two-stream model on a feature CSV")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--weighted", action="store_true")
    p.add_argument("--sigma1", type=float, default=0.1)
    p.add_argument("--sigma2", type=float, default=0.003)
    p.add_argument("--alpha1", type=float, default=0.1)
    p.add_argument("--alpha2", type=float, default=0.1)
    p.add_argument("--dual-classifier", action="store_true", dest="dual_classifier")
    p.add_argument("--beta-prime", type=float, default=1e-3, dest="beta_prime")
    p.add_argument("--stat-scope", choices=[s.value for s in StatScope],
                   default=StatScope.MINI_BATCH.value, dest="stat_scope")
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--batch-size", type=int, default=30, dest="batch_size")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--eval-every", type=int, default=10, dest="eval_every")
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--feature-dim", type=int, default=16, dest="feature_dim")
    p.add_argument("--tau", type=float, default=4.0)
    p.add_argument("--lam", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--baseline", action="store_true",
                   help="pooled softmax baseline (ignores alignment flags)")


# ----------------------------------------------------------------- gradcheck

def run_gradcheck_cmd(config: dict) -> int:
    t0 = time.perf_counter()
    reports = run_gradcheck(
        seed=config["seed"],
        orders=tuple(config["orders"]),
        instances=config["instances"],
        stream_instances=config["stream_instances"],
    )
    tol = config["tol"]
    lines = ["block,max_rel_err,instances,status"]
    all_ok = True
    for rep in reports:
        ok = rep.passed(tol)
        all_ok &= ok
        lines.append(f"{rep.name},{rep.max_rel_err!r},{rep.instances},{'pass' if ok else 'fail'}")
    text = "\n".join(lines)
    print(text)
    if config.get("out"):
        out = Path(config["out"])
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text + "\n")
        _write_manifest(
            out.with_name(out.name + ".manifest.json"), "gradcheck", config,
            {"report": str(out)}, {"wall_s": time.perf_counter() - t0},
        )
    return EXIT_OK if all_ok else EXIT_CHECK_FAILED


def _add_gradcheck(sub):
    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient block")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--orders", type=str, default="2,3,4")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--stream-instances", type=int, default=None, dest="stream_instances")
    p.add_argument("--out", default=None)


# ----------------------------------------------------------------- equiv

def run_equiv(config: dict) -> int:
    t0 = time.perf_counter()
    if config["trials"] < 1:
        raise ArgumentError(f"--trials must be >= 1, got {config['trials']}")
    cap = memory_cap()
    for d in config["dims"]:
        for r in config["orders"]:
            needed = unique_coeff_count(d, r)
            if needed > cap:
                raise CapacityError(
                    f"explicit tensors for d={d}, r={r} need {needed} coefficients, "
                    f"above the cap of {cap}; these dims are kernelized-only"
                )
    rng = np.random.default_rng(config["seed"])
    worst = 0.0
    for _ in range(config["trials"]):
        d = int(rng.choice(config["dims"]))
        r = int(rng.choice(config["orders"]))
        n = int(rng.integers(2, 11))
        ns = int(rng.integers(2, 11))
        src = FeatureMatrix(rng.normal(size=(d, n)))
        tgt = FeatureMatrix(rng.normal(size=(d, ns)))
        explicit = tensor_frob_dist_sq(compute_scatter(src, r), compute_scatter(tgt, r))
        kernel = kernel_frob_dist_sq_from_blocks(build_kernel_blocks(src, tgt, r))
        scale = max(abs(explicit), abs(kernel), 1e-30)
        worst = max(worst, abs(explicit - kernel) / scale)
    ok = worst <= config["tol"]
    print(f"trials: {config['trials']}")
    print(f"max relative deviation: {worst!r}")
    print(f"tolerance: {config['tol']!r} -> {'pass' if ok else 'fail'}")
    if config.get("out"):
        out = Path(config["out"])
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"trials,max_rel_deviation,tol,status\n"
                     f"{config['trials']},{worst!r},{config['tol']!r},{'pass' if ok else 'fail'}\n")
        _write_manifest(
            out.with_name(out.name + ".manifest.json"), "equiv", config,
            {"report": str(out)}, {"wall_s": time.perf_counter() - t0},
        )
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _add_equiv(sub):
    p = sub.add_parser("equiv", help="explicit vs kernelized distance agreement")
    p.add_argument("--dims", type=str, default="2,3,4,5,6,7,8")
    p.add_argument("--orders", type=str, default="2,3,4")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--out", default=None)


# ----------------------------------------------------------------- bench

def _time_ns(fn, reps: int) -> int:
    fn()  # warm-up
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    samples.sort()
    return samples[len(samples) // 2]


def run_bench(config: dict) -> int:
    t0 = time.perf_counter()
    d, n, ns = config["d"], config["n_src"], config["n_tgt"]
    reps = config["reps"]
    rng = np.random.default_rng(config["seed"])
    src = FeatureMatrix(rng.normal(size=(d, n)))
    tgt = FeatureMatrix(rng.normal(size=(d, ns)))
    cap = memory_cap()
    rows = []
    measured: dict[int, dict[str, int]] = {}
    for r in config["orders"]:
        measured[r] = {}
        needed = unique_coeff_count(d, r)
        predicted = cost_model(d, n, ns, r, "explicit")
        if needed > cap:
            rows.append(("explicit", d, n, ns, r, "infeasible", predicted))
        else:
            wall = _time_ns(
                lambda rr=r: tensor_frob_dist_sq(compute_scatter(src, rr), compute_scatter(tgt, rr)),
                reps,
            )
            rows.append(("explicit", d, n, ns, r, wall, predicted))
            measured[r]["explicit"] = wall
        wall = _time_ns(
            lambda rr=r: kernel_frob_dist_sq_from_blocks(build_kernel_blocks(src, tgt, rr)),
            reps,
        )
        rows.append(("kernelized", d, n, ns, r, wall, cost_model(d, n, ns, r, "kernelized")))
        measured[r]["kernelized"] = wall

    header = "mode,d,n_src,n_tgt,order,wall_ns,predicted_ops"
    lines = [header] + [",".join(str(v) for v in row) for row in rows]
    text = "\n".join(lines)
    print(text)
    for r in config["orders"]:
        if "explicit" in measured[r]:
            ratio = measured[r]["explicit"] / measured[r]["kernelized"]
            predicted = cost_model(d, n, ns, r, "explicit") / cost_model(d, n, ns, r, "kernelized")
            print(f"order {r}: measured explicit/kernelized ratio {ratio:.1f} "
                  f"(cost model predicts {predicted:.1f})")
        else:
            print(f"order {r}: explicit route infeasible "
                  f"({unique_coeff_count(d, r)} coefficients > cap {cap}); kernelized completed")
    if config.get("out"):
        out = Path(config["out"])
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text + "\n")
        _write_manifest(
            out.with_name(out.name + ".manifest.json"), "bench", config,
            {"timings": str(out)}, {"wall_s": time.perf_counter() - t0},
        )
    return EXIT_OK


def _add_bench(sub):
    p = sub.add_parser("bench", help="explicit vs kernelized wall-clock benchmark")
    p.add_argument("--d", type=int, default=4096)
    p.add_argument("--n-src", type=int, default=20, dest="n_src")
    p.add_argument("--n-tgt", type=int, default=3, dest="n_tgt")
    p.add_argument("--orders", type=str, default="2,3")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)


# ----------------------------------------------------------------- rerun

RUNNERS = {
    "gen": run_gen,
    "train": run_train,
    "gradcheck": run_gradcheck_cmd,
    "equiv": run_equiv,
    "bench": run_bench,
}


def run_rerun(manifest_path: str) -> int:
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ArgumentError(f"cannot read manifest {manifest_path}: {exc}") from exc
    command = manifest.get("command")
    if command not in RUNNERS:
        raise ArgumentError(f"manifest names unknown command {command!r}")
    if manifest.get("version") != __version__:
        print(
            f"note: manifest written by version {manifest.get('version')}, "
            f"running under {__version__}",
            file=sys.stderr,
        )
    return RUNNERS[command](manifest["config"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sohot",
        description="scatter-tensor domain adaptation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_gen(sub)
    _add_train(sub)
    _add_gradcheck(sub)
    _add_equiv(sub)
    _add_bench(sub)
    p = sub.add_parser("rerun", help="reproduce a run from its manifest")
    p.add_argument("manifest")
    return parser


def _config_from_args(args: argparse.Namespace) -> dict:
    config = {k: v for k, v in vars(args).items() if k not in ("command",)}
    for key in ("orders", "dims"):
        if key in config and isinstance(config[key], str):
            config[key] = _parse_int_list(config[key], f"--{key}")
    return config


def _validate(command: str, config: dict):
    if command == "gen":
        if not 0.0 <= config["rot_deg"] < 180.0:
            raise ArgumentError(f"--rot-deg must lie in [0, 180), got {config['rot_deg']}")
        for flag in ("classes", "dim", "n_src", "n_tgt", "n_test"):
            if config[flag] < 1:
                raise ArgumentError(f"--{flag.replace('_', '-')} must be >= 1, got {config[flag]}")
        if config["scale"] <= 0:
            raise ArgumentError(f"--scale must be > 0, got {config['scale']}")
    if command in ("gradcheck", "equiv", "bench"):
        for key in ("orders",):
            bad = [r for r in config.get(key, []) if r < 2]
            if bad:
                raise ArgumentError(f"--orders entries must be >= 2, got {bad}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "rerun":
            return run_rerun(args.manifest)
        config = _config_from_args(args)
        _validate(args.command, config)
        return RUNNERS[args.command](config)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ArgumentError, CapacityError, ParseError, EmptyDatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SohotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
