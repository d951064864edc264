"""Command-line driver: train, attack, universalize, evaluate, sweep,
theory-check, compare.

Every subcommand takes an optional flat key-value `--config` file plus flag
overrides, a single `--seed` that feeds every random stream, and an
`--out-dir` for CSV/JSON outputs. Exit codes: 0 success, 1 input error,
2 internal assertion failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from svdu import linalg, netcore
from svdu.attacks import AttackConfig, AttackKind, export_attack_results, run_attack
from svdu.errors import InputError, InternalError
from svdu.harness import datasets, evaluation
from svdu.harness.config import ExperimentConfig, experiment_from_mapping, load_config
from svdu.theory import (
    GaussianComponent,
    LinearWorld,
    SpikedDirectionSource,
    fooling_error_gap_check,
    verify_theorem_one,
    verify_theorem_two,
)
from svdu.universal import (
    build_attack_matrix,
    mdfff_universal,
    random_direction,
    save_direction_pgm,
    save_perturbation,
    load_perturbation,
    svd_universal,
    write_spectrum_csv,
)


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; route through InputError
    # instead so usage problems land on exit code 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(message)


def _add_common(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")


def _add_dataset_flags(p):
    p.add_argument("--dataset", choices=["blobs", "idx"])
    p.add_argument("--blobs-d", type=int, dest="blobs_d")
    p.add_argument("--blobs-k", type=int, dest="blobs_k")
    p.add_argument("--blobs-n", type=int, dest="blobs_n")
    p.add_argument("--blobs-separation", type=float, dest="blobs_separation")
    p.add_argument("--idx-images", dest="idx_images")
    p.add_argument("--idx-labels", dest="idx_labels")


_OVERRIDE_KEYS = [
    "dataset", "blobs_d", "blobs_k", "blobs_n", "blobs_separation",
    "idx_images", "idx_labels", "model_path", "hidden_dims", "epochs",
    "batch_size", "learning_rate", "l2_weight_decay", "sample_size",
    "eval_size", "norm_pcts", "fgsm_eps", "deepfool_max_iter", "overshoot",
    "mdfff_target", "mdfff_max_passes", "clip_mode",
    "include_construction_samples",
]


def _resolve_experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else {}
    for key in _OVERRIDE_KEYS:
        val = getattr(args, key, None)
        if val is None:
            continue
        if isinstance(val, bool):
            cfg[key] = "true" if val else "false"
        elif isinstance(val, (list, tuple)):
            cfg[key] = ",".join(str(x) for x in val)
        else:
            cfg[key] = str(val)
    return experiment_from_mapping(cfg, args.seed)


def _make_dataset(exp: ExperimentConfig) -> netcore.LabeledDataset:
    if exp.dataset == "blobs":
        return datasets.generate_blobs(exp.blobs_d, exp.blobs_k, exp.blobs_n,
                                       exp.blobs_separation, seed=exp.seed)
    if not exp.idx_images or not exp.idx_labels:
        raise InputError("idx dataset needs idx_images and idx_labels")
    return datasets.load_idx_dataset(exp.idx_images, exp.idx_labels)


def _train_model(exp: ExperimentConfig, data: netcore.LabeledDataset,
                 indices=None) -> tuple[netcore.MlpModel, list[float]]:
    subset = data if indices is None else netcore.LabeledDataset(
        data.inputs[indices], data.labels[indices],
        name=data.name, num_classes=data.num_classes)
    dims = [data.inputs.shape[1]] + list(exp.hidden_dims) + [data.num_classes]
    model = netcore.init_model(dims, seed=exp.seed)
    cfg = netcore.TrainConfig(epochs=exp.epochs, batch_size=exp.batch_size,
                              learning_rate=exp.learning_rate,
                              rng_seed=exp.seed,
                              l2_weight_decay=exp.l2_weight_decay)
    history = netcore.train(model, subset, cfg)
    return model, history


def _get_model(exp: ExperimentConfig, data, indices=None):
    if exp.model_path:
        return netcore.load_model(exp.model_path), []
    return _train_model(exp, data, indices)


def _three_way_split(n: int, eval_size: int, pool_size: int):
    if eval_size < 1 or pool_size < 1:
        raise InputError("eval_size and pool size must be positive")
    if eval_size + pool_size >= n:
        raise InputError(f"dataset of {n} samples cannot hold an evaluation "
                         f"block of {eval_size} plus a construction pool of "
                         f"{pool_size}")
    train = list(range(0, n - eval_size - pool_size))
    pool = list(range(n - eval_size - pool_size, n - eval_size))
    ev = list(range(n - eval_size, n))
    return train, pool, ev


def _attack_config(exp: ExperimentConfig, kind: AttackKind) -> AttackConfig:
    return AttackConfig(kind, eps=exp.fgsm_eps,
                        max_iter=exp.deepfool_max_iter,
                        overshoot=exp.overshoot)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_train(args) -> int:
    exp = _resolve_experiment(args)
    data = _make_dataset(exp)
    model, history = _train_model(exp, data)
    out = _out_dir(args)
    model_path = args.model_out or str(out / "model.bin")
    netcore.save_model(model_path, model)
    evaluation.write_summary_json(out / "summary.json", {
        "command": "train",
        "seed": args.seed,
        "dataset": data.name,
        "model_path": str(model_path),
        "layer_dims": model.layer_dims,
        "train_accuracy_per_epoch": history,
        "final_train_accuracy": history[-1] if history else None,
    })
    print(f"trained model -> {model_path} "
          f"(final accuracy {history[-1] if history else 'n/a'})")
    return 0


def _cmd_attack(args) -> int:
    exp = _resolve_experiment(args)
    data = _make_dataset(exp)
    model, _ = _get_model(exp, data)
    kind = AttackKind(args.attack)
    config = _attack_config(exp, kind)
    rng = np.random.default_rng((args.seed, 4))
    count = min(args.samples, len(data))
    indices = sorted(int(i) for i in
                     rng.choice(len(data), size=count, replace=False))
    results = [run_attack(model, data.inputs[i], int(data.labels[i]), config)
               for i in indices]
    out = _out_dir(args)
    export_attack_results(results, kind, out / "attacks.mat", out / "attacks.csv")
    fooled = sum(r.fooled for r in results)
    evaluation.write_summary_json(out / "summary.json", {
        "command": "attack",
        "seed": args.seed,
        "attack": kind.value,
        "samples": count,
        "fooled": fooled,
        "fooled_fraction": fooled / count,
        "zero_directions": sum(r.zero_direction for r in results),
    })
    print(f"{kind.value}: fooled {fooled}/{count} sampled points")
    return 0


def _construction_indices(exp: ExperimentConfig, n: int, seed: int) -> list[int]:
    _, pool, _ = _three_way_split(
        n, exp.eval_size, max(2 * exp.sample_size, 256))
    rng = np.random.default_rng((seed, 3))
    picked = rng.choice(len(pool), size=exp.sample_size, replace=False)
    return sorted(pool[i] for i in picked)


def _cmd_universalize(args) -> int:
    exp = _resolve_experiment(args)
    exp.sample_size = args.samples or exp.sample_size
    data = _make_dataset(exp)
    out = _out_dir(args)
    name = args.attack
    if name == "random":
        pert = random_direction(data.inputs.shape[1], args.seed)
    else:
        model, _ = _get_model(exp, data)
        indices = _construction_indices(exp, len(data), args.seed)
        if name == "mdfff":
            eval_avg = float(np.mean(np.linalg.norm(data.inputs, axis=1)))
            budget = exp.norm_pcts[-1] / 100.0 * eval_avg
            pert = mdfff_universal(model, data, indices, eps_budget=budget,
                                   target_fooling=exp.mdfff_target,
                                   max_passes=exp.mdfff_max_passes,
                                   deepfool_max_iter=exp.deepfool_max_iter,
                                   overshoot=exp.overshoot)
        else:
            config = _attack_config(exp, AttackKind(name))
            vset = build_attack_matrix(model, data, indices, config)
            pert = svd_universal(vset)
            write_spectrum_csv(out / "spectrum.csv", pert.spectral)
    base = out / f"universal_{name}"
    save_perturbation(base, pert)
    if args.emit_image:
        save_direction_pgm(out / f"universal_{name}.pgm", pert.direction)
    evaluation.write_summary_json(out / "summary.json", {
        "command": "universalize",
        "seed": args.seed,
        "attack": name,
        "sample_size": pert.sample_size,
        "source": pert.source,
        "perturbation_base": str(base),
        "construction_fooling_rate": pert.construction_fooling_rate,
        "degenerate_gap": (pert.spectral.degenerate_gap
                           if pert.spectral else None),
    })
    print(f"universal direction ({pert.source}) -> {base}.mat")
    return 0


def _cmd_evaluate(args) -> int:
    exp = _resolve_experiment(args)
    data = _make_dataset(exp)
    model, _ = _get_model(exp, data)
    pert = load_perturbation(args.perturbation)
    if args.norms:
        grid = evaluation.validate_norm_grid(args.norms)
    else:
        avg = float(np.mean(np.linalg.norm(data.inputs, axis=1)))
        grid = evaluation.make_norm_grid(avg, exp.norm_pcts)
    report = evaluation.evaluate_universal(model, data, pert, grid,
                                           clip_mode=exp.clip_mode)
    out = _out_dir(args)
    evaluation.write_fooling_csv(out / "fooling.csv", {pert.source: report})
    evaluation.write_summary_json(out / "summary.json", {
        "command": "evaluate",
        "seed": args.seed,
        "perturbation": str(args.perturbation),
        "report": evaluation.report_to_json(report),
    })
    best = max(r.fooling_rate for r in report.rows)
    print(f"evaluated {pert.source} on {len(data)} points; "
          f"best fooling rate {best:.4f}")
    return 0


def _cmd_compare(args) -> int:
    exp = _resolve_experiment(args)
    data = _make_dataset(exp)
    pool_size = max(2 * exp.sample_size, 256)
    train_idx, pool_idx, eval_idx = _three_way_split(
        len(data), exp.eval_size, pool_size)
    model, history = _get_model(exp, data, train_idx)
    rng = np.random.default_rng((args.seed, 3))
    picked = rng.choice(len(pool_idx), size=exp.sample_size, replace=False)
    construction = sorted(pool_idx[i] for i in picked)
    eval_indices = (sorted(construction + eval_idx)
                    if exp.include_construction_samples else eval_idx)

    eval_avg = float(np.mean(np.linalg.norm(data.inputs[eval_indices], axis=1)))
    grid = evaluation.make_norm_grid(eval_avg, exp.norm_pcts)
    comparison = evaluation.compare_methods(
        model, data, construction, grid, eval_indices=eval_indices,
        clip_mode=exp.clip_mode, fgsm_eps=exp.fgsm_eps,
        deepfool_max_iter=exp.deepfool_max_iter, overshoot=exp.overshoot,
        mdfff_target=exp.mdfff_target, mdfff_max_passes=exp.mdfff_max_passes,
        random_seed=args.seed)

    out = _out_dir(args)
    evaluation.write_fooling_csv(out / "fooling.csv", comparison.reports)
    for name, pert in comparison.perturbations.items():
        save_perturbation(out / f"universal_{name}", pert)
        if pert.spectral is not None:
            write_spectrum_csv(out / f"spectrum_{name}.csv", pert.spectral)
    test_acc = next(iter(comparison.reports.values())).accuracy
    summary = {
        "command": "compare",
        "seed": args.seed,
        "dataset": data.name,
        "sample_size": exp.sample_size,
        "eval_size": len(eval_indices),
        "train_accuracy": history[-1] if history else None,
        "test_accuracy": test_acc,
        "avg_eval_norm": eval_avg,
        "norm_grid": grid,
        "reports": {name: evaluation.report_to_json(rep)
                    for name, rep in comparison.reports.items()},
    }
    evaluation.write_summary_json(out / "summary.json", summary)
    print(f"compare: test accuracy {test_acc:.4f}; methods: "
          + ", ".join(sorted(comparison.reports)))
    return 0


def _cmd_sweep(args) -> int:
    exp = _resolve_experiment(args)
    data = _make_dataset(exp)
    sizes = [int(s) for s in args.sizes]
    pool_size = max(sizes) + 64
    train_idx, pool_idx, eval_idx = _three_way_split(
        len(data), exp.eval_size, pool_size)
    model, history = _get_model(exp, data, train_idx)
    eval_avg = float(np.mean(np.linalg.norm(data.inputs[eval_idx], axis=1)))
    grid = evaluation.make_norm_grid(eval_avg, exp.norm_pcts)
    seeds = [args.seed + i for i in range(args.num_seeds)]
    config = _attack_config(exp, AttackKind(args.attack))
    sweep = evaluation.sweep_batch_size(model, data, config, sizes, seeds,
                                        grid, eval_idx,
                                        construction_pool=pool_idx,
                                        clip_mode=exp.clip_mode)
    out = _out_dir(args)
    with open(out / "sweep.csv", "w", newline="") as fh:
        fh.write("seed,size,direction_distance,curve_gap,"
                 "max_fooling_rate\n")
        for e in sweep.entries:
            best = max(r.fooling_rate for r in e.report.rows)
            fh.write(f"{e.seed},{e.size},{e.direction_distance!r},"
                     f"{e.curve_gap!r},{best!r}\n")
    summary = {
        "command": "sweep",
        "seed": args.seed,
        "attack": args.attack,
        "sizes": sizes,
        "seeds": seeds,
        "train_accuracy": history[-1] if history else None,
        "mean_direction_distance": {str(s): sweep.mean_distance(s)
                                    for s in sizes},
        "mean_curve_gap": {str(s): sweep.mean_curve_gap(s) for s in sizes},
    }
    evaluation.write_summary_json(out / "summary.json", summary)
    print("sweep: mean direction distance per size: "
          + ", ".join(f"{s}={sweep.mean_distance(s):.4f}" for s in sizes))
    return 0


def _cmd_theory_check(args) -> int:
    out = _out_dir(args)
    rng = np.random.default_rng((args.seed, 5))
    thm1 = []
    for trial in range(args.trials):
        for d in args.dims:
            w = rng.standard_normal(d)
            w /= np.linalg.norm(w)
            b = float(rng.uniform(-0.5, 0.5))
            world = LinearWorld(w, b, [
                GaussianComponent(0.5, 0.8 * w, 1.0),
                GaussianComponent(0.5, -0.8 * w, 1.0),
            ])
            for delta in args.deltas:
                rep = verify_theorem_one(world, delta,
                                         n_eval=args.n_eval,
                                         seed=args.seed + trial,
                                         pool_size=args.pool_size)
                thm1.append({
                    "trial": trial, "d": d, "delta": delta,
                    "lambda": rep.lambda_top, "eps": rep.eps_max,
                    "base_fool_rate": rep.base_fool_rate,
                    "measured_fool_rate": rep.measured_fool_rate_u,
                    "bound": rep.bound_value,
                    "satisfied": rep.satisfied,
                })
    source = SpikedDirectionSource(args.spiked_dim)
    curve = verify_theorem_two(source, args.m_grid, args.trials_thm2,
                               seed=args.seed)
    evaluation.write_theory_csv(out / "theory.csv", curve)

    blob = datasets.generate_blobs(16, 3, 600, 6.0, seed=args.seed)
    model = netcore.init_model([16, 32, 3], seed=args.seed)
    netcore.train(model, blob, netcore.TrainConfig(
        epochs=30, batch_size=32, learning_rate=0.1, rng_seed=args.seed))
    indices = list(range(32))
    vset = build_attack_matrix(model, blob, indices,
                               AttackConfig(AttackKind.GRADIENT))
    pert = svd_universal(vset)
    avg = float(np.mean(np.linalg.norm(blob.inputs, axis=1)))
    gap_checks = []
    for pct in (0.0, 2.0, 7.1, 14.2, 20.0):
        res = fooling_error_gap_check(model, blob, pert.direction,
                                      avg * pct / 100.0)
        gap_checks.append({
            "norm_pct": pct, "fooling_rate": res.fooling_rate,
            "error_rate": res.error_rate, "accuracy": res.accuracy,
            "inequality_ok": res.inequality_ok,
        })

    summary = {
        "command": "theory-check",
        "seed": args.seed,
        "theorem_one": thm1,
        "theorem_one_all_satisfied": all(t["satisfied"] for t in thm1),
        "theorem_two": {
            "m_values": curve.m_values,
            "mean_eigvec_errors": curve.eigvec_errors,
            "median_eigvec_errors": curve.median_eigvec_errors,
            "gap": curve.gap,
            "gamma": curve.gamma,
            "weyl_violations": curve.weyl_violations,
            "dk_violations": curve.dk_violations,
        },
        "fooling_error_gap": gap_checks,
    }
    evaluation.write_summary_json(out / "summary.json", summary)
    ok = (summary["theorem_one_all_satisfied"]
          and curve.weyl_violations == 0 and curve.dk_violations == 0
          and all(g["inequality_ok"] for g in gap_checks))
    print(f"theory-check: theorem-one trials {len(thm1)} "
          f"(all satisfied: {summary['theorem_one_all_satisfied']}), "
          f"weyl violations {curve.weyl_violations}, "
          f"davis-kahan violations {curve.dk_violations}")
    if not ok:
        raise InternalError("theory-check found violated bounds; see summary.json")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="svdu", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a classifier on a dataset")
    _add_common(p)
    _add_dataset_flags(p)
    p.add_argument("--hidden-dims", dest="hidden_dims", type=lambda s: s,
                   help="comma-separated hidden layer widths")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--l2-weight-decay", type=float, dest="l2_weight_decay")
    p.add_argument("--model-out", dest="model_out")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("attack", help="run a per-sample attack and export it")
    _add_common(p)
    _add_dataset_flags(p)
    p.add_argument("--model", dest="model_path")
    p.add_argument("--attack", required=True,
                   choices=[k.value for k in AttackKind])
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--fgsm-eps", type=float, dest="fgsm_eps")
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("universalize",
                       help="build a universal direction from sampled attacks")
    _add_common(p)
    _add_dataset_flags(p)
    p.add_argument("--model", dest="model_path")
    p.add_argument("--attack", required=True,
                   choices=[k.value for k in AttackKind] + ["mdfff", "random"])
    p.add_argument("--samples", type=int)
    p.add_argument("--fgsm-eps", type=float, dest="fgsm_eps")
    p.add_argument("--emit-image", action="store_true", dest="emit_image",
                   help="also write the direction as a PGM image "
                        "(square input dimension only)")
    p.set_defaults(func=_cmd_universalize)

    p = sub.add_parser("evaluate", help="fooling rates of a saved direction")
    _add_common(p)
    _add_dataset_flags(p)
    p.add_argument("--model", dest="model_path")
    p.add_argument("--perturbation", required=True,
                   help="basename of the .mat/.json perturbation pair")
    p.add_argument("--norms", type=float, nargs="+",
                   help="absolute norm grid (default: percent grid)")
    p.add_argument("--clip-mode", dest="clip_mode", choices=["none", "clip01"])
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("compare",
                       help="all universalization methods, side by side")
    _add_common(p)
    _add_dataset_flags(p)
    p.add_argument("--model", dest="model_path")
    p.add_argument("--sample-size", type=int, dest="sample_size")
    p.add_argument("--eval-size", type=int, dest="eval_size")
    p.add_argument("--epochs", type=int)
    p.add_argument("--include-construction-samples", action="store_true",
                   default=None, dest="include_construction_samples")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("sweep", help="construction batch-size sweep")
    _add_common(p)
    _add_dataset_flags(p)
    p.add_argument("--model", dest="model_path")
    p.add_argument("--attack", default="gradient",
                   choices=[k.value for k in AttackKind])
    p.add_argument("--sizes", type=int, nargs="+", default=[16, 64, 256, 1024])
    p.add_argument("--num-seeds", type=int, default=3)
    p.add_argument("--eval-size", type=int, dest="eval_size")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("theory-check",
                       help="verify the spectral bounds empirically")
    _add_common(p)
    p.add_argument("--dims", type=int, nargs="+", default=[4, 16, 64])
    p.add_argument("--deltas", type=float, nargs="+", default=[0.3, 0.5, 0.7])
    p.add_argument("--trials", type=int, default=2)
    p.add_argument("--n-eval", type=int, dest="n_eval", default=2000)
    p.add_argument("--pool-size", type=int, dest="pool_size", default=None,
                   help="population proxy pool (default: source-dependent)")
    p.add_argument("--spiked-dim", type=int, dest="spiked_dim", default=16)
    p.add_argument("--m-grid", type=int, nargs="+", dest="m_grid",
                   default=[64, 256, 1024])
    p.add_argument("--trials-thm2", type=int, dest="trials_thm2", default=10)
    p.set_defaults(func=_cmd_theory_check)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InternalError, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
