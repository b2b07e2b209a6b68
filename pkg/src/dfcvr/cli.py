"""Command-line interface.

Exit codes: 0 on success, 1 for usage, configuration or data-format
errors, 2 for numerical failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from . import influence, metrics, models, solvers
from .data import (
    Observed,
    Oracle,
    Retrain,
    SyntheticConfig,
    arrival_set,
    generate_synthetic,
    labels_of,
    load_csv,
    reversal_set,
    save_csv,
    temporal_split,
)
from .errors import ConfigError, DataFormatError, DfcvrError, NumericalError
from .harness import (
    ExperimentConfig,
    compare_solvers,
    run_offline,
    run_online,
    run_timing,
)
from .training import TrainConfig, train


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that exits with code 1 on usage errors."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise SystemExit(self.exit_code_on_error(message))

    def exit_code_on_error(self, message: str) -> int:
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        return 1


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="dfcvr",
        description=(
            "Delayed-feedback conversion modeling: train, correct stale "
            "labels with influence updates, and run experiment protocols."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    gen = sub.add_parser("generate", help="write a synthetic click log")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--feature-dim", type=int, required=True)
    gen.add_argument("--target-cvr", type=float, required=True)
    gen.add_argument("--delay-mean-tau", type=float, required=True,
                     help="mean conversion delay in seconds")
    gen.add_argument("--horizon", type=int, required=True,
                     help="click timestamps are uniform on [0, horizon)")
    gen.add_argument("--drift-angle-per-day", type=float, default=0.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output CSV path")

    tr = sub.add_parser("train", help="train one baseline from a CSV log")
    tr.add_argument("--data", required=True, help="input CSV path")
    tr.add_argument("--method", choices=("vanilla", "retrain", "oracle"),
                    default="vanilla")
    tr.add_argument("--t", type=int, required=True,
                    help="training cutoff (seconds)")
    tr.add_argument("--t-prime", type=int, required=True,
                    help="evaluation time (seconds)")
    tr.add_argument("--d-test", type=int, required=True,
                    help="test/validation window length (seconds)")
    tr.add_argument("--model", choices=("logreg", "mlp"), default="mlp")
    tr.add_argument("--hidden-dims", default="256,256,128",
                    help="comma-separated MLP widths")
    tr.add_argument("--l2-coeff", type=float, default=0.0)
    tr.add_argument("--batch-size", type=int, default=1024)
    tr.add_argument("--learning-rate", type=float, default=1e-3)
    tr.add_argument("--max-epochs", type=int, default=30)
    tr.add_argument("--patience", type=int, default=5)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--out", required=True, help="output checkpoint path")
    tr.add_argument("--metrics-log", default=None,
                    help="optional per-epoch CSV log path")

    up = sub.add_parser("update",
                        help="apply an influence update to a checkpoint")
    up.add_argument("--checkpoint", required=True)
    up.add_argument("--data", required=True, help="input CSV path")
    up.add_argument("--t", type=int, required=True)
    up.add_argument("--t-prime", type=int, required=True)
    up.add_argument("--train-end", type=int, default=None,
                    help="end of the checkpoint's training window "
                         "(default: t)")
    up.add_argument("--include-add", action="store_true",
                    help="also integrate samples arriving in [t, t_prime)")
    up.add_argument("--solver", choices=("cg", "neumann", "sq"),
                    default="sq")
    up.add_argument("--damping", type=float, default=1e-3)
    up.add_argument("--tol", type=float, default=None,
                    help="relative-residual tolerance")
    up.add_argument("--solver-max-iters", type=int, default=None)
    up.add_argument("--solver-max-epochs", type=int, default=None)
    up.add_argument("--solver-minibatch", type=int, default=None)
    up.add_argument("--solver-learning-rate", type=float, default=None)
    up.add_argument("--neumann-terms", type=int, default=None)
    up.add_argument("--neumann-scale", type=float, default=None)
    up.add_argument("--out", required=True,
                    help="output checkpoint path for updated parameters")
    up.add_argument("--report", default=None,
                    help="optional JSON report path")

    ev = sub.add_parser("evaluate",
                        help="score a checkpoint on the held-out test day")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True, help="input CSV path")
    ev.add_argument("--t-prime", type=int, required=True)
    ev.add_argument("--d-test", type=int, required=True)
    ev.add_argument("--report", default=None,
                    help="optional JSON report path")

    for name, description in (
        ("offline", "offline delay-correction experiment"),
        ("online", "online update-versus-retrain experiment"),
        ("timing", "update-versus-training wall-clock comparison"),
        ("compare-solvers", "solver residual traces on one shared system"),
    ):
        proto = sub.add_parser(name, help=description)
        proto.add_argument("--config", required=True,
                           help="experiment config JSON path")
        proto.add_argument("--out-dir", default=None,
                           help="override the config's output_dir")
        proto.add_argument("--seeds", default=None,
                           help="override seeds, comma-separated")
        proto.add_argument("--methods", default=None,
                           help="override methods, comma-separated")
        proto.add_argument("--solver", default=None,
                           choices=("cg", "neumann", "sq"))
        proto.add_argument("--n", type=int, default=None,
                           help="override the synthetic sample count")
    return parser


def _parse_int_list(raw: str, what: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad {what} list: {raw!r}") from None


def _cmd_generate(args: argparse.Namespace) -> int:
    config = SyntheticConfig(
        n=args.n,
        feature_dim=args.feature_dim,
        target_cvr=args.target_cvr,
        delay_mean_tau=args.delay_mean_tau,
        horizon=args.horizon,
        drift_angle_per_day=args.drift_angle_per_day,
        seed=args.seed,
    )
    save_csv(generate_synthetic(config), args.out)
    print(f"wrote {args.n} samples to {args.out}")
    return 0


def _model_spec(args: argparse.Namespace, input_dim: int) -> models.ModelSpec:
    if args.model == "logreg":
        return models.LogisticRegression(input_dim=input_dim,
                                         l2_coeff=args.l2_coeff)
    return models.Mlp(
        input_dim=input_dim,
        hidden_dims=_parse_int_list(args.hidden_dims, "hidden-dims"),
        l2_coeff=args.l2_coeff,
    )


def _cmd_train(args: argparse.Namespace) -> int:
    dataset = load_csv(args.data)
    views = {
        "vanilla": Observed(args.t),
        "retrain": Retrain(args.t_prime),
        "oracle": Oracle(),
    }
    train_full, _, _ = temporal_split(dataset, args.t, args.t_prime,
                                      args.d_test)
    border = args.t - args.d_test
    core_idx = np.flatnonzero(train_full.click_ts < border)
    fit_idx = np.flatnonzero(train_full.click_ts >= border)
    if core_idx.size == 0 or fit_idx.size == 0:
        raise ConfigError(
            "training window cannot be split into core and validation days"
        )
    spec = _model_spec(args, dataset.feature_dim)
    config = TrainConfig(
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        max_epochs=args.max_epochs,
        early_stop_patience=args.patience,
        seed=args.seed,
    )
    params = train(
        train_full.subset(core_idx),
        views[args.method],
        spec,
        config,
        train_full.subset(fit_idx),
        metrics_log_path=args.metrics_log,
    )
    models.save_checkpoint(args.out, spec, params)
    print(f"wrote checkpoint to {args.out}")
    return 0


def _cmd_update(args: argparse.Namespace) -> int:
    spec, params = models.load_checkpoint(args.checkpoint)
    dataset = load_csv(args.data)
    train_end = args.t if args.train_end is None else args.train_end
    if not 0 < train_end <= args.t:
        raise ConfigError("train-end must lie in (0, t]")
    core = dataset.subset(np.flatnonzero(dataset.click_ts < train_end))
    if len(core) == 0:
        raise ConfigError("no samples before train-end")

    solver_config = solvers.default_solver_config(args.solver)
    overrides = {
        "tol_rel_residual": args.tol,
        "max_iters": args.solver_max_iters,
        "max_epochs": args.solver_max_epochs,
        "minibatch_size": args.solver_minibatch,
        "learning_rate": args.solver_learning_rate,
        "neumann_terms": args.neumann_terms,
        "neumann_scale": args.neumann_scale,
    }
    solver_config = replace(
        solver_config,
        **{k: v for k, v in overrides.items() if v is not None},
    )
    arrivals = None
    if args.include_add:
        arrivals = arrival_set(dataset, args.t, args.t_prime)
    request = influence.InfluenceRequest(
        reversal_indices=reversal_set(core, args.t, args.t_prime),
        arrivals=arrivals,
        include_delay=True,
        include_add=args.include_add,
        solver=args.solver,
        solver_config=solver_config,
        damping=args.damping,
    )
    report = influence.delta_total(spec, params, core, Observed(args.t),
                                   request)
    updated = influence.apply_update(params, report)
    models.save_checkpoint(args.out, spec, updated)
    payload = report.to_json_dict()
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.report is not None:
        with open(args.report, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    spec, params = models.load_checkpoint(args.checkpoint)
    dataset = load_csv(args.data)
    clicks = dataset.click_ts
    idx = np.flatnonzero(
        (clicks >= args.t_prime) & (clicks < args.t_prime + args.d_test)
    )
    if idx.size == 0:
        raise ConfigError("test window is empty")
    test = dataset.subset(idx)
    scores = models.predict(spec, params, test.features)
    mm = metrics.compute_method_metrics(scores, labels_of(test, Oracle()))
    payload = mm.to_dict()
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.report is not None:
        with open(args.report, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def _load_experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.config}: invalid JSON: {exc}") from None
    config = ExperimentConfig.from_json_dict(raw)
    if args.out_dir is not None:
        config = replace(config, output_dir=args.out_dir)
    if args.seeds is not None:
        config = replace(config, seeds=_parse_int_list(args.seeds, "seeds"))
    if args.methods is not None:
        config = replace(
            config,
            methods=tuple(m for m in args.methods.split(",") if m.strip()),
        )
    if args.solver is not None:
        config = replace(config, solver=args.solver)
    if args.n is not None:
        if not isinstance(config.data, SyntheticConfig):
            raise ConfigError("--n only applies to synthetic data configs")
        config = replace(config, data=replace(config.data, n=args.n))
    config.validate()
    return config


def _print_protocol_summary(report: dict) -> None:
    print(json.dumps(report, indent=2, sort_keys=True,
                     default=lambda o: float(o)))


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    commands = {
        "generate": _cmd_generate,
        "train": _cmd_train,
        "update": _cmd_update,
        "evaluate": _cmd_evaluate,
    }
    protocols = {
        "offline": run_offline,
        "online": run_online,
        "timing": run_timing,
        "compare-solvers": compare_solvers,
    }
    try:
        if args.command in commands:
            return commands[args.command](args)
        config = _load_experiment_config(args)
        report = protocols[args.command](config)
        _print_protocol_summary(report)
        return 0
    except (ConfigError, DataFormatError) as exc:
        _print_error(exc)
        return 1
    except NumericalError as exc:
        _print_error(exc)
        return 2
    except DfcvrError as exc:
        _print_error(exc)
        return 1


def _print_error(exc: DfcvrError) -> None:
    stage = getattr(exc, "stage", None)
    prefix = f"dfcvr: error in stage '{stage}': " if stage else "dfcvr: error: "
    print(f"{prefix}{exc}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
