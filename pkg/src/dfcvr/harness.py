"""Experiment protocols: offline correction, online update, timing.

The offline protocol trains each baseline on the same pre-cutoff core
window and evaluates everything on the held-out test day with true
labels. The online protocol starts from the stale pretrained model and
applies influence updates (with and without integrating newly arrived
samples) against a full retrain reference. The timing protocol measures
update cost versus training cost across dataset sizes.

Every method validates on the last pre-cutoff day under its own label
view. The canonical post-cutoff validation window cannot serve the stale
view: clicks there cannot have converted before the training cutoff, so
their observed labels are all zero.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from . import influence, metrics, models, solvers
from .data import (
    Dataset,
    Observed,
    Oracle,
    Retrain,
    SyntheticConfig,
    arrival_set,
    generate_synthetic,
    labels_of,
    load_csv,
    reversal_set,
    temporal_split,
)
from .errors import ConfigError, DfcvrError
from .training import TrainConfig, train

SCHEMA_VERSION = 1

VALID_METHODS = ("vanilla", "retrain", "oracle", "ifdfm", "ifdfm_wo_add")
ONLINE_METHODS = ("pretrain", "ifdfm", "ifdfm_wo_add", "retrain_online")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    ``data`` is either synthetic generator settings or a CSV path. ``t``
    is the training cutoff, ``t_prime`` the evaluation time, ``d_test``
    the test-window length; all in seconds, windows half-open.
    """

    data: SyntheticConfig | str
    t: int
    t_prime: int
    d_test: int
    model: models.ModelSpec
    train: TrainConfig = field(default_factory=TrainConfig)
    methods: tuple[str, ...] = ("vanilla", "retrain", "ifdfm")
    seeds: tuple[int, ...] = (0,)
    solver: str = "sq"
    solver_config: solvers.SolverConfig | None = None
    damping: float = 1e-3
    timing_sizes: tuple[int, ...] = (25_000, 50_000, 100_000)
    output_dir: str | None = None

    def validate(self) -> None:
        if isinstance(self.data, SyntheticConfig):
            self.data.validate()
        elif not isinstance(self.data, str):
            raise ConfigError("data must be synthetic settings or a CSV path")
        if not self.t < self.t_prime:
            raise ConfigError("need t < t_prime")
        if self.d_test <= 0:
            raise ConfigError("d_test must be positive")
        if self.t > self.t_prime - self.d_test:
            raise ConfigError(
                "validation window [t_prime - d_test, t_prime) overlaps "
                "the training window"
            )
        if self.t <= self.d_test:
            raise ConfigError(
                "training window too short to carve a validation day"
            )
        if not self.methods:
            raise ConfigError("methods must be non-empty")
        for m in self.methods:
            if m not in VALID_METHODS:
                raise ConfigError(
                    f"unknown method {m!r}; valid: {', '.join(VALID_METHODS)}"
                )
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.solver not in ("cg", "neumann", "sq"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if self.damping < 0:
            raise ConfigError("damping must be non-negative")
        if not self.timing_sizes or any(s <= 0 for s in self.timing_sizes):
            raise ConfigError("timing_sizes must be positive")
        self.train.validate()

    def to_json_dict(self) -> dict:
        if isinstance(self.data, SyntheticConfig):
            data: Any = {
                "n": self.data.n,
                "feature_dim": self.data.feature_dim,
                "target_cvr": self.data.target_cvr,
                "delay_mean_tau": self.data.delay_mean_tau,
                "horizon": self.data.horizon,
                "drift_angle_per_day": self.data.drift_angle_per_day,
                "seed": self.data.seed,
            }
        else:
            data = {"csv": self.data}
        model: dict[str, Any] = {"l2_coeff": self.model.l2_coeff,
                                 "input_dim": self.model.input_dim}
        if isinstance(self.model, models.Mlp):
            model["kind"] = "mlp"
            model["hidden_dims"] = list(self.model.hidden_dims)
        else:
            model["kind"] = "logreg"
        solver_config = None
        if self.solver_config is not None:
            sc = self.solver_config
            solver_config = {
                "tol_rel_residual": sc.tol_rel_residual,
                "max_iters": sc.max_iters,
                "max_epochs": sc.max_epochs,
                "minibatch_size": sc.minibatch_size,
                "learning_rate": sc.learning_rate,
                "neumann_terms": sc.neumann_terms,
                "neumann_scale": sc.neumann_scale,
                "seed": sc.seed,
            }
        return {
            "data": data,
            "t": self.t,
            "t_prime": self.t_prime,
            "d_test": self.d_test,
            "model": model,
            "train": {
                "batch_size": self.train.batch_size,
                "learning_rate": self.train.learning_rate,
                "max_epochs": self.train.max_epochs,
                "early_stop_patience": self.train.early_stop_patience,
                "seed": self.train.seed,
                "l2_coeff": self.train.l2_coeff,
            },
            "methods": list(self.methods),
            "seeds": list(self.seeds),
            "solver": self.solver,
            "solver_config": solver_config,
            "damping": self.damping,
            "timing_sizes": list(self.timing_sizes),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_json_dict(cls, raw: dict) -> "ExperimentConfig":
        def take(d: dict, allowed: set[str], where: str) -> None:
            unknown = set(d) - allowed
            if unknown:
                raise ConfigError(
                    f"unknown {where} keys: {', '.join(sorted(unknown))}"
                )

        take(raw, {
            "data", "t", "t_prime", "d_test", "model", "train", "methods",
            "seeds", "solver", "solver_config", "damping", "timing_sizes",
            "output_dir",
        }, "config")
        try:
            raw_data = raw["data"]
            if isinstance(raw_data, str):
                data: SyntheticConfig | str = raw_data
            elif "csv" in raw_data:
                take(raw_data, {"csv"}, "data")
                data = str(raw_data["csv"])
            else:
                take(raw_data, {
                    "n", "feature_dim", "target_cvr", "delay_mean_tau",
                    "horizon", "drift_angle_per_day", "seed",
                }, "data")
                data = SyntheticConfig(
                    n=int(raw_data["n"]),
                    feature_dim=int(raw_data["feature_dim"]),
                    target_cvr=float(raw_data["target_cvr"]),
                    delay_mean_tau=float(raw_data["delay_mean_tau"]),
                    horizon=int(raw_data["horizon"]),
                    drift_angle_per_day=float(
                        raw_data.get("drift_angle_per_day", 0.0)
                    ),
                    seed=int(raw_data.get("seed", 0)),
                )
            raw_model = dict(raw["model"])
            take(raw_model, {"kind", "input_dim", "hidden_dims", "l2_coeff"},
                 "model")
            input_dim = raw_model.get("input_dim")
            if input_dim is None and isinstance(data, SyntheticConfig):
                input_dim = data.feature_dim
            if input_dim is None:
                raise ConfigError("model.input_dim is required for CSV data")
            l2 = float(raw_model.get("l2_coeff", 0.0))
            if raw_model.get("kind", "mlp") == "logreg":
                model: models.ModelSpec = models.LogisticRegression(
                    input_dim=int(input_dim), l2_coeff=l2
                )
            elif raw_model.get("kind", "mlp") == "mlp":
                model = models.Mlp(
                    input_dim=int(input_dim),
                    hidden_dims=tuple(
                        int(h) for h in raw_model.get("hidden_dims",
                                                      (256, 256, 128))
                    ),
                    l2_coeff=l2,
                )
            else:
                raise ConfigError(
                    f"unknown model kind {raw_model.get('kind')!r}"
                )
            raw_train = dict(raw.get("train", {}))
            take(raw_train, {
                "batch_size", "learning_rate", "max_epochs",
                "early_stop_patience", "seed", "l2_coeff",
            }, "train")
            train_cfg = TrainConfig(
                batch_size=int(raw_train.get("batch_size", 1024)),
                learning_rate=float(raw_train.get("learning_rate", 1e-3)),
                max_epochs=int(raw_train.get("max_epochs", 30)),
                early_stop_patience=int(
                    raw_train.get("early_stop_patience", 5)
                ),
                seed=int(raw_train.get("seed", 0)),
                l2_coeff=(
                    None if raw_train.get("l2_coeff") is None
                    else float(raw_train["l2_coeff"])
                ),
            )
            raw_sc = raw.get("solver_config")
            solver_config = None
            if raw_sc is not None:
                take(dict(raw_sc), {
                    "tol_rel_residual", "max_iters", "max_epochs",
                    "minibatch_size", "learning_rate", "neumann_terms",
                    "neumann_scale", "seed",
                }, "solver_config")
                defaults = solvers.SolverConfig()
                solver_config = solvers.SolverConfig(
                    tol_rel_residual=float(
                        raw_sc.get("tol_rel_residual",
                                   defaults.tol_rel_residual)
                    ),
                    max_iters=int(raw_sc.get("max_iters",
                                             defaults.max_iters)),
                    max_epochs=int(raw_sc.get("max_epochs",
                                              defaults.max_epochs)),
                    minibatch_size=int(
                        raw_sc.get("minibatch_size", defaults.minibatch_size)
                    ),
                    learning_rate=float(
                        raw_sc.get("learning_rate", defaults.learning_rate)
                    ),
                    neumann_terms=int(
                        raw_sc.get("neumann_terms", defaults.neumann_terms)
                    ),
                    neumann_scale=(
                        None if raw_sc.get("neumann_scale") is None
                        else float(raw_sc["neumann_scale"])
                    ),
                    seed=int(raw_sc.get("seed", defaults.seed)),
                )
            config = cls(
                data=data,
                t=int(raw["t"]),
                t_prime=int(raw["t_prime"]),
                d_test=int(raw["d_test"]),
                model=model,
                train=train_cfg,
                methods=tuple(raw.get("methods",
                                      ("vanilla", "retrain", "ifdfm"))),
                seeds=tuple(int(s) for s in raw.get("seeds", (0,))),
                solver=str(raw.get("solver", "sq")),
                solver_config=solver_config,
                damping=float(raw.get("damping", 1e-3)),
                timing_sizes=tuple(
                    int(s) for s in raw.get("timing_sizes",
                                            (25_000, 50_000, 100_000))
                ),
                output_dir=raw.get("output_dir"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad experiment config: {exc}") from None
        config.validate()
        return config


def _stage(name: str):
    """Context manager attaching the failing stage to package errors."""

    class _Stage:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and isinstance(exc, DfcvrError):
                if not getattr(exc, "stage", None):
                    exc.stage = name
            return False

    return _Stage()


@dataclass
class _Splits:
    core: Dataset
    fit_valid: Dataset
    valid: Dataset
    test: Dataset


def _load_data(config: ExperimentConfig) -> Dataset:
    if isinstance(config.data, SyntheticConfig):
        return generate_synthetic(config.data)
    return load_csv(config.data)


def _split(config: ExperimentConfig, dataset: Dataset) -> _Splits:
    train_full, valid, test = temporal_split(
        dataset, config.t, config.t_prime, config.d_test
    )
    border = config.t - config.d_test
    core_idx = np.flatnonzero(train_full.click_ts < border)
    fit_idx = np.flatnonzero(train_full.click_ts >= border)
    if core_idx.size == 0 or fit_idx.size == 0:
        raise ConfigError(
            "training window cannot be split into core and validation days"
        )
    return _Splits(
        core=train_full.subset(core_idx),
        fit_valid=train_full.subset(fit_idx),
        valid=valid,
        test=test,
    )


def _effective_spec(config: ExperimentConfig) -> models.ModelSpec:
    if config.train.l2_coeff is None:
        return config.model
    return replace(config.model, l2_coeff=config.train.l2_coeff)


def _train_baseline(
    config: ExperimentConfig,
    splits: _Splits,
    method: str,
    seed: int,
) -> tuple[np.ndarray, float]:
    views = {
        "vanilla": Observed(config.t),
        "retrain": Retrain(config.t_prime),
        "oracle": Oracle(),
    }
    train_cfg = replace(config.train, seed=seed)
    start = time.perf_counter()
    params = train(
        splits.core, views[method], config.model, train_cfg, splits.fit_valid
    )
    return params, time.perf_counter() - start


def _influence_update(
    config: ExperimentConfig,
    splits: _Splits,
    dataset: Dataset,
    theta: np.ndarray,
    include_add: bool,
) -> tuple[np.ndarray, influence.UpdateReport]:
    spec = _effective_spec(config)
    arrivals = None
    if include_add:
        arrivals = arrival_set(dataset, config.t, config.t_prime)
    request = influence.InfluenceRequest(
        reversal_indices=reversal_set(splits.core, config.t, config.t_prime),
        arrivals=arrivals,
        include_delay=True,
        include_add=include_add,
        solver=config.solver,
        solver_config=config.solver_config,
        damping=config.damping,
    )
    report = influence.delta_total(
        spec, theta, splits.core, Observed(config.t), request
    )
    return influence.apply_update(theta, report), report


def _evaluate(
    config: ExperimentConfig, params: np.ndarray, test: Dataset
) -> metrics.MethodMetrics:
    spec = _effective_spec(config)
    scores = models.predict(spec, params, test.features)
    return metrics.compute_method_metrics(scores, labels_of(test, Oracle()))


def _aggregate(per_seed: list[dict]) -> dict:
    """Mean and variance of every per-method metric and RI across seeds."""
    method_names = list(per_seed[0]["methods"])
    metric_names = ("auc", "prauc", "log_loss")
    mean: dict[str, Any] = {"methods": {}, "ri": {}}
    variance: dict[str, Any] = {"methods": {}, "ri": {}}
    for m in method_names:
        mean["methods"][m] = {}
        variance["methods"][m] = {}
        for k in metric_names:
            vals = np.array([s["methods"][m][k] for s in per_seed])
            mean["methods"][m][k] = float(vals.mean())
            variance["methods"][m][k] = float(vals.var())
    for m in per_seed[0]["ri"]:
        mean["ri"][m] = {}
        variance["ri"][m] = {}
        for k in metric_names:
            vals = [s["ri"][m][k] for s in per_seed]
            known = [v for v in vals if v is not None]
            if known:
                mean["ri"][m][k] = float(np.mean(known))
                variance["ri"][m][k] = float(np.var(known))
            else:
                mean["ri"][m][k] = None
                variance["ri"][m][k] = None
    return {"mean": mean, "variance": variance}


def _json_default(obj: Any):
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_report(config: ExperimentConfig, report: dict) -> None:
    if config.output_dir is None:
        return
    os.makedirs(config.output_dir, exist_ok=True)
    path = os.path.join(config.output_dir, f"{report['protocol']}_report.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True,
                  default=_json_default)
        fh.write("\n")


def _write_metrics_csv(config: ExperimentConfig, report: dict) -> None:
    if config.output_dir is None or "per_seed" not in report:
        return
    path = os.path.join(config.output_dir,
                        f"{report['protocol']}_metrics.csv")
    fields = ["protocol", "seed", "method", "auc", "prauc", "log_loss",
              "ri_auc", "ri_prauc", "ri_log_loss"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        rows = [(str(s["seed"]), s) for s in report["per_seed"]]
        rows.append(("mean", report["aggregate"]["mean"]))
        for seed_label, block in rows:
            for method, vals in block["methods"].items():
                row = {
                    "protocol": report["protocol"],
                    "seed": seed_label,
                    "method": method,
                    **{k: vals[k] for k in ("auc", "prauc", "log_loss")},
                }
                ri_vals = block["ri"].get(method, {})
                for k in ("auc", "prauc", "log_loss"):
                    v = ri_vals.get(k)
                    row[f"ri_{k}"] = "" if v is None else v
                writer.writerow(row)


def _save_checkpoint(
    config: ExperimentConfig, name: str, seed: int, params: np.ndarray
) -> None:
    if config.output_dir is None:
        return
    os.makedirs(config.output_dir, exist_ok=True)
    models.save_checkpoint(
        os.path.join(config.output_dir, f"{name}_seed{seed}.ckpt"),
        _effective_spec(config),
        params,
    )


def run_offline(config: ExperimentConfig) -> dict:
    """Delay-correction experiment at a fixed training cutoff.

    Baselines are trained per seed on the shared core window under their
    own label views; influence methods update the vanilla parameters by
    label reversal only. Everything is scored on the test day with true
    labels, with RI computed against the vanilla/retrain gap.
    """
    config.validate()
    with _stage("data"):
        dataset = _load_data(config)
        splits = _split(config, dataset)
    methods = list(config.methods)
    need_vanilla = bool(
        {"vanilla", "ifdfm", "ifdfm_wo_add"} & set(methods)
    )
    per_seed = []
    for seed in config.seeds:
        method_metrics: dict[str, metrics.MethodMetrics] = {}
        timings: dict[str, float] = {}
        vanilla_params = None
        if need_vanilla:
            with _stage("train vanilla"):
                vanilla_params, wall = _train_baseline(
                    config, splits, "vanilla", seed
                )
            timings["train_vanilla_s"] = wall
            _save_checkpoint(config, "vanilla", seed, vanilla_params)
        for method in ("retrain", "oracle"):
            if method in methods:
                with _stage(f"train {method}"):
                    params, wall = _train_baseline(
                        config, splits, method, seed
                    )
                timings[f"train_{method}_s"] = wall
                _save_checkpoint(config, method, seed, params)
                method_metrics[method] = _evaluate(config, params, splits.test)
        if "vanilla" in methods:
            method_metrics["vanilla"] = _evaluate(
                config, vanilla_params, splits.test
            )
        # Offline influence has no arrivals, so both variants coincide.
        updated = None
        for method in ("ifdfm", "ifdfm_wo_add"):
            if method not in methods:
                continue
            if updated is None:
                with _stage("influence update"):
                    updated, report = _influence_update(
                        config, splits, dataset, vanilla_params,
                        include_add=False,
                    )
                timings["update_s"] = report.wall_time
                timings["update_residual_rel"] = report.residual_rel
            _save_checkpoint(config, method, seed, updated)
            method_metrics[method] = _evaluate(config, updated, splits.test)
        with _stage("evaluate"):
            ri = metrics.ri_block(method_metrics)
        per_seed.append({
            "seed": seed,
            "methods": {k: v.to_dict() for k, v in method_metrics.items()},
            "ri": ri,
            "timings": timings,
        })
    report = {
        "schema_version": SCHEMA_VERSION,
        "protocol": "offline",
        "config": config.to_json_dict(),
        "per_seed": per_seed,
        "aggregate": _aggregate(per_seed),
    }
    _write_report(config, report)
    _write_metrics_csv(config, report)
    return report


def run_online(config: ExperimentConfig) -> dict:
    """Update-versus-retrain experiment over the deployment gap.

    Runs the frozen pretrained model, influence updates with and without
    new-arrival integration, and a full retrain on all data before the
    evaluation time. RI is computed against the pretrain/retrain gap.
    """
    config.validate()
    with _stage("data"):
        dataset = _load_data(config)
        splits = _split(config, dataset)
    per_seed = []
    for seed in config.seeds:
        method_metrics: dict[str, metrics.MethodMetrics] = {}
        timings: dict[str, float] = {}
        with _stage("train pretrain"):
            pretrain_params, wall = _train_baseline(
                config, splits, "vanilla", seed
            )
        timings["train_pretrain_s"] = wall
        _save_checkpoint(config, "pretrain", seed, pretrain_params)
        method_metrics["pretrain"] = _evaluate(
            config, pretrain_params, splits.test
        )
        for method, include_add in (("ifdfm", True), ("ifdfm_wo_add", False)):
            with _stage(f"influence update {method}"):
                updated, report = _influence_update(
                    config, splits, dataset, pretrain_params,
                    include_add=include_add,
                )
            timings[f"update_{method}_s"] = report.wall_time
            _save_checkpoint(config, method, seed, updated)
            method_metrics[method] = _evaluate(config, updated, splits.test)
        with _stage("train retrain_online"):
            online_idx = np.flatnonzero(dataset.click_ts < config.t_prime)
            online_data = dataset.subset(online_idx)
            train_cfg = replace(config.train, seed=seed)
            start = time.perf_counter()
            retrain_params = train(
                online_data,
                Retrain(config.t_prime),
                config.model,
                train_cfg,
                splits.valid,
            )
            timings["train_retrain_online_s"] = time.perf_counter() - start
        _save_checkpoint(config, "retrain_online", seed, retrain_params)
        method_metrics["retrain_online"] = _evaluate(
            config, retrain_params, splits.test
        )
        ri = metrics.ri_block(
            method_metrics,
            vanilla_key="pretrain",
            retrain_key="retrain_online",
        )
        per_seed.append({
            "seed": seed,
            "methods": {k: v.to_dict() for k, v in method_metrics.items()},
            "ri": ri,
            "timings": timings,
        })
    report = {
        "schema_version": SCHEMA_VERSION,
        "protocol": "online",
        "config": config.to_json_dict(),
        "per_seed": per_seed,
        "aggregate": _aggregate(per_seed),
    }
    _write_report(config, report)
    _write_metrics_csv(config, report)
    return report


def run_timing(config: ExperimentConfig) -> dict:
    """Wall-clock comparison of influence updates against (re)training.

    Regenerates the synthetic dataset at each size in ``timing_sizes``,
    times vanilla training, retraining, and the influence update, and
    reports update/train ratios. Generation and IO are excluded from all
    timed stages.
    """
    config.validate()
    if not isinstance(config.data, SyntheticConfig):
        raise ConfigError("the timing protocol requires synthetic data")
    seed = config.seeds[0]
    per_size = []
    for size in config.timing_sizes:
        sized = replace(config.data, n=size)
        with _stage("data"):
            dataset = generate_synthetic(sized)
            splits = _split(config, dataset)
        with _stage("train vanilla"):
            vanilla_params, train_s = _train_baseline(
                config, splits, "vanilla", seed
            )
        with _stage("train retrain"):
            _, retrain_s = _train_baseline(config, splits, "retrain", seed)
        with _stage("influence update"):
            start = time.perf_counter()
            _, report = _influence_update(
                config, splits, dataset, vanilla_params, include_add=False
            )
            update_s = time.perf_counter() - start
        per_size.append({
            "n": size,
            "train_vanilla_s": train_s,
            "train_retrain_s": retrain_s,
            "update_s": update_s,
            "update_over_train": update_s / train_s,
            "update_residual_rel": report.residual_rel,
        })
    ratios = [row["update_over_train"] for row in per_size]
    report_dict = {
        "schema_version": SCHEMA_VERSION,
        "protocol": "timing",
        "config": config.to_json_dict(),
        "per_size": per_size,
        "ratios": ratios,
    }
    _write_report(config, report_dict)
    if config.output_dir is not None:
        path = os.path.join(config.output_dir, "timing.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(per_size[0]))
            writer.writeheader()
            writer.writerows(per_size)
    return report_dict


def compare_solvers(config: ExperimentConfig) -> dict:
    """Run all three solvers on one shared system and record their traces.

    Trains the vanilla model once, builds the label-reversal right-hand
    side, and solves the same damped system with cg, neumann and sq.
    Solver failures are recorded per solver instead of aborting the
    comparison.
    """
    config.validate()
    seed = config.seeds[0]
    with _stage("data"):
        dataset = _load_data(config)
        splits = _split(config, dataset)
    with _stage("train vanilla"):
        theta, _ = _train_baseline(config, splits, "vanilla", seed)
    spec = _effective_spec(config)
    view = Observed(config.t)
    request = influence.InfluenceRequest(
        reversal_indices=reversal_set(splits.core, config.t, config.t_prime),
        solver="sq",
        damping=config.damping,
    )
    rhs = influence.build_rhs(spec, theta, splits.core, view, request)
    operator = solvers.DampedHessianOperator(
        spec, theta, splits.core.features, labels_of(splits.core, view),
        lam=config.damping,
    )
    summary: dict[str, Any] = {}
    traces: dict[str, list[float]] = {}
    for kind in ("cg", "neumann", "sq"):
        solver_config = config.solver_config
        if solver_config is None:
            solver_config = solvers.default_solver_config(kind)
        try:
            if kind == "cg":
                result = solvers.cg_solve(operator, rhs.b, solver_config)
            elif kind == "neumann":
                result = solvers.neumann_solve(operator, rhs.b, solver_config)
            else:
                result = solvers.sq_solve(
                    solvers.QuadraticObjective(operator, rhs.b),
                    solver_config,
                )
        except solvers.SolverError as exc:
            summary[kind] = {"error": str(exc)}
            traces[kind] = []
            continue
        summary[kind] = {
            "residual_rel": result.residual_rel,
            "iterations": result.iterations,
            "converged": bool(result.converged),
            "wall_time_s": result.wall_time,
            "delta_norm": float(np.linalg.norm(result.delta)),
        }
        traces[kind] = result.trace
    report = {
        "schema_version": SCHEMA_VERSION,
        "protocol": "compare_solvers",
        "config": config.to_json_dict(),
        "solvers": summary,
    }
    _write_report(config, report)
    if config.output_dir is not None:
        path = os.path.join(config.output_dir, "solver_traces.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["solver", "step", "rel_residual"])
            for kind, trace in traces.items():
                for step, rel in enumerate(trace, start=1):
                    writer.writerow([kind, step, rel])
    return report
