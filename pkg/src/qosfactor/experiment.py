"""Reproducible experiment harness: splits, per-cell runs, and ratio grids.

A cell is one (train_ratio, outlier_ratio) setting; it is run ``repeats``
times with derived seeds (base_seed + repeat) and aggregated.  Everything
downstream of the seeds is deterministic, so methods sharing a base seed see
identical train/test splits and identical retained test sets.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import mf, ncp
from .data import ObservationMatrix, ObservationTensor
from .errors import DivergenceError
from .iforest import ForestConfig
from .losses import Loss
from .metrics import evaluate_excluding_outliers

MATRIX_METHODS = ("cmf", "mf2", "mf1")
TENSOR_METHODS = ("ctf", "tf-l2-limit")
METHODS = MATRIX_METHODS + TENSOR_METHODS

CSV_HEADER = ("method,metric,train_ratio,outlier_ratio,mean_mae,std_mae,"
              "mean_rmse,std_rmse,mean_fit_seconds,iterations")


@dataclass
class ExperimentConfig:
    """One method run against one dataset over a ratio grid."""

    observations: ObservationMatrix | ObservationTensor
    method: str = "cmf"
    metric: str = "synthetic"
    mf_config: mf.MfConfig = field(default_factory=mf.MfConfig)
    tf_config: ncp.TfConfig = field(default_factory=ncp.TfConfig)
    train_ratios: tuple[float, ...] = (0.5,)
    outlier_ratios: tuple[float, ...] = (0.1,)
    repeats: int = 10
    base_seed: int = 0
    forest_trees: int = 100
    forest_subsample: int = 256
    measure_time: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        for ratio in self.train_ratios:
            if not 0.0 < ratio < 1.0:
                raise ValueError(f"train ratio {ratio} outside (0, 1)")
        for ratio in self.outlier_ratios:
            if not 0.0 <= ratio < 1.0:
                raise ValueError(f"outlier ratio {ratio} outside [0, 1)")
        is_tensor = isinstance(self.observations, ObservationTensor)
        if is_tensor and self.method in MATRIX_METHODS:
            raise ValueError(f"method {self.method!r} needs matrix data, got a tensor")
        if not is_tensor and self.method in TENSOR_METHODS:
            raise ValueError(f"method {self.method!r} needs tensor data, got a matrix")


@dataclass
class ResultRecord:
    """Aggregated numbers for one (method, train_ratio, outlier_ratio) cell."""

    method: str
    metric: str
    train_ratio: float
    outlier_ratio: float
    mean_mae: float
    std_mae: float
    mean_rmse: float
    std_rmse: float
    mean_fit_seconds: float
    iterations: float


def split(observations, train_ratio: float, seed: int):
    """Uniform random partition of the entries into train and test subsets."""
    if not 0.0 < train_ratio < 1.0:
        raise ValueError("train_ratio must lie in (0, 1)")
    n = observations.n_entries
    n_train = int(np.floor(train_ratio * n + 0.5))
    if n_train == 0 or n_train == n:
        raise ValueError(f"train_ratio {train_ratio} leaves an empty side for {n} entries")
    perm = np.random.default_rng(seed).permutation(n)
    return observations.subset(perm[:n_train]), observations.subset(perm[n_train:])


def solver_config(method: str, mf_config: mf.MfConfig, tf_config: ncp.TfConfig, seed: int):
    """Specialize the base solver settings for one method and seed."""
    if method in MATRIX_METHODS:
        if method == "cmf":
            return replace(mf_config, loss=Loss.cauchy(mf_config.loss.gamma), seed=seed)
        if method == "mf2":
            return replace(mf_config, loss=Loss.l2(), seed=seed)
        return replace(mf_config, loss=Loss.l1(), seed=seed)
    if method == "ctf":
        return replace(tf_config, seed=seed)
    # Large loss scale with no regularization matches the plain Frobenius
    # nonnegative-CP multiplicative sweep up to a constant reweighting.
    return replace(tf_config, gamma=1e6,
                   reg_user=0.0, reg_service=0.0, reg_time=0.0, seed=seed)


def _fit_and_predict(config: ExperimentConfig, train, test, seed: int):
    solver_cfg = solver_config(config.method, config.mf_config, config.tf_config, seed)
    tic = time.perf_counter()
    if config.method in MATRIX_METHODS:
        model = mf.fit(train, solver_cfg)
        elapsed = time.perf_counter() - tic
        preds = mf.predict(model, np.column_stack((test.users, test.services)))
    else:
        model = ncp.fit(train, solver_cfg)
        elapsed = time.perf_counter() - tic
        preds = ncp.predict_entries(model, np.column_stack((test.users, test.services, test.times)))
    return model, preds, (elapsed if config.measure_time else 0.0)


def iter_repeats(config: ExperimentConfig, train_ratio: float, outlier_ratio: float):
    """Yield (repeat, model, evaluation report, fit seconds) for each derived seed."""
    for rep in range(1, config.repeats + 1):
        seed = config.base_seed + rep
        train, test = split(config.observations, train_ratio, seed)
        try:
            model, preds, elapsed = _fit_and_predict(config, train, test, seed)
        except DivergenceError as exc:
            raise DivergenceError(
                f"cell method={config.method} train_ratio={train_ratio} "
                f"outlier_ratio={outlier_ratio} repeat={rep}: {exc}"
            ) from exc
        forest = ForestConfig(config.forest_trees, config.forest_subsample, seed)
        report = evaluate_excluding_outliers(
            test.values, preds, outlier_ratio, forest,
            groups=test.services, method_tag=config.method,
        )
        yield rep, model, report, elapsed


def run_cell(config: ExperimentConfig, train_ratio: float, outlier_ratio: float) -> ResultRecord:
    """Fit/evaluate ``repeats`` times with derived seeds and aggregate."""
    maes, rmses, secs, iters = [], [], [], []
    for _, model, report, elapsed in iter_repeats(config, train_ratio, outlier_ratio):
        maes.append(report.mae)
        rmses.append(report.rmse)
        secs.append(elapsed)
        iters.append(model.iterations_run)
    return ResultRecord(
        method=config.method,
        metric=config.metric,
        train_ratio=train_ratio,
        outlier_ratio=outlier_ratio,
        mean_mae=float(np.mean(maes)),
        std_mae=float(np.std(maes)),
        mean_rmse=float(np.mean(rmses)),
        std_rmse=float(np.std(rmses)),
        mean_fit_seconds=float(np.mean(secs)),
        iterations=float(np.mean(iters)),
    )


def run_grid(config: ExperimentConfig) -> list[ResultRecord]:
    """Run every (train_ratio, outlier_ratio) cell in declaration order."""
    if not config.train_ratios or not config.outlier_ratios:
        raise ValueError("train_ratios and outlier_ratios must be nonempty")
    records = []
    for train_ratio in config.train_ratios:
        for outlier_ratio in config.outlier_ratios:
            records.append(run_cell(config, train_ratio, outlier_ratio))
    return records


def write_csv(records: list[ResultRecord], target) -> None:
    """Write records as CSV; floats use repr so parsing recovers them exactly."""
    stream = target if hasattr(target, "write") else open(target, "w", encoding="utf-8")
    close = stream is not target
    try:
        stream.write(CSV_HEADER + "\n")
        for r in records:
            stream.write(
                f"{r.method},{r.metric},{r.train_ratio!r},{r.outlier_ratio!r},"
                f"{r.mean_mae!r},{r.std_mae!r},{r.mean_rmse!r},{r.std_rmse!r},"
                f"{r.mean_fit_seconds!r},{r.iterations!r}\n"
            )
    finally:
        if close:
            stream.close()


def read_csv(source) -> list[ResultRecord]:
    stream = source if hasattr(source, "read") else open(source, "r", encoding="utf-8")
    close = stream is not source
    try:
        lines = [ln.strip() for ln in stream if ln.strip()]
    finally:
        if close:
            stream.close()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError("not a result CSV: bad or missing header")
    records = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 10:
            raise ValueError(f"bad CSV row: {line!r}")
        records.append(ResultRecord(
            parts[0], parts[1], float(parts[2]), float(parts[3]),
            float(parts[4]), float(parts[5]), float(parts[6]), float(parts[7]),
            float(parts[8]), float(parts[9]),
        ))
    return records


def write_report(records: list[ResultRecord], target, header: dict | None = None) -> None:
    """Flat key = value text report, one block per cell."""
    stream = target if hasattr(target, "write") else open(target, "w", encoding="utf-8")
    close = stream is not target
    try:
        for key, val in (header or {}).items():
            stream.write(f"{key} = {val}\n")
        for idx, r in enumerate(records):
            stream.write(f"\ncell = {idx}\n")
            stream.write(f"method = {r.method}\n")
            stream.write(f"metric = {r.metric}\n")
            stream.write(f"train_ratio = {r.train_ratio!r}\n")
            stream.write(f"outlier_ratio = {r.outlier_ratio!r}\n")
            stream.write(f"mean_mae = {r.mean_mae:.6f}\n")
            stream.write(f"std_mae = {r.std_mae:.6f}\n")
            stream.write(f"mean_rmse = {r.mean_rmse:.6f}\n")
            stream.write(f"std_rmse = {r.std_rmse:.6f}\n")
            stream.write(f"mean_fit_seconds = {r.mean_fit_seconds:.6f}\n")
            stream.write(f"iterations = {r.iterations:.1f}\n")
    finally:
        if close:
            stream.close()


def parse_config_file(source) -> dict[str, str]:
    """Flat ``key = value`` file with ``#`` comments; values stay raw strings."""
    stream = source if hasattr(source, "read") else open(source, "r", encoding="utf-8")
    close = stream is not source
    out: dict[str, str] = {}
    try:
        for lineno, raw in enumerate(stream, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
        return out
    finally:
        if close:
            stream.close()
