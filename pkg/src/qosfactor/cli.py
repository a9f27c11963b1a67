"""Command-line front end.

Subcommands: ``synth`` (generate a dataset), ``inspect`` (summarize one),
``fit`` (train a model), ``predict`` (score index pairs), ``evaluate``
(error metrics with outlier exclusion), and ``grid`` (full experiment sweep
writing CSV, a text report, and figures).

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 solver divergence.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import data as dio
from . import experiment as ex
from . import mf, ncp
from .errors import DivergenceError, ParseError
from .iforest import ForestConfig
from .losses import Loss
from .metrics import evaluate_excluding_outliers

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class UsageError(ValueError):
    pass


def _as_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def _float_list(text: str) -> tuple[float, ...]:
    items = [tok for tok in text.split(",") if tok.strip()]
    return tuple(float(tok) for tok in items)


def _merge_config(args: argparse.Namespace, keys: dict) -> dict:
    """File values first, then non-None CLI flags on top."""
    merged: dict = {}
    if getattr(args, "config", None):
        raw = ex.parse_config_file(args.config)
        for key, text in raw.items():
            if key not in keys:
                raise UsageError(f"unknown config key {key!r}")
            merged[key] = keys[key](text)
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def _load_observations(opts: dict):
    path = opts.get("data")
    if not path:
        raise UsageError("no dataset given: set data = <path> or --data")
    fmt = opts.get("format", "triples")
    if fmt == "dense":
        if "m" not in opts or "n" not in opts:
            raise UsageError("dense format needs m and n")
        meta = dio.DatasetMeta(
            kind=dio.STATIC, metric=opts.get("metric", "response_time"),
            m=opts["m"], n=opts["n"],
            missing_marker=opts.get("missing_marker", -1.0),
        )
        return dio.parse_dense_matrix(path, meta)
    if fmt == "triples":
        return dio.parse_triples(path, m=opts.get("m"), n=opts.get("n"))
    if fmt == "quads":
        return dio.parse_quads(path, m=opts.get("m"), n=opts.get("n"), t=opts.get("t"))
    raise UsageError(f"unknown format {fmt!r}, expected dense|triples|quads")


def _build_synth_spec(opts: dict) -> dio.SyntheticSpec:
    try:
        return dio.SyntheticSpec(
            m=opts["synth_m"], n=opts["synth_n"], t=opts.get("synth_t", 1),
            true_rank=opts.get("synth_rank", 2),
            noise_sigma=opts.get("synth_noise_sigma", 0.0),
            outlier_fraction=opts.get("synth_outlier_fraction", 0.0),
            outlier_magnitude=opts.get("synth_outlier_magnitude", 10.0),
            density=opts.get("synth_density", 1.0),
            seed=opts.get("synth_seed", 0),
        )
    except KeyError as exc:
        raise UsageError(f"synthetic data needs {exc.args[0]}") from None


def _solver_configs(opts: dict) -> tuple[mf.MfConfig, ncp.TfConfig]:
    gamma = opts.get("gamma", 1.0)
    mf_cfg = mf.MfConfig(
        rank=opts.get("rank", 30),
        loss=Loss.cauchy(gamma),
        reg_user=opts.get("reg_user", 1.0),
        reg_service=opts.get("reg_service", 1.0),
        lr_user=opts.get("lr_user", 0.003),
        lr_service=opts.get("lr_service", 0.003),
        max_iters=opts.get("max_iters", 500),
        rel_tol=opts.get("rel_tol", 1e-6),
        seed=opts.get("seed", 0),
        init_scale=opts.get("init_scale", 0.1),
    )
    tf_cfg = ncp.TfConfig(
        rank=opts.get("rank", 15),
        gamma=opts.get("gamma", 10.0),
        reg_user=opts.get("reg_user", 0.1),
        reg_service=opts.get("reg_service", 0.1),
        reg_time=opts.get("reg_time", 0.1),
        max_iters=opts.get("max_iters", 500),
        rel_tol=opts.get("rel_tol", 1e-6),
        seed=opts.get("seed", 0),
        init_scale=opts.get("init_scale", 0.1),
        denom_floor=opts.get("denom_floor", 1e-12),
    )
    return mf_cfg, tf_cfg


_COMMON_KEYS = {
    "data": str, "format": str, "metric": str,
    "m": int, "n": int, "t": int, "missing_marker": float,
    "synth": _as_bool, "synth_m": int, "synth_n": int, "synth_t": int,
    "synth_rank": int, "synth_noise_sigma": float, "synth_outlier_fraction": float,
    "synth_outlier_magnitude": float, "synth_density": float, "synth_seed": int,
    "method": str, "rank": int, "gamma": float,
    "reg_user": float, "reg_service": float, "reg_time": float,
    "lr_user": float, "lr_service": float,
    "max_iters": int, "rel_tol": float, "seed": int,
    "init_scale": float, "denom_floor": float,
    "train_ratios": _float_list, "outlier_ratios": _float_list,
    "repeats": int, "base_seed": int,
    "forest_trees": int, "forest_subsample": int,
    "out_dir": str, "figures": _as_bool, "measure_time": _as_bool,
    "outlier_ratio": float, "train_ratio": float,
}


def _add_common_flags(parser: argparse.ArgumentParser, names: tuple[str, ...]):
    for name in names:
        conv = _COMMON_KEYS[name]
        flag = "--" + name.replace("_", "-")
        if conv is _as_bool:
            parser.add_argument(flag, type=_as_bool, default=None, metavar="BOOL")
        elif conv is _float_list:
            parser.add_argument(flag, type=_float_list, default=None, metavar="R1,R2,...")
        else:
            parser.add_argument(flag, type=conv, default=None)


def _resolve_dataset(opts: dict):
    """Returns (observations, metric label). Synthetic wins when synth = true."""
    if opts.get("synth"):
        dataset = dio.generate_synthetic(_build_synth_spec(opts))
        return dataset.observations, opts.get("metric", "synthetic")
    return _load_observations(opts), opts.get("metric", "unlabeled")


def _save_model(path: str, model, method: str) -> None:
    arrays = {
        "user_factors": model.user_factors,
        "service_factors": model.service_factors,
        "iterations_run": np.array(model.iterations_run),
        "final_objective": np.array(model.final_objective),
        "method": np.array(method),
    }
    if hasattr(model, "time_factors"):
        arrays["time_factors"] = model.time_factors
    np.savez(path, **arrays)


def _load_model(path: str):
    with np.load(path, allow_pickle=False) as bundle:
        kwargs = dict(
            user_factors=bundle["user_factors"],
            service_factors=bundle["service_factors"],
            iterations_run=int(bundle["iterations_run"]),
            final_objective=float(bundle["final_objective"]),
        )
        if "time_factors" in bundle:
            return ncp.TfModel(time_factors=bundle["time_factors"], **kwargs)
        return mf.MfModel(**kwargs)


def _cmd_synth(args) -> int:
    opts = _merge_config(args, _COMMON_KEYS)
    opts.setdefault("synth", True)
    spec = _build_synth_spec(opts)
    dataset = dio.generate_synthetic(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if spec.t == 1:
        dio.write_triples(dataset.observations, out)
    else:
        dio.write_quads(dataset.observations, out)
    manifest = Path(args.manifest) if args.manifest else out.with_suffix(out.suffix + ".manifest")
    dio.write_manifest(dataset, manifest)
    print(f"wrote {dataset.observations.n_entries} entries to {out}")
    print(f"wrote manifest to {manifest}")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    opts = _merge_config(args, _COMMON_KEYS)
    obs, _ = _resolve_dataset(opts)
    is_tensor = hasattr(obs, "times")
    dims = f"{obs.m} x {obs.n}" + (f" x {obs.t}" if is_tensor else "")
    print(f"kind = {'tensor' if is_tensor else 'matrix'}")
    print(f"dims = {dims}")
    print(f"entries = {obs.n_entries}")
    print(f"density = {obs.density:.6f}")
    if obs.n_entries:
        print(f"value_min = {obs.values.min():.6f}")
        print(f"value_max = {obs.values.max():.6f}")
        print(f"value_mean = {obs.values.mean():.6f}")
    return EXIT_OK


def _cmd_fit(args) -> int:
    opts = _merge_config(args, _COMMON_KEYS)
    obs, _ = _resolve_dataset(opts)
    method = opts.get("method", "cmf")
    if method not in ex.METHODS:
        raise UsageError(f"unknown method {method!r}, expected one of {ex.METHODS}")
    mf_cfg, tf_cfg = _solver_configs(opts)
    solver_cfg = ex.solver_config(method, mf_cfg, tf_cfg, opts.get("seed", 0))
    model = mf.fit(obs, solver_cfg) if method in ex.MATRIX_METHODS else ncp.fit(obs, solver_cfg)
    _save_model(args.out, model, method)
    print(f"fit {method}: iterations = {model.iterations_run}, "
          f"objective = {model.final_objective:.6f}")
    print(f"wrote model to {args.out}")
    return EXIT_OK


def _parse_index_file(path: str, want: int) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as stream:
        for lineno, raw in enumerate(stream, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            toks = line.split()
            if len(toks) != want:
                raise ParseError(f"line {lineno}: expected {want} indices, got {len(toks)}")
            try:
                rows.append([int(tok) for tok in toks])
            except ValueError:
                raise ParseError(f"line {lineno}: cannot parse indices {line!r}") from None
    return np.array(rows, dtype=np.intp).reshape(-1, want)


def _cmd_predict(args) -> int:
    model = _load_model(args.model)
    is_tensor = hasattr(model, "time_factors")
    pairs = _parse_index_file(args.pairs, 3 if is_tensor else 2)
    preds = ncp.predict_entries(model, pairs) if is_tensor else mf.predict(model, pairs)
    lines = "".join(f"{float(p)!r}\n" for p in preds)
    if args.out:
        Path(args.out).write_text(lines, encoding="utf-8")
        print(f"wrote {preds.size} predictions to {args.out}")
    else:
        sys.stdout.write(lines)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    opts = _merge_config(args, _COMMON_KEYS)
    model = _load_model(args.model)
    obs, _ = _resolve_dataset(opts)
    is_tensor = hasattr(model, "time_factors")
    if is_tensor != hasattr(obs, "times"):
        raise UsageError("model and dataset disagree on matrix vs tensor")
    if is_tensor:
        preds = ncp.predict_entries(model, np.column_stack((obs.users, obs.services, obs.times)))
    else:
        preds = mf.predict(model, np.column_stack((obs.users, obs.services)))
    ratio = opts.get("outlier_ratio", 0.0)
    forest = ForestConfig(opts.get("forest_trees", 100), opts.get("forest_subsample", 256),
                          opts.get("base_seed", 0))
    report = evaluate_excluding_outliers(obs.values, preds, ratio, forest, groups=obs.services)
    print(f"n_total = {report.n_total}")
    print(f"n_removed = {report.n_removed}")
    print(f"mae = {report.mae:.6f}")
    print(f"rmse = {report.rmse:.6f}")
    return EXIT_OK


def _cmd_grid(args) -> int:
    opts = _merge_config(args, _COMMON_KEYS)
    obs, metric = _resolve_dataset(opts)
    methods = [tok.strip() for tok in opts.get("method", "cmf").split(",") if tok.strip()]
    if not methods:
        raise UsageError("no method given")
    train_ratios = opts.get("train_ratios")
    outlier_ratios = opts.get("outlier_ratios")
    if not train_ratios or not outlier_ratios:
        raise UsageError("grid needs nonempty train_ratios and outlier_ratios")
    mf_cfg, tf_cfg = _solver_configs(opts)

    records = []
    for method in methods:
        config = ex.ExperimentConfig(
            observations=obs, method=method, metric=metric,
            mf_config=mf_cfg, tf_config=tf_cfg,
            train_ratios=tuple(train_ratios), outlier_ratios=tuple(outlier_ratios),
            repeats=opts.get("repeats", 10), base_seed=opts.get("base_seed", 0),
            forest_trees=opts.get("forest_trees", 100),
            forest_subsample=opts.get("forest_subsample", 256),
            measure_time=opts.get("measure_time", True),
        )
        records.extend(ex.run_grid(config))

    out_dir = Path(opts.get("out_dir", "results"))
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "results.csv"
    ex.write_csv(records, csv_path)
    report_path = out_dir / "report.txt"
    ex.write_report(records, report_path, header={
        "methods": ",".join(methods), "metric": metric,
        "repeats": opts.get("repeats", 10), "base_seed": opts.get("base_seed", 0),
    })
    print(f"wrote {len(records)} records to {csv_path}")
    print(f"wrote report to {report_path}")
    if opts.get("figures", True):
        from .plots import render_grid_figures

        for path in render_grid_figures(records, out_dir):
            print(f"wrote figure {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qosfactor",
        description="Outlier-resilient QoS prediction experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--config")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--manifest")
    _add_common_flags(p_synth, ("synth_m", "synth_n", "synth_t", "synth_rank",
                                "synth_noise_sigma", "synth_outlier_fraction",
                                "synth_outlier_magnitude", "synth_density", "synth_seed"))

    p_inspect = sub.add_parser("inspect", help="summarize a dataset")
    p_inspect.add_argument("--config")
    _add_common_flags(p_inspect, ("data", "format", "m", "n", "t", "missing_marker",
                                  "synth", "synth_m", "synth_n", "synth_t", "synth_rank",
                                  "synth_noise_sigma", "synth_outlier_fraction",
                                  "synth_outlier_magnitude", "synth_density", "synth_seed"))

    solver_flags = ("method", "rank", "gamma", "reg_user", "reg_service", "reg_time",
                    "lr_user", "lr_service", "max_iters", "rel_tol", "seed",
                    "init_scale", "denom_floor")
    data_flags = ("data", "format", "metric", "m", "n", "t", "missing_marker",
                  "synth", "synth_m", "synth_n", "synth_t", "synth_rank",
                  "synth_noise_sigma", "synth_outlier_fraction",
                  "synth_outlier_magnitude", "synth_density", "synth_seed")

    p_fit = sub.add_parser("fit", help="fit one model and save it")
    p_fit.add_argument("--config")
    p_fit.add_argument("--out", required=True)
    _add_common_flags(p_fit, data_flags + solver_flags)

    p_pred = sub.add_parser("predict", help="predict values for index pairs")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--pairs", required=True)
    p_pred.add_argument("--out")

    p_eval = sub.add_parser("evaluate", help="score a model against observations")
    p_eval.add_argument("--config")
    p_eval.add_argument("--model", required=True)
    _add_common_flags(p_eval, data_flags + ("outlier_ratio", "forest_trees",
                                            "forest_subsample", "base_seed"))

    p_grid = sub.add_parser("grid", help="run a ratio sweep and emit tables/figures")
    p_grid.add_argument("--config")
    _add_common_flags(p_grid, data_flags + solver_flags + (
        "train_ratios", "outlier_ratios", "repeats", "base_seed",
        "forest_trees", "forest_subsample", "out_dir", "figures", "measure_time"))

    return parser


_HANDLERS = {
    "synth": _cmd_synth,
    "inspect": _cmd_inspect,
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "grid": _cmd_grid,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (UsageError, ValueError) as exc:
        if isinstance(exc, ParseError):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
