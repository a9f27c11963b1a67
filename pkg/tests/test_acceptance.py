"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines as they complete.  Criterion 9 needs a local copy of the public QoS
dataset and is skipped when the QOSFACTOR_WSDREAM directory is absent.
"""

import math
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

import qosfactor.cli as cli
from conftest import random_matrix, random_tensor, rank_auc
from qosfactor import mf, ncp
from qosfactor.data import (
    DatasetMeta,
    ObservationMatrix,
    ObservationTensor,
    SyntheticSpec,
    generate_synthetic,
    parse_dense_matrix,
)
from qosfactor.experiment import ExperimentConfig, run_cell
from qosfactor.iforest import ForestConfig, score_values
from qosfactor.losses import Loss, cauchy_weight, influence, loss_value
from qosfactor.metrics import mae, rmse


@contextmanager
def criterion(number, description, budget_seconds=None):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] criterion {number}: FAIL - {description}")
        raise
    elapsed = time.perf_counter() - start
    if budget_seconds is not None and elapsed >= budget_seconds:
        print(f"[ACCEPTANCE] criterion {number}: FAIL - {description} "
              f"(runtime {elapsed:.1f}s over budget {budget_seconds}s)")
        raise AssertionError(f"criterion {number} exceeded runtime budget")
    print(f"[ACCEPTANCE] criterion {number}: PASS - {description} ({elapsed:.1f}s)")


def test_criterion_1_loss_kernel_exactness():
    with criterion(1, "loss kernels match closed forms and finite differences", 1.0):
        h0 = np.cbrt(np.finfo(float).eps)
        rng = np.random.default_rng(2024)
        for gamma in (0.5, 1.0, 5.0, 20.0):
            loss = Loss.cauchy(gamma)
            scale = np.exp(rng.uniform(np.log(1e-2), np.log(10.0), 2500))
            r = scale * gamma * rng.choice([-1.0, 1.0], scale.size)
            # closed forms, restated independently of the library internals
            assert np.allclose(loss_value(loss, r), np.log(1.0 + r**2 / gamma**2), rtol=1e-12)
            assert np.allclose(influence(loss, r), 2.0 * r / (gamma**2 + r**2), rtol=1e-12)
            assert np.allclose(cauchy_weight(gamma, r), 1.0 / (gamma**2 + r**2), rtol=1e-12)
            assert np.allclose(loss_value(Loss.l2(), r), 0.5 * r * r, rtol=1e-12)
            assert np.allclose(loss_value(Loss.l1(), r), np.abs(r), rtol=1e-12)
            h = h0 * np.maximum(np.abs(r), gamma)
            fd = (loss_value(loss, r + h) - loss_value(loss, r - h)) / (2.0 * h)
            rel = np.abs(fd - influence(loss, r)) / np.abs(influence(loss, r))
            assert np.max(rel) < 1e-6


def test_criterion_2_cmf_gradient_correctness():
    with criterion(2, "CMF row gradients match central finite differences", 10.0):
        h0 = np.cbrt(np.finfo(float).eps)
        for seed in range(20):
            matrix = random_matrix(seed)
            r = np.random.default_rng(seed + 900)
            rank = int(r.integers(1, 5))
            for loss in (Loss.cauchy(1.0), Loss.l2()):
                config = mf.MfConfig(rank=rank, loss=loss, reg_user=0.3, reg_service=0.2)
                model = mf.MfModel(r.normal(0.5, 0.3, (matrix.m, rank)),
                                   r.normal(0.5, 0.3, (matrix.n, rank)))
                for which, count, grad_fn, factors in (
                    ("u", matrix.m, mf.grad_row_u, model.user_factors),
                    ("s", matrix.n, mf.grad_row_s, model.service_factors),
                ):
                    for idx in range(count):
                        grad = grad_fn(matrix, model, config, idx)
                        fd = np.zeros_like(grad)
                        for c in range(rank):
                            h = h0 * max(1.0, abs(factors[idx, c]))
                            orig = factors[idx, c]
                            factors[idx, c] = orig + h
                            f_plus = mf.objective(matrix, model, config)
                            factors[idx, c] = orig - h
                            f_minus = mf.objective(matrix, model, config)
                            factors[idx, c] = orig
                            fd[c] = (f_plus - f_minus) / (2.0 * h)
                        err = np.linalg.norm(fd - grad) / max(np.linalg.norm(grad), 1e-12)
                        assert err < 1e-5, f"seed {seed} {which}[{idx}]: {err}"


def test_criterion_3_ctf_monotone_descent_and_nonnegativity():
    with criterion(3, "CTF objective non-increasing per sweep; factors nonnegative", 60.0):
        sweeps = ((ncp.mu_sweep_u, "user_factors"), (ncp.mu_sweep_s, "service_factors"),
                  (ncp.mu_sweep_t, "time_factors"))
        for seed in range(20):
            tensor = random_tensor(seed)
            r = np.random.default_rng(seed + 300)
            rank = int(r.integers(1, 5))
            config = ncp.TfConfig(rank=rank, gamma=2.0, reg_user=0.05,
                                  reg_service=0.05, reg_time=0.05)
            model = ncp.TfModel(r.uniform(0.01, 0.5, (tensor.m, rank)),
                                r.uniform(0.01, 0.5, (tensor.n, rank)),
                                r.uniform(0.01, 0.5, (tensor.t, rank)))
            prev = ncp.objective(tensor, model, config)
            for _ in range(200):
                for sweep_fn, attr in sweeps:
                    updated = sweep_fn(tensor, model, config)
                    assert np.min(updated) >= 0.0
                    setattr(model, attr, updated)
                    cur = ncp.objective(tensor, model, config)
                    assert cur - prev <= 1e-9 * max(prev, 1.0), f"seed {seed}"
                    prev = cur


def _frobenius_mu_sweep(x, mask, factors, mode):
    """Independent dense masked Frobenius nonnegative-CP multiplicative sweep."""
    u, s, t = factors
    m, n, tt = x.shape
    rank = u.shape[1]
    base = factors[mode]
    new = base.copy()
    for row in range(x.shape[mode] if mode < 2 else tt):
        num = np.zeros(rank)
        den = np.zeros(rank)
        for i in range(m):
            for j in range(n):
                for k in range(tt):
                    if not mask[i, j, k] or (i, j, k)[mode] != row:
                        continue
                    other = (s[j] * t[k], u[i] * t[k], u[i] * s[j])[mode]
                    num += x[i, j, k] * other
                    den += float(np.sum(base[row] * other)) * other
        if np.any(den > 0):
            new[row] = base[row] * num / den
    return new


def test_criterion_4_l2_limit_equivalence():
    with criterion(4, "CTF sweep at huge gamma matches Frobenius NCP sweep", 60.0):
        for seed in range(4):
            r = np.random.default_rng(seed)
            m, n, t, rank = 6, 5, 4, 3
            x = r.uniform(0.5, 5.0, (m, n, t))
            mask = r.random((m, n, t)) < 0.7
            ii, jj, kk = np.nonzero(mask)
            tensor = ObservationTensor(m, n, t, ii, jj, kk, x[mask])
            config = ncp.TfConfig(rank=rank, gamma=1e6, reg_user=0, reg_service=0,
                                  reg_time=0, seed=seed)
            model = ncp.TfModel(r.uniform(0.1, 1.0, (m, rank)),
                                r.uniform(0.1, 1.0, (n, rank)),
                                r.uniform(0.1, 1.0, (t, rank)))
            factors = [model.user_factors.copy(), model.service_factors.copy(),
                       model.time_factors.copy()]
            for mode, (sweep_fn, attr) in enumerate((
                (ncp.mu_sweep_u, "user_factors"),
                (ncp.mu_sweep_s, "service_factors"),
                (ncp.mu_sweep_t, "time_factors"),
            )):
                ours = sweep_fn(tensor, model, config)
                setattr(model, attr, ours)
                oracle = _frobenius_mu_sweep(x, mask, factors, mode)
                factors[mode] = oracle
                rel = np.abs(ours - oracle) / np.maximum(np.abs(oracle), 1e-300)
                assert np.max(rel) < 1e-6


def test_criterion_5_robustness_ab():
    with criterion(5, "CMF clean-entry MAE >= 30% below MF2 in >= 9/10 trials", 60.0):
        wins = 0
        for seed in range(10):
            spec = SyntheticSpec(m=50, n=40, true_rank=5, noise_sigma=0.1,
                                 outlier_fraction=0.10, outlier_magnitude=20.0,
                                 density=0.5, seed=seed)
            dataset = generate_synthetic(spec)
            obs = dataset.observations
            rng = np.random.default_rng(seed + 1000)
            perm = rng.permutation(obs.n_entries)
            n_train = int(0.7 * obs.n_entries)
            planted = set(dataset.planted_outliers.tolist())
            clean_test = np.array([p for p in perm[n_train:] if p not in planted],
                                  dtype=np.intp)
            train = obs.subset(perm[:n_train])
            test = obs.subset(clean_test)
            pairs = np.column_stack((test.users, test.services))
            results = {}
            for tag, loss in (("cmf", Loss.cauchy(1.0)), ("mf2", Loss.l2())):
                config = mf.MfConfig(rank=5, loss=loss, reg_user=0.1, reg_service=0.1,
                                     lr_user=0.001, lr_service=0.001, max_iters=3000,
                                     rel_tol=1e-9, seed=seed)
                model = mf.fit(train, config)
                results[tag] = mae(test.values, mf.predict(model, pairs))
            if results["cmf"] <= 0.7 * results["mf2"]:
                wins += 1
        assert wins >= 9, f"only {wins}/10 trials met the 30% margin"


def test_criterion_6_outlier_detection_power():
    with criterion(6, "isolation forest AUC > 0.95 on 10-sigma planted outliers", 30.0):
        aucs = []
        for seed in range(10):
            r = np.random.default_rng(seed)
            values = r.normal(0.0, 1.0, 1000)
            labels = np.zeros(1000, dtype=bool)
            planted = r.choice(1000, 50, replace=False)
            values[planted] = r.choice([-1.0, 1.0], 50) * r.normal(10.0, 0.5, 50)
            labels[planted] = True
            aucs.append(rank_auc(score_values(values, ForestConfig(seed=seed)), labels))
        assert np.mean(aucs) > 0.95, f"mean AUC {np.mean(aucs):.4f}"


def test_criterion_7_metric_oracles():
    with criterion(7, "MAE/RMSE equal naive recomputation; RMSE >= MAE", 30.0):
        r = np.random.default_rng(7)
        for _ in range(200):
            n = int(r.integers(1, 60))
            obs, pred = r.normal(0, 5, n), r.normal(0, 5, n)
            naive_mae = sum(abs(a - b) for a, b in zip(obs, pred)) / n
            naive_rmse = math.sqrt(sum((a - b) ** 2 for a, b in zip(obs, pred)) / n)
            assert abs(mae(obs, pred) - naive_mae) < 1e-12
            assert abs(rmse(obs, pred) - naive_rmse) < 1e-12
        for _ in range(1000):
            n = int(r.integers(1, 40))
            obs, pred = r.normal(0, 3, n), r.normal(0, 3, n)
            assert rmse(obs, pred) >= mae(obs, pred) - 1e-15


def _fit_line_r2(x, y):
    coef = np.polyfit(x, y, 1)
    residual = y - np.polyval(coef, x)
    return 1.0 - np.sum(residual**2) / np.sum((y - np.mean(y)) ** 2)


def _scaling_times(builder, fitter, points, rounds=3, target_seconds=0.7):
    """Min-of-rounds per-sweep times under two noise defenses: rounds are
    interleaved across points (a slow machine phase inflates everything
    instead of skewing the line), and the sweep count per point is chosen so
    every measurement covers a similar wall time (CPU-quota throttling then
    hits all points at the same average rate)."""
    datasets = {p: builder(p) for p in points}
    fitter(datasets[points[0]], points[0], 2)  # warmup
    n_sweeps = {}
    for p in points:
        start = time.perf_counter()
        fitter(datasets[p], p, 2)
        estimate = (time.perf_counter() - start) / 2
        n_sweeps[p] = int(np.clip(round(target_seconds / max(estimate, 1e-9)), 2, 500))
    best = {p: np.inf for p in points}
    for _ in range(rounds):
        for p in points:
            start = time.perf_counter()
            fitter(datasets[p], p, n_sweeps[p])
            best[p] = min(best[p], (time.perf_counter() - start) / n_sweeps[p])
    return np.array([best[p] for p in points])


def test_criterion_8_complexity_scaling():
    with criterion(8, "per-sweep time linear in entry count and rank (R^2 > 0.95)", 300.0):
        rho_points = (10_000, 30_000, 55_000, 77_000, 100_000)
        rank_points = (10, 25, 40, 60, 80)

        def matrix_for(rho):
            r = np.random.default_rng(rho)
            flat = r.choice(300 * 400, rho, replace=False)
            ii, jj = np.divmod(flat, 400)
            mat = ObservationMatrix(300, 400, ii, jj, r.uniform(0.5, 4.0, rho))
            mat.by_user, mat.by_service  # build index outside the timed region
            return mat

        def tensor_for(rho):
            r = np.random.default_rng(rho + 9)
            flat = r.choice(80 * 90 * 30, rho, replace=False)
            ii, rest = np.divmod(flat, 90 * 30)
            jj, kk = np.divmod(rest, 30)
            tens = ObservationTensor(80, 90, 30, ii, jj, kk, r.uniform(0.5, 4.0, rho))
            tens.by_user, tens.by_service, tens.by_time
            return tens

        def mf_fit(mat, _p, sweeps, rank=30):
            config = mf.MfConfig(rank=rank, loss=Loss.cauchy(1.0), reg_user=0.1,
                                 reg_service=0.1, lr_user=1e-4, lr_service=1e-4,
                                 max_iters=sweeps, rel_tol=0.0, seed=0)
            mf.fit(mat, config)

        def tf_fit(tens, _p, sweeps, rank=15):
            config = ncp.TfConfig(rank=rank, gamma=5.0, max_iters=sweeps,
                                  rel_tol=0.0, seed=0)
            ncp.fit(tens, config)

        fixed_mat = matrix_for(60_000)
        fixed_tens = tensor_for(60_000)
        lines = {
            "mf vs entries": (rho_points, _scaling_times(
                matrix_for, mf_fit, rho_points)),
            "mf vs rank": (rank_points, _scaling_times(
                lambda p: fixed_mat, lambda d, p, s: mf_fit(d, p, s, rank=p), rank_points)),
            "tf vs entries": (rho_points, _scaling_times(
                tensor_for, tf_fit, rho_points)),
            "tf vs rank": (rank_points, _scaling_times(
                lambda p: fixed_tens, lambda d, p, s: tf_fit(d, p, s, rank=p), rank_points)),
        }
        for name, (xs, ys) in lines.items():
            r2 = _fit_line_r2(np.array(xs, dtype=float), ys)
            print(f"    {name}: R^2 = {r2:.4f}, per-sweep ms = "
                  f"{[f'{v * 1e3:.0f}' for v in ys]}")
            assert r2 > 0.95, f"{name}: R^2 = {r2:.4f}"


WSDREAM_DIR = os.environ.get("QOSFACTOR_WSDREAM", "")
_WSDREAM_FILE = Path(WSDREAM_DIR) / "rtMatrix.txt" if WSDREAM_DIR else None


@pytest.mark.skipif(
    not (_WSDREAM_FILE and _WSDREAM_FILE.exists()),
    reason="set QOSFACTOR_WSDREAM to a directory containing rtMatrix.txt",
)
def test_criterion_9_dataset_reproduction():
    with criterion(9, "public response-time dataset: CMF errors near reported values"):
        meta = DatasetMeta(kind="static", metric="response_time", m=339, n=5825,
                           missing_marker=-1.0)
        matrix = parse_dense_matrix(str(_WSDREAM_FILE), meta)
        config = ExperimentConfig(
            observations=matrix, method="cmf", metric="response_time",
            mf_config=mf.MfConfig.response_time_profile(max_iters=300, rel_tol=1e-6),
            train_ratios=(0.7,), outlier_ratios=(0.1,), repeats=1, base_seed=0,
            measure_time=False,
        )
        record = run_cell(config, 0.7, 0.1)
        assert 0.75 * 0.1153 <= record.mean_mae <= 1.25 * 0.1153, record.mean_mae
        assert 0.75 * 0.3106 <= record.mean_rmse <= 1.25 * 0.3106, record.mean_rmse


def test_criterion_10_grid_determinism(tmp_path):
    with criterion(10, "grid run twice produces byte-identical CSV", 120.0):
        data_path = tmp_path / "synth.txt"
        assert cli.main([
            "synth", "--out", str(data_path), "--synth-m", "30", "--synth-n", "25",
            "--synth-rank", "3", "--synth-density", "0.6",
            "--synth-outlier-fraction", "0.1", "--synth-outlier-magnitude", "20",
            "--synth-noise-sigma", "0.05", "--synth-seed", "7",
        ]) == 0
        outputs = []
        for name in ("run_a", "run_b"):
            out_dir = tmp_path / name
            assert cli.main([
                "grid", "--data", str(data_path), "--format", "triples",
                "--method", "cmf,mf2", "--rank", "3", "--gamma", "1.0",
                "--reg-user", "0.1", "--reg-service", "0.1",
                "--lr-user", "0.001", "--lr-service", "0.001", "--max-iters", "150",
                "--train-ratios", "0.3,0.5", "--outlier-ratios", "0.1",
                "--repeats", "2", "--base-seed", "4", "--measure-time", "false",
                "--figures", "false", "--out-dir", str(out_dir),
            ]) == 0
            outputs.append((out_dir / "results.csv").read_bytes())
        assert outputs[0] == outputs[1]
