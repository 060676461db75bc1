"""Exit criteria for the package.

Statistical criteria use 3 standard-error bands over 100 repetitions of
the 2000-sample simulation split 500 / 525 / 975. Run with ``-s`` to see
the PASS/FAIL lines inline; they are also repeated in the terminal summary.
"""

import time
from fractions import Fraction

import numpy as np
import pytest

from ordinal_conformal.classifier import fit, loss_and_grad
from ordinal_conformal.cli import main
from ordinal_conformal.datagen import gen_gaussian_mixture, gen_sparse_model
from ordinal_conformal.evaluation import METHODS, ExperimentConfig, mean_se, prepare_repetition, run_experiment
from ordinal_conformal.multiplicity import procedure1_accept, procedure2_accept, procedure3_accept, true_null_rejection_rate
from ordinal_conformal.pvalues import CalibrationScores, conditional_pvalue, marginal_pvalue, pvalue_matrix
from ordinal_conformal.regions import ordinal_prediction_interval, ordinal_prediction_set

from oracles import central_difference, count_conditional_pvalue, count_pvalue

REPS = 100
ALPHAS = (0.05, 0.1, 0.2)
N_CAL = 525
SEED = 20240601


@pytest.fixture(scope="module")
def mixture_run():
    cfg = ExperimentConfig(setting="gaussian_mixture", alphas=ALPHAS, repetitions=REPS, seed=SEED)
    return run_experiment(cfg)


def test_1_exact_pvalue_law(verdict):
    start = time.perf_counter()
    bad = []
    rng = np.random.default_rng(1)
    for n in range(3, 7):
        grid = [Fraction(k, n + 1) for k in range(1, n + 2)]
        scores = list(rng.permutation(n + 1) + rng.random())
        marg = []
        for j in range(n + 1):
            rest = scores[:j] + scores[j + 1 :]
            cal = CalibrationScores(np.array(rest), np.ones(n, dtype=int), 1)
            marg.append(Fraction(marginal_pvalue(cal, scores[j])).limit_denominator(n + 1))
        if sorted(marg) != grid:
            bad.append(("marginal", n))
        # class 2 holds the n exchangeable points; class 1 is unrelated noise
        noise = list(rng.random(4) * 10)
        cond = []
        for j in range(n + 1):
            rest = scores[:j] + scores[j + 1 :]
            cal = CalibrationScores(np.array(rest + noise), np.array([2] * n + [1] * 4), 2)
            cond.append(Fraction(conditional_pvalue(cal, 2, scores[j])).limit_denominator(n + 1))
        if sorted(cond) != grid:
            bad.append(("conditional", n))
    elapsed = time.perf_counter() - start
    verdict(1, "exact p-value law, n=3..6", not bad and elapsed < 1.0, f"violations={bad}, {elapsed:.3f}s")


def test_2_binary_search_equals_count_oracle(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    mismatches = 0
    for _ in range(10_000):
        n = int(rng.integers(1, 30))
        K = int(rng.integers(2, 5))
        # coarse grid forces plenty of ties, including with the test score
        scores = rng.integers(0, 6, n) / 5
        labels = rng.integers(1, K + 1, n)
        test = rng.integers(0, 6, K) / 5
        cal = CalibrationScores(scores, labels, K)
        marg = pvalue_matrix(cal, test, "marginal")[0]
        cond = pvalue_matrix(cal, test, "conditional")[0]
        for y in range(K):
            if marg[y] != float(count_pvalue(scores.tolist(), test[y])):
                mismatches += 1
            if cond[y] != float(count_conditional_pvalue(scores.tolist(), labels.tolist(), y + 1, test[y])):
                mismatches += 1
        if marginal_pvalue(cal, test[0]) != marg[0] or conditional_pvalue(cal, 1, test[0]) != cond[0]:
            mismatches += 1
    elapsed = time.perf_counter() - start
    verdict(2, "binary search == direct count on 10,000 fixtures", mismatches == 0 and elapsed < 5.0,
            f"mismatches={mismatches}, {elapsed:.2f}s")


def test_3_marginal_coverage_band(mixture_run, verdict):
    failures, notes = [], []
    for alpha in ALPHAS:
        m, se = mean_se([r.marginal_coverage for r in mixture_run.select("marginal_ops", alpha)])
        lo, hi = 1 - alpha - 3 * se, 1 - alpha + 1 / (N_CAL + 1) + 3 * se
        notes.append(f"OPS@{alpha}={m:.4f}")
        if not lo <= m <= hi:
            failures.append(f"marginal_ops alpha={alpha}: {m:.4f} not in [{lo:.4f}, {hi:.4f}]")
        m, se = mean_se([r.marginal_coverage for r in mixture_run.select("marginal_opi", alpha)])
        notes.append(f"OPI@{alpha}={m:.4f}")
        if m < 1 - alpha - 3 * se:
            failures.append(f"marginal_opi alpha={alpha}: {m:.4f} < {1 - alpha - 3 * se:.4f}")
    verdict(3, "marginal coverage band (mixture, 100 reps)", not failures, "; ".join(failures or notes))


def test_4_conditional_coverage_band(mixture_run, verdict):
    failures = []
    worst = 1.0
    for alpha in ALPHAS:
        for method in ("conditional_ops", "conditional_opi"):
            reports = mixture_run.select(method, alpha)
            K = len(reports[0].per_class_coverage)
            for y in range(K):
                vals = [r.per_class_coverage[y] for r in reports if r.per_class_coverage[y] is not None]
                m, se = mean_se(vals)
                worst = min(worst, m - (1 - alpha))
                if m < 1 - alpha - 3 * se:
                    failures.append(f"{method} alpha={alpha} class {y + 1}: {m:.4f} below")
                if method == "conditional_ops":
                    slack = np.mean([1 / (r.cal_class_counts[y] + 1) for r in reports])
                    if m > 1 - alpha + slack + 3 * se:
                        failures.append(f"{method} alpha={alpha} class {y + 1}: {m:.4f} above")
    verdict(4, "per-class coverage band for conditional methods", not failures,
            "; ".join(failures) or f"smallest margin over 1-alpha {worst:+.4f}")


def test_5_single_step_fwer(verdict):
    cfg = ExperimentConfig(setting="gaussian_mixture", alphas=ALPHAS, repetitions=REPS, seed=SEED)
    rates = {(a, proc): [] for a in ALPHAS for proc in ("single_step", "forward_sequential", "backward_sequential")}
    for rep in range(REPS):
        prep = prepare_repetition(cfg, rep)
        pv = pvalue_matrix(prep.cal_scores, prep.valid_scores, "marginal")
        for alpha, proc in rates:
            rates[(alpha, proc)].append(true_null_rejection_rate(pv, prep.valid_labels, alpha, proc))
    failures, notes = [], []
    for (alpha, proc), vals in rates.items():
        m, se = mean_se(vals)
        if proc == "single_step":
            notes.append(f"alpha={alpha}: {m:.4f}")
            if not alpha - 1 / (N_CAL + 1) - 3 * se <= m <= alpha + 3 * se:
                failures.append(f"procedure 3 alpha={alpha}: FWER {m:.4f}")
        elif m > alpha + 3 * se:
            failures.append(f"{proc} alpha={alpha}: FWER {m:.4f} > alpha")
    verdict(5, "procedure 3 FWER band", not failures, "; ".join(failures or notes))


def test_6_structural_invariants(verdict):
    rng = np.random.default_rng(6)
    violations = 0
    for _ in range(10_000):
        K = int(rng.integers(1, 9))
        n = int(rng.integers(1, 40))
        cal = CalibrationScores(rng.integers(0, 10, n) / 10, rng.integers(1, K + 1, n), K)
        mode = "marginal" if rng.random() < 0.5 else "conditional"
        p = pvalue_matrix(cal, rng.integers(0, 10, K) / 10, mode)[0]
        counts = np.full(K, n) if mode == "marginal" else cal.class_counts
        k = p * (counts + 1)
        if not np.all((np.abs(k - np.round(k)) < 1e-9) & (np.round(k) >= 1) & (p <= 1)):
            violations += 1
        a, b = np.sort(rng.random(2))
        a1 = procedure1_accept(p, b).accepted
        a2 = procedure2_accept(p, b).accepted
        a3 = procedure3_accept(p, b).accepted
        if not a3 <= (a1 & a2):
            violations += 1
        ops, opi = ordinal_prediction_set(p, b), ordinal_prediction_interval(p, b)
        if not set(ops.labels) <= set(opi.labels):
            violations += 1
        if not set(ops.labels) <= set(ordinal_prediction_set(p, a).labels):
            violations += 1
        if not set(opi.labels) <= set(ordinal_prediction_interval(p, a).labels):
            violations += 1
    verdict(6, "structural invariants on 10,000 random p-vectors", violations == 0, f"violations={violations}")


def test_7_sparse_robustness(verdict):
    failures = []
    lowest = 1.0
    for d in (5, 100):
        res = run_experiment(ExperimentConfig(setting="sparse", dim=d, alphas=(0.1,), repetitions=REPS, seed=SEED + d))
        for method in METHODS:
            m, se = mean_se([r.marginal_coverage for r in res.select(method, 0.1)])
            lowest = min(lowest, m)
            if m < 0.9 - 3 * se:
                failures.append(f"d={d} {method}: {m:.4f}")
    verdict(7, "sparse setting coverage >= 0.9 at d=5 and d=100", not failures,
            "; ".join(failures) or f"lowest mean coverage {lowest:.4f}")


def test_8_ccv_ordering(mixture_run, verdict):
    failures, notes = [], []
    for alpha in ALPHAS:
        for kind in ("ops", "opi"):
            cond = [r.ccv for r in mixture_run.select(f"conditional_{kind}", alpha)]
            marg = [r.ccv for r in mixture_run.select(f"marginal_{kind}", alpha)]
            # repetitions are paired, so the band uses the SE of the difference
            diff, se = mean_se(np.subtract(cond, marg))
            notes.append(f"{kind}@{alpha}: {np.mean(cond):.4f} vs {np.mean(marg):.4f}")
            if diff > 3 * se:
                failures.append(f"{kind} alpha={alpha}: conditional CCV exceeds marginal by {diff:.4f}")
    verdict(8, "conditional CCV <= marginal CCV", not failures, "; ".join(failures or notes))


def test_9_classifier_sanity(verdict):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(10):
        n, d, K = int(rng.integers(5, 20)), int(rng.integers(1, 5)), int(rng.integers(2, 6))
        design = np.hstack([np.ones((n, 1)), rng.normal(size=(n, d))])
        onehot = np.eye(K)[rng.integers(0, K, n)]
        coef = rng.normal(size=(K, d + 1))
        ridge = float(rng.uniform(0, 0.1))
        _, grad = loss_and_grad(coef, design, onehot, ridge)
        num = central_difference(lambda c: loss_and_grad(c.reshape(K, d + 1), design, onehot, ridge)[0], coef.ravel())
        worst = max(worst, np.linalg.norm(grad.ravel() - num) / np.linalg.norm(num))
    sums_err = 0.0
    for data in (gen_gaussian_mixture(500, 1), gen_sparse_model(500, 20, 1)):
        probs = fit(data).posterior(data.features)
        sums_err = max(sums_err, float(np.max(np.abs(probs.sum(axis=1) - 1))))
    verdict(9, "gradient vs finite differences; posterior normalisation", worst <= 1e-5 and sums_err <= 1e-12,
            f"grad rel err {worst:.2e}, row-sum err {sums_err:.1e}")


def test_10_simulate_determinism(tmp_path, capsys, verdict):
    args = ["simulate", "--setting", "gaussian-mixture", "--reps", "3", "--alpha", "0.1", "--alpha", "0.2", "--seed", "11"]
    codes = [main(args + ["--out", str(tmp_path / run)]) for run in ("a", "b")]
    capsys.readouterr()
    same = all(
        (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        for f in ("reports.jsonl", "results.csv", "aggregate.csv", "metadata.json")
    )
    verdict(10, "simulate is byte-identical across runs", codes == [0, 0] and same, f"exit codes {codes}")
