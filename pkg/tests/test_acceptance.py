"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py`` or ``python tests/test_acceptance.py``.
"""

import time
from importlib import resources

import numpy as np
import pytest

from countdcrbm import verify
from countdcrbm.data import generate_synthetic, generator_config_from_values, read_key_values, split_chronological, \
    window_dataset
from countdcrbm.evaluation import majority_baseline
from countdcrbm.model import ModelConfig, UnitKind, init_params
from countdcrbm.training import TrainConfig, train

BENCHMARK_SEEDS = (0, 1, 2)
BENCHMARK_LR = 1e-4
BENCHMARK_EPOCHS = 1000


def _line(number: int, title: str, passed: bool, detail: str) -> str:
    return f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})"


def _from_check(number, title, check, runtime_limit=None):
    start = time.perf_counter()
    result = check()
    elapsed = time.perf_counter() - start
    passed = result.passed and (runtime_limit is None or elapsed < runtime_limit)
    detail = f"{result.observed}; expected {result.expected}; {elapsed:.1f}s"
    return passed, _line(number, title, passed, detail)


def criterion_1():
    return _from_check(1, "classification matches enumeration oracle",
                       lambda: verify.check_classification_oracle(seed=0, n_models=120, tol=1e-6), runtime_limit=30.0)


def criterion_2():
    return _from_check(2, "conditionals match enumeration oracle",
                       lambda: verify.check_conditional_oracle(seed=0, n_models=120, tol=1e-9))


def criterion_3():
    return _from_check(3, "constrained Poisson rates sum to m",
                       lambda: verify.check_count_conservation(seed=0, n_draws=1000, tol=1e-10))


def criterion_4():
    return _from_check(4, "CD deltas vanish at model equilibrium",
                       lambda: verify.check_cd_equilibrium(seed=0, n_samples=10_000))


def benchmark_run(seed: int):
    values = read_key_values(resources.files("countdcrbm") / "configs" / "benchmark_generator.cfg")
    values["seed"] = str(seed)
    gen = generator_config_from_values(values)
    trace = generate_synthetic(gen)
    data = window_dataset(trace, 5, "synthetic", window=128, bin_size=8)
    train_set, test_set = split_chronological(data, 0.8)
    config = ModelConfig(trace.visible_dim, 15, 2, 5, UnitKind.COUNT)
    params = init_params(config, seed=seed, frames=train_set.frames)
    _, report = train(params, train_set, test_set,
                      TrainConfig(learning_rate=BENCHMARK_LR, epochs=BENCHMARK_EPOCHS, batch_size=100, seed=seed,
                                  eval_every=100))
    _, baseline = majority_baseline(train_set.labels, test_set.labels)
    return report, baseline, float(test_set.labels.mean())


def criterion_5():
    start = time.perf_counter()
    runs = [benchmark_run(seed) for seed in BENCHMARK_SEEDS]
    elapsed = time.perf_counter() - start
    mcc = np.mean([r.final.scores.mcc for r, _, _ in runs])
    base = np.mean([b.mcc for _, b, _ in runs])
    recon_ok = all(r.final.recon_error < 0.5 * r.initial.recon_error for r, _, _ in runs)
    bce_ok = all(r.final.bce < r.initial.bce for r, _, _ in runs)
    passed = mcc >= 0.5 and mcc > base and recon_ok and bce_ok and elapsed < 600
    rates = ", ".join(f"{rate:.4f}" for _, _, rate in runs)
    detail = (f"mean MCC {mcc:.3f} vs baseline {base:.3f}; recon halved={recon_ok}; bce decreased={bce_ok}; "
              f"test positive-label rate per seed {rates}; {elapsed:.0f}s")
    return passed, _line(5, "synthetic end-to-end benchmark", passed, detail)


def criterion_6():
    return _from_check(6, "metric formulas", verify.check_metrics)


def criterion_7():
    return _from_check(7, "label aggregation vs brute force",
                       lambda: verify.check_label_aggregation(seed=0, n_streams=90))


def criterion_8():
    return _from_check(8, "determinism and save/load round-trip", lambda: verify.check_determinism(seed=0))


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 9)])
def test_acceptance(criterion, capsys):
    passed, line = criterion()
    with capsys.disabled():
        print("\n" + line)
    assert passed, line


if __name__ == "__main__":
    outcomes = []
    for criterion in CRITERIA:
        passed, line = criterion()
        print(line, flush=True)
        outcomes.append(passed)
    print(f"{sum(outcomes)}/{len(outcomes)} criteria passed")
    raise SystemExit(0 if all(outcomes) else 1)
