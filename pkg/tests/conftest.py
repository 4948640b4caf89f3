"""Session fixtures: the two full pipelines reused by acceptance and slow tests."""

import time
from dataclasses import dataclass

import pytest
import torch

torch.set_num_threads(1)

from counts.counterfactual import ExplainConfig, explain_dataset
from counts.metrics import evaluate
from counts.objective import TrainConfig, train
from counts.synthgen import SpikeConfig, ToyConfig, gen_spike, gen_toy

TOY_TRAIN_SEED = 11
TOY_TEST_SEED = 5
SPIKE_TRAIN_SEED = 21
SPIKE_TEST_SEED = 22


@dataclass
class PipelineRun:
    train_ds: object
    test_ds: object
    model: object
    plain: object
    records_counts: list
    records_rgd: list
    report_counts: object
    report_rgd: object
    seconds: dict


@pytest.fixture(scope="session")
def toy_run():
    """Toy pipeline at the acceptance scale: n=2000 train, n=500 held out."""
    from counts.model import toy_arch

    seconds = {}
    t0 = time.time()
    train_ds = gen_toy(ToyConfig(n=2000, seed=TOY_TRAIN_SEED))
    test_ds = gen_toy(ToyConfig(n=500, seed=TOY_TEST_SEED))
    seconds["gen"] = time.time() - t0

    t0 = time.time()
    cfg = TrainConfig()
    model, _ = train(train_ds, toy_arch(), cfg)
    plain, _ = train(train_ds, toy_arch(), cfg, kind="plain")
    seconds["train"] = time.time() - t0

    t0 = time.time()
    ecfg = ExplainConfig()
    ids = list(range(test_ds.n))
    records_counts = explain_dataset(model, test_ds, "counts", ecfg, ids=ids)
    records_rgd = explain_dataset(plain, test_ds, "rgd", ecfg, ids=ids)
    seconds["explain"] = time.time() - t0

    t0 = time.time()
    report_counts = evaluate(model, test_ds, records_counts)
    report_rgd = evaluate(plain, test_ds, records_rgd)
    seconds["eval"] = time.time() - t0
    return PipelineRun(train_ds, test_ds, model, plain, records_counts, records_rgd,
                       report_counts, report_rgd, seconds)


@pytest.fixture(scope="session")
def spike_run():
    """Spike pipeline at the acceptance scale: n=1000 train sequences."""
    from counts.model import spike_arch

    seconds = {}
    t0 = time.time()
    train_ds = gen_spike(SpikeConfig(n=1000, seed=SPIKE_TRAIN_SEED))
    test_ds = gen_spike(SpikeConfig(n=300, seed=SPIKE_TEST_SEED))
    seconds["gen"] = time.time() - t0

    t0 = time.time()
    cfg = TrainConfig(lambda_sup=10.0, observed_y=True)
    model, _ = train(train_ds, spike_arch(), cfg)
    plain, _ = train(train_ds, spike_arch(), TrainConfig(), kind="plain")
    seconds["train"] = time.time() - t0

    t0 = time.time()
    ecfg = ExplainConfig()
    ids = list(range(200))
    records_counts = explain_dataset(model, test_ds, "counts", ecfg, ids=ids)
    records_rgd = explain_dataset(plain, test_ds, "rgd", ecfg, ids=ids)
    seconds["explain"] = time.time() - t0

    t0 = time.time()
    report_counts = evaluate(model, test_ds, records_counts)
    report_rgd = evaluate(plain, test_ds, records_rgd)
    seconds["eval"] = time.time() - t0
    return PipelineRun(train_ds, test_ds, model, plain, records_counts, records_rgd,
                       report_counts, report_rgd, seconds)
