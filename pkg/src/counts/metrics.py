"""Evaluation metrics: prediction quality, counterfactual success, change ratios.

The counterfactual change ratio (CCR) compares how much an explanation
moved the label-relevant part of the input against how much it moved the
label-agnostic part; higher is better. Three variants are supported:

* toy: fixed mask over the first six input coordinates
* spike: per-instance label-active channel mask repeated over time,
  reported separately per active-channel count
* pairs: L1 change of the second segment over L1 change of the first

Instances whose change ratio is undefined (both parts essentially
untouched, or a degenerate all-active/all-inactive mask) are skipped and
counted, never averaged in.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .dataio import dataset_tensors
from .errors import EvaluationError
from .model import CLASSIFICATION, CountsModel
from .synthgen import TOY_MASK

DEGENERATE_TOL = 1e-8


@dataclass
class MetricsReport:
    prediction_accuracy: float | None = None
    prediction_mse: float | None = None
    counterfactual_accuracy: float | None = None
    counterfactual_mse: float | None = None
    ccr: dict | None = None
    n_evaluated: int = 0
    n_skipped_degenerate: int = 0

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is not None:
                out[f.name] = value
        return out


# ---------------------------------------------------------------------------
# Prediction and counterfactual metrics
# ---------------------------------------------------------------------------

def _batched_predictions(model: CountsModel, x: np.ndarray, batch: int = 256):
    outputs = []
    for start in range(0, x.shape[0], batch):
        y, _ = model.predict(torch.as_tensor(x[start: start + batch], dtype=torch.float64))
        outputs.append(np.atleast_1d(y.detach().numpy() if torch.is_tensor(y) else y))
    return np.concatenate(outputs)


def prediction_metric(model: CountsModel, dataset) -> float:
    """Accuracy for classification; per-timestep mean squared error for regression."""
    if dataset.n == 0:
        raise EvaluationError("prediction metric needs a nonempty test set")
    x, y = dataset_tensors(dataset)
    preds = _batched_predictions(model, x)
    if model.arch.task == CLASSIFICATION:
        return float(np.mean(preds.astype(np.int64) == y))
    preds = preds.reshape(y.shape)
    return float(np.mean((preds - y) ** 2))


def counterfactual_metric(model: CountsModel, records) -> float:
    """How successfully the explanations drive the model to their targets.

    Classification: fraction with f(x_cf) == y_target. Regression: mean of
    || f(x_cf) - y_cf ||^2 summed over timesteps.
    """
    if not records:
        raise EvaluationError("counterfactual metric needs at least one explanation")
    x_cf = np.stack([np.asarray(r.x_cf) for r in records])
    preds = _batched_predictions(model, x_cf)
    if model.arch.task == CLASSIFICATION:
        targets = np.array([int(r.y_target) for r in records])
        return float(np.mean(preds.astype(np.int64) == targets))
    targets = np.stack([np.asarray(r.y_target, dtype=np.float64) for r in records])
    preds = preds.reshape(targets.shape)
    return float(np.mean(np.sum((preds - targets) ** 2, axis=-1)))


# ---------------------------------------------------------------------------
# Change ratios
# ---------------------------------------------------------------------------

def ccr_masked(x, x_cf, mask, eps_denom: float = 0.0) -> float:
    """L1 change in masked entries over L1 change in unmasked entries."""
    x, x_cf, mask = np.asarray(x, dtype=np.float64), np.asarray(x_cf, dtype=np.float64), np.asarray(mask)
    if x.shape != x_cf.shape or x.shape != mask.shape:
        raise EvaluationError(
            f"ccr_masked needs equal shapes, got {x.shape}, {x_cf.shape}, {mask.shape}"
        )
    if mask.min() == mask.max():
        raise EvaluationError("ccr_masked is undefined for all-ones or all-zeros masks")
    diff = np.abs(x - x_cf)
    num = float((mask * diff).sum())
    den = float(((1 - mask) * diff).sum()) + eps_denom
    return num / den


def ccr_pair(x1, x2, x1_cf, x2_cf, eps_denom: float = 0.0) -> float:
    """L1 change of the second segment over L1 change of the first."""
    arrays = [np.asarray(a, dtype=np.float64) for a in (x1, x2, x1_cf, x2_cf)]
    if len({a.shape for a in arrays}) != 1:
        raise EvaluationError("ccr_pair needs four equal-shaped segments")
    num = float(np.abs(arrays[1] - arrays[3]).sum())
    den = float(np.abs(arrays[0] - arrays[2]).sum()) + eps_denom
    return num / den


def spike_cf_target(y_pred_sequence, shift: int = 20, threshold: float = 0.5) -> np.ndarray:
    """Binarize a predicted sequence and shift it right, padding zeros."""
    y = (np.asarray(y_pred_sequence, dtype=np.float64) >= threshold).astype(np.float64)
    out = np.zeros_like(y)
    if shift == 0:
        return y
    if shift < len(y):
        out[shift:] = y[:-shift]
    return out


# ---------------------------------------------------------------------------
# Aggregate evaluation
# ---------------------------------------------------------------------------

def _ccr_instances(dataset, records, eps_denom: float):
    """Per-record CCR values plus cohort keys; None marks a skipped record."""
    values = []
    for rec in records:
        inst = dataset.instances[rec.id]
        x_cf = np.asarray(rec.x_cf)
        if dataset.kind == "toy":
            x = inst.x[:, None]
            mask = np.broadcast_to(TOY_MASK[:, None], x.shape)
            cohort = None
        elif dataset.kind == "spike":
            x = inst.x
            active = int(inst.m_mask.sum())
            if active == 0 or active == len(inst.m_mask):
                values.append((None, None))
                continue
            mask = np.repeat(inst.m_mask[:, None].astype(np.float64), x.shape[1], axis=1)
            cohort = active
        else:  # pairs
            x = inst.x[:, None]
            half = len(inst.x1)
            num = float(np.abs(x[half:] - x_cf[half:]).sum())
            den = float(np.abs(x[:half] - x_cf[:half]).sum())
            if num < DEGENERATE_TOL and den < DEGENERATE_TOL:
                values.append((None, None))
            else:
                values.append((num / (den + eps_denom), None))
            continue
        diff = np.abs(x - x_cf)
        num = float((mask * diff).sum())
        den = float(((1 - mask) * diff).sum())
        if num < DEGENERATE_TOL and den < DEGENERATE_TOL:
            values.append((None, None))
        else:
            values.append((num / (den + eps_denom), cohort))
    return values


def evaluate(model: CountsModel, dataset, records, eps_denom: float = 1e-8) -> MetricsReport:
    """Complete metrics report for one explanation run."""
    if not records:
        raise EvaluationError("evaluate needs a nonempty explanation set")
    for rec in records:
        if not 0 <= rec.id < dataset.n:
            raise EvaluationError(f"explanation id {rec.id} not in dataset of size {dataset.n}")
        if np.asarray(rec.x_cf).shape != (dataset.D, dataset.T):
            raise EvaluationError(
                f"x_cf shape {np.asarray(rec.x_cf).shape} does not match dataset "
                f"({dataset.D}, {dataset.T})"
            )
    pred = prediction_metric(model, dataset)
    cf = counterfactual_metric(model, records)

    pairs = _ccr_instances(dataset, records, eps_denom)
    kept = [(v, c) for v, c in pairs if v is not None]
    ccr: dict = {
        "variant": {"toy": "toy_masked", "spike": "spike_masked", "pairs": "segment_pair"}[dataset.kind],
        "mean": float(np.mean([v for v, _ in kept])) if kept else float("nan"),
    }
    if dataset.kind == "spike":
        by_active = {}
        for cohort in sorted({c for _, c in kept if c is not None}):
            by_active[str(cohort)] = float(np.mean([v for v, c in kept if c == cohort]))
        ccr["by_active_channels"] = by_active

    report = MetricsReport(
        ccr=ccr,
        n_evaluated=len(kept),
        n_skipped_degenerate=len(pairs) - len(kept),
    )
    if model.arch.task == CLASSIFICATION:
        report.prediction_accuracy = pred
        report.counterfactual_accuracy = cf
    else:
        report.prediction_mse = pred
        report.counterfactual_mse = cf
    return report


def write_report(report: MetricsReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    return path


def read_report(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing report: {path}")
    return json.loads(path.read_text(encoding="utf-8"))
