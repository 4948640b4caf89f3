"""Counterfactual explanation search.

The search follows the abduction / action / prediction recipe: exogenous
posteriors q(u_l | x, y_pred) q(u_g | x, y_pred) are sampled once and
frozen; then the input is optimized by gradient descent so that the
interventional prediction E_{p(z | x', u)} [p(y | z, u)], averaged over the
frozen exogenous samples and frozen z-noise, matches a target output. The
interventional path never routes x' through the exogenous posteriors, so
the abducted confounders stay fixed by construction.

A regularized gradient-descent baseline (``rgd_explain``) attacks a plain
differentiable predictor with an L1 penalty toward the factual input,
handled by a proximal soft-threshold step so that the large-penalty limit
leaves the input exactly unchanged.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, ExplanationError
from .model import CLASSIFICATION, CountsModel, GaussianHead, OutputDist, reparam_sample
from .synthgen import TOY_DIM


@dataclass
class ExplainConfig:
    m_u: int = 8          # abduction samples
    n_z: int = 8          # z samples per abduction sample
    step_size: float = 0.05
    epsilon: float = 0.05
    max_iters: int = 300
    seed: int = 0

    def validate(self) -> None:
        if self.m_u < 1 or self.n_z < 1:
            raise ConfigError("m_u and n_z must be >= 1")
        if self.step_size <= 0:
            raise ConfigError(f"step_size must be > 0, got {self.step_size}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass
class ExplanationResult:
    x_cf: torch.Tensor
    y_target: object
    y_achieved: OutputDist
    iterations: int
    final_discrepancy: float
    converged: bool


def _derived_seeds(seed: int, count: int, extra: int | None = None) -> list[int]:
    entropy = [int(seed)] if extra is None else [int(seed), int(extra)]
    return [int(s) for s in np.random.SeedSequence(entropy).generate_state(count)]


def abduct(model: CountsModel, x, y_pred, m_u: int, seed: int) -> list:
    """Frozen reparameterized samples from q(u_l | x, y_pred) q(u_g | x, y_pred)."""
    if m_u < 1:
        raise ConfigError(f"m_u must be >= 1, got {m_u}")
    ul_h, ug_h, _ = model.q_latents(x, y_pred)
    gen = torch.Generator().manual_seed(int(seed))
    samples = []
    for _ in range(m_u):
        noise_l = torch.randn(ul_h.mean.shape, generator=gen, dtype=torch.float64)
        noise_g = torch.randn(ug_h.mean.shape, generator=gen, dtype=torch.float64)
        samples.append((
            reparam_sample(ul_h, noise_l).detach(),
            reparam_sample(ug_h, noise_g).detach(),
        ))
    return samples


def _stack_u(u_samples) -> tuple[torch.Tensor, torch.Tensor]:
    u_l = torch.stack([u[0] for u in u_samples])
    u_g = torch.stack([u[1] for u in u_samples])
    return u_l, u_g


def _interventional_dists(model: CountsModel, x_prime, u_l: torch.Tensor,
                          u_g: torch.Tensor, z_noise: torch.Tensor) -> OutputDist:
    """Predictor outputs for every (u sample, z sample) pair.

    x_prime is a single input; u_l/u_g have shape (m, ...) and z_noise
    (m, n, H_z, T_mid). The result is batched over m * n.
    """
    m, n = z_noise.shape[0], z_noise.shape[1]
    xb = torch.as_tensor(x_prime, dtype=torch.float64)
    if xb.dim() == 1:
        xb = xb.unsqueeze(-1)
    feats = model.encoder_features(xb.unsqueeze(0))
    pz = model.p_z_from_features(feats, u_l, u_g)
    z = pz.mean.unsqueeze(1) + pz.std().unsqueeze(1) * z_noise
    z = z.reshape(m * n, *z.shape[2:])
    u_l_rep = u_l.unsqueeze(1).expand(m, n, *u_l.shape[1:]).reshape(m * n, *u_l.shape[1:])
    u_g_rep = u_g.unsqueeze(1).expand(m, n, *u_g.shape[1:]).reshape(m * n, *u_g.shape[1:])
    return model.p_y(u_l_rep, u_g_rep, z)


def interventional_y(model: CountsModel, x_prime, u, n_z: int, noise: torch.Tensor) -> OutputDist:
    """do-probability of the label for one frozen exogenous sample.

    Averages p(y | z, u) over n_z samples z ~ p(z | x', u) using the given
    frozen standard-normal noise of shape (n_z, H_z, T_mid). Classification
    probabilities are averaged exactly; regression heads are moment-matched
    to the mixture (exact first and second moments).
    """
    u_l, u_g = u
    if noise.shape != (n_z, model.arch.H_z, model.arch.T_mid):
        raise ValueError(f"noise shape {tuple(noise.shape)} does not match (n_z, H_z, T_mid)")
    dists = _interventional_dists(model, x_prime, u_l.unsqueeze(0), u_g.unsqueeze(0),
                                  noise.unsqueeze(0))
    return _mix_dists(model, dists)


def _mix_dists(model: CountsModel, dists: OutputDist) -> OutputDist:
    if model.arch.task == CLASSIFICATION:
        return OutputDist(CLASSIFICATION, probs=dists.probs.mean(dim=0))
    means, variances = dists.head.mean, dists.head.var()
    mean = means.mean(dim=0)
    second = (variances + means ** 2).mean(dim=0)
    var = torch.clamp(second - mean ** 2, min=1e-12)
    return OutputDist(model.arch.task, head=GaussianHead(mean, torch.log(var)))


def cf_likelihood(model: CountsModel, x_prime, u_samples, z_noise: torch.Tensor,
                  y_cf) -> torch.Tensor:
    """Mean probability mass (or density) assigned to y_cf under the intervention.

    Differentiable w.r.t. x_prime; the frozen u samples and z noise make
    repeated evaluations at the same x_prime agree exactly.
    """
    u_l, u_g = _stack_u(u_samples)
    dists = _interventional_dists(model, x_prime, u_l, u_g, z_noise)
    if model.arch.task == CLASSIFICATION:
        return dists.probs[:, int(y_cf)].mean()
    y = torch.as_tensor(np.asarray(y_cf), dtype=torch.float64)
    log_density = (
        -0.5 * (np.log(2 * np.pi) + dists.head.log_var
                + (y - dists.head.mean) ** 2 / dists.head.var())
    ).sum(dim=-1)
    return torch.exp(log_density).mean()


def _discrepancy(model: CountsModel, x_prime, u_l, u_g, z_noise, y_cf) -> torch.Tensor:
    """Distance between the frozen-noise interventional prediction and the target.

    Cross-entropy to the target class for classification, per-timestep mean
    squared error to the target sequence for regression.
    """
    dists = _interventional_dists(model, x_prime, u_l, u_g, z_noise)
    if model.arch.task == CLASSIFICATION:
        return -torch.log(dists.probs.mean(dim=0)[int(y_cf)])
    y = torch.as_tensor(np.asarray(y_cf), dtype=torch.float64)
    y_hat = dists.head.mean.mean(dim=0)
    return ((y_hat - y) ** 2).mean()


def output_discrepancy(dist: OutputDist, y_cf) -> torch.Tensor:
    """Same distance for a plain predictor's output distribution."""
    if dist.kind == CLASSIFICATION:
        return -torch.log(dist.probs[int(y_cf)])
    y = torch.as_tensor(np.asarray(y_cf), dtype=torch.float64)
    return ((dist.head.mean - y) ** 2).mean()


def _descent_loop(x, objective, step, cfg: ExplainConfig, prox=None, step_scale=None):
    """Gradient descent with optional per-channel step preconditioning.

    ``step_scale`` holds the model's per-channel input scales; descending in
    standardized coordinates multiplies the raw-space gradient by scale^2,
    so channels the model sees at unit variance also move at comparable
    raw magnitudes.
    """
    x0 = torch.as_tensor(x, dtype=torch.float64).detach()
    x_cf = x0.clone()
    if step_scale is None:
        precond = torch.ones(x0.shape[0], 1, dtype=torch.float64)
    else:
        precond = torch.as_tensor(step_scale, dtype=torch.float64).reshape(-1, 1) ** 2
    iters = 0
    while True:
        x_var = x_cf.detach().requires_grad_(True)
        d = objective(x_var)
        d_val = float(d.detach())
        if not np.isfinite(d_val):
            raise ExplanationError(f"non-finite discrepancy at iteration {iters}: {d_val}")
        if d_val < cfg.epsilon or iters >= cfg.max_iters:
            break
        (grad,) = torch.autograd.grad(d, x_var)
        if not torch.all(torch.isfinite(grad)):
            raise ExplanationError(f"non-finite gradient at iteration {iters}")
        x_new = (x_var - step * precond * grad).detach()
        x_cf = prox(x_new, x0) if prox is not None else x_new
        iters += 1
    return x_cf.detach(), iters, d_val


def explain(model: CountsModel, x, y_cf, cfg: ExplainConfig) -> ExplanationResult:
    """Abduction / action / prediction search for a counterfactual input."""
    cfg.validate()
    seed_u, seed_z = _derived_seeds(cfg.seed, 2)
    y_pred, _ = model.predict(x)
    u_samples = abduct(model, x, y_pred, cfg.m_u, seed_u)
    u_l, u_g = _stack_u(u_samples)
    gen = torch.Generator().manual_seed(seed_z)
    z_noise = torch.randn(
        (cfg.m_u, cfg.n_z, model.arch.H_z, model.arch.T_mid),
        generator=gen, dtype=torch.float64,
    )

    def objective(x_var):
        return _discrepancy(model, x_var, u_l, u_g, z_noise, y_cf)

    x0 = torch.as_tensor(x, dtype=torch.float64)
    if x0.dim() == 1:
        x0 = x0.unsqueeze(-1)
    x_cf, iters, d_val = _descent_loop(x0, objective, cfg.step_size, cfg,
                                       step_scale=model.x_scale)
    with torch.no_grad():
        achieved = _mix_dists(model, _interventional_dists(model, x_cf, u_l, u_g, z_noise))
    return ExplanationResult(
        x_cf=x_cf, y_target=y_cf, y_achieved=achieved,
        iterations=iters, final_discrepancy=d_val,
        converged=d_val < cfg.epsilon,
    )


def rgd_explain(predict_fn, x, y_cf, cfg: ExplainConfig, l1_weight: float = 0.01,
                step_scale=None) -> ExplanationResult:
    """Gradient-descent baseline with proximal L1 regularization toward x.

    ``predict_fn`` maps an input tensor to an OutputDist and must be
    differentiable w.r.t. its input. No abduction, no exogenous fixing.
    ``step_scale`` applies the same standardized-coordinate preconditioning
    as ``explain`` so both methods share one step rule.
    """
    cfg.validate()
    if l1_weight < 0:
        raise ConfigError(f"l1_weight must be >= 0, got {l1_weight}")

    x0 = torch.as_tensor(x, dtype=torch.float64)
    if x0.dim() == 1:
        x0 = x0.unsqueeze(-1)
    if step_scale is None:
        thresh = cfg.step_size * l1_weight
    else:
        thresh = (cfg.step_size * l1_weight
                  * torch.as_tensor(step_scale, dtype=torch.float64).reshape(-1, 1))

    def objective(x_var):
        return output_discrepancy(predict_fn(x_var), y_cf)

    def prox(x_new, x_orig):
        delta = x_new - x_orig
        shrunk = torch.sign(delta) * torch.clamp(delta.abs() - thresh, min=0.0)
        return x_orig + shrunk

    x_cf, iters, d_val = _descent_loop(x0, objective, cfg.step_size, cfg, prox=prox,
                                       step_scale=step_scale)
    with torch.no_grad():
        achieved = predict_fn(x_cf)
    return ExplanationResult(
        x_cf=x_cf, y_target=y_cf, y_achieved=achieved,
        iterations=iters, final_discrepancy=d_val,
        converged=d_val < cfg.epsilon,
    )


# ---------------------------------------------------------------------------
# Batch explanation over a dataset
# ---------------------------------------------------------------------------

@dataclass
class ExplanationRecord:
    id: int
    x_cf: np.ndarray
    y_pred: object
    y_target: object
    converged: bool
    iterations: int
    final_discrepancy: float


def classification_flip_target(kind: str, y_pred: int, num_classes: int) -> int:
    """Default targets: flip the binary label; for pairs keep the first
    segment's label and flip the second."""
    if kind == "pairs":
        y1, y2 = divmod(int(y_pred), 2)
        return 2 * y1 + (1 - y2)
    return (int(y_pred) + 1) % num_classes


def explain_instance(model: CountsModel, x: np.ndarray, instance_id: int, kind: str,
                     method: str, cfg: ExplainConfig, target=None, shift: int = 20,
                     l1_weight: float = 0.01) -> ExplanationRecord:
    """Explain one instance with a per-instance RNG stream derived from (seed, id)."""
    from .metrics import spike_cf_target

    inst_seed = _derived_seeds(cfg.seed, 1, extra=instance_id)[0]
    inst_cfg = ExplainConfig(m_u=cfg.m_u, n_z=cfg.n_z, step_size=cfg.step_size,
                             epsilon=cfg.epsilon, max_iters=cfg.max_iters, seed=inst_seed)
    y_pred, _ = model.predict(x)
    if model.arch.task == CLASSIFICATION:
        y_pred_out = int(y_pred)
        y_cf = int(target) if target is not None else classification_flip_target(
            kind, y_pred_out, model.arch.num_classes)
    else:
        y_pred_out = y_pred.detach().numpy()
        y_cf = spike_cf_target(y_pred_out, shift=shift)
    if method == "counts":
        result = explain(model, x, y_cf, inst_cfg)
    elif method == "rgd":
        result = rgd_explain(model.predict_dist, x, y_cf, inst_cfg, l1_weight=l1_weight,
                             step_scale=model.x_scale)
    else:
        raise ConfigError(f"unknown explanation method {method!r}")
    return ExplanationRecord(
        id=instance_id,
        x_cf=result.x_cf.detach().numpy(),
        y_pred=y_pred_out,
        y_target=y_cf,
        converged=result.converged,
        iterations=result.iterations,
        final_discrepancy=result.final_discrepancy,
    )


def explain_dataset(model: CountsModel, dataset, method: str, cfg: ExplainConfig,
                    target=None, shift: int = 20, l1_weight: float = 0.01,
                    ids=None, threads: int = 1) -> list:
    """Explain a set of instances; instances are independent and may run in parallel."""
    from .dataio import dataset_tensors

    x_all, _ = dataset_tensors(dataset)
    ids = list(range(dataset.n)) if ids is None else list(ids)

    def job(i):
        return explain_instance(model, x_all[i], i, dataset.kind, method, cfg,
                                target=target, shift=shift, l1_weight=l1_weight)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        torch.set_num_threads(1)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(job, ids))
    return [job(i) for i in ids]


# ---------------------------------------------------------------------------
# Explanation batch artifacts
# ---------------------------------------------------------------------------

EXPLANATIONS_NAME = "explanations.csv"


def write_explanations(records: list, directory, kind: str) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    classification = kind in ("toy", "pairs")
    with open(directory / EXPLANATIONS_NAME, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["id", "converged", "iterations", "final_discrepancy"]
        if classification:
            header += ["y_pred", "y_target"]
        writer.writerow(header)
        for rec in records:
            row = [rec.id, int(rec.converged), rec.iterations, repr(rec.final_discrepancy)]
            if classification:
                row += [int(rec.y_pred), int(rec.y_target)]
            writer.writerow(row)
    for rec in records:
        _write_xcf(rec, directory, kind)
        if not classification:
            _write_ycf(rec, directory)
    return directory


def _write_xcf(rec: ExplanationRecord, directory: Path, kind: str) -> None:
    x_cf = np.asarray(rec.x_cf)
    with open(directory / f"xcf_{rec.id}.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if kind == "toy":
            writer.writerow(["id"] + [f"x{j}" for j in range(TOY_DIM)])
            writer.writerow([rec.id] + [repr(float(v)) for v in x_cf[:, 0]])
        elif kind == "pairs":
            writer.writerow(["id", "seg"] + [f"x{j}" for j in range(TOY_DIM)])
            flat = x_cf[:, 0]
            for seg in range(2):
                writer.writerow([rec.id, seg]
                                + [repr(float(v)) for v in flat[seg * TOY_DIM:(seg + 1) * TOY_DIM]])
        else:
            writer.writerow(["id", "ch", "t", "x"])
            for d in range(x_cf.shape[0]):
                for t in range(x_cf.shape[1]):
                    writer.writerow([rec.id, d, t, repr(float(x_cf[d, t]))])


def _write_ycf(rec: ExplanationRecord, directory: Path) -> None:
    y_pred = np.asarray(rec.y_pred)
    y_cf = np.asarray(rec.y_target)
    with open(directory / f"ycf_{rec.id}.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "t", "y_pred", "y_cf"])
        for t in range(len(y_cf)):
            writer.writerow([rec.id, t, repr(float(y_pred[t])), repr(float(y_cf[t]))])


def read_explanations(directory, kind: str) -> list:
    directory = Path(directory)
    index_path = directory / EXPLANATIONS_NAME
    if not index_path.exists():
        raise FileNotFoundError(f"missing explanations index: {index_path}")
    classification = kind in ("toy", "pairs")
    with open(index_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    records = []
    for row in rows:
        rec_id = int(row["id"])
        x_cf = _read_xcf(directory, rec_id, kind)
        if classification:
            y_pred, y_cf = int(row["y_pred"]), int(row["y_target"])
        else:
            y_pred, y_cf = _read_ycf(directory, rec_id)
        records.append(ExplanationRecord(
            id=rec_id, x_cf=x_cf, y_pred=y_pred, y_target=y_cf,
            converged=bool(int(row["converged"])), iterations=int(row["iterations"]),
            final_discrepancy=float(row["final_discrepancy"]),
        ))
    return records


def _read_xcf(directory: Path, rec_id: int, kind: str) -> np.ndarray:
    path = directory / f"xcf_{rec_id}.csv"
    if not path.exists():
        raise FileNotFoundError(f"missing counterfactual input file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if kind == "toy":
        return np.array([[float(rows[0][f"x{j}"])] for j in range(TOY_DIM)])
    if kind == "pairs":
        flat = [float(row[f"x{j}"]) for row in rows for j in range(TOY_DIM)]
        return np.array(flat)[:, None]
    channels = sorted({int(r["ch"]) for r in rows})
    times = sorted({int(r["t"]) for r in rows})
    x_cf = np.empty((len(channels), len(times)))
    for r in rows:
        x_cf[int(r["ch"]), int(r["t"])] = float(r["x"])
    return x_cf


def _read_ycf(directory: Path, rec_id: int) -> tuple[np.ndarray, np.ndarray]:
    path = directory / f"ycf_{rec_id}.csv"
    if not path.exists():
        raise FileNotFoundError(f"missing target sequence file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    y_pred = np.array([float(r["y_pred"]) for r in rows])
    y_cf = np.array([float(r["y_cf"]) for r in rows])
    return y_pred, y_cf
