"""Training objective: reconstruction, KL regularizers, entropy, supervision.

The evidence lower bound decomposes into four terms:

* recon: E_{q(y|x)} E_{q(u,z|x,y)} [log p(y | u, z)]
* kl_z:  E_{q(y,u|x)} KL[q(z | x, y) || p(z | u, x)]
* kl_u:  E_{q(y|x)}   KL[q(u_l, u_g | x, y) || N(0, I)]
* ent_y: entropy of q(y | x)

and the full objective is -(recon - kl_z - kl_u + ent_y) - lambda_sup * l_y
with l_y = log q(y_obs | x).

For classification the expectation over q(y|x) is taken by exact
enumeration over classes (cheap for K <= 4 and avoids discrete-gradient
issues); for sequence regression labels are drawn by reparameterization.
Monte-Carlo noise is drawn once per step and shared across the batch, so
the loss of a duplicated instance equals the loss of the single instance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigError, TrainingDivergedError
from .model import (
    CLASSIFICATION,
    ArchConfig,
    CountsModel,
    GaussianHead,
    build_model,
    reparam_sample,
)

LN_2PI = math.log(2.0 * math.pi)


@dataclass
class McConfig:
    n_y: int = 1
    n_u: int = 1
    n_z: int = 1
    seed: int = 0

    def validate(self) -> None:
        if min(self.n_y, self.n_u, self.n_z) < 1:
            raise ConfigError("Monte-Carlo sample counts must be >= 1")


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 1e-3
    lambda_sup: float = 1.0
    mc: McConfig = field(default_factory=McConfig)
    seed: int = 0
    # Condition the reconstruction and KL terms on the observed label instead
    # of sampling the label from q(y | x). The sampled-label estimator is the
    # default; conditioning avoids latent collapse on sequence tasks.
    observed_y: bool = False

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.lambda_sup < 0:
            raise ConfigError(f"lambda_sup must be >= 0, got {self.lambda_sup}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        self.mc.validate()


@dataclass
class LossBreakdown:
    recon: float
    kl_z: float
    kl_u: float
    ent_y: float
    l_y: float
    total: float


# ---------------------------------------------------------------------------
# Probability building blocks
# ---------------------------------------------------------------------------

def gaussian_kl_elem(a: GaussianHead, b: GaussianHead) -> torch.Tensor:
    """Elementwise KL(N(a) || N(b)) for diagonal Gaussians."""
    if a.mean.shape != b.mean.shape:
        raise ValueError("KL requires heads of equal shape")
    var_a, var_b = a.var(), b.var()
    return 0.5 * (b.log_var - a.log_var + (var_a + (a.mean - b.mean) ** 2) / var_b - 1.0)


def gaussian_kl(a: GaussianHead, b: GaussianHead) -> torch.Tensor:
    """Closed-form KL summed over all dimensions."""
    return gaussian_kl_elem(a, b).sum()


def standard_normal_kl_elem(a: GaussianHead) -> torch.Tensor:
    return 0.5 * (a.var() + a.mean ** 2 - 1.0 - a.log_var)


def gaussian_logpdf_elem(value: torch.Tensor, head: GaussianHead) -> torch.Tensor:
    return -0.5 * (LN_2PI + head.log_var + (value - head.mean) ** 2 / head.var())


def gaussian_entropy_elem(head: GaussianHead) -> torch.Tensor:
    return 0.5 * (1.0 + LN_2PI + head.log_var)


def categorical_entropy(probs: torch.Tensor) -> torch.Tensor:
    return -torch.special.xlogy(probs, probs).sum(dim=-1)


def _sum_tail(t: torch.Tensor) -> torch.Tensor:
    """Sum over every dimension except the leading batch dimension."""
    return t.reshape(t.shape[0], -1).sum(dim=-1)


def _noise_like(head: GaussianHead, gen: torch.Generator) -> torch.Tensor:
    # One draw shared across the batch: duplicated instances see identical noise.
    shape = (1,) + tuple(head.mean.shape[1:])
    return torch.randn(shape, generator=gen, dtype=torch.float64).expand(head.mean.shape)


# ---------------------------------------------------------------------------
# ELBO terms
# ---------------------------------------------------------------------------

def _elbo_tensors(model: CountsModel, xb: torch.Tensor, mc: McConfig,
                  gen: torch.Generator) -> dict:
    """Per-instance ELBO terms for a batch, differentiable via reparameterization."""
    if model.arch.task == CLASSIFICATION:
        return _elbo_classification(model, xb, mc, gen)
    return _elbo_regression(model, xb, mc, gen)


def _inner_terms(model, xb, y_repr, mc, gen, log_py):
    """recon and kl_z estimates for one label value (shared structure)."""
    ul_h, ug_h, z_h = model.q_latents(xb, y_repr)
    kl_u = _sum_tail(standard_normal_kl_elem(ul_h)) + _sum_tail(standard_normal_kl_elem(ug_h))
    recon = 0.0
    kl_z = 0.0
    for _ in range(mc.n_u):
        u_l = reparam_sample(ul_h, _noise_like(ul_h, gen))
        u_g = reparam_sample(ug_h, _noise_like(ug_h, gen))
        pz_h = model.p_z(xb, u_l, u_g)
        kl_z = kl_z + _sum_tail(gaussian_kl_elem(z_h, pz_h))
        for _ in range(mc.n_z):
            z = reparam_sample(z_h, _noise_like(z_h, gen))
            recon = recon + log_py(model.p_y(u_l, u_g, z))
    return recon / (mc.n_u * mc.n_z), kl_z / mc.n_u, kl_u


def _elbo_classification(model, xb, mc, gen):
    probs = model.q_y(xb).probs
    ent_y = categorical_entropy(probs)
    recon = torch.zeros(xb.shape[0], dtype=torch.float64)
    kl_z = torch.zeros_like(recon)
    kl_u = torch.zeros_like(recon)
    for k in range(model.arch.num_classes):
        w = probs[:, k]
        recon_k, kl_z_k, kl_u_k = _inner_terms(
            model, xb, k, mc, gen, lambda dist: torch.log(dist.probs[:, k])
        )
        recon = recon + w * recon_k
        kl_z = kl_z + w * kl_z_k
        kl_u = kl_u + w * kl_u_k
    return {"recon": recon, "kl_z": kl_z, "kl_u": kl_u, "ent_y": ent_y}


def _elbo_regression(model, xb, mc, gen):
    qy = model.q_y(xb).head
    ent_y = _sum_tail(gaussian_entropy_elem(qy))
    recon = torch.zeros(xb.shape[0], dtype=torch.float64)
    kl_z = torch.zeros_like(recon)
    kl_u = torch.zeros_like(recon)
    for _ in range(mc.n_y):
        y_s = reparam_sample(qy, _noise_like(qy, gen))
        recon_s, kl_z_s, kl_u_s = _inner_terms(
            model, xb, y_s, mc, gen,
            lambda dist: _sum_tail(gaussian_logpdf_elem(y_s, dist.head)),
        )
        recon = recon + recon_s
        kl_z = kl_z + kl_z_s
        kl_u = kl_u + kl_u_s
    return {"recon": recon / mc.n_y, "kl_z": kl_z / mc.n_y, "kl_u": kl_u / mc.n_y,
            "ent_y": ent_y}


def _elbo_tensors_observed(model: CountsModel, xb: torch.Tensor, yb, mc: McConfig,
                           gen: torch.Generator) -> dict:
    """ELBO terms with the observed label substituted into the inner expectations."""
    if model.arch.task == CLASSIFICATION:
        probs = model.q_y(xb).probs
        ent_y = categorical_entropy(probs)
        idx = torch.as_tensor(yb, dtype=torch.long)
        y_repr = torch.nn.functional.one_hot(idx, model.arch.num_classes).to(torch.float64)
        log_py = lambda dist: torch.log(dist.probs[torch.arange(xb.shape[0]), idx])
    else:
        qy = model.q_y(xb).head
        ent_y = _sum_tail(gaussian_entropy_elem(qy))
        y_repr = torch.as_tensor(np.asarray(yb), dtype=torch.float64).reshape(xb.shape[0], -1)
        log_py = lambda dist: _sum_tail(gaussian_logpdf_elem(y_repr, dist.head))
    recon, kl_z, kl_u = _inner_terms(model, xb, y_repr, mc, gen, log_py)
    return {"recon": recon, "kl_z": kl_z, "kl_u": kl_u, "ent_y": ent_y}


def elbo_terms(model: CountsModel, x, mc: McConfig, generator: torch.Generator | None = None,
               ) -> LossBreakdown:
    """Monte-Carlo ELBO terms for one input (or the mean over a batch)."""
    mc.validate()
    xb, _ = model._as_batch(x)
    gen = generator or torch.Generator().manual_seed(mc.seed)
    terms = _elbo_tensors(model, xb, mc, gen)
    vals = {k: float(v.detach().mean()) for k, v in terms.items()}
    if not all(math.isfinite(v) for v in vals.values()):
        raise TrainingDivergedError(f"non-finite ELBO terms: {vals}")
    total = -(vals["recon"] - vals["kl_z"] - vals["kl_u"] + vals["ent_y"])
    return LossBreakdown(l_y=0.0, total=total, **vals)


# ---------------------------------------------------------------------------
# Supervision and the full loss
# ---------------------------------------------------------------------------

def _supervised_tensors(model: CountsModel, xb: torch.Tensor, yb) -> torch.Tensor:
    dist = model.q_y(xb)
    if model.arch.task == CLASSIFICATION:
        idx = torch.as_tensor(yb, dtype=torch.long)
        return torch.log(dist.probs[torch.arange(xb.shape[0]), idx])
    y = torch.as_tensor(np.asarray(yb), dtype=torch.float64).reshape(xb.shape[0], -1)
    return _sum_tail(gaussian_logpdf_elem(y, dist.head))


def supervised_term(model: CountsModel, x, y_observed) -> float:
    """log q(y_observed | x) for one instance."""
    xb, single = model._as_batch(x)
    if not single:
        raise ValueError("supervised_term expects a single instance")
    if model.arch.task == CLASSIFICATION:
        yb = torch.tensor([int(y_observed)])
    else:
        yb = torch.as_tensor(np.asarray(y_observed), dtype=torch.float64).reshape(1, -1)
    return float(_supervised_tensors(model, xb, yb)[0].detach())


def loss_tensors(model: CountsModel, xb: torch.Tensor, yb, cfg: TrainConfig,
                 gen: torch.Generator) -> dict:
    """Differentiable loss terms for a batch; 'total' is the optimization target."""
    l_y = _supervised_tensors(model, xb, yb)
    if model.kind == "plain":
        zero = torch.zeros((), dtype=torch.float64)
        return {"recon": zero, "kl_z": zero, "kl_u": zero, "ent_y": zero,
                "l_y": l_y.mean(), "total": -l_y.mean()}
    if cfg.observed_y:
        terms = _elbo_tensors_observed(model, xb, yb, cfg.mc, gen)
    else:
        terms = _elbo_tensors(model, xb, cfg.mc, gen)
    elbo = terms["recon"] - terms["kl_z"] - terms["kl_u"] + terms["ent_y"]
    total = -elbo.mean() - cfg.lambda_sup * l_y.mean()
    return {**{k: v.mean() for k, v in terms.items()}, "l_y": l_y.mean(), "total": total}


def loss(model: CountsModel, batch, cfg: TrainConfig,
         generator: torch.Generator | None = None) -> LossBreakdown:
    """LossBreakdown over a (X, Y) batch; raises if the total is non-finite."""
    cfg.validate()
    x, y = batch
    xb, _ = model._as_batch(x)
    if xb.shape[0] == 0:
        raise ValueError("loss requires a nonempty batch")
    gen = generator or torch.Generator().manual_seed(cfg.mc.seed)
    terms = loss_tensors(model, xb, y, cfg, gen)
    vals = {k: float(v.detach()) for k, v in terms.items()}
    if not math.isfinite(vals["total"]):
        raise TrainingDivergedError(f"non-finite loss: {vals}")
    return LossBreakdown(**vals)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def init_model(arch: ArchConfig, dataset, seed: int, kind: str = "counts") -> CountsModel:
    """Seeded weights plus input standardization from the training data.

    The shift and scale are global (one scalar pair), not per channel:
    channels keep their relative magnitudes, so the model's input
    sensitivities reflect the data rather than the normalization.
    """
    from .dataio import dataset_tensors

    model = build_model(arch, seed, kind=kind)
    x, _ = dataset_tensors(dataset)
    shift = np.full(arch.D, x.mean())
    scale = np.full(arch.D, max(float(x.std()), 1e-8))
    model.set_normalization(shift, scale)
    return model


HISTORY_COLUMNS = ["epoch", "recon", "kl_z", "kl_u", "ent_y", "l_y", "total", "val_metric"]


def train(dataset, arch: ArchConfig, cfg: TrainConfig, val_dataset=None,
          kind: str = "counts") -> tuple[CountsModel, list]:
    """Stochastic-gradient training; deterministic given cfg.seed."""
    from .dataio import dataset_tensors
    from .metrics import prediction_metric

    cfg.validate()
    if dataset.n == 0:
        raise ValueError("cannot train on an empty dataset")
    model = init_model(arch, dataset, cfg.seed, kind=kind)
    x_all, y_all = dataset_tensors(dataset)
    xt = torch.as_tensor(x_all, dtype=torch.float64)
    yt = torch.as_tensor(y_all)
    gen = torch.Generator().manual_seed(cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    history = []
    for epoch in range(cfg.epochs):
        perm = torch.randperm(dataset.n, generator=gen)
        sums = {k: 0.0 for k in ("recon", "kl_z", "kl_u", "ent_y", "l_y", "total")}
        for start in range(0, dataset.n, cfg.batch_size):
            idx = perm[start: start + cfg.batch_size]
            terms = loss_tensors(model, xt[idx], yt[idx], cfg, gen)
            total = terms["total"]
            if not torch.isfinite(total):
                raise TrainingDivergedError(
                    f"training diverged at epoch {epoch}, batch offset {start}: "
                    + str({k: float(v) for k, v in terms.items()})
                )
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            for k in sums:
                sums[k] += float(terms[k].detach()) * len(idx)
        row = {"epoch": epoch}
        row.update({k: v / dataset.n for k, v in sums.items()})
        row["val_metric"] = (
            prediction_metric(model, val_dataset) if val_dataset is not None else float("nan")
        )
        history.append(row)
    return model, history


def write_history(history: list, path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow([row["epoch"]] + [repr(float(row[c])) for c in HISTORY_COLUMNS[1:]])
