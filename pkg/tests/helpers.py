"""Shared test utilities and independent estimators used as oracles."""

import numpy as np
import torch

from counts.model import ArchConfig, CountsModel, build_model, reparam_sample
from counts.objective import gaussian_logpdf_elem


def small_toy_arch(num_classes=2, d=4):
    return ArchConfig(D=d, T_in=1, T_mid=1, H_z=2, H_l=2, H_g=2, hidden=8,
                      task="classification", num_classes=num_classes)


def tiny_toy_arch(num_classes=2):
    """Small-width architecture matching the 12-dim toy dataset."""
    return small_toy_arch(num_classes=num_classes, d=12)


def zero_model(arch=None) -> CountsModel:
    model = build_model(arch or small_toy_arch(), seed=0)
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    return model


def _log_weight_samples(model: CountsModel, x: torch.Tensor, n: int, seed: int) -> torch.Tensor:
    """log [p(y,u,z|x) / q(y,u,z|x)] for n joint samples from q.

    Built from the public heads only; serves as an independent check of the
    ELBO decomposition (the importance-weighted log-mean-exp of these
    weights upper-bounds their mean).
    """
    gen = torch.Generator().manual_seed(seed)
    xb = x.unsqueeze(0).expand(n, *x.shape)
    probs = model.q_y(x).probs
    classes = torch.multinomial(probs, n, replacement=True, generator=gen)
    y_onehot = torch.nn.functional.one_hot(classes, model.arch.num_classes).to(torch.float64)
    ul_h, ug_h, z_h = model.q_latents(xb, y_onehot)

    def draw(head):
        noise = torch.randn(head.mean.shape, generator=gen, dtype=torch.float64)
        return reparam_sample(head, noise)

    u_l, u_g, z = draw(ul_h), draw(ug_h), draw(z_h)
    pz_h = model.p_z(xb, u_l, u_g)
    py = model.p_y(u_l, u_g, z)

    def summed(t):
        return t.reshape(n, -1).sum(dim=-1)

    log_q = (
        torch.log(probs[classes])
        + summed(gaussian_logpdf_elem(u_l, ul_h))
        + summed(gaussian_logpdf_elem(u_g, ug_h))
        + summed(gaussian_logpdf_elem(z, z_h))
    )
    std_normal = -0.5 * (np.log(2 * np.pi) + u_l ** 2)
    std_normal_g = -0.5 * (np.log(2 * np.pi) + u_g ** 2)
    log_p = (
        summed(std_normal)
        + summed(std_normal_g)
        + summed(gaussian_logpdf_elem(z, pz_h))
        + torch.log(py.probs[torch.arange(n), classes])
    )
    return (log_p - log_q).detach()


def mc_elbo_estimate(model: CountsModel, x: torch.Tensor, n: int, seed: int) -> float:
    """Monte-Carlo ELBO: mean log-weight over joint samples from q."""
    return float(_log_weight_samples(model, x, n, seed).mean())


def importance_weighted_estimate(model: CountsModel, x: torch.Tensor, n: int,
                                 seed: int) -> tuple[float, float]:
    """log-mean-exp importance estimate and its delta-method standard error."""
    log_w = _log_weight_samples(model, x, n, seed)
    shift = log_w.max()
    w = torch.exp(log_w - shift)
    mean_w = float(w.mean())
    estimate = float(shift) + np.log(mean_w)
    stderr = float(w.std()) / (mean_w * np.sqrt(n))
    return estimate, stderr
