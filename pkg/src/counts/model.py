"""Generative and inference networks with a shared causal-graph wiring.

The generative side factorizes as p(u_l) p(u_g) p(z | u_l, u_g, x)
p(y | u_l, u_g, z); the inference side as q(y | x) q(u_l | x, y)
q(u_g | x, y) q(z | x, y). All factors are diagonal Gaussians except the
label heads, which are categorical for classification tasks and
per-timestep Gaussians for sequence regression.

Everything runs in float64 so that gradients can be validated against
central finite differences at h = 1e-5. Inputs with temporal length 1 use
dense trunks; longer inputs use two strided temporal convolutions
(kernel 5, stride 2), quartering the temporal resolution.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, ModelFormatError

LOG_VAR_MIN = -8.0
LOG_VAR_MAX = 8.0

MODEL_MAGIC = b"CTSMDL01"
MODEL_VERSION = 1

CLASSIFICATION = "classification"
REGRESSION = "sequence-regression"


def _conv_out_len(length: int) -> int:
    # Conv1d(kernel=5, stride=2, padding=2)
    return (length - 1) // 2 + 1


def downsampled_length(t_in: int) -> int:
    return t_in if t_in == 1 else _conv_out_len(_conv_out_len(t_in))


@dataclass
class ArchConfig:
    D: int
    T_in: int
    T_mid: int
    H_z: int
    H_l: int
    H_g: int
    hidden: int = 64
    task: str = CLASSIFICATION
    num_classes: int = 2
    # Log-variance floor for the exogenous posteriors q(u_l | x, y) and
    # q(u_g | x, y). Raising it above the global floor caps how much
    # instance-specific detail the confounder channel can carry, keeping
    # per-timestep evidence in the representation z.
    u_log_var_min: float = LOG_VAR_MIN

    def validate(self) -> None:
        dims = {
            "D": self.D, "T_in": self.T_in, "T_mid": self.T_mid,
            "H_z": self.H_z, "H_l": self.H_l, "H_g": self.H_g, "hidden": self.hidden,
        }
        for name, v in dims.items():
            if v < 1:
                raise ConfigError(f"arch dimension {name} must be >= 1, got {v}")
        if self.task not in (CLASSIFICATION, REGRESSION):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.task == CLASSIFICATION and self.num_classes < 2:
            raise ConfigError(f"classification needs num_classes >= 2, got {self.num_classes}")
        expected = downsampled_length(self.T_in)
        if self.T_mid != expected:
            raise ConfigError(
                f"T_mid={self.T_mid} does not match the downsampling of T_in={self.T_in} "
                f"(expected {expected})"
            )
        if not LOG_VAR_MIN <= self.u_log_var_min < LOG_VAR_MAX:
            raise ConfigError(
                f"u_log_var_min must lie in [{LOG_VAR_MIN}, {LOG_VAR_MAX}), "
                f"got {self.u_log_var_min}"
            )


def toy_arch(hidden: int = 64, num_classes: int = 2, d: int = 12) -> ArchConfig:
    return ArchConfig(D=d, T_in=1, T_mid=1, H_z=8, H_l=4, H_g=4,
                      hidden=hidden, task=CLASSIFICATION, num_classes=num_classes)


def spike_arch(hidden: int = 64, t_in: int = 80, d: int = 3) -> ArchConfig:
    # Narrow, variance-floored exogenous latents: the confounder channel
    # carries channel-activeness bits while per-timestep evidence stays in z.
    return ArchConfig(D=d, T_in=t_in, T_mid=downsampled_length(t_in), H_z=8, H_l=2, H_g=2,
                      hidden=hidden, task=REGRESSION, u_log_var_min=0.0)


@dataclass
class GaussianHead:
    """Mean and log-variance of a diagonal Gaussian factor."""
    mean: torch.Tensor
    log_var: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_var.shape:
            raise ValueError(
                f"head shape mismatch: mean {tuple(self.mean.shape)} vs "
                f"log_var {tuple(self.log_var.shape)}"
            )

    def std(self) -> torch.Tensor:
        return torch.exp(0.5 * self.log_var)

    def var(self) -> torch.Tensor:
        return torch.exp(self.log_var)

    def __getitem__(self, idx) -> "GaussianHead":
        return GaussianHead(self.mean[idx], self.log_var[idx])


@dataclass
class OutputDist:
    """Label distribution: categorical probabilities or a Gaussian head."""
    kind: str
    probs: torch.Tensor | None = None
    head: GaussianHead | None = None

    def __getitem__(self, idx) -> "OutputDist":
        if self.kind == CLASSIFICATION:
            return OutputDist(self.kind, probs=self.probs[idx])
        return OutputDist(self.kind, head=self.head[idx])

    def validate(self, atol: float = 1e-9) -> None:
        if self.kind == CLASSIFICATION:
            if torch.any(self.probs < 0):
                raise ValueError("negative class probability")
            total = self.probs.sum(dim=-1)
            if torch.any((total - 1.0).abs() > atol):
                raise ValueError("class probabilities do not sum to 1")
        else:
            if not torch.all(torch.isfinite(self.head.var())) or torch.any(self.head.var() <= 0):
                raise ValueError("regression variances must be finite and positive")


@dataclass
class LatentSample:
    u_l: torch.Tensor
    u_g: torch.Tensor
    z: torch.Tensor


def reparam_sample(head: GaussianHead, noise: torch.Tensor) -> torch.Tensor:
    """mean + exp(log_var / 2) * noise, differentiable through the head."""
    if noise.shape != head.mean.shape:
        raise ValueError(
            f"noise shape {tuple(noise.shape)} != head shape {tuple(head.mean.shape)}"
        )
    return head.mean + head.std() * noise


def _clamped_head(raw: torch.Tensor, split: int) -> GaussianHead:
    mean, log_var = raw[..., :split, :], raw[..., split:, :]
    return GaussianHead(mean, torch.clamp(log_var, LOG_VAR_MIN, LOG_VAR_MAX))


class _Trunk(nn.Module):
    """Shared temporal feature extractor: x (B, D, T_in) -> (B, hidden, T_mid)."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.dense = arch.T_in == 1
        if self.dense:
            self.l1 = nn.Linear(arch.D, arch.hidden)
            self.l2 = nn.Linear(arch.hidden, arch.hidden)
        else:
            self.l1 = nn.Conv1d(arch.D, arch.hidden, kernel_size=5, stride=2, padding=2)
            self.l2 = nn.Conv1d(arch.hidden, arch.hidden, kernel_size=5, stride=2, padding=2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.dense:
            h = torch.tanh(self.l2(torch.tanh(self.l1(x.squeeze(-1)))))
            return h.unsqueeze(-1)
        return torch.tanh(self.l2(torch.tanh(self.l1(x))))


class _FlatHead(nn.Module):
    """Flatten temporal features and map to a fixed-size output."""

    def __init__(self, arch: ArchConfig, out_dim: int):
        super().__init__()
        self.l1 = nn.Linear(arch.hidden * arch.T_mid, arch.hidden)
        self.l2 = nn.Linear(arch.hidden, out_dim)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        return self.l2(torch.tanh(self.l1(feats.flatten(1))))


class _SeqHead(nn.Module):
    """Per-timestep Gaussian sequence head with causal accumulation.

    A cumulative-sum branch lets the output at step t depend on all
    earlier evidence (switch-like targets need this), a direct branch
    keeps local detail; the head upsamples back to the input length.
    """

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.t_in = arch.T_in
        self.pre = nn.Conv1d(arch.hidden, arch.hidden, 1)
        self.mix_cum = nn.Conv1d(arch.hidden, arch.hidden, 1)
        self.mix_direct = nn.Conv1d(arch.hidden, arch.hidden, 1)
        self.out = nn.Conv1d(arch.hidden, 2, 1)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        evidence = torch.tanh(self.pre(feats))
        accumulated = torch.cumsum(evidence, dim=-1) / evidence.shape[-1]
        h = torch.tanh(self.mix_cum(accumulated) + self.mix_direct(feats))
        if h.shape[-1] != self.t_in:
            h = torch.nn.functional.interpolate(h, size=self.t_in, mode="linear",
                                                align_corners=True)
        # rows: per-step mean then per-step log-variance
        return self.out(h).flatten(1)


class CountsModel(nn.Module):
    """All weights of the generative (theta) and inference (phi) networks.

    Immutable after construction except through explicit optimizer steps in
    the training loop; every public method is a pure function of (weights,
    inputs, noise).
    """

    def __init__(self, arch: ArchConfig, kind: str = "counts"):
        super().__init__()
        arch.validate()
        if kind not in ("counts", "plain"):
            raise ConfigError(f"unknown model kind {kind!r}")
        self.arch = arch
        self.kind = kind
        hidden = arch.hidden
        y_dim = arch.num_classes if arch.task == CLASSIFICATION else arch.T_in
        out_dim = arch.num_classes if arch.task == CLASSIFICATION else 2 * arch.T_in

        # Fixed input standardization, set once from training data.
        self.register_buffer("x_shift", torch.zeros(arch.D, dtype=torch.float64))
        self.register_buffer("x_scale", torch.ones(arch.D, dtype=torch.float64))

        # phi: inference networks
        self.phi_trunk = _Trunk(arch)
        self.phi_qy = (_FlatHead(arch, out_dim) if arch.task == CLASSIFICATION
                       else _SeqHead(arch))
        self.phi_yembed = nn.Linear(y_dim, hidden)
        self.phi_mix = nn.Conv1d(hidden, hidden, 1)
        self.phi_ul = nn.Conv1d(hidden, 2 * arch.H_l, 1)
        self.phi_z = nn.Conv1d(hidden, 2 * arch.H_z, 1)
        self.phi_ug = nn.Linear(hidden, 2 * arch.H_g)

        # theta: generative networks
        self.th_trunk = _Trunk(arch)
        self.th_mix_x = nn.Conv1d(hidden, hidden, 1)
        self.th_mix_ul = nn.Conv1d(arch.H_l, hidden, 1)
        self.th_mix_ug = nn.Linear(arch.H_g, hidden)
        self.th_z = nn.Conv1d(hidden, 2 * arch.H_z, 1)
        self.py_ul = nn.Conv1d(arch.H_l, hidden, 1)
        self.py_z = nn.Conv1d(arch.H_z, hidden, 1)
        self.py_ug = nn.Linear(arch.H_g, hidden)
        self.py_head = (_FlatHead(arch, out_dim) if arch.task == CLASSIFICATION
                        else _SeqHead(arch))

        self.to(torch.float64)

    # -- input handling ----------------------------------------------------

    def _as_batch(self, x) -> tuple[torch.Tensor, bool]:
        x = torch.as_tensor(x, dtype=torch.float64)
        if x.dim() == 1 and self.arch.T_in == 1:
            x = x.unsqueeze(-1)
        if x.dim() == 2:
            x = x.unsqueeze(0)
            single = True
        elif x.dim() == 3:
            single = False
        else:
            raise ValueError(f"expected (D, T) or (B, D, T) input, got shape {tuple(x.shape)}")
        if x.shape[1] != self.arch.D or x.shape[2] != self.arch.T_in:
            raise ValueError(
                f"input shape {tuple(x.shape[1:])} does not match arch "
                f"({self.arch.D}, {self.arch.T_in})"
            )
        return x, single

    def _normalize(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.x_shift[:, None]) / self.x_scale[:, None]

    def _y_repr(self, y, batch: int) -> torch.Tensor:
        """Coerce labels to the network representation (one-hot or sequence)."""
        if self.arch.task == CLASSIFICATION:
            if isinstance(y, (int, np.integer)):
                y = torch.full((batch,), int(y), dtype=torch.long)
            y = torch.as_tensor(y)
            if y.dtype in (torch.int64, torch.int32):
                if y.dim() == 0:
                    y = y.expand(batch)
                y = torch.nn.functional.one_hot(y.long(), self.arch.num_classes)
            y = y.to(torch.float64)
            if y.dim() == 1:
                y = y.unsqueeze(0).expand(batch, -1)
            if y.shape != (batch, self.arch.num_classes):
                raise ValueError(f"label shape {tuple(y.shape)} invalid for classification")
        else:
            y = torch.as_tensor(y, dtype=torch.float64)
            if y.dim() == 1:
                y = y.unsqueeze(0).expand(batch, -1)
            if y.shape != (batch, self.arch.T_in):
                raise ValueError(f"label shape {tuple(y.shape)} invalid for sequence regression")
        return y

    @staticmethod
    def _maybe_single(obj, single: bool):
        if not single:
            return obj
        if isinstance(obj, GaussianHead):
            return obj[0]
        if isinstance(obj, OutputDist):
            return obj[0]
        return obj[0]

    # -- inference networks (phi) ------------------------------------------

    def q_y(self, x) -> OutputDist:
        """Label posterior q(y | x)."""
        xb, single = self._as_batch(x)
        raw = self.phi_qy(self.phi_trunk(self._normalize(xb)))
        dist = self._output_dist(raw)
        return self._maybe_single(dist, single)

    def q_latents(self, x, y) -> tuple[GaussianHead, GaussianHead, GaussianHead]:
        """Heads of q(u_l | x, y), q(u_g | x, y), q(z | x, y)."""
        xb, single = self._as_batch(x)
        yb = self._y_repr(y, xb.shape[0])
        feats = self.phi_trunk(self._normalize(xb))
        h = torch.tanh(self.phi_mix(feats) + self.phi_yembed(yb).unsqueeze(-1))
        u_floor = self.arch.u_log_var_min
        raw_ul = self.phi_ul(h)
        ul = GaussianHead(
            raw_ul[..., : self.arch.H_l, :],
            torch.clamp(raw_ul[..., self.arch.H_l:, :], u_floor, LOG_VAR_MAX),
        )
        z = _clamped_head(self.phi_z(h), self.arch.H_z)
        raw_ug = self.phi_ug(h.mean(dim=-1))
        ug = GaussianHead(
            raw_ug[..., : self.arch.H_g],
            torch.clamp(raw_ug[..., self.arch.H_g:], u_floor, LOG_VAR_MAX),
        )
        if single:
            ul, ug, z = ul[0], ug[0], z[0]
        return ul, ug, z

    # -- generative networks (theta) ---------------------------------------

    def p_z(self, x, u_l, u_g) -> GaussianHead:
        """Encoder head p(z | u_l, u_g, x)."""
        xb, single = self._as_batch(x)
        u_l, u_g = self._latent_batch(u_l, u_g, xb.shape[0], single)
        head = self.p_z_from_features(self.encoder_features(xb), u_l, u_g)
        return self._maybe_single(head, single)

    def encoder_features(self, x) -> torch.Tensor:
        """Generative-side temporal features of x, reusable across latent samples."""
        xb, _ = self._as_batch(x)
        return self.th_trunk(self._normalize(xb))

    def p_z_from_features(self, feats: torch.Tensor, u_l: torch.Tensor,
                          u_g: torch.Tensor) -> GaussianHead:
        if feats.shape[0] == 1 and u_l.shape[0] > 1:
            feats = feats.expand(u_l.shape[0], -1, -1)
        h = torch.tanh(
            self.th_mix_x(feats) + self.th_mix_ul(u_l) + self.th_mix_ug(u_g).unsqueeze(-1)
        )
        return _clamped_head(self.th_z(h), self.arch.H_z)

    def p_y(self, u_l, u_g, z) -> OutputDist:
        """Predictor p(y | u_l, u_g, z)."""
        single = torch.as_tensor(u_g).dim() == 1
        u_l, u_g = self._latent_batch(u_l, u_g, None, single)
        z = torch.as_tensor(z, dtype=torch.float64)
        if single:
            z = z.unsqueeze(0)
        if z.shape[1:] != (self.arch.H_z, self.arch.T_mid):
            raise ValueError(f"z shape {tuple(z.shape)} does not match arch")
        h = torch.tanh(self.py_ul(u_l) + self.py_z(z) + self.py_ug(u_g).unsqueeze(-1))
        dist = self._output_dist(self.py_head(h))
        return self._maybe_single(dist, single)

    def _latent_batch(self, u_l, u_g, batch, single):
        u_l = torch.as_tensor(u_l, dtype=torch.float64)
        u_g = torch.as_tensor(u_g, dtype=torch.float64)
        if single:
            u_l, u_g = u_l.unsqueeze(0), u_g.unsqueeze(0)
        if u_l.shape[1:] != (self.arch.H_l, self.arch.T_mid):
            raise ValueError(f"u_l shape {tuple(u_l.shape)} does not match arch")
        if u_g.shape[1:] != (self.arch.H_g,):
            raise ValueError(f"u_g shape {tuple(u_g.shape)} does not match arch")
        if batch is not None and u_l.shape[0] != batch:
            raise ValueError("latent batch size does not match input batch size")
        return u_l, u_g

    def _output_dist(self, raw: torch.Tensor) -> OutputDist:
        if self.arch.task == CLASSIFICATION:
            return OutputDist(CLASSIFICATION, probs=torch.softmax(raw, dim=-1))
        t = self.arch.T_in
        head = GaussianHead(raw[..., :t], torch.clamp(raw[..., t:], LOG_VAR_MIN, LOG_VAR_MAX))
        return OutputDist(REGRESSION, head=head)

    # -- prediction ----------------------------------------------------------

    def predict_dist(self, x) -> OutputDist:
        """Mean-propagated output distribution.

        The initial label estimate is the argmax (classification) or mean
        (regression) of q(y | x); latent heads are evaluated at that estimate
        and taken at their means; the predictor is applied once.

        Plain models skip the latent path and report q(y | x) directly.
        """
        if self.kind == "plain":
            return self.q_y(x)
        xb, single = self._as_batch(x)
        qy = self.q_y(xb)
        if self.arch.task == CLASSIFICATION:
            y0 = torch.argmax(qy.probs, dim=-1)
        else:
            y0 = qy.head.mean
        ul, ug, z = self.q_latents(xb, y0)
        dist = self.p_y(ul.mean, ug.mean, z.mean)
        return self._maybe_single(dist, single)

    def predict(self, x):
        """Point prediction and the distribution it was read from."""
        dist = self.predict_dist(x)
        if self.arch.task == CLASSIFICATION:
            y = torch.argmax(dist.probs, dim=-1)
            y = int(y) if y.dim() == 0 else y
        else:
            y = dist.head.mean
        return y, dist

    def set_normalization(self, shift, scale) -> None:
        shift = torch.as_tensor(shift, dtype=torch.float64).reshape(self.arch.D)
        scale = torch.as_tensor(scale, dtype=torch.float64).reshape(self.arch.D)
        if torch.any(scale <= 0):
            raise ConfigError("normalization scale must be positive")
        self.x_shift.copy_(shift)
        self.x_scale.copy_(scale)

    def clone(self) -> "CountsModel":
        other = CountsModel(dataclasses.replace(self.arch), kind=self.kind)
        other.load_state_dict({k: v.clone() for k, v in self.state_dict().items()})
        return other

    def assert_finite(self) -> None:
        for name, value in self.state_dict().items():
            if not torch.all(torch.isfinite(value)):
                raise ValueError(f"non-finite weights in {name}")


# Starting log-variances: representation heads start nearly deterministic so
# the predictor sees usable features from the first step; label heads start
# moderately sharp.
Z_LOG_VAR_INIT = -4.0
Y_LOG_VAR_INIT = -2.0


def init_weights(model: CountsModel, seed: int) -> CountsModel:
    """Deterministic Xavier-uniform weights, zero biases, sharp z-heads."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for param in model.parameters():
            if param.dim() >= 2:
                fan_out, fan_in = param.shape[0], int(np.prod(param.shape[1:]))
                bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
                noise = torch.rand(param.shape, generator=gen, dtype=torch.float64)
                param.copy_(noise * 2 * bound - bound)
            else:
                param.zero_()
        h_z = model.arch.H_z
        model.phi_z.bias[h_z:] = Z_LOG_VAR_INIT
        model.th_z.bias[h_z:] = Z_LOG_VAR_INIT
        if model.arch.task != CLASSIFICATION:
            model.phi_qy.out.bias[1] = Y_LOG_VAR_INIT
            model.py_head.out.bias[1] = Y_LOG_VAR_INIT
    return model


def build_model(arch: ArchConfig, seed: int, kind: str = "counts") -> CountsModel:
    return init_weights(CountsModel(arch, kind=kind), seed)


# ---------------------------------------------------------------------------
# Serialization: 8-byte magic, uint32 version, JSON header, raw float64 data
# ---------------------------------------------------------------------------

def save_model(model: CountsModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    header = {
        "arch": dataclasses.asdict(model.arch),
        "kind": model.kind,
        "tensors": [[name, list(value.shape)] for name, value in state.items()],
    }
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for value in state.values():
            fh.write(value.detach().cpu().numpy().astype("<f8").tobytes())
    return path


def load_model(path) -> CountsModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing model file: {path}")
    blob = path.read_bytes()
    if len(blob) < 16 or blob[:8] != MODEL_MAGIC:
        raise ModelFormatError(f"not a model file (bad magic): {path}")
    version, header_len = struct.unpack("<II", blob[8:16])
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    header = json.loads(blob[16: 16 + header_len].decode("utf-8"))
    model = CountsModel(ArchConfig(**header["arch"]), kind=header["kind"])
    offset = 16 + header_len
    state = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        raw = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        state[name] = torch.from_numpy(raw.copy().reshape(shape))
    if offset != len(blob):
        raise ModelFormatError("model file has trailing or truncated data")
    try:
        model.load_state_dict(state)
    except (RuntimeError, KeyError) as exc:
        raise ModelFormatError(f"model weights do not match architecture: {exc}") from exc
    return model


def describe_model(path) -> dict:
    model = load_model(path)
    n_params = sum(p.numel() for p in model.parameters())
    return {
        "arch": dataclasses.asdict(model.arch),
        "kind": model.kind,
        "n_parameters": n_params,
    }
