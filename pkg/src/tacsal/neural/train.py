"""Training loops for the cGAN translators, the noise VAE and PoseNet, plus inference.

Training is deterministic under a single thread: parameters are initialised
from ``torch.manual_seed(cfg.seed)`` and minibatch order comes from a numpy
generator seeded with the same value.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import TrainedModel
from .nets import NetSpec

log = logging.getLogger(__name__)

EpochData = Callable[[int], tuple[np.ndarray, np.ndarray]]


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class GanConfig:
    l1_weight: float = 100.0
    epochs: int = 100
    batch_size: int = 16
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    seed: int = 0
    base: int = 32
    adversarial: bool = True
    decay_from: float = 0.5

    def __post_init__(self):
        if self.l1_weight <= 0:
            raise ValueError("l1_weight must be positive")


@dataclass(frozen=True)
class VaeConfig:
    kl_weight: float = 1.0
    latent: int = 8
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    base: int = 32
    recon_sigma: float = 0.1
    decay_from: float = 0.5

    def __post_init__(self):
        if self.kl_weight <= 0:
            raise ValueError("kl_weight must be positive")
        if self.latent < 2:
            raise ValueError("latent dimension must be >= 2")


@dataclass(frozen=True)
class PoseConfig:
    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    base: int = 32
    y_scale: float = 6.0
    decay_from: float = 0.5


def _seed(seed: int) -> np.random.Generator:
    torch.manual_seed(seed)
    torch.set_num_threads(1)
    return np.random.default_rng(seed)


def _tensor(a: np.ndarray) -> torch.Tensor:
    a = np.asarray(a, dtype=np.float32)
    if a.ndim == 3:
        a = a[:, None]
    return torch.from_numpy(np.ascontiguousarray(a))


def _lr_scale(epoch: int, epochs: int, decay_from: float) -> float:
    """Constant, then linear decay to zero over the last ``1 - decay_from`` of training."""
    start = int(epochs * decay_from)
    if epoch < start:
        return 1.0
    return 1.0 - (epoch - start) / max(1, epochs - start)


def _check(values: dict, epoch: int, step: int) -> None:
    bad = {k: v for k, v in values.items() if not math.isfinite(v)}
    if bad:
        raise TrainingDiverged(f"non-finite loss at epoch {epoch} step {step}: {bad}")


def _as_arrays(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, tuple):
        return np.asarray(data[0]), np.asarray(data[1])
    return np.stack([s.input for s in data]), np.stack([s.target for s in data])


def kl_divergence(mu: torch.Tensor | np.ndarray, logvar: torch.Tensor | np.ndarray):
    """``KL(N(mu, diag exp(logvar)) || N(0, I))`` summed over the last axis."""
    if isinstance(mu, torch.Tensor):
        return 0.5 * torch.sum(mu ** 2 + logvar.exp() - 1.0 - logvar, dim=-1)
    mu, logvar = np.asarray(mu, dtype=np.float64), np.asarray(logvar, dtype=np.float64)
    return 0.5 * np.sum(mu ** 2 + np.exp(logvar) - 1.0 - logvar, axis=-1)


def train_cgan(data: Sequence | tuple[np.ndarray, np.ndarray] | None, cfg: GanConfig,
               holdout: tuple[np.ndarray, np.ndarray] | None = None,
               epoch_data: EpochData | None = None, name: str = "generator") -> TrainedModel:
    """Train a pix2pix-style conditional GAN and return its generator.

    ``data`` is a list of :class:`PairedSample` or an ``(inputs, targets)``
    pair. If ``epoch_data`` is given it is called with the epoch index and its
    arrays replace ``data`` for that epoch (used to re-augment composites);
    ``data`` may then be None.
    With ``cfg.adversarial`` false only the L1 term is optimised.
    """
    rng = _seed(cfg.seed)
    if data is None and epoch_data is None:
        raise ValueError("pass data or epoch_data")
    x_all, y_all = _as_arrays(data) if data is not None else epoch_data(0)
    if len(x_all) < 32:
        raise ValueError("need at least 32 training pairs")
    if x_all.shape != y_all.shape:
        raise ValueError(f"input/target shapes differ: {x_all.shape} vs {y_all.shape}")
    res = x_all.shape[-1]
    g_spec = NetSpec("unet", base=cfg.base, res=res)
    gen = g_spec.build()
    disc = NetSpec("patchgan", base=cfg.base, res=res).build()
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.lr_g, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.lr_d, betas=(0.5, 0.999))
    curves: dict[str, list[float]] = {"g_adv": [], "g_l1": [], "d": [], "holdout_l1": []}

    for epoch in range(cfg.epochs):
        if epoch_data is not None and (epoch > 0 or data is not None):
            x_all, y_all = epoch_data(epoch)
        x_t, y_t = _tensor(x_all), _tensor(y_all)
        scale = _lr_scale(epoch, cfg.epochs, cfg.decay_from)
        for opt, lr in ((opt_g, cfg.lr_g), (opt_d, cfg.lr_d)):
            for group in opt.param_groups:
                group["lr"] = lr * scale
        gen.train()
        disc.train()
        order = rng.permutation(len(x_t))
        sums = np.zeros(3)
        steps = 0
        for step, lo in enumerate(range(0, len(order), cfg.batch_size)):
            idx = torch.from_numpy(order[lo:lo + cfg.batch_size])
            x, y = x_t[idx], y_t[idx]
            fake = gen(x)
            d_loss = torch.zeros(())
            if cfg.adversarial:
                real_logit = disc(x, y)
                fake_logit = disc(x, fake.detach())
                d_loss = 0.5 * (
                    F.binary_cross_entropy_with_logits(real_logit, torch.ones_like(real_logit))
                    + F.binary_cross_entropy_with_logits(fake_logit, torch.zeros_like(fake_logit)))
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()
            l1 = F.l1_loss(fake, y)
            g_adv = torch.zeros(())
            if cfg.adversarial:
                logit = disc(x, fake)
                g_adv = F.binary_cross_entropy_with_logits(logit, torch.ones_like(logit))
            g_loss = g_adv + cfg.l1_weight * l1
            opt_g.zero_grad()
            g_loss.backward()
            opt_g.step()
            vals = {"g_adv": g_adv.item(), "g_l1": l1.item(), "d": d_loss.item()}
            _check(vals, epoch, step)
            sums += [vals["g_adv"], vals["g_l1"], vals["d"]]
            steps += 1
        for key, v in zip(("g_adv", "g_l1", "d"), sums / steps):
            curves[key].append(float(v))
        if holdout is not None:
            model = TrainedModel.from_module(g_spec, gen, {})
            pred = forward(model, holdout[0])
            curves["holdout_l1"].append(float(np.mean(np.abs(pred - holdout[1]))))
        log.info("%s epoch %d/%d l1=%.4f adv=%.3f d=%.3f%s", name, epoch + 1, cfg.epochs,
                 curves["g_l1"][-1], curves["g_adv"][-1], curves["d"][-1],
                 f" holdout_l1={curves['holdout_l1'][-1]:.4f}" if holdout is not None else "")
    manifest = {"kind": name, "trainer": "cgan", "config": asdict(cfg), "seed": cfg.seed,
                "samples": int(len(x_all)), "curves": curves}
    return TrainedModel.from_module(g_spec, gen, manifest)


def train_vae(noise_maps: Sequence[np.ndarray] | np.ndarray, cfg: VaeConfig,
              name: str = "tacngen") -> TrainedModel:
    """Fit the noise VAE: ``kl_weight * KL + squared error / (2 sigma^2)`` per map."""
    rng = _seed(cfg.seed)
    x_all = np.asarray(noise_maps, dtype=np.float32)
    if len(x_all) < 64:
        raise ValueError("need at least 64 noise maps")
    spec = NetSpec("vae", base=cfg.base, res=x_all.shape[-1], latent=cfg.latent)
    vae = spec.build()
    opt = torch.optim.Adam(vae.parameters(), lr=cfg.lr)
    x_t = _tensor(x_all)
    curves: dict[str, list[float]] = {"kl": [], "recon": [], "mae": []}
    for epoch in range(cfg.epochs):
        for group in opt.param_groups:
            group["lr"] = cfg.lr * _lr_scale(epoch, cfg.epochs, cfg.decay_from)
        vae.train()
        order = rng.permutation(len(x_t))
        sums = np.zeros(3)
        steps = 0
        for step, lo in enumerate(range(0, len(order), cfg.batch_size)):
            x = x_t[torch.from_numpy(order[lo:lo + cfg.batch_size])]
            mu, logvar = vae.encode(x)
            z = mu + torch.randn_like(mu) * torch.exp(0.5 * logvar)
            recon = vae.decode(z)
            kl = kl_divergence(mu, logvar).mean()
            sq = ((recon - x) ** 2).flatten(1).sum(1).mean() / (2 * cfg.recon_sigma ** 2)
            loss = cfg.kl_weight * kl + sq
            opt.zero_grad()
            loss.backward()
            opt.step()
            vals = {"kl": kl.item(), "recon": sq.item(), "mae": (recon - x).abs().mean().item()}
            _check(vals, epoch, step)
            sums += [vals["kl"], vals["recon"], vals["mae"]]
            steps += 1
        for key, v in zip(("kl", "recon", "mae"), sums / steps):
            curves[key].append(float(v))
        log.info("%s epoch %d/%d kl=%.3f recon=%.2f mae=%.4f", name, epoch + 1, cfg.epochs,
                 *(curves[k][-1] for k in ("kl", "recon", "mae")))
    manifest = {"kind": name, "trainer": "vae", "config": asdict(cfg), "seed": cfg.seed,
                "samples": int(len(x_all)), "curves": curves}
    return TrainedModel.from_module(spec, vae, manifest)


def train_posenet(depths: np.ndarray, labels: np.ndarray, cfg: PoseConfig,
                  name: str = "posenet") -> TrainedModel:
    """Regress ``(y, sin rz, cos rz)`` with mean squared error (``y`` scaled by ``y_scale``)."""
    rng = _seed(cfg.seed)
    x_all = np.asarray(depths, dtype=np.float32)
    y_all = np.asarray(labels, dtype=np.float32).copy()
    if len(x_all) < 256:
        raise ValueError("need at least 256 pose samples")
    y_all[:, 0] /= cfg.y_scale
    spec = NetSpec("posenet", base=cfg.base, res=x_all.shape[-1])
    net = spec.build()
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    x_t, t_t = _tensor(x_all), torch.from_numpy(y_all)
    curves: dict[str, list[float]] = {"mse": []}
    for epoch in range(cfg.epochs):
        for group in opt.param_groups:
            group["lr"] = cfg.lr * _lr_scale(epoch, cfg.epochs, cfg.decay_from)
        net.train()
        order = rng.permutation(len(x_t))
        total, steps = 0.0, 0
        for step, lo in enumerate(range(0, len(order), cfg.batch_size)):
            idx = torch.from_numpy(order[lo:lo + cfg.batch_size])
            loss = F.mse_loss(net(x_t[idx]), t_t[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            _check({"mse": loss.item()}, epoch, step)
            total += loss.item()
            steps += 1
        curves["mse"].append(total / steps)
        log.info("%s epoch %d/%d mse=%.5f", name, epoch + 1, cfg.epochs, curves["mse"][-1])
    manifest = {"kind": name, "trainer": "posenet", "config": asdict(cfg), "seed": cfg.seed,
                "samples": int(len(x_all)), "y_scale": cfg.y_scale, "curves": curves}
    return TrainedModel.from_module(spec, net, manifest)


@torch.no_grad()
def forward(model: TrainedModel, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Deterministic inference on one ``(H, W)`` image or a stack ``(N, H, W)``.

    Translators and the VAE return images of the input shape; PoseNet returns
    its raw ``(N, 3)`` outputs.
    """
    images = np.asarray(images, dtype=np.float32)
    single = images.ndim == 2
    stack = images[None] if single else images
    expect = model.spec.input_shape[1:]
    if stack.shape[1:] != expect:
        raise ValueError(f"expected images of shape {expect}, got {stack.shape[1:]}")
    net = model.module()
    outs = [net(_tensor(stack[lo:lo + batch_size])).numpy()
            for lo in range(0, len(stack), batch_size)]
    out = np.concatenate(outs).astype(np.float64)
    if model.spec.kind != "posenet":
        out = out[:, 0]
    return out[0] if single else out


def predict_pose(model: TrainedModel, images: np.ndarray) -> np.ndarray:
    """``(N, 3)`` array of ``(y mm, sin rz, cos rz)`` with the angle pair on the unit circle."""
    raw = np.atleast_2d(forward(model, images))
    out = raw.copy()
    out[:, 0] *= float(model.manifest.get("y_scale", 6.0))
    norm = np.hypot(out[:, 1], out[:, 2])
    norm = np.where(norm > 1e-12, norm, 1.0)
    out[:, 1] /= norm
    out[:, 2] /= norm
    return out


def poses_from_prediction(pred: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split predictions into ``(y, rz_degrees)``."""
    pred = np.atleast_2d(pred)
    return pred[:, 0], np.degrees(np.arctan2(pred[:, 1], pred[:, 2]))


@torch.no_grad()
def sample_tacngen(model: TrainedModel, seed: int | None = None, z: np.ndarray | None = None,
                   n: int | None = None, sigma: float = 1.0) -> np.ndarray:
    """Decode latent vectors into noise depth maps clamped to ``[0, 1]``.

    Either pass ``z`` (shape ``(K,)`` or ``(N, K)``) or a ``seed``; with a seed,
    ``z ~ N(0, sigma^2 I)`` and ``n`` maps are drawn (one map if ``n`` is None).
    """
    net = model.module()
    k = model.spec.latent
    if z is None:
        if seed is None:
            raise ValueError("pass either z or seed")
        count = 1 if n is None else n
        z = np.random.default_rng(seed).normal(0.0, sigma, size=(count, k))
    z = np.asarray(z, dtype=np.float32)
    single = z.ndim == 1 and n is None
    z2 = np.atleast_2d(z)
    if z2.shape[1] != k or not np.all(np.isfinite(z2)):
        raise ValueError(f"z must be finite with {k} columns")
    out = np.clip(net.decode(torch.from_numpy(z2)).numpy()[:, 0].astype(np.float64), 0.0, 1.0)
    return out[0] if single else out
