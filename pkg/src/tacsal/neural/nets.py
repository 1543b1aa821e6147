"""Network topologies: U-Net translator, patch discriminator, conv VAE and PoseNet."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn


def _down(cin: int, cout: int, norm: bool = True) -> nn.Sequential:
    layers: list[nn.Module] = [nn.Conv2d(cin, cout, 4, 2, 1, bias=not norm)]
    if norm:
        layers.append(nn.BatchNorm2d(cout))
    layers.append(nn.LeakyReLU(0.2))
    return nn.Sequential(*layers)


def _up(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(nn.ConvTranspose2d(cin, cout, 4, 2, 1, bias=False),
                         nn.BatchNorm2d(cout), nn.ReLU())


class UNetGenerator(nn.Module):
    """Three-level encoder-decoder with skips at every scale, sigmoid output."""

    def __init__(self, in_channels: int = 1, out_channels: int = 1, base: int = 32):
        super().__init__()
        b = base
        self.stem = nn.Sequential(nn.Conv2d(in_channels, b, 3, 1, 1), nn.LeakyReLU(0.2))
        self.d1 = _down(b, b, norm=False)
        self.d2 = _down(b, 2 * b)
        self.d3 = _down(2 * b, 4 * b)
        self.u3 = _up(4 * b, 2 * b)
        self.u2 = _up(4 * b, b)
        self.u1 = _up(2 * b, b)
        self.head = nn.Conv2d(2 * b, out_channels, 3, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        s0 = self.stem(x)
        s1 = self.d1(s0)
        s2 = self.d2(s1)
        h = self.u3(self.d3(s2))
        h = self.u2(torch.cat([h, s2], 1))
        h = self.u1(torch.cat([h, s1], 1))
        return torch.sigmoid(self.head(torch.cat([h, s0], 1)))


class PatchDiscriminator(nn.Module):
    """Scores overlapping patches of the ``(condition, candidate)`` pair; returns logits."""

    def __init__(self, in_channels: int = 2, base: int = 32):
        super().__init__()
        b = base
        self.net = nn.Sequential(
            _down(in_channels, b, norm=False),
            _down(b, 2 * b),
            nn.Conv2d(2 * b, 4 * b, 4, 1, 1, bias=False), nn.BatchNorm2d(4 * b), nn.LeakyReLU(0.2),
            nn.Conv2d(4 * b, 1, 4, 1, 1),
        )

    def forward(self, condition: torch.Tensor, candidate: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([condition, candidate], 1))


class ConvVAE(nn.Module):
    def __init__(self, latent: int = 8, base: int = 32, res: int = 64):
        super().__init__()
        b = base
        self.latent = latent
        self.side = res // 16
        self.encoder = nn.Sequential(
            _down(1, b, norm=False), _down(b, 2 * b), _down(2 * b, 4 * b), _down(4 * b, 4 * b),
            nn.Flatten(),
        )
        flat = 4 * b * self.side * self.side
        self.mu = nn.Linear(flat, latent)
        self.logvar = nn.Linear(flat, latent)
        self.expand = nn.Linear(latent, flat)
        self.decoder = nn.Sequential(
            _up(4 * b, 4 * b), _up(4 * b, 2 * b), _up(2 * b, b),
            nn.ConvTranspose2d(b, 1, 4, 2, 1),
        )
        self._b = b

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.encoder(x)
        return self.mu(h), self.logvar(h)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        h = torch.relu(self.expand(z)).view(-1, 4 * self._b, self.side, self.side)
        return torch.sigmoid(self.decoder(h))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu, _ = self.encode(x)
        return self.decode(mu)


class PoseNet(nn.Module):
    """Four conv blocks and a dense head regressing ``(y, sin rz, cos rz)``."""

    def __init__(self, base: int = 32, res: int = 64, outputs: int = 3):
        super().__init__()
        chans = [1, base, 2 * base, 4 * base, 4 * base]
        blocks: list[nn.Module] = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            blocks += [nn.Conv2d(cin, cout, 3, 1, 1, bias=False), nn.BatchNorm2d(cout), nn.ReLU(),
                       nn.MaxPool2d(2)]
        self.features = nn.Sequential(*blocks, nn.Flatten())
        side = res // 16
        self.head = nn.Sequential(nn.Linear(chans[-1] * side * side, 128), nn.ReLU(),
                                  nn.Linear(128, outputs))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


@dataclass(frozen=True)
class NetSpec:
    kind: str
    base: int = 32
    res: int = 64
    latent: int = 8

    def build(self) -> nn.Module:
        if self.kind == "unet":
            return UNetGenerator(1, 1, self.base)
        if self.kind == "patchgan":
            return PatchDiscriminator(2, self.base)
        if self.kind == "vae":
            return ConvVAE(self.latent, self.base, self.res)
        if self.kind == "posenet":
            return PoseNet(self.base, self.res)
        raise ValueError(f"unknown network kind {self.kind!r}")

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (2 if self.kind == "patchgan" else 1, self.res, self.res)

    @property
    def output_shape(self) -> tuple[int, ...]:
        if self.kind == "posenet":
            return (3,)
        if self.kind == "patchgan":
            return (1, self.res // 4 - 2, self.res // 4 - 2)
        return (1, self.res, self.res)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.build().parameters())

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        return cls(**d)
