"""Dueling Q-network over the 4-channel link-state image."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F


@dataclass(frozen=True)
class QNetworkSpec:
    n: int
    m: int
    conv_channels: tuple[int, int] = (32, 32)
    hidden: tuple[int, int] = (256, 128)
    negative_slope: float = 0.01

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "QNetworkSpec":
        return cls(n=d["n"], m=d["m"], conv_channels=tuple(d["conv_channels"]), hidden=tuple(d["hidden"]),
                   negative_slope=d.get("negative_slope", 0.01))


def dueling_combine(value: torch.Tensor, advantage: torch.Tensor) -> torch.Tensor:
    """Q = V + (A - mean_a A); ``value`` is (B, 1), ``advantage`` (B, m)."""
    return value + advantage - advantage.mean(dim=-1, keepdim=True)


class QNetwork(nn.Module):
    """Parallel 5x1 and 1x5 convolutions, two shared dense layers, value and advantage heads."""

    def __init__(self, spec: QNetworkSpec):
        super().__init__()
        self.spec = spec
        c1, c2 = spec.conv_channels
        h1, h2 = spec.hidden
        self.conv_col = nn.Conv2d(4, c1, kernel_size=(5, 1), padding=(2, 0))
        self.conv_row = nn.Conv2d(4, c2, kernel_size=(1, 5), padding=(0, 2))
        self.fc1 = nn.Linear((c1 + c2) * spec.n * spec.n, h1)
        self.fc2 = nn.Linear(h1, h2)
        self.value = nn.Linear(h2, 1)
        self.advantage = nn.Linear(h2, spec.m)

    def streams(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        n = self.spec.n
        if x.dim() == 3:
            x = x.unsqueeze(0)
        if tuple(x.shape[1:]) != (4, n, n):
            raise ValueError(f"state must be 4 x {n} x {n}, got {tuple(x.shape[1:])}")
        slope = self.spec.negative_slope
        a = F.leaky_relu(self.conv_col(x), slope).flatten(1)
        b = F.leaky_relu(self.conv_row(x), slope).flatten(1)
        h = F.leaky_relu(self.fc1(torch.cat([a, b], dim=1)), slope)
        h = F.leaky_relu(self.fc2(h), slope)
        return self.value(h), self.advantage(h)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return dueling_combine(*self.streams(x))


def forward_q(net: QNetwork, state: np.ndarray) -> np.ndarray:
    """Q-values of one state as a length-m numpy vector."""
    with torch.no_grad():
        q = net(torch.as_tensor(state, dtype=next(net.parameters()).dtype))
    return q[0].numpy()
