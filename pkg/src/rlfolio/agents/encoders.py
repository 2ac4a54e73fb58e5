"""State encoders: per-slot temporal summaries plus a global context.

Every encoder maps ``(asset_window, global_window)`` of shapes
``(B, L, K, F_a)`` and ``(B, L, F_g)`` to per-slot embeddings ``(B, K, D)``
and a context vector ``(B, C)`` (pooled slots concatenated with encoded
global features).  Slot weights are shared, so the same module handles any
number of slots.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from ..errors import ConfigError

ENCODER_KINDS = ("feedforward", "recurrent", "attention")


@dataclass
class EncoderSpec:
    kind: str = "recurrent"
    hidden: int = 64
    layers: int = 1
    cross_attention: bool = True
    model_dim: int = 32        # attention encoder width
    heads: int = 2

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"unknown encoder kind {self.kind!r}")
        if self.hidden <= 0 or self.model_dim <= 0 or self.layers <= 0:
            raise ConfigError("encoder sizes must be positive")


class _GlobalHead(nn.Module):
    """Encode [last row, mean over time] of the global features."""

    def __init__(self, n_features: int, out_dim: int):
        super().__init__()
        self.n_features = n_features
        self.out_dim = out_dim if n_features > 0 else 0
        if n_features > 0:
            self.net = nn.Sequential(nn.Linear(2 * n_features, out_dim), nn.ReLU())

    def forward(self, gw: torch.Tensor) -> torch.Tensor:
        if self.n_features == 0:
            return gw.new_zeros(gw.shape[0], 0)
        pooled = torch.cat([gw[:, -1, :], gw.mean(dim=1)], dim=-1)
        return self.net(pooled)


class _CrossSectionalAttention(nn.Module):
    """Single self-attention block over the slot axis with residual + norm."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        heads = max(1, min(heads, dim))
        while dim % heads != 0:
            heads -= 1
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out, _ = self.attn(x, x, x, need_weights=False)
        return self.norm(x + out)


class _EncoderBase(nn.Module):
    def __init__(self, spec: EncoderSpec, n_global_features: int, slot_dim: int):
        super().__init__()
        self.spec = spec
        self.slot_dim = slot_dim
        self.global_head = _GlobalHead(n_global_features, max(8, spec.hidden // 2))
        self.cross = (_CrossSectionalAttention(slot_dim, spec.heads)
                      if spec.cross_attention else None)
        self.ctx_dim = slot_dim + self.global_head.out_dim

    def _finish(self, slots: torch.Tensor, gw: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if self.cross is not None:
            slots = self.cross(slots)
        ctx = torch.cat([slots.mean(dim=1), self.global_head(gw)], dim=-1)
        return slots, ctx


class FeedforwardEncoder(_EncoderBase):
    """MLP over [last row, mean over time] of each slot's features."""

    def __init__(self, spec: EncoderSpec, n_asset_features: int, n_global_features: int):
        super().__init__(spec, n_global_features, slot_dim=spec.hidden)
        layers: list[nn.Module] = [nn.Linear(2 * n_asset_features, spec.hidden), nn.ReLU()]
        for _ in range(spec.layers - 1):
            layers += [nn.Linear(spec.hidden, spec.hidden), nn.ReLU()]
        self.slot_net = nn.Sequential(*layers)

    def forward(self, aw: torch.Tensor, gw: torch.Tensor):
        pooled = torch.cat([aw[:, -1, :, :], aw.mean(dim=1)], dim=-1)   # (B, K, 2F)
        slots = self.slot_net(pooled)
        return self._finish(slots, gw)


class RecurrentEncoder(_EncoderBase):
    """Shared LSTM over each slot's history, then cross-sectional attention."""

    def __init__(self, spec: EncoderSpec, n_asset_features: int, n_global_features: int):
        super().__init__(spec, n_global_features, slot_dim=spec.hidden)
        self.lstm = nn.LSTM(n_asset_features, spec.hidden,
                            num_layers=spec.layers, batch_first=True)

    def forward(self, aw: torch.Tensor, gw: torch.Tensor):
        B, L, K, F = aw.shape
        seq = aw.permute(0, 2, 1, 3).reshape(B * K, L, F)
        _, (h, _) = self.lstm(seq)
        slots = h[-1].reshape(B, K, -1)
        return self._finish(slots, gw)


class AttentionEncoder(_EncoderBase):
    """Reduced temporal transformer per slot (last token summarizes)."""

    def __init__(self, spec: EncoderSpec, n_asset_features: int, n_global_features: int):
        super().__init__(spec, n_global_features, slot_dim=spec.model_dim)
        d = spec.model_dim
        self.in_proj = nn.Linear(n_asset_features, d)
        layer = nn.TransformerEncoderLayer(
            d_model=d, nhead=max(1, min(spec.heads, d)),
            dim_feedforward=2 * d, dropout=0.0, batch_first=True)
        self.encoder = nn.TransformerEncoder(layer, num_layers=spec.layers)

    @staticmethod
    def _positional(L: int, d: int, device) -> torch.Tensor:
        pos = torch.arange(L, device=device, dtype=torch.float32).unsqueeze(1)
        i = torch.arange(0, d, 2, device=device, dtype=torch.float32)
        angle = pos / torch.pow(torch.tensor(10000.0, device=device), i / d)
        pe = torch.zeros(L, d, device=device)
        pe[:, 0::2] = torch.sin(angle)
        pe[:, 1::2] = torch.cos(angle[:, : d // 2])
        return pe

    def forward(self, aw: torch.Tensor, gw: torch.Tensor):
        B, L, K, F = aw.shape
        seq = self.in_proj(aw.permute(0, 2, 1, 3).reshape(B * K, L, F))
        seq = seq + self._positional(L, seq.shape[-1], seq.device)
        slots = self.encoder(seq)[:, -1, :].reshape(B, K, -1)
        return self._finish(slots, gw)


def build_encoder(spec: EncoderSpec, n_asset_features: int, n_global_features: int) -> _EncoderBase:
    cls = {"feedforward": FeedforwardEncoder,
           "recurrent": RecurrentEncoder,
           "attention": AttentionEncoder}[spec.kind]
    return cls(spec, n_asset_features, n_global_features)
