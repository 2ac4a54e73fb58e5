"""Dirichlet policy heads over encoded states.

Concentrations come from a shared per-slot head applied to
``[slot_embedding, context]`` passed through softplus, floored at
``concentration_floor`` and capped at ``concentration_cap`` to keep the
densities non-degenerate.  The flat policy is a single Dirichlet over the
asset slots (plus a cash slot when cash is allowed); the hierarchical one
first draws the equity fraction from a Beta head, then splits equity
across assets with a Dirichlet.  Deterministic evaluation uses the
distribution mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.distributions import Beta, Dirichlet

from ..errors import ConfigError

POLICY_STRUCTURES = ("flat", "hierarchical")
_SAMPLE_EPS = 1e-8
_MIN_EQUITY = 1e-6


@dataclass
class PolicySpec:
    structure: str = "flat"
    concentration_floor: float = 1e-3
    concentration_cap: float = 100.0
    head_hidden: int = 64

    def __post_init__(self):
        if self.structure not in POLICY_STRUCTURES:
            raise ConfigError(f"unknown policy structure {self.structure!r}")
        if not 0 < self.concentration_floor < self.concentration_cap:
            raise ConfigError("need 0 < concentration_floor < concentration_cap")


def _mlp(in_dim: int, hidden: int, out_dim: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(), nn.Linear(hidden, out_dim))


class _PolicyBase(nn.Module):
    def __init__(self, spec: PolicySpec, slot_dim: int, ctx_dim: int):
        super().__init__()
        self.spec = spec
        self.slot_head = _mlp(slot_dim + ctx_dim, spec.head_hidden, 1)
        self.ctx_dim = ctx_dim

    def _slot_concentrations(self, slots: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
        K = slots.shape[1]
        expanded = torch.cat([slots, ctx.unsqueeze(1).expand(-1, K, -1)], dim=-1)
        raw = self.slot_head(expanded).squeeze(-1)
        return self._squash(raw)

    def _squash(self, raw: torch.Tensor) -> torch.Tensor:
        return torch.clamp(F.softplus(raw) + self.spec.concentration_floor,
                           max=self.spec.concentration_cap)

    @staticmethod
    def _interior(w: torch.Tensor) -> torch.Tensor:
        w = torch.clamp(w, min=_SAMPLE_EPS)
        return w / w.sum(dim=-1, keepdim=True)


class FlatDirichletPolicy(_PolicyBase):
    """Single Dirichlet over asset slots, with an optional cash slot."""

    def __init__(self, spec: PolicySpec, slot_dim: int, ctx_dim: int, include_cash: bool):
        super().__init__(spec, slot_dim, ctx_dim)
        self.include_cash = include_cash
        if include_cash:
            self.cash_head = _mlp(ctx_dim, spec.head_hidden, 1)

    def concentrations(self, slots: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
        conc = self._slot_concentrations(slots, ctx)
        if self.include_cash:
            cash = self._squash(self.cash_head(ctx))
            conc = torch.cat([conc, cash], dim=-1)
        return conc

    def sample(self, slots: torch.Tensor, ctx: torch.Tensor):
        conc = self.concentrations(slots, ctx)
        dist = Dirichlet(conc)
        w = self._interior(dist.rsample())
        return w, dist.log_prob(w)

    def log_prob(self, slots: torch.Tensor, ctx: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        return Dirichlet(self.concentrations(slots, ctx)).log_prob(self._interior(w))

    def deterministic(self, slots: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
        conc = self.concentrations(slots, ctx)
        return conc / conc.sum(dim=-1, keepdim=True)


class HierarchicalPolicy(_PolicyBase):
    """Beta equity-vs-cash head feeding a Dirichlet split across assets.

    Actions are (assets..., cash); the log-density includes the
    ``-(K - 1) ln e`` scaling term of the equity simplex.
    """

    def __init__(self, spec: PolicySpec, slot_dim: int, ctx_dim: int):
        super().__init__(spec, slot_dim, ctx_dim)
        self.beta_head = _mlp(ctx_dim, spec.head_hidden, 2)
        self.include_cash = True

    def parameters_for(self, slots: torch.Tensor, ctx: torch.Tensor):
        conc = self._slot_concentrations(slots, ctx)
        ab = self._squash(self.beta_head(ctx))
        return ab[:, 0], ab[:, 1], conc

    def _assemble(self, e: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        return torch.cat([e.unsqueeze(-1) * x, (1.0 - e).unsqueeze(-1)], dim=-1)

    def _log_prob_parts(self, a, b, conc, e, x):
        K = conc.shape[-1]
        return (Beta(a, b).log_prob(e) + Dirichlet(conc).log_prob(x)
                - (K - 1) * torch.log(e))

    def sample(self, slots: torch.Tensor, ctx: torch.Tensor):
        a, b, conc = self.parameters_for(slots, ctx)
        e = torch.clamp(Beta(a, b).rsample(), _MIN_EQUITY, 1.0 - _MIN_EQUITY)
        x = self._interior(Dirichlet(conc).rsample())
        return self._assemble(e, x), self._log_prob_parts(a, b, conc, e, x)

    def log_prob(self, slots: torch.Tensor, ctx: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        a, b, conc = self.parameters_for(slots, ctx)
        e = torch.clamp(1.0 - w[:, -1], _MIN_EQUITY, 1.0 - _MIN_EQUITY)
        x = self._interior(w[:, :-1] / e.unsqueeze(-1))
        return self._log_prob_parts(a, b, conc, e, x)

    def deterministic(self, slots: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
        a, b, conc = self.parameters_for(slots, ctx)
        e = a / (a + b)
        x = conc / conc.sum(dim=-1, keepdim=True)
        return self._assemble(e, x)


def build_policy(spec: PolicySpec, slot_dim: int, ctx_dim: int, include_cash: bool):
    if spec.structure == "hierarchical":
        if not include_cash:
            raise ConfigError("hierarchical policy requires a cash slot")
        return HierarchicalPolicy(spec, slot_dim, ctx_dim)
    return FlatDirichletPolicy(spec, slot_dim, ctx_dim, include_cash)
