"""Simplex action distributions in plain numpy.

These back the environment's warm-up actions and serve as the reference
densities for the torch policies: the flat policy is a single Dirichlet
over assets (plus cash), the hierarchical one draws the equity fraction
from a Beta and scales an asset-level Dirichlet by it, with the
change-of-variables term ``-(N - 1) ln e`` for the rescaling.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from ..errors import DomainError

MIN_EQUITY = 1e-6


def dirichlet_log_density(w: np.ndarray, conc: np.ndarray) -> float:
    """Log density of a Dirichlet at an interior simplex point."""
    w = np.asarray(w, dtype=float)
    a = np.asarray(conc, dtype=float)
    if w.shape != a.shape:
        raise ValueError("weights and concentrations must have the same shape")
    if not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise DomainError("concentrations must be finite and positive")
    return float(((a - 1.0) * np.log(w)).sum() + gammaln(a.sum()) - gammaln(a).sum())


def dirichlet_sample(conc: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Draw a simplex point and its log density."""
    a = np.asarray(conc, dtype=float)
    if not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise DomainError("concentrations must be finite and positive")
    w = rng.dirichlet(a)
    w = np.clip(w, 1e-12, None)
    w = w / w.sum()
    return w, dirichlet_log_density(w, a)


def beta_log_density(e: float, a: float, b: float) -> float:
    if not (0.0 < e < 1.0):
        raise DomainError(f"equity fraction must lie in (0, 1), got {e}")
    if a <= 0 or b <= 0:
        raise DomainError("Beta parameters must be positive")
    return float((a - 1.0) * np.log(e) + (b - 1.0) * np.log1p(-e)
                 + gammaln(a + b) - gammaln(a) - gammaln(b))


def hierarchical_log_density(w_full: np.ndarray, beta_a: float, beta_b: float,
                             conc: np.ndarray) -> float:
    """Log density of the (assets..., cash) vector under the two-stage policy.

    The equity fraction is ``e = 1 - w_cash``; the within-equity split is
    ``w_assets / e``.  The Jacobian of scaling an (N-1)-dimensional simplex
    by ``e`` contributes ``-(N - 1) ln e``.
    """
    w = np.asarray(w_full, dtype=float)
    n_assets = w.size - 1
    e = 1.0 - w[-1]
    e = min(max(e, MIN_EQUITY), 1.0 - 1e-12)
    x = np.clip(w[:-1] / e, 1e-12, None)
    x = x / x.sum()
    return (beta_log_density(e, beta_a, beta_b)
            + dirichlet_log_density(x, conc)
            - (n_assets - 1) * np.log(e))


def hierarchical_action(beta_params: tuple[float, float], conc: np.ndarray,
                        rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Sample (assets..., cash) from the hierarchical policy.

    A numerically-zero equity draw is clamped to ``MIN_EQUITY`` so the
    density stays finite; the cash weight is adjusted to match.
    """
    a, b = beta_params
    e = float(rng.beta(a, b))
    e = min(max(e, MIN_EQUITY), 1.0 - MIN_EQUITY)
    x, _ = dirichlet_sample(conc, rng)
    w = np.append(e * x, 1.0 - e)
    return w, hierarchical_log_density(w, a, b, conc)
