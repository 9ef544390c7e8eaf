"""Solver settings and the update rules shared by reconstruction and alignment."""
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import torch

from utils import ConfigError

METHODS = ('momentum', 'dogleg')
EXPAND_ABOVE, SHRINK_BELOW = 0.75, 0.25
EXPAND_FACTOR, SHRINK_FACTOR = 2.0, 0.25


@dataclass
class OptimizerConfig:
    method: str = 'momentum'
    step_size: Optional[float] = None
    momentum: float = 0.9
    max_iters: int = 300
    tolerance: float = 1e-6
    window: int = 10
    trust_radius: float = 1.0
    cg_iters: int = 20
    interleave: Tuple[int, int] = (10, 5)
    decay: float = 1.0
    # Seconds between TimeSeries status lines
    log_every: float = 10.0

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError('Unknown optimizer {}, expected one of {}'.format(self.method, METHODS))
        if self.step_size is not None and not self.step_size > 0:
            raise ConfigError('Step size must be positive, got {}'.format(self.step_size))
        if not 0 <= self.momentum < 1:
            raise ConfigError('Momentum must lie in [0, 1), got {}'.format(self.momentum))
        if self.max_iters < 0:
            raise ConfigError('Iteration cap must be >= 0')
        if not self.tolerance > 0:
            raise ConfigError('Tolerance must be positive, got {}'.format(self.tolerance))
        if self.window < 1 or self.cg_iters < 1:
            raise ConfigError('Convergence window and CG iterations must be >= 1')
        if not self.trust_radius > 0:
            raise ConfigError('Trust radius must be positive')
        if len(self.interleave) != 2 or min(self.interleave) < 0 or sum(self.interleave) == 0:
            raise ConfigError('Interleave needs two non-negative block lengths, got {}'.format(
                self.interleave))
        if not 0 < self.decay <= 1:
            raise ConfigError('Step decay must lie in (0, 1]')
        return self


def momentum_update(velocity, direction, step, beta):
    # v <- beta v + step d; callers pass d = -grad to descend
    return beta * velocity + step * direction


def has_converged(history, window, tol):
    """True once the best value improved by less than tol (relative) over `window` steps."""
    if len(history) <= window:
        return False
    old, new = history[-window - 1], history[-1]
    return abs(old - new) <= tol * max(abs(old), 1e-300)


def conjugate_gradient(apply_a, b, iters, tol=1e-10):
    # Solves A x = b for symmetric positive semi-definite A given only products
    x = torch.zeros_like(b)
    r = b.clone()
    p = r.clone()
    rs = torch.dot(r, r)
    if float(rs) == 0.0:
        return x
    for _ in range(iters):
        ap = apply_a(p)
        curvature = torch.dot(p, ap)
        if float(curvature) <= 0:
            break
        alpha = rs / curvature
        x = x + alpha * p
        r = r - alpha * ap
        rs_next = torch.dot(r, r)
        if math.sqrt(float(rs_next)) < tol * math.sqrt(float(torch.dot(b, b))):
            break
        p = r + (rs_next / rs) * p
        rs = rs_next
    return x


def dogleg_step(gradient, gauss_newton, radius, apply_jtj):
    """Combines the Gauss-Newton and Cauchy steps inside a trust region.

    gradient is J^T r, gauss_newton solves J^T J p = -J^T r, apply_jtj
    multiplies by J^T J. All are flat vectors.
    """
    if float(torch.linalg.norm(gauss_newton)) <= radius:
        return gauss_newton
    steepest = -gradient
    curvature = float(torch.dot(steepest, apply_jtj(steepest)))
    sd_norm_sq = float(torch.dot(steepest, steepest))
    if sd_norm_sq == 0.0:
        return torch.zeros_like(gradient)
    t = sd_norm_sq / curvature if curvature > 0 else math.inf
    cauchy = t * steepest
    if math.isinf(t) or float(torch.linalg.norm(cauchy)) >= radius:
        return radius * steepest / math.sqrt(sd_norm_sq)
    # Walk from the Cauchy point toward Gauss-Newton until the boundary
    leg = gauss_newton - cauchy
    qa = float(torch.dot(leg, leg))
    qb = 2.0 * float(torch.dot(cauchy, leg))
    qc = float(torch.dot(cauchy, cauchy)) - radius * radius
    s = (-qb + math.sqrt(max(qb * qb - 4 * qa * qc, 0.0))) / (2 * qa)
    return cauchy + s * leg


def update_radius(radius, ratio):
    if ratio > EXPAND_ABOVE:
        return EXPAND_FACTOR * radius
    if ratio < SHRINK_BELOW:
        return SHRINK_FACTOR * radius
    return radius
