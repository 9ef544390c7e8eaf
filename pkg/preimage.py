"""Reconstructing an image from its HOG descriptor.

E(x) = ||phi(x) - target|| + xi * sum over 4-neighbour pairs of |x_p - x_q|,
with the absolute value smoothed by a tiny delta. Three schedules: one
full-resolution stage, a coarse-to-fine ladder against the single
full-resolution target with shrinking cells, and a ladder against per-scale
targets of the downsampled original at a fixed cell size.
"""
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from logutil import TimeSeries, sparkline

import autodiff as ad
import hog
from optimizers import conjugate_gradient, dogleg_step, has_converged
from optimizers import momentum_update, update_radius
from utils import ConfigError, DivergenceError

SCALES = (64, 16, 4, 1)
SCHEDULES = ('single', 'multi', 'multi-more')
INITS = ('gray', 'noise')
SMOOTH_DELTA = 1e-9
DIVERGENCE_FACTOR = 1e6
# Momentum step when none is given, divided by max(xi, 1)
BASE_STEP = 2.5e-4
NOISE_RANGE = (0.4, 0.6)


@dataclass
class TraceRow:
    iteration: int
    stage: int
    E: float
    feature: float
    smoothness: float

    def as_dict(self):
        return {'iteration': self.iteration, 'stage': self.stage, 'E': self.E,
                'feature': self.feature, 'smoothness': self.smoothness}


@dataclass
class Stage:
    scale: int
    shape: Tuple[int, int]
    cfg: hog.HogConfig


@dataclass
class ReconstructionProblem:
    targets: Dict[int, hog.HogDescriptor]
    cfg: hog.HogConfig
    xi: float = 1e2
    schedule: str = 'single'
    init: str = 'gray'
    seed: int = 0
    xi_decay: bool = False
    estimate: Optional[torch.Tensor] = None

    @property
    def shape(self):
        nh, nw, _ = self.targets[1].shape
        return nh * self.cfg.cell_size, nw * self.cfg.cell_size

    def validate(self):
        self.cfg.validate()
        if self.schedule not in SCHEDULES:
            raise ConfigError('Unknown schedule {}, expected one of {}'.format(self.schedule, SCHEDULES))
        if self.init not in INITS:
            raise ConfigError('Unknown init {}, expected one of {}'.format(self.init, INITS))
        if not self.xi >= 0:
            raise ConfigError('Smoothness weight must be >= 0, got {}'.format(self.xi))
        if 1 not in self.targets:
            raise ConfigError('A full-resolution target is required')
        for scale, target in self.targets.items():
            if scale not in SCALES:
                raise ConfigError('Scale {} is not one of {}'.format(scale, SCALES))
            tcfg = target.config
            if (tcfg.cell_size, tcfg.bins, tcfg.signed) != (self.cfg.cell_size, self.cfg.bins, self.cfg.signed):
                raise ConfigError('Target at scale {} was built with cell {} bins {} {}'.format(
                    scale, tcfg.cell_size, tcfg.bins, tcfg.mode))
        if self.estimate is not None and tuple(self.estimate.shape) != self.shape:
            raise ConfigError('Initial estimate {} does not match target extent {}'.format(
                tuple(self.estimate.shape), self.shape))
        return self


@dataclass
class Reconstruction:
    image: torch.Tensor
    trace: List[TraceRow]
    snapshots: List[Tuple[int, torch.Tensor]] = field(default_factory=list)

    def trace_rows(self):
        return [row.as_dict() for row in self.trace]

    def stage_images(self):
        # Each stage's estimate, brought to full resolution
        full = tuple(self.image.shape)
        return [(scale, ad.resize_bilinear(img, full).clamp(0, 1)) for scale, img in self.snapshots]


def initial_estimate(shape, init='gray', seed=0):
    if init == 'gray':
        return torch.full(shape, 0.5, dtype=ad.DTYPE)
    rng = np.random.default_rng(seed)
    return torch.from_numpy(rng.uniform(*NOISE_RANGE, size=shape))


def smoothness(x):
    dh = ad.sub(x[:, 1:], x[:, :-1])
    dv = ad.sub(x[1:, :], x[:-1, :])
    total = 0.0
    for diff in (dh, dv):
        total = ad.add(ad.total(ad.sqrt(ad.add(ad.pow2(diff), SMOOTH_DELTA ** 2))), total)
    return total


def objective_terms(x, target, cfg, xi):
    phi = hog.hog_forward(x, cfg).grid
    if phi.shape != target.grid.shape:
        raise ConfigError('Estimate descriptor {} does not match target {}'.format(
            tuple(phi.shape), tuple(target.grid.shape)))
    feature = ad.l2norm(ad.sub(phi, target.grid))
    smooth = smoothness(x)
    return ad.add(feature, ad.mul(smooth, xi)), feature, smooth


def objective(x, target, cfg, xi):
    return objective_terms(x, target, cfg, xi)[0]


def stage_xi(xi, decay, iteration, iters):
    if not decay or iters == 0:
        return xi
    return xi * max(0.0, 1.0 - iteration / iters)


def default_step(xi):
    return BASE_STEP / max(xi, 1.0)


def check_divergence(energy, reference, tolerance, stage=1):
    if not math.isfinite(energy) or energy > DIVERGENCE_FACTOR * max(reference, tolerance):
        raise DivergenceError('Objective diverged at stage 1/{}: E={:.4g} from E0={:.4g}'.format(
            stage, energy, reference))


def warn_if_stationary(grad, stage):
    # A constant image sits on the magnitude kink, where every adjoint is 0
    if not bool(grad.any()):
        print('Warning: the gradient at the start of stage 1/{} is exactly zero; '
              'the estimate will not move (try --init noise)'.format(stage))


def _momentum_stage(x0, target, cfg, xi, opt, stage, xi_decay):
    step = opt.step_size or default_step(xi)
    iters = opt.max_iters
    ts = TimeSeries('Reconstruction at 1/{}'.format(stage), max(iters, 1))
    x = x0.clone()
    velocity = torch.zeros_like(x)
    best_x, best_e, reference = x.clone(), math.inf, None
    history, trace = [], []
    for k in range(iters + 1):
        xv = x.clone().requires_grad_(True)
        xi_k = stage_xi(xi, xi_decay, k, iters)
        energy, feature, smooth = objective_terms(xv, target, cfg, xi_k)
        e = float(energy)
        trace.append(TraceRow(k, stage, e, float(feature), float(smooth)))
        if reference is None:
            reference = e
        check_divergence(e, reference, opt.tolerance, stage)
        if e < best_e:
            best_x, best_e = x.clone(), e
        history.append(best_e)
        ts.collect('E', e)
        ts.collect('feature', float(feature))
        ts.print_every(opt.log_every)
        if k == iters or best_e <= opt.tolerance or has_converged(history, opt.window, opt.tolerance):
            break
        grad = ad.gradient(energy, xv).detach()
        if k == 0:
            warn_if_stationary(grad, stage)
        velocity = momentum_update(velocity, -grad, step, opt.momentum)
        x = (x + velocity).clamp(0.0, 1.0)
    return best_x, trace


def _dogleg_stage(x0, target, cfg, xi, opt, stage, xi_decay):
    """Trust-region steps on the least-squares surrogate.

    Residuals are the descriptor difference and sqrt(xi)-weighted neighbour
    differences; acceptance also requires E itself not to increase.
    """
    iters = opt.max_iters
    shape = x0.shape
    ts = TimeSeries('Dogleg at 1/{}'.format(stage), max(iters, 1))

    def residuals_for(weight):
        root = math.sqrt(weight)

        def residuals(flat):
            x = flat.view(shape)
            phi = hog.hog_forward(x, cfg).grid
            dh = (x[:, 1:] - x[:, :-1]) * root
            dv = (x[1:, :] - x[:-1, :]) * root
            return torch.cat([(phi - target.grid).reshape(-1), dh.reshape(-1), dv.reshape(-1)])
        return residuals

    x = x0.clone().reshape(-1)
    radius = opt.trust_radius
    energy, feature, smooth = (float(t) for t in objective_terms(x.view(shape), target, cfg, xi))
    reference = energy
    trace = [TraceRow(0, stage, energy, feature, smooth)]
    history = [energy]
    for k in range(1, iters + 1):
        if energy <= opt.tolerance or has_converged(history, opt.window, opt.tolerance):
            break
        xi_k = stage_xi(xi, xi_decay, k, iters)
        residuals = residuals_for(xi_k)
        r = residuals(x)

        def jtj(p):
            jp = torch.autograd.functional.jvp(residuals, x, p)[1]
            return torch.autograd.functional.vjp(residuals, x, jp)[1]

        grad = torch.autograd.functional.vjp(residuals, x, r)[1]
        if k == 1:
            warn_if_stationary(grad, stage)
        gauss_newton = conjugate_gradient(jtj, -grad, opt.cg_iters)
        step = dogleg_step(grad, gauss_newton, radius, jtj)
        jstep = torch.autograd.functional.jvp(residuals, x, step)[1]
        predicted = -float(torch.dot(grad, step) + 0.5 * torch.dot(jstep, jstep))
        candidate = (x + step).clamp(0.0, 1.0)
        r_new = residuals(candidate)
        actual = 0.5 * float(torch.dot(r, r) - torch.dot(r_new, r_new))
        ratio = actual / predicted if predicted > 0 else -1.0
        terms = [float(t) for t in objective_terms(candidate.view(shape), target, cfg, xi_k)]
        check_divergence(terms[0], reference, opt.tolerance, stage)
        if ratio > 0 and terms[0] <= energy:
            x = candidate
            energy, feature, smooth = terms
        radius = update_radius(radius, ratio)
        trace.append(TraceRow(k, stage, energy, feature, smooth))
        history.append(energy)
        ts.collect('E', energy)
        ts.collect('radius', radius)
        ts.print_every(opt.log_every)
    return x.view(shape), trace


def run_stage(x0, target, cfg, xi, opt, stage=1, xi_decay=False):
    opt.validate()
    start = time.time()
    try:
        if opt.method == 'dogleg':
            x, trace = _dogleg_stage(x0, target, cfg, xi, opt, stage, xi_decay)
        else:
            x, trace = _momentum_stage(x0, target, cfg, xi, opt, stage, xi_decay)
    except FloatingPointError as e:
        raise DivergenceError('Non-finite value during stage 1/{}: {}'.format(stage, e))
    energies = [row.E for row in trace]
    print('Stage 1/{}: {} iterations, E {:.4g} -> {:.4g} in {:.02f}s'.format(
        stage, len(trace) - 1, energies[0], min(energies), time.time() - start))
    if len(energies) > 1:
        print(sparkline(energies, length=min(80, len(energies))))
    return x.detach(), trace


def minimize(problem, opt):
    """Single full-resolution stage. Returns (image, trace)."""
    problem.validate()
    x0 = problem.estimate
    if x0 is None:
        x0 = initial_estimate(problem.shape, problem.init, problem.seed)
    return run_stage(ad.constant(x0), problem.targets[1], problem.cfg, problem.xi, opt,
                     xi_decay=problem.xi_decay)


def stage_ladder(cfg, shape, schedule):
    height, width = shape
    stages = []
    for scale in SCALES:
        f = math.isqrt(scale)
        if height % f or width % f:
            continue
        stage_shape = (height // f, width // f)
        if schedule == 'multi':
            if cfg.cell_size % f or (cfg.cell_size // f) < 2 or (cfg.cell_size // f) % 2:
                continue
            stage_cfg = cfg.with_cell(cfg.cell_size // f)
        else:
            if stage_shape[0] % cfg.cell_size or stage_shape[1] % cfg.cell_size:
                continue
            stage_cfg = cfg
        stages.append(Stage(scale, stage_shape, stage_cfg))
    return stages


def downsample(pixels, factor):
    # Box average over factor x factor blocks
    x = ad.as_tensor(pixels)
    if factor == 1:
        return x.clone()
    return F.avg_pool2d(x[None, None], factor)[0, 0]


def pyramid_targets(pixels, cfg):
    """Descriptors of the downsampled original at every scale the cell size allows."""
    pixels = ad.as_tensor(pixels)
    if pixels.dim() == 3:
        pixels = hog.to_gray(pixels)
    targets = {}
    for stage in stage_ladder(cfg, tuple(pixels.shape), 'multi-more'):
        small = downsample(pixels, math.isqrt(stage.scale))
        targets[stage.scale] = hog.hog_forward(small, cfg)
    return targets


def _reconstruct_ladder(problem, opt, per_scale_targets):
    problem.validate()
    stages = stage_ladder(problem.cfg, problem.shape, problem.schedule)
    if per_scale_targets:
        missing = [stage.scale for stage in stages if stage.scale not in problem.targets]
        if missing:
            raise ConfigError('Missing per-scale targets for scales {}'.format(missing))
    x = problem.estimate
    if x is None:
        x = initial_estimate(stages[0].shape, problem.init, problem.seed)
    x = ad.constant(x)
    trace, snapshots = [], []
    for stage in stages:
        if tuple(x.shape) != stage.shape:
            x = ad.resize_bilinear(x, stage.shape).clamp(0.0, 1.0)
        target = problem.targets[stage.scale if per_scale_targets else 1]
        print('Stage 1/{}: {}x{} pixels, cell {}'.format(
            stage.scale, stage.shape[1], stage.shape[0], stage.cfg.cell_size))
        x, rows = run_stage(x, target, stage.cfg, problem.xi, opt, stage.scale, problem.xi_decay)
        trace.extend(rows)
        snapshots.append((stage.scale, x.clone()))
    return Reconstruction(x, trace, snapshots)


def reconstruct_multiscale(problem, opt):
    return _reconstruct_ladder(problem, opt, per_scale_targets=False)


def reconstruct_multiscale_more(problem, opt):
    return _reconstruct_ladder(problem, opt, per_scale_targets=True)


def reconstruct(problem, opt):
    if problem.schedule == 'multi':
        return reconstruct_multiscale(problem, opt)
    if problem.schedule == 'multi-more':
        return reconstruct_multiscale_more(problem, opt)
    image, trace = minimize(problem, opt)
    return Reconstruction(image, trace, [(1, image.clone())])
