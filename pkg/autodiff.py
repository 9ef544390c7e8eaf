"""Reverse-mode primitives for the differentiable HOG pipeline.

Every primitive takes and returns float64 torch tensors. A tensor with
requires_grad set plays the role of a graph node; torch records the tape and
the adjoint of a leaf lands in its .grad slot. Primitives whose derivative
conventions differ from the torch defaults (clip boundaries, atan2 at the
origin, sqrt and l2norm at zero) are autograd Functions with hand-written,
twice-differentiable backward passes.
"""
import math
import threading
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

DTYPE = torch.float64
DEGREES_PER_RADIAN = 180.0 / math.pi
ELEMENTWISE_KINDS = ('add', 'sub', 'mul', 'div', 'pow2', 'sqrt', 'clip')
REDUCE_KINDS = ('sum', 'dot', 'l2norm')

# Branch log used by gradcheck to spot perturbations that cross a kink
_branches = threading.local()


def as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x if x.dtype == DTYPE else x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def constant(x):
    return as_tensor(x).detach().clone()


def variable(x):
    return constant(x).requires_grad_(True)


def _check_finite(t, op):
    if not bool(torch.isfinite(t).all()):
        raise FloatingPointError('{} produced a non-finite value'.format(op))
    return t


def _is_scalar(b):
    if isinstance(b, torch.Tensor):
        return b.dim() == 0
    return isinstance(b, (int, float, np.floating, np.integer))


def _log_branch(state):
    log = getattr(_branches, 'log', None)
    if log is not None:
        log.append(state.detach().clone())


class record_branches(object):
    """Collects the branch state of every kinked primitive evaluated inside."""

    def __enter__(self):
        self.states = []
        self._outer = getattr(_branches, 'log', None)
        _branches.log = self.states
        return self

    def __exit__(self, *exc_info):
        _branches.log = self._outer
        return False

    def same_branches(self, other):
        if len(self.states) != len(other.states):
            return False
        return all(torch.equal(a, b) for a, b in zip(self.states, other.states))


class _Clip(torch.autograd.Function):
    @staticmethod
    def forward(ctx, a, lo, hi):
        state = torch.zeros_like(a, dtype=torch.int8)
        state[a < lo] = -1
        state[a > hi] = 1
        state[(a == lo) | (a == hi)] = 2
        _log_branch(state)
        ctx.inside = (state == 0).to(a.dtype)
        return torch.clamp(a, lo, hi)

    @staticmethod
    def backward(ctx, grad):
        return grad * ctx.inside, None, None


class _Sqrt(torch.autograd.Function):
    @staticmethod
    def forward(ctx, a):
        out = torch.sqrt(a)
        ctx.save_for_backward(out)
        return out

    @staticmethod
    def backward(ctx, grad):
        out, = ctx.saved_tensors
        positive = out > 0
        safe = torch.where(positive, out, torch.ones_like(out))
        return grad * torch.where(positive, 0.5 / safe, torch.zeros_like(out))


class _Atan2(torch.autograd.Function):
    @staticmethod
    def forward(ctx, y, x):
        ctx.save_for_backward(y, x)
        out = torch.atan2(y, x) * DEGREES_PER_RADIAN
        # atan2(-0., -1.) is -180 and atan2(-0., -0.) is not 0; range is (-180, 180]
        out = torch.where(out <= -180.0, torch.full_like(out, 180.0), out)
        return torch.where((x == 0) & (y == 0), torch.zeros_like(out), out)

    @staticmethod
    def backward(ctx, grad):
        y, x = ctx.saved_tensors
        r2 = x * x + y * y
        origin = r2 == 0
        safe = torch.where(origin, torch.ones_like(r2), r2)
        zero = torch.zeros_like(r2)
        dy = torch.where(origin, zero, x / safe) * DEGREES_PER_RADIAN
        dx = torch.where(origin, zero, -y / safe) * DEGREES_PER_RADIAN
        return grad * dy, grad * dx


class _L2Norm(torch.autograd.Function):
    @staticmethod
    def forward(ctx, a):
        out = torch.sqrt((a * a).sum())
        ctx.save_for_backward(a, out)
        return out

    @staticmethod
    def backward(ctx, grad):
        a, out = ctx.saved_tensors
        if float(out) == 0.0:
            return torch.zeros_like(a) * grad
        return grad * a / out


def elementwise(kind, a, b=None, lo=None, hi=None):
    if kind not in ELEMENTWISE_KINDS:
        raise ValueError('Unknown elementwise op {}'.format(kind))
    a = as_tensor(a)
    if kind in ('add', 'sub', 'mul', 'div'):
        if b is None:
            raise ValueError('{} needs a second operand'.format(kind))
        if not _is_scalar(b):
            b = as_tensor(b)
            if b.shape != a.shape:
                raise ValueError('{}: shape mismatch {} vs {}'.format(
                    kind, tuple(a.shape), tuple(b.shape)))
    if kind == 'add':
        out = a + b
    elif kind == 'sub':
        out = a - b
    elif kind == 'mul':
        out = a * b
    elif kind == 'div':
        if bool((as_tensor(b) == 0).any()):
            raise ZeroDivisionError('div: zero in denominator, guard it with an epsilon')
        out = a / b
    elif kind == 'pow2':
        out = a * a
    elif kind == 'sqrt':
        if bool((a < 0).any()):
            raise ValueError('sqrt of a negative value')
        out = _Sqrt.apply(a)
    else:
        if lo is None or hi is None or lo > hi:
            raise ValueError('clip needs min <= max, got {} and {}'.format(lo, hi))
        out = _Clip.apply(a, float(lo), float(hi))
    return _check_finite(out, kind)


def add(a, b):
    return elementwise('add', a, b)


def sub(a, b):
    return elementwise('sub', a, b)


def mul(a, b):
    return elementwise('mul', a, b)


def div(a, b):
    return elementwise('div', a, b)


def pow2(a):
    return elementwise('pow2', a)


def sqrt(a):
    return elementwise('sqrt', a)


def clip(a, lo, hi):
    return elementwise('clip', a, lo=lo, hi=hi)


def atan2(y, x):
    y, x = as_tensor(y), as_tensor(x)
    if y.shape != x.shape:
        raise ValueError('atan2: shape mismatch {} vs {}'.format(tuple(y.shape), tuple(x.shape)))
    return _check_finite(_Atan2.apply(y, x), 'atan2')


@dataclass(frozen=True)
class Kernel:
    """Fixed 2D correlation weights; never differentiated."""
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or min(w.shape) < 1:
            raise ValueError('Kernel weights must be a non-empty 2D array')
        w.setflags(write=False)
        object.__setattr__(self, 'weights', w)

    @property
    def shape(self):
        return self.weights.shape

    @property
    def anchor(self):
        kh, kw = self.shape
        return int(math.ceil(kh / 2)) - 1, int(math.ceil(kw / 2)) - 1

    def tensor(self):
        return torch.tensor(self.weights, dtype=DTYPE)


def conv2d_same(a, k):
    # Zero-padded correlation; a 3D input is treated as a stack of channels
    a = as_tensor(a)
    if a.dim() not in (2, 3):
        raise ValueError('conv2d_same expects a 2D image or a channel stack')
    height, width = a.shape[-2:]
    kh, kw = k.shape
    if kh > 2 * height or kw > 2 * width:
        raise ValueError('Kernel {}x{} is larger than twice the input {}x{}'.format(
            kh, kw, height, width))
    ay, ax = k.anchor
    x = a.reshape(-1, 1, height, width)
    x = F.pad(x, (ax, kw - 1 - ax, ay, kh - 1 - ay))
    out = F.conv2d(x, k.tensor().view(1, 1, kh, kw))
    return _check_finite(out.reshape(a.shape), 'conv2d_same')


def subsample(a, rows, cols):
    a = as_tensor(a)
    height, width = a.shape[-2:]
    rows = torch.as_tensor(list(rows), dtype=torch.long)
    cols = torch.as_tensor(list(cols), dtype=torch.long)
    for name, idx, extent in (('row', rows, height), ('col', cols, width)):
        if len(idx) and (int(idx.min()) < 0 or int(idx.max()) >= extent):
            raise IndexError('subsample: {} index out of range [0, {})'.format(name, extent))
    return a.index_select(-2, rows).index_select(-1, cols)


def resize_bilinear(a, new_shape):
    # Pixel centers sit at (i + 0.5) / extent in both grids
    a = as_tensor(a)
    if a.dim() != 2:
        raise ValueError('resize_bilinear expects a 2D image')
    new_shape = tuple(int(n) for n in new_shape)
    if min(new_shape) < 1:
        raise ValueError('resize_bilinear: extents must be >= 1')
    if new_shape == tuple(a.shape):
        return a * 1.0
    out = F.interpolate(a[None, None], size=new_shape, mode='bilinear', align_corners=False)
    return _check_finite(out[0, 0], 'resize_bilinear')


def warp_bilinear(a, pose, out_shape):
    """Samples `a` through the inverse similarity transform of `pose`.

    pose is a (tx, ty, r, sigma) tensor or anything with as_tensor(). Output
    pixel p reads input location c_in + e^-sigma R(-r) (p - c_out - t), with
    both centers at (extent - 1) / 2 in index coordinates. Locations outside
    the input read 0.
    """
    a = as_tensor(a)
    if a.dim() != 2:
        raise ValueError('warp_bilinear expects a 2D image')
    params = pose if isinstance(pose, torch.Tensor) else pose.as_tensor()
    params = as_tensor(params)
    out_h, out_w = (int(n) for n in out_shape)
    if out_h < 1 or out_w < 1:
        raise ValueError('warp_bilinear: extents must be >= 1')
    in_h, in_w = a.shape
    tx, ty, r, sigma = params[0], params[1], params[2], params[3]

    ys = torch.arange(out_h, dtype=DTYPE) - (out_h - 1) / 2.0
    xs = torch.arange(out_w, dtype=DTYPE) - (out_w - 1) / 2.0
    py, px = torch.meshgrid(ys, xs, indexing='ij')
    px = px - tx
    py = py - ty
    angle = torch.remainder(r, 360.0) / DEGREES_PER_RADIAN
    scale = torch.exp(-sigma)
    cos, sin = torch.cos(angle), torch.sin(angle)
    sx = scale * (cos * px + sin * py) + (in_w - 1) / 2.0
    sy = scale * (cos * py - sin * px) + (in_h - 1) / 2.0
    _log_branch(torch.stack([torch.floor(sx), torch.floor(sy)]).to(torch.int64))

    grid = torch.stack([(2 * sx + 1) / in_w - 1, (2 * sy + 1) / in_h - 1], dim=-1)
    out = F.grid_sample(a[None, None], grid[None], mode='bilinear',
                        padding_mode='zeros', align_corners=False)
    return _check_finite(out[0, 0], 'warp_bilinear')


def reduce(kind, a, b=None):
    if kind not in REDUCE_KINDS:
        raise ValueError('Unknown reduction {}'.format(kind))
    a = as_tensor(a)
    if kind == 'sum':
        return a.sum()
    if kind == 'dot':
        b = as_tensor(b)
        if a.shape != b.shape:
            raise ValueError('dot: shape mismatch {} vs {}'.format(tuple(a.shape), tuple(b.shape)))
        return _check_finite((a * b).sum(), 'dot')
    return _check_finite(_L2Norm.apply(a), 'l2norm')


def total(a):
    return reduce('sum', a)


def dot(a, b):
    return reduce('dot', a, b)


def l2norm(a):
    return reduce('l2norm', a)


def _leaves(seed):
    leaves, seen, stack = [], set(), [seed.grad_fn]
    while stack:
        fn = stack.pop()
        if fn is None or id(fn) in seen:
            continue
        seen.add(id(fn))
        if hasattr(fn, 'variable'):
            leaves.append(fn.variable)
        stack.extend(next_fn for next_fn, _ in fn.next_functions)
    return leaves


def backward(seed):
    # Populates .grad of every leaf under seed, re-zeroing them first
    if not isinstance(seed, torch.Tensor) or seed.dim() != 0:
        raise ValueError('backward needs a scalar seed')
    if not seed.requires_grad:
        return
    for leaf in _leaves(seed):
        leaf.grad = None
    seed.backward(retain_graph=True)


def gradient(seed, x):
    if seed.dim() != 0:
        raise ValueError('gradient needs a scalar seed')
    if not seed.requires_grad:
        return torch.zeros_like(x)
    grad, = torch.autograd.grad(seed, x, allow_unused=True)
    return torch.zeros_like(x) if grad is None else grad


@dataclass
class GradcheckReport:
    name: str
    max_rel_error: float
    checked: int
    excluded: int
    tolerance: float
    worst_index: int = -1

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance

    def __str__(self):
        status = 'ok' if self.passed else 'FAILED'
        return '{:<16} max rel. error {:.3e} over {} coords ({} excluded at kinks) {}'.format(
            self.name, self.max_rel_error, self.checked, self.excluded, status)


def gradcheck(f, x, h=1e-6, tol=1e-4, coords=64, seed=0, name='', adjoint_hook=None):
    """Compares the backward-pass gradient of scalar f at x to central differences.

    Coordinates whose +h / -h evaluations take different branches through a
    clip or a bilinear sampling cell are counted as excluded, not checked.
    adjoint_hook, if given, is applied to the analytic gradient first (used as
    a negative control).
    """
    if h <= 0:
        raise ValueError('gradcheck step must be positive')
    x0 = constant(x)
    xv = x0.clone().requires_grad_(True)
    value = f(xv)
    if not isinstance(value, torch.Tensor) or value.dim() != 0:
        raise ValueError('gradcheck objective must return a scalar')
    analytic = gradient(value, xv).reshape(-1).detach()
    if adjoint_hook is not None:
        analytic = adjoint_hook(analytic)

    rng = np.random.default_rng(seed)
    count = min(coords, x0.numel())
    indices = np.sort(rng.choice(x0.numel(), size=count, replace=False))
    flat = x0.reshape(-1)
    max_error, worst, checked, excluded = 0.0, -1, 0, 0
    for i in indices:
        values = []
        recorders = []
        for sign in (1.0, -1.0):
            shifted = flat.clone()
            shifted[i] += sign * h
            with torch.no_grad(), record_branches() as recorder:
                values.append(float(f(shifted.reshape(x0.shape))))
            recorders.append(recorder)
        if not recorders[0].same_branches(recorders[1]):
            excluded += 1
            continue
        numeric = (values[0] - values[1]) / (2 * h)
        exact = float(analytic[i])
        error = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
        checked += 1
        if error > max_error:
            max_error, worst = error, int(i)
    return GradcheckReport(name, max_error, checked, excluded, tol, worst)
