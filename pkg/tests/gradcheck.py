"""Central finite-difference gradient checks in float64."""
from __future__ import annotations

import numpy as np

from crossiris.autodiff import Tensor

FD_EPS = 1e-6
REL_TOL = 1e-3
# one-sided slopes differing by more than this (relative) mark a kink inside the stencil
KINK_TOL = 1e-3
MAX_KINK_FRACTION = 0.2


def _central(fp: float, f0: float, fm: float, eps: float) -> float:
    """Central difference, or NaN if the stencil straddles a kink."""
    right, left = (fp - f0) / eps, (f0 - fm) / eps
    if abs(right - left) > KINK_TOL * (abs(right) + abs(left)) + 1e-6:
        return np.nan
    return (fp - fm) / (2 * eps)


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """Max elementwise |a - n| / max(|a| + |n|, floor * scale).

    ``scale`` is the largest gradient magnitude in the comparison, so entries
    whose true value is zero (a bias feeding batch norm, say) are judged
    against the size of the gradient rather than against the 1e-9 rounding
    noise of the difference quotient.  NaN entries of ``numeric`` are kinks
    and are skipped; if too many are, the check fails outright.
    """
    a = np.asarray(analytic, np.float64).ravel()
    n = np.asarray(numeric, np.float64).ravel()
    kinks = np.isnan(n)
    if kinks.mean() > MAX_KINK_FRACTION:
        return np.inf
    a, n = a[~kinks], n[~kinks]
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-12)
    return float((np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor * scale)).max(initial=0.0))


def numeric_grad(f, arrays: list[np.ndarray], k: int, eps: float = FD_EPS,
                 coords: np.ndarray | None = None) -> np.ndarray:
    """d f / d arrays[k] by central differences; ``coords`` restricts the flat indices."""
    x = arrays[k]
    flat = x.reshape(-1)
    g = np.full(flat.shape, np.nan)
    idx = range(flat.size) if coords is None else coords
    f0 = f(arrays)
    for i in idx:
        old = flat[i]
        flat[i] = old + eps
        fp = f(arrays)
        flat[i] = old - eps
        fm = f(arrays)
        flat[i] = old
        g[i] = _central(fp, f0, fm, eps)
    return g.reshape(x.shape)


def check_op(op, arrays: list[np.ndarray], rng: np.random.Generator, wrt=None,
             max_coords: int | None = None) -> float:
    """Worst relative error of ``op``'s backward against central differences.

    ``op`` maps float64 Tensors to a Tensor; the check differentiates
    sum(op(...) * R) for a fixed random R so that every output element
    contributes a distinct upstream gradient.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    wrt = range(len(arrays)) if wrt is None else wrt
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    out = op(*ts)
    proj = rng.standard_normal(out.shape)
    (out * Tensor(proj)).sum().backward()

    def f(arrs):
        return float((op(*[Tensor(a) for a in arrs]).data * proj).sum())

    anas, nums = [], []
    for k in wrt:
        coords = None
        if max_coords is not None and arrays[k].size > max_coords:
            coords = rng.choice(arrays[k].size, max_coords, replace=False)
        num = numeric_grad(f, arrays, k, coords=coords)
        ana = ts[k].grad if ts[k].grad is not None else np.zeros_like(arrays[k])
        if coords is not None:
            ana, num = ana.reshape(-1)[coords], num.reshape(-1)[coords]
        anas.append(np.ravel(ana))
        nums.append(np.ravel(num))
    return rel_error(np.concatenate(anas), np.concatenate(nums))


def check_module(module, inputs: list[np.ndarray], rng: np.random.Generator,
                 max_coords: int = 24, forward=None) -> float:
    """Check gradients of a module's output w.r.t. its inputs and a random
    subset of every parameter's entries (float64 copies of the parameters)."""
    for p in module.parameters():
        p.data = p.data.astype(np.float64)
    forward = forward or (lambda *xs: module(*xs))
    xs = [np.array(a, dtype=np.float64) for a in inputs]
    ts = [Tensor(a, requires_grad=True) for a in xs]
    for p in module.parameters():
        p.grad = None
    out = forward(*ts)
    proj = rng.standard_normal(out.shape)
    (out * Tensor(proj)).sum().backward()

    def value() -> float:
        return float((forward(*[Tensor(a) for a in xs]).data * proj).sum())

    anas, nums = [], []
    for k, t in enumerate(ts):
        coords = rng.choice(xs[k].size, min(max_coords, xs[k].size), replace=False)
        num = numeric_grad(lambda arrs: value(), xs, k, coords=coords)
        anas.append(t.grad.reshape(-1)[coords])
        nums.append(num.reshape(-1)[coords])
    for p in module.parameters():
        flat = p.data.reshape(-1)
        coords = rng.choice(flat.size, min(max_coords, flat.size), replace=False)
        num = np.empty(len(coords))
        f0 = value()
        for j, i in enumerate(coords):
            old = flat[i]
            flat[i] = old + FD_EPS
            fp = value()
            flat[i] = old - FD_EPS
            fm = value()
            flat[i] = old
            num[j] = _central(fp, f0, fm, FD_EPS)
        anas.append((p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)[coords])
        nums.append(num)
    # one scale for the whole module, so exactly-zero gradients are judged fairly
    return rel_error(np.concatenate(anas), np.concatenate(nums))


# -- catalogue -------------------------------------------------------------
# Every differentiable layer and loss term, as seed -> worst relative error.

from crossiris.autodiff import concat, l2_norm, nn, where  # noqa: E402
from crossiris.autodiff import functional as F  # noqa: E402
from crossiris import losses as L  # noqa: E402
from crossiris import models as M  # noqa: E402


def _away_from_zero(rng, shape, gap=0.05):
    """Normal samples pushed off the origin so kinks are never straddled."""
    x = rng.standard_normal(shape)
    return np.where(x >= 0, x + gap, x - gap)


def _distinct(rng, shape):
    """Values on a shuffled grid: ties and near-ties are impossible."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.01 - n * 0.005).reshape(shape)


def _op(op, *arrays, wrt=None, max_coords=None):
    def run(seed):
        rng = np.random.default_rng(seed)
        arrs = [a(rng) if callable(a) else a for a in arrays]
        return check_op(op, arrs, rng, wrt=wrt, max_coords=max_coords)
    return run


def _normal(*shape):
    return lambda rng: rng.standard_normal(shape)


def _positive(*shape):
    return lambda rng: rng.uniform(0.5, 2.0, shape)


def _probs(*shape):
    return lambda rng: rng.uniform(0.05, 0.95, shape)


def _module(build, *shapes, train=True, forward=None, max_coords=16):
    def run(seed):
        rng = np.random.default_rng(seed)
        module = build(rng)
        module.train(train)
        if not train:
            # give eval-mode batch norm non-trivial running statistics
            for m in module.modules():
                if isinstance(m, nn.BatchNorm2d):
                    m._buffers["running_mean"][:] = rng.standard_normal(m._buffers["running_mean"].shape)
                    m._buffers["running_var"][:] = rng.uniform(0.5, 2.0, m._buffers["running_var"].shape)
        xs = [rng.standard_normal(s) for s in shapes]
        return check_module(module, xs, rng, max_coords=max_coords, forward=forward)
    return run


class _Fixed(nn.Module):
    """Wraps a functional layer with explicit parameters."""

    def __init__(self, fn, **params):
        self.fn = fn
        for k, v in params.items():
            setattr(self, k, nn.Parameter(v))

    def forward(self, *xs):
        return self.fn(self, *xs)


def _dropout(x):
    return F.dropout(x, 0.3, np.random.default_rng(7), training=True)


def _contrastive_inputs(rng, n=6, dim=5, margin=1.0):
    z1 = rng.standard_normal((n, dim)) * 0.4
    z2 = rng.standard_normal((n, dim)) * 0.4
    y = np.arange(n) % 2
    # keep every distance clear of the hinge at d == margin
    d = np.linalg.norm(z1 - z2, axis=1)
    near = np.abs(d - margin) < 0.05
    z2[near] = z1[near] + (z2[near] - z1[near]) * 0.5
    return z1, z2, y


def _contrastive(seed):
    rng = np.random.default_rng(seed)
    z1, z2, y = _contrastive_inputs(rng)
    return check_op(lambda a, b: L.contrastive(a, b, y, 1.0), [z1, z2], rng)


def _coupling(seed):
    rng = np.random.default_rng(seed)
    z1, z2, y = _contrastive_inputs(rng, n=8, margin=0.8)
    return check_op(lambda a, b: L.coupling_loss(a, b, y, 0.8), [z1, z2], rng)


def _disc(kind):
    # the condition image is data, not a differentiable input
    def run(seed):
        rng = np.random.default_rng(seed)
        D = M.build_discriminator(M.DiscriminatorConfig(kind, 0.0625, (16, 16), 2), rng)
        cond = Tensor(rng.standard_normal((2, 1, 16, 16)))
        return check_module(D, [rng.standard_normal((2, 1, 16, 16))], rng, max_coords=6,
                            forward=lambda y: D(cond, y))
    return run


def _adv_g(seed):
    rng = np.random.default_rng(seed)
    D = M.build_discriminator(M.DiscriminatorConfig("patch", 0.0625, (16, 16), 2), rng)
    for p in D.parameters():
        p.data = p.data.astype(np.float64)
    cond = Tensor(rng.standard_normal((2, 1, 16, 16)))
    return check_op(lambda y: L.adversarial_g_loss(D, y, cond), [rng.standard_normal((2, 1, 16, 16))],
                    rng, max_coords=24)


def _adv_d(seed):
    rng = np.random.default_rng(seed)
    D = M.build_discriminator(M.DiscriminatorConfig("patch", 0.0625, (16, 16), 2), rng)
    cond = rng.standard_normal((2, 1, 16, 16))
    real = rng.standard_normal((2, 1, 16, 16))
    fake = rng.standard_normal((2, 1, 16, 16))
    return check_module(D, [], rng, max_coords=6, forward=lambda: L.adversarial_d_loss(
        D, Tensor(real), Tensor(fake), Tensor(cond)).reshape(1))


def _perceptual(seed):
    rng = np.random.default_rng(seed)
    V = M.FeatureNet(seed)
    for p in V.parameters():
        p.data = p.data.astype(np.float64)
    target = Tensor(rng.standard_normal((2, 1, 16, 16)))
    return check_op(lambda y: L.perceptual(y, target, V), [rng.standard_normal((2, 1, 16, 16))],
                    rng, max_coords=32)


def _total(which):
    def run(seed):
        rng = np.random.default_rng(seed)
        w = L.LossWeights(*rng.uniform(0.1, 2.0, 5))
        if which == "cgan":
            return check_op(lambda a, b, c: L.total_cgan(a, b, c, w),
                            [rng.standard_normal(()) for _ in range(3)], rng)
        return check_op(lambda a, b, c, d: L.total_cpgan(a, b, c, d, w),
                        [rng.standard_normal(()) for _ in range(4)], rng)
    return run


def _unet_embed(seed):
    rng = np.random.default_rng(seed)
    net = M.build_generator(M.GeneratorConfig("unet", 0.0625, depth=2, dropout=0.0, init="fan_in"), rng)
    return check_module(net, [rng.standard_normal((2, 1, 8, 8))], rng, max_coords=6,
                        forward=lambda x: net.forward_with_embedding(x)[1])


CATALOGUE = {
    # tensor arithmetic
    "add_broadcast": _op(lambda a, b: a + b, _normal(3, 4), _normal(4)),
    "sub": _op(lambda a, b: a - b, _normal(3, 4), _normal(3, 1)),
    "mul_broadcast": _op(lambda a, b: a * b, _normal(2, 3, 4), _normal(3, 1)),
    "div": _op(lambda a, b: a / b, _normal(3, 4), _positive(3, 4)),
    "pow": _op(lambda a: a ** 3, _normal(5)),
    "matmul": _op(lambda a, b: a @ b, _normal(3, 4), _normal(4, 2)),
    "sum_axis": _op(lambda a: a.sum(axis=1), _normal(3, 4, 2)),
    "mean_axes": _op(lambda a: a.mean(axis=(0, 2), keepdims=True), _normal(3, 4, 2)),
    "reshape_transpose": _op(lambda a: a.reshape(4, 6).transpose(1, 0), _normal(2, 3, 4)),
    "getitem": _op(lambda a: a[1:, ::2], _normal(4, 5)),
    "exp": _op(lambda a: a.exp(), _normal(6)),
    "log": _op(lambda a: a.log(), _positive(6)),
    "log_clamped": _op(lambda a: a.log(1e-7), _positive(6)),
    "abs": _op(lambda a: a.abs(), lambda rng: _away_from_zero(rng, (6,))),
    "sqrt": _op(lambda a: a.sqrt(), _positive(6)),
    "clamp_min": _op(lambda a: a.clamp_min(0.0), lambda rng: _away_from_zero(rng, (6,))),
    "concat": _op(lambda a, b: concat([a, b], axis=1), _normal(2, 3, 2), _normal(2, 1, 2)),
    "l2_norm": _op(lambda a: l2_norm(a, axis=1), _normal(4, 5)),
    "where": _op(lambda a, b: where(np.array([True, False, True]), a, b), _normal(3), _normal(3)),
    # convolutional layers
    "conv2d": _op(lambda x, w, b: F.conv2d(x, w, b, 1, 1), _normal(2, 3, 6, 5), _normal(4, 3, 3, 3), _normal(4)),
    "conv2d_stride2": _op(lambda x, w, b: F.conv2d(x, w, b, 2, 1), _normal(2, 2, 8, 8), _normal(3, 2, 4, 4), _normal(3)),
    "conv2d_transpose": _op(lambda x, w, b: F.conv2d_transpose(x, w, b, 2), _normal(2, 3, 3, 4), _normal(3, 2, 2, 2), _normal(2)),
    "pixel_shuffle": _op(lambda x: F.pixel_shuffle(x, 2), _normal(2, 8, 3, 3)),
    "pixel_unshuffle": _op(lambda x: F.pixel_unshuffle(x, 2), _normal(2, 2, 4, 6)),
    # activations
    "relu": _op(F.relu, lambda rng: _away_from_zero(rng, (3, 4))),
    "leaky_relu": _op(lambda x: F.leaky_relu(x, 0.35), lambda rng: _away_from_zero(rng, (3, 4))),
    "prelu": _op(F.prelu, lambda rng: _away_from_zero(rng, (2, 3, 2, 2)), _positive(3)),
    "sigmoid": _op(F.sigmoid, _normal(3, 4)),
    "tanh": _op(F.tanh, _normal(3, 4)),
    # normalization, pooling, dense, regularization
    "batch_norm_train": _module(lambda rng: nn.BatchNorm2d(3, rng), (4, 3, 3, 3)),
    "batch_norm_eval": _module(lambda rng: nn.BatchNorm2d(3, rng), (4, 3, 3, 3), train=False),
    "max_pool2d": _op(lambda x: F.max_pool2d(x, 2), lambda rng: _distinct(rng, (2, 2, 4, 6))),
    "max_pool2d_overlap": _op(lambda x: F.max_pool2d(x, 3, 1), lambda rng: _distinct(rng, (1, 2, 5, 5))),
    "dense": _op(F.dense, _normal(3, 2, 2, 2), _normal(5, 8), _normal(5)),
    "dropout": _op(_dropout, _normal(4, 6)),
    "global_avg_pool": _op(F.global_avg_pool, _normal(2, 3, 4, 5)),
    # modules
    "linear": _module(lambda rng: nn.Linear(6, 4, rng, std=0.5), (3, 6)),
    "conv_module": _module(lambda rng: nn.Conv2d(2, 3, 3, rng=rng, std=0.5), (2, 2, 5, 5)),
    "conv_transpose_module": _module(lambda rng: nn.ConvTranspose2d(3, 2, 2, 2, rng=rng, std=0.5), (2, 3, 3, 3)),
    "prelu_module": _module(lambda rng: _Fixed(lambda m, x: F.prelu(x, m.slope),
                                               slope=rng.uniform(0.1, 0.5, 3)), (2, 3, 4, 4)),
    "residual_block": _module(lambda rng: M.ResidualBlock(4, rng), (2, 4, 5, 5)),
    "translate_generator": _module(lambda rng: M.build_generator(
        M.GeneratorConfig("translate", 0.0625, blocks=1, head_kernel=3), rng), (2, 1, 8, 8), max_coords=6),
    "translate_sr_generator": _module(lambda rng: M.build_generator(
        M.GeneratorConfig("translate_sr", 0.0625, blocks=1, head_kernel=3), rng), (2, 1, 4, 4), max_coords=6),
    "unet_generator": _module(lambda rng: M.build_generator(
        M.GeneratorConfig("unet", 0.0625, depth=2, dropout=0.0, init="fan_in"), rng), (2, 1, 8, 8), max_coords=6),
    "unet_embedding": _unet_embed,
    "global_discriminator": _disc("global"),
    "patch_discriminator": _disc("patch"),
    # loss terms
    "bce_real_fake": _op(L.bce_real_fake, _probs(2, 1, 2, 2), _probs(2, 1, 2, 2)),
    "adversarial_d_loss": _adv_d,
    "adversarial_g_loss": _adv_g,
    "contrastive": _contrastive,
    "coupling_loss": _coupling,
    "l2_reconstruction": _op(L.l2_reconstruction, _normal(2, 1, 4, 4), _normal(2, 1, 4, 4)),
    "perceptual": _perceptual,
    "total_cgan": _total("cgan"),
    "total_cpgan": _total("cpgan"),
}

SEEDS = range(20)
