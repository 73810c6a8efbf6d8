"""Gradient-check cases: every differentiable op with an input generator and a numpy reference."""

import numpy as np
from oracles import central_diff, rel_error
from scipy.special import erf

from geoflow.autograd import Tensor, concat, mse
from geoflow.nn import MLP, AttentionBlock, dispersion_loss


def _pos(rng, shape):
    return rng.uniform(0.5, 2.0, shape)


def _gelu_ref(x):
    return 0.5 * x * (1 + erf(x / np.sqrt(2)))


def _lse_ref(x, axis=None):
    m = np.max(x, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return out.reshape(()) if axis is None else np.squeeze(out, axis)


def _softmax_ref(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


# name -> (input generator, autograd fn, numpy reference)
CASES = {
    "add": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(4,))], lambda a, b: a + b, lambda a, b: a + b),
    "sub": (lambda r: [r.normal(size=(3, 1)), r.normal(size=(3, 4))], lambda a, b: a - b, lambda a, b: a - b),
    "neg": (lambda r: [r.normal(size=(5,))], lambda a: -a, lambda a: -a),
    "mul": (lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 3))], lambda a, b: a * b, lambda a, b: a * b),
    "div": (lambda r: [r.normal(size=(2, 3)), _pos(r, (3,))], lambda a, b: a / b, lambda a, b: a / b),
    "rdiv": (lambda r: [_pos(r, (4,))], lambda a: 2.0 / a, lambda a: 2.0 / a),
    "pow": (lambda r: [_pos(r, (4,))], lambda a: a**1.7, lambda a: a**1.7),
    "square": (lambda r: [r.normal(size=(4,))], lambda a: a.square(), lambda a: a * a),
    "exp": (lambda r: [r.normal(size=(3, 2))], lambda a: a.exp(), np.exp),
    "log": (lambda r: [_pos(r, (3, 2))], lambda a: a.log(), np.log),
    "tanh": (lambda r: [r.normal(size=(6,))], lambda a: a.tanh(), np.tanh),
    "gelu": (lambda r: [r.normal(size=(6,)) * 2], lambda a: a.gelu(), _gelu_ref),
    "sum": (lambda r: [r.normal(size=(3, 4))], lambda a: a.sum(axis=1), lambda a: a.sum(axis=1)),
    "sum_keepdims": (lambda r: [r.normal(size=(3, 4))], lambda a: a.sum(axis=0, keepdims=True), lambda a: a.sum(0, keepdims=True)),
    "mean": (lambda r: [r.normal(size=(3, 4))], lambda a: a.mean(), lambda a: a.mean()),
    "logsumexp": (lambda r: [r.normal(size=(3, 5))], lambda a: a.logsumexp(axis=1), lambda a: _lse_ref(a, 1)),
    "logsumexp_all": (lambda r: [r.normal(size=(3, 5))], lambda a: a.logsumexp(), _lse_ref),
    "softmax": (lambda r: [r.normal(size=(2, 5))], lambda a: a.softmax(axis=-1), _softmax_ref),
    "matmul": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(4, 2))], lambda a, b: a @ b, lambda a, b: a @ b),
    "matmul_batched": (
        lambda r: [r.normal(size=(2, 3, 4)), r.normal(size=(4, 5))],
        lambda a, b: a @ b,
        lambda a, b: a @ b,
    ),
    "reshape": (lambda r: [r.normal(size=(2, 6))], lambda a: a.reshape(3, 4), lambda a: a.reshape(3, 4)),
    "transpose": (lambda r: [r.normal(size=(2, 3, 4))], lambda a: a.transpose(2, 0, 1), lambda a: a.transpose(2, 0, 1)),
    "swapaxes": (lambda r: [r.normal(size=(2, 3, 4))], lambda a: a.swapaxes(-1, -2), lambda a: np.swapaxes(a, -1, -2)),
    "getitem": (lambda r: [r.normal(size=(4, 5))], lambda a: a[1:3, ::2], lambda a: a[1:3, ::2]),
    "getitem_repeat": (lambda r: [r.normal(size=(5,))], lambda a: a[np.array([0, 2, 2, 4])], lambda a: a[[0, 2, 2, 4]]),
    "concat": (
        lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 2))],
        lambda a, b: concat([a, b], axis=1),
        lambda a, b: np.concatenate([a, b], axis=1),
    ),
    "mse": (
        lambda r: [r.normal(size=(4, 3)), r.normal(size=(4, 3))],
        lambda a, b: mse(a, b),
        lambda a, b: np.mean(np.sum((a - b) ** 2, axis=1)),
    ),
}


def _weighted(fn, weights):
    def loss(*tensors):
        return (fn(*tensors) * weights).sum()

    return loss


def gradcheck(fn, inputs, weights, h=1e-5) -> float:
    """Worst relative error between autodiff and central differences over all inputs."""
    tensors = [Tensor(x, requires_grad=True) for x in inputs]
    _weighted(fn, weights)(*tensors).backward()
    worst = 0.0
    for k, x in enumerate(inputs):

        def f(xk, k=k):
            args = [Tensor(v) for v in inputs]
            args[k] = Tensor(xk)
            return _weighted(fn, weights)(*args).item()

        worst = max(worst, rel_error(tensors[k].grad, central_diff(f, x, h)))
    return worst


def check_case(name, seed) -> tuple[float, float]:
    """(gradient rel. error, forward abs. error vs numpy) for one random instance."""
    make, fn, ref = CASES[name]
    rng = np.random.default_rng(seed)
    inputs = make(rng)
    out = fn(*[Tensor(x) for x in inputs]).data
    fwd = float(np.max(np.abs(out - ref(*inputs))))
    weights = rng.normal(size=out.shape)
    return gradcheck(fn, inputs, weights), fwd


def module_cases():
    """Composite cases: MLP, attention (plain and masked) and the dispersion loss, w.r.t. every parameter."""

    def mlp_case(seed):
        rng = np.random.default_rng(seed)
        net = MLP([3, 5, 2], rng)
        x = rng.normal(size=(4, 3))
        return net, lambda: net(x)

    def attn_case(seed, masked=False):
        rng = np.random.default_rng(seed)
        blk = AttentionBlock(4, rng)
        x = rng.normal(size=(2, 4, 4))
        mask = np.array([[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]], bool) if masked else None
        return blk, lambda: blk(x, mask)

    def disp_case(seed, include_self=True):
        rng = np.random.default_rng(seed)
        feats = Tensor(rng.normal(size=(5, 3)), requires_grad=True)

        class Holder:
            def parameters(self):
                return {"f": feats}

        return Holder(), lambda: dispersion_loss(feats, tau=1.0, include_self=include_self)

    return {
        "mlp": mlp_case,
        "attention": attn_case,
        "attention_masked": lambda s: attn_case(s, masked=True),
        "dispersion": disp_case,
        "dispersion_exclusive": lambda s: disp_case(s, include_self=False),
    }


def check_module(name, seed, h=1e-5) -> float:
    module, forward = module_cases()[name](seed)
    params = module.parameters()
    out = forward()
    weights = np.random.default_rng(seed + 1).normal(size=out.shape)
    (out * weights).sum().backward()
    worst = 0.0
    for p in params.values():
        analytic = p.grad.copy()

        def f(v, p=p):
            old = p.data.copy()
            p.data[...] = v
            val = float(np.sum(forward().data * weights))
            p.data[...] = old
            return val

        worst = max(worst, rel_error(analytic, central_diff(f, p.data.copy(), h)))
    return worst
