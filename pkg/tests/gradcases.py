"""Finite-difference gradient checks for every differentiable engine op, in float64."""

from __future__ import annotations

import numpy as np

from binofeat import tensor_engine as te
from oracles import numeric_grad, rel_error


def _away_from_zero(rng, shape, gap=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-300) * gap + x, x)


def _rand_shape(rng, ndim, lo=1, hi=5):
    return tuple(int(s) for s in rng.integers(lo, hi + 1, ndim))


def make_cases(rng) -> list[tuple[str, tuple, callable, list[np.ndarray]]]:
    """(op name, shape, fn(*tensors) -> Tensor, inputs). Each op gets three random shapes."""
    cases = []
    for _ in range(3):
        s = _rand_shape(rng, int(rng.integers(1, 4)))
        cases += [
            ("add", s, lambda a, b: te.add(a, b), [rng.normal(size=s), rng.normal(size=s)]),
            ("add_broadcast", s, lambda a, b: te.add(a, b), [rng.normal(size=s), rng.normal(size=s[-1:])]),
            ("sub", s, lambda a, b: te.sub(a, b), [rng.normal(size=s), rng.normal(size=s)]),
            ("mul", s, lambda a, b: te.mul(a, b), [rng.normal(size=s), rng.normal(size=s)]),
            ("scale", s, lambda a: te.scale(a, -1.7), [rng.normal(size=s)]),
            ("square", s, lambda a: te.square(a), [rng.normal(size=s)]),
            ("relu", s, lambda a: te.relu(a), [_away_from_zero(rng, s)]),
            ("sigmoid", s, lambda a: te.sigmoid(a), [rng.normal(size=s) * 2]),
            ("log", s, lambda a: te.log(a), [rng.uniform(0.2, 3.0, size=s)]),
            ("sum_all", s, lambda a: te.sum_(a), [rng.normal(size=s)]),
            ("sum_last_axis", s, lambda a: te.sum_(a, axis=-1), [rng.normal(size=s)]),
            ("reshape", s, lambda a: te.reshape(a, (-1,)), [rng.normal(size=s)]),
        ]
        n, d = int(rng.integers(2, 7)), int(rng.integers(1, 5))
        idx = rng.integers(0, n, int(rng.integers(1, 8)))
        cases.append(("take_rows", (n, d), lambda a, idx=idx: te.take_rows(a, idx), [rng.normal(size=(n, d))]))
        cases.append(("stack", (n, d), lambda a, b: te.stack([a, b]), [rng.normal(size=(n, d)), rng.normal(size=(n, d))]))

        r = int(rng.integers(1, 4))
        c, h, w = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        cases.append(("pixel_shuffle", (c * r * r, h, w), lambda a, r=r: te.pixel_shuffle(a, r),
                      [rng.normal(size=(c * r * r, h, w))]))
        cases.append(("pixel_unshuffle", (c, h * r, w * r), lambda a, r=r: te.pixel_unshuffle(a, r),
                      [rng.normal(size=(c, h * r, w * r))]))

        c, hg, wg, npts = int(rng.integers(1, 5)), int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(1, 6))
        # keep sample points off integer grid lines, where bilinear weights have kinks
        gx = np.floor(rng.uniform(0, wg - 1, npts)) + rng.uniform(0.1, 0.9, npts)
        gy = np.floor(rng.uniform(0, hg - 1, npts)) + rng.uniform(0.1, 0.9, npts)
        gx, gy = np.minimum(gx, wg - 1.1), np.minimum(gy, hg - 1.1)
        cases.append(("bilinear_sample", (c, hg, wg), lambda f, gx=gx, gy=gy: te.bilinear_sample(f, gx, gy),
                      [rng.normal(size=(c, hg, wg))]))

        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        k = int(rng.integers(1, 5))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        hh, ww = int(rng.integers(k, k + 5)), int(rng.integers(k, k + 5))
        cases.append(("conv2d", (cin, hh, ww, cout, k, stride, pad),
                      lambda x, wt, b, s=stride, p=pad: te.conv2d(x, wt, b, stride=s, padding=p),
                      [rng.normal(size=(cin, hh, ww)), rng.normal(size=(cout, cin, k, k)), rng.normal(size=cout)]))
    return cases


def check_case(fn, inputs, rng) -> float:
    """Worst relative error over all inputs of the scalar probe sum(out * R)."""
    tensors = [te.Tensor(x.astype(np.float64), requires_grad=True) for x in inputs]
    out = fn(*tensors)
    probe = rng.normal(size=out.shape)
    loss = te.sum_(te.mul(out, probe))
    loss.backward()
    worst = 0.0
    for t, x in zip(tensors, inputs):
        def f():
            vals = [te.Tensor(v.value) for v in tensors]
            return float(np.sum(fn(*vals).value * probe))

        num = numeric_grad(f, t.value)
        worst = max(worst, rel_error(t.grad, num))
    return worst
