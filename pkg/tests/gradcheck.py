"""Central-difference gradient checks shared by the model and acceptance tests."""

import numpy as np

H = 1e-4
RTOL = 1e-3
ATOL = 1e-5


def close(analytic, numeric, rtol=RTOL, atol=ATOL):
    return abs(analytic - numeric) <= max(atol, rtol * max(abs(analytic), abs(numeric)))


def probe(f, array, analytic_grad, rng, n=50, h=H):
    """Compare ``analytic_grad`` with central differences of scalar ``f`` at
    ``n`` random entries of ``array`` (perturbed in place and restored).

    Returns the list of (index, analytic, numeric) that disagree.
    """
    flat = array.reshape(-1)
    g = np.asarray(analytic_grad).reshape(-1)
    bad = []
    for i in rng.choice(flat.size, size=min(n, flat.size), replace=False):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        num = (up - down) / (2 * h)
        if not close(g[i], num):
            bad.append((int(i), float(g[i]), float(num)))
    return bad


def layer_check(layer, x, rng, n=50, train=True):
    """Gradient check of one layer under the scalar loss sum(out * r).

    Returns a dict name -> mismatches for the input and every parameter.
    """
    out = layer.forward(x, train)
    r = rng.standard_normal(out.shape)
    dx = layer.backward(r)
    grads = {k: v.copy() for k, v in layer.grads.items()}

    def f():
        return float((layer.forward(x, train) * r).sum())

    result = {"x": probe(f, x, dx, rng, n)}
    for k, p in layer.params.items():
        result[k] = probe(f, p, grads[k], rng, n)
    return result
