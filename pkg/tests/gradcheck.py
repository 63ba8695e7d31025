"""Central finite-difference helpers shared by the convnet and acceptance tests."""

import numpy as np

from bdefs import convnet as cn

STEP = 1e-5
# gradients that vanish identically (conv bias under batch-norm) are compared
# against this absolute floor instead of their own zero norm
FLOOR = 1e-5


def rel_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), FLOOR))


def numeric_grad(f, x, step=STEP):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + step
        hi = f()
        x[i] = old - step
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * step)
    return g


def layer_errors(seed) -> dict:
    """Relative error of every layer's backward pass on random inputs.

    Each layer is reduced to the scalar sum(out * G) for a fixed random G.
    """
    rng = np.random.default_rng(seed)
    errs = {}

    x = rng.normal(size=(2, 8, 8, 2))
    w = rng.normal(size=(3, 3, 2, 4))
    b = rng.normal(size=4)
    G = rng.normal(size=(2, 6, 6, 4))
    f = lambda: float(np.sum(cn.conv2d_forward(x, w, b) * G))
    dx, dw, db = cn.conv2d_backward(G, x, w)
    errs["conv.x"] = rel_error(dx, numeric_grad(f, x))
    errs["conv.w"] = rel_error(dw, numeric_grad(f, w))
    errs["conv.b"] = rel_error(db, numeric_grad(f, b))

    x = rng.normal(size=(3, 5, 5, 3))
    gamma, beta = rng.normal(size=3), rng.normal(size=3)
    G = rng.normal(size=x.shape)

    def bn():
        out, _ = cn.batchnorm_forward(x, gamma, beta, np.zeros(3), np.ones(3), True)
        return float(np.sum(out * G))

    _, cache = cn.batchnorm_forward(x, gamma, beta, np.zeros(3), np.ones(3), True)
    dx, dg, dbt = cn.batchnorm_backward(G, cache, gamma)
    errs["batchnorm.x"] = rel_error(dx, numeric_grad(bn, x))
    errs["batchnorm.gamma"] = rel_error(dg, numeric_grad(bn, gamma))
    errs["batchnorm.beta"] = rel_error(dbt, numeric_grad(bn, beta))

    x = rng.normal(size=(2, 4, 4, 3))
    x[np.abs(x) < 1e-3] = 0.5  # keep clear of the kink
    G = rng.normal(size=x.shape)
    errs["relu"] = rel_error(cn.relu_backward(G, x),
                             numeric_grad(lambda: float(np.sum(cn.relu(x) * G)), x))

    x = rng.normal(size=(2, 7, 6, 3))  # odd height exercises truncation
    G = rng.normal(size=(2, 3, 3, 3))
    errs["maxpool"] = rel_error(cn.maxpool_backward(G, x),
                                numeric_grad(lambda: float(np.sum(cn.maxpool_forward(x) * G)), x))

    x = rng.normal(size=(4, 6))
    w = rng.normal(size=(6, 5))
    b = rng.normal(size=5)
    G = rng.normal(size=(4, 5))
    f = lambda: float(np.sum(cn.fc_forward(x, w, b) * G))
    dx, dw, db = cn.fc_backward(G, x, w)
    errs["fc.x"] = rel_error(dx, numeric_grad(f, x))
    errs["fc.w"] = rel_error(dw, numeric_grad(f, w))
    errs["fc.b"] = rel_error(db, numeric_grad(f, b))
    return errs


def model_errors(seed, hidden=12, gamma=1e-2) -> dict:
    """Relative error of every parameter gradient of ``training_loss`` on 8x8 inputs."""
    rng = np.random.default_rng(seed)
    m = cn.init_model((8, 8, 1), 3, hidden=hidden, seed=seed)
    m.params["conv_b"] += rng.normal(size=m.params["conv_b"].shape)
    m.params["bn_gamma"] += 0.3 * rng.normal(size=m.params["bn_gamma"].shape)
    m.params["bn_beta"] += 0.3 * rng.normal(size=m.params["bn_beta"].shape)
    x = rng.random((6, 8, 8, 1))
    y = rng.integers(0, 3, 6)
    bufs = (m.bn_mean.copy(), m.bn_var.copy())

    def loss():
        val = cn.training_loss(m, x, y, gamma, np.random.default_rng(1234))[0]
        m.bn_mean[:], m.bn_var[:] = bufs
        return val

    _, grads, _ = cn.training_loss(m, x, y, gamma, np.random.default_rng(1234))
    m.bn_mean[:], m.bn_var[:] = bufs
    return {k: rel_error(grads[k], numeric_grad(loss, m.params[k])) for k in m.params}
