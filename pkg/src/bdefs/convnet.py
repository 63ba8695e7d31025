"""Small convolutional network in numpy, used as a trainable feature extractor.

Layer stack (fixed):

    conv 3x3 (8 filters, stride 1, valid) -> batchnorm -> relu
    -> maxpool 2x2/2 -> flatten -> fc 400 -> relu -> dropout -> fc K -> softmax

Features are tapped after the ReLU that follows the 400-unit layer, before
dropout. Everything runs in float64; images are (N, H, W, C) arrays.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
WEIGHT_KEYS = ("conv_w", "fc1_w", "fc2_w")
PARAM_KEYS = ("conv_w", "conv_b", "bn_gamma", "bn_beta", "fc1_w", "fc1_b", "fc2_w", "fc2_b")


class NonFiniteError(FloatingPointError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


# -- layer kernels ----------------------------------------------------------

def conv2d_forward(x, w, b):
    """Valid, stride-1 cross-correlation.

    x: (N, H, W, C); w: (c1, c2, C, F); b: (F,). Returns (N, H-c1+1, W-c2+1, F).
    A single (H, W, C) image is accepted and returns (Ho, Wo, F).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    c1, c2, cin, _ = w.shape
    if x.shape[3] != cin:
        raise ValueError(f"image has {x.shape[3]} channels, filter expects {cin}")
    if c1 > x.shape[1] or c2 > x.shape[2]:
        raise ValueError(f"filter {c1}x{c2} larger than image {x.shape[1]}x{x.shape[2]}")
    # (N, Ho, Wo, C, c1, c2)
    patches = sliding_window_view(x, (c1, c2), axis=(1, 2))
    out = np.einsum("nhwcpq,pqcf->nhwf", patches, w, optimize=True) + b
    return out[0] if single else out


def conv2d_backward(dout, x, w):
    """Gradients (dx, dw, db) of the valid convolution."""
    c1, c2, _, _ = w.shape
    ho, wo = dout.shape[1], dout.shape[2]
    patches = sliding_window_view(x, (c1, c2), axis=(1, 2))
    dw = np.einsum("nhwcpq,nhwf->pqcf", patches, dout, optimize=True)
    db = dout.sum(axis=(0, 1, 2))
    dx = np.zeros_like(x)
    for p in range(c1):
        for q in range(c2):
            dx[:, p:p + ho, q:q + wo, :] += dout @ w[p, q].T
    return dx, dw, db


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0)


def maxpool_forward(x, size=2):
    """Non-overlapping max pooling; trailing rows/cols that do not fill a window are dropped.

    Accepts (N, H, W, C) or a 2-D (H, W) array.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return maxpool_forward(x[None, :, :, None], size)[0, :, :, 0]
    n, h, w, c = x.shape
    ho, wo = h // size, w // size
    if ho == 0 or wo == 0:
        raise ValueError(f"input {h}x{w} smaller than pooling window {size}")
    xr = x[:, :ho * size, :wo * size, :].reshape(n, ho, size, wo, size, c)
    return xr.max(axis=(2, 4))


def maxpool_backward(dout, x, size=2):
    n, h, w, c = x.shape
    ho, wo = dout.shape[1], dout.shape[2]
    xr = x[:, :ho * size, :wo * size, :].reshape(n, ho, size, wo, size, c)
    xr = xr.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, size * size)
    arg = np.argmax(xr, axis=-1)  # first max wins on ties
    sel = np.zeros_like(xr)
    np.put_along_axis(sel, arg[..., None], 1.0, axis=-1)
    sel *= dout[..., None]
    sel = sel.reshape(n, ho, wo, c, size, size).transpose(0, 1, 4, 2, 5, 3)
    dx = np.zeros_like(x)
    dx[:, :ho * size, :wo * size, :] = sel.reshape(n, ho * size, wo * size, c)
    return dx


def batchnorm_forward(x, gamma, beta, running_mean, running_var, training):
    """Per-channel normalization over all axes but the last.

    In training mode batch statistics are used and the running buffers are
    updated in place; in inference mode the running buffers are used.
    """
    axes = tuple(range(x.ndim - 1))
    if training:
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        m = x.size // x.shape[-1]
        unbiased = var * m / (m - 1) if m > 1 else var
        running_mean *= 1.0 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mu
        running_var *= 1.0 - BN_MOMENTUM
        running_var += BN_MOMENTUM * unbiased
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu) * inv
    return gamma * xhat + beta, (xhat, inv)


def batchnorm_backward(dout, cache, gamma):
    """Training-mode gradients ``(dx, dgamma, dbeta)``."""
    xhat, inv = cache
    axes = tuple(range(dout.ndim - 1))
    m = dout.size // dout.shape[-1]
    dbeta = dout.sum(axis=axes)
    dgamma = (dout * xhat).sum(axis=axes)
    dxhat = dout * gamma
    dx = inv / m * (m * dxhat - dxhat.sum(axis=axes)
                    - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


def fc_forward(x, w, b):
    return x @ w + b


def fc_backward(dout, x, w):
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# -- losses -------------------------------------------------------------------

def loss_eq2(y, yhat, weights=(), gamma=0.0) -> float:
    """Binary cross-entropy plus ``gamma`` times the sum of (unsquared) L2 norms.

    ``y`` holds 0/1 targets, ``yhat`` probabilities (clamped to [1e-12, 1-1e-12]).
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.clip(np.asarray(yhat, dtype=np.float64).ravel(), 1e-12, 1 - 1e-12)
    if y.size == 0 or y.shape != yhat.shape:
        raise ValueError("need matching, nonempty y and yhat")
    ce = -np.mean(y * np.log(yhat) + (1 - y) * np.log(1 - yhat))
    penalty = sum(float(np.linalg.norm(np.ravel(w))) for w in weights)
    return float(ce + gamma * penalty)


def cross_entropy(probs, labels) -> float:
    p = probs[np.arange(labels.size), labels]
    return float(-np.mean(np.log(np.clip(p, 1e-300, None))))


# -- model --------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gamma: float = 1e-4
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr < 0 or self.gamma < 0:
            raise ValueError("lr and gamma must be nonnegative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def layer_shapes(input_shape, n_filters=8, kernel=3, hidden=400, n_classes=3, pool=2):
    """Output shape of every layer for one (H, W, C) input, without allocating."""
    h, w, c = input_shape
    if kernel > h or kernel > w:
        raise ValueError("filter larger than image")
    ho, wo = h - kernel + 1, w - kernel + 1
    ph, pw = ho // pool, wo // pool
    flat = ph * pw * n_filters
    return [
        ("input", (h, w, c)),
        ("conv", (ho, wo, n_filters)),
        ("batchnorm", (ho, wo, n_filters)),
        ("relu", (ho, wo, n_filters)),
        ("maxpool", (ph, pw, n_filters)),
        ("flatten", (flat,)),
        ("fc", (hidden,)),
        ("relu", (hidden,)),
        ("dropout", (hidden,)),
        ("fc", (n_classes,)),
        ("softmax", (n_classes,)),
    ]


@dataclass
class ConvNetModel:
    input_shape: tuple
    n_classes: int
    params: dict
    bn_mean: np.ndarray
    bn_var: np.ndarray
    dropout: float = 0.5
    trained: bool = False
    training: bool = False
    extra: dict = field(default_factory=dict, repr=False)

    @property
    def hidden(self) -> int:
        return self.params["fc1_w"].shape[1]

    @property
    def n_filters(self) -> int:
        return self.params["conv_w"].shape[3]

    def manifest(self) -> list[str]:
        c1, c2, cin, f = self.params["conv_w"].shape
        flat, hid = self.params["fc1_w"].shape
        return [
            f"layer conv {c1} {c2} {cin} {f}",
            f"layer batchnorm {f}",
            "layer relu",
            "layer maxpool 2 2",
            "layer flatten",
            f"layer fc {flat} {hid} tap",
            "layer relu",
            f"layer dropout {self.dropout:.17g}",
            f"layer fc {hid} {self.n_classes}",
            "layer softmax",
        ]

    def to_text(self) -> str:
        h, w, c = self.input_shape
        lines = ["cnn v1", f"input {h} {w} {c}", f"classes {self.n_classes}",
                 f"trained {int(self.trained)}"]
        lines += self.manifest()
        blocks = [(k, self.params[k]) for k in PARAM_KEYS]
        blocks += [("bn_mean", self.bn_mean), ("bn_var", self.bn_var)]
        for name, arr in blocks:
            lines.append(f"param {name} " + " ".join(str(s) for s in arr.shape))
            lines.append(" ".join(f"{v:.17g}" for v in arr.ravel()))
        lines.append("end")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ConvNetModel":
        lines = text.splitlines()
        if not lines or lines[0].strip() != "cnn v1":
            raise ValueError("not a 'cnn v1' checkpoint")
        input_shape = tuple(int(v) for v in lines[1].split()[1:])
        n_classes = int(lines[2].split()[1])
        trained = bool(int(lines[3].split()[1]))
        dropout = 0.5
        arrays = {}
        i = 4
        while i < len(lines) and lines[i] != "end":
            tok = lines[i].split()
            if tok[0] == "layer" and tok[1] == "dropout":
                dropout = float(tok[2])
            elif tok[0] == "param":
                shape = tuple(int(v) for v in tok[2:])
                vals = np.array([float(v) for v in lines[i + 1].split()], dtype=np.float64)
                arrays[tok[1]] = vals.reshape(shape)
                i += 1
            i += 1
        missing = [k for k in (*PARAM_KEYS, "bn_mean", "bn_var") if k not in arrays]
        if missing:
            raise ValueError(f"checkpoint missing blocks: {missing}")
        params = {k: arrays[k] for k in PARAM_KEYS}
        return cls(input_shape, n_classes, params, arrays["bn_mean"], arrays["bn_var"],
                   dropout=dropout, trained=trained)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "ConvNetModel":
        with open(path) as fh:
            return cls.from_text(fh.read())


def init_model(input_shape, n_classes=3, n_filters=8, kernel=3, hidden=400,
               dropout=0.5, seed=0) -> ConvNetModel:
    """He-normal weights, zero biases, unit batch-norm scale."""
    rng = np.random.default_rng(seed)
    h, w, c = input_shape
    flat = layer_shapes(input_shape, n_filters, kernel, hidden, n_classes)[5][1][0]
    fan_conv = kernel * kernel * c
    params = {
        "conv_w": rng.normal(0.0, np.sqrt(2.0 / fan_conv), (kernel, kernel, c, n_filters)),
        "conv_b": np.zeros(n_filters),
        "bn_gamma": np.ones(n_filters),
        "bn_beta": np.zeros(n_filters),
        "fc1_w": rng.normal(0.0, np.sqrt(2.0 / flat), (flat, hidden)),
        "fc1_b": np.zeros(hidden),
        "fc2_w": rng.normal(0.0, np.sqrt(2.0 / hidden), (hidden, n_classes)),
        "fc2_b": np.zeros(n_classes),
    }
    return ConvNetModel(tuple(input_shape), n_classes, params, np.zeros(n_filters),
                        np.ones(n_filters), dropout=dropout)


def _finite(a, layer):
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"non-finite activations after layer '{layer}'")
    return a


def forward(model: ConvNetModel, x, training=False, rng=None, keep=False):
    """Run the stack. Returns ``(probs, cache)``; cache holds intermediates when ``keep``."""
    p = model.params
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.shape[1:] != tuple(model.input_shape):
        raise ValueError(f"input shape {x.shape[1:]} != model input {model.input_shape}")
    conv = _finite(conv2d_forward(x, p["conv_w"], p["conv_b"]), "conv")
    bn, bn_cache = batchnorm_forward(conv, p["bn_gamma"], p["bn_beta"],
                                     model.bn_mean, model.bn_var, training)
    _finite(bn, "batchnorm")
    a1 = relu(bn)
    pooled = maxpool_forward(a1)
    flat = pooled.reshape(pooled.shape[0], -1)
    h = _finite(fc_forward(flat, p["fc1_w"], p["fc1_b"]), "fc1")
    feat = relu(h)
    if training and model.dropout > 0:
        if rng is None:
            raise ValueError("training-mode forward needs an rng for dropout")
        keep_mask = (rng.random(feat.shape) >= model.dropout) / (1.0 - model.dropout)
        dropped = feat * keep_mask
    else:
        keep_mask = None
        dropped = feat
    logits = _finite(fc_forward(dropped, p["fc2_w"], p["fc2_b"]), "fc2")
    probs = softmax(logits)
    cache = None
    if keep:
        cache = dict(x=x, conv=conv, bn_cache=bn_cache, bn=bn, a1=a1, pooled=pooled,
                     flat=flat, h=h, feat=feat, keep_mask=keep_mask, dropped=dropped,
                     logits=logits)
    return probs, cache


def training_loss(model: ConvNetModel, x, labels, gamma, rng=None):
    """Mean categorical cross-entropy + gamma * sum of squared weight norms.

    Runs the network in training mode (batch statistics, dropout drawn from
    ``rng``) and returns ``(loss, grads, probs)`` with exact gradients for
    every parameter in ``model.params``.
    """
    labels = np.asarray(labels, dtype=np.int64).ravel()
    p = model.params
    probs, c = forward(model, x, training=True, rng=rng, keep=True)
    n = labels.size
    data_loss = cross_entropy(probs, labels)
    reg = sum(float(np.sum(p[k] ** 2)) for k in WEIGHT_KEYS)
    loss = data_loss + gamma * reg

    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    g = {}
    ddrop, g["fc2_w"], g["fc2_b"] = fc_backward(dlogits, c["dropped"], p["fc2_w"])
    dfeat = ddrop * c["keep_mask"] if c["keep_mask"] is not None else ddrop
    dh = relu_backward(dfeat, c["h"])
    dflat, g["fc1_w"], g["fc1_b"] = fc_backward(dh, c["flat"], p["fc1_w"])
    dpooled = dflat.reshape(c["pooled"].shape)
    da1 = maxpool_backward(dpooled, c["a1"])
    dbn = relu_backward(da1, c["bn"])
    dconv, g["bn_gamma"], g["bn_beta"] = batchnorm_backward(dbn, c["bn_cache"], p["bn_gamma"])
    _, g["conv_w"], g["conv_b"] = conv2d_backward(dconv, c["x"], p["conv_w"])
    for k in WEIGHT_KEYS:
        g[k] = g[k] + 2.0 * gamma * p[k]
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite loss")
    return float(loss), g, probs


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, t: int, cfg: TrainConfig):
    """One ADAM update in place; ``t`` is the 1-based step count."""
    if t < 1:
        raise ValueError("ADAM step index starts at 1")
    b1, b2 = cfg.beta1, cfg.beta2
    for k, g in grads.items():
        if params[k].shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {params[k].shape} for {k}")
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        params[k] -= cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)
    state.t = t
    return params, state


# -- training -----------------------------------------------------------------

@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)  # (epoch, train_loss, train_acc, val_loss, val_acc)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
            for r in self.rows:
                w.writerow([r[0]] + [f"{v:.17g}" for v in r[1:]])

    @property
    def val_acc(self):
        return [r[4] for r in self.rows]


def evaluate(model: ConvNetModel, x, labels, batch_size=256):
    labels = np.asarray(labels, dtype=np.int64)
    probs = predict_proba(model, x, batch_size)
    return cross_entropy(probs, labels), float(np.mean(probs.argmax(axis=1) == labels))


def predict_proba(model: ConvNetModel, x, batch_size=256):
    x = np.asarray(x, dtype=np.float64)
    out = [forward(model, x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.n_classes))


def train(model: ConvNetModel, x_train, y_train, x_val, y_val, cfg: TrainConfig,
          verbose=False):
    """Mini-batch ADAM training; returns ``(model, history)``.

    Batches are drawn from a per-epoch seeded shuffle. Validation uses
    inference mode (running batch-norm statistics, no dropout).
    """
    x_train = np.asarray(x_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    if len(x_train) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    model.dropout = cfg.dropout
    state = AdamState()
    hist = TrainHistory()
    t = 0
    n = len(x_train)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        tot_loss = tot_correct = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            try:
                loss, grads, probs = training_loss(model, x_train[idx], y_train[idx],
                                                   cfg.gamma, rng)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", hist) from exc
            t += 1
            adam_step(model.params, grads, state, t, cfg)
            tot_loss += loss * idx.size
            tot_correct += float(np.sum(probs.argmax(axis=1) == y_train[idx]))
        if x_val is not None and len(x_val):
            vl, va = evaluate(model, x_val, y_val)
        else:
            vl, va = float("nan"), float("nan")
        hist.rows.append((epoch, tot_loss / n, tot_correct / n, vl, va))
        if verbose and (epoch == 1 or epoch % 10 == 0):
            log.info("epoch %d loss %.4f acc %.4f val_loss %.4f val_acc %.4f",
                     epoch, tot_loss / n, tot_correct / n, vl, va)
    model.trained = True
    return model, hist


def extract_features(model: ConvNetModel, images, batch_size=256) -> np.ndarray:
    """Post-ReLU activations of the hidden fully connected layer, one row per image."""
    if not model.trained:
        raise ValueError("model has not been trained")
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    rows = []
    for i in range(0, len(x), batch_size):
        _, c = forward(model, x[i:i + batch_size], keep=True)
        rows.append(c["feat"])
    return np.concatenate(rows) if rows else np.zeros((0, model.hidden))
