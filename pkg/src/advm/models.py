"""Differentiable classifiers with exact hand-derived gradients.

Three closed-world architectures (logistic, mlp, smallcnn) implemented
directly in numpy. Each forward pass keeps the intermediates needed for
backprop, and two backward paths share them: gradients w.r.t. the input
(what the attacks consume) and gradients w.r.t. the parameters (what the
trainer consumes). There is no tape; every backward rule is written out.

Ensembles fuse logits linearly, take the cross-entropy of the fused
logits, and push the fused softmax error back through each member scaled
by its weight.
"""

import json
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import LabeledDataset
from .errors import (
    ClassCountMismatch,
    CorruptFile,
    EmptyDataset,
    LabelOutOfRange,
    ShapeMismatch,
    VersionMismatch,
)
from .fileio import atomic_write_text
from .sampling import derive_rng, make_rng

ARCHITECTURES = ("logistic", "mlp", "smallcnn")

_MODEL_FORMAT = "advm-model"
_MODEL_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    input_shape: tuple
    num_classes: int
    hidden: tuple = ()          # mlp only: widths of the hidden layers
    conv_channels: int = 8      # smallcnn only
    conv_kernel: int = 3        # smallcnn only, odd
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if len(self.input_shape) != 3 or any(d < 1 for d in self.input_shape):
            raise ValueError(f"bad input shape {self.input_shape}")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.arch == "mlp" and not self.hidden:
            raise ValueError("mlp needs at least one hidden width")
        if self.arch == "smallcnn":
            if self.conv_kernel % 2 == 0:
                raise ValueError("conv kernel side must be odd")
            h, w, _ = self.input_shape
            if h % 2 or w % 2:
                raise ValueError("smallcnn pools 2x2, so input sides must be even")
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "hidden", tuple(self.hidden))

    @property
    def input_size(self) -> int:
        h, w, c = self.input_shape
        return h * w * c


def _glorot(rng, shape, fan_in, fan_out):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_params(spec: ModelSpec) -> dict:
    """Glorot-uniform weights, zero biases; deterministic in spec.seed."""
    rng = make_rng(spec.seed)
    p = {}
    if spec.arch == "logistic":
        d, c = spec.input_size, spec.num_classes
        p["fc.W"] = _glorot(rng, (c, d), d, c)
        p["fc.b"] = np.zeros(c)
    elif spec.arch == "mlp":
        widths = (spec.input_size,) + spec.hidden + (spec.num_classes,)
        for i in range(len(widths) - 1):
            fan_in, fan_out = widths[i], widths[i + 1]
            p[f"fc{i}.W"] = _glorot(rng, (fan_out, fan_in), fan_in, fan_out)
            p[f"fc{i}.b"] = np.zeros(fan_out)
    else:  # smallcnn
        h, w, cin = spec.input_shape
        k, cc = spec.conv_kernel, spec.conv_channels
        p["conv.W"] = _glorot(rng, (k, k, cin, cc), k * k * cin, k * k * cc)
        p["conv.b"] = np.zeros(cc)
        flat = (h // 2) * (w // 2) * cc
        p["fc.W"] = _glorot(rng, (spec.num_classes, flat), flat, spec.num_classes)
        p["fc.b"] = np.zeros(spec.num_classes)
    return p


def _conv_same_forward(x, w, b):
    """Multi-channel same-padded correlation via an im2col matmul."""
    k = w.shape[0]
    pad = (k - 1) // 2
    h, ww_, cin = x.shape
    cout = w.shape[3]
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(0, 1))      # (h, w, cin, k, k)
    cols = win.transpose(0, 1, 3, 4, 2).reshape(h * ww_, k * k * cin)
    out = cols @ w.reshape(k * k * cin, cout) + b
    return out.reshape(h, ww_, cout), cols


def _conv_same_input_grad(dout, w, in_shape):
    k = w.shape[0]
    pad = (k - 1) // 2
    h, ww_, cin = in_shape
    cout = w.shape[3]
    dcols = dout.reshape(h * ww_, cout) @ w.reshape(k * k * cin, cout).T
    dwin = dcols.reshape(h, ww_, k, k, cin)
    dxp = np.zeros((h + 2 * pad, ww_ + 2 * pad, cin))
    for di in range(k):
        for dj in range(k):
            dxp[di:di + h, dj:dj + ww_, :] += dwin[:, :, di, dj, :]
    return dxp[pad:pad + h, pad:pad + ww_, :]


def _avgpool2(x):
    h, w, c = x.shape
    return x.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))


def _avgpool2_backward(d):
    return np.repeat(np.repeat(d, 2, axis=0), 2, axis=1) / 4.0


class Model:
    """A classifier: spec + parameters + the exact forward/backward rules."""

    def __init__(self, spec: ModelSpec, params: dict, name: str | None = None):
        self.spec = spec
        self.params = params
        self.name = name if name is not None else f"{spec.arch}-s{spec.seed}"

    @classmethod
    def initialize(cls, spec: ModelSpec, name: str | None = None) -> "Model":
        return cls(spec, init_params(spec), name)

    @property
    def input_shape(self):
        return self.spec.input_shape

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    # -- forward ---------------------------------------------------------

    def forward_with_cache(self, x: np.ndarray):
        if x.shape != self.spec.input_shape:
            raise ShapeMismatch(f"{x.shape} vs model input {self.spec.input_shape}")
        p = self.params
        if self.spec.arch == "logistic":
            a = x.reshape(-1)
            z = p["fc.W"] @ a + p["fc.b"]
            return z, (a,)
        if self.spec.arch == "mlp":
            a = x.reshape(-1)
            acts = [a]
            pres = []
            n_layers = len(self.spec.hidden) + 1
            for i in range(n_layers - 1):
                pre = p[f"fc{i}.W"] @ acts[-1] + p[f"fc{i}.b"]
                pres.append(pre)
                acts.append(np.maximum(pre, 0.0))
            z = p[f"fc{n_layers - 1}.W"] @ acts[-1] + p[f"fc{n_layers - 1}.b"]
            return z, (acts, pres)
        # smallcnn: conv -> relu -> avgpool 2x2 -> dense
        pre, cols = _conv_same_forward(x, p["conv.W"], p["conv.b"])
        act = np.maximum(pre, 0.0)
        pooled = _avgpool2(act)
        flat = pooled.reshape(-1)
        z = p["fc.W"] @ flat + p["fc.b"]
        return z, (pre, cols, flat)

    def logits(self, x: np.ndarray) -> np.ndarray:
        z, _ = self.forward_with_cache(x)
        return z

    def predict(self, x: np.ndarray) -> int:
        # ties resolve to the lowest class index (argmax semantics)
        return int(np.argmax(self.logits(x)))

    # -- backward --------------------------------------------------------

    def input_grad_from_dlogits(self, x, cache, dlogits) -> np.ndarray:
        p = self.params
        if self.spec.arch == "logistic":
            return (p["fc.W"].T @ dlogits).reshape(self.spec.input_shape)
        if self.spec.arch == "mlp":
            acts, pres = cache
            n_layers = len(self.spec.hidden) + 1
            da = p[f"fc{n_layers - 1}.W"].T @ dlogits
            for i in range(n_layers - 2, -1, -1):
                dpre = da * (pres[i] > 0.0)
                da = p[f"fc{i}.W"].T @ dpre
            return da.reshape(self.spec.input_shape)
        pre, _cols, _flat = cache
        h, w, _ = self.spec.input_shape
        dflat = p["fc.W"].T @ dlogits
        dpooled = dflat.reshape(h // 2, w // 2, self.spec.conv_channels)
        dact = _avgpool2_backward(dpooled)
        dpre = dact * (pre > 0.0)
        return _conv_same_input_grad(dpre, p["conv.W"], self.spec.input_shape)

    def param_grads_from_dlogits(self, x, cache, dlogits) -> dict:
        p = self.params
        g = {}
        if self.spec.arch == "logistic":
            (a,) = cache
            g["fc.W"] = np.outer(dlogits, a)
            g["fc.b"] = dlogits.copy()
            return g
        if self.spec.arch == "mlp":
            acts, pres = cache
            n_layers = len(self.spec.hidden) + 1
            d = dlogits
            for i in range(n_layers - 1, -1, -1):
                g[f"fc{i}.W"] = np.outer(d, acts[i])
                g[f"fc{i}.b"] = d.copy()
                if i > 0:
                    d = (p[f"fc{i}.W"].T @ d) * (pres[i - 1] > 0.0)
            return g
        pre, cols, flat = cache
        h, w, cin = self.spec.input_shape
        k, cc = self.spec.conv_kernel, self.spec.conv_channels
        g["fc.W"] = np.outer(dlogits, flat)
        g["fc.b"] = dlogits.copy()
        dflat = p["fc.W"].T @ dlogits
        dpooled = dflat.reshape(h // 2, w // 2, cc)
        dact = _avgpool2_backward(dpooled)
        dpre = dact * (pre > 0.0)
        g["conv.W"] = (cols.T @ dpre.reshape(h * w, cc)).reshape(k, k, cin, cc)
        g["conv.b"] = dpre.sum(axis=(0, 1))
        return g

    # -- loss ------------------------------------------------------------

    def loss_and_grad(self, x: np.ndarray, y: int):
        """Cross-entropy of softmax(logits) at label y, and d loss / d x."""
        dlogits, loss, cache = self._dlogits(x, y)
        return loss, self.input_grad_from_dlogits(x, cache, dlogits)

    def loss_and_param_grads(self, x: np.ndarray, y: int):
        dlogits, loss, cache = self._dlogits(x, y)
        return loss, self.param_grads_from_dlogits(x, cache, dlogits)

    def _dlogits(self, x, y):
        if not 0 <= y < self.spec.num_classes:
            raise LabelOutOfRange(f"label {y} outside [0, {self.spec.num_classes})")
        z, cache = self.forward_with_cache(x)
        zmax = z.max()
        lse = zmax + math.log(np.exp(z - zmax).sum())
        loss = lse - z[y]
        dlogits = np.exp(z - lse)   # softmax probabilities
        dlogits[y] -= 1.0
        return dlogits, float(loss), cache


class EnsembleOracle:
    """Linear logit fusion over same-shaped models; behaves like one Model."""

    def __init__(self, models, weights=None):
        if not models:
            raise EmptyDataset("ensemble needs at least one member")
        shape = models[0].input_shape
        classes = models[0].num_classes
        for m in models[1:]:
            if m.input_shape != shape:
                raise ShapeMismatch(f"{m.input_shape} vs {shape}")
            if m.num_classes != classes:
                raise ClassCountMismatch(f"{m.num_classes} vs {classes}")
        if weights is None:
            weights = np.full(len(models), 1.0 / len(models))
        else:
            weights = np.asarray(weights, dtype=float)
            if weights.shape != (len(models),):
                raise ShapeMismatch("one weight per member required")
            if abs(float(weights.sum()) - 1.0) > 1e-12:
                raise ValueError("ensemble weights must sum to 1")
        self.models = list(models)
        self.weights = weights
        self.name = "+".join(m.name for m in models)

    @property
    def input_shape(self):
        return self.models[0].input_shape

    @property
    def num_classes(self) -> int:
        return self.models[0].num_classes

    def logits(self, x: np.ndarray) -> np.ndarray:
        fused = self.weights[0] * self.models[0].logits(x)
        for wk, m in zip(self.weights[1:], self.models[1:]):
            fused = fused + wk * m.logits(x)
        return fused

    def predict(self, x: np.ndarray) -> int:
        return int(np.argmax(self.logits(x)))

    def loss_and_grad(self, x: np.ndarray, y: int):
        if not 0 <= y < self.num_classes:
            raise LabelOutOfRange(f"label {y} outside [0, {self.num_classes})")
        caches = []
        fused = None
        for wk, m in zip(self.weights, self.models):
            z, cache = m.forward_with_cache(x)
            caches.append(cache)
            fused = wk * z if fused is None else fused + wk * z
        zmax = fused.max()
        lse = zmax + math.log(np.exp(fused - zmax).sum())
        loss = float(lse - fused[y])
        dlogits = np.exp(fused - lse)
        dlogits[y] -= 1.0
        grad = None
        for wk, m, cache in zip(self.weights, self.models, caches):
            gk = m.input_grad_from_dlogits(x, cache, wk * dlogits)
            grad = gk if grad is None else grad + gk
        return loss, grad


# -- training --------------------------------------------------------------


def train_sgd(
    spec: ModelSpec,
    dataset: LabeledDataset,
    epochs: int = 8,
    lr: float = 0.5,
    batch: int = 32,
    seed: int = 0,
    name: str | None = None,
):
    """Minibatch SGD on mean cross-entropy. Returns (model, train_accuracy).

    Initialization comes from spec.seed; the shuffle order comes from the
    seed argument, so the same (spec, dataset, seed) is bit-reproducible.
    epochs=0 returns the freshly initialized model untouched.
    """
    if len(dataset) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    model = Model.initialize(spec, name)
    params = {k: v.copy() for k, v in model.params.items()}
    model.params = params
    rng = derive_rng(seed, 1)
    n = len(dataset)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            grads = None
            for i in idx:
                _, g = model.loss_and_param_grads(dataset.images[i], dataset.labels[i])
                if grads is None:
                    grads = g
                else:
                    for k in grads:
                        grads[k] += g[k]
            scale = lr / len(idx)
            for k in params:
                params[k] -= scale * grads[k]
    correct = sum(
        model.predict(img) == y for img, y in zip(dataset.images, dataset.labels)
    )
    return model, correct / n


def accuracy(oracle, dataset: LabeledDataset) -> float:
    if len(dataset) == 0:
        raise EmptyDataset("cannot score an empty dataset")
    correct = sum(
        oracle.predict(img) == y for img, y in zip(dataset.images, dataset.labels)
    )
    return correct / len(dataset)


# -- gradient verification ---------------------------------------------------


def grad_check(oracle, x, y, h: float = 1e-5, coords: int = 64, seed: int = 0) -> float:
    """Central-difference check of d loss / d x on a sampled coordinate set.

    Returns max_i |fd_i - g_i| / max(scale, 1e-12) where scale is the largest
    gradient magnitude seen on the sampled coordinates. Smaller h (down to
    ~1e-6) must not make a correct gradient look worse.
    """
    _, g = oracle.loss_and_grad(x, y)
    flat_g = g.reshape(-1)
    size = x.size
    n = size if size <= coords else max(coords, 64)
    if n < size:
        rng = make_rng(seed)
        picks = rng.choice(size, size=n, replace=False)
    else:
        picks = np.arange(size)
    worst = 0.0
    scale = 1e-12
    base = x.reshape(-1)
    for i in picks:
        bumped = base.copy()
        bumped[i] = base[i] + h
        lo_plus, _ = _loss_only(oracle, bumped.reshape(x.shape), y)
        bumped[i] = base[i] - h
        lo_minus, _ = _loss_only(oracle, bumped.reshape(x.shape), y)
        fd = (lo_plus - lo_minus) / (2.0 * h)
        worst = max(worst, abs(fd - flat_g[i]))
        scale = max(scale, abs(flat_g[i]), abs(fd))
    return worst / scale


def _loss_only(oracle, x, y):
    loss, _ = oracle.loss_and_grad(x, y)
    return loss, None


# -- persistence -------------------------------------------------------------


def save_model(model: Model, path: str) -> None:
    """Single-file JSON manifest. save -> load -> save is byte-identical."""
    doc = {
        "format": _MODEL_FORMAT,
        "version": _MODEL_VERSION,
        "name": model.name,
        "spec": {
            "arch": model.spec.arch,
            "input_shape": list(model.spec.input_shape),
            "num_classes": model.spec.num_classes,
            "hidden": list(model.spec.hidden),
            "conv_channels": model.spec.conv_channels,
            "conv_kernel": model.spec.conv_kernel,
            "seed": model.spec.seed,
        },
        "params": {
            k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
            for k, v in model.params.items()
        },
    }
    atomic_write_text(path, json.dumps(doc, sort_keys=True, allow_nan=False))


def load_model(path: str) -> Model:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != _MODEL_FORMAT:
        raise CorruptFile(f"{path} is not a model manifest")
    if doc.get("version") != _MODEL_VERSION:
        raise VersionMismatch(f"model format version {doc.get('version')!r}")
    try:
        s = doc["spec"]
        spec = ModelSpec(
            arch=s["arch"],
            input_shape=tuple(s["input_shape"]),
            num_classes=s["num_classes"],
            hidden=tuple(s["hidden"]),
            conv_channels=s["conv_channels"],
            conv_kernel=s["conv_kernel"],
            seed=s["seed"],
        )
        params = {
            k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
            for k, v in doc["params"].items()
        }
        name = doc["name"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    expected = init_params(spec)
    if set(params) != set(expected):
        raise CorruptFile(f"{path}: parameter names {sorted(params)} do not match arch")
    for k, v in expected.items():
        if params[k].shape != v.shape:
            raise CorruptFile(f"{path}: {k} has shape {params[k].shape}, want {v.shape}")
    return Model(spec, params, name)
