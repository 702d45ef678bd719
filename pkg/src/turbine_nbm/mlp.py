"""Multi-target MLP with batch normalisation, trained with Adam on the SSR loss.

Hidden layer: affine -> batch norm (optional) -> activation. The output
layer is affine only. A batch-normalised layer carries no affine bias of its
own since the batch-norm shift ``beta`` absorbs it.

Parameters live in a flat dict keyed ``W{l}``, ``b{l}``, ``gamma{l}``,
``beta{l}`` (trainable) and ``mean{l}``, ``var{l}`` (running statistics).
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .metrics import global_rmse
from .model_core import ModelFormatError, ModelMetadata, Regressor, register_family

ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass(frozen=True)
class MlpArchitecture:
    widths: tuple  # (k, hidden..., n)
    activation: str = "relu"
    batch_norm: tuple = ()  # one flag per hidden layer; () means all on

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 3:
            raise ValueError("need an input width, at least one hidden layer and an output width")
        if min(widths) < 1:
            raise ValueError("layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        bn = tuple(bool(b) for b in self.batch_norm) or (True,) * (len(widths) - 2)
        if len(bn) != len(widths) - 2:
            raise ValueError("batch_norm needs one flag per hidden layer")
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "batch_norm", bn)

    @property
    def n_hidden(self):
        return len(self.widths) - 2

    @property
    def n_layers(self):
        return len(self.widths) - 1

    def param_names(self):
        """Trainable parameter keys in canonical order."""
        names = []
        for l in range(self.n_layers):
            bn = l < self.n_hidden and self.batch_norm[l]
            names.append(f"W{l}")
            names += [f"gamma{l}", f"beta{l}"] if bn else [f"b{l}"]
        return names

    @classmethod
    def default(cls, k=2, n=4, single_target=False):
        hidden = (17, 14, 17) if single_target else (17, 8, 17)
        return cls((k, *hidden, n))


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm needs a batch variance)")
        if self.patience < 1 or self.max_epochs < 1:
            raise ValueError("patience and max_epochs must be >= 1")


def init_params(arch: MlpArchitecture, rng) -> dict:
    """He-normal weights, zero biases, gamma 1, beta 0, running stats (0, 1)."""
    p = {}
    for l in range(arch.n_layers):
        fan_in, fan_out = arch.widths[l], arch.widths[l + 1]
        p[f"W{l}"] = rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)
        if l < arch.n_hidden and arch.batch_norm[l]:
            p[f"gamma{l}"] = np.ones(fan_out)
            p[f"beta{l}"] = np.zeros(fan_out)
            p[f"mean{l}"] = np.zeros(fan_out)
            p[f"var{l}"] = np.ones(fan_out)
        else:
            p[f"b{l}"] = np.zeros(fan_out)
    return p


def loss_ssr(pred, obs) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if pred.shape != obs.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {obs.shape}")
    return float(((pred - obs) ** 2).sum())


def batchnorm_forward(z, gamma, beta, mode="train", running_mean=None, running_var=None,
                      momentum=0.9, eps=1e-5):
    """Returns ``(out, cache, new_running_mean, new_running_var)``.

    Train mode standardises by the batch mean and (biased) variance and
    updates the running statistics, using the unbiased variance for the
    running estimate. Infer mode standardises by the running statistics.
    """
    z = np.asarray(z, dtype=np.float64)
    if mode == "train":
        B = z.shape[0]
        if B < 2:
            raise ValueError("batch norm in train mode needs at least 2 rows")
        mu = z.mean(axis=0)
        var = ((z - mu) ** 2).mean(axis=0)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (z - mu) * inv_std
        if running_mean is not None:
            running_mean = momentum * running_mean + (1.0 - momentum) * mu
            running_var = momentum * running_var + (1.0 - momentum) * var * (B / (B - 1))
        return gamma * xhat + beta, (xhat, inv_std, gamma), running_mean, running_var
    if mode == "infer":
        xhat = (z - running_mean) / np.sqrt(running_var + eps)
        return gamma * xhat + beta, None, running_mean, running_var
    raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")


def _batchnorm_backward(dy, cache):
    xhat, inv_std, gamma = cache
    B = dy.shape[0]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dz = inv_std / B * (B * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dz, dgamma, dbeta


def _activate(y, kind):
    if kind == "relu":
        return np.maximum(y, 0.0)
    if kind == "tanh":
        return np.tanh(y)
    return y


def _activate_grad(da, y, a, kind):
    if kind == "relu":
        return da * (y > 0)
    if kind == "tanh":
        return da * (1.0 - a * a)
    return da


def forward(params, arch: MlpArchitecture, X, mode="infer", momentum=0.9, eps=1e-5):
    """Run the network. Returns ``(output, caches, running_updates)``.

    ``running_updates`` maps ``mean{l}``/``var{l}`` to their new values in
    train mode; ``params`` is never modified.
    """
    a = np.asarray(X, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != arch.widths[0]:
        raise ValueError(f"input width mismatch: expected {arch.widths[0]}, got shape {a.shape}")
    caches, updates = [], {}
    for l in range(arch.n_hidden):
        z = a @ params[f"W{l}"]
        bn_cache = None
        if arch.batch_norm[l]:
            y, bn_cache, rm, rv = batchnorm_forward(
                z, params[f"gamma{l}"], params[f"beta{l}"], mode,
                params[f"mean{l}"], params[f"var{l}"], momentum, eps,
            )
            if mode == "train":
                updates[f"mean{l}"], updates[f"var{l}"] = rm, rv
        else:
            y = z + params[f"b{l}"]
        out = _activate(y, arch.activation)
        caches.append((a, y, out, bn_cache))
        a = out
    L = arch.n_layers - 1
    caches.append((a, None, None, None))
    return a @ params[f"W{L}"] + params[f"b{L}"], caches, updates


def backward(params, arch: MlpArchitecture, caches, dout) -> dict:
    """Gradients of the loss w.r.t. every trainable parameter, given dL/d(output)."""
    grads = {}
    L = arch.n_layers - 1
    a_in = caches[L][0]
    grads[f"W{L}"] = a_in.T @ dout
    grads[f"b{L}"] = dout.sum(axis=0)
    da = dout @ params[f"W{L}"].T
    for l in range(arch.n_hidden - 1, -1, -1):
        a_in, y, a_out, bn_cache = caches[l]
        dy = _activate_grad(da, y, a_out, arch.activation)
        if arch.batch_norm[l]:
            dz, grads[f"gamma{l}"], grads[f"beta{l}"] = _batchnorm_backward(dy, bn_cache)
        else:
            dz = dy
            grads[f"b{l}"] = dz.sum(axis=0)
        grads[f"W{l}"] = a_in.T @ dz
        if l > 0:
            da = dz @ params[f"W{l}"].T
    return grads


def loss_and_grads(params, arch, X, Y, momentum=0.9, eps=1e-5):
    pred, caches, updates = forward(params, arch, X, "train", momentum, eps)
    resid = pred - Y
    return float((resid**2).sum()), backward(params, arch, caches, 2.0 * resid), updates


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict, grads: dict, state: AdamState):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    t = state.t + 1
    new_p, new_m, new_v = dict(params), {}, {}
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for key, g in grads.items():
        m = state.m.get(key, np.zeros_like(g))
        v = state.v.get(key, np.zeros_like(g))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        new_p[key] = params[key] - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[key], new_v[key] = m, v
    return new_p, replace(state, m=new_m, v=new_v, t=t)


@register_family
class MlpModel(Regressor):
    family = "mlp"

    def __init__(self, arch: MlpArchitecture, params: dict, bn_eps=1e-5, metadata=None, history=None):
        super().__init__(arch.widths[0], arch.widths[-1], metadata)
        self.arch = arch
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        for v in self.params.values():
            v.flags.writeable = False
        self.bn_eps = float(bn_eps)
        self.history = history or {}

    def _predict(self, X):
        return forward(self.params, self.arch, X, "infer", eps=self.bn_eps)[0]

    def _array_order(self):
        keys = []
        for l in range(self.arch.n_layers):
            keys.append(f"W{l}")
            if l < self.arch.n_hidden and self.arch.batch_norm[l]:
                keys += [f"gamma{l}", f"beta{l}", f"mean{l}", f"var{l}"]
            else:
                keys.append(f"b{l}")
        return keys

    def _write_payload(self, w):
        w.u32(len(self.arch.widths))
        for width in self.arch.widths:
            w.u32(width)
        w.text(self.arch.activation)
        for flag in self.arch.batch_norm:
            w.u8(1 if flag else 0)
        w.f64(self.bn_eps)
        for key in self._array_order():
            w.array(self.params[key])

    @classmethod
    def _read_payload(cls, r, meta, k, n):
        count = r.u32()
        if count < 3 or count > 1024:
            raise ModelFormatError(f"implausible layer count {count}", r.offset - 4)
        widths = tuple(r.u32() for _ in range(count))
        activation = r.text()
        bn = tuple(bool(r.u8()) for _ in range(count - 2))
        try:
            arch = MlpArchitecture(widths, activation, bn)
        except ValueError as exc:
            raise ModelFormatError(f"bad architecture: {exc}", r.offset) from None
        bn_eps = r.f64()
        params = {}
        for l in range(arch.n_layers):
            params[f"W{l}"] = r.array(widths[l], widths[l + 1])
            if l < arch.n_hidden and arch.batch_norm[l]:
                for key in ("gamma", "beta", "mean", "var"):
                    params[f"{key}{l}"] = r.array(widths[l + 1])
            else:
                params[f"b{l}"] = r.array(widths[l + 1])
        return cls(arch, params, bn_eps, meta)


def train_mlp(X_train, Y_train, X_val, Y_val, arch: MlpArchitecture | None = None,
              config: TrainConfig = TrainConfig()) -> MlpModel:
    """Minibatch Adam on the SSR loss with best-validation early stopping."""
    X_train = np.asarray(X_train, dtype=np.float64)
    Y_train = np.asarray(Y_train, dtype=np.float64)
    if Y_train.ndim == 1:
        Y_train = Y_train[:, None]
    Y_val = np.asarray(Y_val, dtype=np.float64)
    if Y_val.ndim == 1:
        Y_val = Y_val[:, None]
    if arch is None:
        arch = MlpArchitecture.default(X_train.shape[1], Y_train.shape[1], Y_train.shape[1] == 1)
    if arch.widths[0] != X_train.shape[1] or arch.widths[-1] != Y_train.shape[1]:
        raise ValueError(f"architecture {arch.widths} does not match data widths")
    m = X_train.shape[0]
    if config.batch_size > m:
        raise ValueError(f"batch_size {config.batch_size} exceeds {m} training rows")

    rng = np.random.default_rng(config.seed)
    params = init_params(arch, rng)
    state = AdamState(lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2,
                      eps=config.adam_eps)

    def infer(p, X):
        return forward(p, arch, X, "infer", eps=config.bn_eps)[0]

    history = {"train_loss": [loss_ssr(infer(params, X_train), Y_train) / m], "val_rmse": [],
               "best_val_rmse": []}
    best, best_rmse, best_epoch, stale = copy.deepcopy(params), math.inf, 0, 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(m)
        for start in range(0, m, config.batch_size):
            idx = order[start:start + config.batch_size]
            if idx.size < 2:
                continue
            _, grads, updates = loss_and_grads(params, arch, X_train[idx], Y_train[idx],
                                               config.bn_momentum, config.bn_eps)
            params, state = adam_step(params, grads, state)
            params.update(updates)
        history["train_loss"].append(loss_ssr(infer(params, X_train), Y_train) / m)
        rmse = global_rmse(infer(params, X_val), Y_val)
        history["val_rmse"].append(rmse)
        if rmse < best_rmse:
            best, best_rmse, best_epoch, stale = copy.deepcopy(params), rmse, epoch, 0
        else:
            stale += 1
        history["best_val_rmse"].append(best_rmse)
        if stale >= config.patience:
            break
    history["epochs_run"] = epoch
    history["best_epoch"] = best_epoch

    hp = {
        "widths": arch.widths, "activation": arch.activation, "batch_norm": arch.batch_norm,
        "batch_size": config.batch_size, "max_epochs": config.max_epochs,
        "patience": config.patience, "learning_rate": config.learning_rate,
    }
    meta = ModelMetadata("mlp", hp, seed=config.seed)
    return MlpModel(arch, best, config.bn_eps, meta, history)


def gradient_check(arch: MlpArchitecture, seed: int = 0, batch: int = 8, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Parameters are randomised (including biases, gamma and beta) and the loss
    is the SSR of a train-mode forward pass on a random batch.

    Gradients that are exactly zero by construction (a shift feeding straight
    into a batch-norm layer) cannot meet a relative tolerance, since the
    finite difference only sees rounding noise there. The offsets added to
    biases, gamma and beta are kept small so that ReLU units straddle zero
    and such shifts do not arise.
    """
    rng = np.random.default_rng(seed)
    params = init_params(arch, rng)
    for key in arch.param_names():
        if not key.startswith("W"):
            params[key] = params[key] + rng.normal(0.0, 0.1, params[key].shape)
    X = rng.standard_normal((batch, arch.widths[0]))
    Y = rng.standard_normal((batch, arch.widths[-1]))

    def loss(p):
        return loss_ssr(forward(p, arch, X, "train")[0], Y)

    _, grads, _ = loss_and_grads(params, arch, X, Y)
    worst = 0.0
    for key in arch.param_names():
        base = params[key]
        for i in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[i] += step
            minus[i] -= step
            num = (loss({**params, key: plus}) - loss({**params, key: minus})) / (2.0 * step)
            ana = grads[key][i]
            err = abs(ana - num) / max(1e-8, abs(ana) + abs(num))
            worst = max(worst, err)
    return worst
