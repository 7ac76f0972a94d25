"""Fully connected network with hand-written backpropagation and Adam.

Default layer stack (hidden widths and dropout rates)::

    flatten -> 144 relu -> drop 0.2 -> 1808 relu -> drop 0.4 -> 272 relu
            -> drop 0.4 -> 240 relu -> 80 relu -> 2*Nx0*Ny0*L linear -> reshape
"""

from __future__ import annotations

import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

logger = logging.getLogger(__name__)

HIDDEN = (144, 1808, 272, 240, 80)
DROPOUT = (0.2, 0.4, 0.4, 0.0, 0.0)
CHECKPOINT_MAGIC = b"BSCM1"


class NonFiniteGradientError(FloatingPointError):
    pass


class MlpModel:
    """Dense ReLU network mapping ``input_shape`` to ``output_shape``.

    ``dropout[i]`` is applied after hidden layer ``i`` (inverted scaling, so
    inference needs no rescaling).
    """

    def __init__(self, input_shape, output_shape, hidden=HIDDEN, dropout=DROPOUT, seed=0,
                 dtype=np.float32):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.output_shape = tuple(int(s) for s in output_shape)
        self.hidden = tuple(int(h) for h in hidden)
        dropout = tuple(float(d) for d in dropout) + (0.0,) * (len(self.hidden) - len(dropout))
        self.dropout = dropout[: len(self.hidden)]
        if any(not 0 <= d < 1 for d in self.dropout):
            raise ValueError("dropout rates must lie in [0, 1)")
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        sizes = [self.n_in] + list(self.hidden) + [self.n_out]
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x1E17]))
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)
            self.weights.append(w.astype(self.dtype))
            self.biases.append(np.zeros(fan_out, dtype=self.dtype))
        self.adam = AdamState.zeros_like(self.params())

    @property
    def n_in(self):
        return int(np.prod(self.input_shape))

    @property
    def n_out(self):
        return int(np.prod(self.output_shape))

    def layer_spec(self):
        """Human-readable layer list, used in checkpoints."""
        spec = [{"type": "flatten", "out": self.n_in}]
        for h, d in zip(self.hidden, self.dropout):
            spec.append({"type": "dense", "units": h, "activation": "relu"})
            if d > 0:
                spec.append({"type": "dropout", "rate": d})
        spec.append({"type": "dense", "units": self.n_out, "activation": "linear"})
        spec.append({"type": "reshape", "shape": list(self.output_shape)})
        return spec

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def param_names(self):
        names = []
        for i in range(len(self.weights)):
            names.extend([f"dense{i}.weight", f"dense{i}.bias"])
        return names

    def n_params(self):
        return sum(p.size for p in self.params())

    def copy(self):
        other = MlpModel.__new__(MlpModel)
        other.__dict__.update(self.__dict__)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        other.adam = self.adam.copy()
        return other

    # forward / backward -------------------------------------------------

    def _check_input(self, x):
        x = np.asarray(x)
        if x.shape[1:] != self.input_shape:
            if x.shape == self.input_shape:
                x = x[None]
            else:
                raise ValueError(f"input shape {x.shape} does not match model input {self.input_shape}")
        return x.reshape(x.shape[0], -1).astype(self.dtype, copy=False)

    def forward(self, x, training=False, seed=None, return_cache=False):
        """Batch prediction of shape ``[B, *output_shape]``.

        With ``training=True`` dropout masks are drawn from ``seed``; the
        result is deterministic given weights, seed and flag.
        """
        a = self._check_input(x)
        rng = np.random.default_rng(seed) if training else None
        cache = [a]
        masks = []
        n_hidden = len(self.hidden)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            if i < n_hidden:
                a = np.maximum(z, 0)
                rate = self.dropout[i]
                mask = None
                if training and rate > 0:
                    keep = 1.0 - rate
                    mask = (rng.random(a.shape) < keep).astype(self.dtype) / self.dtype.type(keep)
                    a = a * mask
                masks.append(mask)
            else:
                a = z
            cache.append(a)
        out = a.reshape((a.shape[0],) + self.output_shape)
        if return_cache:
            return out, (cache, masks)
        return out

    def backward(self, grad_out, cache):
        """Gradients of all parameters given ``dL/d(output)``."""
        acts, masks = cache
        g = grad_out.reshape(grad_out.shape[0], -1).astype(self.dtype, copy=False)
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        n_hidden = len(self.hidden)
        for i in reversed(range(len(self.weights))):
            if i < n_hidden:
                if masks[i] is not None:
                    g = g * masks[i]
                g = g * (acts[i + 1] > 0)
            grads_w[i] = acts[i].T @ g
            grads_b[i] = g.sum(axis=0)
            if not (np.all(np.isfinite(grads_w[i])) and np.all(np.isfinite(grads_b[i]))):
                raise NonFiniteGradientError(f"non-finite gradient in dense layer {i}")
            if i > 0:
                g = g @ self.weights[i].T
        out = []
        for gw, gb in zip(grads_w, grads_b):
            out.extend([gw, gb])
        return out

    # persistence --------------------------------------------------------

    def save(self, path, extra=None):
        """Checkpoint: magic, uint32 header length, JSON header, little-endian weights."""
        header = {
            "input_shape": list(self.input_shape),
            "output_shape": list(self.output_shape),
            "hidden": list(self.hidden),
            "dropout": list(self.dropout),
            "seed": self.seed,
            "dtype": self.dtype.str.lstrip("<>|="),
            "layers": self.layer_spec(),
            "tensors": [{"name": n, "shape": list(p.shape)} for n, p in zip(self.param_names(), self.params())],
            "adam_step": int(self.adam.step),
            "extra": extra or {},
        }
        blob = json.dumps(header, sort_keys=True).encode()
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        buf.write(struct.pack("<I", len(blob)))
        buf.write(blob)
        le = self.dtype.newbyteorder("<")
        for p in self.params():
            buf.write(p.astype(le, copy=False).tobytes())
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        (hlen,) = struct.unpack_from("<I", raw, len(CHECKPOINT_MAGIC))
        start = len(CHECKPOINT_MAGIC) + 4
        header = json.loads(raw[start:start + hlen])
        dtype = np.dtype(header["dtype"]).newbyteorder("<")
        model = cls(header["input_shape"], header["output_shape"], header["hidden"],
                    header["dropout"], header["seed"], np.dtype(header["dtype"]))
        offset = start + hlen
        params = []
        for t in header["tensors"]:
            n = int(np.prod(t["shape"]))
            nbytes = n * dtype.itemsize
            if offset + nbytes > len(raw):
                raise ValueError(f"{path}: truncated checkpoint")
            arr = np.frombuffer(raw, dtype=dtype, count=n, offset=offset).reshape(t["shape"])
            params.append(arr.astype(model.dtype))
            offset += nbytes
        if offset != len(raw):
            raise ValueError(f"{path}: trailing bytes in checkpoint")
        model.weights = params[0::2]
        model.biases = params[1::2]
        model.adam = AdamState.zeros_like(model.params())
        model.adam.step = header.get("adam_step", 0)
        model.checkpoint_extra = header.get("extra", {})
        return model


def cosine_loss(pred, target, mode="per_beam", return_grad=False):
    """Cosine distance between predicted and target beamspace tensors.

    Both are ``[B, Nx0, Ny0, 2L]`` (or a single sample) with channel ``i`` the
    real and ``L + i`` the imaginary part of beam ``i``.  With
    ``mode="per_beam"`` each beam's real vector is compared separately and the
    distances are averaged over beams and samples; ``mode="global"`` compares
    the whole flattened sample.  The result lies in ``[0, 2]``.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    single = pred.ndim == 3
    if single:
        pred, target = pred[None], target[None]
    b, nx, ny, c = pred.shape
    if mode == "per_beam":
        l_max = c // 2

        def vec(x):
            re = x[..., :l_max].reshape(b, nx * ny, l_max)
            im = x[..., l_max:].reshape(b, nx * ny, l_max)
            return np.concatenate([re, im], axis=1)            # [B, 2*nx*ny, L]
    elif mode == "global":
        def vec(x):
            return x.reshape(b, -1, 1)
    else:
        raise ValueError(f"unknown loss mode {mode!r}")
    p, t = vec(pred), vec(target)
    pn = np.linalg.norm(p, axis=1)
    tn = np.linalg.norm(t, axis=1)
    if np.any(pn == 0) or np.any(tn == 0):
        raise ValueError("cosine distance undefined for a zero-norm vector")
    dot = np.sum(p * t, axis=1)
    cos = dot / (pn * tn)
    loss = float(np.mean(1.0 - cos))
    if not return_grad:
        return loss
    n_terms = cos.size
    g = -(t / (pn * tn)[:, None, :] - dot[:, None, :] * p / (pn ** 3 * tn)[:, None, :]) / n_terms
    if mode == "per_beam":
        half = nx * ny
        l_max = c // 2
        grad = np.concatenate([g[:, :half].reshape(b, nx, ny, l_max),
                               g[:, half:].reshape(b, nx, ny, l_max)], axis=-1)
    else:
        grad = g.reshape(b, nx, ny, c)
    if single:
        grad = grad[0]
    return loss, grad.astype(pred.dtype, copy=False)


@dataclass
class TrainConfig:
    """Optimizer and schedule settings.

    ``decay_steps`` is the cosine-decay horizon; ``None`` uses the step count
    implied by ``max_epochs``.
    """

    learning_rate: float = 1e-3
    decay_steps: int | None = None
    patience: int = 10
    batch_size: int = 32
    max_epochs: int = 100
    dropout: bool = True
    seed: int = 0
    loss_mode: str = "per_beam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 0:
            raise ValueError("batch_size >= 1, max_epochs >= 0 and patience >= 0 required")
        if self.decay_steps is not None and self.decay_steps < 1:
            raise ValueError("decay_steps must be positive")

    def to_dict(self):
        return asdict(self)


def cosine_lr(base_lr, step, horizon):
    """``base_lr * (1 + cos(pi * min(step, horizon) / horizon)) / 2``; zero at the horizon."""
    frac = min(step, horizon) / horizon
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * frac))


class AdamState:
    def __init__(self, m, v, step=0):
        self.m = m
        self.v = v
        self.step = step

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])

    def copy(self):
        return AdamState([m.copy() for m in self.m], [v.copy() for v in self.v], self.step)


def adam_update(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam step with bias correction; increments ``state.step``."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)


def backward_and_step(model, x, y, cfg, lr, seed):
    """One optimizer step on a batch; returns the (pre-update) training loss."""
    pred, cache = model.forward(x, training=cfg.dropout, seed=seed, return_cache=True)
    loss, grad = cosine_loss(pred, y.astype(pred.dtype, copy=False), cfg.loss_mode, return_grad=True)
    grads = model.backward(grad, cache)
    adam_update(model.params(), grads, model.adam, lr, cfg.beta1, cfg.beta2, cfg.eps)
    return loss


def evaluate_loss(model, x, y, mode="per_beam", batch_size=256):
    total, n = 0.0, len(x)
    for s in range(0, n, batch_size):
        pred = model.forward(x[s:s + batch_size])
        total += cosine_loss(pred, y[s:s + batch_size].astype(pred.dtype), mode) * len(pred)
    return total / n


@dataclass
class History:
    rows: list

    def to_csv(self, path=None):
        lines = ["step,lr,train_loss,val_loss"]
        for r in self.rows:
            lines.append(f"{r['step']},{r['lr']!r},{r['train_loss']!r},{r['val_loss']!r}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def train(model, x_train, y_train, x_val, y_val, cfg, max_steps=None, step_offset=0, horizon=None):
    """Mini-batch Adam with cosine decay and early stopping on validation loss.

    Training stops after ``cfg.patience`` epochs without validation
    improvement (``patience=0``: at the first non-improving epoch), after
    ``cfg.max_epochs`` or after ``max_steps`` optimizer steps; the best
    weights are restored.  Returns the model and a :class:`History`.
    """
    n = len(x_train)
    if n == 0 or len(x_val) == 0:
        raise ValueError("training and validation splits must be non-empty")
    batches_per_epoch = math.ceil(n / cfg.batch_size)
    if horizon is None:
        horizon = cfg.decay_steps or max(1, cfg.max_epochs * batches_per_epoch)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7A1]))
    best_loss = evaluate_loss(model, x_val, y_val, cfg.loss_mode)
    best = model.copy()
    rows = [{"step": step_offset, "lr": cosine_lr(cfg.learning_rate, 0, horizon),
             "train_loss": float("nan"), "val_loss": best_loss}]
    stale = 0
    steps = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        losses = []
        for s in range(0, n, cfg.batch_size):
            if max_steps is not None and steps >= max_steps:
                break
            idx = order[s:s + cfg.batch_size]
            lr = cosine_lr(cfg.learning_rate, steps, horizon)
            drop_seed = [cfg.seed, epoch, s]
            losses.append(backward_and_step(model, x_train[idx], y_train[idx], cfg, lr, drop_seed))
            steps += 1
        if not losses:
            break
        val = evaluate_loss(model, x_val, y_val, cfg.loss_mode)
        rows.append({"step": step_offset + steps, "lr": cosine_lr(cfg.learning_rate, steps, horizon),
                     "train_loss": float(np.mean(losses)), "val_loss": val})
        logger.debug("epoch %d step %d train %.4f val %.4f", epoch, steps, rows[-1]["train_loss"], val)
        if val < best_loss:
            best_loss, best, stale = val, model.copy(), 0
        else:
            stale += 1
            if stale > cfg.patience:
                break
        if max_steps is not None and steps >= max_steps:
            break
    best.steps_taken = steps
    return best, History(rows)
