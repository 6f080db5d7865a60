"""Neural building blocks and optimization, on torch float64 tensors.

torch supplies the array arithmetic and reverse-mode differentiation; the
layer semantics, optimizer schedule, and checkpoint container are defined
here. All randomness is drawn from an explicitly threaded numpy Generator so
runs are reproducible and resumable bit-for-bit.
"""

from __future__ import annotations

import json
from collections import OrderedDict

import numpy as np
import torch
import torch.nn.functional as F

from . import tquat

DTYPE = torch.float64

CHECKPOINT_MAGIC = b"QNCKPT 1\n"


class ShapeMismatch(ValueError):
    pass


class NonFiniteGradient(RuntimeError):
    def __init__(self, name):
        self.param = name
        super().__init__(f"non-finite gradient in parameter {name!r}")


class NonFiniteLoss(RuntimeError):
    pass


class ParamStore:
    """Ordered named parameters with accumulated gradients."""

    def __init__(self):
        self._params = OrderedDict()

    def add(self, name, array):
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = torch.tensor(np.asarray(array, dtype=np.float64), dtype=DTYPE, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def grads(self):
        """Gradient per parameter; parameters the loss never touched get zeros."""
        out = OrderedDict()
        for name, p in self._params.items():
            out[name] = p.grad if p.grad is not None else torch.zeros_like(p)
        return out

    def load_values(self, arrays):
        for name, p in self._params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint is missing parameter {name!r}")
            value = torch.tensor(arrays[name], dtype=DTYPE)
            if value.shape != p.shape:
                raise ShapeMismatch(f"{name}: checkpoint {tuple(value.shape)} vs model {tuple(p.shape)}")
            with torch.no_grad():
                p.copy_(value)

    def to_arrays(self):
        return OrderedDict((n, p.detach().numpy().copy()) for n, p in self._params.items())


def backward(loss):
    """Reverse-mode pass from a scalar loss; gradients accumulate until zero_grad."""
    if loss.ndim != 0:
        raise ShapeMismatch("loss must be a scalar")
    loss.backward()


def uniform_init(rng, shape, fan_in):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense:
    """Affine layer with linear or leaky-ReLU activation."""

    def __init__(self, store, prefix, in_size, out_size, rng, activation="linear", leak=0.05):
        if activation not in ("linear", "leaky_relu"):
            raise ValueError(f"unknown activation {activation!r}")
        self.in_size = in_size
        self.out_size = out_size
        self.activation = activation
        self.leak = leak
        self.w = store.add(f"{prefix}.w", uniform_init(rng, (in_size, out_size), in_size))
        self.b = store.add(f"{prefix}.b", np.zeros(out_size))

    def __call__(self, x):
        if x.shape[-1] != self.in_size:
            raise ShapeMismatch(f"dense input {x.shape[-1]} != {self.in_size}")
        y = x @ self.w + self.b
        if self.activation == "leaky_relu":
            y = F.leaky_relu(y, negative_slope=self.leak)
        return y


class GruLayer:
    """Single GRU layer with a learned initial hidden state.

    Gate equations (reset applied to the hidden state before the recurrent
    matmul):
        z  = sigma(x Wz + h Uz + bz)
        r  = sigma(x Wr + h Ur + br)
        hc = tanh(x Wh + (r*h) Uh + bh)
        h' = (1 - z) * h + z * hc
    """

    def __init__(self, store, prefix, input_size, hidden_size, rng):
        self.input_size = input_size
        self.hidden_size = hidden_size
        p = prefix
        add = store.add
        self.wz = add(f"{p}.wz", uniform_init(rng, (input_size, hidden_size), input_size))
        self.uz = add(f"{p}.uz", uniform_init(rng, (hidden_size, hidden_size), hidden_size))
        self.bz = add(f"{p}.bz", np.zeros(hidden_size))
        self.wr = add(f"{p}.wr", uniform_init(rng, (input_size, hidden_size), input_size))
        self.ur = add(f"{p}.ur", uniform_init(rng, (hidden_size, hidden_size), hidden_size))
        self.br = add(f"{p}.br", np.zeros(hidden_size))
        self.wh = add(f"{p}.wh", uniform_init(rng, (input_size, hidden_size), input_size))
        self.uh = add(f"{p}.uh", uniform_init(rng, (hidden_size, hidden_size), hidden_size))
        self.bh = add(f"{p}.bh", np.zeros(hidden_size))
        self.h0 = add(f"{p}.h0", np.zeros(hidden_size))

    def initial_state(self, batch):
        return self.h0.unsqueeze(0).expand(batch, self.hidden_size)

    def step(self, x, h):
        if x.shape[-1] != self.input_size:
            raise ShapeMismatch(f"gru input {x.shape[-1]} != {self.input_size}")
        if h.shape[-1] != self.hidden_size:
            raise ShapeMismatch(f"gru state {h.shape[-1]} != {self.hidden_size}")
        z = torch.sigmoid(x @ self.wz + h @ self.uz + self.bz)
        r = torch.sigmoid(x @ self.wr + h @ self.ur + self.br)
        hc = torch.tanh(x @ self.wh + (r * h) @ self.uh + self.bh)
        return (1.0 - z) * h + z * hc


class GruStack:
    def __init__(self, store, prefix, input_size, hidden_size, layers, rng):
        sizes = [input_size] + [hidden_size] * layers
        self.layers = [
            GruLayer(store, f"{prefix}.l{i}", sizes[i], sizes[i + 1], rng) for i in range(layers)
        ]

    def initial_state(self, batch):
        return [l.initial_state(batch) for l in self.layers]

    def step(self, x, states):
        new_states = []
        h = x
        for layer, s in zip(self.layers, states):
            h = layer.step(h, s)
            new_states.append(h)
        return h, new_states


def normalization_layer(raw):
    """Per-quaternion unit normalization with gradient flow.

    Returns (unit quaternions, raw input); the raw tensor is what the norm
    penalty must see, since the penalty regularizes pre-normalization outputs.
    """
    return tquat.qnormalize(raw), raw


class Adam:
    """Adam with global-gradient-norm clipping and exponential lr decay per epoch.

    The gradient norm across *all* parameters is clipped to clip_norm before
    the moment updates; the effective learning rate at epoch e is
    lr * lr_decay**e.
    """

    def __init__(self, store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=0.1, lr_decay=0.999):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.lr_decay = lr_decay
        self.t = 0
        self.m = OrderedDict((n, torch.zeros_like(p)) for n, p in store.items())
        self.v = OrderedDict((n, torch.zeros_like(p)) for n, p in store.items())

    def effective_lr(self, epoch):
        return self.lr * self.lr_decay ** epoch

    def gradient_norm(self):
        grads = self.store.grads()
        return float(torch.sqrt(sum((g * g).sum() for g in grads.values())))

    def step(self, epoch=0):
        """One update from the accumulated gradients. Returns the pre-clip norm."""
        grads = self.store.grads()
        for name, g in grads.items():
            if not torch.isfinite(g).all():
                raise NonFiniteGradient(name)
        total = torch.sqrt(sum((g * g).sum() for g in grads.values()))
        if self.clip_norm is not None and float(total) > self.clip_norm:
            scale = self.clip_norm / total
            grads = OrderedDict((n, g * scale) for n, g in grads.items())
        self.t += 1
        lr_t = self.effective_lr(epoch)
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        with torch.no_grad():
            for name, p in self.store.items():
                g = grads[name]
                self.m[name].mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
                self.v[name].mul_(self.beta2).add_(g * g, alpha=1.0 - self.beta2)
                m_hat = self.m[name] / c1
                v_hat = self.v[name] / c2
                p.sub_(lr_t * m_hat / (torch.sqrt(v_hat) + self.eps))
        return float(total)

    def state_arrays(self):
        out = OrderedDict()
        for n, t in self.m.items():
            out[f"adam.m.{n}"] = t.numpy().copy()
        for n, t in self.v.items():
            out[f"adam.v.{n}"] = t.numpy().copy()
        return out

    def load_state(self, arrays, t):
        self.t = int(t)
        for n in self.m:
            self.m[n] = torch.tensor(arrays[f"adam.m.{n}"], dtype=DTYPE)
            self.v[n] = torch.tensor(arrays[f"adam.v.{n}"], dtype=DTYPE)


def rng_state(rng):
    return rng.bit_generator.state


def rng_from_state(state):
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = state
    return rng


def save_checkpoint(path, header, tensors):
    """Write the checkpoint container.

    Layout: magic line, decimal header byte count, JSON header (which gains a
    "tensors" manifest of names and shapes), then the raw float64
    little-endian blobs in manifest order.
    """
    header = dict(header)
    manifest = []
    blobs = []
    for name, value in tensors.items():
        arr = np.asarray(value, dtype=np.float64)
        manifest.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.astype("<f8", copy=True).tobytes())
    header["tensors"] = manifest
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(f"{len(payload)}\n".encode("ascii"))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (magic {magic!r})")
        n = int(fh.readline().strip())
        header = json.loads(fh.read(n).decode("utf-8"))
        tensors = OrderedDict()
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError(f"{path}: truncated blob for {entry['name']}")
            tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return header, tensors
