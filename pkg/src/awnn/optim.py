"""Adam and SGD over named parameter arrays, updated in place.

State buffers follow their parameter through width changes: ``resize_rows`` and
``resize_inputs`` apply the same structural edit as the model, zero-filling new
entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import resize_inputs, resize_rows, zeros_fill


class _Buffered:
    buffer_names: tuple = ()

    def _buffers(self):
        return [getattr(self, n) for n in self.buffer_names]

    def resize_rows(self, name: str, rows: int):
        for buf in self._buffers():
            if name in buf:
                buf[name] = resize_rows(buf[name], rows, zeros_fill)

    def resize_inputs(self, name: str, n_in: int):
        for buf in self._buffers():
            if name in buf:
                buf[name] = resize_inputs(buf[name], n_in, zeros_fill)

    def state_shapes(self) -> dict:
        return {n: {k: v.shape for k, v in buf.items()} for n, buf in zip(self.buffer_names, self._buffers())}


@dataclass
class AdamConfig:
    lr: float = 0.01
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8


@dataclass
class SGDConfig:
    lr: float = 0.01
    momentum: float = 0.0
    weight_decay: float = 0.0


class Adam(_Buffered):
    buffer_names = ("m", "v")

    def __init__(self, lr=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class SGD(_Buffered):
    buffer_names = ("velocity",)

    def __init__(self, lr=0.01, momentum=0.0, weight_decay=0.0):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {}

    def step(self, params: dict, grads: dict):
        for name, p in params.items():
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * p
            if self.momentum:
                buf = self.velocity.get(name)
                if buf is None:
                    buf = self.velocity[name] = g.copy()
                else:
                    buf *= self.momentum
                    buf += g
                g = buf
            p -= self.lr * g


def make_optimizer(config):
    if isinstance(config, AdamConfig):
        return Adam(config.lr, tuple(config.betas), config.eps)
    if isinstance(config, SGDConfig):
        return SGD(config.lr, config.momentum, config.weight_decay)
    raise TypeError(f"unknown optimizer config {config!r}")
