"""Small fully connected Q-network in numpy: ReLU trunk, linear output.

All weights and biases live in one flat vector (``net.params``); per-layer
arrays are views into it, which keeps Adam to a handful of vector ops.
Gradients come back in the same flat layout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SMALL_HIDDEN = (128, 256, 256, 256)
LARGE_HIDDEN = (512, 1024, 1024, 1024)
CHECKPOINT_VERSION = 1
FLUSH_EVERY = 64


def aggregate(value: np.ndarray, advantage: np.ndarray, mode: str = "mean") -> np.ndarray:
    """Combine a (B, 1) value stream with a (B, A) advantage stream."""
    if mode == "mean":
        return value + advantage - advantage.mean(axis=1, keepdims=True)
    if mode == "max":
        return value + advantage - advantage.max(axis=1, keepdims=True)
    raise ValueError(f"unknown aggregation {mode!r}")


@dataclass
class _Cache:
    acts: list[np.ndarray]  # input followed by each hidden activation
    value: np.ndarray | None = None
    advantage: np.ndarray | None = None


class QNetwork:
    """MLP ``n_inputs -> hidden... -> n_outputs`` with optional dueling heads."""

    def __init__(
        self,
        n_inputs: int,
        n_outputs: int,
        hidden: tuple[int, ...] = SMALL_HIDDEN,
        dueling: bool = False,
        aggregation: str = "mean",
        seed: int | None = 0,
        dtype=np.float64,
    ):
        if aggregation not in ("mean", "max"):
            raise ValueError(f"unknown aggregation {aggregation!r}")
        self.n_inputs = int(n_inputs)
        self.n_outputs = int(n_outputs)
        self.hidden = tuple(int(h) for h in hidden)
        self.dueling = bool(dueling)
        self.aggregation = aggregation
        self.dtype = np.dtype(dtype)

        sizes = (self.n_inputs, *self.hidden)
        shapes = list(zip(sizes[:-1], sizes[1:]))
        last = sizes[-1]
        if self.dueling:
            shapes += [(last, 1), (last, self.n_outputs)]
        else:
            shapes.append((last, self.n_outputs))
        self._shapes = shapes
        total = sum(a * b + b for a, b in shapes)
        self.params = np.zeros(total, dtype=self.dtype)
        self.layers = self._views(self.params)
        self._init_weights(np.random.default_rng(seed))

    # -- layout ---------------------------------------------------------
    def _views(self, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        views = []
        pos = 0
        for a, b in self._shapes:
            W = flat[pos : pos + a * b].reshape(a, b)
            pos += a * b
            bias = flat[pos : pos + b]
            pos += b
            views.append((W, bias))
        return views

    def _init_weights(self, rng: np.random.Generator) -> None:
        n_trunk = len(self.hidden)
        for i, (W, _) in enumerate(self.layers):
            fan_in = W.shape[0]
            # He-uniform into rectifiers, LeCun-uniform into the linear heads
            limit = np.sqrt((6.0 if i < n_trunk else 3.0) / fan_in)
            W[...] = rng.uniform(-limit, limit, size=W.shape)

    @property
    def n_trunk(self) -> int:
        return len(self.hidden)

    @property
    def sizes(self) -> list[int]:
        return [self.n_inputs, *self.hidden, self.n_outputs]

    def zeros_like_params(self) -> np.ndarray:
        return np.zeros_like(self.params)

    def copy(self) -> QNetwork:
        clone = object.__new__(QNetwork)
        clone.__dict__.update(self.__dict__)
        clone.params = self.params.copy()
        clone.layers = clone._views(clone.params)
        return clone

    def load_params(self, other: QNetwork | np.ndarray) -> None:
        src = other.params if isinstance(other, QNetwork) else other
        self.params[...] = src

    # -- evaluation -----------------------------------------------------
    def _forward(self, x: np.ndarray) -> tuple[np.ndarray, _Cache]:
        h = x
        acts = [h]
        for W, b in self.layers[: self.n_trunk]:
            h = h @ W
            h += b
            np.maximum(h, 0.0, out=h)
            acts.append(h)
        cache = _Cache(acts)
        if self.dueling:
            (Wv, bv), (Wa, ba) = self.layers[self.n_trunk :]
            cache.value = h @ Wv + bv
            cache.advantage = h @ Wa + ba
            out = aggregate(cache.value, cache.advantage, self.aggregation)
        else:
            Wo, bo = self.layers[-1]
            out = h @ Wo + bo
        return out, cache

    def _as_batch(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        x = x[None, :] if single else x
        if x.ndim != 2 or x.shape[1] != self.n_inputs:
            raise ValueError(f"expected input width {self.n_inputs}, got shape {x.shape}")
        return x, single

    def forward(self, x) -> np.ndarray:
        """Q-values for one state (1-D) or a batch (2-D)."""
        xb, single = self._as_batch(x)
        out, _ = self._forward(xb)
        return out[0] if single else out

    __call__ = forward

    def dueling_forward(self, x) -> np.ndarray:
        if not self.dueling:
            raise ValueError("network has no value/advantage heads")
        return self.forward(x)

    def streams(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Raw (value, advantage) head outputs of a dueling network."""
        if not self.dueling:
            raise ValueError("network has no value/advantage heads")
        xb, single = self._as_batch(x)
        _, cache = self._forward(xb)
        if single:
            return cache.value[0], cache.advantage[0]
        return cache.value, cache.advantage

    # -- gradients ------------------------------------------------------
    def _backward(self, cache: _Cache, dout: np.ndarray) -> np.ndarray:
        grad = np.zeros_like(self.params)
        gviews = self._views(grad)
        h = cache.acts[-1]
        if self.dueling:
            (Wv, _), (Wa, _) = self.layers[self.n_trunk :]
            (gWv, gbv), (gWa, gba) = gviews[self.n_trunk :]
            dv = dout.sum(axis=1, keepdims=True)
            if self.aggregation == "mean":
                da = dout - dout.mean(axis=1, keepdims=True)
            else:
                da = dout.copy()
                idx = cache.advantage.argmax(axis=1)
                da[np.arange(len(idx)), idx] -= dout.sum(axis=1)
            np.matmul(h.T, dv, out=gWv)
            gbv[...] = dv.sum(axis=0)
            np.matmul(h.T, da, out=gWa)
            gba[...] = da.sum(axis=0)
            dh = dv @ Wv.T + da @ Wa.T
        else:
            Wo, _ = self.layers[-1]
            gWo, gbo = gviews[-1]
            np.matmul(h.T, dout, out=gWo)
            gbo[...] = dout.sum(axis=0)
            dh = dout @ Wo.T
        for i in range(self.n_trunk - 1, -1, -1):
            dh = dh * (cache.acts[i + 1] > 0)
            gW, gb = gviews[i]
            np.matmul(cache.acts[i].T, dh, out=gW)
            gb[...] = dh.sum(axis=0)
            if i:
                dh = dh @ self.layers[i][0].T
        return grad

    def loss_and_grad(
        self, x, target, actions=None
    ) -> tuple[float, np.ndarray]:
        """Squared-error loss ``1/2 (y - Q)^2`` and its gradient.

        Without ``actions`` the loss averages over every output (and batch row).
        With ``actions`` only ``Q[b, actions[b]]`` is regressed onto ``target[b]``,
        averaged over the batch.
        """
        xb, single = self._as_batch(x)
        y = np.asarray(target, dtype=self.dtype)
        if not np.isfinite(y).all():
            raise ValueError("non-finite regression target")
        out, cache = self._forward(xb)
        if actions is None:
            y = y[None, :] if single else y
            if y.shape != out.shape:
                raise ValueError(f"target shape {y.shape} does not match output {out.shape}")
            diff = out - y
            loss = 0.5 * float(np.mean(diff * diff))
            dout = diff / diff.size
        else:
            acts = np.atleast_1d(np.asarray(actions, dtype=np.int64))
            y = np.atleast_1d(y)
            if acts.shape != (out.shape[0],) or y.shape != acts.shape:
                raise ValueError("need one action and one target per batch row")
            rows = np.arange(out.shape[0])
            diff = out[rows, acts] - y
            loss = 0.5 * float(np.mean(diff * diff))
            dout = np.zeros_like(out)
            dout[rows, acts] = diff / diff.size
        return loss, self._backward(cache, dout)

    # -- persistence ----------------------------------------------------
    def manifest(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "n_inputs": self.n_inputs,
            "n_outputs": self.n_outputs,
            "hidden": list(self.hidden),
            "dueling": self.dueling,
            "aggregation": self.aggregation,
            "dtype": self.dtype.name,
            "layer_shapes": [list(s) for s in self._shapes],
        }

    def save(self, path: str | Path) -> None:
        """Write an ``.npz`` holding the flat params and a JSON manifest."""
        with open(path, "wb") as fh:
            np.savez(fh, params=self.params, manifest=np.array(json.dumps(self.manifest())))

    @classmethod
    def load(cls, path: str | Path) -> QNetwork:
        with np.load(path) as data:
            meta = json.loads(str(data["manifest"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
            net = cls(
                meta["n_inputs"],
                meta["n_outputs"],
                hidden=tuple(meta["hidden"]),
                dueling=meta["dueling"],
                aggregation=meta["aggregation"],
                seed=None,
                dtype=np.dtype(meta["dtype"]),
            )
            net.params[...] = data["params"]
        return net


@dataclass
class Adam:
    """Bias-corrected Adam over a flat parameter vector."""

    size: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dtype: object = np.float64
    t: int = 0
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.m = np.zeros(self.size, dtype=self.dtype)
        self.v = np.zeros(self.size, dtype=self.dtype)
        self._tmp = np.zeros(self.size, dtype=self.dtype)
        # moments of parameters that never receive gradient decay geometrically
        # into the subnormal range, where float arithmetic is ~10x slower
        self._flush_below = float(np.finfo(self.dtype).tiny) * 1e6

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        if params.shape != self.m.shape or grads.shape != self.m.shape:
            raise ValueError("parameter/gradient shape does not match optimizer state")
        self.t += 1
        b1, b2, tmp = self.beta1, self.beta2, self._tmp
        self.m *= b1
        np.multiply(grads, 1.0 - b1, out=tmp)
        self.m += tmp
        self.v *= b2
        np.multiply(grads, grads, out=tmp)
        tmp *= 1.0 - b2
        self.v += tmp
        # p -= lr * m_hat / (sqrt(v_hat) + eps)
        np.multiply(self.v, 1.0 / (1.0 - b2**self.t), out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += self.eps
        np.divide(self.m, tmp, out=tmp)
        tmp *= self.lr / (1.0 - b1**self.t)
        params -= tmp
        if self.t % FLUSH_EVERY == 0:
            for acc in (self.m, self.v):
                acc[np.abs(acc) < self._flush_below] = 0.0
        return params


def adam_step(net: QNetwork, grads: np.ndarray, state: Adam) -> QNetwork:
    state.step(net.params, grads)
    return net
