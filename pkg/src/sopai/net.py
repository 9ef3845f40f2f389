"""Bias-free feed-forward encoder with per-task linear heads.

The model computes ``f(x) = phi(x, W)^T xi_task``.  Encoder weights live in a
single flat vector, ordered layer by layer and row-major inside each
``m_l x h_l`` matrix, so ``z_l = a_{l-1} @ W_l``.  Every other module in the
package relies on this ordering.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

from .errors import DimensionError

TaskId = Hashable


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    has_activation: bool = True

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise DimensionError(f"layer dims must be positive, got {self.in_dim}x{self.out_dim}")

    @property
    def size(self) -> int:
        return self.in_dim * self.out_dim


@dataclass(frozen=True)
class Batch:
    """Inputs ``(n, d)`` and integer labels ``(n,)``."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise DimensionError(f"batch shapes {x.shape} / {y.shape} do not match")
        if x.shape[0] < 1:
            raise DimensionError("batch must hold at least one example")
        if np.any(y < 0):
            raise DimensionError("labels must be non-negative")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.labels[idx])


def _readonly(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Network:
    layers: tuple
    W: np.ndarray
    heads: Mapping = field(default_factory=dict)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise DimensionError("network needs at least one layer")
        for l in range(1, len(layers)):
            if layers[l - 1].out_dim != layers[l].in_dim:
                raise DimensionError(
                    f"layer {l - 1} outputs {layers[l - 1].out_dim} but layer {l} expects {layers[l].in_dim}"
                )
        W = _readonly(self.W).ravel()
        if W.shape[0] != sum(s.size for s in layers):
            raise DimensionError(f"expected {sum(s.size for s in layers)} weights, got {W.shape[0]}")
        heads = {}
        for task, xi in dict(self.heads).items():
            xi = _readonly(xi)
            if xi.ndim != 2 or xi.shape[0] != layers[-1].out_dim:
                raise DimensionError(f"head {task!r} has shape {xi.shape}, feature dim is {layers[-1].out_dim}")
            heads[task] = xi
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "heads", heads)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def feature_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def n_params(self) -> int:
        return self.W.shape[0]

    @property
    def layer_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([s.size for s in self.layers])])

    def layer_slices(self):
        off = self.layer_offsets
        return [slice(off[l], off[l + 1]) for l in range(len(self.layers))]

    def matrices(self, W=None):
        """Views of the flat weight vector as per-layer ``(m_l, h_l)`` matrices."""
        W = self.W if W is None else W
        return [W[s].reshape(spec.in_dim, spec.out_dim) for s, spec in zip(self.layer_slices(), self.layers)]

    def layer_of(self, j):
        """``(layer, row, col)`` of flat parameter index ``j``."""
        off = self.layer_offsets
        l = int(np.searchsorted(off, j, side="right") - 1)
        r, c = divmod(int(j - off[l]), self.layers[l].out_dim)
        return l, r, c

    def head(self, task) -> np.ndarray:
        try:
            return self.heads[task]
        except KeyError:
            raise KeyError(f"no head registered for task {task!r}") from None

    def with_weights(self, W) -> "Network":
        return Network(self.layers, W, self.heads)

    def with_heads(self, heads) -> "Network":
        return Network(self.layers, self.W, heads)


def init_network(dims: Sequence[int], heads: Mapping[TaskId, int] = None, seed=0) -> Network:
    """He-initialised encoder ``dims[0] -> ... -> dims[-1]``.

    ReLU follows every layer except the last.  ``heads`` maps task ids to
    their class counts; head matrices are drawn with variance ``1/h``.
    """
    rng = np.random.default_rng(seed)
    layers = tuple(
        LayerSpec(m, h, has_activation=(l < len(dims) - 2)) for l, (m, h) in enumerate(zip(dims[:-1], dims[1:]))
    )
    W = np.concatenate([rng.normal(0.0, np.sqrt(2.0 / s.in_dim), s.size) for s in layers])
    h = dims[-1]
    xi = {t: rng.normal(0.0, np.sqrt(1.0 / h), (h, C)) for t, C in (heads or {}).items()}
    return Network(layers, W, xi)


def _as_matrix(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise DimensionError(f"layer 0 expects inputs of dim {net.input_dim}, got shape {x.shape}")
    return X, single


def _forward_cache(net, X):
    """Layer inputs ``a_0..a_L`` and pre-activations ``z_1..z_L``."""
    acts, pre = [X], []
    a = X
    for spec, Wl in zip(net.layers, net.matrices()):
        z = a @ Wl
        pre.append(z)
        a = np.maximum(z, 0.0) if spec.has_activation else z
        acts.append(a)
    return acts, pre


def features(net: Network, x) -> np.ndarray:
    X, single = _as_matrix(net, x)
    phi = _forward_cache(net, X)[0][-1]
    return phi[0] if single else phi


def forward(net: Network, x, task) -> np.ndarray:
    """Logits for one input ``(d,)`` or a stack ``(n, d)``."""
    xi = net.head(task)
    X, single = _as_matrix(net, x)
    logits = _forward_cache(net, X)[0][-1] @ xi
    return logits[0] if single else logits


def predict(net: Network, x, task) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class
    return np.argmax(forward(net, x, task), axis=-1)


def one_hot(labels, C) -> np.ndarray:
    labels = np.asarray(labels)
    if np.any(labels >= C) or np.any(labels < 0):
        raise DimensionError(f"label out of range for {C} classes")
    Y = np.zeros((labels.shape[0], C))
    Y[np.arange(labels.shape[0]), labels] = 1.0
    return Y


def mse_loss(logits, label) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    C = logits.shape[-1]
    if not 0 <= label < C:
        raise DimensionError(f"label {label} out of range for {C} classes")
    target = np.zeros(C)
    target[label] = 1.0
    return float(np.mean((logits - target) ** 2))


def batch_loss(net: Network, batch: Batch, task) -> float:
    """Mean over examples of :func:`mse_loss`."""
    logits = forward(net, batch.inputs, task)
    Y = one_hot(batch.labels, logits.shape[1])
    return float(np.mean((logits - Y) ** 2))


def layer_activations_and_presignals(net: Network, batch: Batch, task):
    """Per layer, the stacked inputs ``a_{l-1}`` ``(n, m_l)`` and per-example
    gradients of the example's own loss w.r.t. ``z_l`` ``(n, h_l)``.

    ``outer(a_{l-1}[i], g_l[i]).ravel()`` is example ``i``'s gradient for layer ``l``.
    """
    xi = net.head(task)
    acts, pre = _forward_cache(net, batch.inputs)
    C = xi.shape[1]
    resid = acts[-1] @ xi - one_hot(batch.labels, C)
    delta = (2.0 / C) * resid @ xi.T
    mats = net.matrices()
    out = []
    for l in range(len(net.layers) - 1, -1, -1):
        if net.layers[l].has_activation:
            delta = delta * (pre[l] > 0)
        out.append((acts[l], delta))
        if l:
            delta = delta @ mats[l].T
    return out[::-1]


def grad(net: Network, batch: Batch, task) -> np.ndarray:
    """Gradient of the mean MSE w.r.t. the flat encoder weights; heads held fixed."""
    n = len(batch)
    return np.concatenate([(a.T @ g).ravel() / n for a, g in layer_activations_and_presignals(net, batch, task)])


def per_example_grads(net: Network, batch: Batch, task) -> np.ndarray:
    streams = layer_activations_and_presignals(net, batch, task)
    n = len(batch)
    return np.concatenate([np.einsum("ni,nj->nij", a, g).reshape(n, -1) for a, g in streams], axis=1)


def head_grad(net: Network, batch: Batch, task) -> np.ndarray:
    """Gradient of the mean MSE w.r.t. the head of ``task``."""
    xi = net.head(task)
    phi = features(net, batch.inputs)
    C = xi.shape[1]
    resid = phi @ xi - one_hot(batch.labels, C)
    return phi.T @ ((2.0 / C) * resid) / len(batch)
