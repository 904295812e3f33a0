"""Named trainable arrays with Adam moments and Polyak shadows."""

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor

ADAM_BETA1 = 0.95
ADAM_BETA2 = 0.9995
ADAM_EPS = 1e-8
POLYAK_DECAY = 0.9995


@dataclass
class ParamEntry:
    value: np.ndarray
    m: np.ndarray
    v: np.ndarray
    shadow: np.ndarray
    step: int = 0


class ParameterStore:
    """Mapping of parameter name to :class:`ParamEntry`, iterated in sorted order."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._entries = {}

    def add(self, name, value):
        if name in self._entries:
            raise KeyError(f"parameter {name!r} registered twice")
        value = np.array(value, dtype=self.dtype)
        self._entries[name] = ParamEntry(
            value=value,
            m=np.zeros_like(value),
            v=np.zeros_like(value),
            shadow=value.copy(),
        )
        return name

    def __contains__(self, name):
        return name in self._entries

    def __getitem__(self, name):
        return self._entries[name]

    def __len__(self):
        return len(self._entries)

    def names(self):
        return sorted(self._entries)

    def items(self):
        for name in self.names():
            yield name, self._entries[name]

    def n_values(self):
        return sum(e.value.size for e in self._entries.values())

    def set_value(self, name, value, reset_shadow=True):
        e = self._entries[name]
        e.value[...] = value
        if reset_shadow:
            e.shadow[...] = e.value

    def arrays(self, variant="raw"):
        if variant not in ("raw", "polyak"):
            raise ValueError(f"weights variant must be 'raw' or 'polyak', got {variant!r}")
        attr = "value" if variant == "raw" else "shadow"
        return {name: getattr(e, attr) for name, e in self.items()}

    def tensors(self, variant="raw", requires_grad=False):
        """Wrap the current arrays as leaf tensors (shared memory, no copy)."""
        return {
            name: Tensor(arr, requires_grad=requires_grad, name=name)
            for name, arr in self.arrays(variant).items()
        }

    def copy(self):
        other = ParameterStore(self.dtype)
        for name, e in self.items():
            other._entries[name] = ParamEntry(
                e.value.copy(), e.m.copy(), e.v.copy(), e.shadow.copy(), e.step
            )
        return other

    def astype(self, dtype):
        other = ParameterStore(dtype)
        for name, e in self.items():
            other._entries[name] = ParamEntry(
                e.value.astype(dtype), e.m.astype(dtype), e.v.astype(dtype),
                e.shadow.astype(dtype), e.step,
            )
        return other

    def shapes(self):
        return {name: e.value.shape for name, e in self.items()}


def adam_step(store, grads, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
    """Bias-corrected Adam update, in place. ``grads`` maps name -> array."""
    missing = [name for name in store.names() if name not in grads]
    if missing:
        raise KeyError(f"no gradient for parameter {missing[0]!r}")
    for name, e in store.items():
        g = np.asarray(grads[name], dtype=store.dtype)
        e.step += 1
        e.m *= beta1
        e.m += (1.0 - beta1) * g
        e.v *= beta2
        e.v += (1.0 - beta2) * (g * g)
        m_hat = e.m / (1.0 - beta1 ** e.step)
        v_hat = e.v / (1.0 - beta2 ** e.step)
        e.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return store


def polyak_update(store, decay=POLYAK_DECAY):
    """Exponential moving average of parameters into the shadow copies."""
    if not 0.0 <= decay < 1.0:
        raise ValueError(f"polyak decay must be in [0, 1), got {decay}")
    for _, e in store.items():
        e.shadow *= decay
        e.shadow += (1.0 - decay) * e.value
    return store


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
