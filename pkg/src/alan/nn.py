"""Dense network building blocks on top of :mod:`alan.autodiff`."""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ParamSet:
    """Ordered collection of named trainable tensors.

    Subclasses register tensors with :meth:`add`; the insertion order fixes
    the flat layout used by checkpoints.
    """

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def adopt(self, prefix: str, other: "ParamSet") -> None:
        for name, t in other._params.items():
            full = f"{prefix}.{name}"
            if full in self._params:
                raise KeyError(f"duplicate parameter {full!r}")
            self._params[full] = t

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    def num_params(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def flat(self) -> np.ndarray:
        if not self._params:
            return np.zeros(0)
        return np.concatenate([t.data.ravel() for t in self._params.values()])

    def load_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.num_params():
            raise ValueError(f"expected {self.num_params()} values, got {flat.size}")
        i = 0
        for t in self._params.values():
            n = t.data.size
            t.data = flat[i : i + n].reshape(t.data.shape).astype(t.data.dtype)
            i += n

    def snapshot(self) -> list[np.ndarray]:
        return [t.data.copy() for t in self._params.values()]

    def restore(self, values: Sequence[np.ndarray]) -> None:
        for t, v in zip(self._params.values(), values):
            t.data = v.copy()

    def is_finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self._params.values())


def glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[-2], shape[-1]
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


class MLP(ParamSet):
    """Stack of dense layers. With ``members`` set, every weight carries a
    leading ensemble axis and inputs of shape ``(members, batch, in)`` (or a
    shared ``(batch, in)``) are mapped member-wise."""

    def __init__(
        self,
        sizes: Sequence[int],
        rng: np.random.Generator,
        act: str = "elu",
        out_act: str = "none",
        members: int | None = None,
    ) -> None:
        super().__init__()
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.sizes = list(sizes)
        self.act = act
        self.out_act = out_act
        self.members = members
        lead = () if members is None else (members,)
        self.layers: list[tuple[Tensor, Tensor]] = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            if members is None:
                w = glorot(rng, (n_in, n_out))
            else:
                w = np.stack([glorot(rng, (n_in, n_out)) for _ in range(members)])
            b = np.zeros(lead + (1, n_out)) if members is not None else np.zeros(n_out)
            self.layers.append((self.add(f"w{i}", w), self.add(f"b{i}", b)))

    def __call__(self, x) -> Tensor:
        h = x
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = ad.linear(h, w, b)
            h = ad.ACTIVATIONS[self.act if i < last else self.out_act](h)
        return h
