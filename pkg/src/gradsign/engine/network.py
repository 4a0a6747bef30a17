"""Network and batch value types for the dense engine."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .program import ACTIVATIONS, Program, ProgramBuilder


@dataclass(frozen=True)
class LayerSpec:
    """One dense layer: output width, activation kind, bias flag."""

    width: int
    activation: str = "relu"
    bias: bool = True

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("layer width must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(eq=True)
class NetworkSpec:
    """A plain multilayer dense network.

    The final layer must carry a bias term; per-sample optima of mse or
    cross-entropy losses are then zero-loss global optima, which the
    landscape analysis relies on.  Build bias-free toys directly with
    :class:`ProgramBuilder` when that guarantee is not wanted.
    """

    input_dim: int
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        self.layers = tuple(self.layers)
        if not self.layers:
            raise ValueError("at least one layer required")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if not self.layers[-1].bias:
            raise ValueError("last layer must have a bias term")

    @property
    def output_dim(self) -> int:
        return self.layers[-1].width

    @cached_property
    def program(self) -> Program:
        b = ProgramBuilder(self.input_dim)
        src = 0
        for i, layer in enumerate(self.layers):
            dst = b.add_buffer(layer.width)
            b.dense(src, dst, layer.activation, layer.bias, name=f"layer{i}")
            src = dst
        return b.finish(src)

    @property
    def num_params(self) -> int:
        return self.program.num_params


@dataclass(frozen=True)
class Batch:
    """A mini-batch of inputs with integer class ids or dense targets."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inputs = np.ascontiguousarray(np.asarray(self.inputs, dtype=np.float64))
        if inputs.ndim != 2:
            raise ValueError("inputs must be a 2-D [n, d] array")
        if not np.all(np.isfinite(inputs)):
            raise ValueError("inputs contain non-finite values")
        labels = np.asarray(self.labels)
        if np.issubdtype(labels.dtype, np.integer):
            labels = np.ascontiguousarray(labels, dtype=np.int64)
            if labels.ndim != 1:
                raise ValueError("class-id labels must be 1-D")
        else:
            labels = np.ascontiguousarray(labels, dtype=np.float64)
            if labels.ndim != 2:
                raise ValueError("dense labels must be 2-D [n, o]")
            if not np.all(np.isfinite(labels)):
                raise ValueError("labels contain non-finite values")
        if labels.shape[0] != inputs.shape[0]:
            raise ValueError("inputs and labels disagree on batch size")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def row(self, i: int) -> "Batch":
        return Batch(self.inputs[i : i + 1], self.labels[i : i + 1])

    def take(self, idx) -> "Batch":
        idx = np.asarray(idx)
        return Batch(self.inputs[idx], self.labels[idx])
