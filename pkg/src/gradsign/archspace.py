"""Enumerable cell search space over dense operations.

Architectures assign one of five operations to each edge of a four-node DAG
cell; cells are stacked behind a dense stem and in front of a dense
classifier head.  The 5^6 = 15625 encodings are bijective with the integer
ids used in every persisted file.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .engine.program import Program, ProgramBuilder

OPS = ("zero", "skip_connect", "dense_relu", "dense_tanh", "dense_identity")
NUM_OPS = len(OPS)
EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
NUM_EDGES = len(EDGES)
SPACE_SIZE = NUM_OPS**NUM_EDGES

_EDGE_ACTIVATION = {"dense_relu": "relu", "dense_tanh": "tanh", "dense_identity": "identity"}


@dataclass(frozen=True)
class CellArch:
    """Cell encoding: one operation id per DAG edge."""

    ops: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(int(o) for o in self.ops))
        if len(self.ops) != NUM_EDGES:
            raise ValueError(f"expected {NUM_EDGES} edge ops, got {len(self.ops)}")
        if any(o < 0 or o >= NUM_OPS for o in self.ops):
            raise ValueError(f"op ids must lie in [0, {NUM_OPS})")

    @property
    def arch_id(self) -> int:
        return encode_arch(self)

    def op_names(self) -> tuple[str, ...]:
        return tuple(OPS[o] for o in self.ops)


def encode_arch(arch: CellArch) -> int:
    """Little-endian base-5 encoding: id = sum ops[e] * 5^e."""
    return sum(op * NUM_OPS**e for e, op in enumerate(arch.ops))


def decode_arch(arch_id: int) -> CellArch:
    """Inverse of :func:`encode_arch`."""
    if not 0 <= arch_id < SPACE_SIZE:
        raise ValueError(f"arch id {arch_id} outside [0, {SPACE_SIZE})")
    ops = []
    rest = int(arch_id)
    for _ in range(NUM_EDGES):
        rest, op = divmod(rest, NUM_OPS)
        ops.append(op)
    # divmod yields digits least-significant first, which is the edge order
    return CellArch(tuple(ops))


def random_arch(rng: np.random.Generator) -> CellArch:
    """Uniform draw over all arch ids; advances the supplied generator."""
    return decode_arch(int(rng.integers(SPACE_SIZE)))


def mutate_arch(parent: CellArch, rng: np.random.Generator) -> CellArch:
    """Reassign one uniformly chosen edge to a uniformly chosen different op."""
    edge = int(rng.integers(NUM_EDGES))
    shift = int(rng.integers(1, NUM_OPS))
    ops = list(parent.ops)
    ops[edge] = (ops[edge] + shift) % NUM_OPS
    return CellArch(tuple(ops))


@dataclass(frozen=True)
class SearchSpaceSpec:
    """Shared cell-space hyperparameters; width 16 / two cells keeps the
    largest architecture under 5000 parameters."""

    cell_width: int = 16
    num_cells: int = 2

    def __post_init__(self):
        if self.cell_width < 1 or self.num_cells < 1:
            raise ValueError("cell_width and num_cells must be >= 1")

    def to_dict(self) -> dict:
        return {"cell_width": self.cell_width, "num_cells": self.num_cells}


@dataclass(frozen=True)
class ExecutableArch:
    """A materialized architecture; exposes ``program`` for the engine."""

    arch: CellArch
    space: SearchSpaceSpec
    input_dim: int
    num_classes: int

    @cached_property
    def program(self) -> Program:
        return _build_program(self.arch, self.space, self.input_dim, self.num_classes)

    @property
    def arch_id(self) -> int:
        return self.arch.arch_id

    @property
    def num_params(self) -> int:
        return self.program.num_params


def materialize(
    arch: CellArch, space: SearchSpaceSpec, input_dim: int, num_classes: int
) -> ExecutableArch:
    """Build the executable graph: relu stem, summed cell nodes, biased head."""
    return ExecutableArch(arch, space, input_dim, num_classes)


def _build_program(arch, space, input_dim, num_classes) -> Program:
    w = space.cell_width
    b = ProgramBuilder(input_dim)
    stem = b.add_buffer(w)
    b.dense(0, stem, activation="relu", bias=True, name="stem")
    prev = stem
    for c in range(space.num_cells):
        nodes = [prev, b.add_buffer(w), b.add_buffer(w), b.add_buffer(w)]
        for e, (i, j) in enumerate(EDGES):
            op = OPS[arch.ops[e]]
            name = f"cell{c}.e{e}.{op}"
            if op == "zero":
                continue
            if op == "skip_connect":
                b.skip(nodes[i], nodes[j], name)
            else:
                b.dense(nodes[i], nodes[j], activation=_EDGE_ACTIVATION[op], bias=True, name=name)
        prev = nodes[3]
    head = b.add_buffer(num_classes)
    b.dense(prev, head, activation="identity", bias=True, name="head")
    return b.finish(head)
