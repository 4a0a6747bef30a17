"""Flat instruction programs for dense feed-forward graphs.

A program is a topologically ordered list of instructions operating on a set
of node buffers.  Dense instructions consume a contiguous slice of the
parameter vector (row-major weight matrix followed by an optional bias) and
accumulate ``act(x @ W.T + b)`` into their destination buffer; skip
instructions accumulate the source buffer unchanged.  Both numeric cores
(compiled and pure numpy) execute the same encoding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACT_IDENTITY = 0
ACT_RELU = 1
ACT_TANH = 2
ACTIVATIONS = {"identity": ACT_IDENTITY, "relu": ACT_RELU, "tanh": ACT_TANH}

OP_DENSE = 0
OP_SKIP = 1

# instruction columns: opcode, src col, dst col, src width, dst width,
# segment index (-1 for skip), activation, preactivation col (-1 for skip)
I_OP, I_SRC, I_DST, I_SRC_W, I_DST_W, I_SEG, I_ACT, I_PRE = range(8)
# segment columns: weight offset, bias offset (-1 if none), in width, out width
S_W, S_B, S_IN, S_OUT = range(4)


@dataclass(frozen=True)
class Program:
    """Executable description of a dense network graph."""

    input_dim: int
    output_dim: int
    num_params: int
    buffer_widths: tuple[int, ...]
    buffer_offsets: tuple[int, ...]
    out_buffer: int
    instrs: np.ndarray  # (k, 8) int64, C-contiguous
    segs: np.ndarray  # (s, 4) int64, C-contiguous
    instr_names: tuple[str, ...]
    total_buf_width: int
    total_pre_width: int

    @property
    def out_slice(self) -> slice:
        start = self.buffer_offsets[self.out_buffer]
        return slice(start, start + self.output_dim)

    def fan_ins(self) -> list[int]:
        """Fan-in of each parameter segment, in layout order."""
        return [int(s[S_IN]) for s in self.segs]


class ProgramBuilder:
    """Incrementally assembles a :class:`Program`.

    Buffer 0 always holds the network input; further buffers start at zero
    and are filled by accumulation, so instruction order fixes both the
    computation and the parameter layout.
    """

    def __init__(self, input_dim: int):
        if input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        self._widths = [input_dim]
        self._instrs: list[list[int]] = []
        self._segs: list[list[int]] = []
        self._names: list[str] = []
        self._num_params = 0
        self._pre_width = 0

    def add_buffer(self, width: int) -> int:
        if width < 1:
            raise ValueError("buffer width must be >= 1")
        self._widths.append(width)
        return len(self._widths) - 1

    def dense(self, src: int, dst: int, activation: str, bias: bool, name: str) -> None:
        in_w = self._widths[src]
        out_w = self._widths[dst]
        w_off = self._num_params
        self._num_params += in_w * out_w
        b_off = -1
        if bias:
            b_off = self._num_params
            self._num_params += out_w
        seg = len(self._segs)
        self._segs.append([w_off, b_off, in_w, out_w])
        self._instrs.append([OP_DENSE, src, dst, in_w, out_w, seg, ACTIVATIONS[activation], self._pre_width])
        self._pre_width += out_w
        self._names.append(name)

    def skip(self, src: int, dst: int, name: str) -> None:
        if self._widths[src] != self._widths[dst]:
            raise ValueError(f"skip '{name}': width {self._widths[src]} != {self._widths[dst]}")
        self._instrs.append([OP_SKIP, src, dst, self._widths[src], self._widths[dst], -1, ACT_IDENTITY, -1])
        self._names.append(name)

    def finish(self, out_buffer: int) -> Program:
        offsets = np.concatenate([[0], np.cumsum(self._widths)])
        instrs = np.array(self._instrs, dtype=np.int64).reshape(-1, 8)
        segs = np.array(self._segs, dtype=np.int64).reshape(-1, 4)
        # translate buffer indices into column offsets of the packed buffer matrix
        for row in instrs:
            row[I_SRC] = offsets[row[I_SRC]]
            row[I_DST] = offsets[row[I_DST]]
        return Program(
            input_dim=self._widths[0],
            output_dim=self._widths[out_buffer],
            num_params=self._num_params,
            buffer_widths=tuple(self._widths),
            buffer_offsets=tuple(int(o) for o in offsets[:-1]),
            out_buffer=out_buffer,
            instrs=np.ascontiguousarray(instrs),
            segs=np.ascontiguousarray(segs),
            instr_names=tuple(self._names),
            total_buf_width=int(offsets[-1]),
            total_pre_width=self._pre_width,
        )


def as_program(net) -> Program:
    """Extract the Program from a network-like object."""
    if isinstance(net, Program):
        return net
    prog = getattr(net, "program", None)
    if prog is None:
        raise TypeError(f"object of type {type(net).__name__} does not expose a program")
    return prog
