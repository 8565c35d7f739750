"""Static scan for fault-susceptible vector patterns.

Two shapes matter: a lane-parallel logic op (xor/and) whose result goes
to memory shortly after, and the same with a lane-parallel add.  The scan
is over the instruction stream in program order, ignoring control flow,
exactly like scanning a disassembled binary.  A hit requires the stored
register to be the op's destination and to survive untouched across the
gap; an intervening redefinition breaks the data dependency that makes
the pattern exploitable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from .errors import InvariantError
from .isa import (
    MiniProgram,
    Opcode,
    Reg,
    VECTOR_STORES,
    interpret,
)

# An op and its store may be separated by at most this many instructions.
# Observed instances sit at distances 0 to 2; one extra for slack.
ADJACENCY_LIMIT = 3

VP1_OPS = frozenset({Opcode.VPXOR, Opcode.VPAND})
VP2_OPS = frozenset({Opcode.VPADDQ})

# Opcodes that write a vector register name their destination last.
_VREG_WRITERS = frozenset(
    {Opcode.VPXOR, Opcode.VPAND, Opcode.VPADDQ, Opcode.VPSLLQ, Opcode.VMOVDQU_LOAD}
)


class PatternKind(Enum):
    VP1 = "VP1"  # parallel logic feeding a store
    VP2 = "VP2"  # parallel add feeding a store


@dataclass(frozen=True)
class PatternHit:
    kind: PatternKind
    op_index: int
    store_index: int

    def __post_init__(self):
        if self.store_index <= self.op_index:
            raise InvariantError("the store follows the op")
        if self.gap > ADJACENCY_LIMIT:
            raise InvariantError(f"gap {self.gap} beyond adjacency limit")

    @property
    def gap(self) -> int:
        return self.store_index - self.op_index - 1

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "op_index": self.op_index,
            "store_index": self.store_index,
            "gap": self.gap,
        }


def written_vreg(insn) -> str | None:
    """Vector register this instruction redefines, if any."""
    if insn.opcode in _VREG_WRITERS:
        dst = insn.operands[-1]
        if isinstance(dst, Reg) and dst.is_vector:
            return dst.name
    return None


def stored_vreg(insn) -> str | None:
    if insn.opcode in VECTOR_STORES:
        return insn.operands[0].name
    return None


def scan(program: MiniProgram) -> list[PatternHit]:
    """All (op, store) pairs matching a susceptible pattern, program order.

    Single forward pass: track, per vector register, the index and kind of
    the last pattern-relevant op that defined it; a store within the
    adjacency limit completes a hit.  Equivalent to brute-forcing all
    pairs, but linear.
    """
    hits: list[PatternHit] = []
    # register -> (op_index, kind); dropped on redefinition
    live: dict[str, tuple[int, PatternKind]] = {}
    for index, insn in enumerate(program.instructions):
        src = stored_vreg(insn)
        if src is not None and src in live:
            op_index, kind = live[src]
            if index - op_index - 1 <= ADJACENCY_LIMIT:
                hits.append(PatternHit(kind, op_index, index))
        written = written_vreg(insn)
        if written is not None:
            if insn.opcode in VP1_OPS:
                live[written] = (index, PatternKind.VP1)
            elif insn.opcode in VP2_OPS:
                live[written] = (index, PatternKind.VP2)
            else:
                live.pop(written, None)
    return hits


def scan_brute(program: MiniProgram) -> list[PatternHit]:
    """Quadratic reference enumeration of the same definition."""
    hits = []
    insns = program.instructions
    for i, op in enumerate(insns):
        if op.opcode in VP1_OPS:
            kind = PatternKind.VP1
        elif op.opcode in VP2_OPS:
            kind = PatternKind.VP2
        else:
            continue
        dst = op.operands[-1].name
        for j in range(i + 1, min(i + 2 + ADJACENCY_LIMIT, len(insns))):
            if any(written_vreg(insns[k]) == dst for k in range(i + 1, j)):
                break
            if stored_vreg(insns[j]) == dst:
                hits.append(PatternHit(kind, i, j))
    # Completion order: a store finishes at most one pattern, so ordering
    # by store index matches the forward pass exactly.
    hits.sort(key=lambda h: h.store_index)
    return hits


def hits_to_json(hits: list[PatternHit]) -> str:
    return json.dumps([h.to_json() for h in hits], indent=2, sort_keys=True)


@dataclass(frozen=True)
class WindowEstimate:
    """When and for how long a hit's store is live during a full run."""

    first_slice: int | None  # slice of first execution; None if never reached
    duration_slices: int  # eligible-store executions across the whole run


def estimate_window(
    program: MiniProgram,
    hit: PatternHit,
    iterations_per_run: int,
    memory: bytes | None = None,
    xmm: dict | None = None,
    scalar: dict | None = None,
    max_slices: int = 100_000,
) -> WindowEstimate:
    """Count executions of the hit's store under the 1-instruction=1-slice
    cost model: one traced pass, scaled by the run's iteration count."""
    trace: list[int] = []
    interpret(program, memory, xmm=xmm, scalar=scalar, max_slices=max_slices, trace=trace)
    first = None
    per_pass = 0
    for slice_index, insn_index in enumerate(trace):
        if insn_index == hit.store_index:
            per_pass += 1
            if first is None:
                first = slice_index
    return WindowEstimate(first, per_pass * iterations_per_run)
