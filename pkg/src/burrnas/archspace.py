"""Search space of feature-merge blocks.

A child network starts from four backbone maps (ids 0..3 = P2..P5). Block k
merges two distinct maps from the current pool with SUM or POOL and appends
its output as id ``4 + k``; the last block's output is the network output.
Blocks are stored with ``input_a < input_b``: a block is an unordered pair
of inputs plus an op, and the canonical order fixes which input supplies the
output grid (and, for POOL, the gate).
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from math import comb

from .errors import ParseError, TooLarge

NUM_BACKBONE = 4
MAX_ENUMERATE_BLOCKS = 4


class MergeOp(str, enum.Enum):
    SUM = "SUM"
    POOL = "POOL"


OPS = (MergeOp.SUM, MergeOp.POOL)


@dataclass(frozen=True)
class BlockTriplet:
    input_a: int
    input_b: int
    op: MergeOp

    def __str__(self):
        return f"{self.input_a}-{self.input_b}-{self.op.value}"


@dataclass(frozen=True)
class Architecture:
    blocks: tuple[BlockTriplet, ...]

    def __init__(self, blocks):
        object.__setattr__(self, "blocks", tuple(blocks))

    def __len__(self):
        return len(self.blocks)

    @property
    def output_id(self) -> int:
        return NUM_BACKBONE + len(self.blocks) - 1

    def __str__(self):
        return encode(self)


def pool_size_after(k: int) -> int:
    """Number of maps available to block ``k``."""
    if k < 0:
        raise ValueError("block index must be >= 0")
    return NUM_BACKBONE + k


def valid_triplets(k: int) -> list[BlockTriplet]:
    n = pool_size_after(k)
    return [BlockTriplet(a, b, op) for a, b in itertools.combinations(range(n), 2) for op in OPS]


def num_valid_triplets(k: int) -> int:
    return 2 * comb(pool_size_after(k), 2)


def validate(arch: Architecture) -> str | None:
    """Return ``None`` for a valid architecture, else a description of the first violation."""
    if len(arch.blocks) == 0:
        return "architecture has no blocks"
    for k, blk in enumerate(arch.blocks):
        n = pool_size_after(k)
        if not isinstance(blk.op, MergeOp):
            return f"block {k}: unknown op {blk.op!r}"
        for ref in (blk.input_a, blk.input_b):
            if ref < 0:
                return f"block {k} references negative id {ref}"
            if ref >= n:
                return f"block {k} references id {ref} ≥ pool size {n}"
        if blk.input_a == blk.input_b:
            return f"block {k}: duplicate inputs ({blk.input_a})"
        if blk.input_a > blk.input_b:
            return f"block {k}: inputs not in canonical order ({blk.input_a} > {blk.input_b})"
    return None


def is_valid(arch: Architecture) -> bool:
    return validate(arch) is None


def canonical_block(a: int, b: int, op: MergeOp) -> BlockTriplet:
    return BlockTriplet(min(a, b), max(a, b), MergeOp(op))


def encode(arch: Architecture) -> str:
    problem = validate(arch)
    if problem is not None:
        raise ValueError(f"cannot encode invalid architecture: {problem}")
    return ";".join(str(b) for b in arch.blocks)


def decode(text: str) -> Architecture:
    """Parse ``"a-b-OP;a-b-OP;..."``. Errors carry the character offset of the bad block."""
    blocks = []
    offset = 0
    if not text.strip():
        raise ParseError("empty architecture string", where="offset 0")
    for k, part in enumerate(text.split(";")):
        fields = part.strip().split("-")
        if len(fields) != 3:
            raise ParseError(f"block {k}: expected 'a-b-OP', got {part!r}", where=f"offset {offset}")
        try:
            a, b = int(fields[0]), int(fields[1])
        except ValueError:
            raise ParseError(f"block {k}: non-integer input id in {part!r}", where=f"offset {offset}") from None
        try:
            op = MergeOp(fields[2].strip())
        except ValueError:
            raise ParseError(f"block {k}: unknown op {fields[2]!r}", where=f"offset {offset}") from None
        blocks.append(BlockTriplet(a, b, op))
        problem = validate(Architecture(blocks))
        if problem is not None:
            raise ParseError(problem, where=f"offset {offset}")
        offset += len(part) + 1
    return Architecture(blocks)


def enumerate_all(T: int) -> list[Architecture]:
    if T > MAX_ENUMERATE_BLOCKS:
        raise TooLarge(f"refusing to enumerate {T}-block architectures (limit {MAX_ENUMERATE_BLOCKS})")
    if T < 1:
        raise ValueError("T must be >= 1")
    per_block = [valid_triplets(k) for k in range(T)]
    return [Architecture(combo) for combo in itertools.product(*per_block)]


def space_size(T: int) -> int:
    size = 1
    for k in range(T):
        size *= num_valid_triplets(k)
    return size


def _inputs(arch: Architecture, node: int) -> tuple[int, int]:
    blk = arch.blocks[node - NUM_BACKBONE]
    return blk.input_a, blk.input_b


def reachable_backbone(arch: Architecture) -> set[int]:
    """Backbone ids with a path into the output map."""
    seen, stack, found = set(), [arch.output_id], set()
    while stack:
        node = stack.pop()
        if node in seen:
            continue
        seen.add(node)
        if node < NUM_BACKBONE:
            found.add(node)
        else:
            stack.extend(_inputs(arch, node))
    return found


def longest_path(arch: Architecture) -> int:
    """Most blocks on any path from a backbone map to the output."""
    depth = {i: 0 for i in range(NUM_BACKBONE)}
    for k, blk in enumerate(arch.blocks):
        depth[NUM_BACKBONE + k] = 1 + max(depth[blk.input_a], depth[blk.input_b])
    return depth[arch.output_id]


def fpn_like(levels: int = NUM_BACKBONE) -> Architecture:
    """Top-down chain of SUMs: P5+P4, then +P3, then +P2, ending at the finest level."""
    blocks = [BlockTriplet(levels - 2, levels - 1, MergeOp.SUM)]
    for k, lvl in enumerate(range(levels - 3, -1, -1)):
        blocks.append(BlockTriplet(lvl, NUM_BACKBONE + k, MergeOp.SUM))
    return Architecture(blocks)
