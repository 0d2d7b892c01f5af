"""
Systematic random linear network coding over GF(256).

A transfer is cut into generations of ``k`` source packets. Each source
packet goes out once uncoded (systematic), and coded packets carry a random
linear combination of the whole generation together with the coefficient
vector that produced it.

The receiver keeps one ``DecoderState`` per generation. Row ``j`` of its
matrix is the row whose pivot is column ``j``, so the stored rows are in
reduced row-echelon form after every insertion, and at full rank the
payload rows are the source packets in index order.
"""
import enum
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .gf256 import INV, MUL, as_vector, combine

logger = logging.getLogger(__name__)


class PacketKind(str, enum.Enum):
    SYSTEMATIC = "systematic"
    CODED = "coded"


class Innovation(str, enum.Enum):
    INNOVATIVE = "innovative"
    REDUNDANT = "redundant"


class NotDecodableError(Exception):
    def __init__(self, generation_id: int, dofs_needed: int):
        super().__init__(
            f"generation {generation_id} needs {dofs_needed} more degrees of freedom"
        )
        self.generation_id = generation_id
        self.dofs_needed = dofs_needed


@dataclass(frozen=True)
class SourcePacket:
    generation_id: int
    index: int
    payload: np.ndarray
    # Bytes of real data in ``payload``; the rest is zero padding.
    length: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"negative index {self.index}")


@dataclass(frozen=True)
class CodedPacket:
    generation_id: int
    generation_size: int
    kind: PacketKind
    payload: np.ndarray
    index: Optional[int] = None
    coefficients: Optional[np.ndarray] = None

    def coefficient_vector(self) -> np.ndarray:
        if self.kind is PacketKind.SYSTEMATIC:
            v = np.zeros(self.generation_size, dtype=np.uint8)
            v[self.index] = 1
            return v
        return self.coefficients

    @classmethod
    def systematic(cls, packet: SourcePacket, generation_size: int) -> "CodedPacket":
        if not 0 <= packet.index < generation_size:
            raise ValueError(
                f"index {packet.index} outside generation of size {generation_size}"
            )
        return cls(
            generation_id=packet.generation_id,
            generation_size=generation_size,
            kind=PacketKind.SYSTEMATIC,
            payload=packet.payload,
            index=packet.index,
        )


def make_generation(
    data: np.ndarray,
    generation_id: int,
    generation_size: int,
    symbol_size: int,
    *,
    carry_payload: bool = True,
) -> List[SourcePacket]:
    """
    Cut generation ``generation_id`` out of the transfer ``data``.

    All generations hold ``generation_size`` packets except the last, which
    holds whatever is left. The last packet is zero-padded to ``symbol_size``.
    With ``carry_payload=False`` payloads are empty arrays; lengths are still
    reported so byte accounting is unaffected.
    """
    total = data.size
    first = generation_id * generation_size
    n_packets = -(-total // symbol_size)
    if not 0 <= first < n_packets:
        raise ValueError(f"generation {generation_id} is outside the transfer")
    last = min(first + generation_size, n_packets)

    packets = []
    for i in range(first, last):
        lo = i * symbol_size
        hi = min(lo + symbol_size, total)
        if carry_payload:
            payload = np.zeros(symbol_size, dtype=np.uint8)
            payload[: hi - lo] = data[lo:hi]
        else:
            payload = np.zeros(0, dtype=np.uint8)
        packets.append(SourcePacket(generation_id, i - first, payload, hi - lo))
    return packets


def count_generations(transfer_bytes: int, generation_size: int, symbol_size: int) -> int:
    n_packets = -(-transfer_bytes // symbol_size)
    return -(-n_packets // generation_size)


def _check_generation(generation: Sequence[SourcePacket]) -> None:
    if not generation:
        raise ValueError("empty generation")
    gid = generation[0].generation_id
    size = generation[0].payload.size
    for i, p in enumerate(generation):
        if p.generation_id != gid or p.payload.size != size or p.index != i:
            raise ValueError(
                f"packet {i} does not belong to generation {gid} "
                f"(id={p.generation_id}, index={p.index}, size={p.payload.size})"
            )


def encode_with(
    generation: Sequence[SourcePacket], coefficients: Sequence[int]
) -> CodedPacket:
    _check_generation(generation)
    coefficients = as_vector(coefficients).copy()
    if coefficients.size != len(generation):
        raise ValueError(
            f"{coefficients.size} coefficients for a generation of {len(generation)}"
        )
    rows = np.stack([p.payload for p in generation])
    return CodedPacket(
        generation_id=generation[0].generation_id,
        generation_size=len(generation),
        kind=PacketKind.CODED,
        payload=combine(coefficients, rows),
        coefficients=coefficients,
    )


def draw_coefficients(k: int, rng: np.random.Generator) -> np.ndarray:
    # The all-zero vector carries no information; draw again.
    while True:
        c = rng.integers(0, 256, size=k, dtype=np.uint8)
        if c.any():
            return c


def encode_coded(
    generation: Sequence[SourcePacket], rng: np.random.Generator
) -> CodedPacket:
    """
    Random linear combination of the whole generation, with coefficients
    drawn uniformly from GF(256) (never all zero).
    """
    _check_generation(generation)
    return encode_with(generation, draw_coefficients(len(generation), rng))


@dataclass
class DecoderState:
    generation_id: int
    k: int
    symbol_size: int
    matrix: np.ndarray = field(init=False, repr=False)
    payloads: np.ndarray = field(init=False, repr=False)
    has_pivot: np.ndarray = field(init=False, repr=False)
    rank: int = field(init=False, default=0)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"generation size must be positive, got {self.k}")
        self.matrix = np.zeros((self.k, self.k), dtype=np.uint8)
        self.payloads = np.zeros((self.k, self.symbol_size), dtype=np.uint8)
        self.has_pivot = np.zeros(self.k, dtype=bool)

    @property
    def dofs_needed(self) -> int:
        return self.k - self.rank

    @property
    def complete(self) -> bool:
        return self.rank == self.k


def decoder_add(state: DecoderState, pkt: CodedPacket) -> Innovation:
    """
    Eliminate ``pkt`` against the rows held so far.

    If what remains is nonzero, it is normalized, cleared out of every other
    row, and stored as a new pivot row. Otherwise the packet was redundant
    and ``state`` is left untouched.
    """
    if pkt.generation_id != state.generation_id:
        raise ValueError(
            f"packet of generation {pkt.generation_id} fed to decoder "
            f"of generation {state.generation_id}"
        )
    if pkt.generation_size != state.k:
        raise ValueError(
            f"coefficient length {pkt.generation_size} != generation size {state.k}"
        )
    if pkt.payload.size != state.symbol_size:
        raise ValueError(
            f"payload of {pkt.payload.size} bytes, decoder expects {state.symbol_size}"
        )
    if state.rank == state.k:
        return Innovation.REDUNDANT

    row = pkt.coefficient_vector().copy()
    payload = pkt.payload.copy()

    # Rows are reduced, so each pivot row is zero in every other pivot column
    # and all pivots can be cleared in one pass.
    pivots = np.flatnonzero(state.has_pivot)
    factors = row[pivots]
    hit = factors != 0
    if hit.any():
        used = pivots[hit]
        f = factors[hit][:, None]
        row ^= np.bitwise_xor.reduce(MUL[f, state.matrix[used]], axis=0)
        if state.symbol_size:
            payload ^= np.bitwise_xor.reduce(MUL[f, state.payloads[used]], axis=0)

    nonzero = np.flatnonzero(row)
    if nonzero.size == 0:
        return Innovation.REDUNDANT

    q = int(nonzero[0])
    scale = INV[row[q]]
    row = MUL[scale][row]
    payload = MUL[scale][payload]

    # Clear column q from the rows already held.
    col = state.matrix[:, q]
    others = np.flatnonzero(col)
    if others.size:
        f = col[others][:, None]
        state.matrix[others] ^= MUL[f, row[None, :]]
        if state.symbol_size:
            state.payloads[others] ^= MUL[f, payload[None, :]]

    state.matrix[q] = row
    state.payloads[q] = payload
    state.has_pivot[q] = True
    state.rank += 1
    return Innovation.INNOVATIVE


def decoder_extract(state: DecoderState) -> List[np.ndarray]:
    if state.rank < state.k:
        raise NotDecodableError(state.generation_id, state.dofs_needed)
    return [state.payloads[i].copy() for i in range(state.k)]


def is_reduced(state: DecoderState) -> bool:
    """Check the row-echelon invariant of ``state``."""
    for q in range(state.k):
        if state.has_pivot[q]:
            row = state.matrix[q]
            if row[q] != 1 or row[:q].any():
                return False
            if np.count_nonzero(state.matrix[:, q]) != 1:
                return False
        elif state.matrix[q].any():
            return False
    return True


def rank_of(rows: Sequence[Sequence[int]]) -> int:
    """
    Rank over GF(256) by Gaussian elimination from scratch.
    Independent of ``DecoderState``; used as an oracle.
    """
    m = [list(int(v) for v in r) for r in rows]
    if not m:
        return 0
    n_cols = len(m[0])
    rank = 0
    for col in range(n_cols):
        pivot = next((r for r in range(rank, len(m)) if m[r][col]), None)
        if pivot is None:
            continue
        m[rank], m[pivot] = m[pivot], m[rank]
        inv = int(INV[m[rank][col]])
        m[rank] = [int(MUL[inv, v]) for v in m[rank]]
        for r in range(len(m)):
            if r != rank and m[r][col]:
                f = m[r][col]
                m[r] = [a ^ int(MUL[f, b]) for a, b in zip(m[r], m[rank])]
        rank += 1
    return rank
