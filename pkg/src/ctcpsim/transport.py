"""
Sender and receiver state machines.

The sender cuts the transfer into generations, sends each source packet
once uncoded, follows up with proactive coded packets sized by the loss
estimate, and sends repair packets when acknowledgements show that a
generation cannot reach full rank from what is already on the way.

The receiver feeds every frame to the generation's decoder, answers every
frame with exactly one ack, and releases generations to the application in
order as they decode.

Baseline variants (``Variant.coded`` is false) use the same framing with
coding switched off: no coded packets at all. Acks echo the index of the
source packet they answer, so the sender knows exactly which indices the
receiver holds. A gap-detected loss of an original transmission is
retransmitted; a lost retransmission is only recovered after a
retransmission timeout, which resends every index not yet echoed.

The retransmission timer stays armed while any generation is open, so a
flow with nothing in flight and a generation short of full rank still
times out and recovers.

Frames travel over FIFO links, so an ack for sequence number ``s`` settles
every frame with a lower sequence number: it either arrived earlier or was
lost.

Functions here change the state they are given and return it.
"""
import collections
import logging
import math
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Tuple

import numpy as np

from .congestion import (
    CcState,
    Phase,
    RttSample,
    Variant,
    cc_on_ack,
    cc_on_congestion_loss,
    cc_on_timeout,
    new_cc_state,
)
from .rlnc import (
    CodedPacket,
    DecoderState,
    Innovation,
    PacketKind,
    SourcePacket,
    count_generations,
    decoder_add,
    decoder_extract,
    encode_coded,
    make_generation,
)

logger = logging.getLogger(__name__)

# Frame layout, for byte accounting only:
#   flow id 2, generation id 4, kind/index 2, generation size 2,
#   sequence number 4, timestamp 6, transfer length 4.
HEADER_BYTES = 24
ACK_BYTES = 40

RTO_MIN = 0.2
RTO_MAX = 60.0
RTO_INITIAL = 1.0

# Sending rate as a multiple of cwnd / srtt.
PACING_GAIN_SLOW_START = 2.0
PACING_GAIN_AVOIDANCE = 1.2

LOSS_EWMA_WEIGHT = 0.1
LOSS_WINDOW = 100
LOSS_CLAMP = 0.9

# Slack for float products that should be whole numbers.
_EPS = 1e-9


@dataclass(frozen=True)
class DataFrame:
    flow_id: int
    sequence_number: int
    send_timestamp: float
    packet: CodedPacket
    transfer_bytes: int
    symbol_size: int
    retransmission: bool = False

    @property
    def generation_id(self) -> int:
        return self.packet.generation_id

    @property
    def kind(self) -> PacketKind:
        return self.packet.kind

    @property
    def size_bytes(self) -> int:
        size = HEADER_BYTES + self.symbol_size
        if self.packet.kind is PacketKind.CODED:
            size += self.packet.generation_size
        return size


@dataclass(frozen=True)
class AckFrame:
    flow_id: int
    generation_id: int
    rank_seen: int
    dofs_needed: int
    echo_timestamp: float
    highest_sequence_seen: int
    # Cumulative count of data frames received; the gap against
    # ``highest_sequence_seen`` is the number of frames lost.
    frames_received: int
    # Generations released to the application so far.
    delivered_up_to: int
    # Index of the systematic packet this ack answers; None for coded ones.
    packet_index: Optional[int] = None

    size_bytes = ACK_BYTES


@dataclass
class LossEstimator:
    """
    Packet loss probability from sequence gaps.

    Counts accumulate until ``window`` sequence numbers are covered; each
    full window is one sample. The first sample sets ``p_hat``; later ones
    are smoothed in with weight ``ewma_weight``.
    """

    p_hat: float = 0.0
    ewma_weight: float = LOSS_EWMA_WEIGHT
    window: int = LOSS_WINDOW
    counted_sent: int = 0
    counted_lost: int = 0
    total_sent: int = 0
    total_lost: int = 0
    samples: int = 0

    def observe(self, covered: int, lost: int) -> None:
        if covered <= 0:
            return
        lost = min(max(lost, 0), covered)
        self.counted_sent += covered
        self.counted_lost += lost
        self.total_sent += covered
        self.total_lost += lost
        if self.counted_sent >= self.window:
            sample = self.counted_lost / self.counted_sent
            if self.samples == 0:
                p = sample
            else:
                p = (1.0 - self.ewma_weight) * self.p_hat + self.ewma_weight * sample
            self.p_hat = min(max(p, 0.0), LOSS_CLAMP)
            self.samples += 1
            self.counted_sent = 0
            self.counted_lost = 0


def redundancy_count(k: int, p_hat: float) -> int:
    """Proactive coded packets so that ``k`` dofs are expected to arrive."""
    if not 0.0 <= p_hat <= LOSS_CLAMP:
        raise ValueError(f"loss estimate {p_hat} outside [0, {LOSS_CLAMP}]")
    return max(math.ceil(k * p_hat / (1.0 - p_hat) - _EPS), 0)


def repair_count(dofs_needed: int, p_hat: float) -> int:
    if dofs_needed <= 0:
        return 0
    return math.ceil(dofs_needed / (1.0 - p_hat) - _EPS)


@dataclass
class SentRecord:
    generation_id: int
    index: Optional[int]
    retransmission: bool


@dataclass
class GenerationProgress:
    generation_id: int
    packets: List[SourcePacket]
    next_systematic: int = 0
    # Set when the last systematic packet goes out.
    proactive_quota: Optional[int] = None
    proactive_sent: int = 0
    repair_pending: int = 0
    last_sequence: int = -1
    rank_seen: int = 0
    frames_sent: int = 0
    # Baselines only: indices known to have arrived, and indices to resend.
    acked_indices: set = field(default_factory=set)
    retransmit: Deque[int] = field(default_factory=collections.deque)

    @property
    def k(self) -> int:
        return len(self.packets)

    @property
    def send_phase_done(self) -> bool:
        return (
            self.next_systematic >= self.k
            and self.proactive_quota is not None
            and self.proactive_sent >= self.proactive_quota
        )


@dataclass
class SenderCounters:
    frames_sent: int = 0
    bytes_sent: int = 0
    systematic_frames: int = 0
    proactive_frames: int = 0
    repair_frames: int = 0
    retransmitted_frames: int = 0
    coefficient_bytes: int = 0
    congestion_events: int = 0
    timeouts: int = 0


@dataclass
class SenderState:
    flow_id: int
    variant: Variant
    cc: CcState
    data: np.ndarray
    generation_size: int
    symbol_size: int
    rng: np.random.Generator
    carry_payload: bool = True
    max_open_generations: int = 128
    loss_estimator: LossEstimator = field(default_factory=LossEstimator)

    srtt: Optional[float] = None
    rttvar: Optional[float] = None
    rto: float = RTO_INITIAL
    rto_backoff: int = 1
    timer_deadline: Optional[float] = None

    next_sequence: int = 0
    highest_sequence_acked: int = -1
    frames_received_seen: int = 0
    outstanding: "collections.OrderedDict[int, SentRecord]" = field(
        default_factory=collections.OrderedDict
    )
    generations: Dict[int, GenerationProgress] = field(default_factory=dict)
    next_generation_id: int = 0
    total_generations: int = 0
    pending_losses: int = 0
    last_backoff_time: float = -math.inf
    progress_mark: Tuple[int, int] = (0, 0)
    counters: SenderCounters = field(default_factory=SenderCounters)

    def __post_init__(self):
        self.total_generations = count_generations(
            self.transfer_bytes, self.generation_size, self.symbol_size
        )

    @property
    def transfer_bytes(self) -> int:
        return int(self.data.size)

    @property
    def in_flight(self) -> int:
        return len(self.outstanding)

    @property
    def done(self) -> bool:
        return self.next_generation_id >= self.total_generations and not self.generations


def new_sender(
    flow_id: int,
    variant,
    data: np.ndarray,
    *,
    generation_size: int,
    symbol_size: int,
    rng: np.random.Generator,
    now: float = 0.0,
    carry_payload: bool = True,
    max_open_generations: int = 128,
    receive_window_bytes: Optional[int] = None,
) -> SenderState:
    variant = Variant(variant)
    clamp = math.inf
    if receive_window_bytes:
        clamp = receive_window_bytes / (HEADER_BYTES + symbol_size)
    return SenderState(
        flow_id=flow_id,
        variant=variant,
        cc=new_cc_state(variant, now=now, cwnd_clamp=clamp),
        data=data,
        generation_size=generation_size,
        symbol_size=symbol_size,
        rng=rng,
        carry_payload=carry_payload,
        max_open_generations=max_open_generations,
    )


def update_rto(state: SenderState, rtt: float) -> SenderState:
    """Smoothed RTT and variance with gains 1/8 and 1/4; RTO clamped to [0.2 s, 60 s]."""
    if not rtt > 0:
        raise ValueError(f"RTT must be positive, got {rtt}")
    if state.srtt is None:
        state.srtt = rtt
        state.rttvar = rtt / 2.0
    else:
        state.rttvar = 0.75 * state.rttvar + 0.25 * abs(state.srtt - rtt)
        state.srtt = 0.875 * state.srtt + 0.125 * rtt
    state.rto = min(max(state.srtt + 4.0 * state.rttvar, RTO_MIN), RTO_MAX)
    state.rto_backoff = 1
    return state


def pacing_interval(state: SenderState) -> float:
    """
    Seconds between consecutive frames: ``srtt / (gain * cwnd)``, with the
    gain 2 in slow start and 1.2 afterwards. 0 until the first RTT sample.
    """
    if state.srtt is None:
        return 0.0
    gain = PACING_GAIN_SLOW_START if state.cc.phase is Phase.SLOW_START else PACING_GAIN_AVOIDANCE
    return state.srtt / (gain * state.cc.cwnd)


def _arm_timer(state: SenderState, now: float) -> None:
    if state.outstanding or state.generations:
        state.timer_deadline = now + min(state.rto * state.rto_backoff, RTO_MAX)
    else:
        state.timer_deadline = None


def _current_generation(state: SenderState) -> Optional[GenerationProgress]:
    gen = state.generations.get(state.next_generation_id - 1)
    if gen is not None and not gen.send_phase_done:
        return gen
    return None


def _open_generation(state: SenderState) -> Optional[GenerationProgress]:
    if state.next_generation_id >= state.total_generations:
        return None
    if len(state.generations) >= state.max_open_generations:
        return None
    gid = state.next_generation_id
    packets = make_generation(
        state.data, gid, state.generation_size, state.symbol_size,
        carry_payload=state.carry_payload,
    )
    gen = GenerationProgress(gid, packets)
    state.generations[gid] = gen
    state.next_generation_id += 1
    logger.debug("flow %d opened generation %d (k=%d)", state.flow_id, gid, gen.k)
    return gen


def _stamp(
    state: SenderState, gen: GenerationProgress, packet: CodedPacket, now: float,
    *, retransmission: bool = False,
) -> DataFrame:
    seq = state.next_sequence
    state.next_sequence += 1
    frame = DataFrame(
        flow_id=state.flow_id,
        sequence_number=seq,
        send_timestamp=now,
        packet=packet,
        transfer_bytes=state.transfer_bytes,
        symbol_size=state.symbol_size,
        retransmission=retransmission,
    )
    state.outstanding[seq] = SentRecord(gen.generation_id, packet.index, retransmission)
    gen.last_sequence = seq
    gen.frames_sent += 1

    c = state.counters
    c.frames_sent += 1
    c.bytes_sent += frame.size_bytes
    if packet.kind is PacketKind.CODED:
        c.coefficient_bytes += packet.generation_size
    if state.timer_deadline is None:
        _arm_timer(state, now)
    return frame


def _systematic(state: SenderState, gen: GenerationProgress, now: float) -> DataFrame:
    packet = CodedPacket.systematic(gen.packets[gen.next_systematic], gen.k)
    gen.next_systematic += 1
    if gen.next_systematic == gen.k:
        gen.proactive_quota = (
            redundancy_count(gen.k, state.loss_estimator.p_hat) if state.variant.coded else 0
        )
    state.counters.systematic_frames += 1
    return _stamp(state, gen, packet, now)


def _repair(state: SenderState, now: float) -> Optional[DataFrame]:
    for gen in state.generations.values():
        if state.variant.coded:
            if gen.repair_pending > 0:
                gen.repair_pending -= 1
                state.counters.repair_frames += 1
                return _stamp(state, gen, encode_coded(gen.packets, state.rng), now)
            continue
        while gen.retransmit:
            index = gen.retransmit.popleft()
            if index in gen.acked_indices:
                continue
            state.counters.retransmitted_frames += 1
            packet = CodedPacket.systematic(gen.packets[index], gen.k)
            return _stamp(state, gen, packet, now, retransmission=True)
    return None


def sender_next_frame(state: SenderState, now: float) -> Optional[DataFrame]:
    """
    Next frame to put on the wire, or ``None`` when the window is full or
    there is nothing to send.

    Priority: repair for the oldest generation that needs it; unsent
    systematic packets of the current generation; its proactive coded
    packets; the first systematic packet of a new generation.
    """
    if state.in_flight >= state.cc.cwnd:
        return None

    frame = _repair(state, now)
    if frame is not None:
        return frame

    gen = _current_generation(state)
    if gen is not None:
        if gen.next_systematic < gen.k:
            return _systematic(state, gen, now)
        gen.proactive_sent += 1
        state.counters.proactive_frames += 1
        return _stamp(state, gen, encode_coded(gen.packets, state.rng), now)

    gen = _open_generation(state)
    if gen is not None:
        return _systematic(state, gen, now)
    return None


def _retire(state: SenderState, gid: int) -> None:
    gen = state.generations.pop(gid, None)
    if gen is None:
        return
    if gen.repair_pending or (
        gen.proactive_quota is not None and gen.proactive_sent < gen.proactive_quota
    ):
        logger.debug("flow %d generation %d decoded; unsent redundancy canceled",
                     state.flow_id, gid)
    gen.repair_pending = 0
    gen.proactive_quota = gen.proactive_sent
    gen.retransmit.clear()


def _schedule_repairs(state: SenderState) -> None:
    # A generation whose frames are all accounted for and whose reported
    # rank is short gets one repair round; the next round waits until that
    # one is accounted for as well.
    p_hat = state.loss_estimator.p_hat
    for gen in state.generations.values():
        if not gen.send_phase_done or gen.repair_pending:
            continue
        if gen.last_sequence > state.highest_sequence_acked:
            continue
        deficit = gen.k - gen.rank_seen
        if deficit > 0:
            gen.repair_pending = repair_count(deficit, p_hat)
            logger.debug("flow %d generation %d short by %d dofs; %d repair frames",
                         state.flow_id, gen.generation_id, deficit, gen.repair_pending)


def _progress(state: SenderState) -> Tuple[int, int]:
    for gen in state.generations.values():
        return gen.generation_id, gen.rank_seen
    return state.next_generation_id, 0


def sender_on_ack(state: SenderState, ack: AckFrame, now: float) -> SenderState:
    if ack.flow_id != state.flow_id:
        raise ValueError(f"ack for flow {ack.flow_id} delivered to flow {state.flow_id}")

    rtt = now - ack.echo_timestamp
    if rtt > 0:
        update_rto(state, rtt)
        state.cc = cc_on_ack(state.cc, RttSample(rtt, now))

    baseline = not state.variant.coded
    gen = state.generations.get(ack.generation_id)
    if baseline and gen is not None and ack.packet_index is not None:
        gen.acked_indices.add(ack.packet_index)

    covered = ack.highest_sequence_seen - state.highest_sequence_acked
    if covered > 0:
        received = ack.frames_received - state.frames_received_seen
        lost = max(covered - received, 0)
        state.loss_estimator.observe(covered, lost)
        state.pending_losses += lost
        state.highest_sequence_acked = ack.highest_sequence_seen
        state.frames_received_seen = ack.frames_received

        while state.outstanding:
            seq, record = next(iter(state.outstanding.items()))
            if seq > ack.highest_sequence_seen:
                break
            del state.outstanding[seq]
            if seq < ack.highest_sequence_seen and baseline and not record.retransmission:
                lost_gen = state.generations.get(record.generation_id)
                if lost_gen is not None and record.index not in lost_gen.acked_indices:
                    lost_gen.retransmit.append(record.index)
    else:
        # Frames written off by a timeout that arrived after all.
        state.frames_received_seen = max(state.frames_received_seen, ack.frames_received)

    if gen is not None:
        gen.rank_seen = max(gen.rank_seen, ack.rank_seen)
        if gen.rank_seen >= gen.k:
            _retire(state, gen.generation_id)
    for gid in [g for g in state.generations if g < ack.delivered_up_to]:
        _retire(state, gid)

    if not baseline:
        _schedule_repairs(state)
        _arm_timer(state, now)
    else:
        # The timer measures time without progress on the oldest generation.
        mark = _progress(state)
        if mark != state.progress_mark or not state.outstanding:
            state.progress_mark = mark
            _arm_timer(state, now)

    if state.pending_losses:
        detect_loss_and_backoff(state, now)
    return state


def detect_loss_and_backoff(
    state: SenderState, now: float, *, timer_expired: bool = False
) -> SenderState:
    """
    Gap-implied losses: one congestion reaction per smoothed RTT, with the
    smoothed RTT as the RTT at loss. Timer expiry: timeout reaction, RTO
    back-off, and everything in flight is written off.
    """
    if timer_expired:
        state.counters.timeouts += 1
        state.cc = cc_on_timeout(state.cc)
        state.rto_backoff = min(state.rto_backoff * 2, int(RTO_MAX / RTO_MIN))
        state.outstanding.clear()
        state.pending_losses = 0
        state.highest_sequence_acked = state.next_sequence - 1
        p_hat = state.loss_estimator.p_hat
        for gen in state.generations.values():
            if state.variant.coded:
                if gen.send_phase_done and gen.rank_seen < gen.k:
                    gen.repair_pending = repair_count(gen.k - gen.rank_seen, p_hat)
            else:
                queued = set(gen.retransmit)
                for index in range(gen.next_systematic):
                    if index not in gen.acked_indices and index not in queued:
                        gen.retransmit.append(index)
        state.timer_deadline = None
        logger.debug("flow %d retransmission timeout; cwnd reset, rto x%d",
                     state.flow_id, state.rto_backoff)
        return state

    if state.pending_losses <= 0:
        return state
    state.pending_losses = 0
    window = state.srtt if state.srtt is not None else 0.0
    if now - state.last_backoff_time < window:
        return state
    state.last_backoff_time = now
    state.counters.congestion_events += 1
    rtt_at_loss = state.srtt if state.srtt is not None else state.cc.rtt_min
    if rtt_at_loss is None or math.isinf(rtt_at_loss):
        return state
    state.cc = cc_on_congestion_loss(state.cc, rtt_at_loss, now)
    return state


def sender_on_timer(state: SenderState, now: float) -> SenderState:
    if state.timer_deadline is None or now < state.timer_deadline:
        return state
    return detect_loss_and_backoff(state, now, timer_expired=True)


@dataclass(frozen=True)
class DeliveredGeneration:
    generation_id: int
    time: float
    nbytes: int


@dataclass
class ReceiverState:
    flow_id: int
    transfer_bytes: int
    generation_size: int
    symbol_size: int
    carry_payload: bool = True
    decoders: Dict[int, DecoderState] = field(default_factory=dict)
    delivered_up_to: int = 0
    decode_events: List[DeliveredGeneration] = field(default_factory=list)
    frames_received: int = 0
    highest_sequence_seen: int = -1
    innovative_frames: int = 0
    redundant_frames: int = 0
    delivered_bytes: int = 0
    output: bytearray = field(default_factory=bytearray)

    @property
    def total_generations(self) -> int:
        return count_generations(self.transfer_bytes, self.generation_size, self.symbol_size)

    @property
    def complete(self) -> bool:
        return self.delivered_up_to >= self.total_generations

    def generation_bytes(self, gid: int) -> int:
        span = self.generation_size * self.symbol_size
        return max(min(span, self.transfer_bytes - gid * span), 0)


def receiver_on_data(
    state: ReceiverState, frame: DataFrame, now: float
) -> Tuple[AckFrame, List[DeliveredGeneration]]:
    state.frames_received += 1
    state.highest_sequence_seen = max(state.highest_sequence_seen, frame.sequence_number)
    gid = frame.generation_id
    k = frame.packet.generation_size
    released: List[DeliveredGeneration] = []

    if gid < state.delivered_up_to:
        rank = k
        state.redundant_frames += 1
    else:
        decoder = state.decoders.get(gid)
        if decoder is None:
            decoder = DecoderState(gid, k, frame.packet.payload.size)
            state.decoders[gid] = decoder
        if decoder_add(decoder, frame.packet) is Innovation.INNOVATIVE:
            state.innovative_frames += 1
        else:
            state.redundant_frames += 1
        rank = decoder.rank

        while True:
            nxt = state.decoders.get(state.delivered_up_to)
            if nxt is None or not nxt.complete:
                break
            released.append(_release(state, nxt, now))

    ack = AckFrame(
        flow_id=state.flow_id,
        generation_id=gid,
        rank_seen=rank,
        dofs_needed=k - rank,
        echo_timestamp=frame.send_timestamp,
        highest_sequence_seen=state.highest_sequence_seen,
        frames_received=state.frames_received,
        delivered_up_to=state.delivered_up_to,
        packet_index=frame.packet.index,
    )
    return ack, released


def _release(state: ReceiverState, decoder: DecoderState, now: float) -> DeliveredGeneration:
    gid = decoder.generation_id
    nbytes = state.generation_bytes(gid)
    if state.carry_payload:
        payloads = decoder_extract(decoder)
        state.output.extend(np.concatenate(payloads)[:nbytes].tobytes())
    del state.decoders[gid]
    state.delivered_up_to += 1
    state.delivered_bytes += nbytes
    event = DeliveredGeneration(gid, now, nbytes)
    state.decode_events.append(event)
    return event
