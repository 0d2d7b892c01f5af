"""
Deterministic discrete-event simulation of flows over a shared bottleneck.

The event loop is a ``simpy.Environment``. Every event is a timeout with one
callback; simpy breaks ties between events due at the same time by the order
they were scheduled, so a run is a pure function of the scenario and its seed.

Topology (``dumbbell``): every flow's data frames enter one forward link
and every ack enters one reverse link. A link erases a frame with
probability ``per`` when it is offered (one random draw per frame), then
applies drop-tail against its queue capacity, then serializes and
propagates the frame::

    result = simulate(Scenario(flows=[FlowSpec("ctcp_v2", 20_000_000)], per=0.2))
    result.flows[0].goodput_bps

Senders are paced: consecutive frames of a flow leave ``pacing_interval``
apart (``Scenario.pacing``), so a window is spread over the smoothed RTT.

Random streams are derived from the scenario seed by labels, so adding a
flow does not change the draws of the others:

- link ``i``: ``(0, i)`` (0 forward, 1 reverse)
- coding coefficients of flow ``i``: ``(1, i)``
- content of flow ``i``: ``(2, i)``
"""
import enum
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
import simpy

from .config import ConfigError
from .congestion import Variant
from .logging import VirtualClockFilter
from .rlnc import count_generations
from .transport import (
    HEADER_BYTES,
    AckFrame,
    DataFrame,
    DeliveredGeneration,
    ReceiverState,
    SenderState,
    new_sender,
    pacing_interval,
    receiver_on_data,
    sender_next_frame,
    sender_on_ack,
    sender_on_timer,
)

logger = logging.getLogger(__name__)

Frame = Union[DataFrame, AckFrame]


def stream(seed: int, domain: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(domain, index)))


@dataclass(frozen=True)
class LinkConfig:
    rate_bps: float
    one_way_delay: float
    per: float = 0.0
    queue_capacity: int = 1000

    def __post_init__(self):
        if not self.rate_bps > 0:
            raise ConfigError(f"link rate must be positive, got {self.rate_bps}")
        if self.one_way_delay < 0:
            raise ConfigError(f"one-way delay must not be negative, got {self.one_way_delay}")
        if not 0.0 <= self.per < 1.0:
            raise ConfigError(f"per must be in [0, 1), got {self.per}")
        if self.queue_capacity < 1:
            raise ConfigError(f"queue capacity must be >= 1, got {self.queue_capacity}")

    def serialization_time(self, size_bytes: int) -> float:
        return size_bytes * 8 / self.rate_bps


@dataclass(frozen=True)
class FlowSpec:
    variant: Variant
    transfer_bytes: int
    start_time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.transfer_bytes < 0:
            raise ConfigError(f"transfer size must not be negative, got {self.transfer_bytes}")
        if self.start_time < 0:
            raise ConfigError(f"start time must not be negative, got {self.start_time}")


@dataclass(frozen=True)
class Scenario:
    flows: Tuple[FlowSpec, ...]
    rate_bps: float = 10e6
    rtt: float = 0.5
    per: float = 0.0
    seed: int = 0
    generation_size: int = 32
    symbol_size: int = 1000
    # Packets; None means one bandwidth-delay product.
    queue_capacity: Optional[int] = None
    max_open_generations: int = 128
    # Erase acks on the reverse link with the same probability.
    ack_loss: bool = False
    duration_cap: float = 600.0
    receive_window_bytes: int = 4 * 1024 * 1024
    carry_payload: bool = True
    # Spread each window over the smoothed RTT instead of sending it at once.
    pacing: bool = True
    record_cwnd: bool = False

    def __post_init__(self):
        object.__setattr__(self, "flows", tuple(self.flows))

    def validate(self) -> "Scenario":
        if not self.flows:
            raise ConfigError("scenario has no flows")
        if not 1 <= self.generation_size <= 255:
            raise ConfigError(f"generation size must be in [1, 255], got {self.generation_size}")
        if self.symbol_size < 1:
            raise ConfigError(f"symbol size must be positive, got {self.symbol_size}")
        if not self.rtt > 0:
            raise ConfigError(f"rtt must be positive, got {self.rtt}")
        if not self.duration_cap > 0:
            raise ConfigError(f"duration cap must be positive, got {self.duration_cap}")
        if self.max_open_generations < 1:
            raise ConfigError(
                f"max_open_generations must be >= 1, got {self.max_open_generations}"
            )
        self.forward_link()
        self.reverse_link()
        return self

    @property
    def bdp_packets(self) -> int:
        return max(math.ceil(self.rate_bps * self.rtt / 8 / (HEADER_BYTES + self.symbol_size)), 1)

    def forward_link(self) -> LinkConfig:
        return LinkConfig(
            rate_bps=self.rate_bps,
            one_way_delay=self.rtt / 2,
            per=self.per,
            queue_capacity=self.queue_capacity or self.bdp_packets,
        )

    def reverse_link(self) -> LinkConfig:
        # Acks are small; the reverse queue never limits them.
        capacity = max(self.queue_capacity or self.bdp_packets, 1) * 64
        return LinkConfig(
            rate_bps=self.rate_bps,
            one_way_delay=self.rtt / 2,
            per=self.per if self.ack_loss else 0.0,
            queue_capacity=capacity,
        )


class EventKind(str, enum.Enum):
    FRAME_ARRIVAL = "frame_arrival"
    TIMER = "timer"
    PACE = "pace"
    FLOW_START = "flow_start"


class Event(NamedTuple):
    time: float
    ordinal: int
    kind: EventKind


class Simulator:
    """
    Thin layer over ``simpy.Environment`` that numbers events and checks
    that the virtual clock never goes back.
    """

    def __init__(self):
        self.env = simpy.Environment()
        self.scheduled = 0
        self.executed = 0
        self._last_time = 0.0

    @property
    def now(self) -> float:
        return self.env.now

    def schedule(self, time: float, kind: EventKind, action: Callable[[], None]) -> Event:
        if time < self.env.now:
            raise ValueError(f"cannot schedule at {time} before now ({self.env.now})")
        event = Event(time, self.scheduled, kind)
        self.scheduled += 1

        def fire(_):
            if self.env.now < self._last_time:
                raise RuntimeError(f"virtual clock went back to {self.env.now}")
            self._last_time = self.env.now
            self.executed += 1
            action()

        self.env.timeout(time - self.env.now).callbacks.append(fire)
        return event

    def run(self, until: simpy.Event) -> None:
        previous = VirtualClockFilter.bind(lambda: self.env.now)
        try:
            self.env.run(until=until)
        finally:
            VirtualClockFilter.bind(previous)


class DropReason(str, enum.Enum):
    ERASED = "erased"
    QUEUE_FULL = "queue_full"


class DropRecord(NamedTuple):
    time: float
    frame: Frame
    reason: DropReason


@dataclass
class LinkStats:
    offered: int = 0
    erased: int = 0
    dropped: int = 0
    accepted: int = 0
    delivered: int = 0
    bytes_delivered: int = 0

    @property
    def in_transit(self) -> int:
        return self.accepted - self.delivered


@dataclass
class Link:
    name: str
    config: LinkConfig
    rng: np.random.Generator
    sim: Simulator
    sink: Callable[[Frame], None]
    busy_until: float = 0.0
    # Departure times of frames queued or in service, in FIFO order.
    departures: Deque[float] = field(default_factory=deque)
    stats: LinkStats = field(default_factory=LinkStats)

    @property
    def occupancy(self) -> int:
        return len(self.departures)


def link_transmit(link: Link, frame: Frame, now: float) -> Union[Event, DropRecord]:
    """
    Offer ``frame`` to ``link`` at time ``now``.

    The erasure draw comes first, so every offered frame consumes exactly one
    draw. A surviving frame is tail-dropped if the queue (counting the frame
    in service) is full, otherwise it leaves after everything ahead of it has
    been serialized and arrives ``one_way_delay`` later.
    """
    link.stats.offered += 1
    cfg = link.config
    if link.rng.random() < cfg.per:
        link.stats.erased += 1
        return DropRecord(now, frame, DropReason.ERASED)

    while link.departures and link.departures[0] <= now:
        link.departures.popleft()
    if link.occupancy >= cfg.queue_capacity:
        link.stats.dropped += 1
        return DropRecord(now, frame, DropReason.QUEUE_FULL)

    depart = max(now, link.busy_until) + cfg.serialization_time(frame.size_bytes)
    link.busy_until = depart
    link.departures.append(depart)
    link.stats.accepted += 1

    def arrive():
        link.stats.delivered += 1
        link.stats.bytes_delivered += frame.size_bytes
        link.sink(frame)

    return link.sim.schedule(depart + cfg.one_way_delay, EventKind.FRAME_ARRIVAL, arrive)


@dataclass
class FlowStats:
    flow_id: int
    variant: Variant
    transfer_bytes: int
    start_time: float
    completion_time: Optional[float] = None
    incomplete: bool = False
    end_time: float = 0.0
    delivered_bytes: int = 0
    frames_sent: int = 0
    bytes_sent: int = 0
    systematic_frames: int = 0
    proactive_frames: int = 0
    repair_frames: int = 0
    retransmitted_frames: int = 0
    coefficient_bytes: int = 0
    congestion_events: int = 0
    timeouts: int = 0
    frames_received: int = 0
    innovative_frames: int = 0
    redundant_frames: int = 0
    p_hat: float = 0.0
    # None when payloads were not carried.
    verified: Optional[bool] = None
    decode_events: List[DeliveredGeneration] = field(default_factory=list)
    cwnd_series: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def duration(self) -> float:
        if self.completion_time is not None:
            return self.completion_time
        return self.end_time - self.start_time

    @property
    def delivery_span(self) -> float:
        """From flow start to the last delivery to the application."""
        if not self.decode_events:
            return 0.0
        return self.decode_events[-1].time - self.start_time

    @property
    def goodput_bps(self) -> float:
        """Application bits over the time from flow start to the last delivery."""
        span = self.delivery_span
        return self.delivered_bytes * 8 / span if span > 0 else 0.0

    @property
    def overhead_fraction(self) -> float:
        """Share of bytes on the wire that were not application data."""
        if self.bytes_sent == 0:
            return 0.0
        return max(1.0 - self.delivered_bytes / self.bytes_sent, 0.0)

    def delivered_bytes_until(self, t: float) -> int:
        return sum(e.nbytes for e in self.decode_events if e.time <= t)


class FlowEndpoint:
    """Sender and receiver of one flow, wired to the links."""

    def __init__(self, flow_id: int, spec: FlowSpec, scenario: Scenario, sim: Simulator):
        self.flow_id = flow_id
        self.spec = spec
        self.scenario = scenario
        self.sim = sim
        self.forward: Optional[Link] = None
        self.reverse: Optional[Link] = None
        self.on_complete: Callable[["FlowEndpoint"], None] = lambda _: None

        content = stream(scenario.seed, 2, flow_id)
        self.data = content.integers(0, 256, size=spec.transfer_bytes, dtype=np.uint8)
        self.sender: SenderState = new_sender(
            flow_id,
            spec.variant,
            self.data,
            generation_size=scenario.generation_size,
            symbol_size=scenario.symbol_size,
            rng=stream(scenario.seed, 1, flow_id),
            now=spec.start_time,
            carry_payload=scenario.carry_payload,
            max_open_generations=scenario.max_open_generations,
            receive_window_bytes=scenario.receive_window_bytes,
        )
        self.receiver: Optional[ReceiverState] = None
        self.stats = FlowStats(flow_id, spec.variant, spec.transfer_bytes, spec.start_time)
        self.complete = False
        self._timer_at: Optional[float] = None
        # Earliest time the next frame may leave, and the pending pace event.
        self._next_send = spec.start_time
        self._pace_at: Optional[float] = None

    def start(self) -> None:
        logger.debug("flow %d (%s) starts", self.flow_id, self.spec.variant.value)
        if count_generations(self.spec.transfer_bytes, self.scenario.generation_size,
                             self.scenario.symbol_size) == 0:
            self._finish(self.sim.now)
            return
        self._record_cwnd()
        self.pump()

    def pump(self) -> None:
        if self.complete:
            return
        now = self.sim.now
        while now >= self._next_send:
            frame = sender_next_frame(self.sender, now)
            if frame is None:
                break
            link_transmit(self.forward, frame, now)
            if self.scenario.pacing:
                self._next_send = max(self._next_send, now) + pacing_interval(self.sender)
        if self._next_send > now and self._pace_at is None:
            self._pace_at = self._next_send
            self.sim.schedule(self._next_send, EventKind.PACE, self._on_pace)
        self._ensure_timer()

    def _on_pace(self) -> None:
        self._pace_at = None
        self.pump()

    def _ensure_timer(self) -> None:
        # One pending timer event at a time; it re-arms itself if the
        # deadline moved while it was waiting.
        deadline = self.sender.timer_deadline
        if deadline is None:
            return
        if self._timer_at is not None and self._timer_at <= deadline:
            return
        self._timer_at = deadline
        self.sim.schedule(deadline, EventKind.TIMER, lambda: self._on_timer(deadline))

    def _on_timer(self, scheduled: float) -> None:
        if self.complete or self._timer_at != scheduled:
            return
        self._timer_at = None
        deadline = self.sender.timer_deadline
        if deadline is None:
            return
        if self.sim.now < deadline:
            self._ensure_timer()
            return
        sender_on_timer(self.sender, self.sim.now)
        self._record_cwnd()
        self.pump()

    def on_data(self, frame: DataFrame) -> None:
        now = self.sim.now
        if self.receiver is None:
            self.receiver = ReceiverState(
                flow_id=self.flow_id,
                transfer_bytes=frame.transfer_bytes,
                generation_size=self.scenario.generation_size,
                symbol_size=frame.symbol_size,
                carry_payload=self.scenario.carry_payload,
            )
        ack, released = receiver_on_data(self.receiver, frame, now)
        if released:
            self.stats.decode_events.extend(released)
            self.stats.delivered_bytes = self.receiver.delivered_bytes
        link_transmit(self.reverse, ack, now)

    def on_ack(self, ack: AckFrame) -> None:
        if self.complete:
            return
        # The transfer is over once the sender hears that everything decoded.
        if ack.delivered_up_to >= self.sender.total_generations:
            self._finish(self.sim.now)
            return
        sender_on_ack(self.sender, ack, self.sim.now)
        self._record_cwnd()
        self.pump()

    def _record_cwnd(self) -> None:
        if not self.scenario.record_cwnd:
            return
        cwnd = self.sender.cc.cwnd
        series = self.stats.cwnd_series
        if not series or series[-1][1] != cwnd:
            series.append((self.sim.now, cwnd))

    def _finish(self, now: float) -> None:
        self.complete = True
        self.stats.completion_time = now - self.spec.start_time
        if self.receiver is not None and self.scenario.carry_payload:
            self.stats.verified = bytes(self.receiver.output) == self.data.tobytes()
        elif self.scenario.carry_payload:
            self.stats.verified = True
        logger.debug("flow %d complete after %.3f s", self.flow_id, self.stats.completion_time)
        self.on_complete(self)

    def collect(self, end_time: float) -> FlowStats:
        s = self.stats
        c = self.sender.counters
        s.end_time = end_time
        s.incomplete = not self.complete
        s.frames_sent = c.frames_sent
        s.bytes_sent = c.bytes_sent
        s.systematic_frames = c.systematic_frames
        s.proactive_frames = c.proactive_frames
        s.repair_frames = c.repair_frames
        s.retransmitted_frames = c.retransmitted_frames
        s.coefficient_bytes = c.coefficient_bytes
        s.congestion_events = c.congestion_events
        s.timeouts = c.timeouts
        s.p_hat = self.sender.loss_estimator.p_hat
        if self.receiver is not None:
            s.frames_received = self.receiver.frames_received
            s.innovative_frames = self.receiver.innovative_frames
            s.redundant_frames = self.receiver.redundant_frames
            s.delivered_bytes = self.receiver.delivered_bytes
        return s


@dataclass
class Network:
    sim: Simulator
    forward: Link
    reverse: Link
    endpoints: List[FlowEndpoint]


def dumbbell(scenario: Scenario, sim: Optional[Simulator] = None) -> Network:
    """
    Wire every flow of ``scenario`` through one forward bottleneck and one
    reverse link; frames are handed to their flow by flow id.
    """
    scenario.validate()
    sim = sim or Simulator()
    endpoints = [FlowEndpoint(i, spec, scenario, sim) for i, spec in enumerate(scenario.flows)]

    def to_receivers(frame: DataFrame) -> None:
        endpoints[frame.flow_id].on_data(frame)

    def to_senders(ack: AckFrame) -> None:
        endpoints[ack.flow_id].on_ack(ack)

    forward = Link("forward", scenario.forward_link(), stream(scenario.seed, 0, 0), sim, to_receivers)
    reverse = Link("reverse", scenario.reverse_link(), stream(scenario.seed, 0, 1), sim, to_senders)
    for ep in endpoints:
        ep.forward = forward
        ep.reverse = reverse
    return Network(sim, forward, reverse, endpoints)


@dataclass
class SimulationResult:
    scenario: Scenario
    flows: Dict[int, FlowStats]
    links: Dict[str, LinkStats]
    end_time: float
    events: int

    @property
    def incomplete(self) -> bool:
        return any(f.incomplete for f in self.flows.values())


def simulate(scenario: Scenario, network: Optional[Network] = None) -> SimulationResult:
    """
    Run ``scenario`` until every flow has delivered its transfer or the
    duration cap is reached. Flows still running at the cap are flagged
    ``incomplete``.

    ``network`` is the wiring from ``dumbbell(scenario)``, for callers that
    adjust the endpoints before the run; by default it is built here.
    """
    net = network or dumbbell(scenario)
    sim = net.sim
    all_done = sim.env.event()
    remaining = [len(net.endpoints)]

    def flow_done(_ep: FlowEndpoint) -> None:
        remaining[0] -= 1
        if remaining[0] == 0 and not all_done.triggered:
            all_done.succeed()

    for ep in net.endpoints:
        ep.on_complete = flow_done
        sim.schedule(ep.spec.start_time, EventKind.FLOW_START, ep.start)

    cap = sim.env.timeout(scenario.duration_cap)
    sim.run(until=sim.env.any_of([all_done, cap]))

    end = sim.now
    flows = {ep.flow_id: ep.collect(end) for ep in net.endpoints}
    for f in flows.values():
        if f.incomplete:
            logger.warning(
                "flow %d (%s) incomplete at the %.0f s cap: %d of %d bytes delivered",
                f.flow_id, f.variant.value, scenario.duration_cap,
                f.delivered_bytes, f.transfer_bytes,
            )
        elif f.verified is False:
            logger.warning("flow %d delivered data that differs from what was sent", f.flow_id)
    return SimulationResult(
        scenario=scenario,
        flows=flows,
        links={net.forward.name: net.forward.stats, net.reverse.name: net.reverse.stats},
        end_time=end,
        events=sim.executed,
    )


def run(scenario: Scenario) -> Dict[int, FlowStats]:
    return simulate(scenario).flows

