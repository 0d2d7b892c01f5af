"""
Congestion controllers as event-driven state machines.

Every controller is a ``CcState`` value plus three transitions::

    state = cc_on_ack(state, RttSample(rtt, now))
    state = cc_on_congestion_loss(state, rtt_at_loss, now)
    state = cc_on_timeout(state)

Each transition returns a new state and never modifies its input.
The window is counted in packets and may be fractional.

Variants:

``ctcp_v1``
    Reno increase; on loss the window is scaled by ``beta = rtt_min / rtt``,
    and left alone when ``rtt`` is within a small tolerance of ``rtt_min``
    (the loss is taken as an erasure, not as congestion).
``ctcp_v2``
    Same back-off; congestion avoidance grows by ``htcp_alpha`` per window,
    where the H-TCP clock runs from the last actual reduction.
``reno``, ``cubic``, ``hybla``
    Loss-based baselines, window dynamics only.
"""
import enum
import math
from dataclasses import dataclass, replace
from typing import Optional

CWND_FLOOR = 2.0
INITIAL_CWND = 2.0


class Variant(str, enum.Enum):
    CTCP_V1 = "ctcp_v1"
    CTCP_V2 = "ctcp_v2"
    RENO = "reno"
    CUBIC = "cubic"
    HYBLA = "hybla"

    @property
    def coded(self) -> bool:
        return self in (Variant.CTCP_V1, Variant.CTCP_V2)


class Phase(str, enum.Enum):
    SLOW_START = "slow_start"
    CONGESTION_AVOIDANCE = "congestion_avoidance"


@dataclass(frozen=True)
class VariantParams:
    # H-TCP: low-speed period (seconds) and the polynomial above it.
    htcp_delta_l: float = 1.0
    htcp_linear: float = 10.0
    htcp_quadratic: float = 0.25
    cubic_c: float = 0.4
    cubic_beta: float = 0.7
    hybla_rtt0: float = 0.025
    # A loss whose RTT is within this fraction of rtt_min does not reduce
    # the window of the ctcp variants.
    rtt_tolerance: float = 0.05


DEFAULT_PARAMS = VariantParams()


@dataclass(frozen=True)
class RttSample:
    rtt: float
    timestamp: float

    def __post_init__(self):
        if not self.rtt > 0:
            raise ValueError(f"RTT sample must be positive, got {self.rtt}")


@dataclass(frozen=True)
class CcState:
    variant: Variant
    cwnd: float = INITIAL_CWND
    phase: Phase = Phase.SLOW_START
    rtt_min: float = math.inf
    srtt: Optional[float] = None
    ssthresh: float = math.inf
    params: VariantParams = DEFAULT_PARAMS
    last_congestion_time: float = 0.0
    # Cubic epoch: window before the last reduction and when the epoch began.
    w_max: float = 0.0
    epoch_start: Optional[float] = None
    cwnd_floor: float = CWND_FLOOR
    # Receive window; the window never grows beyond it.
    cwnd_clamp: float = math.inf


def new_cc_state(
    variant, *, now: float = 0.0, params: VariantParams = DEFAULT_PARAMS,
    cwnd_clamp: float = math.inf,
) -> CcState:
    variant = Variant(variant)
    return CcState(
        variant=variant,
        params=params,
        last_congestion_time=now,
        cwnd_clamp=max(cwnd_clamp, CWND_FLOOR),
    )


def htcp_alpha(elapsed_since_congestion: float, params: VariantParams = DEFAULT_PARAMS) -> float:
    """
    H-TCP additive-increase factor, in packets per window.

    1 during the first ``htcp_delta_l`` seconds after a congestion event,
    then ``1 + 10 d + 0.25 d^2`` where ``d`` is the time beyond that.
    """
    if elapsed_since_congestion < 0:
        raise ValueError(f"negative elapsed time {elapsed_since_congestion}")
    d = elapsed_since_congestion - params.htcp_delta_l
    if d <= 0:
        return 1.0
    return 1.0 + params.htcp_linear * d + params.htcp_quadratic * d * d


def cubic_k(w_max: float, params: VariantParams = DEFAULT_PARAMS) -> float:
    return (w_max * (1.0 - params.cubic_beta) / params.cubic_c) ** (1.0 / 3.0)


def cubic_window(
    time_since_epoch: float, w_max: float, params: VariantParams = DEFAULT_PARAMS
) -> float:
    """``C (t - K)^3 + w_max``; equals ``beta * w_max`` at ``t = 0``."""
    if time_since_epoch < 0:
        raise ValueError(f"negative time {time_since_epoch}")
    k = cubic_k(w_max, params)
    return params.cubic_c * (time_since_epoch - k) ** 3 + w_max


def hybla_rho(state: CcState) -> float:
    if math.isinf(state.rtt_min):
        return 1.0
    return max(state.rtt_min / state.params.hybla_rtt0, 1.0)


def backoff_factor(state: CcState, rtt_at_loss: float) -> float:
    """
    ``rtt_min / rtt_at_loss`` for the ctcp variants, in (0, 1].

    1 when there is no RTT history yet or when ``rtt_at_loss`` is within
    the tolerance of ``rtt_min``.
    """
    if math.isinf(state.rtt_min):
        return 1.0
    rtt = max(rtt_at_loss, state.rtt_min)
    if rtt <= state.rtt_min * (1.0 + state.params.rtt_tolerance):
        return 1.0
    return state.rtt_min / rtt


def _bounded(state: CcState, cwnd: float) -> float:
    return max(state.cwnd_floor, min(cwnd, state.cwnd_clamp))


def _slow_start_increment(state: CcState) -> float:
    if state.variant is Variant.HYBLA:
        # Exponent capped so the float stays finite; ssthresh and the
        # receive window bound the result anyway.
        return 2.0 ** min(hybla_rho(state), 60.0) - 1.0
    return 1.0


def _avoidance_increment(state: CcState, now: float) -> float:
    v = state.variant
    if v is Variant.CTCP_V2:
        elapsed = max(now - state.last_congestion_time, 0.0)
        return htcp_alpha(elapsed, state.params) / state.cwnd
    if v is Variant.HYBLA:
        return hybla_rho(state) ** 2 / state.cwnd
    if v is Variant.CUBIC:
        target = cubic_window(max(now - state.epoch_start, 0.0), state.w_max, state.params)
        if target > state.cwnd:
            return (target - state.cwnd) / state.cwnd
        return 0.01 / state.cwnd
    return 1.0 / state.cwnd


def _anchor_cubic_epoch(state: CcState, now: float) -> CcState:
    # Entering avoidance without a loss: place the curve's plateau at the
    # current window.
    return replace(state, w_max=state.cwnd, epoch_start=now - cubic_k(state.cwnd, state.params))


def cc_on_ack(state: CcState, sample: RttSample) -> CcState:
    now = sample.timestamp
    srtt = sample.rtt if state.srtt is None else 0.875 * state.srtt + 0.125 * sample.rtt
    state = replace(state, rtt_min=min(state.rtt_min, sample.rtt), srtt=srtt)

    if state.phase is Phase.SLOW_START:
        cwnd = _bounded(state, min(state.cwnd + _slow_start_increment(state), state.ssthresh))
        if cwnd >= state.ssthresh:
            state = replace(state, cwnd=cwnd, phase=Phase.CONGESTION_AVOIDANCE)
            if state.variant is Variant.CUBIC:
                state = _anchor_cubic_epoch(state, now)
            return state
        return replace(state, cwnd=cwnd)

    if state.variant is Variant.CUBIC and state.epoch_start is None:
        state = _anchor_cubic_epoch(state, now)
    return replace(state, cwnd=_bounded(state, state.cwnd + _avoidance_increment(state, now)))


def cc_on_congestion_loss(state: CcState, rtt_at_loss: float, now: float = 0.0) -> CcState:
    """
    React to one (coalesced) loss event.

    Every variant leaves slow start with ``ssthresh`` at the new window.
    """
    v = state.variant
    changes = {}
    if v.coded:
        beta = backoff_factor(state, rtt_at_loss)
        cwnd = state.cwnd
        if beta < 1.0:
            cwnd = max(state.cwnd_floor, state.cwnd * beta)
            changes["last_congestion_time"] = now
    elif v is Variant.CUBIC:
        cwnd = max(state.cwnd_floor, state.cwnd * state.params.cubic_beta)
        changes.update(w_max=state.cwnd, epoch_start=now, last_congestion_time=now)
    else:
        cwnd = max(state.cwnd_floor, state.cwnd / 2.0)
        changes["last_congestion_time"] = now

    return replace(
        state, cwnd=cwnd, ssthresh=cwnd, phase=Phase.CONGESTION_AVOIDANCE, **changes
    )


def cc_on_timeout(state: CcState) -> CcState:
    return replace(
        state,
        ssthresh=max(state.cwnd / 2.0, state.cwnd_floor),
        cwnd=state.cwnd_floor,
        phase=Phase.SLOW_START,
        epoch_start=None,
    )
