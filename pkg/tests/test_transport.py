from dataclasses import replace

import numpy as np
import pytest

from ctcpsim.congestion import Phase, Variant
from ctcpsim.rlnc import CodedPacket, PacketKind, encode_coded, make_generation
from ctcpsim.transport import (
    ACK_BYTES,
    HEADER_BYTES,
    AckFrame,
    DataFrame,
    LossEstimator,
    ReceiverState,
    detect_loss_and_backoff,
    new_sender,
    receiver_on_data,
    redundancy_count,
    repair_count,
    sender_next_frame,
    sender_on_ack,
    sender_on_timer,
    update_rto,
)

S = 8


def _sender(variant="ctcp_v2", k=4, n_gen=1, cwnd=1000.0, seed=0):
    data = np.random.default_rng(seed).integers(0, 256, size=k * S * n_gen, dtype=np.uint8)
    s = new_sender(0, variant, data, generation_size=k, symbol_size=S,
                   rng=np.random.default_rng(seed + 1))
    s.cc = replace(s.cc, cwnd=cwnd)
    return s


def _receiver(sender):
    return ReceiverState(0, sender.transfer_bytes, sender.generation_size, S)


def _drain(sender, now=0.0):
    frames = []
    while True:
        f = sender_next_frame(sender, now)
        if f is None:
            return frames
        frames.append(f)


def _frame(seq, packet, transfer_bytes=4 * S):
    return DataFrame(0, seq, 0.0, packet, transfer_bytes, S)


def test_redundancy_count():
    assert redundancy_count(32, 0.0) == 0
    assert redundancy_count(32, 0.2) == 8
    assert redundancy_count(16, 0.5) == 16
    with pytest.raises(ValueError):
        redundancy_count(32, 0.95)


def test_repair_count():
    assert repair_count(2, 0.0) == 2
    assert repair_count(0, 0.3) == 0
    assert repair_count(4, 0.2) == 5


def test_frame_sizes():
    gen = make_generation(np.zeros(4 * S, dtype=np.uint8), 0, 4, S)
    sys_frame = _frame(0, CodedPacket.systematic(gen[0], 4))
    coded = _frame(1, encode_coded(gen, np.random.default_rng(0)))
    assert sys_frame.size_bytes == HEADER_BYTES + S
    assert coded.size_bytes == HEADER_BYTES + S + 4
    assert AckFrame(0, 0, 0, 4, 0.0, 0, 1, 0).size_bytes == ACK_BYTES


def test_update_rto():
    s = _sender()
    update_rto(s, 0.5)
    assert (s.srtt, s.rttvar, s.rto) == (0.5, 0.25, 1.5)
    for _ in range(200):
        update_rto(s, 0.5)
    assert s.rto == pytest.approx(0.5, abs=1e-6)
    for _ in range(200):
        update_rto(s, 0.01)
    assert s.rto == 0.2
    with pytest.raises(ValueError):
        update_rto(s, 0.0)


def test_first_frames_are_systematic():
    s = _sender(k=4)
    frames = _drain(s)
    assert [f.kind for f in frames] == [PacketKind.SYSTEMATIC] * 4
    assert [f.packet.index for f in frames] == [0, 1, 2, 3]
    assert [f.sequence_number for f in frames] == [0, 1, 2, 3]
    assert s.in_flight == 4


def test_window_limits_sending():
    s = _sender(k=4, cwnd=2.0)
    assert len(_drain(s)) == 2


def test_proactive_redundancy_follows_loss_estimate():
    s = _sender(k=32)
    s.loss_estimator.p_hat = 0.2
    frames = _drain(s)
    kinds = [f.kind for f in frames]
    assert kinds[:32] == [PacketKind.SYSTEMATIC] * 32
    assert kinds[32:] == [PacketKind.CODED] * 8
    assert s.counters.proactive_frames == 8


def test_baselines_send_no_coded_frames():
    s = _sender("cubic", k=32)
    s.loss_estimator.p_hat = 0.2
    frames = _drain(s)
    assert len(frames) == 32
    assert all(f.kind is PacketKind.SYSTEMATIC for f in frames)


def test_ack_feeds_rtt_and_schedules_repair():
    s = _sender(k=4)
    _drain(s, now=0.0)
    ack = AckFrame(0, 0, rank_seen=2, dofs_needed=2, echo_timestamp=0.0,
                   highest_sequence_seen=3, frames_received=2, delivered_up_to=0)
    sender_on_ack(s, ack, now=0.5)
    assert s.cc.rtt_min == 0.5
    assert s.srtt == 0.5
    assert s.in_flight == 0
    frames = _drain(s, now=0.5)
    assert [f.kind for f in frames] == [PacketKind.CODED] * 2
    assert s.counters.repair_frames == 2


def test_full_rank_retires_generation():
    s = _sender(k=4, n_gen=2)
    s.max_open_generations = 1
    assert len(_drain(s)) == 4
    ack = AckFrame(0, 0, 4, 0, 0.0, 3, 4, 1)
    sender_on_ack(s, ack, now=0.5)
    assert 0 not in s.generations
    frames = _drain(s, now=0.5)
    assert [f.generation_id for f in frames] == [1, 1, 1, 1]


def test_loss_counting_from_sequence_gaps():
    s = _sender(k=100)
    _drain(s)
    ack = AckFrame(0, 0, 97, 3, 0.0, highest_sequence_seen=99, frames_received=97,
                   delivered_up_to=0)
    sender_on_ack(s, ack, now=0.5)
    est = s.loss_estimator
    assert (est.total_sent, est.total_lost) == (100, 3)
    assert est.p_hat == pytest.approx(0.03)


def test_loss_estimator_smoothing():
    est = LossEstimator()
    est.observe(100, 10)
    assert est.p_hat == pytest.approx(0.1)
    est.observe(50, 50)
    assert est.p_hat == pytest.approx(0.1)
    est.observe(50, 0)
    assert est.p_hat == pytest.approx(0.9 * 0.1 + 0.1 * 0.5)
    est.observe(0, 0)
    assert est.samples == 2


def _sender_in_avoidance(srtt):
    s = _sender(k=4)
    s.cc = replace(s.cc, cwnd=100.0, phase=Phase.CONGESTION_AVOIDANCE, rtt_min=0.5)
    s.srtt = srtt
    return s


def test_loss_at_rtt_min_keeps_window():
    s = _sender_in_avoidance(0.5)
    s.pending_losses = 3
    detect_loss_and_backoff(s, now=10.0)
    assert s.cc.cwnd == 100.0


def test_loss_with_queueing_reduces_window_once_per_rtt():
    s = _sender_in_avoidance(1.0)
    s.pending_losses = 1
    detect_loss_and_backoff(s, now=10.0)
    assert s.cc.cwnd == pytest.approx(50.0)
    s.pending_losses = 1
    detect_loss_and_backoff(s, now=10.5)
    assert s.cc.cwnd == pytest.approx(50.0)
    assert s.counters.congestion_events == 1


def test_timeout_writes_off_in_flight_and_repairs():
    s = _sender(k=4)
    _drain(s, now=0.0)
    assert s.timer_deadline == pytest.approx(1.0)
    sender_on_timer(s, now=0.5)
    assert s.counters.timeouts == 0
    sender_on_timer(s, now=1.0)
    assert s.counters.timeouts == 1
    assert s.cc.cwnd == 2.0
    assert s.in_flight == 0
    assert s.rto_backoff == 2
    frames = _drain(s, now=1.0)
    assert [f.kind for f in frames] == [PacketKind.CODED] * 2
    assert s.generations[0].repair_pending == 2


def test_receiver_decode_event_at_kth_frame():
    gen = make_generation(np.arange(4 * S, dtype=np.uint8), 0, 4, S)
    r = ReceiverState(0, 4 * S, 4, S)
    for i, p in enumerate(gen):
        ack, released = receiver_on_data(r, _frame(i, CodedPacket.systematic(p, 4)), now=float(i))
        assert ack.rank_seen == i + 1
        assert ack.frames_received == i + 1
    assert [(e.generation_id, e.time) for e in released] == [(0, 3.0)]
    assert bytes(r.output) == bytes(range(4 * S))
    assert r.complete


def test_receiver_releases_in_order():
    data = np.arange(8 * S, dtype=np.uint8)
    g0 = make_generation(data, 0, 4, S)
    g1 = make_generation(data, 1, 4, S)
    r = ReceiverState(0, 8 * S, 4, S)
    seq = 0
    for p in g1:
        _, released = receiver_on_data(r, _frame(seq, CodedPacket.systematic(p, 4), 8 * S), 1.0)
        seq += 1
        assert released == []
    for p in g0[:3]:
        receiver_on_data(r, _frame(seq, CodedPacket.systematic(p, 4), 8 * S), 2.0)
        seq += 1
    ack, released = receiver_on_data(r, _frame(seq, CodedPacket.systematic(g0[3], 4), 8 * S), 3.0)
    assert [e.generation_id for e in released] == [0, 1]
    assert ack.delivered_up_to == 2
    assert bytes(r.output) == data.tobytes()


def test_redundant_frame_is_still_acked():
    gen = make_generation(np.zeros(4 * S, dtype=np.uint8), 0, 4, S)
    r = ReceiverState(0, 4 * S, 4, S)
    pkt = CodedPacket.systematic(gen[0], 4)
    a1, _ = receiver_on_data(r, _frame(0, pkt), 0.0)
    a2, _ = receiver_on_data(r, _frame(1, pkt), 0.1)
    assert a1.dofs_needed == a2.dofs_needed == 3
    assert a2.highest_sequence_seen == 1
    assert r.redundant_frames == 1


def test_truncates_short_last_packet():
    data = np.arange(10, dtype=np.uint8)
    gen = make_generation(data, 0, 4, 4)
    r = ReceiverState(0, 10, 4, 4)
    for i, p in enumerate(gen):
        receiver_on_data(r, DataFrame(0, i, 0.0, CodedPacket.systematic(p, 3), 10, 4), 0.0)
    assert bytes(r.output) == data.tobytes()


def _exchange(sender, receiver, lose=(), now=0.0, rtt=0.5):
    """Send what the window allows, drop sequence numbers in ``lose``, ack the rest in order."""
    frames = _drain(sender, now)
    for f in frames:
        if f.sequence_number in lose:
            continue
        ack, _ = receiver_on_data(receiver, f, now + rtt / 2)
        sender_on_ack(sender, ack, now + rtt)
    return frames


@pytest.mark.parametrize("variant", ["ctcp_v1", "ctcp_v2"])
def test_coded_transfer_over_lossy_exchanges(variant):
    s = _sender(variant, k=4, n_gen=3)
    r = _receiver(s)
    now = 0.0
    rounds = 0
    while not r.complete:
        lost = {seq for seq in range(s.next_sequence, s.next_sequence + 100) if seq % 3 == 1}
        frames = _exchange(s, r, lose=lost, now=now)
        if not frames:
            now = max(now, s.timer_deadline)
            sender_on_timer(s, now)
        now += 0.5
        rounds += 1
        assert rounds < 50
    assert bytes(r.output) == s.data.tobytes()


def test_baseline_retransmits_gap_losses():
    s = _sender("reno", k=4)
    r = _receiver(s)
    frames = _exchange(s, r, lose={1})
    assert len(frames) == 4
    assert s.generations[0].retransmit == type(s.generations[0].retransmit)([1])
    again = _drain(s, now=0.5)
    assert len(again) == 1
    assert again[0].retransmission
    assert again[0].packet.index == 1
    assert s.counters.retransmitted_frames == 1
    ack, released = receiver_on_data(r, again[0], 0.75)
    assert [e.generation_id for e in released] == [0]
    sender_on_ack(s, ack, 1.0)
    assert s.done


def test_ack_for_wrong_flow():
    s = _sender()
    with pytest.raises(ValueError):
        sender_on_ack(s, AckFrame(1, 0, 0, 4, 0.0, 0, 1, 0), 0.5)


def test_variant_names():
    assert _sender("hybla").variant is Variant.HYBLA
    with pytest.raises(ValueError):
        _sender("vegas")


def test_rtt_spike_is_smoothed():
    s = _sender()
    update_rto(s, 0.5)
    update_rto(s, 1.0)
    assert s.srtt == pytest.approx(0.5625)
    assert s.rttvar == pytest.approx(0.3125)


def test_acks_echo_the_systematic_index():
    gen = make_generation(np.zeros(4 * S, dtype=np.uint8), 0, 4, S)
    r = ReceiverState(0, 4 * S, 4, S)
    ack, _ = receiver_on_data(r, _frame(0, CodedPacket.systematic(gen[2], 4)), 0.0)
    assert ack.packet_index == 2
    ack, _ = receiver_on_data(r, _frame(1, encode_coded(gen, np.random.default_rng(0))), 0.0)
    assert ack.packet_index is None


def test_baseline_timer_stays_armed_for_a_lost_tail():
    # The last frame is lost, so no later frame exposes the gap.
    s = _sender("reno", k=4)
    r = _receiver(s)
    _exchange(s, r, lose={3})
    assert s.in_flight == 0
    assert s.timer_deadline is not None
    sender_on_timer(s, s.timer_deadline)
    assert s.counters.timeouts == 1
    assert list(s.generations[0].retransmit) == [3]
    again = _drain(s, now=2.0)
    assert [f.packet.index for f in again] == [3]
    ack, _ = receiver_on_data(r, again[0], 2.25)
    sender_on_ack(s, ack, 2.5)
    assert s.done


def test_late_acks_after_timeout_are_not_resent():
    s = _sender("reno", k=4)
    r = _receiver(s)
    frames = _drain(s, now=0.0)
    sender_on_timer(s, s.timer_deadline)
    assert s.counters.timeouts == 1
    for f in frames[:3]:
        ack, _ = receiver_on_data(r, f, 0.25)
        sender_on_ack(s, ack, 1.2)
    assert s.generations[0].acked_indices == {0, 1, 2}
    again = _drain(s, now=1.2)
    assert [f.packet.index for f in again] == [3]
    assert s.timer_deadline is not None
