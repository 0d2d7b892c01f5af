import csv
import math

import numpy as np
import pytest

from ctcpsim.bench import (
    FAIRNESS_COLUMNS,
    RAW_COLUMNS,
    SUMMARY_COLUMNS,
    ResultRow,
    aggregate,
    run_fairness,
    run_sweep,
    run_trace,
    sweep_tasks,
    trace_scenario,
)
from ctcpsim.config import ConfigError, ExperimentConfig, ScenarioOverrides
from ctcpsim.congestion import Variant
from ctcpsim.netsim import FlowSpec, Scenario


def _config(**kwargs):
    base = dict(
        variants=(Variant.CTCP_V2, Variant.CUBIC),
        per=(0.0, 0.05, 0.1),
        rtt_ms=(100.0, 200.0),
        repetitions=3,
        transfer_mb=0.05,
        seed=3,
        scenario=ScenarioOverrides(carry_payload=False),
    )
    base.update(kwargs)
    return ExperimentConfig(**base)


def _read(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_sweep_tasks_carry_their_seeds():
    tasks = sweep_tasks(_config())
    assert len(tasks) == 2 * 3 * 2 * 3
    assert [t.seed for t in tasks] == list(range(3, 3 + 36))
    assert (tasks[0].variant, tasks[0].per, tasks[0].rtt_ms, tasks[0].rep) == (Variant.CTCP_V2, 0.0, 100.0, 0)
    assert tasks[1].rep == 1
    assert tasks[-1].variant is Variant.CUBIC


def test_sweep_writes_one_row_per_run(tmp_path):
    result = run_sweep(_config(), str(tmp_path))
    rows = _read(tmp_path / "raw.csv")
    assert tuple(rows[0]) == RAW_COLUMNS
    assert len(rows) == 1 + 36
    assert len(result.rows) == 36
    assert result.incomplete == 0

    summary = _read(tmp_path / "summary.csv")
    assert tuple(summary[0]) == SUMMARY_COLUMNS
    assert len(summary) == 1 + 12
    assert all(int(r[3]) == 3 for r in summary[1:])


def test_sweep_is_reproducible(tmp_path):
    run_sweep(_config(), str(tmp_path / "a"))
    run_sweep(_config(), str(tmp_path / "b"))
    for name in ("raw.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_summary_matches_raw_rows():
    config = _config(variants=(Variant.CTCP_V1,), per=(0.05,), rtt_ms=(100.0,), repetitions=4)
    result = run_sweep(config)
    g = np.array([r.goodput_bps for r in result.rows])
    (cell,) = result.summary
    assert cell.n == 4
    assert cell.goodput_mean_bps == pytest.approx(g.mean())
    assert cell.goodput_std_bps == pytest.approx(g.std(ddof=1))
    assert cell.efficiency == pytest.approx(g.mean() / config.link_rate_bps)
    # different seeds, different runs
    assert len(set(g)) > 1


def test_aggregate_single_run_has_zero_std():
    row = ResultRow(Variant.RENO, 0.0, 100.0, 0, 1, 5e6, 1.0, 0.1, False)
    (cell,) = aggregate([row], 10e6)
    assert (cell.n, cell.goodput_mean_bps, cell.goodput_std_bps) == (1, 5e6, 0.0)
    assert cell.efficiency == 0.5


def test_incomplete_run_has_empty_completion():
    row = ResultRow(Variant.RENO, 0.2, 800.0, 0, 1, 1e4, None, 0.3, True)
    values = row.values()
    assert values[RAW_COLUMNS.index("completion_s")] == ""
    assert values[RAW_COLUMNS.index("incomplete")] == 1
    (cell,) = aggregate([row, row], 10e6)
    assert cell.incomplete == 2


def test_invalid_config_is_rejected():
    with pytest.raises(ConfigError):
        run_sweep(_config(per=(1.0,)))
    with pytest.raises(ConfigError):
        run_sweep(_config(variants=()))


def test_fairness(tmp_path):
    config = _config(per=(0.0, 0.05), rtt_ms=(100.0,), repetitions=2, transfer_mb=0.2)
    rows = run_fairness(config, str(tmp_path))
    assert len(rows) == 2 * 2 * 2
    assert {r.pairing for r in rows} == {"cubic_vs_ctcp_v2", "cubic_vs_cubic"}
    for r in rows:
        assert not r.incomplete
        assert r.total_bps > 0
        assert r.total_bps <= config.link_rate_bps
    lines = _read(tmp_path / "fairness.csv")
    assert tuple(lines[0]) == FAIRNESS_COLUMNS
    assert len(lines) == 1 + 8


def test_trace_rows_are_time_ordered():
    config = _config(transfer_mb=0.5)
    trace = run_trace(trace_scenario(config, "ctcp_v2", per=0.05, rtt_ms=200.0), bin_s=0.5)
    times = [r.t_s for r in trace.rows]
    assert times == sorted(times)
    assert times[0] == 0.0
    assert sum(r.decode_event for r in trace.rows) == len(trace.flow.decode_events)
    assert trace.bins.size == trace.bin_lengths.size
    assert trace.bin_lengths.sum() == pytest.approx(trace.flow.delivery_span)
    # the bins average to the flow's goodput
    assert trace.mean_goodput_bps == pytest.approx(trace.flow.goodput_bps, rel=1e-6)
    assert not math.isnan(trace.rows[-1].cwnd_pkts)


def test_trace_of_empty_transfer():
    trace = run_trace(Scenario(flows=(FlowSpec("ctcp_v2", 0),)))
    assert trace.rows == []
    assert trace.mean_goodput_bps == 0.0


def test_trace_needs_one_flow():
    two = Scenario(flows=(FlowSpec("cubic", 10), FlowSpec("cubic", 10)))
    with pytest.raises(ConfigError):
        run_trace(two)
    with pytest.raises(ConfigError):
        run_trace(Scenario(flows=(FlowSpec("cubic", 10),)), bin_s=0.0)


@pytest.mark.slow
def test_cubic_pair_shares_the_link():
    config = ExperimentConfig(
        variants=(Variant.CUBIC,), per=(0.0,), rtt_ms=(500.0,), link_rate_mbps=5.0,
        repetitions=1, scenario=ScenarioOverrides(carry_payload=False),
    )
    (row,) = run_fairness(config, pairings=[(Variant.CUBIC, Variant.CUBIC)])
    assert not row.incomplete
    assert 0.3 <= row.goodput_a_bps / row.total_bps <= 0.7
    assert row.total_bps <= 5e6
