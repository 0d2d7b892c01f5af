"""
Experiment harness: parameter sweeps, two-flow fairness runs and
single-flow traces, written out as CSV.

CSV schemas (one header line, then rows):

``raw.csv``
    variant, per, rtt_ms, rep, seed, goodput_bps, completion_s,
    overhead_frac, incomplete
``summary.csv``
    variant, per, rtt_ms, n, goodput_mean_bps, goodput_std_bps,
    efficiency, incomplete
``fairness.csv``
    pairing, per, rtt_ms, rep, seed, variant_a, goodput_a_bps,
    variant_b, goodput_b_bps, total_bps, incomplete
``trace.csv``
    t_s, goodput_bps, cwnd_pkts, decode_event

Every raw and fairness row carries the seed that reproduces it; the seed
of a run is the base seed plus the run's position in the sweep order
(variant, per, rtt, repetition). ``completion_s`` is empty for a run that
hit the duration cap. ``efficiency`` is the mean goodput over the link rate;
``incomplete`` in the summary counts flagged runs in the cell.
"""
import csv
import dataclasses
import logging
import math
import os
from dataclasses import dataclass
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .config import ConfigError, ExperimentConfig
from .congestion import Variant
from .netsim import FlowSpec, FlowStats, Scenario, simulate
from .parallel import run_all
from .timer import humanize, timed_call

logger = logging.getLogger(__name__)

RAW_COLUMNS = (
    "variant", "per", "rtt_ms", "rep", "seed",
    "goodput_bps", "completion_s", "overhead_frac", "incomplete",
)
SUMMARY_COLUMNS = (
    "variant", "per", "rtt_ms", "n",
    "goodput_mean_bps", "goodput_std_bps", "efficiency", "incomplete",
)
FAIRNESS_COLUMNS = (
    "pairing", "per", "rtt_ms", "rep", "seed",
    "variant_a", "goodput_a_bps", "variant_b", "goodput_b_bps", "total_bps", "incomplete",
)
TRACE_COLUMNS = ("t_s", "goodput_bps", "cwnd_pkts", "decode_event")

DEFAULT_PAIRINGS = ((Variant.CUBIC, Variant.CTCP_V2), (Variant.CUBIC, Variant.CUBIC))


@dataclass(frozen=True)
class ResultRow:
    variant: Variant
    per: float
    rtt_ms: float
    rep: int
    seed: int
    goodput_bps: float
    completion_s: Optional[float]
    overhead_frac: float
    incomplete: bool

    def values(self) -> tuple:
        return (
            self.variant.value, self.per, self.rtt_ms, self.rep, self.seed,
            self.goodput_bps, "" if self.completion_s is None else self.completion_s,
            self.overhead_frac, int(self.incomplete),
        )


@dataclass(frozen=True)
class SummaryRow:
    variant: Variant
    per: float
    rtt_ms: float
    n: int
    goodput_mean_bps: float
    goodput_std_bps: float
    efficiency: float
    incomplete: int

    def values(self) -> tuple:
        return (
            self.variant.value, self.per, self.rtt_ms, self.n,
            self.goodput_mean_bps, self.goodput_std_bps, self.efficiency, self.incomplete,
        )


@dataclass(frozen=True)
class FairnessRow:
    pairing: str
    per: float
    rtt_ms: float
    rep: int
    seed: int
    variant_a: Variant
    goodput_a_bps: float
    variant_b: Variant
    goodput_b_bps: float
    incomplete: bool

    @property
    def total_bps(self) -> float:
        return self.goodput_a_bps + self.goodput_b_bps

    def values(self) -> tuple:
        return (
            self.pairing, self.per, self.rtt_ms, self.rep, self.seed,
            self.variant_a.value, self.goodput_a_bps,
            self.variant_b.value, self.goodput_b_bps, self.total_bps, int(self.incomplete),
        )


@dataclass(frozen=True)
class TraceRow:
    t_s: float
    goodput_bps: float
    cwnd_pkts: float
    decode_event: bool

    def values(self) -> tuple:
        return (self.t_s, self.goodput_bps, self.cwnd_pkts, int(self.decode_event))


class SweepTask(NamedTuple):
    index: int
    variant: Variant
    per: float
    rtt_ms: float
    rep: int
    seed: int
    config: ExperimentConfig


@dataclass
class SweepResult:
    rows: List[ResultRow]
    summary: List[SummaryRow]

    @property
    def incomplete(self) -> int:
        return sum(r.incomplete for r in self.rows)


def write_csv(path: str, columns: Sequence[str], rows: Iterable) -> str:
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow(row.values())
    logger.info("wrote %s", path)
    return path


def scenario_for(
    config: ExperimentConfig,
    flows: Sequence[FlowSpec],
    *,
    per: float,
    rtt_ms: float,
    seed: int,
    record_cwnd: bool = False,
) -> Scenario:
    s = config.scenario
    return Scenario(
        flows=tuple(flows),
        rate_bps=config.link_rate_bps,
        rtt=rtt_ms / 1000.0,
        per=per,
        seed=seed,
        generation_size=s.generation_size,
        symbol_size=s.symbol_size,
        queue_capacity=s.queue_capacity,
        max_open_generations=s.max_open_generations,
        ack_loss=s.ack_loss,
        duration_cap=s.duration_cap_s,
        receive_window_bytes=s.receive_window_bytes,
        carry_payload=s.carry_payload,
        pacing=s.pacing,
        record_cwnd=record_cwnd,
    ).validate()


def sweep_tasks(config: ExperimentConfig) -> List[SweepTask]:
    tasks = []
    for variant in config.variants:
        for per in config.per:
            for rtt_ms in config.rtt_ms:
                for rep in range(config.repetitions):
                    i = len(tasks)
                    tasks.append(SweepTask(i, Variant(variant), per, rtt_ms, rep, config.seed + i, config))
    return tasks


def run_cell(task: SweepTask) -> ResultRow:
    scenario = scenario_for(
        task.config, [FlowSpec(task.variant, task.config.transfer_bytes)],
        per=task.per, rtt_ms=task.rtt_ms, seed=task.seed,
    )
    result, seconds = timed_call(simulate, scenario)
    flow = result.flows[0]
    logger.info(
        "%s per=%g rtt=%gms rep=%d: %.3f Mbps%s; %d events in %s",
        task.variant.value, task.per, task.rtt_ms, task.rep,
        flow.goodput_bps / 1e6, " (incomplete)" if flow.incomplete else "",
        result.events, ", ".join(humanize(seconds)),
    )
    return ResultRow(
        variant=task.variant,
        per=task.per,
        rtt_ms=task.rtt_ms,
        rep=task.rep,
        seed=task.seed,
        goodput_bps=flow.goodput_bps,
        completion_s=flow.completion_time,
        overhead_frac=flow.overhead_fraction,
        incomplete=flow.incomplete,
    )


def aggregate(rows: Sequence[ResultRow], link_rate_bps: float) -> List[SummaryRow]:
    """
    Mean and sample standard deviation (0 for a single run) of goodput per
    (variant, per, rtt) cell, in order of first appearance.
    """
    cells = {}
    for r in rows:
        cells.setdefault((r.variant, r.per, r.rtt_ms), []).append(r)
    out = []
    for (variant, per, rtt_ms), group in cells.items():
        g = np.array([r.goodput_bps for r in group], dtype=float)
        mean = float(np.mean(g))
        std = float(np.std(g, ddof=1)) if g.size > 1 else 0.0
        out.append(SummaryRow(
            variant=variant,
            per=per,
            rtt_ms=rtt_ms,
            n=int(g.size),
            goodput_mean_bps=mean,
            goodput_std_bps=std,
            efficiency=mean / link_rate_bps,
            incomplete=sum(r.incomplete for r in group),
        ))
    return out


def run_sweep(config: ExperimentConfig, out_dir: Optional[str] = None) -> SweepResult:
    """
    Run every (variant, per, rtt, repetition) cell of ``config`` and, if
    ``out_dir`` is given, write ``raw.csv`` and ``summary.csv`` there.
    """
    config.validate()
    tasks = sweep_tasks(config)
    logger.info("sweep of %d runs", len(tasks))
    rows = run_all(run_cell, tasks, workers=config.parallel)
    # Seeds are base + index, so they order rows as the sweep enumerates them.
    rows.sort(key=lambda r: r.seed)
    summary = aggregate(rows, config.link_rate_bps)
    result = SweepResult(rows, summary)
    if result.incomplete:
        logger.warning("%d of %d runs did not complete", result.incomplete, len(rows))
    if out_dir:
        write_csv(os.path.join(out_dir, "raw.csv"), RAW_COLUMNS, rows)
        write_csv(os.path.join(out_dir, "summary.csv"), SUMMARY_COLUMNS, summary)
    return result


def goodput_until(flow: FlowStats, t: float) -> float:
    elapsed = t - flow.start_time
    if elapsed <= 0:
        return 0.0
    return flow.delivered_bytes_until(t) * 8 / elapsed


class FairnessTask(NamedTuple):
    index: int
    pairing: Tuple[Variant, Variant]
    per: float
    rtt_ms: float
    rep: int
    seed: int
    config: ExperimentConfig


def run_pair(task: FairnessTask) -> FairnessRow:
    """
    Two flows through one bottleneck. Goodputs cover the time until the
    first flow finishes, while both are still competing.
    """
    a, b = task.pairing
    n = task.config.transfer_bytes
    scenario = scenario_for(
        task.config, [FlowSpec(a, n), FlowSpec(b, n)],
        per=task.per, rtt_ms=task.rtt_ms, seed=task.seed,
    )
    result = simulate(scenario)
    fa, fb = result.flows[0], result.flows[1]
    finished = [f.start_time + f.completion_time for f in (fa, fb) if f.completion_time is not None]
    t = min(finished) if finished else result.end_time
    row = FairnessRow(
        pairing=f"{a.value}_vs_{b.value}",
        per=task.per,
        rtt_ms=task.rtt_ms,
        rep=task.rep,
        seed=task.seed,
        variant_a=a,
        goodput_a_bps=goodput_until(fa, t),
        variant_b=b,
        goodput_b_bps=goodput_until(fb, t),
        incomplete=not finished,
    )
    logger.info("%s per=%g rtt=%gms rep=%d: %.3f / %.3f Mbps",
                row.pairing, task.per, task.rtt_ms, task.rep,
                row.goodput_a_bps / 1e6, row.goodput_b_bps / 1e6)
    return row


def run_fairness(
    config: ExperimentConfig,
    out_dir: Optional[str] = None,
    pairings: Sequence[Tuple[Variant, Variant]] = DEFAULT_PAIRINGS,
) -> List[FairnessRow]:
    """
    Paired goodputs per PER and RTT for each pairing; the default runs
    cubic against ctcp_v2 and, as the baseline, cubic against cubic.
    """
    config.validate()
    tasks = []
    for pairing in pairings:
        pairing = (Variant(pairing[0]), Variant(pairing[1]))
        for per in config.per:
            for rtt_ms in config.rtt_ms:
                for rep in range(config.repetitions):
                    i = len(tasks)
                    tasks.append(FairnessTask(i, pairing, per, rtt_ms, rep, config.seed + i, config))
    rows = run_all(run_pair, tasks, workers=config.parallel)
    rows.sort(key=lambda r: r.seed)
    if out_dir:
        write_csv(os.path.join(out_dir, "fairness.csv"), FAIRNESS_COLUMNS, rows)
    return rows


@dataclass
class TraceResult:
    rows: List[TraceRow]
    # Goodput per bin and the bin lengths (the last bin may be short).
    bins: np.ndarray
    bin_lengths: np.ndarray
    flow: FlowStats

    @property
    def mean_goodput_bps(self) -> float:
        """Mean of the bins, weighted by their lengths."""
        if self.bins.size == 0:
            return 0.0
        return float(np.average(self.bins, weights=self.bin_lengths))


def run_trace(scenario: Scenario, bin_s: float = 1.0) -> TraceResult:
    """
    Goodput in ``bin_s`` bins of virtual time, the window at every change,
    and one marked row per decode event, time-ordered, with times relative
    to the flow's start. A zero-length transfer gives an empty trace.
    """
    if len(scenario.flows) != 1:
        raise ConfigError(f"a trace needs exactly one flow, got {len(scenario.flows)}")
    if not bin_s > 0:
        raise ConfigError(f"bin width must be positive, got {bin_s}")
    flow = simulate(dataclasses.replace(scenario, record_cwnd=True)).flows[0]
    empty = np.zeros(0)
    if flow.transfer_bytes == 0:
        return TraceResult([], empty, empty, flow)

    start = flow.start_time
    duration = flow.delivery_span or flow.duration
    n_bins = max(math.ceil(duration / bin_s - 1e-9), 1)
    edges = np.minimum(start + bin_s * np.arange(n_bins + 1), start + duration)
    lengths = np.diff(edges)
    nbytes = np.zeros(n_bins)
    for e in flow.decode_events:
        nbytes[min(int((e.time - start) // bin_s), n_bins - 1)] += e.nbytes
    bins = np.divide(nbytes * 8, lengths, out=np.zeros(n_bins), where=lengths > 0)

    # (time, kind): 0 bin start, 1 window change, 2 decode event.
    points = [(float(t), 0) for t in edges[:-1]]
    points += [(t, 1) for t, _ in flow.cwnd_series if t <= start + duration]
    points += [(e.time, 2) for e in flow.decode_events]
    points.sort(key=lambda p: p[0])

    cwnd_times = np.array([t for t, _ in flow.cwnd_series])
    cwnd_values = [c for _, c in flow.cwnd_series]
    rows = []
    for t, kind in points:
        b = min(max(int((t - start) // bin_s), 0), n_bins - 1)
        i = int(np.searchsorted(cwnd_times, t, side="right")) - 1
        cwnd = cwnd_values[i] if i >= 0 else math.nan
        rows.append(TraceRow(t - start, float(bins[b]), cwnd, kind == 2))
    return TraceResult(rows, bins, lengths, flow)


def trace_scenario(
    config: ExperimentConfig, variant, *, per: float, rtt_ms: float, seed: Optional[int] = None
) -> Scenario:
    return scenario_for(
        config, [FlowSpec(Variant(variant), config.transfer_bytes)],
        per=per, rtt_ms=rtt_ms, seed=config.seed if seed is None else seed,
    )
