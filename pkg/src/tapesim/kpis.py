"""KPI aggregation over a finished run.

Checkpoint conventions: first-byte latency is DR-in minus Data-in (the
drive starts producing bytes when the cartridge is mounted), last-byte
latency is Data-access minus Data-in, and drive occupation is DR-out
minus Q-out. Requests still in flight at the horizon are reported
separately, never silently dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import ObjectRecord, SimulationResult, object_records
from .redundancy import ObjectStatus


@dataclass(frozen=True)
class LatencyStats:
    count: int
    min_s: float | None = None
    mean_s: float | None = None
    max_s: float | None = None
    std_s: float | None = None

    @classmethod
    def from_seconds(cls, xs) -> "LatencyStats":
        xs = np.asarray([x for x in xs if x is not None], dtype=float)
        if xs.size == 0:
            return cls(count=0)
        return cls(
            count=int(xs.size),
            min_s=float(xs.min()),
            mean_s=float(xs.mean()),
            max_s=float(xs.max()),
            std_s=float(xs.std(ddof=0)),
        )

    def in_minutes(self) -> dict[str, float | None]:
        def mins(v):
            return None if v is None else v / 60.0

        return {
            "min_min": mins(self.min_s),
            "mean_min": mins(self.mean_s),
            "max_min": mins(self.max_s),
            "std_min": mins(self.std_s),
        }


def hourly_counts(steps, horizon_steps: int, steps_per_hour: float) -> list[int]:
    hours = max(1, math.ceil(horizon_steps / steps_per_hour))
    counts = [0] * hours
    for s in steps:
        counts[min(int(s / steps_per_hour), hours - 1)] += 1
    return counts


def queue_length_hourly_means(
    change_log: list[tuple[int, int, int]], horizon_steps: int, steps_per_hour: float
) -> tuple[list[float], list[float]]:
    """Time-weighted hourly means of the DR and D queue lengths."""
    hours = max(1, math.ceil(horizon_steps / steps_per_hour))
    dr_acc = np.zeros(hours)
    d_acc = np.zeros(hours)
    width = np.zeros(hours)
    for i, (step, dr_len, d_len) in enumerate(change_log):
        end = change_log[i + 1][0] if i + 1 < len(change_log) else horizon_steps
        end = min(end, horizon_steps)
        lo = step
        while lo < end:
            bucket = min(int(lo / steps_per_hour), hours - 1)
            bucket_end = min((bucket + 1) * steps_per_hour, end)
            span = bucket_end - lo
            dr_acc[bucket] += dr_len * span
            d_acc[bucket] += d_len * span
            width[bucket] += span
            lo = bucket_end
    width[width == 0] = 1.0
    return list(dr_acc / width), list(d_acc / width)


def queue_length_distribution(
    change_log: list[tuple[int, int, int]], horizon_steps: int, which: int
) -> list[tuple[int, float]]:
    """(length, fraction of simulated time) pairs for one queue."""
    weights: dict[int, float] = {}
    for i, entry in enumerate(change_log):
        end = change_log[i + 1][0] if i + 1 < len(change_log) else horizon_steps
        span = min(end, horizon_steps) - entry[0]
        if span > 0:
            weights[entry[which]] = weights.get(entry[which], 0.0) + span
    total = sum(weights.values()) or 1.0
    return sorted((length, w / total) for length, w in weights.items())


def queue_length_time_mean(
    change_log: list[tuple[int, int, int]], horizon_steps: int, which: int
) -> float:
    dist = queue_length_distribution(change_log, horizon_steps, which)
    return sum(length * frac for length, frac in dist)


@dataclass
class KpiReport:
    """Everything the run report and plot CSVs are built from."""

    total_capacity_pb: float
    sim_hours: float
    num_libraries: int

    requests_total: int
    objects_completed: int
    retrieval_failures: int
    objects_in_flight: int
    fragments_total: int
    fragments_completed: int
    fragments_in_flight: int
    redispatches_total: int

    first_byte: LatencyStats
    last_byte: LatencyStats

    exchanges_total: int
    objects_touched: int
    exchange_rate_per_hour: float
    per_robot_exchanges: list[int]
    max_hourly_exchanges_per_robot: int

    read_errors_total: int

    data_busy_s: float
    robot_busy_s: float
    drive_busy_s: float

    request_rate_per_hour: float
    dr_queue_mean_len: float
    d_queue_mean_len: float

    hours: list[int] = field(default_factory=list)
    requests_by_hour: list[int] = field(default_factory=list)
    exchanges_by_hour: list[int] = field(default_factory=list)
    read_errors_by_hour: list[int] = field(default_factory=list)
    dr_queue_len_by_hour: list[float] = field(default_factory=list)
    d_queue_len_by_hour: list[float] = field(default_factory=list)
    first_byte_mean_by_hour: list[float | None] = field(default_factory=list)
    last_byte_mean_by_hour: list[float | None] = field(default_factory=list)
    dr_queue_len_distribution: list[tuple[int, float]] = field(default_factory=list)
    d_queue_len_distribution: list[tuple[int, float]] = field(default_factory=list)
    unstable_hint: bool = False

    def summary_rows(self) -> list[tuple[str, object]]:
        """Key/value rows for the machine-readable report."""
        fb = self.first_byte.in_minutes()
        lb = self.last_byte.in_minutes()

        def fmt(v):
            if v is None:
                return "no data"
            return v

        return [
            ("total_capacity_pb", self.total_capacity_pb),
            ("sim_hours", self.sim_hours),
            ("num_libraries", self.num_libraries),
            ("requests_total", self.requests_total),
            ("request_rate_per_hour", self.request_rate_per_hour),
            ("objects_completed", self.objects_completed),
            ("retrieval_failures", self.retrieval_failures),
            ("objects_in_flight", self.objects_in_flight),
            ("fragments_total", self.fragments_total),
            ("fragments_completed", self.fragments_completed),
            ("fragments_in_flight", self.fragments_in_flight),
            ("redispatches_total", self.redispatches_total),
            ("objects_touched", self.objects_touched),
            ("exchanges_total", self.exchanges_total),
            ("exchange_rate_per_hour", self.exchange_rate_per_hour),
            ("max_hourly_exchanges_per_robot", self.max_hourly_exchanges_per_robot),
            ("read_errors_total", self.read_errors_total),
            ("first_byte_latency_min_min", fmt(fb["min_min"])),
            ("first_byte_latency_mean_min", fmt(fb["mean_min"])),
            ("first_byte_latency_max_min", fmt(fb["max_min"])),
            ("first_byte_latency_std_min", fmt(fb["std_min"])),
            ("last_byte_latency_min_min", fmt(lb["min_min"])),
            ("last_byte_latency_mean_min", fmt(lb["mean_min"])),
            ("last_byte_latency_max_min", fmt(lb["max_min"])),
            ("last_byte_latency_std_min", fmt(lb["std_min"])),
            ("data_busy_s", self.data_busy_s),
            ("robot_busy_s", self.robot_busy_s),
            ("drive_busy_s", self.drive_busy_s),
            ("dr_queue_mean_len", self.dr_queue_mean_len),
            ("d_queue_mean_len", self.d_queue_mean_len),
            ("unstable_hint", self.unstable_hint),
        ]


def _hourly_latency_means(objects: list[ObjectRecord], hours: int, steps_per_hour: float):
    first_acc = [[] for _ in range(hours)]
    last_acc = [[] for _ in range(hours)]
    for rec in objects:
        if rec.status is not ObjectStatus.COMPLETED:
            continue
        bucket = min(int(rec.data_in / steps_per_hour), hours - 1)
        if rec.first_byte_s is not None:
            first_acc[bucket].append(rec.first_byte_s)
        if rec.last_byte_s is not None:
            last_acc[bucket].append(rec.last_byte_s)
    first = [float(np.mean(b)) if b else None for b in first_acc]
    last = [float(np.mean(b)) if b else None for b in last_acc]
    return first, last


def _max_hourly_exchanges_per_robot(
    exchange_log: list[tuple[int, int]], horizon_steps: int, steps_per_hour: float
) -> int:
    counts: dict[tuple[int, int], int] = {}
    for step, robot_id in exchange_log:
        key = (int(step / steps_per_hour), robot_id)
        counts[key] = counts.get(key, 0) + 1
    return max(counts.values(), default=0)


def _instability_hint(change_log, horizon_steps) -> bool:
    """Final DR backlog well above its mid-run level suggests overload."""
    if not change_log:
        return False
    final_len = change_log[-1][1]
    mid = horizon_steps // 2
    mid_len = 0
    for step, dr_len, _ in change_log:
        if step <= mid:
            mid_len = dr_len
        else:
            break
    return final_len >= 20 and final_len > 3 * max(mid_len, 1)


def compute_kpis(result: SimulationResult, objects: list[ObjectRecord] | None = None) -> KpiReport:
    cfg = result.cfg
    steps_per_hour = cfg.steps_per_hour
    horizon = result.horizon_steps
    sim_hours = horizon / steps_per_hour
    hours = max(1, math.ceil(horizon / steps_per_hour))

    if objects is None:
        objects = object_records(result)

    completed = [o for o in objects if o.status is ObjectStatus.COMPLETED]
    failed = [o for o in objects if o.status is ObjectStatus.FAILED]
    pending = [o for o in objects if o.status is ObjectStatus.PENDING]

    first = LatencyStats.from_seconds([o.first_byte_s for o in completed])
    last = LatencyStats.from_seconds([o.last_byte_s for o in completed])

    dr_hourly, d_hourly = queue_length_hourly_means(result.queue_len_log, horizon, steps_per_hour)
    first_hourly, last_hourly = _hourly_latency_means(objects, hours, steps_per_hour)

    fragments_completed = sum(1 for f in result.fragments if f.data_access is not None)

    return KpiReport(
        total_capacity_pb=cfg.total_capacity_pb,
        sim_hours=sim_hours,
        num_libraries=1,
        requests_total=len(result.request_steps),
        objects_completed=len(completed),
        retrieval_failures=len(failed),
        objects_in_flight=len(pending),
        fragments_total=len(result.fragments),
        fragments_completed=fragments_completed,
        fragments_in_flight=len(result.in_flight),
        redispatches_total=sum(t.redispatch_count for t in result.trackers),
        first_byte=first,
        last_byte=last,
        exchanges_total=result.exchanges_total,
        objects_touched=result.objects_touched,
        exchange_rate_per_hour=result.exchanges_total / sim_hours if sim_hours else 0.0,
        per_robot_exchanges=[r.exchange_count for r in result.robots],
        max_hourly_exchanges_per_robot=_max_hourly_exchanges_per_robot(
            result.exchange_log, horizon, steps_per_hour
        ),
        read_errors_total=len(result.read_error_log),
        data_busy_s=result.data_busy_steps * cfg.step_seconds,
        robot_busy_s=result.robot_busy_steps * cfg.step_seconds,
        drive_busy_s=result.drive_occupation_steps * cfg.step_seconds,
        request_rate_per_hour=len(result.request_steps) / sim_hours if sim_hours else 0.0,
        dr_queue_mean_len=queue_length_time_mean(result.queue_len_log, horizon, 1),
        d_queue_mean_len=queue_length_time_mean(result.queue_len_log, horizon, 2),
        hours=list(range(hours)),
        requests_by_hour=hourly_counts(result.request_steps, horizon, steps_per_hour),
        exchanges_by_hour=hourly_counts([s for s, _ in result.exchange_log], horizon, steps_per_hour),
        read_errors_by_hour=hourly_counts(result.read_error_log, horizon, steps_per_hour),
        dr_queue_len_by_hour=dr_hourly,
        d_queue_len_by_hour=d_hourly,
        first_byte_mean_by_hour=first_hourly,
        last_byte_mean_by_hour=last_hourly,
        dr_queue_len_distribution=queue_length_distribution(result.queue_len_log, horizon, 1),
        d_queue_len_distribution=queue_length_distribution(result.queue_len_log, horizon, 2),
        unstable_hint=_instability_hint(result.queue_len_log, horizon),
    )
