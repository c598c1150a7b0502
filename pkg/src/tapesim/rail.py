"""Redundant arrays of independent libraries.

N homogeneous libraries sit in separate failure zones; each fragment of a
codeword lands on a distinct library. The shared arrival and placement
streams are seeded identically for every library of a run while service
noise is seeded per library, so the N instances can execute sequentially
yet emulate concurrent operation; aggregation afterwards joins fragments
across libraries by message id.

Failure-protocol runs do not couple libraries dynamically. The extra
traffic that cross-library re-dispatch would create is folded into a
stationary per-library rate instead: each read failure multiplies the
touch rate by (n - k)(N - 1) / N, so the arrival rate is inflated by
(1 + p_d (n - k)(N - 1) / N).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import Protocol, SimConfig, derive_arrival_rate
from .engine import (
    LibraryEngine,
    ObjectRecord,
    SimulationResult,
    Submission,
    object_records,
    sample_distinct_cartridges,
    simulate_single,
)
from .geometry import MotionTimeModel, build_grid
from .kpis import KpiReport, compute_kpis
from .redundancy import Codeword, FragmentRequest, ObjectStatus, decode_latency_penalty
from .seeding import ARRIVALS, PLACEMENT, SERVICE, derive_rng
from .workload import collocate_stream, generate_arrivals


class RailConfigError(ValueError):
    pass


class DataIntegrityError(RuntimeError):
    """A trace join failed; fragment rows reference an unknown object."""


@dataclass(frozen=True)
class RailConfig:
    """Array-level view of a run: N homogeneous libraries, one code."""

    library_cfg: SimConfig

    @property
    def num_libraries(self) -> int:
        return self.library_cfg.num_libraries

    @property
    def n(self) -> int:
        return self.library_cfg.code_n

    @property
    def k(self) -> int:
        return self.library_cfg.code_k

    @property
    def dispatch_count(self) -> int:
        return self.library_cfg.fragments_dispatched

    def validate(self) -> None:
        n, big_n = self.n, self.num_libraries
        if big_n > 1 and n > big_n:
            raise RailConfigError(
                f"one fragment per library: code_n={n} needs at least {n} libraries, "
                f"got {big_n}"
            )


def library_load_pmf(num_users: int, s: int, num_libraries: int, x: int) -> float:
    """P(one library serves x of the L user requests), Binomial(L, s/N)."""
    if not 0 <= x <= num_users:
        return 0.0
    p = s / num_libraries
    return math.comb(num_users, x) * p**x * (1.0 - p) ** (num_users - x)


def aotr_inflation_factor(n: int, k: int, num_libraries: int) -> float:
    """Touch-rate multiplier charged per read failure."""
    return (n - k) * (num_libraries - 1) / num_libraries


def inflated_rate(lam_j: float, n: int, k: int, num_libraries: int, p_d: float) -> float:
    """Stationary per-library rate including failure-driven re-dispatch."""
    return lam_j * (1.0 + p_d * aotr_inflation_factor(n, k, num_libraries))


def paper_touch_rate(n: int, k: int, num_libraries: int, p_d: float) -> float:
    """The (n-k)(N-1)/(p_d N) form, surfaced only as a diagnostic.

    As a touch rate it grows without bound as p_d -> 0, so the simulator
    uses the per-failure expectation p_d (n-k)(N-1)/N instead; both are
    reported so they can be compared.
    """
    if p_d <= 0:
        return math.inf
    return aotr_inflation_factor(n, k, num_libraries) / p_d


def dispatch_across_libraries(
    n: int,
    k: int,
    s: int,
    protocol: Protocol,
    num_libraries: int,
    rng: np.random.Generator,
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Assign fragment homes to distinct libraries and pick the dispatched set.

    Returns (homes, dispatched): homes[i] is the library of fragment i+1;
    dispatched lists the fragment indices initially placed on queues
    (1..s for the Redundant protocol, a random k-subset for Failure).
    """
    if num_libraries == 1:
        homes = tuple([0] * n)
    else:
        if s > num_libraries or n > num_libraries:
            raise RailConfigError(
                f"one fragment per library: cannot place {max(n, s)} fragments "
                f"on {num_libraries} libraries"
            )
        homes = tuple(int(j) for j in rng.choice(num_libraries, size=n, replace=False))
    if protocol is Protocol.REDUNDANT:
        dispatched = tuple(range(1, s + 1))
    else:
        dispatched = tuple(sorted(int(i) + 1 for i in rng.choice(n, size=k, replace=False)))
    return homes, dispatched


@dataclass
class RailObjectRecord:
    block_id: int
    data_in: int
    status: ObjectStatus
    completion_step: int | None
    latency_s: float | None
    first_byte_s: float | None
    fragment_latencies_s: list[float]


@dataclass
class RailResult:
    cfg: SimConfig
    num_libraries: int
    results: list[SimulationResult]
    objects: list[RailObjectRecord]
    report: KpiReport
    diagnostics: dict[str, float]
    single_result: SimulationResult | None = None
    single_objects: list[ObjectRecord] = field(default_factory=list)


def _settle_rail_objects(
    codewords: list[Codeword],
    frags_by_block: dict[int, list[FragmentRequest]],
    cfg: SimConfig,
) -> list[RailObjectRecord]:
    threshold = cfg.failure_threshold_steps
    apply_threshold = cfg.protocol is Protocol.FAILURE
    records = []
    for cw in codewords:
        frags = frags_by_block.get(cw.block_id, [])
        valid = []
        in_flight = 0
        for f in frags:
            if f.data_access is None:
                in_flight += 1
                continue
            if f.read_error:
                continue
            if apply_threshold and f.data_access - f.q_in > threshold:
                continue  # late result: would have been replaced, discarded
            valid.append(f)
        valid.sort(key=lambda f: (f.data_access, f.mid.fragment_index))
        if len(valid) >= cw.k:
            used = valid[: cw.k]
            penalty_s = decode_latency_penalty(
                [f.mid.fragment_index for f in used], cw.k, cw.systematic, cfg.decode_penalty_s
            )
            completion = used[-1].data_access + int(penalty_s / cfg.step_seconds + 0.5)
            starts = sorted(f.dr_in for f in valid if f.dr_in is not None)
            first_byte_s = (
                (starts[cw.k - 1] - cw.timestamp) * cfg.step_seconds
                if len(starts) >= cw.k
                else None
            )
            records.append(
                RailObjectRecord(
                    block_id=cw.block_id,
                    data_in=cw.timestamp,
                    status=ObjectStatus.COMPLETED,
                    completion_step=completion,
                    latency_s=(completion - cw.timestamp) * cfg.step_seconds,
                    first_byte_s=first_byte_s,
                    fragment_latencies_s=[
                        (f.data_access - cw.timestamp) * cfg.step_seconds for f in valid
                    ],
                )
            )
        else:
            status = ObjectStatus.PENDING if in_flight else ObjectStatus.FAILED
            records.append(
                RailObjectRecord(
                    block_id=cw.block_id,
                    data_in=cw.timestamp,
                    status=status,
                    completion_step=None,
                    latency_s=None,
                    first_byte_s=None,
                    fragment_latencies_s=[],
                )
            )
    return records


def aggregate_latency(
    fragment_latencies_by_object: dict[int, list[float]], k: int
) -> dict[int, float]:
    """Per-object latency: the k-th smallest fragment completion latency."""
    out = {}
    for block_id, latencies in fragment_latencies_by_object.items():
        if len(latencies) >= k:
            out[block_id] = sorted(latencies)[k - 1]
    return out


def _paper_aggregate_approximation(
    results: list[SimulationResult], objects: list[RailObjectRecord], k: int, step_seconds: float
) -> float:
    """The (1 / min m_i) sum_i kth-min_j d_ij diagnostic, taken literally."""
    per_library_latencies: list[list[float]] = []
    for res in results:
        lats = [
            (f.data_access - f.data_in) * step_seconds
            for f in res.fragments
            if f.data_access is not None and not f.read_error
        ]
        per_library_latencies.append(lats)
    counts = [len(res.fragments) for res in results]
    min_m = min((c for c in counts if c > 0), default=0)
    if min_m == 0:
        return math.nan
    total = 0.0
    for lats in per_library_latencies:
        if len(lats) >= k:
            total += sorted(lats)[k - 1]
    return total / min_m


def _merge_reports(
    cfg: SimConfig,
    results: list[SimulationResult],
    objects: list[RailObjectRecord],
    per_library_reports: list[KpiReport],
) -> KpiReport:
    from .kpis import LatencyStats

    n_libs = len(results)
    base = per_library_reports[0]
    completed = [o for o in objects if o.status is ObjectStatus.COMPLETED]
    hours = base.hours
    mean_over_libs = lambda series_list: [
        float(np.mean([s[i] for s in series_list])) for i in range(len(hours))
    ]
    first = LatencyStats.from_seconds([o.first_byte_s for o in completed])
    last = LatencyStats.from_seconds([o.latency_s for o in completed])
    sim_hours = base.sim_hours
    exchanges_total = sum(r.exchanges_total for r in results)
    requests_total = len(objects)
    return KpiReport(
        total_capacity_pb=cfg.total_capacity_pb * n_libs,
        sim_hours=sim_hours,
        num_libraries=n_libs,
        requests_total=requests_total,
        objects_completed=len(completed),
        retrieval_failures=sum(1 for o in objects if o.status is ObjectStatus.FAILED),
        objects_in_flight=sum(1 for o in objects if o.status is ObjectStatus.PENDING),
        fragments_total=sum(len(r.fragments) for r in results),
        fragments_completed=sum(
            1 for r in results for f in r.fragments if f.data_access is not None
        ),
        fragments_in_flight=sum(len(r.in_flight) for r in results),
        redispatches_total=0,
        first_byte=first,
        last_byte=last,
        exchanges_total=exchanges_total,
        objects_touched=exchanges_total,
        exchange_rate_per_hour=exchanges_total / sim_hours if sim_hours else 0.0,
        per_robot_exchanges=[x for rep in per_library_reports for x in rep.per_robot_exchanges],
        max_hourly_exchanges_per_robot=max(
            rep.max_hourly_exchanges_per_robot for rep in per_library_reports
        ),
        read_errors_total=sum(rep.read_errors_total for rep in per_library_reports),
        data_busy_s=sum(rep.data_busy_s for rep in per_library_reports),
        robot_busy_s=sum(rep.robot_busy_s for rep in per_library_reports),
        drive_busy_s=sum(rep.drive_busy_s for rep in per_library_reports),
        request_rate_per_hour=requests_total / sim_hours if sim_hours else 0.0,
        dr_queue_mean_len=float(np.mean([rep.dr_queue_mean_len for rep in per_library_reports])),
        d_queue_mean_len=float(np.mean([rep.d_queue_mean_len for rep in per_library_reports])),
        hours=hours,
        requests_by_hour=[
            int(sum(rep.requests_by_hour[i] for rep in per_library_reports))
            for i in range(len(hours))
        ],
        exchanges_by_hour=[
            int(sum(rep.exchanges_by_hour[i] for rep in per_library_reports))
            for i in range(len(hours))
        ],
        read_errors_by_hour=[
            int(sum(rep.read_errors_by_hour[i] for rep in per_library_reports))
            for i in range(len(hours))
        ],
        dr_queue_len_by_hour=mean_over_libs([rep.dr_queue_len_by_hour for rep in per_library_reports]),
        d_queue_len_by_hour=mean_over_libs([rep.d_queue_len_by_hour for rep in per_library_reports]),
        first_byte_mean_by_hour=[],
        last_byte_mean_by_hour=[],
        dr_queue_len_distribution=[],
        d_queue_len_distribution=[],
        unstable_hint=any(rep.unstable_hint for rep in per_library_reports),
    )


def run_rail(
    cfg: SimConfig,
    service_seed_overrides: dict[int, int] | None = None,
) -> RailResult:
    """Execute an N-library array run sequentially and aggregate it.

    With one library this is exactly the single-library simulation. The
    optional per-library service seed overrides exist so tests can verify
    that service noise never leaks into the shared arrival pattern.
    """
    rail = RailConfig(cfg)
    rail.validate()
    n_libs = cfg.num_libraries

    if n_libs == 1 and not service_seed_overrides:
        result = simulate_single(cfg)
        objects = object_records(result)
        report = compute_kpis(result, objects)
        rail_objects = [
            RailObjectRecord(
                block_id=o.block_id,
                data_in=o.data_in,
                status=o.status,
                completion_step=o.completion_step,
                latency_s=o.last_byte_s,
                first_byte_s=o.first_byte_s,
                fragment_latencies_s=[],
            )
            for o in objects
        ]
        return RailResult(
            cfg=cfg,
            num_libraries=1,
            results=[result],
            objects=rail_objects,
            report=report,
            diagnostics={},
            single_result=result,
            single_objects=objects,
        )

    arrivals_rng = derive_rng(cfg.rng_seed, 0, ARRIVALS)
    placement_rng = derive_rng(cfg.rng_seed, 0, PLACEMENT)

    lam = derive_arrival_rate(cfg)
    if cfg.protocol is Protocol.FAILURE and cfg.drive_fail_prob > 0:
        lam = inflated_rate(lam, cfg.code_n, cfg.code_k, n_libs, cfg.drive_fail_prob)
    requests = generate_arrivals(cfg, lam, cfg.horizon_steps, arrivals_rng)
    if cfg.collocation_threshold_mb > 0:
        requests = collocate_stream(requests, cfg.collocation_threshold_mb, cfg.horizon_steps)

    grid = build_grid(cfg)
    model = MotionTimeModel.calibrate(grid, cfg.robot_xph)

    codewords: list[Codeword] = []
    submissions_by_library: list[list[Submission]] = [[] for _ in range(n_libs)]
    s = cfg.fragments_dispatched
    for block_id, req in enumerate(requests, start=1):
        homes, dispatched = dispatch_across_libraries(
            cfg.code_n, cfg.code_k, s, cfg.protocol, n_libs, placement_rng
        )
        cartridges = tuple(
            sample_distinct_cartridges(1, grid.num_cartridge_cells, placement_rng)[0]
            for _ in range(cfg.code_n)
        )
        cw = Codeword(
            block_id=block_id,
            n=cfg.code_n,
            k=cfg.code_k,
            systematic=cfg.systematic,
            object_request=req,
            fragment_cartridges=cartridges,
            fragment_libraries=homes,
        )
        codewords.append(cw)
        for index in dispatched:
            frag = cw.fragment(index)
            submissions_by_library[homes[index - 1]].append(
                (req.arrival_step, (frag,), None)
            )

    results: list[SimulationResult] = []
    for j in range(n_libs):
        if service_seed_overrides and j in service_seed_overrides:
            service_rng = derive_rng(service_seed_overrides[j], j, SERVICE)
        else:
            service_rng = derive_rng(cfg.rng_seed, j, SERVICE)
        engine = LibraryEngine(
            cfg, model, submissions_by_library[j], service_rng, library_id=j
        )
        results.append(engine.run())

    known_blocks = {cw.block_id for cw in codewords}
    frags_by_block: dict[int, list[FragmentRequest]] = {}
    for res in results:
        for frag in res.fragments:
            if frag.mid.block_id not in known_blocks:
                raise DataIntegrityError(
                    f"library {res.library_id} trace references unknown object "
                    f"{frag.mid.block_id}"
                )
            frags_by_block.setdefault(frag.mid.block_id, []).append(frag)

    objects = _settle_rail_objects(codewords, frags_by_block, cfg)
    per_library_reports = [compute_kpis(res, objects=[]) for res in results]
    report = _merge_reports(cfg, results, objects, per_library_reports)

    diagnostics = {
        "per_library_rate_lam_j": lam * s / n_libs,
        "aotr_inflation_factor_per_failure": aotr_inflation_factor(
            cfg.code_n, cfg.code_k, n_libs
        ),
        "paper_touch_rate_form": paper_touch_rate(
            cfg.code_n, cfg.code_k, n_libs, cfg.drive_fail_prob
        ),
        "paper_aggregate_latency_approx_s": _paper_aggregate_approximation(
            results, objects, cfg.code_k, cfg.step_seconds
        ),
    }
    return RailResult(
        cfg=cfg,
        num_libraries=n_libs,
        results=results,
        objects=objects,
        report=report,
        diagnostics=diagnostics,
    )
