"""The double-queue discrete-step engine.

Time advances in fixed steps. Each step runs, in order: due robot motion
completions, new arrivals, DR-queue dispatch (head request takes the
lowest-id free drive and a free robot, then the four-motion exchange),
read completions with the deferred-dismount check, Failure-protocol
timeout checks, and D-queue service (a robot carries the spent cartridge
home, freeing the drive). Both queues are strictly FIFO.

``run`` skips over steps in which nothing can happen; the produced trace
is identical to stepping one step at a time, which the test suite checks.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .config import Protocol, SimConfig, derive_arrival_rate
from .geometry import MotionTimeModel, build_grid
from .redundancy import Codeword, CodewordTracker, FragmentRequest, ObjectStatus
from .seeding import ARRIVALS, PLACEMENT, SERVICE, derive_rng
from .workload import collocate_stream, generate_arrivals


class SimulationInvariantError(AssertionError):
    """Internal consistency was violated; the engine never limps onward."""


@dataclass
class Robot:
    robot_id: int
    busy_until: int | None = None
    exchange_count: int = 0
    busy_steps: int = 0

    @property
    def free(self) -> bool:
        return self.busy_until is None


class DriveState(Enum):
    FREE = "free"  # in the pool, ready to be reserved
    BUSY = "busy"  # reserved for a request until a robot services it again
    IDLE = "idle"  # finished reading, waiting in the D queue


@dataclass
class Drive:
    drive_id: int
    state: DriveState = DriveState.FREE
    loaded_cartridge: int | None = None
    reserved_at: int | None = None
    occupation_steps: int = 0
    current: FragmentRequest | None = None


@dataclass
class ReadOutcome:
    duration_s: float
    retries: int
    failed: bool


def service_read(
    cfg: SimConfig,
    size_mb: float,
    rng: np.random.Generator,
    already_loaded: bool = False,
) -> ReadOutcome:
    """Drive-side service: load, position, retries, stream the bytes.

    Load and position are Uniform(0, 2 * mean). The retry count is
    Binomial(max_retries, p_d); drawing every retry (probability
    p_d ** max_retries) means the read failed for good. Each retry costs
    one repositioning resample. A cached cartridge skips the load.
    """
    load = 0.0 if already_loaded else float(rng.uniform(0.0, 2.0 * cfg.mean_load_time_s))
    position = float(rng.uniform(0.0, 2.0 * cfg.mean_position_time_s))
    retries = int(rng.binomial(cfg.max_retries, cfg.drive_fail_prob)) if cfg.drive_fail_prob > 0 else 0
    retry_time = float(rng.uniform(0.0, 2.0 * cfg.mean_position_time_s)) if retries else 0.0
    duration = load + position + retries * retry_time + size_mb / cfg.drive_rate_mbps
    failed = cfg.drive_fail_prob > 0 and retries == cfg.max_retries
    return ReadOutcome(duration, retries, failed)


@dataclass
class ReturnRow:
    """One drive-return event: the R-queue side of the trace."""

    mid: str
    q_in: int
    q_len: int
    seq: int
    q_out: int | None = None
    d_out: int | None = None


Submission = tuple[int, tuple[FragmentRequest, ...], CodewordTracker | None]


@dataclass
class SimulationResult:
    cfg: SimConfig
    library_id: int
    horizon_steps: int
    fragments: list[FragmentRequest]
    return_rows: list[ReturnRow]
    trackers: list[CodewordTracker]
    request_steps: list[int]
    exchange_log: list[tuple[int, int]]
    read_error_log: list[int]
    queue_len_log: list[tuple[int, int, int]]
    robots: list[Robot]
    drives: list[Drive]
    data_busy_steps: int

    @property
    def exchanges_total(self) -> int:
        return len(self.exchange_log)

    @property
    def objects_touched(self) -> int:
        """NoT: one count per cartridge carried into an empty drive."""
        return self.exchanges_total

    @property
    def robot_busy_steps(self) -> int:
        return sum(r.busy_steps for r in self.robots)

    @property
    def drive_occupation_steps(self) -> int:
        return sum(d.occupation_steps for d in self.drives)

    @property
    def in_flight(self) -> list[FragmentRequest]:
        return [f for f in self.fragments if f.dr_out is None]


class LibraryEngine:
    """One library instance; strictly single-threaded and deterministic."""

    def __init__(
        self,
        cfg: SimConfig,
        motion_model: MotionTimeModel,
        submissions: list[Submission],
        service_rng: np.random.Generator,
        library_id: int = 0,
    ):
        self.cfg = cfg
        self.model = motion_model
        self.rng = service_rng
        self.library_id = library_id
        self.horizon = cfg.horizon_steps
        self.clock = 0

        self._submissions = sorted(submissions, key=lambda s: s[0])
        self._next_submission = 0

        self.robots = [Robot(i) for i in range(cfg.num_robots)]
        self.drives = [Drive(i) for i in range(cfg.num_drives)]
        self._free_robots = list(range(cfg.num_robots))
        self._free_drives = list(range(cfg.num_drives))

        self._dr_queue: deque[FragmentRequest] = deque()
        self._dr_len = 0
        self._pending_by_cartridge: dict[int, deque[FragmentRequest]] = {}
        self._d_queue: deque[tuple[Drive, FragmentRequest, ReturnRow]] = deque()

        self._motion_events: list = []  # exchange / return completions
        self._read_events: list = []
        self._timeout_events: list = []
        self._seq = 0

        self.fragments: list[FragmentRequest] = []
        self.return_rows: list[ReturnRow] = []
        self.trackers: list[CodewordTracker] = []
        self._tracker_by_block: dict[int, CodewordTracker] = {}
        for _, frags, tracker in self._submissions:
            if tracker is not None:
                self.trackers.append(tracker)
                self._tracker_by_block[tracker.codeword.block_id] = tracker

        self.request_steps = [s[0] for s in self._submissions]
        self.exchange_log: list[tuple[int, int]] = []
        self.read_error_log: list[int] = []
        self.queue_len_log: list[tuple[int, int, int]] = [(0, 0, 0)]
        self.data_busy_steps = 0

        self._min_exchange_s = cfg.min_exchange_seconds
        self._needs_timeouts = cfg.protocol is Protocol.FAILURE and bool(self._tracker_by_block)

    # -- small helpers -------------------------------------------------------

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _to_steps(self, seconds: float) -> int:
        return int(seconds / self.cfg.step_seconds + 0.5)

    def _take_lowest_drive(self) -> Drive:
        return self.drives[self._free_drives.pop(0)]

    def _take_robot(self) -> Robot:
        if self.cfg.balanced_robots and len(self._free_robots) > 1:
            idx = int(self.rng.integers(len(self._free_robots)))
        else:
            idx = 0
        return self.robots[self._free_robots.pop(idx)]

    def _release_robot(self, robot: Robot) -> None:
        robot.busy_until = None
        pos = np.searchsorted(self._free_robots, robot.robot_id)
        self._free_robots.insert(int(pos), robot.robot_id)

    def _release_drive(self, drive: Drive) -> None:
        drive.state = DriveState.FREE
        drive.loaded_cartridge = None
        drive.reserved_at = None
        drive.current = None
        pos = np.searchsorted(self._free_drives, drive.drive_id)
        self._free_drives.insert(int(pos), drive.drive_id)

    def _enqueue(self, frag: FragmentRequest, step: int) -> None:
        frag.q_in = step
        frag.seq = self._next_seq()
        self._dr_queue.append(frag)
        self._dr_len += 1
        frag.q_len = self._dr_len
        self._pending_by_cartridge.setdefault(frag.cartridge_id, deque()).append(frag)
        self.fragments.append(frag)
        if self._needs_timeouts:
            heapq.heappush(
                self._timeout_events,
                (step + self.cfg.failure_threshold_steps, self._next_seq(), frag),
            )

    def _find_pending_for_cartridge(self, cartridge_id: int) -> FragmentRequest | None:
        pending = self._pending_by_cartridge.get(cartridge_id)
        if not pending:
            return None
        while pending and pending[0].consumed:
            pending.popleft()
        return pending[0] if pending else None

    def _consume(self, frag: FragmentRequest) -> None:
        frag.consumed = True
        self._dr_len -= 1

    # -- step phases ----------------------------------------------------------

    def _process_motion_events(self, tau: int) -> None:
        while self._motion_events and self._motion_events[0][0] <= tau:
            _, _, kind, robot, drive, frag, row = heapq.heappop(self._motion_events)
            if kind == "exchange":
                robot.exchange_count += 1
                self.exchange_log.append((tau, robot.robot_id))
                self._release_robot(robot)
                frag.dr_in = tau
                drive.loaded_cartridge = frag.cartridge_id
                self._begin_read(drive, frag, tau, already_loaded=False)
            else:  # return completed: cartridge back on its shelf
                self._release_robot(robot)
                frag.dr_out = tau
                drive.occupation_steps += tau - drive.reserved_at
                row.d_out = tau
                self._release_drive(drive)

    def _inject_arrivals(self, tau: int) -> None:
        while (
            self._next_submission < len(self._submissions)
            and self._submissions[self._next_submission][0] == tau
        ):
            _, frags, _ = self._submissions[self._next_submission]
            for frag in frags:
                self._enqueue(frag, tau)
            self._next_submission += 1

    def _dispatch_dr(self, tau: int) -> None:
        while self._dr_len and self._free_drives and self._free_robots:
            frag = self._dr_queue.popleft()
            if frag.consumed:
                continue
            self._consume(frag)
            drive = self._take_lowest_drive()
            robot = self._take_robot()
            frag.q_out = tau
            drive.state = DriveState.BUSY
            drive.reserved_at = tau
            drive.current = frag
            exchange_s = max(self.model.sample_exchange_seconds(self.rng), self._min_exchange_s)
            steps = max(1, self._to_steps(exchange_s))
            robot.busy_until = tau + steps
            robot.busy_steps += steps
            heapq.heappush(
                self._motion_events,
                (tau + steps, self._next_seq(), "exchange", robot, drive, frag, None),
            )

    def _begin_read(self, drive: Drive, frag: FragmentRequest, tau: int, already_loaded: bool) -> None:
        outcome = service_read(self.cfg, frag.size_mb, self.rng, already_loaded=already_loaded)
        steps = self._to_steps(outcome.duration_s)
        heapq.heappush(
            self._read_events, (tau + steps, self._next_seq(), drive, frag, outcome.failed)
        )

    def _process_read_events(self, tau: int) -> None:
        while self._read_events and self._read_events[0][0] <= tau:
            _, _, drive, frag, failed = heapq.heappop(self._read_events)
            frag.data_access = tau
            if failed:
                frag.read_error = True
                self.read_error_log.append(tau)
            else:
                self.data_busy_steps += tau - frag.q_in
            tracker = self._tracker_by_block.get(frag.mid.block_id)
            if tracker is not None:
                if failed:
                    for replacement in tracker.on_fragment_failed(frag, tau):
                        self._enqueue(replacement, tau)
                else:
                    tracker.on_fragment_complete(frag, tau)
            follow_up = None
            if self.cfg.deferred_dismount and drive.loaded_cartridge is not None:
                follow_up = self._find_pending_for_cartridge(drive.loaded_cartridge)
            if follow_up is not None:
                # Cartridge stays mounted: no robot, no motions, no exchange.
                self._consume(follow_up)
                follow_up.q_out = tau
                follow_up.dr_in = tau
                frag.dr_out = tau
                drive.occupation_steps += tau - drive.reserved_at
                drive.reserved_at = tau
                drive.current = follow_up
                self._begin_read(drive, follow_up, tau, already_loaded=True)
            else:
                drive.state = DriveState.IDLE
                row = ReturnRow(
                    mid=str(frag.mid), q_in=tau, q_len=len(self._d_queue) + 1, seq=self._next_seq()
                )
                self.return_rows.append(row)
                self._d_queue.append((drive, frag, row))

    def _process_timeouts(self, tau: int) -> None:
        while self._timeout_events and self._timeout_events[0][0] <= tau:
            _, _, frag = heapq.heappop(self._timeout_events)
            if frag.read_error or frag.timed_out:
                continue  # already handled as a failure
            if frag.data_access is not None:
                continue  # came back within the threshold
            frag.timed_out = True
            tracker = self._tracker_by_block.get(frag.mid.block_id)
            if tracker is not None:
                for replacement in tracker.on_fragment_failed(frag, tau):
                    self._enqueue(replacement, tau)

    def _dispatch_returns(self, tau: int) -> None:
        while self._d_queue and self._free_robots:
            drive, frag, row = self._d_queue.popleft()
            robot = self._take_robot()
            row.q_out = tau
            steps = max(1, self._to_steps(self.model.sample_return_seconds(self.rng)))
            robot.busy_until = tau + steps
            robot.busy_steps += steps
            heapq.heappush(
                self._motion_events,
                (tau + steps, self._next_seq(), "return", robot, drive, frag, row),
            )

    def _record_queue_lens(self, tau: int) -> None:
        current = (self._dr_len, len(self._d_queue))
        last = self.queue_len_log[-1]
        if (last[1], last[2]) == current:
            return
        if last[0] == tau:
            self.queue_len_log[-1] = (tau, current[0], current[1])
        else:
            self.queue_len_log.append((tau, current[0], current[1]))

    # -- public surface --------------------------------------------------------

    def step(self) -> None:
        """Advance the simulation exactly one step."""
        tau = self.clock
        self._process_motion_events(tau)
        self._inject_arrivals(tau)
        self._dispatch_dr(tau)
        self._process_read_events(tau)
        self._process_timeouts(tau)
        self._dispatch_returns(tau)
        self._record_queue_lens(tau)
        self.clock = tau + 1

    def _next_active_step(self) -> int:
        """Earliest step at which anything can change."""
        candidates = [self.horizon]
        if self._next_submission < len(self._submissions):
            candidates.append(self._submissions[self._next_submission][0])
        for heap in (self._motion_events, self._read_events, self._timeout_events):
            if heap:
                candidates.append(heap[0][0])
        if self._dr_len and self._free_drives and self._free_robots:
            candidates.append(self.clock)
        if self._d_queue and self._free_robots:
            candidates.append(self.clock)
        return min(candidates)

    def run(self, check_invariants: bool = False):
        """Run to the horizon, skipping steps in which nothing can happen."""
        while self.clock < self.horizon:
            nxt = self._next_active_step()
            if nxt > self.clock:
                self.clock = min(nxt, self.horizon)
                continue
            self.step()
            if check_invariants:
                self.check_invariants()
        self.check_invariants()
        return self.result()

    def iter_steps(self):
        """Single-step iterator so harnesses can inspect state between steps."""
        while self.clock < self.horizon:
            self.step()
            yield self

    def check_invariants(self) -> None:
        busy_robots = sum(1 for r in self.robots if r.busy_until is not None)
        if busy_robots + len(self._free_robots) != self.cfg.num_robots:
            raise SimulationInvariantError(
                f"robot pool leak: {busy_robots} busy + {len(self._free_robots)} free "
                f"!= {self.cfg.num_robots}"
            )
        by_state = {state: 0 for state in DriveState}
        for d in self.drives:
            by_state[d.state] += 1
        if by_state[DriveState.FREE] != len(self._free_drives):
            raise SimulationInvariantError("free-drive list out of sync with drive states")
        if sum(by_state.values()) != self.cfg.num_drives:
            raise SimulationInvariantError("drive pool leak")
        if by_state[DriveState.IDLE] != len(self._d_queue):
            raise SimulationInvariantError("D queue out of sync with idle drives")
        real_len = sum(1 for f in self._dr_queue if not f.consumed)
        if real_len != self._dr_len:
            raise SimulationInvariantError("DR queue length counter out of sync")

    def result(self) -> SimulationResult:
        return SimulationResult(
            cfg=self.cfg,
            library_id=self.library_id,
            horizon_steps=self.horizon,
            fragments=self.fragments,
            return_rows=self.return_rows,
            trackers=self.trackers,
            request_steps=self.request_steps,
            exchange_log=self.exchange_log,
            read_error_log=self.read_error_log,
            queue_len_log=self.queue_len_log,
            robots=self.robots,
            drives=self.drives,
            data_busy_steps=self.data_busy_steps,
        )


def sample_distinct_cartridges(
    n: int, num_cells: int, rng: np.random.Generator
) -> tuple[int, ...]:
    if n > num_cells:
        raise ValueError(f"cannot place {n} fragments on {num_cells} distinct cartridges")
    if n == 1:
        return (int(rng.integers(num_cells)),)
    return tuple(int(i) for i in rng.choice(num_cells, size=n, replace=False))


def build_single_library_engine(cfg: SimConfig, library_index: int = 0) -> LibraryEngine:
    """Wire workload, placement, redundancy and engine for one library."""
    arrivals_rng = derive_rng(cfg.rng_seed, library_index, ARRIVALS)
    placement_rng = derive_rng(cfg.rng_seed, library_index, PLACEMENT)
    service_rng = derive_rng(cfg.rng_seed, library_index, SERVICE)

    lam = derive_arrival_rate(cfg)
    requests = generate_arrivals(cfg, lam, cfg.horizon_steps, arrivals_rng)
    if cfg.collocation_threshold_mb > 0:
        requests = collocate_stream(requests, cfg.collocation_threshold_mb, cfg.horizon_steps)

    grid = build_grid(cfg)
    model = MotionTimeModel.calibrate(grid, cfg.robot_xph)

    submissions: list[Submission] = []
    for block_id, req in enumerate(requests, start=1):
        homes = sample_distinct_cartridges(cfg.code_n, grid.num_cartridge_cells, placement_rng)
        cw = Codeword(
            block_id=block_id,
            n=cfg.code_n,
            k=cfg.code_k,
            systematic=cfg.systematic,
            object_request=req,
            fragment_cartridges=homes,
        )
        tracker = CodewordTracker(
            codeword=cw,
            protocol=cfg.protocol,
            dispatch_count=cfg.fragments_dispatched,
            rng=placement_rng,
        )
        frags = tracker.initial_fragments()
        submissions.append((req.arrival_step, tuple(frags), tracker))

    return LibraryEngine(cfg, model, submissions, service_rng, library_id=library_index)


def simulate_single(cfg: SimConfig, check_invariants: bool = False) -> SimulationResult:
    engine = build_single_library_engine(cfg)
    return engine.run(check_invariants=check_invariants)


@dataclass
class ObjectRecord:
    """Outcome of one object retrieval, settled after the run."""

    block_id: int
    data_in: int
    status: ObjectStatus
    completion_step: int | None
    first_byte_step: int | None
    last_byte_s: float | None
    first_byte_s: float | None
    fragments_queued: int
    redispatches: int


def object_records(result: SimulationResult) -> list[ObjectRecord]:
    """Settle per-object latencies from the trackers (single-library runs)."""
    cfg = result.cfg
    by_block: dict[int, list[FragmentRequest]] = {}
    for frag in result.fragments:
        by_block.setdefault(frag.mid.block_id, []).append(frag)
    records = []
    for tracker in result.trackers:
        cw = tracker.codeword
        frags = by_block.get(cw.block_id, [])
        status = tracker.status
        completion = None
        first_byte = None
        last_s = None
        first_s = None
        if status is ObjectStatus.COMPLETED:
            penalty_steps = int(
                tracker.decode_penalty_s(cfg.decode_penalty_s) / cfg.step_seconds + 0.5
            )
            completion = tracker.completion_step + penalty_steps
            starts = sorted(f.dr_in for f in frags if f.completed_valid and f.dr_in is not None)
            first_byte = starts[cw.k - 1] if len(starts) >= cw.k else None
            last_s = (completion - cw.timestamp) * cfg.step_seconds
            if first_byte is not None:
                first_s = (first_byte - cw.timestamp) * cfg.step_seconds
        records.append(
            ObjectRecord(
                block_id=cw.block_id,
                data_in=cw.timestamp,
                status=status,
                completion_step=completion,
                first_byte_step=first_byte,
                last_byte_s=last_s,
                first_byte_s=first_s,
                fragments_queued=len(frags),
                redispatches=tracker.redispatch_count,
            )
        )
    return records
