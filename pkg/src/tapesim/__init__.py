"""Discrete-step simulator for robotic tape-library storage systems.

Models the double-queue service cycle of a library (data-request queue
plus drive-return queue over a shared pool of robots and drives),
replication and erasure-coded retrieval protocols, and arrays of
independent libraries, with closed-form queueing approximations for
cross-validation.
"""

from .config import (
    ConfigError,
    ConfigParseError,
    ConfigValidationError,
    Protocol,
    SimConfig,
    derive_arrival_rate,
    load_config,
    parse_config,
    serialize_config,
)
from .engine import (
    LibraryEngine,
    SimulationResult,
    build_single_library_engine,
    object_records,
    service_read,
    simulate_single,
)
from .geometry import LibraryGrid, MotionKind, MotionTimeModel, build_grid
from .kpis import KpiReport, compute_kpis
from .queueing import (
    QueueModelParams,
    UnstableQueueError,
    end_to_end_estimate,
    g_g_correction,
    mean_queue_length,
    p_zero,
    wait_time,
)
from .rail import RailResult, dispatch_across_libraries, inflated_rate, run_rail
from .redundancy import (
    Codeword,
    CodewordTracker,
    FragmentRequest,
    MessageId,
    decode_latency_penalty,
    dispatch_failure,
    dispatch_redundant,
)
from .workload import CollocationBuffer, DataRequest, collocate_stream, generate_arrivals

__version__ = "0.1.0"
