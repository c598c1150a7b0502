"""Request stream generation and collocation buffering.

Arrivals per step are Poisson; object sizes are Weibull (or a configured
constant), users are drawn uniformly. Collocation accumulates per-user
requests until a size threshold and emits one merged request, thinning
the per-user Poisson stream by a factor of threshold / mean-size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import SimConfig


@dataclass(frozen=True)
class DataRequest:
    """One user object request (reads only; writes mirror the same cycle)."""

    request_id: int
    user_id: int
    arrival_step: int
    object_size_mb: float
    merged_from: int = 1


def generate_arrivals(
    cfg: SimConfig,
    lam_per_step: float,
    horizon_steps: int,
    rng: np.random.Generator,
) -> list[DataRequest]:
    """Materialize the request stream for one run, ordered by arrival step.

    Draws the total count Poisson(lam * horizon) and spreads arrivals
    uniformly over steps, which is exactly per-step Poisson without ever
    allocating a horizon-sized array.
    """
    if lam_per_step < 0:
        raise ValueError("arrival rate must be nonnegative")
    if lam_per_step == 0 or horizon_steps <= 0:
        return []
    total = int(rng.poisson(lam_per_step * horizon_steps))
    if total == 0:
        return []
    steps = np.sort(rng.integers(0, horizon_steps, size=total))
    users = rng.integers(0, cfg.num_users, size=total)
    if cfg.object_size_fixed_mb is not None:
        sizes = np.full(total, cfg.object_size_fixed_mb)
    else:
        sizes = cfg.object_size_scale_mb * rng.weibull(cfg.object_size_shape, size=total)
    return [
        DataRequest(
            request_id=i,
            user_id=int(users[i]),
            arrival_step=int(steps[i]),
            object_size_mb=float(sizes[i]),
        )
        for i in range(total)
    ]


@dataclass
class CollocationBuffer:
    """Per-user RAM staging for small requests.

    A user's buffer flushes exactly when its accumulated size first reaches
    the threshold; a threshold of zero disables collocation entirely.
    """

    threshold_mb: float
    _pending: dict[int, list[DataRequest]] = field(default_factory=dict)
    _accumulated: dict[int, float] = field(default_factory=dict)
    _seen: dict[int, int] = field(default_factory=dict)
    _seen_bytes: dict[int, float] = field(default_factory=dict)
    _next_id: int = 0

    def mean_request_size(self, user_id: int) -> float:
        """Observed m_i for one user; 0 before any request arrived."""
        count = self._seen.get(user_id, 0)
        return self._seen_bytes.get(user_id, 0.0) / count if count else 0.0

    def _merge(self, user_id: int, flush_step: int) -> DataRequest:
        batch = self._pending.pop(user_id)
        total = self._accumulated.pop(user_id)
        merged = DataRequest(
            request_id=self._next_id,
            user_id=user_id,
            arrival_step=flush_step,
            object_size_mb=total,
            merged_from=len(batch),
        )
        self._next_id += 1
        return merged

    def offer(self, incoming: DataRequest) -> DataRequest | None:
        """Buffer one request; return the merged request on flush."""
        self._seen[incoming.user_id] = self._seen.get(incoming.user_id, 0) + 1
        self._seen_bytes[incoming.user_id] = (
            self._seen_bytes.get(incoming.user_id, 0.0) + incoming.object_size_mb
        )
        if self.threshold_mb <= 0:
            passthrough = DataRequest(
                request_id=self._next_id,
                user_id=incoming.user_id,
                arrival_step=incoming.arrival_step,
                object_size_mb=incoming.object_size_mb,
            )
            self._next_id += 1
            return passthrough
        self._pending.setdefault(incoming.user_id, []).append(incoming)
        self._accumulated[incoming.user_id] = (
            self._accumulated.get(incoming.user_id, 0.0) + incoming.object_size_mb
        )
        if self._accumulated[incoming.user_id] >= self.threshold_mb:
            return self._merge(incoming.user_id, incoming.arrival_step)
        return None

    def flush_all(self, at_step: int) -> list[DataRequest]:
        """Emit every partial buffer so bytes are conserved at horizon end."""
        merged = [self._merge(uid, at_step) for uid in sorted(self._pending)]
        return merged


def collocate_stream(
    requests: list[DataRequest], threshold_mb: float, horizon_steps: int
) -> list[DataRequest]:
    """Run a whole arrival stream through collocation, flushing at the end."""
    buffer = CollocationBuffer(threshold_mb)
    out: list[DataRequest] = []
    for req in requests:
        merged = buffer.offer(req)
        if merged is not None:
            out.append(merged)
    out.extend(buffer.flush_all(max(horizon_steps - 1, 0)))
    return out


def write_workload_csv(requests: list[DataRequest], path) -> None:
    """Replayable trace of the generated stream."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("arrival_step,user_id,object_size_mb,merged_from\n")
        for req in requests:
            fh.write(
                f"{req.arrival_step},{req.user_id},{req.object_size_mb!r},{req.merged_from}\n"
            )
