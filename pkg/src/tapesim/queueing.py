"""Closed-form queueing approximations used for sizing and validation.

The library's real queues are coupled and far from M/M/c, so these are
deliberately idealized bounds: an M/M/c waiting queue (Erlang C), a
squared-coefficient-of-variation correction for G/G/c, and a two-queue
decomposition (robots, then drives) for an end-to-end estimate. The
simulator is validated against the M/M/1 and M/M/c values on degenerate
configurations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class UnstableQueueError(ValueError):
    def __init__(self, queue_name: str, rho: float):
        super().__init__(
            f"queue {queue_name!r} is unstable: utilization rho={rho:.4g} >= 1"
        )
        self.queue_name = queue_name
        self.rho = rho


@dataclass(frozen=True)
class QueueModelParams:
    """One isolated queue: arrivals lam, per-server rate mu, c servers.

    ca2/cs2 are the squared coefficients of variation of inter-arrival
    and service times (both 1 for the exponential case).
    """

    lam: float
    mu: float
    c: int
    ca2: float = 1.0
    cs2: float = 1.0
    name: str = "queue"

    def __post_init__(self):
        if self.lam < 0 or self.mu <= 0 or self.c < 1:
            raise ValueError("need lam >= 0, mu > 0, c >= 1")

    @property
    def rho(self) -> float:
        return self.lam / (self.c * self.mu)

    @property
    def mean_service_s(self) -> float:
        return 1.0 / self.mu

    def require_stable(self) -> None:
        if self.rho >= 1.0:
            raise UnstableQueueError(self.name, self.rho)


def p_zero(params: QueueModelParams) -> float:
    """Probability of an empty M/M/c system."""
    params.require_stable()
    c, rho = params.c, params.rho
    a = c * rho  # offered load in Erlangs
    total = sum(a**m / math.factorial(m) for m in range(c))
    total += a**c / (math.factorial(c) * (1.0 - rho))
    return 1.0 / total


def mean_queue_length(params: QueueModelParams, convention: str = "erlang_c") -> float:
    """Mean number waiting, L_q.

    "erlang_c" is the standard M/M/c form P0 (c rho)^c rho / (c! (1-rho)^2).
    "compact" evaluates P0 rho^(c+1) / (c! (1-rho)^2) instead; the two
    agree at c=1 and the switch exists so the conventions can be compared
    side by side.
    """
    params.require_stable()
    c, rho = params.c, params.rho
    p0 = p_zero(params)
    if convention == "erlang_c":
        numerator = (c * rho) ** c * rho
    elif convention == "compact":
        numerator = rho ** (c + 1)
    else:
        raise ValueError(f"unknown L_q convention {convention!r}")
    return p0 * numerator / (math.factorial(c) * (1.0 - rho) ** 2)


def wait_time(params: QueueModelParams, convention: str = "erlang_c") -> float:
    """Mean wait in queue W_q = L_q / lam (Little's law)."""
    params.require_stable()
    if params.lam == 0:
        return 0.0
    return mean_queue_length(params, convention) / params.lam


def g_g_correction(params: QueueModelParams, convention: str = "erlang_c") -> float:
    """G/G/c wait approximation G_q = W_q (ca2 + cs2) / 2."""
    return wait_time(params, convention) * (params.ca2 + params.cs2) / 2.0


def end_to_end_estimate(
    robot_params: QueueModelParams, drive_params: QueueModelParams
) -> float:
    """Idealized mean access time: both queue waits plus both services.

    Robots are treated as an M/G/r queue and drives as a G/G/d queue fed
    by the robots' departures; the result is a rough bound, not a claim
    of equality with the simulator.
    """
    w_robot = g_g_correction(robot_params)
    w_drive = g_g_correction(drive_params)
    return w_robot + w_drive + robot_params.mean_service_s + drive_params.mean_service_s


def sizing_table(
    lams: list[float],
    mu: float,
    c: int,
    ca2: float = 1.0,
    cs2: float = 1.0,
) -> list[dict[str, float | str]]:
    """One row per arrival rate: rho, L_q, W_q, G_q (or 'unstable')."""
    rows: list[dict[str, float | str]] = []
    for lam in lams:
        params = QueueModelParams(lam=lam, mu=mu, c=c, ca2=ca2, cs2=cs2)
        row: dict[str, float | str] = {"lam": lam, "rho": params.rho}
        try:
            row["L_q"] = mean_queue_length(params)
            row["W_q"] = wait_time(params)
            row["G_q"] = g_g_correction(params)
        except UnstableQueueError:
            row["L_q"] = row["W_q"] = row["G_q"] = "unstable"
        rows.append(row)
    return rows


def service_cov2(samples) -> float:
    """Sample squared coefficient of variation, for feeding G_q from traces."""
    import numpy as np

    xs = np.asarray(list(samples), dtype=float)
    if xs.size < 2 or xs.mean() == 0:
        return 0.0
    return float(xs.var(ddof=1) / xs.mean() ** 2)
