"""Replication / erasure-coding bookkeeping and the retrieval protocols.

Only fragment counts and timing matter to latency, so no code arithmetic
happens here: a codeword is n fragments on distinct failure domains
(cartridges in one library, whole libraries in an array), any k of which
reconstruct the object.

Redundant protocol: dispatch s >= k fragments up front, complete at the
k-th valid service, let the stragglers run and ignore their results.

Failure protocol: dispatch exactly k; when a fragment's service exceeds
the decision threshold or its read errors out, dispatch one replacement
from the unused indices. Once more than n - k fragments have failed the
object is unretrievable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .config import Protocol
from .workload import DataRequest


class RedundancyError(ValueError):
    pass


class UnrecoverableObjectError(RedundancyError):
    """Raised by the pure dispatch helpers; the engine records the outcome."""


@dataclass(frozen=True)
class MessageId:
    block_id: int
    fragment_index: int

    def __str__(self) -> str:
        return f"{self.block_id}.{self.fragment_index}"


@dataclass(frozen=True)
class Codeword:
    """One object's n-fragment group with its per-fragment failure domains."""

    block_id: int
    n: int
    k: int
    systematic: bool
    object_request: DataRequest
    fragment_cartridges: tuple[int, ...]
    fragment_libraries: tuple[int, ...] | None = None

    def __post_init__(self):
        if not 1 <= self.k <= self.n:
            raise RedundancyError(f"need n >= k >= 1, got (n={self.n}, k={self.k})")
        if len(self.fragment_cartridges) != self.n:
            raise RedundancyError("one cartridge per fragment required")
        if self.fragment_libraries is None:
            if len(set(self.fragment_cartridges)) != self.n:
                raise RedundancyError("fragments of a codeword must sit on distinct cartridges")
        else:
            if len(self.fragment_libraries) != self.n:
                raise RedundancyError("one library per fragment required")
            if len(set(self.fragment_libraries)) != self.n:
                raise RedundancyError("fragments of a codeword must sit on distinct libraries")

    @property
    def fragment_size_mb(self) -> float:
        return self.object_request.object_size_mb / self.k

    @property
    def timestamp(self) -> int:
        return self.object_request.arrival_step

    def fragment(self, index: int) -> "FragmentRequest":
        if not 1 <= index <= self.n:
            raise RedundancyError(f"fragment index {index} outside 1..{self.n}")
        return FragmentRequest(
            mid=MessageId(self.block_id, index),
            size_mb=self.fragment_size_mb,
            cartridge_id=self.fragment_cartridges[index - 1],
            library_id=None if self.fragment_libraries is None else self.fragment_libraries[index - 1],
            data_in=self.timestamp,
        )


@dataclass
class FragmentRequest:
    """One fragment's trip through a library, with its trace checkpoints.

    data_in is the object's first contact with the system; for Failure
    protocol replacements it predates q_in.
    """

    mid: MessageId
    size_mb: float
    cartridge_id: int
    library_id: int | None
    data_in: int

    q_in: int | None = None
    q_out: int | None = None
    dr_in: int | None = None
    data_access: int | None = None
    dr_out: int | None = None
    q_len: int | None = None
    seq: int = -1

    read_error: bool = False
    timed_out: bool = False
    consumed: bool = False  # taken off the DR queue (dispatch or deferral)

    @property
    def completed_valid(self) -> bool:
        return self.data_access is not None and not self.read_error and not self.timed_out


def dispatch_redundant(cw: Codeword, s: int) -> list[FragmentRequest]:
    """Fragments 1..s, identical timestamp, queued in index order."""
    if not cw.k <= s <= cw.n:
        raise RedundancyError(f"need k <= s <= n, got s={s} with (n={cw.n}, k={cw.k})")
    return [cw.fragment(i) for i in range(1, s + 1)]


def dispatch_failure(cw: Codeword, rng: np.random.Generator) -> list[FragmentRequest]:
    """A uniformly random k-subset of the fragment indices, in index order."""
    indices = sorted(int(i) + 1 for i in rng.choice(cw.n, size=cw.k, replace=False))
    return [cw.fragment(i) for i in indices]


def decode_latency_penalty(
    used_indices, k: int, systematic: bool, penalty_s: float
) -> float:
    """Decode cost charged on completion.

    Non-systematic codes decode every read; systematic codes decode only
    when a parity fragment (index > k) was among the k used.
    """
    if penalty_s < 0:
        raise RedundancyError("decode penalty must be nonnegative")
    if not systematic:
        return penalty_s
    if any(index > k for index in used_indices):
        return penalty_s
    return 0.0


class ObjectStatus(Enum):
    PENDING = "pending"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class CodewordTracker:
    """Protocol state machine for one codeword inside a single library.

    The engine feeds it fragment completions, read errors and timeouts;
    it answers with replacement fragments to enqueue and settles the
    object outcome. Results of timed-out fragments are discarded even if
    they eventually arrive.
    """

    codeword: Codeword
    protocol: Protocol
    dispatch_count: int
    rng: np.random.Generator | None = None

    status: ObjectStatus = ObjectStatus.PENDING
    completion_step: int | None = None
    used_indices: tuple[int, ...] = ()
    failed_count: int = 0
    redispatch_count: int = 0
    _dispatched: set[int] = field(default_factory=set)
    _valid_completions: list[tuple[int, int]] = field(default_factory=list)

    def initial_fragments(self) -> list[FragmentRequest]:
        if self.protocol is Protocol.REDUNDANT:
            frags = dispatch_redundant(self.codeword, self.dispatch_count)
        else:
            if self.rng is None:
                raise RedundancyError("failure protocol needs a random stream")
            frags = dispatch_failure(self.codeword, self.rng)
        self._dispatched = {f.mid.fragment_index for f in frags}
        return frags

    # -- event feed ----------------------------------------------------------

    def on_fragment_complete(self, frag: FragmentRequest, step: int) -> None:
        if frag.timed_out or frag.read_error:
            return  # late or broken result: ignored, it only burned resources
        self._valid_completions.append((step, frag.mid.fragment_index))
        if self.status is ObjectStatus.PENDING and len(self._valid_completions) >= self.codeword.k:
            self.status = ObjectStatus.COMPLETED
            self.completion_step = step
            self.used_indices = tuple(idx for _, idx in self._valid_completions[: self.codeword.k])

    def on_fragment_failed(self, frag: FragmentRequest, step: int) -> list[FragmentRequest]:
        """Handle a timeout or read error; may return a replacement to queue."""
        self.failed_count += 1
        if self.status is not ObjectStatus.PENDING:
            return []
        cw = self.codeword
        if self.protocol is Protocol.REDUNDANT:
            if self.dispatch_count - self.failed_count < cw.k:
                self.status = ObjectStatus.FAILED
            return []
        if self.failed_count > cw.n - cw.k:
            self.status = ObjectStatus.FAILED
            return []
        unused = [i for i in range(1, cw.n + 1) if i not in self._dispatched]
        pick = unused[int(self.rng.integers(len(unused)))]
        self._dispatched.add(pick)
        self.redispatch_count += 1
        replacement = cw.fragment(pick)
        replacement.data_in = cw.timestamp
        return [replacement]

    def decode_penalty_s(self, penalty_s: float) -> float:
        if self.status is not ObjectStatus.COMPLETED:
            return 0.0
        return decode_latency_penalty(
            self.used_indices, self.codeword.k, self.codeword.systematic, penalty_s
        )
