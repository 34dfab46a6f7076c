"""Shared domain types: packets, traces, configuration knobs, and the
per-session mutable state used by the defense engine."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union


class Direction(Enum):
    """Packet direction; UPSTREAM means client to server."""

    UPSTREAM = "U"
    DOWNSTREAM = "D"


class PacketKind(Enum):
    REAL = "R"
    JUNK = "J"
    MIXED = "M"
    CONTROL = "C"


@dataclass(frozen=True)
class Packet:
    """One observable network event: when, which way, how many bytes."""

    time_ms: int
    direction: Direction
    size_bytes: int
    kind: PacketKind

    def __post_init__(self) -> None:
        if self.time_ms < 0:
            raise ValueError(f"packet time must be non-negative, got {self.time_ms}")
        if self.size_bytes < 1:
            raise ValueError(f"packet size must be >= 1, got {self.size_bytes}")


@dataclass(frozen=True)
class Trace:
    """An ordered packet sequence with non-decreasing timestamps."""

    packets: tuple[Packet, ...] = ()

    def __post_init__(self) -> None:
        pkts = tuple(self.packets)
        object.__setattr__(self, "packets", pkts)
        prev = None
        for i, p in enumerate(pkts):
            if prev is not None and p.time_ms < prev:
                raise ValueError(
                    f"time regression at packet {i}: {p.time_ms} < {prev}"
                )
            prev = p.time_ms

    def __len__(self) -> int:
        return len(self.packets)

    def __iter__(self):
        return iter(self.packets)

    def __getitem__(self, idx):
        return self.packets[idx]


def trace_total_bytes(trace: Trace) -> int:
    """Total bytes carried by a trace, control packets excluded."""
    return sum(p.size_bytes for p in trace if p.kind is not PacketKind.CONTROL)


def trace_duration_ms(trace: Trace) -> int:
    """Elapsed time from first to last packet; 0 for traces shorter than 2."""
    if len(trace) < 2:
        return 0
    return trace.packets[-1].time_ms - trace.packets[0].time_ms


class PaddingMode(Enum):
    """Stream padding stopping rule.

    PAYLOAD pads the session total up to a multiple of the smallest power of
    two covering the real payload; TOTAL pads it up to a power of two of the
    combined real+junk count.
    """

    PAYLOAD = "payload"
    TOTAL = "total"


def _is_power_of_two(x: int) -> bool:
    return x >= 1 and (x & (x - 1)) == 0


@dataclass(frozen=True)
class DefenseConfig:
    """Knobs for the congestion-sensitive padding tunnel.

    The default padding pair (client total, server payload) is the CTSP
    configuration; early termination is on by default and junk reclaim off.
    """

    packet_size_bytes: int = 600
    quiet_time_ms: int = 2000
    initial_rho_ms: int = 64
    client_padding: PaddingMode = PaddingMode.TOTAL
    server_padding: PaddingMode = PaddingMode.PAYLOAD
    early_termination: bool = True
    junk_reclaim: bool = False

    def __post_init__(self) -> None:
        if self.packet_size_bytes < 1:
            raise ValueError("packet_size_bytes must be >= 1")
        if self.quiet_time_ms < 1:
            raise ValueError("quiet_time_ms must be >= 1")
        if not _is_power_of_two(self.initial_rho_ms):
            raise ValueError("initial_rho_ms must be a positive power of two")


@dataclass(frozen=True)
class BufloConfig:
    """Fixed-rate baseline: d bytes every rho ms, for at least tau ms."""

    tau_ms: int
    rho_ms: int
    d_bytes: int

    def __post_init__(self) -> None:
        if self.tau_ms < 0:
            raise ValueError("tau_ms must be >= 0")
        if self.rho_ms < 1:
            raise ValueError("rho_ms must be >= 1")
        if self.d_bytes < 1:
            raise ValueError("d_bytes must be >= 1")


# --- output buffer -----------------------------------------------------------
#
# The engine manipulates its transmit queue only through this small protocol:
# byte length, appends, and take(budget).  The simulator uses the plain
# ByteQueue below (sizes only); the live tunnel substitutes a frame-aware
# queue with the same surface.

CONTROL_SEGMENT_BYTES = 3


class ControlType(Enum):
    ONLOAD = "onload"
    PADDING_DONE = "padding-done"


@dataclass
class ControlSegment:
    """A queued 3-byte control notification, atomic on the wire."""

    ctrl: ControlType

    @property
    def size(self) -> int:
        return CONTROL_SEGMENT_BYTES


@dataclass
class DataSegment:
    """A run of application bytes awaiting transmission (size bookkeeping)."""

    size: int


Segment = Union[ControlSegment, DataSegment]


class ByteQueue:
    """Transmit queue counting bytes; data splits freely, controls are atomic."""

    def __init__(self) -> None:
        self._segments: deque = deque()
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def append_data(self, data) -> None:
        n = data if isinstance(data, int) else len(data)
        if n < 1:
            raise ValueError("data append must be non-empty")
        if self._segments and isinstance(self._segments[-1], DataSegment):
            self._segments[-1].size += n
        else:
            self._segments.append(DataSegment(n))
        self._size += n

    def append_control(self, ctrl: ControlType) -> None:
        self._segments.append(ControlSegment(ctrl))
        self._size += CONTROL_SEGMENT_BYTES

    def take(self, budget: int) -> list[Segment]:
        """Pop up to ``budget`` bytes from the head.

        Data segments split at byte granularity; a control segment is popped
        whole or not at all, so the returned total may fall short of the
        budget by at most the control size.
        """
        taken: list[Segment] = []
        remaining = budget
        while remaining > 0 and self._segments:
            head = self._segments[0]
            if isinstance(head, ControlSegment):
                if remaining < CONTROL_SEGMENT_BYTES:
                    break
                taken.append(self._segments.popleft())
                remaining -= CONTROL_SEGMENT_BYTES
                self._size -= CONTROL_SEGMENT_BYTES
            else:
                n = min(head.size, remaining)
                taken.append(DataSegment(n))
                head.size -= n
                self._size -= n
                remaining -= n
                if head.size == 0:
                    self._segments.popleft()
        return taken

    def clear(self) -> None:
        self._segments.clear()
        self._size = 0


RHO_BREAK = None  # burst-break marker in rho_stats


@dataclass
class SessionState:
    """Mutable per-session engine state: transmit queue, byte counters,
    rate-estimation samples, and page-load flags."""

    output_buff: object = field(default_factory=ByteQueue)
    real_bytes: int = 0
    junk_bytes: int = 0
    rho_stats: list = field(default_factory=list)
    rho_star: Optional[int] = None  # None = unset (treated as infinity)
    onload_event: bool = False
    padding_done: bool = False
    last_site_response_time_ms: Optional[int] = None
    # internal bookkeeping, not part of the observable protocol state
    last_event_ms: int = 0
    last_estimation_exponent: int = -1
    padding_done_sent: bool = False

    def reset(self) -> None:
        """Reinitialize all session variables at a session boundary."""
        self.output_buff.clear()
        self.real_bytes = 0
        self.junk_bytes = 0
        self.rho_stats = [RHO_BREAK]
        self.rho_star = None
        self.onload_event = False
        self.padding_done = False
        self.last_site_response_time_ms = None
        self.last_estimation_exponent = -1
        self.padding_done_sent = False
