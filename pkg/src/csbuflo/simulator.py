"""Deterministic discrete-event replay of application traffic through the
padding tunnel (both endpoints) or through the fixed-rate baseline.

The replay drives one client-role and one server-role engine over a modeled
link, producing the defended observable trace without any real network.
Request/response dependencies are deliberately not modeled; the live tunnel
exists to cover what replay cannot.
"""
from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .core import (
    BufloConfig,
    ControlSegment,
    ControlType,
    DefenseConfig,
    Direction,
    Packet,
    PacketKind,
    SessionState,
    Trace,
)
from . import engine as eng


@dataclass(frozen=True)
class LinkModel:
    """Transport model feeding the engines their write budgets and delays.

    ``writable_schedule`` maps (time_ms, direction) to the transport's write
    budget at that instant (None = unconstrained); without a schedule the
    link always accepts.  ``capacity_bytes_per_ms`` adds serialization delay
    on top of the propagation delay (None = infinite capacity).
    """

    capacity_bytes_per_ms: Optional[int] = None
    propagation_delay_ms: int = 0
    writable_schedule: Optional[Callable[[int, Direction], Optional[int]]] = None

    def __post_init__(self) -> None:
        if self.capacity_bytes_per_ms is not None and self.capacity_bytes_per_ms <= 0:
            raise ValueError("capacity must be positive when given")
        if self.propagation_delay_ms < 0:
            raise ValueError("propagation delay must be non-negative")

    def writable(self, time_ms: int, direction: Direction) -> Optional[int]:
        if self.writable_schedule is None:
            return None
        return self.writable_schedule(time_ms, direction)

    def arrival_time(self, time_ms: int, size_bytes: int) -> int:
        delay = self.propagation_delay_ms
        if self.capacity_bytes_per_ms is not None:
            delay += -(-size_bytes // self.capacity_bytes_per_ms)
        return time_ms + delay


@dataclass(frozen=True)
class AppSchedule:
    """When the applications offer bytes: ordered (time_ms, direction,
    size_bytes) triples, plus an optional page-load signal time."""

    entries: tuple[tuple[int, Direction, int], ...]
    onload_time_ms: Optional[int] = None

    def __post_init__(self) -> None:
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        prev = None
        for t, _, size in entries:
            if t < 0:
                raise ValueError(f"negative schedule time {t}")
            if size < 1:
                raise ValueError(f"schedule size must be >= 1, got {size}")
            if prev is not None and t < prev:
                raise ValueError("schedule times must be non-decreasing")
            prev = t
        if self.onload_time_ms is not None and self.onload_time_ms < 0:
            raise ValueError("onload time must be non-negative")

    @classmethod
    def from_trace(cls, trace: Trace,
                   onload_time_ms: Optional[int] = None) -> "AppSchedule":
        entries = tuple((p.time_ms, p.direction, p.size_bytes)
                        for p in trace if p.kind is not PacketKind.CONTROL)
        return cls(entries, onload_time_ms)

    def bytes_for(self, direction: Direction) -> int:
        return sum(s for _, d, s in self.entries if d is direction)


@dataclass(frozen=True)
class SessionSummary:
    reset_time_ms: int
    real_bytes: int
    junk_bytes: int


@dataclass
class DirectionStats:
    """Counters for one transmit direction.  The scalar accessors report the
    first completed session (the page load itself); wake-up sessions caused
    by late in-flight traffic are listed after it."""

    sessions: list[SessionSummary] = field(default_factory=list)
    packets: int = 0
    delivered_bytes: int = 0
    rho_history: list[tuple[int, int]] = field(default_factory=list)
    junk_timeline: list[tuple[int, int]] = field(default_factory=list)

    @property
    def real_bytes(self) -> int:
        return self.sessions[0].real_bytes if self.sessions else 0

    @property
    def junk_bytes(self) -> int:
        return self.sessions[0].junk_bytes if self.sessions else 0

    @property
    def reset_time_ms(self) -> Optional[int]:
        return self.sessions[0].reset_time_ms if self.sessions else None


@dataclass
class SimStats:
    seed: int = 0
    upstream: DirectionStats = field(default_factory=DirectionStats)
    downstream: DirectionStats = field(default_factory=DirectionStats)

    def for_direction(self, direction: Direction) -> DirectionStats:
        return (self.upstream if direction is Direction.UPSTREAM
                else self.downstream)

    def flat_items(self) -> list[tuple[str, object]]:
        """Flat key-value rendering for the stats text block."""
        items: list[tuple[str, object]] = [("seed", self.seed)]
        for name, stats in (("up", self.upstream), ("down", self.downstream)):
            items.extend([
                (f"{name}.real_bytes", stats.real_bytes),
                (f"{name}.junk_bytes", stats.junk_bytes),
                (f"{name}.packets", stats.packets),
                (f"{name}.reset_time_ms", stats.reset_time_ms),
                (f"{name}.delivered_bytes", stats.delivered_bytes),
                (f"{name}.sessions", len(stats.sessions)),
                (f"{name}.rho_history",
                 ";".join(f"{t}:{v}" for t, v in stats.rho_history)),
            ])
        return items


class SimulationError(RuntimeError):
    pass


_EV_APP = 0
_EV_ONLOAD = 1
_EV_TIMEOUT = 2
_EV_DELIVER = 3


def simulate_csbuflo(sched: AppSchedule, cfg: DefenseConfig,
                     link: Optional[LinkModel] = None,
                     seed: int = 0,
                     max_events: int = 2_000_000) -> tuple[Trace, SimStats]:
    """Replay a schedule through client and server engines until both reach
    their session reset; returns the defended trace and per-direction stats.
    Deterministic for a given seed."""
    if not sched.entries and sched.onload_time_ms is None:
        raise ValueError("schedule must carry data or an onload time")
    link = link or LinkModel()
    stats = SimStats(seed=seed)

    endpoints = {
        Direction.UPSTREAM: (eng.Role.CLIENT, SessionState(),
                             random.Random(f"{seed}-client")),
        Direction.DOWNSTREAM: (eng.Role.SERVER, SessionState(),
                               random.Random(f"{seed}-server")),
    }
    completed_junk = {Direction.UPSTREAM: 0, Direction.DOWNSTREAM: 0}
    timer_pending = {Direction.UPSTREAM: False, Direction.DOWNSTREAM: False}

    heap: list[tuple[int, int, int, object]] = []
    seq = 0

    def push(time_ms: int, kind: int, payload) -> None:
        nonlocal seq
        heapq.heappush(heap, (time_ms, seq, kind, payload))
        seq += 1

    for t, direction, size in sched.entries:
        push(t, _EV_APP, (direction, size))
    if sched.onload_time_ms is not None:
        push(sched.onload_time_ms, _EV_ONLOAD, None)
    # session establishment tick arms both engines
    for direction in (Direction.UPSTREAM, Direction.DOWNSTREAM):
        push(0, _EV_TIMEOUT, direction)
        timer_pending[direction] = True

    packets: list[Packet] = []

    def step(direction: Direction, event, now_ms: int) -> None:
        role, state, rng = endpoints[direction]
        dstats = stats.for_direction(direction)
        rho_before = state.rho_star
        _, actions = eng.engine_step(state, cfg, role, event, now_ms, rng)
        for action in actions:
            if isinstance(action, eng.EmitWirePacket):
                real = action.payload_real_bytes
                if real == 0:
                    kind = PacketKind.JUNK
                elif action.junk_bytes == 0:
                    kind = PacketKind.REAL
                else:
                    kind = PacketKind.MIXED
                packets.append(Packet(now_ms, direction,
                                      cfg.packet_size_bytes, kind))
                dstats.packets += 1
                arrival = link.arrival_time(now_ms, cfg.packet_size_bytes)
                push(arrival, _EV_DELIVER, (direction, action.segments))
            elif isinstance(action, eng.ScheduleTimeout):
                # the engine re-arms on every expiry and on activation; keep
                # a single outstanding timer per direction
                if not timer_pending[direction]:
                    push(now_ms + action.delay_ms, _EV_TIMEOUT, direction)
                    timer_pending[direction] = True
            elif isinstance(action, eng.SessionReset):
                dstats.sessions.append(SessionSummary(
                    now_ms, action.real_bytes, action.junk_bytes))
                completed_junk[direction] += action.junk_bytes
        if state.rho_star is not None and state.rho_star != rho_before:
            dstats.rho_history.append((now_ms, state.rho_star))

    def deliver_data(receiver_dir: Direction, sender_dir: Direction,
                     n: int, now_ms: int) -> None:
        stats.for_direction(sender_dir).delivered_bytes += n
        step(receiver_dir, eng.AppDataFromPeer(n), now_ms)

    events_processed = 0
    while heap:
        events_processed += 1
        if events_processed > max_events:
            raise SimulationError("event budget exhausted; replay diverged")
        now_ms, _, kind, payload = heapq.heappop(heap)
        if kind == _EV_APP:
            direction, size = payload
            step(direction, eng.AppDataFromSite(size), now_ms)
        elif kind == _EV_ONLOAD:
            step(Direction.UPSTREAM, eng.OnLoad(), now_ms)
        elif kind == _EV_TIMEOUT:
            direction = payload
            timer_pending[direction] = False
            writable = link.writable(now_ms, direction)
            step(direction, eng.Timeout(writable), now_ms)
            _, state, _ = endpoints[direction]
            stats.for_direction(direction).junk_timeline.append(
                (now_ms, completed_junk[direction] + state.junk_bytes))
        elif kind == _EV_DELIVER:
            sender_dir, segments = payload
            receiver_dir = (Direction.DOWNSTREAM
                            if sender_dir is Direction.UPSTREAM
                            else Direction.UPSTREAM)
            data_bytes = 0
            for seg in segments:
                if isinstance(seg, ControlSegment):
                    if data_bytes:
                        deliver_data(receiver_dir, sender_dir, data_bytes, now_ms)
                        data_bytes = 0
                    if seg.ctrl is ControlType.ONLOAD:
                        step(receiver_dir, eng.OnLoad(), now_ms)
                    else:
                        step(receiver_dir, eng.PaddingDone(), now_ms)
                else:
                    data_bytes += seg.size
            if data_bytes:
                deliver_data(receiver_dir, sender_dir, data_bytes, now_ms)

    for direction in (Direction.UPSTREAM, Direction.DOWNSTREAM):
        role, _, _ = endpoints[direction]
        if not stats.for_direction(direction).sessions:
            raise SimulationError(
                f"{role.value} engine never reached session reset")

    return Trace(tuple(packets)), stats


def simulate_buflo(sched: AppSchedule, b: BufloConfig) -> Trace:
    """Fixed-rate baseline replay: per direction, a packet of d bytes every
    rho ms starting at t=0, stopping at the first tick that is at or past tau
    with every scheduled byte already sent.  Partially filled packets are
    padded to d (fixed-size invariant preserved)."""
    records: list[tuple[int, int, Direction, int, PacketKind]] = []
    for order, direction in enumerate((Direction.UPSTREAM, Direction.DOWNSTREAM)):
        arrivals = [(t, s) for t, d, s in sched.entries if d is direction]
        if not arrivals:
            continue  # an idle direction runs no instance
        total_offered = sum(s for _, s in arrivals)
        sent = 0
        backlog = 0
        idx = 0
        t = 0
        while True:
            while idx < len(arrivals) and arrivals[idx][0] <= t:
                backlog += arrivals[idx][1]
                idx += 1
            if t >= b.tau_ms and sent >= total_offered:
                break
            real = min(b.d_bytes, backlog)
            backlog -= real
            sent += real
            if real == 0:
                kind = PacketKind.JUNK
            elif real == b.d_bytes:
                kind = PacketKind.REAL
            else:
                kind = PacketKind.MIXED
            records.append((t, order, direction, b.d_bytes, kind))
            t += b.rho_ms
    records.sort(key=lambda r: (r[0], r[1]))
    return Trace(tuple(Packet(t, d, size, kind)
                       for t, _, d, size, kind in records))
