"""The congestion-sensitive padding tunnel as a pure, event-driven state
machine.

One engine instance owns one transmit direction of one session.  Events
(application data, peer data, onload / padding-done notifications, timer
expiries) are fed in with a monotone clock; the engine answers with actions
(emit a fixed-size packet, deliver peer data, schedule the next timer, reset
the session).  No sockets, no clocks: the live tunnel and the trace simulator
both drive the same machine.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .core import (
    ControlType,
    DefenseConfig,
    PaddingMode,
    SessionState,
)


class Role(Enum):
    """Which endpoint this engine instance runs at.

    The client side additionally decides when to announce that padding is
    complete; the server side honors the onload notification it receives.
    """

    SERVER = "server"
    CLIENT = "client"


# --- events ------------------------------------------------------------------


@dataclass(frozen=True)
class AppDataFromSite:
    """Bytes offered by this endpoint's local application side."""

    data: object  # any sized payload; the simulator passes byte counts

    def __len__(self) -> int:
        d = self.data
        return d if isinstance(d, int) else len(d)


@dataclass(frozen=True)
class AppDataFromPeer:
    """Real payload received from the remote tunnel endpoint."""

    data: object

    def __len__(self) -> int:
        d = self.data
        return d if isinstance(d, int) else len(d)


@dataclass(frozen=True)
class OnLoad:
    """The browser finished loading the page."""


@dataclass(frozen=True)
class PaddingDone:
    """The peer announced it has finished its stream padding."""


@dataclass(frozen=True)
class Timeout:
    """The send timer fired.  ``writable_bytes`` is the transport's current
    non-blocking write budget; None means unconstrained."""

    writable_bytes: Optional[int] = None


EngineEvent = Union[AppDataFromSite, AppDataFromPeer, OnLoad, PaddingDone, Timeout]


# --- actions -----------------------------------------------------------------


@dataclass(frozen=True)
class EmitWirePacket:
    """Send one fixed-size packet: the listed segments fill the real portion,
    the rest is junk.  Control segments count toward the real portion."""

    segments: tuple
    junk_bytes: int

    @property
    def payload_real_bytes(self) -> int:
        return sum(seg.size for seg in self.segments)


@dataclass(frozen=True)
class DeliverToApp:
    data: object


@dataclass(frozen=True)
class ScheduleTimeout:
    delay_ms: int


@dataclass(frozen=True)
class SessionReset:
    """The session finished transmitting and all state was reinitialized;
    carries the final byte counters of the completed session."""

    real_bytes: int = 0
    junk_bytes: int = 0


EngineAction = Union[EmitWirePacket, DeliverToApp, ScheduleTimeout, SessionReset]


@dataclass
class CsSendResult:
    junk_added: int
    bytes_written: int
    taken: list = field(default_factory=list)


def cs_send(output_buff, writable_bytes: Optional[int], packet_size: int,
            reclaim: bool = False) -> CsSendResult:
    """Attempt one fixed-size write, padding a short buffer with junk.

    ``writable_bytes`` models the transport's non-blocking acceptance: of the
    ``packet_size`` bytes offered, ``r = min(packet_size, writable_bytes)``
    are taken.  Junk is staged only for this call and never persists in the
    buffer, so when the transport accepts nothing the buffer is untouched and
    no junk is accounted -- congestion suppresses junk instead of queueing it.

    With ``reclaim`` the unsent tail junk of a drained buffer is discarded
    rather than retained; because staged junk never persists anyway, both
    settings produce identical results and the flag is kept only so the
    congestion path can be configured explicitly in experiments.
    """
    n = len(output_buff)
    r = packet_size if writable_bytes is None else min(packet_size, writable_bytes)
    if r <= 0:
        return CsSendResult(junk_added=0, bytes_written=0, taken=[])
    if reclaim and r >= n:
        taken = output_buff.take(n)
    else:
        taken = output_buff.take(min(r, n))
    real = sum(seg.size for seg in taken)
    return CsSendResult(junk_added=r - real, bytes_written=r, taken=taken)


def crossed_threshold(x: int, packet_size: int) -> bool:
    """True when the last packet's worth of bytes crossed a power-of-two
    boundary of the cumulative count x.

    Counts at or below one packet are defined to cross (the session's first
    packet crosses the initial boundary).
    """
    if x <= 0:
        raise ValueError(f"cumulative count must be positive, got {x}")
    if x <= packet_size:
        return True
    return (x - packet_size).bit_length() < x.bit_length()


def _median_low(values: list[int]) -> int:
    """Lower median: for even-length input, the lower of the two middle
    elements.  Stays within observed values, deterministic."""
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def rho_estimator(rho_stats: list, rho_star: int) -> int:
    """Re-estimate the target inter-packet interval from send timestamps.

    Intervals are taken only between consecutive entries with no burst-break
    marker in between; non-positive intervals are discarded.  The new value
    is the median interval rounded down to a power of two; with no usable
    intervals the previous value is kept.
    """
    intervals = []
    for a, b in zip(rho_stats, rho_stats[1:]):
        if a is None or b is None:
            continue
        delta = b - a
        if delta > 0:
            intervals.append(delta)
    if not intervals:
        return rho_star
    med = _median_low(intervals)
    return 1 << (med.bit_length() - 1)


def _ceil_pow2(x: int) -> int:
    """Smallest power of two >= x (x >= 1)."""
    return 1 << (x - 1).bit_length()


def padding_target(mode: PaddingMode, real_bytes: int, junk_bytes: int) -> int:
    """Session total (real+junk) at which stream padding may stop.

    PAYLOAD: the smallest positive multiple of 2^ceil(log2 R) covering R+J.
    TOTAL: the smallest power of two covering R+J.  A session that carried
    no real bytes pads to a power of two of its junk alone; an empty session
    owes nothing.
    """
    total = real_bytes + junk_bytes
    if real_bytes < 0 or junk_bytes < 0:
        raise ValueError("byte counters must be non-negative")
    if total == 0:
        return 0
    if real_bytes == 0:
        return _ceil_pow2(junk_bytes)
    if mode is PaddingMode.TOTAL:
        return _ceil_pow2(total)
    base = _ceil_pow2(real_bytes)
    multiplier = -(-total // base)  # ceil division
    return multiplier * base


def padding_target_reached(state: SessionState, mode: PaddingMode) -> bool:
    target = padding_target(mode, state.real_bytes, state.junk_bytes)
    return target <= state.real_bytes + state.junk_bytes


def channel_idle(onload_event: bool, last_site_response_time_ms: Optional[int],
                 quiet_time_ms: int, now_ms: int) -> bool:
    """The local data source is presumed finished: either the page-load
    signal fired, or a full quiet period passed since the last site bytes.
    With no site bytes seen yet, only the onload signal counts."""
    if onload_event:
        return True
    if last_site_response_time_ms is None:
        return False
    return last_site_response_time_ms + quiet_time_ms < now_ms


def _state_idle(state: SessionState, cfg: DefenseConfig, now_ms: int) -> bool:
    return channel_idle(state.onload_event, state.last_site_response_time_ms,
                        cfg.quiet_time_ms, now_ms)


def padding_mode_for(role: Role, cfg: DefenseConfig) -> PaddingMode:
    return cfg.client_padding if role is Role.CLIENT else cfg.server_padding


def done_xmitting(state: SessionState, cfg: DefenseConfig, role: Role,
                  now_ms: int) -> bool:
    """End-of-session test: transmit queue drained, channel idle, and either
    the peer declared padding done or this direction's padding target is
    reached."""
    if len(state.output_buff) != 0:
        return False
    if not _state_idle(state, cfg, now_ms):
        return False
    return state.padding_done or padding_target_reached(
        state, padding_mode_for(role, cfg))


def draw_timeout(rho_star: int, rng: random.Random) -> int:
    """Next send delay: uniform integer in [0, 2*rho_star], expectation
    rho_star.  Randomized intervals avoid leaking sender load through fixed
    timing."""
    return rng.randint(0, 2 * rho_star)


def client_padding_complete(state: SessionState, cfg: DefenseConfig,
                            now_ms: int) -> bool:
    """Client-side early-termination rule: page loaded, upstream padding
    target reached, and nothing left to send."""
    if not state.onload_event:
        return False
    if len(state.output_buff) != 0:
        return False
    return padding_target_reached(state, cfg.client_padding)


def engine_step(state: SessionState, cfg: DefenseConfig, role: Role,
                event: EngineEvent, now_ms: int,
                rng: random.Random) -> tuple[SessionState, list[EngineAction]]:
    """Advance the session machine by one event; returns the mutated state
    and the actions the transport must perform.

    Dispatch mirrors the main service loop: site data is buffered and
    counted, peer data is delivered and breaks the rate-sample run, the two
    notifications set their flags, and a timer expiry records a send
    timestamp (only when data is queued) and performs one fixed-size send.
    Afterwards the session either resets (when transmission is complete) or
    updates its target interval: the initial value on first activation, a
    re-estimate each time the cumulative byte count crosses a fresh
    power-of-two boundary.
    """
    if now_ms < state.last_event_ms:
        raise ValueError(
            f"stale event: now_ms={now_ms} precedes {state.last_event_ms}")
    state.last_event_ms = now_ms

    actions: list[EngineAction] = []
    was_unset = state.rho_star is None
    is_timeout = isinstance(event, Timeout)
    packet_size = cfg.packet_size_bytes

    if isinstance(event, AppDataFromSite):
        if len(event) < 1:
            raise ValueError("site data event must carry bytes")
        state.output_buff.append_data(event.data)
        state.real_bytes += len(event)
        state.last_site_response_time_ms = now_ms
    elif isinstance(event, AppDataFromPeer):
        if len(event) < 1:
            raise ValueError("peer data event must carry bytes")
        actions.append(DeliverToApp(event.data))
        state.rho_stats.append(None)
        # real peer traffic marks the start of a new page load
        state.onload_event = False
        state.padding_done = False
        state.padding_done_sent = False
    elif isinstance(event, OnLoad):
        state.onload_event = True
        if role is Role.CLIENT:
            state.output_buff.append_control(ControlType.ONLOAD)
    elif isinstance(event, PaddingDone):
        state.padding_done = True
    elif isinstance(event, Timeout):
        if len(state.output_buff) > 0:
            state.rho_stats.append(now_ms)
        writable = event.writable_bytes
        if writable is None or writable >= packet_size:
            budget = packet_size  # transport accepts whole packets only
        else:
            budget = 0
        result = cs_send(state.output_buff, budget, packet_size,
                         cfg.junk_reclaim)
        credit = result.junk_added
        if credit and len(state.output_buff) == 0 and _state_idle(state, cfg, now_ms):
            # Tail phase: credit only the junk still owed, so the session
            # total lands exactly on the padding target.  The packet itself
            # stays full-size; surplus filler is transmitted but not owed.
            mode = padding_mode_for(role, cfg)
            pre_total = state.real_bytes + state.junk_bytes
            if pre_total == 0:
                # first transmission of a pure-junk session: owe the next
                # power of two over the junk just sent
                target = padding_target(mode, state.real_bytes, credit)
            else:
                target = padding_target(mode, state.real_bytes,
                                        state.junk_bytes)
            credit = min(credit, max(0, target - pre_total))
        state.junk_bytes += credit
        if result.bytes_written == packet_size:
            actions.append(EmitWirePacket(tuple(result.taken),
                                          result.junk_added))
    else:
        raise TypeError(f"unknown engine event: {event!r}")

    if (role is Role.CLIENT and cfg.early_termination
            and not state.padding_done_sent
            and client_padding_complete(state, cfg, now_ms)):
        state.output_buff.append_control(ControlType.PADDING_DONE)
        state.padding_done_sent = True

    if done_xmitting(state, cfg, role, now_ms):
        summary = SessionReset(state.real_bytes, state.junk_bytes)
        state.reset()
        actions.append(summary)
        return state, actions

    if state.rho_star is None:
        state.rho_star = cfg.initial_rho_ms
        if state.last_site_response_time_ms is None:
            # session activation anchors the quiet-time clock, so a session
            # that never carries site data still winds down
            state.last_site_response_time_ms = now_ms
    else:
        total = state.real_bytes + state.junk_bytes
        if total > 0 and crossed_threshold(total, packet_size):
            exponent = total.bit_length() - 1
            if exponent > state.last_estimation_exponent:
                # one adaptation per power-of-two boundary
                state.last_estimation_exponent = exponent
                state.rho_star = rho_estimator(state.rho_stats, state.rho_star)
                state.rho_stats = []

    if is_timeout or was_unset:
        actions.append(ScheduleTimeout(draw_timeout(state.rho_star, rng)))

    return state, actions
