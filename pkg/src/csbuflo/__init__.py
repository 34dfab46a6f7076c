"""Congestion-sensitive padding tunnel laboratory.

A reusable website-fingerprinting defense engine (pure state machine), a
live SOCKS5 tunnel proxy pair speaking a fixed-size framed wire protocol, a
deterministic trace replay for both the adaptive defense and the fixed-rate
baseline, partition-based bandwidth/security lower bounds, and a
closed-world evaluation harness.
"""
from .core import (
    BufloConfig,
    DefenseConfig,
    Direction,
    Packet,
    PacketKind,
    PaddingMode,
    SessionState,
    Trace,
    trace_duration_ms,
    trace_total_bytes,
)
from .engine import (
    AppDataFromPeer,
    AppDataFromSite,
    DeliverToApp,
    EmitWirePacket,
    OnLoad,
    PaddingDone,
    Role,
    ScheduleTimeout,
    SessionReset,
    Timeout,
    channel_idle,
    client_padding_complete,
    crossed_threshold,
    cs_send,
    done_xmitting,
    draw_timeout,
    engine_step,
    padding_target,
    rho_estimator,
)
from .bounds import (
    INFEASIBLE,
    Infeasible,
    PartitionResult,
    SiteSizes,
    brute_force_min_cost,
    lower_bound_bw_ratio,
    min_cost_nonuniform,
    min_cost_uniform,
    scs_01_superseq,
    tradeoff_curve,
)
from .evaluation import (
    ClosedWorldDataset,
    SiteRecord,
    SizeAttackModel,
    as_guess,
    bandwidth_ratio,
    closed_world_success,
    closeness_to_bound,
    dataset_site_sizes,
    latency_ratio,
    train_as,
)
from .simulator import (
    AppSchedule,
    LinkModel,
    SimStats,
    simulate_buflo,
    simulate_csbuflo,
)
from .traceio import parse_trace, write_trace

__all__ = [name for name in dir() if not name.startswith("_")]
