"""Bit-exact textual trace format shared by capture, simulation, and
evaluation.

One record per line: ``time_ms,dir,size,kind`` with dir in {U,D} and kind in
{R,J,M,C}; ``#`` starts a comment line, blank lines are skipped, no header.
"""
from __future__ import annotations

from .core import Direction, Packet, PacketKind, Trace

_DIRECTIONS = {d.value: d for d in Direction}
_KINDS = {k.value: k for k in PacketKind}


class TraceParseError(ValueError):
    """Malformed trace text; carries the 1-based offending line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def parse_trace(text: str) -> Trace:
    """Parse trace text into a Trace, enforcing monotone timestamps."""
    packets: list[Packet] = []
    prev_time = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(",")
        if len(fields) != 4:
            raise TraceParseError(line_no, f"expected 4 fields, got {len(fields)}")
        time_str, dir_str, size_str, kind_str = (f.strip() for f in fields)
        try:
            time_ms = int(time_str)
        except ValueError:
            raise TraceParseError(line_no, f"bad time {time_str!r}") from None
        if time_ms < 0:
            raise TraceParseError(line_no, f"negative time {time_ms}")
        if dir_str not in _DIRECTIONS:
            raise TraceParseError(line_no, f"bad direction {dir_str!r}")
        try:
            size = int(size_str)
        except ValueError:
            raise TraceParseError(line_no, f"bad size {size_str!r}") from None
        if size < 1:
            raise TraceParseError(line_no, f"size must be >= 1, got {size}")
        if kind_str not in _KINDS:
            raise TraceParseError(line_no, f"bad kind {kind_str!r}")
        if prev_time is not None and time_ms < prev_time:
            raise TraceParseError(
                line_no, f"time regression: {time_ms} < {prev_time}")
        prev_time = time_ms
        packets.append(Packet(time_ms, _DIRECTIONS[dir_str], size,
                              _KINDS[kind_str]))
    return Trace(tuple(packets))


def write_trace(trace: Trace) -> str:
    """Serialize a trace; the output round-trips through parse_trace
    byte-for-byte (newline line endings, no trailing whitespace)."""
    return "".join(
        f"{p.time_ms},{p.direction.value},{p.size_bytes},{p.kind.value}\n"
        for p in trace
    )


def read_trace_file(path) -> Trace:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_trace(fh.read())


def write_trace_file(path, trace: Trace, header_lines: list[str] | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        fh.write(write_trace(trace))
