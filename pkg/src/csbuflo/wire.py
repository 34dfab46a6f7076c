"""Framed wire protocol inside fixed-size packets, plus the live proxy pair.

Every packet on the wire is exactly ``packet_size`` bytes and holds a
sequence of frames; the tail is a single junk frame (or, when fewer than a
frame header's worth of bytes remain, zero filler).  Junk payload is
arbitrary and discarded by the receiver, so notifications and stream records
ride inside ordinary packets and are indistinguishable from data on the
wire.

Stream multiplexing lives inside DATA payloads: a 2-byte stream id, a 1-byte
record opcode (chunk / open / established), then the record body.  The
client proxy opens streams for SOCKS CONNECT requests; the server proxy
dials origins and answers with an established record or an error-flagged
STREAM_CLOSE, which the client maps back to a SOCKS reply.
"""
from __future__ import annotations

import queue
import select
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from .core import (
    CONTROL_SEGMENT_BYTES,
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

FRAME_DATA = 0x00
FRAME_JUNK = 0x01
FRAME_NOTIFY_ONLOAD = 0x02
FRAME_NOTIFY_PADDING_DONE = 0x03
FRAME_STREAM_CLOSE = 0x04

_KNOWN_FRAME_TYPES = {
    FRAME_DATA,
    FRAME_JUNK,
    FRAME_NOTIFY_ONLOAD,
    FRAME_NOTIFY_PADDING_DONE,
    FRAME_STREAM_CLOSE,
}

FRAME_HEADER_BYTES = 3

# record opcodes inside DATA payloads, after the 2-byte stream id
OP_CHUNK = 0x00
OP_OPEN = 0x01
OP_ESTABLISHED = 0x02

# STREAM_CLOSE flags
CLOSE_CLEAN = 0x00
CLOSE_UNREACHABLE = 0x01
CLOSE_REFUSED = 0x02

_CHUNK_OVERHEAD = FRAME_HEADER_BYTES + 3  # header + stream id + opcode


class ProtocolError(ValueError):
    """Malformed packet or frame; the session must be torn down."""


@dataclass(frozen=True)
class Frame:
    frame_type: int
    payload: bytes = b""

    def __post_init__(self) -> None:
        if self.frame_type not in _KNOWN_FRAME_TYPES:
            raise ProtocolError(f"unknown frame type {self.frame_type:#x}")
        if len(self.payload) > 0xFFFF:
            raise ProtocolError("frame payload exceeds length field")

    def __len__(self) -> int:
        return len(self.payload)

    @property
    def encoded_len(self) -> int:
        return FRAME_HEADER_BYTES + len(self.payload)

    def encode(self) -> bytes:
        return bytes((self.frame_type,)) + len(self.payload).to_bytes(2, "big") \
            + self.payload


def encode_packet(frames: list[Frame], packet_size: int) -> bytes:
    """Pack frames into one fixed-size packet, junk-filling the tail."""
    body = b"".join(f.encode() for f in frames)
    if len(body) > packet_size:
        raise ProtocolError(
            f"frames need {len(body)} bytes, packet holds {packet_size}")
    remainder = packet_size - len(body)
    if remainder >= FRAME_HEADER_BYTES:
        body += Frame(FRAME_JUNK,
                      bytes(remainder - FRAME_HEADER_BYTES)).encode()
    else:
        body += bytes(remainder)
    return body


def decode_packet(data: bytes) -> list[Frame]:
    """Inverse of encode_packet: junk frames, zero filler, and empty DATA
    frames are discarded; anything else malformed tears the session down."""
    frames: list[Frame] = []
    pos = 0
    end = len(data)
    while pos < end:
        if end - pos < FRAME_HEADER_BYTES:
            if any(data[pos:]):
                raise ProtocolError("trailing bytes too short for a frame")
            break
        frame_type = data[pos]
        if frame_type not in _KNOWN_FRAME_TYPES:
            raise ProtocolError(f"unknown frame type {frame_type:#x}")
        length = int.from_bytes(data[pos + 1:pos + 3], "big")
        if pos + FRAME_HEADER_BYTES + length > end:
            raise ProtocolError("frame overruns packet boundary")
        payload = data[pos + FRAME_HEADER_BYTES:pos + FRAME_HEADER_BYTES + length]
        pos += FRAME_HEADER_BYTES + length
        if frame_type == FRAME_JUNK:
            continue
        if frame_type == FRAME_DATA and length == 0:
            continue  # inert filler, e.g. an all-zero packet
        frames.append(Frame(frame_type, payload))
    return frames


# --- engine-facing plumbing ---------------------------------------------------


@dataclass(frozen=True)
class StreamChunk:
    """Application bytes for one multiplexed stream, as fed to the engine."""

    stream_id: int
    data: bytes

    def __len__(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class WireRecord:
    """A self-contained frame (open/established/close records) queued as
    site data; its length is the full encoded frame size."""

    frame_type: int
    payload: bytes

    def __len__(self) -> int:
        return FRAME_HEADER_BYTES + len(self.payload)


def open_record(stream_id: int, host: str, port: int) -> WireRecord:
    host_b = host.encode("idna" if all(ord(c) < 128 for c in host) else "utf-8")
    if len(host_b) > 255:
        raise ValueError("host name too long")
    payload = stream_id.to_bytes(2, "big") + bytes((OP_OPEN, len(host_b))) \
        + host_b + port.to_bytes(2, "big")
    return WireRecord(FRAME_DATA, payload)


def established_record(stream_id: int) -> WireRecord:
    return WireRecord(FRAME_DATA,
                      stream_id.to_bytes(2, "big") + bytes((OP_ESTABLISHED,)))


def close_record(stream_id: int, flag: int) -> WireRecord:
    return WireRecord(FRAME_STREAM_CLOSE,
                      stream_id.to_bytes(2, "big") + bytes((flag,)))


class _ChunkSegment:
    """Splittable run of stream bytes; each emitted piece pays the frame
    header, stream id, and opcode."""

    __slots__ = ("stream_id", "payload")

    def __init__(self, stream_id: int, payload: bytes):
        self.stream_id = stream_id
        self.payload = bytearray(payload)

    @property
    def size(self) -> int:
        return _CHUNK_OVERHEAD + len(self.payload)


class _RecordSegment:
    """Atomic pre-encoded frame (records and close markers)."""

    __slots__ = ("frame_type", "payload")

    def __init__(self, frame_type: int, payload: bytes):
        self.frame_type = frame_type
        self.payload = payload

    @property
    def size(self) -> int:
        return FRAME_HEADER_BYTES + len(self.payload)


class FrameQueue:
    """Frame-aware transmit queue with the same surface as ByteQueue.

    Lengths are encoded wire bytes.  Splitting a chunk segment re-frames the
    remainder, so the queue's length can grow by one frame overhead at a
    split; the engine always reads the live length, never a cached one.
    """

    def __init__(self) -> None:
        self._segments: deque = deque()

    def __len__(self) -> int:
        return sum(seg.size for seg in self._segments)

    def append_data(self, data) -> None:
        if isinstance(data, StreamChunk):
            if not data.data:
                raise ValueError("empty stream chunk")
            self._segments.append(_ChunkSegment(data.stream_id, data.data))
        elif isinstance(data, WireRecord):
            self._segments.append(_RecordSegment(data.frame_type, data.payload))
        else:
            raise TypeError(f"cannot queue {type(data).__name__}")

    def append_control(self, ctrl: ControlType) -> None:
        self._segments.append(ControlSegment(ctrl))

    def take(self, budget: int) -> list:
        taken: list = []
        remaining = budget
        while remaining > 0 and self._segments:
            head = self._segments[0]
            if isinstance(head, ControlSegment):
                if remaining < CONTROL_SEGMENT_BYTES:
                    break
                taken.append(self._segments.popleft())
                remaining -= CONTROL_SEGMENT_BYTES
            elif isinstance(head, _RecordSegment):
                if remaining < head.size:
                    break
                taken.append(self._segments.popleft())
                remaining -= head.size
            else:
                if remaining < _CHUNK_OVERHEAD + 1:
                    break
                piece = min(len(head.payload), remaining - _CHUNK_OVERHEAD)
                seg = _ChunkSegment(head.stream_id, bytes(head.payload[:piece]))
                del head.payload[:piece]
                if not head.payload:
                    self._segments.popleft()
                taken.append(seg)
                remaining -= seg.size
        return taken

    def clear(self) -> None:
        self._segments.clear()


def _segment_to_frame(seg) -> Frame:
    if isinstance(seg, ControlSegment):
        ftype = (FRAME_NOTIFY_ONLOAD if seg.ctrl is ControlType.ONLOAD
                 else FRAME_NOTIFY_PADDING_DONE)
        return Frame(ftype)
    if isinstance(seg, _RecordSegment):
        return Frame(seg.frame_type, seg.payload)
    payload = seg.stream_id.to_bytes(2, "big") + bytes((OP_CHUNK,)) \
        + bytes(seg.payload)
    return Frame(FRAME_DATA, payload)


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = bytearray()
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except OSError:
            return None
        if not chunk:
            return None
        buf.extend(chunk)
    return bytes(buf)


def _now_ms() -> int:
    return int(time.monotonic() * 1000)


class WireSession:
    """One tunnel session: a defense engine driven by real timers and a
    non-blocking transport, serializing packet arrivals, stream traffic, and
    timer expiries into a single event loop thread."""

    _FLUSH_TICK_S = 0.02

    def __init__(self, sock: socket.socket, role: eng.Role, cfg: DefenseConfig,
                 seed: Optional[int] = None, name: str = ""):
        self.sock = sock
        self.role = role
        self.cfg = cfg
        self.name = name or role.value
        self.state = SessionState(output_buff=FrameQueue())
        import random as _random
        self.rng = _random.Random(seed)
        self.inbox: queue.Queue = queue.Queue()
        self.send_direction = (Direction.UPSTREAM if role is eng.Role.CLIENT
                               else Direction.DOWNSTREAM)
        self.recv_direction = (Direction.DOWNSTREAM if role is eng.Role.CLIENT
                               else Direction.UPSTREAM)
        self.epoch_ms = _now_ms()
        self.deadline_ms: Optional[int] = None
        self.pending_out = bytearray()
        self.capture: list[Packet] = []
        self.resets = 0
        self.reset_event = threading.Event()
        self.closed = threading.Event()
        self._last_now = 0
        self._capture_last_ms = 0
        # handlers installed by the owning proxy
        self.on_stream_data: Callable[[int, bytes], None] = lambda sid, b: None
        self.on_stream_open: Callable[[int, str, int], None] = lambda sid, h, p: None
        self.on_stream_established: Callable[[int], None] = lambda sid: None
        self.on_stream_close: Callable[[int, int], None] = lambda sid, flag: None
        self._threads: list[threading.Thread] = []

    # -- public api (thread-safe) ---------------------------------------------

    def start(self) -> None:
        loop = threading.Thread(target=self._loop, daemon=True,
                                name=f"wire-{self.name}-loop")
        reader = threading.Thread(target=self._reader, daemon=True,
                                  name=f"wire-{self.name}-reader")
        self._threads = [loop, reader]
        loop.start()
        reader.start()

    def submit_stream_data(self, stream_id: int, data: bytes) -> None:
        self.inbox.put(("site", StreamChunk(stream_id, data)))

    def submit_record(self, record: WireRecord) -> None:
        self.inbox.put(("site", record))

    def submit_onload(self) -> None:
        self.inbox.put(("onload", None))

    def close(self) -> None:
        self.inbox.put(("close", None))

    def join(self, timeout: float = 5.0) -> None:
        for t in self._threads:
            t.join(timeout)

    def capture_trace(self) -> Trace:
        ordered = sorted(self.capture, key=lambda p: p.time_ms)
        return Trace(tuple(ordered))

    # -- internals (loop thread only) -----------------------------------------

    def _now(self) -> int:
        now = _now_ms()
        if now < self._last_now:
            now = self._last_now
        self._last_now = now
        return now

    def _reader(self) -> None:
        size = self.cfg.packet_size_bytes
        while not self.closed.is_set():
            data = _recv_exact(self.sock, size)
            if data is None:
                break
            self.inbox.put(("packet", data))
        self.inbox.put(("eof", None))

    def _loop(self) -> None:
        # session establishment tick arms the engine
        self._step(eng.Timeout(self._writable_budget()), self._now())
        while not self.closed.is_set():
            timeout = None
            now = self._now()
            if self.deadline_ms is not None:
                timeout = max(0, self.deadline_ms - now) / 1000.0
            if self.pending_out:
                tick = self._FLUSH_TICK_S
                timeout = tick if timeout is None else min(timeout, tick)
            try:
                item = self.inbox.get(timeout=timeout)
            except queue.Empty:
                item = None
            self._flush()
            now = self._now()
            if item is not None:
                kind, payload = item
                if kind in ("close", "eof"):
                    break
                try:
                    self._dispatch(kind, payload, now)
                except ProtocolError:
                    break  # protocol violation: tear the session down
            if self.deadline_ms is not None and self._now() >= self.deadline_ms:
                self.deadline_ms = None
                self._step(eng.Timeout(self._writable_budget()), self._now())
        self.closed.set()
        try:
            self.sock.close()
        except OSError:
            pass

    def _dispatch(self, kind: str, payload, now: int) -> None:
        if kind == "site":
            self._step(eng.AppDataFromSite(payload), now)
        elif kind == "onload":
            self._step(eng.OnLoad(), now)
        elif kind == "packet":
            frames = decode_packet(payload)
            real = sum(f.encoded_len for f in frames)
            self._record_capture(now, self.recv_direction, real,
                                 self.cfg.packet_size_bytes - real)
            for frame in frames:
                if frame.frame_type == FRAME_NOTIFY_ONLOAD:
                    self._step(eng.OnLoad(), now)
                elif frame.frame_type == FRAME_NOTIFY_PADDING_DONE:
                    self._step(eng.PaddingDone(), now)
                else:
                    self._step(eng.AppDataFromPeer(frame), now)

    def _step(self, event, now: int) -> None:
        _, actions = eng.engine_step(self.state, self.cfg, self.role, event,
                                     now, self.rng)
        for action in actions:
            if isinstance(action, eng.EmitWirePacket):
                frames = [_segment_to_frame(seg) for seg in action.segments]
                raw = encode_packet(frames, self.cfg.packet_size_bytes)
                self.pending_out.extend(raw)
                self._record_capture(now, self.send_direction,
                                     action.payload_real_bytes,
                                     action.junk_bytes)
                self._flush()
            elif isinstance(action, eng.ScheduleTimeout):
                if self.deadline_ms is None:
                    self.deadline_ms = now + action.delay_ms
            elif isinstance(action, eng.SessionReset):
                self.resets += 1
                self.reset_event.set()
            elif isinstance(action, eng.DeliverToApp):
                self._deliver(action.data)

    def _deliver(self, frame: Frame) -> None:
        if frame.frame_type == FRAME_STREAM_CLOSE:
            if len(frame.payload) != 3:
                raise ProtocolError("malformed close record")
            sid = int.from_bytes(frame.payload[:2], "big")
            self.on_stream_close(sid, frame.payload[2])
            return
        if len(frame.payload) < 3:
            raise ProtocolError("data payload shorter than its record header")
        sid = int.from_bytes(frame.payload[:2], "big")
        opcode = frame.payload[2]
        body = frame.payload[3:]
        if opcode == OP_CHUNK:
            self.on_stream_data(sid, body)
        elif opcode == OP_OPEN:
            if len(body) < 3:
                raise ProtocolError("malformed open record")
            host_len = body[0]
            if len(body) != 1 + host_len + 2:
                raise ProtocolError("malformed open record")
            host = body[1:1 + host_len].decode("utf-8", "replace")
            port = int.from_bytes(body[1 + host_len:], "big")
            self.on_stream_open(sid, host, port)
        elif opcode == OP_ESTABLISHED:
            self.on_stream_established(sid)
        else:
            raise ProtocolError(f"unknown record opcode {opcode:#x}")

    def _writable_budget(self) -> int:
        if self.pending_out:
            return 0
        try:
            _, writable, _ = select.select([], [self.sock], [], 0)
        except (OSError, ValueError):
            return 0
        return self.cfg.packet_size_bytes if writable else 0

    def _flush(self) -> None:
        while self.pending_out:
            try:
                _, writable, _ = select.select([], [self.sock], [], 0)
            except (OSError, ValueError):
                return
            if not writable:
                return
            try:
                sent = self.sock.send(bytes(self.pending_out[:65536]))
            except (BlockingIOError, InterruptedError):
                return
            except OSError:
                self.closed.set()
                return
            del self.pending_out[:sent]

    def _record_capture(self, now: int, direction: Direction, real: int,
                        junk: int) -> None:
        t = max(0, now - self.epoch_ms)
        if t < self._capture_last_ms:
            t = self._capture_last_ms
        self._capture_last_ms = t
        if real == 0:
            kind = PacketKind.JUNK
        elif junk == 0:
            kind = PacketKind.REAL
        else:
            kind = PacketKind.MIXED
        self.capture.append(Packet(t, direction,
                                   self.cfg.packet_size_bytes, kind))


# --- SOCKS5 front end ---------------------------------------------------------

SOCKS_VERSION = 5
SOCKS_CMD_CONNECT = 0x01
SOCKS_CMD_ONLOAD = 0xF0
SOCKS_REPLY_SUCCESS = 0x00
SOCKS_REPLY_FAILURE = 0x01
SOCKS_REPLY_HOST_UNREACHABLE = 0x04
SOCKS_REPLY_REFUSED = 0x05
SOCKS_REPLY_CMD_UNSUPPORTED = 0x07


def _socks_reply(sock: socket.socket, code: int) -> None:
    try:
        sock.sendall(bytes((SOCKS_VERSION, code, 0, 1)) + bytes(6))
    except OSError:
        pass


def _read_socks_request(sock: socket.socket):
    """Returns (cmd, host, port) or None on a malformed handshake."""
    head = _recv_exact(sock, 2)
    if head is None or head[0] != SOCKS_VERSION:
        return None
    methods = _recv_exact(sock, head[1])
    if methods is None:
        return None
    sock.sendall(bytes((SOCKS_VERSION, 0)))
    req = _recv_exact(sock, 4)
    if req is None or req[0] != SOCKS_VERSION:
        return None
    cmd, atyp = req[1], req[3]
    if atyp == 1:
        raw = _recv_exact(sock, 4)
        if raw is None:
            return None
        host = socket.inet_ntoa(raw)
    elif atyp == 3:
        ln = _recv_exact(sock, 1)
        if ln is None:
            return None
        raw = _recv_exact(sock, ln[0])
        if raw is None:
            return None
        host = raw.decode("utf-8", "replace")
    elif atyp == 4:
        raw = _recv_exact(sock, 16)
        if raw is None:
            return None
        host = socket.inet_ntop(socket.AF_INET6, raw)
    else:
        return None
    port_raw = _recv_exact(sock, 2)
    if port_raw is None:
        return None
    return cmd, host, int.from_bytes(port_raw, "big")


class _Stream:
    def __init__(self, sock: Optional[socket.socket] = None):
        self.sock = sock
        self.established = threading.Event()
        self.close_flag: Optional[int] = None
        self.pre_established: list[bytes] = []
        self.handshake_done = False  # SOCKS reply sent; socket may be closed


class ClientProxy:
    """Local SOCKS5 front end tunneling all streams through one wire session.

    CONNECT requests become multiplexed streams; the private command 0xF0
    signals the page-load event, which also notifies the server in-band.
    """

    def __init__(self, server_host: str, server_port: int, cfg: DefenseConfig,
                 listen_host: str = "127.0.0.1", listen_port: int = 0,
                 seed: Optional[int] = None):
        self.cfg = cfg
        self._sid_lock = threading.Lock()
        self._next_sid = 1
        self.streams: dict[int, _Stream] = {}
        self._streams_lock = threading.Lock()

        upstream = socket.create_connection((server_host, server_port),
                                            timeout=10)
        upstream.settimeout(None)
        self.session = WireSession(upstream, eng.Role.CLIENT, cfg, seed=seed,
                                   name="client")
        self.session.on_stream_data = self._downstream_data
        self.session.on_stream_established = self._stream_established
        self.session.on_stream_close = self._stream_closed

        self.listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.listener.bind((listen_host, listen_port))
        self.listener.listen(64)
        self.port = self.listener.getsockname()[1]
        self._accept_thread = threading.Thread(target=self._accept_loop,
                                               daemon=True,
                                               name="client-socks-accept")

    def start(self) -> None:
        self.session.start()
        self._accept_thread.start()

    def stop(self) -> None:
        try:
            self.listener.close()
        except OSError:
            pass
        self.session.close()
        with self._streams_lock:
            streams = list(self.streams.values())
        for stream in streams:
            if stream.sock is not None:
                try:
                    stream.sock.close()
                except OSError:
                    pass
        self.session.join()

    # -- SOCKS side ------------------------------------------------------------

    def _accept_loop(self) -> None:
        while True:
            try:
                conn, _ = self.listener.accept()
            except OSError:
                return
            threading.Thread(target=self._handle_socks, args=(conn,),
                             daemon=True).start()

    def _handle_socks(self, conn: socket.socket) -> None:
        request = _read_socks_request(conn)
        if request is None:
            conn.close()
            return
        cmd, host, port = request
        if cmd == SOCKS_CMD_ONLOAD:
            self.session.submit_onload()
            _socks_reply(conn, SOCKS_REPLY_SUCCESS)
            conn.close()
            return
        if cmd != SOCKS_CMD_CONNECT:
            _socks_reply(conn, SOCKS_REPLY_CMD_UNSUPPORTED)
            conn.close()
            return
        with self._sid_lock:
            sid = self._next_sid
            self._next_sid = self._next_sid % 0xFFFF + 1
        stream = _Stream(conn)
        with self._streams_lock:
            self.streams[sid] = stream
        self.session.submit_record(open_record(sid, host, port))
        if not stream.established.wait(timeout=15) or stream.close_flag is not None:
            code = {CLOSE_UNREACHABLE: SOCKS_REPLY_HOST_UNREACHABLE,
                    CLOSE_REFUSED: SOCKS_REPLY_REFUSED}.get(
                        stream.close_flag, SOCKS_REPLY_FAILURE)
            _socks_reply(conn, code)
            conn.close()
            self._forget(sid)
            return
        _socks_reply(conn, SOCKS_REPLY_SUCCESS)
        stream.handshake_done = True
        self._pump_browser(sid, stream, conn)

    def _pump_browser(self, sid: int, stream: _Stream,
                      conn: socket.socket) -> None:
        while True:
            try:
                data = conn.recv(65536)
            except OSError:
                data = b""
            if not data:
                break
            self.session.submit_stream_data(sid, data)
        if self._forget(sid) is not None:
            self.session.submit_record(close_record(sid, CLOSE_CLEAN))

    # -- session callbacks (loop thread) ----------------------------------------

    def _downstream_data(self, sid: int, data: bytes) -> None:
        with self._streams_lock:
            stream = self.streams.get(sid)
        if stream is None or stream.sock is None:
            return
        try:
            stream.sock.sendall(data)
        except OSError:
            pass

    def _stream_established(self, sid: int) -> None:
        with self._streams_lock:
            stream = self.streams.get(sid)
        if stream is not None:
            stream.established.set()

    def _stream_closed(self, sid: int, flag: int) -> None:
        with self._streams_lock:
            stream = self.streams.pop(sid, None)
        if stream is None:
            return
        stream.close_flag = flag
        stream.established.set()
        # pre-handshake the SOCKS thread still owes a reply on this socket
        if stream.handshake_done and stream.sock is not None:
            try:
                stream.sock.close()
            except OSError:
                pass

    def _forget(self, sid: int) -> Optional[_Stream]:
        with self._streams_lock:
            return self.streams.pop(sid, None)


class ServerProxy:
    """Accepts wire sessions, dials origin connections per stream, and pads
    the downstream direction with its own engine instance."""

    def __init__(self, cfg: DefenseConfig, listen_host: str = "127.0.0.1",
                 listen_port: int = 0, seed: Optional[int] = None):
        self.cfg = cfg
        self.seed = seed
        self.listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.listener.bind((listen_host, listen_port))
        self.listener.listen(16)
        self.port = self.listener.getsockname()[1]
        self.sessions: list[WireSession] = []
        self._accept_thread = threading.Thread(target=self._accept_loop,
                                               daemon=True,
                                               name="server-accept")

    def start(self) -> None:
        self._accept_thread.start()

    def stop(self) -> None:
        try:
            self.listener.close()
        except OSError:
            pass
        for session in self.sessions:
            session.close()
        for session in self.sessions:
            session.join()

    def _accept_loop(self) -> None:
        index = 0
        while True:
            try:
                conn, _ = self.listener.accept()
            except OSError:
                return
            seed = None if self.seed is None else self.seed + index
            index += 1
            handler = _ServerSessionHandler(conn, self.cfg, seed)
            self.sessions.append(handler.session)
            handler.start()


class _ServerSessionHandler:
    def __init__(self, conn: socket.socket, cfg: DefenseConfig,
                 seed: Optional[int]):
        conn.settimeout(None)
        self.session = WireSession(conn, eng.Role.SERVER, cfg, seed=seed,
                                   name="server")
        self.session.on_stream_open = self._open_origin
        self.session.on_stream_data = self._upstream_data
        self.session.on_stream_close = self._close_origin
        self.streams: dict[int, _Stream] = {}
        self._lock = threading.Lock()

    def start(self) -> None:
        self.session.start()

    def _open_origin(self, sid: int, host: str, port: int) -> None:
        stream = _Stream()
        with self._lock:
            self.streams[sid] = stream
        threading.Thread(target=self._dial, args=(sid, stream, host, port),
                         daemon=True).start()

    def _dial(self, sid: int, stream: _Stream, host: str, port: int) -> None:
        try:
            sock = socket.create_connection((host, port), timeout=10)
        except (socket.gaierror, TimeoutError, OSError) as exc:
            flag = (CLOSE_REFUSED if isinstance(exc, ConnectionRefusedError)
                    else CLOSE_UNREACHABLE)
            with self._lock:
                self.streams.pop(sid, None)
            self.session.submit_record(close_record(sid, flag))
            return
        sock.settimeout(None)
        stream.sock = sock
        backlog: list[bytes]
        with self._lock:
            backlog, stream.pre_established = stream.pre_established, []
            stream.established.set()
        for data in backlog:
            try:
                sock.sendall(data)
            except OSError:
                break
        self.session.submit_record(established_record(sid))
        threading.Thread(target=self._pump_origin, args=(sid, stream, sock),
                         daemon=True).start()

    def _pump_origin(self, sid: int, stream: _Stream,
                     sock: socket.socket) -> None:
        while True:
            try:
                data = sock.recv(65536)
            except OSError:
                data = b""
            if not data:
                break
            self.session.submit_stream_data(sid, data)
        with self._lock:
            still_open = self.streams.pop(sid, None) is not None
        if still_open:
            self.session.submit_record(close_record(sid, CLOSE_CLEAN))

    def _upstream_data(self, sid: int, data: bytes) -> None:
        with self._lock:
            stream = self.streams.get(sid)
            if stream is not None and not stream.established.is_set():
                stream.pre_established.append(data)
                return
        if stream is None or stream.sock is None:
            return
        try:
            stream.sock.sendall(data)
        except OSError:
            pass

    def _close_origin(self, sid: int, flag: int) -> None:
        with self._lock:
            stream = self.streams.pop(sid, None)
        if stream is not None and stream.sock is not None:
            try:
                stream.sock.close()
            except OSError:
                pass


def send_onload_command(socks_host: str, socks_port: int,
                        timeout: float = 5.0) -> bool:
    """Issue the private onload command to a running client proxy; True when
    the proxy acknowledged it."""
    try:
        with socket.create_connection((socks_host, socks_port),
                                      timeout=timeout) as sock:
            sock.sendall(bytes((SOCKS_VERSION, 1, 0)))
            if _recv_exact(sock, 2) != bytes((SOCKS_VERSION, 0)):
                return False
            sock.sendall(bytes((SOCKS_VERSION, SOCKS_CMD_ONLOAD, 0, 1))
                         + bytes(6))
            reply = _recv_exact(sock, 10)
            return reply is not None and reply[1] == SOCKS_REPLY_SUCCESS
    except OSError:
        return False


def run_server_proxy(listen_host: str, listen_port: int, cfg: DefenseConfig,
                     capture_path: Optional[str] = None) -> ServerProxy:
    """Start a server proxy and block forever (CLI entry)."""
    proxy = ServerProxy(cfg, listen_host, listen_port)
    proxy.start()
    try:
        while True:
            time.sleep(1)
            if capture_path is not None:
                _write_captures(capture_path, proxy.sessions)
    except KeyboardInterrupt:
        proxy.stop()
        if capture_path is not None:
            _write_captures(capture_path, proxy.sessions)
    return proxy


def run_client_proxy(listen_host: str, listen_port: int, server_host: str,
                     server_port: int, cfg: DefenseConfig,
                     capture_path: Optional[str] = None) -> ClientProxy:
    """Start a client proxy and block forever (CLI entry)."""
    proxy = ClientProxy(server_host, server_port, cfg,
                        listen_host=listen_host, listen_port=listen_port)
    proxy.start()
    try:
        while True:
            time.sleep(1)
            if capture_path is not None:
                _write_captures(capture_path, [proxy.session])
    except KeyboardInterrupt:
        proxy.stop()
        if capture_path is not None:
            _write_captures(capture_path, [proxy.session])
    return proxy


def _write_captures(path: str, sessions: list[WireSession]) -> None:
    from .traceio import write_trace
    packets: list[Packet] = []
    for session in sessions:
        packets.extend(session.capture)
    packets.sort(key=lambda p: p.time_ms)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(write_trace(Trace(tuple(packets))))
