import socket
import threading

import pytest

from csbuflo.core import DefenseConfig, PaddingMode
from csbuflo import wire


class EchoOrigin:
    """TCP server echoing every byte back, for loopback tunnel tests."""

    def __init__(self):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind(("127.0.0.1", 0))
        self.sock.listen(16)
        self.port = self.sock.getsockname()[1]
        self._conns: list[socket.socket] = []
        threading.Thread(target=self._accept, daemon=True).start()

    def _accept(self):
        while True:
            try:
                conn, _ = self.sock.accept()
            except OSError:
                return
            self._conns.append(conn)
            threading.Thread(target=self._serve, args=(conn,),
                             daemon=True).start()

    @staticmethod
    def _serve(conn):
        while True:
            try:
                data = conn.recv(65536)
            except OSError:
                break
            if not data:
                break
            try:
                conn.sendall(data)
            except OSError:
                break
        conn.close()

    def close(self):
        self.sock.close()
        for conn in self._conns:
            try:
                conn.close()
            except OSError:
                pass


@pytest.fixture
def echo_origin():
    origin = EchoOrigin()
    yield origin
    origin.close()


def fast_cfg(**kw):
    defaults = dict(packet_size_bytes=600, quiet_time_ms=150,
                    initial_rho_ms=2, client_padding=PaddingMode.TOTAL,
                    server_padding=PaddingMode.TOTAL, early_termination=True)
    defaults.update(kw)
    return DefenseConfig(**defaults)


@pytest.fixture
def proxy_pair():
    """A running (server_proxy, client_proxy) pair on loopback."""
    cfg = fast_cfg()
    server = wire.ServerProxy(cfg, seed=1)
    server.start()
    client = wire.ClientProxy("127.0.0.1", server.port, cfg, seed=2)
    client.start()
    yield server, client
    client.stop()
    server.stop()


class SocksClient:
    """Minimal SOCKS5 client speaking to the client proxy."""

    def __init__(self, port: int):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=15)
        self.sock.sendall(bytes((5, 1, 0)))
        assert self.sock.recv(2) == bytes((5, 0))

    def connect(self, host: str, port: int) -> int:
        host_b = host.encode()
        self.sock.sendall(bytes((5, 1, 0, 3, len(host_b))) + host_b
                          + port.to_bytes(2, "big"))
        reply = self.sock.recv(10)
        return reply[1] if len(reply) >= 2 else -1

    def request(self, cmd: int) -> int:
        self.sock.sendall(bytes((5, cmd, 0, 1)) + bytes(6))
        reply = self.sock.recv(10)
        return reply[1] if len(reply) >= 2 else -1

    def close(self):
        self.sock.close()
