"""Running the gateway and the stub model under uvicorn."""

from __future__ import annotations

import logging
import socket
import threading
import time

import httpx
import uvicorn

from ..codec import CodecConfig
from ..policy import RemoteEndpointConfig
from ..prompting import Layout
from .gateway import create_app

log = logging.getLogger(__name__)


def parse_bind(bind: str) -> tuple[str, int]:
    host, sep, port = bind.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"bind address must look like host:port, got {bind!r}")
    return host or "127.0.0.1", int(port)


def check_backend(endpoint: RemoteEndpointConfig) -> None:
    """Any HTTP answer from ``<base>/models`` counts as reachable."""
    url = endpoint.base_url.rstrip("/") + "/models"
    try:
        resp = httpx.get(url, timeout=endpoint.timeout_ms / 1e3)
    except httpx.HTTPError as exc:
        raise ConnectionError(f"backend {endpoint.base_url} is not reachable: {exc}") from exc
    if resp.status_code >= 500:
        raise ConnectionError(f"backend {endpoint.base_url} answered HTTP {resp.status_code}")


def serve(
    bind: str,
    backend: RemoteEndpointConfig,
    codec: CodecConfig,
    ensemble_n: int = 1,
    layout: Layout = Layout.SEPARATE,
    health_check: bool = True,
) -> None:
    if health_check:
        check_backend(backend)
    host, port = parse_bind(bind)
    app = create_app(backend, codec, ensemble_n, layout)
    uvicorn.run(app, host=host, port=port, log_level="info")


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class BackgroundServer:
    """Serve an ASGI app from a daemon thread; used by tests and local demos."""

    def __init__(self, app, host: str = "127.0.0.1", port: int | None = None):
        self.host = host
        self.port = port or free_port()
        self.server = uvicorn.Server(uvicorn.Config(app, host=host, port=self.port, log_level="warning"))
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def __enter__(self) -> "BackgroundServer":
        self.thread.start()
        deadline = time.monotonic() + 10
        while not self.server.started:
            if time.monotonic() > deadline or not self.thread.is_alive():
                raise RuntimeError("server did not start")
            time.sleep(0.01)
        return self

    def __exit__(self, *exc) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=10)
