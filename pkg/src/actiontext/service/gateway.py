"""HTTP gateway: prompt -> remote model -> parse -> ensemble -> action.

Each ``session_id`` owns an ensemble buffer. Requests for one session are
serialized by a per-session lock and must carry strictly increasing
timesteps; anything else gets 409. Sessions never share state.
"""

from __future__ import annotations

import asyncio
import binascii
import logging
from contextlib import asynccontextmanager
from dataclasses import dataclass, field

import httpx
import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.encoders import jsonable_encoder
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import UnidentifiedImageError

from ..codec import ActionParseError, CodecConfig, dequantize, parse_text
from ..ensembling import EnsembleBuffer
from ..policy import AsyncRemoteClient, BackendError, RemoteEndpointConfig
from ..prompting import Layout, build_prompt, decode_png_base64
from .schemas import ActRequest, ActResponse, HealthResponse, ResetRequest, ResetResponse

log = logging.getLogger(__name__)


@dataclass
class Session:
    buffer: EnsembleBuffer
    last_timestep: int | None = None
    last_action: np.ndarray | None = None
    lock: asyncio.Lock = field(default_factory=asyncio.Lock)
    parse_failures: int = 0


def create_app(
    backend: RemoteEndpointConfig,
    codec: CodecConfig,
    ensemble_n: int = 1,
    layout: Layout = Layout.SEPARATE,
    rest_action=None,
    transport: httpx.AsyncBaseTransport | None = None,
) -> FastAPI:
    """Build the gateway app.

    ``rest_action`` is returned when the very first step of a session fails to
    parse (there is no previous action to hold); it defaults to zeros.
    ``transport`` lets tests route backend calls in-process.
    """
    if not 1 <= ensemble_n <= codec.horizon:
        raise ValueError(f"ensemble_n must be in [1, {codec.horizon}], got {ensemble_n}")
    rest = np.zeros(codec.dims) if rest_action is None else np.asarray(rest_action, dtype=np.float64)
    if rest.shape != (codec.dims,) or not np.all(np.isfinite(rest)):
        raise ValueError("rest_action must be a finite vector of length dims")
    layout = Layout(layout)

    sessions: dict[str, Session] = {}

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        app.state.client = AsyncRemoteClient(backend, transport)
        try:
            yield
        finally:
            await app.state.client.aclose()

    app = FastAPI(title="action gateway", lifespan=lifespan)
    app.state.sessions = sessions

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": jsonable_encoder(exc.errors())})

    def session_for(session_id: str) -> Session:
        s = sessions.get(session_id)
        if s is None:
            s = sessions[session_id] = Session(EnsembleBuffer(ensemble_n, codec.horizon))
        return s

    @app.get("/health", response_model=HealthResponse)
    async def health():
        return HealthResponse(
            status="ok",
            sessions=len(sessions),
            backend=backend.base_url,
            horizon=codec.horizon,
            dims=codec.dims,
            resolution=codec.resolution,
            ensemble_n=ensemble_n,
        )

    @app.post("/reset", response_model=ResetResponse)
    async def reset(req: ResetRequest):
        s = sessions.get(req.session_id)
        if s is None:
            return ResetResponse(session_id=req.session_id, existed=False)
        async with s.lock:
            sessions.pop(req.session_id, None)
        return ResetResponse(session_id=req.session_id, existed=True)

    @app.post("/act", response_model=ActResponse)
    async def act(req: ActRequest):
        try:
            images = [decode_png_base64(im) for im in req.images]
        except (binascii.Error, ValueError, UnidentifiedImageError) as exc:
            raise HTTPException(status_code=400, detail=f"images must be base64 PNG: {exc}") from None
        bundle = build_prompt(codec, req.instruction, images, layout if images else Layout.SEPARATE)

        s = session_for(req.session_id)
        async with s.lock:
            if s.last_timestep is not None and req.timestep <= s.last_timestep:
                raise HTTPException(
                    status_code=409,
                    detail=f"timestep {req.timestep} is not after {s.last_timestep} for session {req.session_id!r}",
                )
            try:
                out = await app.state.client.complete(bundle)
            except BackendError as exc:
                log.warning("backend failure for %s: %s", req.session_id, exc)
                raise HTTPException(status_code=503, detail=f"backend unavailable ({exc.kind}): {exc}") from None

            try:
                q = parse_text(out.raw_text, codec)
            except ActionParseError as exc:
                s.parse_failures += 1
                log.info("session %s step %d: %s", req.session_id, req.timestep, exc)
                action = s.last_action if s.last_action is not None else rest
                parse_ok, clamped = False, False
            else:
                s.buffer.push(dequantize(q, codec), req.timestep)
                action = s.buffer.current_action(req.timestep)
                parse_ok, clamped = True, q.clamped
            s.last_timestep = req.timestep
            s.last_action = action

        return ActResponse(
            action=[float(v) for v in action],
            raw_text=out.raw_text,
            parse_ok=parse_ok,
            clamped=clamped,
            latency_ms=out.latency_ms,
        )

    return app
