"""Scripted chat-completion server for hermetic tests.

Replies with the scripted texts in order and then keeps repeating the last
one. A script entry may also be a dict, ``{"raw_body": "..."}`` to send a
non-JSON body or ``{"status": 500}`` to fail the request.
``by_instruction`` maps a user instruction to its own script, so two
sessions can be driven by different constant "models" through one server.
Every request body is appended to ``app.state.transcript``.
"""

from __future__ import annotations

import asyncio
import itertools
import time
from typing import Sequence, Union

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse

ScriptEntry = Union[str, dict]


class Script:
    def __init__(self, entries: Sequence[ScriptEntry]):
        if not entries:
            raise ValueError("a stub script needs at least one entry")
        self.entries = list(entries)
        self.position = 0

    def next(self) -> ScriptEntry:
        entry = self.entries[min(self.position, len(self.entries) - 1)]
        self.position += 1
        return entry


def _instruction_of(body: dict) -> str | None:
    for msg in body.get("messages", []):
        if msg.get("role") != "user":
            continue
        content = msg.get("content")
        if isinstance(content, str):
            return content
        for part in content or []:
            if isinstance(part, dict) and part.get("type") == "text":
                return part.get("text")
    return None


def completion_envelope(text: str, model: str, n: int) -> dict:
    return {
        "id": f"stub-{n}",
        "object": "chat.completion",
        "created": int(time.time()),
        "model": model,
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
    }


def create_stub_app(
    script: Sequence[ScriptEntry] = ("0",),
    delay_ms: float = 0.0,
    by_instruction: dict[str, Sequence[ScriptEntry]] | None = None,
) -> FastAPI:
    app = FastAPI(title="stub chat model")
    default = Script(script)
    scripts = {k: Script(v) for k, v in (by_instruction or {}).items()}
    counter = itertools.count()
    app.state.transcript = []
    app.state.delay_ms = float(delay_ms)

    async def completions(request: Request):
        n = next(counter)
        try:
            body = await request.json()
        except ValueError:
            return JSONResponse(status_code=400, content={"error": "request body is not JSON"})
        app.state.transcript.append(body)
        if app.state.delay_ms > 0:
            await asyncio.sleep(app.state.delay_ms / 1e3)
        entry = scripts.get(_instruction_of(body), default).next()
        if isinstance(entry, dict):
            if "raw_body" in entry:
                return PlainTextResponse(entry["raw_body"], status_code=entry.get("status", 200))
            if "status" in entry:
                return JSONResponse(status_code=entry["status"], content={"error": "scripted failure"})
            entry = entry.get("text", "")
        return completion_envelope(entry, body.get("model", "stub"), n)

    app.add_api_route("/v1/chat/completions", completions, methods=["POST"])
    app.add_api_route("/chat/completions", completions, methods=["POST"])

    @app.get("/v1/models")
    @app.get("/models")
    async def models():
        return {"object": "list", "data": [{"id": "stub", "object": "model"}]}

    @app.get("/health")
    async def health():
        return {"status": "ok", "requests": len(app.state.transcript)}

    @app.get("/transcript")
    async def transcript():
        return app.state.transcript

    return app
