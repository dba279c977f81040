"""Robot-side client for the gateway."""

from __future__ import annotations

from typing import Sequence

import httpx
import numpy as np

from ..prompting import encode_png_base64
from .schemas import ActResponse


class GatewayClient:
    def __init__(self, base_url: str, timeout_s: float = 30.0, transport: httpx.BaseTransport | None = None):
        self._http = httpx.Client(base_url=base_url, timeout=timeout_s, transport=transport)

    def act(
        self,
        session_id: str,
        instruction: str,
        timestep: int,
        images: Sequence[np.ndarray] = (),
        state: Sequence[float] | None = None,
    ) -> ActResponse:
        body = {
            "session_id": session_id,
            "instruction": instruction,
            "images": [encode_png_base64(im) for im in images],
            "timestep": timestep,
        }
        if state is not None:
            body["state"] = [float(v) for v in state]
        resp = self._http.post("/act", json=body)
        resp.raise_for_status()
        return ActResponse.model_validate(resp.json())

    def reset(self, session_id: str) -> bool:
        resp = self._http.post("/reset", json={"session_id": session_id})
        resp.raise_for_status()
        return resp.json()["existed"]

    def health(self) -> dict:
        resp = self._http.get("/health")
        resp.raise_for_status()
        return resp.json()

    def close(self) -> None:
        self._http.close()
