import asyncio
import time

import httpx
import numpy as np
import pytest
from fastapi.testclient import TestClient

from actiontext.codec import CodecConfig
from actiontext.policy import RemoteEndpointConfig
from actiontext.prompting import build_system_prompt, encode_png_base64
from actiontext.service import create_app, create_stub_app
from actiontext.service.client import GatewayClient
from actiontext.service.server import BackgroundServer, free_port

CODEC = CodecConfig(2, 2, 10, ((0.0, 1.0), (0.0, 1.0)))
BACKEND = RemoteEndpointConfig(base_url="http://stub/v1", model="stub", timeout_ms=2000)


def gateway(stub, ensemble_n=1, backend=BACKEND, **kw):
    app = create_app(backend, CODEC, ensemble_n, transport=httpx.ASGITransport(stub), **kw)
    return TestClient(app)


def body(t, session="s1", instruction="push the block", **extra):
    return {"session_id": session, "instruction": instruction, "state": [0.0, 0.0], "timestep": t, **extra}


def test_valid_reply_returns_first_action():
    with gateway(create_stub_app(["5 5 10 10"])) as c:
        r = c.post("/act", json=body(0))
        assert r.status_code == 200
        data = r.json()
        assert data["action"] == [0.5, 0.5]
        assert data["parse_ok"] and not data["clamped"]
        assert data["raw_text"] == "5 5 10 10"


def test_clamped_flag():
    with gateway(create_stub_app(["5 99 10 10"])) as c:
        data = c.post("/act", json=body(0)).json()
        assert data["parse_ok"] and data["clamped"] and data["action"] == [0.5, 1.0]


def test_garbage_is_held():
    stub = create_stub_app(["2 4 6 8", "I cannot help with that"])
    with gateway(stub) as c:
        first = c.post("/act", json=body(0)).json()
        second = c.post("/act", json=body(1)).json()
        assert second["parse_ok"] is False
        assert second["action"] == first["action"] == [0.2, 0.4]


def test_first_step_garbage_uses_rest_action():
    with gateway(create_stub_app(["nope"]), rest_action=[0.25, 0.75]) as c:
        data = c.post("/act", json=body(0)).json()
        assert data["action"] == [0.25, 0.75] and not data["parse_ok"]


def test_ensembling_across_requests():
    stub = create_stub_app(["0 0 10 10", "4 4 4 4"])
    with gateway(stub, ensemble_n=2) as c:
        assert c.post("/act", json=body(0)).json()["action"] == [0.0, 0.0]
        # rows covering t=1: (1.0, 1.0) from the first chunk and (0.4, 0.4) from the second
        assert c.post("/act", json=body(1)).json()["action"] == pytest.approx([0.7, 0.7])


def test_non_increasing_timestep_conflict():
    with gateway(create_stub_app(["1 1 1 1"])) as c:
        assert c.post("/act", json=body(3)).status_code == 200
        assert c.post("/act", json=body(3)).status_code == 409
        assert c.post("/act", json=body(2)).status_code == 409
        assert c.post("/act", json=body(4)).status_code == 200


def test_reset_allows_restart():
    with gateway(create_stub_app(["1 1 1 1"])) as c:
        c.post("/act", json=body(0))
        c.post("/act", json=body(1))
        assert c.post("/reset", json={"session_id": "s1"}).json() == {"session_id": "s1", "existed": True}
        assert c.post("/act", json=body(0)).status_code == 200
        assert c.post("/reset", json={"session_id": "other"}).json()["existed"] is False


@pytest.mark.parametrize(
    "payload",
    [
        {"session_id": "s", "instruction": "go", "timestep": 0},  # no image, no state
        body(-1),
        body(0, instruction="   "),
        body(0, session=""),
        body(0, surprise=True),
        body(0, images=["not base64 at all!!"]),
        body(0, images=["aGVsbG8="]),  # base64 but not a PNG
        {"session_id": "s", "instruction": "go", "state": ["nan"], "timestep": 0},
    ],
)
def test_bad_requests_are_400(payload):
    with gateway(create_stub_app(["1 1 1 1"])) as c:
        assert c.post("/act", json=payload).status_code == 400


def test_images_reach_backend():
    stub = create_stub_app(["1 1 1 1"])
    img = encode_png_base64(np.zeros((8, 8, 3), np.uint8))
    with gateway(stub) as c:
        assert c.post("/act", json={"session_id": "s", "instruction": "go", "images": [img, img], "timestep": 0}).status_code == 200
    msgs = stub.state.transcript[0]["messages"]
    assert msgs[0]["content"] == build_system_prompt(2, 2, 10)
    assert sum(p["type"] == "image_url" for p in msgs[1]["content"]) == 2


def test_backend_http_error_is_503():
    with gateway(create_stub_app([{"status": 500}])) as c:
        assert c.post("/act", json=body(0)).status_code == 503


def test_backend_unreachable_is_503():
    dead = RemoteEndpointConfig(base_url=f"http://127.0.0.1:{free_port()}/v1", model="m", timeout_ms=500)
    with TestClient(create_app(dead, CODEC)) as c:
        r = c.post("/act", json=body(0))
        assert r.status_code == 503
        assert "unavailable" in r.json()["detail"]


def test_backend_timeout_is_503():
    slow = RemoteEndpointConfig(base_url="http://stub/v1", model="m", timeout_ms=50)
    with gateway(create_stub_app(["1 1 1 1"], delay_ms=300), backend=slow) as c:
        assert c.post("/act", json=body(0)).status_code == 503


def test_failed_backend_does_not_advance_session():
    stub = create_stub_app([{"status": 502}, "3 3 3 3"])
    with gateway(stub) as c:
        assert c.post("/act", json=body(0)).status_code == 503
        assert c.post("/act", json=body(0)).json()["action"] == [0.3, 0.3]


def test_sessions_are_isolated():
    stub = create_stub_app(by_instruction={"left": ["0 0 0 0"], "right": ["10 10 10 10"]})
    with gateway(stub, ensemble_n=2) as c:
        for t in range(20):
            a = c.post("/act", json=body(t, session="A", instruction="left")).json()
            b = c.post("/act", json=body(t, session="B", instruction="right")).json()
            assert a["action"] == [0.0, 0.0]
            assert b["action"] == [1.0, 1.0]
        assert c.get("/health").json()["sessions"] == 2


def test_thousand_garbage_replies_never_fail():
    with gateway(create_stub_app(["7 7 7 7", "###"])) as c:
        first = c.post("/act", json=body(0)).json()["action"]
        for t in range(1, 1001):
            r = c.post("/act", json=body(t))
            assert r.status_code == 200
            assert r.json()["action"] == first and not r.json()["parse_ok"]


def test_latency_includes_backend_delay():
    with gateway(create_stub_app(["1 1 1 1"], delay_ms=40)) as c:
        assert c.post("/act", json=body(0)).json()["latency_ms"] >= 40


def test_health():
    with gateway(create_stub_app()) as c:
        h = c.get("/health").json()
        assert h == {"status": "ok", "sessions": 0, "backend": "http://stub/v1", "horizon": 2, "dims": 2, "resolution": 10, "ensemble_n": 1}


def test_invalid_app_config():
    with pytest.raises(ValueError):
        create_app(BACKEND, CODEC, ensemble_n=3)
    with pytest.raises(ValueError):
        create_app(BACKEND, CODEC, rest_action=[0.0])


def test_gateway_client_over_sockets():
    stub = create_stub_app(["10 0 0 0"])
    with BackgroundServer(stub) as backend:
        cfg = RemoteEndpointConfig(base_url=backend.url + "/v1", model="m")
        with BackgroundServer(create_app(cfg, CODEC)) as gw:
            client = GatewayClient(gw.url)
            try:
                out = client.act("robot", "wave", 0, images=[np.zeros((4, 4, 3), np.uint8)])
                assert out.action == [1.0, 0.0] and out.parse_ok
                assert client.health()["sessions"] == 1
                assert client.reset("robot") is True
                with pytest.raises(httpx.HTTPStatusError):
                    client.act("robot", "wave", -1, state=[0.0])
            finally:
                client.close()


async def _concurrent(stub, requests):
    app = create_app(BACKEND, CODEC, transport=httpx.ASGITransport(stub))
    async with app.router.lifespan_context(app):
        async with httpx.AsyncClient(transport=httpx.ASGITransport(app), base_url="http://gw") as c:
            return await asyncio.gather(*(c.post("/act", json=b) for b in requests))


def test_concurrent_same_timestep_one_wins():
    stub = create_stub_app(["1 1 1 1"], delay_ms=100)
    codes = sorted(r.status_code for r in asyncio.run(_concurrent(stub, [body(5), body(5)])))
    assert codes == [200, 409]
    assert len(stub.state.transcript) == 1


def test_sessions_run_in_parallel():
    stub = create_stub_app(["1 1 1 1"], delay_ms=300)
    start = time.perf_counter()
    out = asyncio.run(_concurrent(stub, [body(0, session=f"s{k}") for k in range(4)]))
    assert all(r.status_code == 200 for r in out)
    assert time.perf_counter() - start < 0.9
