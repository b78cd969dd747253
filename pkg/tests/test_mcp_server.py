import asyncio
import json

import pytest
from conftest import synthetic_shelf

from mcp_protocol import INVALID_PARAMS, INVALID_REQUEST, METHOD_NOT_FOUND, PARSE_ERROR, MCPProtocolHandler
from server import ShelfAlignMCPServer
from shelfalign import outputs


def _send(handler, message):
    raw = message if isinstance(message, str) else json.dumps(message)
    reply = asyncio.run(handler.process_message(raw))
    return None if reply is None else json.loads(reply)


def _call(handler, name, arguments, request_id=1):
    return _send(handler, {"jsonrpc": "2.0", "id": request_id, "method": "tools/call",
                           "params": {"name": name, "arguments": arguments}})


def _tool_payload(reply):
    assert reply["result"]["isError"] is False, reply
    return json.loads(reply["result"]["content"][0]["text"])


@pytest.fixture
def mcp():
    return ShelfAlignMCPServer().mcp_handler


class _RecordingClient:
    remote_address = ("test", 0)

    def __init__(self):
        self.sent = []

    async def send(self, message):
        self.sent.append(json.loads(message))


def test_initialize(mcp):
    reply = _send(mcp, {"jsonrpc": "2.0", "id": 1, "method": "initialize", "params": {}})
    assert reply["id"] == 1
    assert reply["result"]["serverInfo"]["name"] == "shelfalign-mcp-server"
    assert "tools" in reply["result"]["capabilities"]


def test_initialized_notification_gets_no_reply(mcp):
    assert _send(mcp, {"jsonrpc": "2.0", "method": "notifications/initialized"}) is None


def test_tools_list(mcp):
    reply = _send(mcp, {"jsonrpc": "2.0", "id": "a", "method": "tools/list"})
    names = [tool["name"] for tool in reply["result"]["tools"]]
    assert names == ["align_planograms", "detect_products", "check_compliance"]
    assert all(tool["inputSchema"]["type"] == "object" for tool in reply["result"]["tools"])


def test_align_tool(mcp):
    reply = _call(mcp, "align_planograms", {
        "detected": [{"id": "o1", "quantity": 3}, {"id": "o2", "quantity": 5}, {"id": "U", "quantity": 1}],
        "reference": [{"id": "o1", "quantity": 3}, {"id": "o2", "quantity": 5}, {"id": "o5", "quantity": 2}],
    })
    payload = _tool_payload(reply)
    assert [pair["label"] for pair in payload["pairs"]] == ["MT", "MT", "NM"]
    assert payload["mu_exact"] == "4/5"
    assert payload["table"].splitlines()[-1] == "mu = 0.8000 (4/5)"


def test_tool_argument_errors_are_tool_results(mcp):
    reply = _call(mcp, "align_planograms", {"detected": [], "reference": [{"id": "o1", "quantity": 1}]})
    assert reply["result"]["isError"] is True
    assert "detected" in reply["result"]["content"][0]["text"]


def test_reserved_reference_id_is_tool_error(mcp):
    reply = _call(mcp, "align_planograms", {
        "detected": [{"id": "o1", "quantity": 1}], "reference": [{"id": "U", "quantity": 1}],
    })
    assert reply["result"]["isError"] is True
    assert "reserved" in reply["result"]["content"][0]["text"]


def test_unknown_tool(mcp):
    reply = _call(mcp, "teleport", {})
    assert reply["error"]["code"] == METHOD_NOT_FOUND


def test_unknown_method(mcp):
    reply = _send(mcp, {"jsonrpc": "2.0", "id": 3, "method": "resources/list"})
    assert reply["error"]["code"] == METHOD_NOT_FOUND


def test_malformed_frames(mcp):
    assert _send(mcp, "{not json")["error"]["code"] == PARSE_ERROR
    assert _send(mcp, {"jsonrpc": "2.0", "id": 4})["error"]["code"] == INVALID_REQUEST
    assert _send(mcp, {"jsonrpc": "2.0", "id": 5, "method": "tools/call", "params": []})["error"]["code"] \
        == INVALID_PARAMS
    bad_call = {"jsonrpc": "2.0", "id": 6, "method": "tools/call", "params": {"name": 7}}
    assert _send(mcp, bad_call)["error"]["code"] == INVALID_PARAMS


def test_duplicate_tool_registration_rejected():
    handler = MCPProtocolHandler()

    async def noop(arguments):
        return {}

    handler.register_tool("noop", "does nothing", {"type": "object"}, noop)
    with pytest.raises(ValueError):
        handler.register_tool("noop", "does nothing", {"type": "object"}, noop)


def test_compliance_tool_broadcasts_report(tmp_path):
    shelf, gt, models = synthetic_shelf([("o1", 2), ("o2", 2)])
    outputs.write_png(tmp_path / "shelf.png", shelf.pixels)
    for object_id, sprite in models:
        outputs.write_png(tmp_path / "models" / f"{object_id}.png", sprite.pixels)
    outputs.write_json(tmp_path / "reference.json", {
        "shelf_id": "s9",
        "products": [{"id": "o1", "quantity": 2}, {"id": "o2", "quantity": 2}],
    })

    server = ShelfAlignMCPServer()
    client = _RecordingClient()
    server.mcp_handler.clients.add(client)
    reply = _call(server.mcp_handler, "check_compliance", {
        "shelf_image": str(tmp_path / "shelf.png"),
        "planogram": str(tmp_path / "reference.json"),
        "models_dir": str(tmp_path / "models"),
    })
    payload = _tool_payload(reply)
    assert payload["final_mu_exact"] == "1/1"
    (notification,) = client.sent
    assert notification["method"] == "compliance_report"
    assert notification["params"] == {"shelf_id": "s9", "final_mu": 1.0, "iterations_run": 1, "labels": ["MT", "MT"]}


def test_detect_tool_needs_products(tmp_path):
    handler = ShelfAlignMCPServer().mcp_handler
    reply = _call(handler, "detect_products", {"shelf_image": str(tmp_path / "shelf.png")})
    assert reply["result"]["isError"] is True
    assert "object_ids" in reply["result"]["content"][0]["text"]


def test_bad_override_is_tool_error():
    handler = ShelfAlignMCPServer().mcp_handler
    reply = _call(handler, "detect_products", {"shelf_image": "x.png", "object_ids": ["o1"],
                                               "overrides": {"sigma": -1}})
    assert reply["result"]["isError"] is True
    assert "sigma" in reply["result"]["content"][0]["text"]
