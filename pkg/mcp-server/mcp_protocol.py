import asyncio
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Awaitable, Callable, Dict, List, Optional, Union

import websockets
from websockets.exceptions import ConnectionClosed

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = "2024-11-05"
SERVER_NAME = "shelfalign-mcp-server"
SERVER_VERSION = "0.1.0"

PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
INTERNAL_ERROR = -32603

ToolHandler = Callable[[Dict[str, Any]], Awaitable[Any]]


@dataclass
class MCPRequest:
    id: Optional[Union[str, int]]
    method: str
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def is_notification(self) -> bool:
        return self.id is None


@dataclass
class MCPResponse:
    id: Optional[Union[str, int]]
    result: Optional[Dict[str, Any]] = None
    error: Optional[Dict[str, Any]] = None

    def to_message(self) -> Dict[str, Any]:
        message: Dict[str, Any] = {"jsonrpc": "2.0", "id": self.id}
        if self.error is not None:
            message["error"] = self.error
        else:
            message["result"] = self.result
        return message


@dataclass
class MCPTool:
    name: str
    description: str
    inputSchema: Dict[str, Any]


def _error(request_id: Optional[Union[str, int]], code: int, message: str) -> MCPResponse:
    return MCPResponse(id=request_id, error={"code": code, "message": message})


def _tool_result(text: str, is_error: bool) -> Dict[str, Any]:
    return {"content": [{"type": "text", "text": text}], "isError": is_error}


class MCPProtocolHandler:
    def __init__(self):
        self.tools: Dict[str, ToolHandler] = {}
        self.tool_definitions: List[MCPTool] = []
        self.clients = set()

    def register_tool(self, name: str, description: str, inputSchema: Dict[str, Any], handler: ToolHandler):
        """Register a tool with the MCP server"""
        if name in self.tools:
            raise ValueError(f"tool {name!r} is already registered")
        self.tool_definitions.append(MCPTool(name=name, description=description, inputSchema=inputSchema))
        self.tools[name] = handler
        logger.info(f"Registered tool: {name}")

    async def handle_client(self, websocket, path: Optional[str] = None):
        """Serve one websocket client until it disconnects"""
        self.clients.add(websocket)
        logger.info(f"MCP client connected: {websocket.remote_address}, total clients: {len(self.clients)}")
        try:
            async for message in websocket:
                reply = await self.process_message(message)
                if reply is not None:
                    await websocket.send(reply)
        except ConnectionClosed:
            logger.info(f"MCP client disconnected: {websocket.remote_address}")
        except Exception as e:
            logger.error(f"Error handling client: {e}")
        finally:
            self.clients.discard(websocket)

    async def process_message(self, message: str) -> Optional[str]:
        """Decode one JSON-RPC frame and return the encoded reply (None for notifications)"""
        try:
            data = json.loads(message)
        except json.JSONDecodeError:
            return json.dumps(_error(None, PARSE_ERROR, "Parse error").to_message())

        if not isinstance(data, dict) or not isinstance(data.get("method"), str):
            request_id = data.get("id") if isinstance(data, dict) else None
            return json.dumps(_error(request_id, INVALID_REQUEST, "Invalid request").to_message())

        params = data.get("params", {})
        if not isinstance(params, dict):
            return json.dumps(_error(data.get("id"), INVALID_PARAMS, "params must be an object").to_message())

        request = MCPRequest(id=data.get("id"), method=data["method"], params=params)
        try:
            response = await self.handle_request(request)
        except Exception as e:
            logger.error(f"Internal error on {request.method}: {e}")
            response = _error(request.id, INTERNAL_ERROR, f"Internal error: {e}")

        if request.is_notification:
            return None
        return json.dumps(response.to_message())

    async def handle_request(self, request: MCPRequest) -> MCPResponse:
        if request.method == "initialize":
            return MCPResponse(
                id=request.id,
                result={
                    "protocolVersion": PROTOCOL_VERSION,
                    "capabilities": {"tools": {"listChanged": False}},
                    "serverInfo": {"name": SERVER_NAME, "version": SERVER_VERSION},
                },
            )

        if request.method == "notifications/initialized":
            logger.info("MCP client initialization completed")
            return MCPResponse(id=request.id, result={})

        if request.method == "tools/list":
            return MCPResponse(
                id=request.id,
                result={
                    "tools": [
                        {"name": tool.name, "description": tool.description, "inputSchema": tool.inputSchema}
                        for tool in self.tool_definitions
                    ]
                },
            )

        if request.method == "tools/call":
            return await self._call_tool(request)

        return _error(request.id, METHOD_NOT_FOUND, f"Method not found: {request.method}")

    async def _call_tool(self, request: MCPRequest) -> MCPResponse:
        tool_name = request.params.get("name")
        arguments = request.params.get("arguments", {})
        if not isinstance(tool_name, str) or not isinstance(arguments, dict):
            return _error(request.id, INVALID_PARAMS, "tools/call needs a string name and object arguments")
        if tool_name not in self.tools:
            return _error(request.id, METHOD_NOT_FOUND, f"Tool not found: {tool_name}")

        logger.info(f"Tool call: {tool_name}")
        try:
            result = await self.tools[tool_name](arguments)
        except Exception as e:
            # Tool failures go in the result, not as protocol errors
            logger.error(f"Tool execution error for {tool_name}: {e}")
            return MCPResponse(id=request.id, result=_tool_result(f"Tool execution error: {e}", True))

        text = result if isinstance(result, str) else json.dumps(result)
        return MCPResponse(id=request.id, result=_tool_result(text, False))

    async def broadcast_notification(self, method: str, params: Dict[str, Any]):
        """Send a JSON-RPC notification to every connected client"""
        message = json.dumps({"jsonrpc": "2.0", "method": method, "params": params})
        logger.info(f"Broadcasting {method} to {len(self.clients)} clients")
        for client in self.clients.copy():
            try:
                await client.send(message)
            except ConnectionClosed:
                logger.info(f"Client {client.remote_address} disconnected")
                self.clients.discard(client)

    async def start_server(self, host: str = "0.0.0.0", port: int = 8001):
        logger.info(f"Starting MCP server on {host}:{port}")
        async with websockets.serve(self.handle_client, host, port):
            await asyncio.Future()
