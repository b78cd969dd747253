import asyncio
import logging
import os
from typing import Any, Dict, Optional

from compliance_tools import ComplianceTools
from mcp_protocol import MCPProtocolHandler
from shelfalign.config import PipelineConfig, load_config
from shelfalign.logging_setup import configure_logging

logger = logging.getLogger(__name__)

_PLANOGRAM_ITEMS = {
    "type": "array",
    "minItems": 1,
    "items": {
        "type": "object",
        "properties": {
            "id": {"type": "string", "description": "Product id, or E / U for empty and unknown space"},
            "quantity": {"type": "integer", "minimum": 1},
        },
        "required": ["id", "quantity"],
    },
}

_OVERRIDES = {
    "type": "object",
    "description": "Pipeline config overrides, e.g. {\"sigma\": 5, \"max_iterations\": 4}",
}


class ShelfAlignMCPServer:
    def __init__(self, config: Optional[PipelineConfig] = None):
        self.mcp_handler = MCPProtocolHandler()
        self.compliance_tools = ComplianceTools(config, on_report=self.handle_report)
        self.register_tools()

    def register_tools(self):
        self.mcp_handler.register_tool(
            name="align_planograms",
            description="Align a detected planogram with a reference planogram and label each group MT/MI/ME/NM",
            inputSchema={
                "type": "object",
                "properties": {"detected": _PLANOGRAM_ITEMS, "reference": _PLANOGRAM_ITEMS},
                "required": ["detected", "reference"],
            },
            handler=self.compliance_tools.align_planograms,
        )

        self.mcp_handler.register_tool(
            name="detect_products",
            description="Detect products on a shelf image, including empty and unknown regions",
            inputSchema={
                "type": "object",
                "properties": {
                    "shelf_image": {"type": "string", "description": "Path to a PNG or JPEG shelf image"},
                    "object_ids": {"type": "array", "items": {"type": "string"}},
                    "planogram": {"type": "string", "description": "Reference planogram JSON naming the products"},
                    "models_dir": {"type": "string", "description": "Directory of <id>.png/.jpg/.shft model files"},
                    "overrides": _OVERRIDES,
                },
                "required": ["shelf_image"],
            },
            handler=self.compliance_tools.detect_products,
        )

        self.mcp_handler.register_tool(
            name="check_compliance",
            description="Run the iterative planogram compliance check for one shelf image",
            inputSchema={
                "type": "object",
                "properties": {
                    "shelf_image": {"type": "string"},
                    "planogram": {"type": "string", "description": "Reference planogram JSON"},
                    "models_dir": {"type": "string"},
                    "overrides": _OVERRIDES,
                },
                "required": ["shelf_image", "planogram"],
            },
            handler=self.compliance_tools.check_compliance,
        )

    async def handle_report(self, report: Dict[str, Any]):
        await self.mcp_handler.broadcast_notification(
            method="compliance_report",
            params={
                "shelf_id": report["shelf_id"],
                "final_mu": report["final_mu"],
                "iterations_run": report["iterations_run"],
                "labels": [pair["label"] for pair in report["alignment"]["pairs"]],
            },
        )

    async def start(self):
        mcp_host = os.getenv("MCP_HOST", "0.0.0.0")
        mcp_port = int(os.getenv("MCP_PORT", "8001"))
        logger.info(f"MCP connections: ws://{mcp_host}:{mcp_port}")
        await self.mcp_handler.start_server(mcp_host, mcp_port)


async def main():
    configure_logging()
    server = ShelfAlignMCPServer(load_config())
    await server.start()


if __name__ == "__main__":
    asyncio.run(main())
