"""HTTP re-ranking service: online pDPP scoring plus nearline alpha updates."""

from pdpp.service.app import create_app
from pdpp.service.state import AlphaSnapshot, RerankService, ServiceSettings, build_service

__all__ = ["AlphaSnapshot", "RerankService", "ServiceSettings", "build_service", "create_app"]
