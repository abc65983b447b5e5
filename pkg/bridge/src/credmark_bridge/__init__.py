"""Causal-LM logit server for the credmark provider wire protocol."""

__version__ = "0.1.0"

from .server import BridgeConfig, LogitBridge, serve_bridge
