"""Serve a causal language model's next-token logits over newline-delimited
JSON (stdio or TCP).

Frames:
    -> {"op":"hello"}                     <- {"ok":true,"provider_id":...,"vocab_size":N,"context_order":0}
    -> {"op":"logits","context":[ints]}   <- {"ok":true,"logits":[floats]}
    -> {"op":"tokenize","text":str}       <- {"ok":true,"tokens":[ints]}
Errors come back as {"ok":false,"error":str}; one request per line,
responses in order. The model is a single shared read-only resource; a lock
serializes forward passes so any number of connections can be open.
"""

from __future__ import annotations

import argparse
import json
import socketserver
import sys
import threading
from dataclasses import dataclass


@dataclass(frozen=True)
class BridgeConfig:
    model: str
    device: str = "cpu"
    dtype: str = "float32"
    listen: str = "stdio"          # "stdio" or "host:port"
    max_context: int = 512


class LogitBridge:
    """Wraps one loaded model as a frame handler."""

    def __init__(self, config: BridgeConfig):
        import torch
        from transformers import AutoModelForCausalLM, AutoTokenizer

        self.config = config
        self._torch = torch
        dtype = getattr(torch, config.dtype)
        self.model = AutoModelForCausalLM.from_pretrained(config.model, torch_dtype=dtype)
        self.model.to(config.device)
        self.model.eval()
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(config.model)
        except Exception:
            self.tokenizer = None
        self._lock = threading.Lock()
        # report the actual logits width, which can differ from the nominal
        # tokenizer vocabulary on models with padded heads
        with torch.no_grad():
            probe = self.model(torch.tensor([[0]], device=config.device)).logits
        self.vocab_size = int(probe.shape[-1])
        self.provider_id = f"hf:{config.model.rsplit('/', 1)[-1]}"

    def hello(self) -> dict:
        return {"ok": True, "provider_id": self.provider_id,
                "vocab_size": self.vocab_size, "context_order": 0}

    def logits(self, context) -> dict:
        torch = self._torch
        ids = [int(t) for t in context]
        if any(t < 0 or t >= self.vocab_size for t in ids):
            return {"ok": False, "error": "token id outside vocabulary"}
        if not ids:
            bos = getattr(self.model.config, "bos_token_id", None)
            ids = [bos if bos is not None else 0]
        ids = ids[-self.config.max_context:]
        with self._lock, torch.no_grad():
            out = self.model(torch.tensor([ids], device=self.config.device)).logits
        row = out[0, -1].to(torch.float64).cpu().numpy()
        return {"ok": True, "logits": [float(x) for x in row]}

    def tokenize(self, text: str) -> dict:
        if self.tokenizer is None:
            return {"ok": False, "error": "model has no tokenizer"}
        return {"ok": True,
                "tokens": [int(t) for t in self.tokenizer.encode(text, add_special_tokens=False)]}

    def handle_frame(self, frame: dict) -> dict:
        op = frame.get("op")
        if op == "hello":
            return self.hello()
        if op == "logits":
            ctx = frame.get("context")
            if not isinstance(ctx, list):
                return {"ok": False, "error": "logits frame needs a 'context' list"}
            return self.logits(ctx)
        if op == "tokenize":
            text = frame.get("text")
            if not isinstance(text, str):
                return {"ok": False, "error": "tokenize frame needs a 'text' string"}
            return self.tokenize(text)
        return {"ok": False, "error": f"unknown op {op!r}"}

    def handle_line(self, line: str) -> str:
        try:
            frame = json.loads(line)
            if not isinstance(frame, dict):
                raise ValueError("frame must be an object")
            reply = self.handle_frame(frame)
        except (json.JSONDecodeError, ValueError) as exc:
            reply = {"ok": False, "error": f"malformed frame: {exc}"}
        except Exception as exc:
            reply = {"ok": False, "error": f"internal error: {exc}"}
        return json.dumps(reply, separators=(",", ":"))


def serve_stdio(bridge: LogitBridge):
    print(f"bridge ready on stdio ({bridge.provider_id}, |V|={bridge.vocab_size})",
          file=sys.stderr, flush=True)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        sys.stdout.write(bridge.handle_line(line) + "\n")
        sys.stdout.flush()


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        while True:
            line = self.rfile.readline()
            if not line:
                return
            line = line.strip().decode("utf-8", errors="replace")
            if not line:
                continue
            self.wfile.write((self.server.bridge.handle_line(line) + "\n").encode())
            self.wfile.flush()


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


def serve_tcp(bridge: LogitBridge, host: str, port: int):
    server = _Server((host, port), _Handler)
    server.bridge = bridge
    print(f"bridge listening on {server.server_address[0]}:{server.server_address[1]} "
          f"({bridge.provider_id}, |V|={bridge.vocab_size})", file=sys.stderr, flush=True)
    server.serve_forever()


def serve_bridge(config: BridgeConfig):
    bridge = LogitBridge(config)
    if config.listen == "stdio":
        serve_stdio(bridge)
    else:
        host, _, port = config.listen.rpartition(":")
        serve_tcp(bridge, host or "127.0.0.1", int(port))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="credmark-bridge",
                                     description="causal-LM logit server")
    parser.add_argument("--model", required=True, help="model directory or hub id")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--dtype", default="float32")
    parser.add_argument("--listen", default="stdio", help='"stdio" or HOST:PORT')
    parser.add_argument("--max-context", type=int, default=512)
    args = parser.parse_args(argv)
    try:
        serve_bridge(BridgeConfig(model=args.model, device=args.device,
                                  dtype=args.dtype, listen=args.listen,
                                  max_context=args.max_context))
    except KeyboardInterrupt:
        pass
    except Exception as exc:
        print(f"bridge failed to start: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
