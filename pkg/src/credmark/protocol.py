"""Multi-party machinery: registry, seed issuance, extraction reports, and
joint adjudication.

The trusted coordinator owns each vendor's secret key and identity message;
vendors only ever see derived seeds and seed tables. Wire traffic is
newline-delimited JSON and is schema-checked on every frame so that no
request can smuggle prompt material and no response can leak a vendor key.
"""

from __future__ import annotations

import base64
import json
import os
import secrets
import socketserver
import threading
import time
from dataclasses import dataclass

from cryptography.fernet import Fernet, InvalidToken
from cryptography.hazmat.primitives.hashes import SHA256
from cryptography.hazmat.primitives.kdf.pbkdf2 import PBKDF2HMAC

from .codec import ExtractionEngine, ExtractionResult, _decode_totals
from .config import WatermarkConfig
from .hashing import ConfigurationError, MessageBits, SeedMaterial, build_seed_table, derive_seed

REGISTRY_SECRET_ENV = "CREDMARK_REGISTRY_SECRET"

SEED_REQUEST_FIELDS = frozenset({"vendor_id", "model_name", "model_version", "timestamp", "nonce"})


class ProtocolError(RuntimeError):
    pass


class SchemaError(ProtocolError):
    """A frame carried unknown or forbidden fields."""


class UnknownVendorError(ProtocolError):
    pass


class RegistryExhaustedError(ProtocolError):
    pass


@dataclass(frozen=True)
class VendorRecord:
    vendor_id: str
    identity_message: MessageBits
    vendor_key: bytes
    registered_at: float


@dataclass(frozen=True)
class ExtractionReport:
    vendor_id: str
    top_seed_index: int
    posterior: float
    pvalue: float
    per_message_totals: tuple[int, ...]
    gated_steps: int

    @classmethod
    def from_result(cls, vendor_id: str, result: ExtractionResult) -> "ExtractionReport":
        return cls(
            vendor_id=vendor_id,
            top_seed_index=result.seed_index,
            posterior=result.posterior,
            pvalue=result.pvalue,
            per_message_totals=tuple(int(x) for x in result.totals),
            gated_steps=result.gated_steps,
        )

    def to_dict(self) -> dict:
        return {
            "vendor_id": self.vendor_id,
            "top_seed_index": self.top_seed_index,
            "posterior": self.posterior,
            "pvalue": self.pvalue,
            "per_message_totals": list(self.per_message_totals),
            "gated_steps": self.gated_steps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractionReport":
        extra = set(d) - {"vendor_id", "top_seed_index", "posterior", "pvalue",
                          "per_message_totals", "gated_steps"}
        if extra:
            raise SchemaError(f"unexpected report fields: {sorted(extra)}")
        return cls(
            vendor_id=str(d["vendor_id"]),
            top_seed_index=int(d["top_seed_index"]),
            posterior=float(d["posterior"]),
            pvalue=float(d["pvalue"]),
            per_message_totals=tuple(int(x) for x in d["per_message_totals"]),
            gated_steps=int(d["gated_steps"]),
        )


@dataclass(frozen=True)
class Adjudication:
    attributed_vendor_id: str          # vendor id or "human/none"
    decoded_message: str | None
    winning_posterior: float
    reports: tuple[ExtractionReport, ...]

    NONE = "human/none"

    def to_dict(self) -> dict:
        return {
            "attributed_vendor_id": self.attributed_vendor_id,
            "decoded_message": self.decoded_message,
            "winning_posterior": self.winning_posterior,
            "reports": [r.to_dict() for r in self.reports],
        }


def validate_seed_request(request: dict) -> dict:
    """Privacy by schema: a request may carry routing metadata and nothing
    else; in particular no prompt or text fields of any name."""
    if not isinstance(request, dict):
        raise SchemaError("seed request must be an object")
    extra = set(request) - SEED_REQUEST_FIELDS
    if extra:
        raise SchemaError(f"seed request carries forbidden fields: {sorted(extra)}")
    missing = {"vendor_id"} - set(request)
    if missing:
        raise SchemaError(f"seed request missing fields: {sorted(missing)}")
    return request


def adjudicate(reports, posterior_threshold: float = 0.5,
               pvalue_threshold: float = 1e-4) -> Adjudication:
    """Attribute to the passing report with the highest posterior.

    A report passes when both confidence gates hold. No passing report means
    the text is judged human/unwatermarked. Pure function of its inputs;
    ties break on vendor id.
    """
    reports = tuple(reports)
    if not reports:
        raise ValueError("need at least one report")
    passing = [r for r in reports
               if r.posterior >= posterior_threshold and r.pvalue < pvalue_threshold]
    if not passing:
        return Adjudication(Adjudication.NONE, None, 0.0, reports)
    best = min(passing, key=lambda r: (-r.posterior, r.vendor_id))
    n = len(best.per_message_totals)
    width = max(n.bit_length() - 1, 1)
    message = str(MessageBits(best.top_seed_index, width))
    return Adjudication(best.vendor_id, message, best.posterior, reports)


def vendor_extract(provider, text, seed_table, config: WatermarkConfig,
                   vendor_id: str, engine: ExtractionEngine | None = None) -> ExtractionReport:
    """Run the counting extraction and wrap the outcome as a wire report."""
    if engine is None:
        engine = ExtractionEngine(provider, seed_table, config)
    totals, gated = engine.totals_for_text(text)
    result = _decode_totals(totals, int(gated), config)
    return ExtractionReport.from_result(vendor_id, result)


# ---------------------------------------------------------------------------
# registry

def _fernet_from_secret(secret: str, salt: bytes) -> Fernet:
    kdf = PBKDF2HMAC(algorithm=SHA256(), length=32, salt=salt, iterations=200_000)
    return Fernet(base64.urlsafe_b64encode(kdf.derive(secret.encode())))


class TtpRegistry:
    """Vendor identities, their secret keys, and the issuance audit trail.

    Registration draws the identity message uniformly from the unassigned
    space, so two vendors can never collide; keys never leave this object
    except encrypted at rest.
    """

    def __init__(self, bits: int = 20, path: str | None = None,
                 secret: str | None = None):
        if not 1 <= bits <= 24:
            raise ConfigurationError("bits must be in [1, 24]")
        self.bits = bits
        self.path = path
        self._secret = secret if secret is not None else os.environ.get(REGISTRY_SECRET_ENV)
        self._vendors: dict[str, VendorRecord] = {}
        self._used_messages: set[int] = set()
        self._lock = threading.Lock()
        self._salt = secrets.token_bytes(16)
        self.audit_path = f"{path}.audit" if path else None

    # -- registration -------------------------------------------------

    def register_vendor(self, vendor_id: str) -> VendorRecord:
        with self._lock:
            if vendor_id in self._vendors:
                raise ProtocolError(f"vendor {vendor_id!r} already registered")
            space = 1 << self.bits
            if len(self._used_messages) >= space:
                raise RegistryExhaustedError(f"message space of {space} identities exhausted")
            while True:
                value = secrets.randbelow(space)
                if value not in self._used_messages:
                    break
            record = VendorRecord(
                vendor_id=vendor_id,
                identity_message=MessageBits(value, self.bits),
                vendor_key=secrets.token_bytes(32),
                registered_at=time.time(),
            )
            self._vendors[vendor_id] = record
            self._used_messages.add(value)
            if self.path:
                self._persist_locked()
            return record

    def record(self, vendor_id: str) -> VendorRecord:
        try:
            return self._vendors[vendor_id]
        except KeyError:
            raise UnknownVendorError(f"unknown vendor {vendor_id!r}") from None

    @property
    def vendor_ids(self) -> list[str]:
        return sorted(self._vendors)

    # -- seed issuance -------------------------------------------------

    def issue_seed(self, request: dict) -> SeedMaterial:
        request = validate_seed_request(request)
        record = self.record(str(request["vendor_id"]))
        seed = derive_seed(record.vendor_key, record.identity_message)
        self._audit(request)
        return seed

    def seed_table(self, vendor_id: str) -> list[SeedMaterial]:
        record = self.record(vendor_id)
        return build_seed_table(record.vendor_key, self.bits)

    def _audit(self, request: dict):
        if not self.audit_path:
            return
        entry = {
            "ts": time.time(),
            "vendor_id": request.get("vendor_id"),
            "model_name": request.get("model_name"),
            "model_version": request.get("model_version"),
            "nonce": request.get("nonce"),
        }
        with self._lock:
            with open(self.audit_path, "a") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
                fh.flush()

    def replay_audit(self) -> list[dict]:
        if not self.audit_path or not os.path.exists(self.audit_path):
            return []
        with open(self.audit_path) as fh:
            return [json.loads(line) for line in fh if line.strip()]

    # -- persistence ----------------------------------------------------

    def _persist_locked(self):
        if not self._secret:
            raise ProtocolError(
                f"registry persistence needs a deployment secret ({REGISTRY_SECRET_ENV})")
        fernet = _fernet_from_secret(self._secret, self._salt)
        payload = {
            "version": 1,
            "bits": self.bits,
            "kdf_salt": self._salt.hex(),
            "vendors": [
                {
                    "vendor_id": rec.vendor_id,
                    "message_value": rec.identity_message.value,
                    "key_cipher": fernet.encrypt(rec.vendor_key).decode(),
                    "registered_at": rec.registered_at,
                }
                for rec in self._vendors.values()
            ],
        }
        tmp = f"{self.path}.tmp"
        with open(tmp, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
        os.replace(tmp, self.path)

    def save(self):
        with self._lock:
            self._persist_locked()

    @classmethod
    def load(cls, path: str, secret: str | None = None) -> "TtpRegistry":
        secret = secret if secret is not None else os.environ.get(REGISTRY_SECRET_ENV)
        if not secret:
            raise ProtocolError(f"set {REGISTRY_SECRET_ENV} to open the registry")
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("version") != 1:
            raise ProtocolError(f"unsupported registry version {payload.get('version')!r}")
        reg = cls(bits=payload["bits"], path=path, secret=secret)
        reg._salt = bytes.fromhex(payload["kdf_salt"])
        fernet = _fernet_from_secret(secret, reg._salt)
        for entry in payload["vendors"]:
            try:
                key = fernet.decrypt(entry["key_cipher"].encode())
            except InvalidToken as exc:
                raise ProtocolError("registry corrupt or wrong deployment secret") from exc
            rec = VendorRecord(
                vendor_id=entry["vendor_id"],
                identity_message=MessageBits(entry["message_value"], payload["bits"]),
                vendor_key=key,
                registered_at=entry["registered_at"],
            )
            reg._vendors[rec.vendor_id] = rec
            reg._used_messages.add(rec.identity_message.value)
        return reg


# ---------------------------------------------------------------------------
# wire services (newline-delimited JSON over TCP)

class _LineHandler(socketserver.StreamRequestHandler):
    def handle(self):
        while True:
            line = self.rfile.readline()
            if not line:
                return
            line = line.strip()
            if not line:
                continue
            try:
                frame = json.loads(line)
                if not isinstance(frame, dict):
                    raise ValueError("frame must be an object")
                reply = self.server.owner.handle_frame(frame)
            except (json.JSONDecodeError, ValueError) as exc:
                reply = {"ok": False, "error": f"malformed frame: {exc}"}
            except ProtocolError as exc:
                reply = {"ok": False, "error": str(exc)}
            except Exception as exc:  # surface internal errors to the peer
                reply = {"ok": False, "error": f"internal error: {exc}"}
            self.wfile.write((json.dumps(reply, separators=(",", ":")) + "\n").encode())
            self.wfile.flush()


class _ThreadingServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class LineService:
    """Base for the line-framed TCP services; subclass fills handle_frame."""

    def __init__(self, host: str, port: int):
        self._server = _ThreadingServer((host, port), _LineHandler)
        self._server.owner = self
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def serve_forever(self):
        self._server.serve_forever()

    def shutdown(self):
        self._server.shutdown()
        self._server.server_close()
        self.on_shutdown()

    def on_shutdown(self):
        pass

    def handle_frame(self, frame: dict) -> dict:
        raise NotImplementedError


class TtpService(LineService):
    """register / seed / seed_table / adjudicate over the wire."""

    def __init__(self, registry: TtpRegistry, host: str = "127.0.0.1", port: int = 0):
        super().__init__(host, port)
        self.registry = registry

    def handle_frame(self, frame: dict) -> dict:
        op = frame.get("op")
        if op == "register":
            record = self.registry.register_vendor(str(frame["vendor_id"]))
            return {"ok": True, "message_bits": str(record.identity_message)}
        if op == "seed":
            request = {k: v for k, v in frame.items() if k != "op"}
            seed = self.registry.issue_seed(request)
            return {"ok": True, "seed_hex": seed.hex}
        if op == "seed_table":
            table = self.registry.seed_table(str(frame["vendor_id"]))
            return {"ok": True, "seeds_hex": [s.hex for s in table]}
        if op == "adjudicate":
            reports = [ExtractionReport.from_dict(r) for r in frame["reports"]]
            return {"ok": True, "adjudication": adjudicate(reports).to_dict()}
        raise ProtocolError(f"unknown op {op!r}")

    def on_shutdown(self):
        if self.registry.path:
            self.registry.save()


class VendorService(LineService):
    """A vendor's extraction endpoint: receives text plus its seed table from
    the coordinator, answers with an extraction report."""

    def __init__(self, vendor_id: str, provider, seed_table, config: WatermarkConfig,
                 host: str = "127.0.0.1", port: int = 0):
        super().__init__(host, port)
        self.vendor_id = vendor_id
        self.provider = provider
        self.config = config
        self.engine = ExtractionEngine(provider, seed_table, config)

    def handle_frame(self, frame: dict) -> dict:
        op = frame.get("op")
        if op == "hello":
            d = self.provider.descriptor
            return {"ok": True, "vendor_id": self.vendor_id,
                    "provider_id": d.provider_id, "vocab_size": d.vocab_size}
        if op == "extract":
            tokens = frame.get("tokens")
            if not isinstance(tokens, list):
                raise ProtocolError("extract frame needs a 'tokens' list")
            totals, gated = self.engine.totals_for_text([int(t) for t in tokens])
            result = _decode_totals(totals, int(gated), self.config)
            return {"ok": True,
                    "report": ExtractionReport.from_result(self.vendor_id, result).to_dict()}
        raise ProtocolError(f"unknown op {op!r}")


class LineClient:
    """Thin typed client over the shared line channel."""

    def __init__(self, endpoint: str, timeout: float = 60.0):
        from .providers import _LineChannel
        self._chan = _LineChannel(endpoint, timeout=timeout)

    def request(self, frame: dict) -> dict:
        return self._chan.request(frame)

    def close(self):
        self._chan.close()


class TtpClient(LineClient):
    def register(self, vendor_id: str) -> str:
        return self.request({"op": "register", "vendor_id": vendor_id})["message_bits"]

    def seed(self, vendor_id: str, model_name: str = "", model_version: str = "",
             nonce: str | None = None) -> SeedMaterial:
        frame = {
            "op": "seed",
            "vendor_id": vendor_id,
            "model_name": model_name,
            "model_version": model_version,
            "timestamp": time.time(),
            "nonce": nonce if nonce is not None else secrets.token_hex(8),
        }
        return SeedMaterial.from_hex(self.request(frame)["seed_hex"])

    def seed_table(self, vendor_id: str) -> list[SeedMaterial]:
        reply = self.request({"op": "seed_table", "vendor_id": vendor_id})
        return [SeedMaterial.from_hex(s) for s in reply["seeds_hex"]]

    def adjudicate(self, reports) -> dict:
        frame = {"op": "adjudicate", "reports": [r.to_dict() for r in reports]}
        return self.request(frame)["adjudication"]


class VendorClient(LineClient):
    def extract(self, tokens) -> ExtractionReport:
        reply = self.request({"op": "extract", "tokens": [int(t) for t in tokens]})
        return ExtractionReport.from_dict(reply["report"])
