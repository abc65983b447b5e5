"""Command-line entry point.

Subcommands: embed, extract, attack, serve-ttp, serve-vendor, bench.
Exit codes: 0 ok, 1 strict-mode negative verdict, 2 configuration error,
3 provider error, 4 protocol error. CREDMARK_CONFIG points at a flat JSON
config file; explicit flags override file values; the effective config is
echoed to stderr on startup.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


from . import codec, providers
from .attacks import AttackSpec, apply_attack
from .config import DecodingSpec, WatermarkConfig
from .hashing import ConfigurationError, SeedMaterial
from .protocol import (ProtocolError, TtpClient, TtpRegistry, TtpService,
                       VendorClient, VendorService, adjudicate)

CONFIG_ENV = "CREDMARK_CONFIG"

EXIT_CONFIG = 2
EXIT_PROVIDER = 3
EXIT_PROTOCOL = 4

CONFIG_KEYS = set(WatermarkConfig.__dataclass_fields__) | {
    "provider", "ttp_endpoint", "decoding",
}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def load_cli_config(path: str | None) -> dict:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config file {path}: {exc}", EXIT_CONFIG)
    unknown = set(raw) - CONFIG_KEYS
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}", EXIT_CONFIG)
    return raw


def effective_watermark_config(file_cfg: dict, args) -> WatermarkConfig:
    fields = {k: v for k, v in file_cfg.items()
              if k in WatermarkConfig.__dataclass_fields__}
    for name in ("delta", "theta", "tau", "sigma", "bits"):
        v = getattr(args, name, None)
        if v is not None:
            fields[name] = v
    try:
        return WatermarkConfig(**fields)
    except ConfigurationError as exc:
        raise CliError(str(exc), EXIT_CONFIG)


def _echo_config(cfg: WatermarkConfig, extras: dict):
    merged = {**cfg.to_dict(), **extras}
    print("config: " + json.dumps(merged, sort_keys=True), file=sys.stderr)


def _provider(spec: str | None, file_cfg: dict):
    spec = spec or file_cfg.get("provider")
    if not spec:
        raise CliError("no provider given (flag --provider or config file)", EXIT_CONFIG)
    try:
        return providers.parse_provider_spec(spec)
    except (ValueError, OSError) as exc:
        raise CliError(f"bad provider spec: {exc}", EXIT_CONFIG)
    except providers.ProviderError as exc:
        raise CliError(f"provider unavailable: {exc}", EXIT_PROVIDER)


def _read_tokens(path: str) -> list[int]:
    with open(path) as fh:
        body = fh.read().strip()
    if not body:
        return []
    if body.startswith("["):
        return [int(t) for t in json.loads(body)]
    if body.startswith("{"):
        return [int(t) for t in json.loads(body)["tokens"]]
    return [int(t) for t in body.split()]


def _decoding(args, file_cfg: dict) -> DecodingSpec:
    base = dict(file_cfg.get("decoding") or {})
    for name in ("strategy", "temperature", "top_k", "top_p", "num_beams", "rng_seed"):
        v = getattr(args, name.replace("-", "_"), None)
        if v is not None:
            base[name] = v
    try:
        return DecodingSpec.from_dict(base)
    except ConfigurationError as exc:
        raise CliError(str(exc), EXIT_CONFIG)


# ---------------------------------------------------------------------------

def cmd_embed(args) -> int:
    file_cfg = load_cli_config(args.config)
    if bool(args.seed_hex) == bool(args.ttp_endpoint or file_cfg.get("ttp_endpoint")):
        raise CliError("give exactly one of --seed-hex or --ttp-endpoint", EXIT_CONFIG)
    cfg = effective_watermark_config(file_cfg, args)
    provider = _provider(args.provider, file_cfg)
    decoding = _decoding(args, file_cfg)
    _echo_config(cfg, {"provider": provider.descriptor.provider_id,
                       "decoding": decoding.to_dict()})

    if args.seed_hex:
        if len(args.seed_hex) != 64:
            raise CliError("--seed-hex must be 64 hex characters", EXIT_CONFIG)
        try:
            seed = SeedMaterial.from_hex(args.seed_hex)
        except (ValueError, ConfigurationError) as exc:
            raise CliError(f"bad seed hex: {exc}", EXIT_CONFIG)
    else:
        endpoint = args.ttp_endpoint or file_cfg.get("ttp_endpoint")
        if not args.vendor:
            raise CliError("--ttp-endpoint needs --vendor", EXIT_CONFIG)
        try:
            client = TtpClient(endpoint)
            seed = client.seed(args.vendor,
                               model_name=provider.descriptor.provider_id,
                               model_version="1")
            client.close()
        except providers.ProviderError as exc:
            raise CliError(f"seed request failed: {exc}", EXIT_PROTOCOL)

    prompt = _read_tokens(args.prompt_file) if args.prompt_file else []
    try:
        tokens = codec.generate(provider, prompt, seed, cfg, decoding, args.length)
    except providers.ProviderError as exc:
        raise CliError(f"provider failed: {exc}", EXIT_PROVIDER)
    codec.save_artifact(args.out, prompt + tokens, provider.descriptor.provider_id,
                        cfg, decoding, prompt_len=len(prompt), bits=cfg.bits)
    if args.json:
        print(json.dumps({"out": args.out, "tokens": len(tokens)}))
    else:
        print(f"wrote {len(tokens)} watermarked tokens to {args.out}", file=sys.stderr)
    return 0


def _result_payload(result, spans=None) -> dict:
    payload = result.to_dict()
    payload["verdict"] = "watermarked" if result.watermarked else "none"
    if spans is not None:
        payload["spans"] = [list(s) for s in spans]
    return payload


def cmd_extract(args) -> int:
    file_cfg = load_cli_config(args.config)
    cfg = effective_watermark_config(file_cfg, args)
    if (args.window is None) != (args.stride is None):
        raise CliError("--window and --stride go together", EXIT_CONFIG)

    artifact = codec.load_artifact(args.infile)
    tokens = artifact["tokens"][artifact["prompt_len"]:] if args.skip_prompt else artifact["tokens"]

    endpoint = args.ttp_endpoint or file_cfg.get("ttp_endpoint")
    if args.vendor_endpoints:
        # joint flow: each vendor service extracts, the coordinator adjudicates
        if not endpoint:
            raise CliError("--vendor-endpoints needs --ttp-endpoint", EXIT_CONFIG)
        try:
            reports = []
            for ep in args.vendor_endpoints.split(","):
                vc = VendorClient(ep.strip())
                reports.append(vc.extract(tokens))
                vc.close()
            tc = TtpClient(endpoint)
            adjudication = tc.adjudicate(reports)
            tc.close()
        except providers.ProviderError as exc:
            raise CliError(f"joint extraction failed: {exc}", EXIT_PROTOCOL)
        print(json.dumps(adjudication if args.json else adjudication, indent=None))
        negative = adjudication["attributed_vendor_id"] == "human/none"
        return 1 if (args.strict and negative) else 0

    provider = _provider(args.provider, file_cfg)
    _echo_config(cfg, {"provider": provider.descriptor.provider_id})
    if args.seed_table_file:
        with open(args.seed_table_file) as fh:
            table = [SeedMaterial.from_hex(s) for s in json.load(fh)]
    elif endpoint:
        if not args.vendor:
            raise CliError("--ttp-endpoint needs --vendor", EXIT_CONFIG)
        try:
            client = TtpClient(endpoint)
            table = client.seed_table(args.vendor)
            client.close()
        except providers.ProviderError as exc:
            raise CliError(f"seed table fetch failed: {exc}", EXIT_PROTOCOL)
    else:
        raise CliError("give --seed-table-file or --ttp-endpoint", EXIT_CONFIG)

    try:
        if args.window is not None:
            sw = codec.sliding_window_extract(provider, tokens, table, cfg,
                                              window=args.window, stride=args.stride)
            payload = _result_payload(sw.result, spans=sw.spans)
        else:
            result = codec.extract(provider, tokens, table, cfg)
            payload = _result_payload(result)
    except providers.ProviderError as exc:
        raise CliError(f"provider failed: {exc}", EXIT_PROVIDER)
    except codec.NoGatedStepsError as exc:
        raise CliError(f"undetectable input: {exc}", EXIT_PROVIDER)

    print(json.dumps(payload))
    return 1 if (args.strict and payload["verdict"] != "watermarked") else 0


def cmd_attack(args) -> int:
    file_cfg = load_cli_config(args.config)
    artifact = codec.load_artifact(args.infile)
    tokens = artifact["tokens"]
    spec = AttackSpec(args.kind, args.ratio, args.rng_seed)
    provider = None
    tokenizer = None
    human = None
    if args.kind == "substitution":
        provider = _provider(args.provider, file_cfg)
    if args.kind == "homoglyph":
        ngram, tokenizer = providers.bundled_ngram()
    if args.kind == "copy_paste":
        if not args.human_file:
            raise CliError("copy_paste needs --human-file", EXIT_CONFIG)
        human = _read_tokens(args.human_file)
    try:
        out = apply_attack(spec, tokens, provider=provider, tokenizer=tokenizer,
                           human_source=human)
    except Exception as exc:
        raise CliError(f"attack failed: {exc}", EXIT_CONFIG)
    if args.kind == "copy_paste":
        out, span = out
    else:
        span = None
    codec.save_artifact(args.out, out, artifact["provider_id"], artifact["config"],
                        artifact["decoding"], prompt_len=0, bits=artifact["b"])
    if args.json:
        print(json.dumps({"out": args.out, "tokens": len(out),
                          "span": list(span) if span else None}))
    return 0


def cmd_serve_ttp(args) -> int:
    host, _, port = args.listen.rpartition(":")
    if args.registry_file and os.path.exists(args.registry_file):
        registry = TtpRegistry.load(args.registry_file)
    else:
        registry = TtpRegistry(bits=args.bits or 20, path=args.registry_file)
    service = TtpService(registry, host or "127.0.0.1", int(port))
    print(f"ttp listening on {service.address[0]}:{service.address[1]}", file=sys.stderr)
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        service.shutdown()
    return 0


def cmd_serve_vendor(args) -> int:
    file_cfg = load_cli_config(args.config)
    cfg = effective_watermark_config(file_cfg, args)
    provider = _provider(args.provider, file_cfg)
    if args.seed_table_file:
        with open(args.seed_table_file) as fh:
            table = [SeedMaterial.from_hex(s) for s in json.load(fh)]
    elif args.ttp_endpoint:
        client = TtpClient(args.ttp_endpoint)
        table = client.seed_table(args.vendor_id)
        client.close()
    else:
        raise CliError("give --seed-table-file or --ttp-endpoint", EXIT_CONFIG)
    host, _, port = args.listen.rpartition(":")
    service = VendorService(args.vendor_id, provider, table, cfg,
                            host or "127.0.0.1", int(port))
    print(f"vendor {args.vendor_id} listening on "
          f"{service.address[0]}:{service.address[1]}", file=sys.stderr)
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        service.shutdown()
    return 0


def cmd_bench(args) -> int:
    from . import harness
    file_cfg = load_cli_config(args.config)
    decoding = _decoding(args, file_cfg)
    grid = harness.ExperimentGrid(
        bits_values=tuple(int(b) for b in args.bits_values.split(",")),
        delta_values=tuple(float(d) for d in args.deltas.split(",")),
        length=args.length,
        trials=args.trials,
        provider_spec=args.provider or file_cfg.get("provider", "synthetic:"),
        decoding=decoding,
        rng_seed=args.rng_seed,
    )
    tables = {}
    if args.kind in ("success", "all"):
        tables["success_grid"] = harness.run_success_grid(grid)
    if args.kind in ("robustness", "all"):
        atk_ratio = args.attack_ratio
        grid2 = harness.ExperimentGrid(
            bits_values=grid.bits_values, delta_values=grid.delta_values,
            length=grid.length, trials=grid.trials, provider_spec=grid.provider_spec,
            decoding=grid.decoding, rng_seed=grid.rng_seed,
            attacks=(AttackSpec("none", 0.0), AttackSpec("deletion", atk_ratio),
                     AttackSpec("substitution", atk_ratio)),
        )
        tables["robustness"] = harness.run_robustness_table(grid2)
    if args.kind in ("identification",):
        outcome = harness.run_identification(rng_seed=args.rng_seed, bits=min(grid.bits_values))
        payload = {"per_class": outcome.per_class, "runtime": outcome.runtime}
        os.makedirs(args.out_dir, exist_ok=True)
        with open(os.path.join(args.out_dir, "identification.json"), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
        print(json.dumps(payload["per_class"], indent=2, sort_keys=True))
        return 0
    written = harness.emit_report(tables, args.out_dir)
    print(json.dumps(written, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="credmark",
                                     description="multi-bit text watermarking toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--json", action="store_true", help="machine-readable stdout")
        for name in ("delta", "theta", "tau", "sigma"):
            p.add_argument(f"--{name}", type=float, default=None)
        p.add_argument("--bits", type=int, default=None)

    p = sub.add_parser("embed", help="generate watermarked tokens")
    add_common(p)
    p.add_argument("--provider", default=None)
    p.add_argument("--seed-hex", default=None)
    p.add_argument("--ttp-endpoint", default=None)
    p.add_argument("--vendor", default=None)
    p.add_argument("--prompt-file", default=None)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--top-k", dest="top_k", type=int, default=None)
    p.add_argument("--top-p", dest="top_p", type=float, default=None)
    p.add_argument("--num-beams", dest="num_beams", type=int, default=None)
    p.add_argument("--rng-seed", dest="rng_seed", type=int, default=None)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("extract", help="recover the embedded message")
    add_common(p)
    p.add_argument("--provider", default=None)
    p.add_argument("--seed-table-file", default=None)
    p.add_argument("--ttp-endpoint", default=None)
    p.add_argument("--vendor", default=None)
    p.add_argument("--vendor-endpoints", default=None,
                   help="comma-separated vendor services for joint adjudication")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--skip-prompt", action="store_true",
                   help="drop the prompt tokens recorded in the artifact")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("attack", help="perturb a watermarked artifact")
    add_common(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", required=True,
                   choices=["deletion", "substitution", "homoglyph", "copy_paste"])
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--rng-seed", dest="rng_seed", type=int, default=0)
    p.add_argument("--provider", default=None)
    p.add_argument("--human-file", default=None)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("serve-ttp", help="run the coordinator service")
    add_common(p)
    p.add_argument("--listen", required=True)
    p.add_argument("--registry-file", default=None)
    p.set_defaults(func=cmd_serve_ttp)

    p = sub.add_parser("serve-vendor", help="run a vendor extraction service")
    add_common(p)
    p.add_argument("--listen", required=True)
    p.add_argument("--vendor-id", required=True)
    p.add_argument("--provider", default=None)
    p.add_argument("--seed-table-file", default=None)
    p.add_argument("--ttp-endpoint", default=None)
    p.set_defaults(func=cmd_serve_vendor)

    p = sub.add_parser("bench", help="run desk-scale experiments")
    add_common(p)
    p.add_argument("--kind", default="success",
                   choices=["success", "robustness", "identification", "all"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--provider", default=None)
    p.add_argument("--bits-values", default="8")
    p.add_argument("--deltas", default="1.5")
    p.add_argument("--length", type=int, default=120)
    p.add_argument("--trials", type=int, default=30)
    p.add_argument("--attack-ratio", type=float, default=0.2)
    p.add_argument("--rng-seed", dest="rng_seed", type=int, default=0)
    p.add_argument("--strategy", default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--top-k", dest="top_k", type=int, default=None)
    p.add_argument("--top-p", dest="top_p", type=float, default=None)
    p.add_argument("--num-beams", dest="num_beams", type=int, default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except providers.ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER


if __name__ == "__main__":
    sys.exit(main())
