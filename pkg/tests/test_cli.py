"""Command-line behavior: exit codes, offline round trips, services."""

import json
import os
import socket
import subprocess
import sys
import time

import numpy as np
import pytest

from credmark.cli import main
from credmark.hashing import build_seed_table

VK = b"\x55" * 32
SEED_HEX = "ab" * 32


def run_cli(args, capsys):
    code = main(args)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture()
def seed_table_file(tmp_path):
    table = build_seed_table(VK, 6)
    path = tmp_path / "table.json"
    path.write_text(json.dumps([s.hex for s in table]))
    return str(path)


class TestExitCodes:
    def test_embed_requires_exactly_one_seed_source(self, tmp_path, capsys):
        code, _, err = run_cli(["embed", "--provider", "synthetic:vocab=64",
                                "--length", "5", "--out", str(tmp_path / "x.json")],
                               capsys)
        assert code == 2
        code, _, _ = run_cli(["embed", "--provider", "synthetic:vocab=64",
                              "--seed-hex", SEED_HEX, "--ttp-endpoint", "h:1",
                              "--length", "5", "--out", str(tmp_path / "x.json")],
                             capsys)
        assert code == 2

    def test_seed_hex_length_checked(self, tmp_path, capsys):
        code, _, err = run_cli(["embed", "--provider", "synthetic:vocab=64",
                                "--seed-hex", "ab" * 31 + "a",
                                "--length", "5", "--out", str(tmp_path / "x.json")],
                               capsys)
        assert code == 2
        assert "64 hex" in err

    def test_window_without_stride(self, tmp_path, seed_table_file, capsys):
        art = tmp_path / "a.json"
        code, _, _ = run_cli(["embed", "--provider", "synthetic:vocab=64",
                              "--seed-hex", SEED_HEX, "--length", "30",
                              "--out", str(art)], capsys)
        assert code == 0
        code, _, _ = run_cli(["extract", "--provider", "synthetic:vocab=64",
                              "--seed-table-file", seed_table_file,
                              "--in", str(art), "--window", "10"], capsys)
        assert code == 2

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"delta": 1.5, "mystery": 1}))
        code, _, err = run_cli(["embed", "--config", str(cfg),
                                "--provider", "synthetic:vocab=64",
                                "--seed-hex", SEED_HEX, "--length", "5",
                                "--out", str(tmp_path / "x.json")], capsys)
        assert code == 2
        assert "unknown config keys" in err


class TestOfflineRoundTrip:
    def test_embed_then_extract_recovers_message(self, tmp_path, capsys):
        # seed index 9 of a width-6 table under VK
        from credmark.hashing import MessageBits, derive_seed
        seed = derive_seed(VK, MessageBits(9, 6))
        table = build_seed_table(VK, 6)
        table_path = tmp_path / "table.json"
        table_path.write_text(json.dumps([s.hex for s in table]))
        art = tmp_path / "wm.json"
        code, _, _ = run_cli(["embed", "--provider", "synthetic:vocab=256,seed=2",
                              "--bits", "6", "--seed-hex", seed.hex,
                              "--length", "120", "--out", str(art), "--json"],
                             capsys)
        assert code == 0
        code, out, _ = run_cli(["extract", "--provider", "synthetic:vocab=256,seed=2",
                                "--bits", "6", "--seed-table-file", str(table_path),
                                "--in", str(art), "--json"], capsys)
        assert code == 0
        payload = json.loads(out.strip())
        assert payload["verdict"] == "watermarked"
        assert payload["seed_index"] == 9
        assert payload["message_bits"] == "001001"

    def test_human_text_verdict_none_and_strict_exit(self, tmp_path, seed_table_file, capsys):
        rng = np.random.default_rng(0)
        art = tmp_path / "human.json"
        art.write_text(json.dumps({
            "tokens": rng.integers(0, 64, size=150).tolist(),
            "provider_id": "x", "config": {"bits": 6}, "decoding": {},
            "prompt_len": 0, "b": 6,
        }))
        code, out, _ = run_cli(["extract", "--provider", "synthetic:vocab=64",
                                "--bits", "6", "--seed-table-file", seed_table_file,
                                "--in", str(art), "--json"], capsys)
        assert code == 0
        assert json.loads(out.strip())["verdict"] == "none"
        code, _, _ = run_cli(["extract", "--provider", "synthetic:vocab=64",
                              "--bits", "6", "--seed-table-file", seed_table_file,
                              "--in", str(art), "--strict"], capsys)
        assert code == 1

    def test_attack_subcommand(self, tmp_path, capsys):
        art = tmp_path / "wm.json"
        run_cli(["embed", "--provider", "synthetic:vocab=64", "--seed-hex",
                 SEED_HEX, "--length", "50", "--out", str(art)], capsys)
        out_art = tmp_path / "attacked.json"
        code, _, _ = run_cli(["attack", "--in", str(art), "--out", str(out_art),
                              "--kind", "deletion", "--ratio", "0.2"], capsys)
        assert code == 0
        attacked = json.loads(out_art.read_text())
        assert len(attacked["tokens"]) == 40

    def test_bench_success(self, tmp_path, capsys):
        code, out, _ = run_cli(["bench", "--kind", "success", "--out-dir",
                                str(tmp_path / "report"), "--bits-values", "4",
                                "--length", "40", "--trials", "4",
                                "--provider", "synthetic:vocab=64"], capsys)
        assert code == 0
        assert (tmp_path / "report" / "success_grid.csv").exists()


def _wait_port(host, port, timeout=10.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        try:
            socket.create_connection((host, port), timeout=0.5).close()
            return True
        except OSError:
            time.sleep(0.05)
    return False


class TestServeSmoke:
    def test_ttp_server_subprocess(self, tmp_path):
        env = dict(os.environ, CREDMARK_REGISTRY_SECRET="s3cret")
        proc = subprocess.Popen(
            [sys.executable, "-m", "credmark.cli", "serve-ttp",
             "--listen", "127.0.0.1:39731", "--bits", "6",
             "--registry-file", str(tmp_path / "reg.json")],
            env=env, stderr=subprocess.PIPE, text=True)
        try:
            assert _wait_port("127.0.0.1", 39731)
            from credmark.protocol import TtpClient
            client = TtpClient("127.0.0.1:39731")
            bits = client.register("acme")
            assert len(bits) == 6
            seed = client.seed("acme")
            table = client.seed_table("acme")
            assert table[int(bits, 2)] == seed
            client.close()
        finally:
            proc.terminate()
            proc.wait(timeout=10)


class TestProviderErrors:
    def test_dead_external_provider_exit_code(self, tmp_path, capsys):
        code, _, err = run_cli(["embed", "--provider", "external:127.0.0.1:1",
                                "--seed-hex", SEED_HEX, "--length", "5",
                                "--out", str(tmp_path / "x.json")], capsys)
        assert code == 3


class TestConfigFile:
    def test_env_config_supplies_provider_and_params(self, tmp_path, capsys, monkeypatch):
        cfg = tmp_path / "cm.json"
        cfg.write_text(json.dumps({"provider": "synthetic:vocab=64", "bits": 6,
                                   "delta": 2.5}))
        monkeypatch.setenv("CREDMARK_CONFIG", str(cfg))
        art = tmp_path / "x.json"
        code, _, err = run_cli(["embed", "--seed-hex", SEED_HEX,
                                "--length", "10", "--out", str(art)], capsys)
        assert code == 0
        saved = json.loads(art.read_text())
        assert saved["config"]["delta"] == 2.5
        assert saved["config"]["bits"] == 6
        # flags still override file values
        code, _, err = run_cli(["embed", "--seed-hex", SEED_HEX, "--delta", "0.5",
                                "--length", "10", "--out", str(art)], capsys)
        assert code == 0
        assert json.loads(art.read_text())["config"]["delta"] == 0.5
