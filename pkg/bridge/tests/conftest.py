import json
import os
import subprocess
import sys
import time
import socket

import pytest


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """A small randomly initialized causal LM with a word-level tokenizer,
    built locally so the suite runs without model downloads."""
    import torch
    from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast
    from tokenizers import Tokenizer
    from tokenizers.models import WordLevel
    from tokenizers.pre_tokenizers import Whitespace

    out = tmp_path_factory.mktemp("tiny-model")
    torch.manual_seed(1234)
    config = GPT2Config(vocab_size=256, n_positions=256, n_embd=64,
                        n_layer=2, n_head=2, bos_token_id=0, eos_token_id=0)
    model = GPT2LMHeadModel(config)
    model.eval()
    model.save_pretrained(out)

    words = {"<unk>": 0, "hello": 1, "world": 2}
    for i in range(3, 256):
        words[f"w{i:03d}"] = i
    tok = Tokenizer(WordLevel(vocab=words, unk_token="<unk>"))
    tok.pre_tokenizer = Whitespace()
    fast = PreTrainedTokenizerFast(tokenizer_object=tok, unk_token="<unk>",
                                   bos_token="<unk>", eos_token="<unk>")
    fast.save_pretrained(out)
    return str(out)


def wait_port(host: str, port: int, timeout: float = 60.0) -> bool:
    deadline = time.time() + timeout
    while time.time() < deadline:
        try:
            socket.create_connection((host, port), timeout=0.5).close()
            return True
        except OSError:
            time.sleep(0.1)
    return False


@pytest.fixture(scope="session")
def bridge_tcp(tiny_model_dir):
    """The bridge as a real subprocess on a TCP port."""
    port = 39917
    proc = subprocess.Popen(
        [sys.executable, "-m", "credmark_bridge.server", "--model", tiny_model_dir,
         "--listen", f"127.0.0.1:{port}", "--max-context", "128"],
        stderr=subprocess.PIPE, text=True,
        env=dict(os.environ, HF_HUB_OFFLINE="1", TRANSFORMERS_OFFLINE="1"),
    )
    if not wait_port("127.0.0.1", port):
        proc.terminate()
        raise RuntimeError(f"bridge did not come up: {proc.stderr.read()[:500]}")
    yield f"127.0.0.1:{port}"
    proc.terminate()
    proc.wait(timeout=10)
