import os

import pytest

os.environ.setdefault("CREDMARK_REGISTRY_SECRET", "test-deployment-secret")

from credmark import _kernels  # noqa: E402


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # compile (or load from cache) outside any timed region
    _kernels.warm_kernels()


@pytest.fixture(scope="session")
def ngram_stack():
    """(provider, tokenizer) for the bundled order-3 realism stack."""
    from credmark.providers import bundled_ngram
    return bundled_ngram(order=3, vocab_size=1024)


@pytest.fixture(scope="session")
def bigram_stack():
    """(provider, tokenizer) with single-token context; exact and fast."""
    from credmark.providers import bundled_ngram
    return bundled_ngram(order=2, vocab_size=1024)
