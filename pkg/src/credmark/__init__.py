"""Multi-bit text watermarking with seeded logit biasing, seed-table
extraction, and a coordinator-mediated attribution protocol."""

__version__ = "0.1.0"

from .config import DecodingSpec, WatermarkConfig
from .hashing import (MessageBits, SeedMaterial, build_seed_table, derive_seed,
                      shuffle, step_key)
from .partition import (StepPartition, apply_bias, build_partition, entropy,
                        message_margin_score, softmax, watermark_channel_prob)
from .codec import (CounterMatrix, ExtractionEngine, ExtractionResult, bpw,
                    count_matrix, decode, extract, generate,
                    mean_logpw_statistic, sliding_window_extract)
from .providers import (ExternalProvider, NGramModel, NGramProvider,
                        ProviderDescriptor, SyntheticProvider, Tokenizer,
                        bundled_ngram, ngram_train, parse_provider_spec)
from .protocol import (Adjudication, ExtractionReport, TtpRegistry, VendorRecord,
                       adjudicate, vendor_extract)
from .attacks import (AttackSpec, attack_copy_paste, attack_delete,
                      attack_homoglyph, attack_substitute)

__all__ = [name for name in dir() if not name.startswith("_")]
