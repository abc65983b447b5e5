"""Desk-scale experiment harness: success grids, robustness tables,
multi-vendor identification, and report emission.

Every run is a pure function of (grid, rng_seed); trial seeds and messages
derive from one seed sequence, and CSV output is emitted with sorted keys
and fixed float formatting so identical inputs give byte-identical files.
Timing is reported separately (timings.csv) to keep the result files
deterministic. Dataset provenance is stamped "desk-synthetic" to keep these
numbers from being mistaken for full-scale runs.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacks import AttackSpec, apply_attack
from .codec import ExtractionEngine, _decode_totals, generate
from .config import DecodingSpec, WatermarkConfig
from .hashing import MessageBits, derive_seed, build_seed_table
from .protocol import Adjudication, ExtractionReport, TtpRegistry, adjudicate

DATASET_TAG = "desk-synthetic"


def _rng(*parts) -> np.random.Generator:
    """Deterministic generator from mixed int/str labels."""
    import hashlib
    ints = []
    for p in parts:
        if isinstance(p, str):
            ints.append(int.from_bytes(hashlib.sha256(p.encode()).digest()[:8], "big"))
        else:
            ints.append(int(p) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(ints)))


@dataclass(frozen=True)
class ExperimentGrid:
    bits_values: tuple[int, ...] = (8,)
    delta_values: tuple[float, ...] = (1.5,)
    length: int = 200
    trials: int = 50
    provider_spec: str = "synthetic:vocab=1024,seed=0"
    decoding: DecodingSpec = field(default_factory=DecodingSpec)
    attacks: tuple[AttackSpec, ...] = ()
    rate_cells: tuple[tuple[int, int], ...] | None = None   # (bits, length) pairs
    rng_seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass
class MetricRow:
    cell: dict
    success_rate: float
    mean_posterior: float
    tpr: float
    fpr: float
    runtime: float

    def __post_init__(self):
        for name in ("success_rate", "mean_posterior", "tpr", "fpr"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name}={v} outside [0, 1]")


def _vendor_key(rng: np.random.Generator) -> bytes:
    return rng.bytes(32)


def _trial_prompts(rng: np.random.Generator, vocab: int, trials: int, length: int = 2):
    return [rng.integers(0, vocab, size=length).tolist() for _ in range(trials)]


def run_cell(provider, vendor_key: bytes, config: WatermarkConfig,
             decoding: DecodingSpec, length: int, trials: int,
             rng: np.random.Generator, attack: AttackSpec | None = None,
             tokenizer=None, human_source_fn=None,
             engine: ExtractionEngine | None = None) -> MetricRow:
    """Generate, optionally attack, extract, and score one grid cell."""
    t0 = time.perf_counter()
    table = build_seed_table(vendor_key, config.bits)
    if engine is None:
        engine = ExtractionEngine(provider, table, config)
    vocab = provider.descriptor.vocab_size
    messages = [int(rng.integers(0, 1 << config.bits)) for _ in range(trials)]
    prompts = _trial_prompts(rng, vocab, trials)
    texts = []
    for m, prompt in zip(messages, prompts):
        seed = derive_seed(vendor_key, MessageBits(m, config.bits))
        dec = DecodingSpec(**{**decoding.to_dict(), "rng_seed": int(rng.integers(2 ** 62))})
        text = generate(provider, prompt, seed, config, dec, length)
        if attack is not None and attack.kind != "none":
            attacked = apply_attack(
                attack, text, provider=provider, tokenizer=tokenizer,
                human_source=human_source_fn(rng) if human_source_fn else None)
            text = attacked[0] if attack.kind == "copy_paste" else attacked
        texts.append(text)
    totals, gated = engine.totals_for_texts(texts)
    successes = 0
    posteriors = []
    detected = 0
    for i, m in enumerate(messages):
        res = _decode_totals(totals[i], int(gated[i]), config)
        successes += int(res.seed_index == m)
        posteriors.append(res.posterior)
        detected += int(res.watermarked and res.posterior >= 0.5)
    runtime = time.perf_counter() - t0
    return MetricRow(
        cell={
            "dataset": DATASET_TAG,
            "provider": provider.descriptor.provider_id,
            "bits": config.bits,
            "delta": config.delta,
            "length": length,
            "trials": trials,
            "bpw": config.bits / length,
            "attack": attack.kind if attack else "none",
            "attack_ratio": attack.ratio if attack else 0.0,
        },
        success_rate=successes / trials,
        mean_posterior=float(np.mean(posteriors)),
        tpr=detected / trials,
        fpr=0.0,
        runtime=runtime,
    )


def run_success_grid(grid: ExperimentGrid, provider=None) -> list[MetricRow]:
    """Exact-recovery success over the (bits x delta) grid."""
    from .providers import parse_provider_spec
    if provider is None:
        provider = parse_provider_spec(grid.provider_spec)
    rows = []
    for bits in grid.bits_values:
        for delta in grid.delta_values:
            rng = _rng(grid.rng_seed, bits, int(delta * 1000))
            config = WatermarkConfig(bits=bits, delta=delta)
            key = _vendor_key(rng)
            rows.append(run_cell(provider, key, config, grid.decoding,
                                 grid.length, grid.trials, rng))
    return rows


def run_robustness_table(grid: ExperimentGrid, provider=None, tokenizer=None,
                         human_source_fn=None) -> list[MetricRow]:
    """Success under each attack at each (bits, length) embedding rate.

    Rows follow a bits-per-token by attack layout; a ratio-0 attack
    reproduces the clean column exactly.
    """
    from .providers import parse_provider_spec
    if provider is None:
        provider = parse_provider_spec(grid.provider_spec)
    rows = []
    cells = grid.rate_cells or tuple((b, grid.length) for b in grid.bits_values)
    engines: dict[int, tuple[bytes, ExtractionEngine]] = {}
    for bits, length in cells:
        config = WatermarkConfig(bits=bits, delta=grid.delta_values[0])
        if bits not in engines:
            rng = _rng(grid.rng_seed, bits)
            key = _vendor_key(rng)
            engines[bits] = (key, ExtractionEngine(provider, build_seed_table(key, bits), config))
        key, engine = engines[bits]
        for attack in grid.attacks or (AttackSpec("none", 0.0),):
            cell_rng = _rng(grid.rng_seed, bits, length, attack.kind, attack.rng_seed)
            rows.append(run_cell(provider, key, config, grid.decoding, length,
                                 grid.trials, cell_rng, attack=attack,
                                 tokenizer=tokenizer, human_source_fn=human_source_fn,
                                 engine=engine))
    return rows


@dataclass
class IdentificationOutcome:
    per_class: dict            # class -> {"tpr_single", "fpr_single", "tpr_joint", "fpr_joint"}
    single_rows: list
    joint_rows: list
    runtime: float


def run_identification(n_vendors: int = 3, texts_per_vendor: int = 250,
                       human_texts: int = 250, bits: int = 8, length: int = 200,
                       vocab: int = 1024, rng_seed: int = 0,
                       config: WatermarkConfig | None = None,
                       attack: AttackSpec | None = None,
                       human_provider=None) -> IdentificationOutcome:
    """Mixed-corpus identification, single-vendor vs joint adjudication.

    Each vendor runs its own provider; human texts come from an unrelated
    source. Single-party mode scores each vendor's self-verification; joint
    mode routes every text through all vendors and lets the coordinator
    pick the best passing report.
    """
    from .providers import SyntheticProvider, bundled_ngram
    t0 = time.perf_counter()
    config = config or WatermarkConfig(bits=bits)
    registry = TtpRegistry(bits=bits)
    rng = np.random.Generator(np.random.PCG64(rng_seed))

    vendors = []
    for v in range(n_vendors):
        vid = f"vendor-{chr(ord('a') + v)}"
        registry.register_vendor(vid)
        provider = SyntheticProvider(vocab_size=vocab, gen_seed=1000 + v)
        table = registry.seed_table(vid)
        vendors.append({
            "vendor_id": vid,
            "provider": provider,
            "table": table,
            "engine": ExtractionEngine(provider, table, config),
            "message": registry.record(vid).identity_message.value,
        })

    # corpus: (tokens, true_class)
    corpus: list[tuple[list[int], str]] = []
    for v in vendors:
        seed = derive_seed(registry.record(v["vendor_id"]).vendor_key,
                           registry.record(v["vendor_id"]).identity_message)
        for _ in range(texts_per_vendor):
            dec = DecodingSpec(rng_seed=int(rng.integers(2 ** 62)))
            prompt = rng.integers(0, vocab, size=2).tolist()
            text = generate(v["provider"], prompt, seed, config, dec, length)
            if attack is not None and attack.kind != "none":
                text = apply_attack(
                    AttackSpec(attack.kind, attack.ratio, int(rng.integers(2 ** 62))),
                    text, provider=v["provider"])
            corpus.append((text, v["vendor_id"]))
    if human_provider is None:
        human_provider, _ = bundled_ngram(order=3, vocab_size=vocab)
    hrng = np.random.Generator(np.random.PCG64(rng_seed + 1))
    for _ in range(human_texts):
        text = human_provider.model.sample_sequence(length, hrng)
        corpus.append((text, "human"))

    # per-vendor batched extraction over the whole corpus
    all_texts = [tokens for tokens, _ in corpus]
    reports_by_vendor: dict[str, list[ExtractionReport]] = {}
    for v in vendors:
        totals, gated = v["engine"].totals_for_texts(all_texts)
        reports = []
        for i in range(len(all_texts)):
            res = _decode_totals(totals[i], int(gated[i]), config)
            reports.append(ExtractionReport.from_result(v["vendor_id"], res))
        reports_by_vendor[v["vendor_id"]] = reports

    classes = [v["vendor_id"] for v in vendors] + ["human"]
    truth = [cls for _, cls in corpus]

    # single-party: vendor v claims a text iff its own report passes both
    # gates and decodes v's identity message
    single_claims: dict[str, list[bool]] = {}
    for v in vendors:
        claims = []
        for rep in reports_by_vendor[v["vendor_id"]]:
            passes = (rep.posterior >= 0.5 and rep.pvalue < config.pvalue_threshold
                      and rep.top_seed_index == v["message"])
            claims.append(passes)
        single_claims[v["vendor_id"]] = claims

    # joint: coordinator adjudicates the three reports per text
    joint_attr = []
    for i in range(len(corpus)):
        reports = [reports_by_vendor[v["vendor_id"]][i] for v in vendors]
        adj = adjudicate(reports, pvalue_threshold=config.pvalue_threshold)
        winner = adj.attributed_vendor_id
        if winner != Adjudication.NONE:
            v = next(v for v in vendors if v["vendor_id"] == winner)
            if adj.reports and v["message"] != [r for r in adj.reports
                                                if r.vendor_id == winner][0].top_seed_index:
                winner = Adjudication.NONE
        joint_attr.append("human" if winner == Adjudication.NONE else winner)

    per_class = {}
    for cls in classes:
        idx_pos = [i for i, t in enumerate(truth) if t == cls]
        idx_neg = [i for i, t in enumerate(truth) if t != cls]
        if cls == "human":
            tpr_single = float(np.mean([
                not any(single_claims[v["vendor_id"]][i] for v in vendors)
                for i in idx_pos]))
            fpr_single = float(np.mean([
                not any(single_claims[v["vendor_id"]][i] for v in vendors)
                for i in idx_neg]))
            tpr_joint = float(np.mean([joint_attr[i] == "human" for i in idx_pos]))
            fpr_joint = float(np.mean([joint_attr[i] == "human" for i in idx_neg]))
        else:
            tpr_single = float(np.mean([single_claims[cls][i] for i in idx_pos]))
            fpr_single = float(np.mean([single_claims[cls][i] for i in idx_neg]))
            tpr_joint = float(np.mean([joint_attr[i] == cls for i in idx_pos]))
            fpr_joint = float(np.mean([joint_attr[i] == cls for i in idx_neg]))
        per_class[cls] = {
            "tpr_single": tpr_single, "fpr_single": fpr_single,
            "tpr_joint": tpr_joint, "fpr_joint": fpr_joint,
        }

    runtime = time.perf_counter() - t0
    single_rows = [{"class": c, "mode": "single",
                    "tpr": per_class[c]["tpr_single"], "fpr": per_class[c]["fpr_single"]}
                   for c in classes]
    joint_rows = [{"class": c, "mode": "joint",
                   "tpr": per_class[c]["tpr_joint"], "fpr": per_class[c]["fpr_joint"]}
                  for c in classes]
    return IdentificationOutcome(per_class=per_class, single_rows=single_rows,
                                 joint_rows=joint_rows, runtime=runtime)


# ---------------------------------------------------------------------------
# report emission

def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def rows_to_csv(rows: list[MetricRow], path):
    """Deterministic CSV: flattened cells, sorted columns, runtime excluded
    (it goes to the timings sidecar)."""
    flat = []
    for row in rows:
        d = dict(row.cell)
        d.update(success_rate=row.success_rate, mean_posterior=row.mean_posterior,
                 tpr=row.tpr, fpr=row.fpr)
        flat.append(d)
    cols = sorted({k for d in flat for k in d})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for d in flat:
            writer.writerow([_fmt(d.get(c, "")) for c in cols])


def timings_to_csv(rows: list[MetricRow], path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bits", "delta", "attack", "runtime_s"])
        for row in rows:
            writer.writerow([row.cell["bits"], row.cell["delta"],
                             row.cell["attack"], f"{row.runtime:.3f}"])


def emit_report(tables: dict[str, list[MetricRow]], out_dir) -> dict:
    """Write CSVs and plots plus an index page referencing them."""
    if not tables:
        raise ValueError("no tables to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {"csv": [], "png": []}
    for name, rows in tables.items():
        csv_path = out / f"{name}.csv"
        rows_to_csv(rows, csv_path)
        timings_to_csv(rows, out / f"{name}.timings.csv")
        written["csv"].append(csv_path.name)

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for name, rows in tables.items():
        bpws = sorted({r.cell["bpw"] for r in rows})
        if len(bpws) > 1:
            fig, ax = plt.subplots(figsize=(5, 3.5))
            attacks = sorted({r.cell["attack"] for r in rows})
            for atk in attacks:
                pts = sorted((r.cell["bpw"], r.success_rate)
                             for r in rows if r.cell["attack"] == atk)
                ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=atk)
            ax.set_xlabel("bits per token")
            ax.set_ylabel("success rate")
            ax.set_ylim(0, 1.05)
            ax.legend(fontsize=7)
            fig.tight_layout()
            png = out / f"{name}_success_vs_bpw.png"
            fig.savefig(png, dpi=120)
            plt.close(fig)
            written["png"].append(png.name)
        deltas = sorted({r.cell["delta"] for r in rows})
        if len(deltas) > 1:
            fig, ax = plt.subplots(figsize=(5, 3.5))
            for bits in sorted({r.cell["bits"] for r in rows}):
                pts = sorted((r.cell["delta"], r.success_rate)
                             for r in rows if r.cell["bits"] == bits)
                ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="s",
                        label=f"b={bits}")
            ax.set_xlabel("bias strength")
            ax.set_ylabel("success rate")
            ax.set_ylim(0, 1.05)
            ax.legend(fontsize=7)
            fig.tight_layout()
            png = out / f"{name}_success_vs_delta.png"
            fig.savefig(png, dpi=120)
            plt.close(fig)
            written["png"].append(png.name)

    index = out / "index.html"
    parts = ["<html><body><h1>credmark report</h1>"]
    parts.append(f"<p>dataset: {DATASET_TAG}</p><ul>")
    for name in written["csv"]:
        parts.append(f'<li><a href="{name}">{name}</a></li>')
    parts.append("</ul>")
    for name in written["png"]:
        parts.append(f'<h3>{name}</h3><img src="{name}" width="480">')
    parts.append("</body></html>")
    index.write_text("\n".join(parts))
    written["index"] = index.name
    return written
