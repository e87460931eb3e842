"""Read parsing, simulation, and balanced sampling of labeled nucleotide reads."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, List, Sequence, Union

import numpy as np

ALPHABET = "ACGT"
_ALPHABET_SET = frozenset(ALPHABET)
_VALID_WITH_N = frozenset(ALPHABET + "N")

HOST = "host"
PATHOGEN = "pathogen"
LABELS = (HOST, PATHOGEN)


class FastaError(ValueError):
    """Malformed FASTA input; carries the offending record index."""

    def __init__(self, message: str, record_index: int):
        super().__init__(f"record {record_index}: {message}")
        self.record_index = record_index


@dataclass(frozen=True)
class Read:
    """One labeled nucleotide read."""

    id: str
    bases: str
    label: str = HOST
    source: str = "file"

    def __post_init__(self):
        if not self.bases:
            raise ValueError(f"read {self.id!r}: empty sequence")
        if not _ALPHABET_SET.issuperset(self.bases):
            bad = sorted(set(self.bases) - _ALPHABET_SET)
            raise ValueError(f"read {self.id!r}: invalid characters {bad}")
        if self.label not in LABELS:
            raise ValueError(f"read {self.id!r}: unknown label {self.label!r}")

    def __len__(self) -> int:
        return len(self.bases)


@dataclass(frozen=True)
class SimulationConfig:
    read_length: int = 150
    q_min: int = 28
    q_max: int = 35
    reads_per_class: int = 500
    pathogen_ratio: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.read_length <= 0:
            raise ValueError("read_length must be positive")
        if not (2 <= self.q_min <= self.q_max <= 60):
            raise ValueError("require 2 <= q_min <= q_max <= 60")
        if self.reads_per_class <= 0:
            raise ValueError("reads_per_class must be positive")
        if not (0.0 < self.pathogen_ratio <= 1.0):
            raise ValueError("pathogen_ratio must be in (0, 1]")


@dataclass
class Dataset:
    reads: List[Read]
    name: str = "dataset"

    def labels(self) -> List[str]:
        return [r.label for r in self.reads]

    def class_counts(self) -> dict:
        counts = {HOST: 0, PATHOGEN: 0}
        for r in self.reads:
            counts[r.label] += 1
        return counts


def phred_error_probability(q: float) -> float:
    """Per-base substitution probability for a Phred quality score."""
    return 10.0 ** (-q / 10.0)


def parse_fasta(
    source: Union[str, bytes, Path, IO],
    label: str = HOST,
    n_policy: str = "drop",
) -> List[Read]:
    """Parse FASTA text into Reads.

    ``n_policy`` controls records containing 'N' after uppercasing:
    "drop" skips the whole record, "split" emits the N-free fragments as
    separate reads (suffix ``/0``, ``/1`` ... appended to the id),
    "reject" raises.
    """
    if n_policy not in ("drop", "split", "reject"):
        raise ValueError(f"unknown n_policy {n_policy!r}")
    text = _as_text(source)

    reads: List[Read] = []
    record_index = -1
    header = None
    seq_parts: List[str] = []

    def flush():
        if header is None:
            return
        seq = "".join(seq_parts).upper()
        if not seq:
            raise FastaError("empty sequence", record_index)
        if not _VALID_WITH_N.issuperset(seq):
            bad = sorted(set(seq) - _VALID_WITH_N)
            raise FastaError(f"invalid characters {bad}", record_index)
        if "N" in seq:
            if n_policy == "reject":
                raise FastaError("sequence contains N", record_index)
            if n_policy == "drop":
                return
            for i, frag in enumerate(p for p in seq.split("N") if p):
                reads.append(Read(f"{header}/{i}", frag, label=label, source="file"))
            return
        reads.append(Read(header, seq, label=label, source="file"))

    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith(">"):
            flush()
            record_index += 1
            header = line[1:].split()[0] if len(line) > 1 else ""
            if not header:
                raise FastaError("empty header", record_index)
            seq_parts = []
        else:
            if header is None:
                raise FastaError("sequence data before any '>' header", 0)
            seq_parts.append(line)
    flush()
    return reads


def write_fasta(reads: Iterable[Read], dest: Union[Path, str, IO], width: int = 70) -> None:
    records = []
    for r in reads:
        lines = [r.bases[i : i + width] for i in range(0, len(r.bases), width)]
        records.append(f">{r.id}\n" + "\n".join(lines) + "\n")
    text = "".join(records)
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        Path(dest).write_text(text)


def _as_text(source) -> str:
    if hasattr(source, "read"):
        data = source.read()
    elif isinstance(source, Path):
        data = source.read_bytes()
    elif isinstance(source, str) and "\n" not in source and not source.lstrip().startswith(">"):
        data = Path(source).read_bytes()
    else:
        data = source
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


def simulate_reads(reference: Read, cfg: SimulationConfig, n_reads: int = None) -> List[Read]:
    """Sample windows of ``reference`` with i.i.d. substitution errors.

    Each read draws a quality score Q uniformly in [q_min, q_max]; every base
    flips to one of the three other bases with probability 10^(-Q/10).
    Deterministic given ``cfg.rng_seed``.
    """
    n = len(reference)
    L = cfg.read_length
    if n < L:
        raise ValueError(f"reference length {n} < read_length {L}")
    count = cfg.reads_per_class if n_reads is None else n_reads
    rng = np.random.default_rng(cfg.rng_seed)
    base_idx = np.frombuffer(reference.bases.encode(), dtype=np.uint8)
    lut = np.zeros(256, dtype=np.int8)
    for i, b in enumerate(ALPHABET):
        lut[ord(b)] = i
    ref_codes = lut[base_idx]

    reads: List[Read] = []
    starts = rng.integers(0, n - L + 1, size=count)
    qs = rng.integers(cfg.q_min, cfg.q_max + 1, size=count)
    for j in range(count):
        window = ref_codes[starts[j] : starts[j] + L].copy()
        p = phred_error_probability(float(qs[j]))
        errs = rng.random(L) < p
        if errs.any():
            # substitute with one of the 3 other bases, uniformly
            shift = rng.integers(1, 4, size=int(errs.sum()))
            window[errs] = (window[errs] + shift) % 4
        bases = "".join(ALPHABET[c] for c in window)
        reads.append(
            Read(f"{reference.id}_sim{j}", bases, label=reference.label, source="simulated")
        )
    return reads


def sample_balanced(
    host: Sequence[Read], pathogen: Sequence[Read], per_class: int, seed: int, name: str = "dataset"
) -> Dataset:
    """Sample ``per_class`` reads of each label without replacement."""
    if per_class < 0:
        raise ValueError("per_class must be >= 0")
    if per_class == 0:
        return Dataset([], name=name)
    for pool, lbl in ((host, HOST), (pathogen, PATHOGEN)):
        if len(pool) < per_class:
            raise ValueError(f"{lbl} pool has {len(pool)} reads, need {per_class}")
    rng = np.random.default_rng(seed)
    hi = rng.choice(len(host), size=per_class, replace=False)
    pi = rng.choice(len(pathogen), size=per_class, replace=False)
    reads = [host[i] for i in hi] + [pathogen[i] for i in pi]
    return Dataset(reads, name=name)


# ---------------------------------------------------------------------------
# Bundled synthetic references
# ---------------------------------------------------------------------------

# Order-1 Markov transition profiles. Rows/cols follow ALPHABET order.
# The two profiles share a uniform backbone but skew toward different
# dinucleotide usage, so simulated classes overlap without being identical.
_HOST_BIAS = np.array(
    [
        [0.10, 0.40, 0.40, 0.10],
        [0.35, 0.15, 0.15, 0.35],
        [0.35, 0.15, 0.15, 0.35],
        [0.10, 0.40, 0.40, 0.10],
    ]
)
_PATHOGEN_BIAS = np.array(
    [
        [0.40, 0.10, 0.10, 0.40],
        [0.15, 0.35, 0.35, 0.15],
        [0.15, 0.35, 0.35, 0.15],
        [0.40, 0.10, 0.10, 0.40],
    ]
)
_PROFILE_MIX = 0.18  # weight on the biased profile vs the uniform backbone


def _markov_sequence(transition: np.ndarray, length: int, rng: np.random.Generator) -> str:
    cum = np.cumsum(transition, axis=1)
    out = np.empty(length, dtype=np.int64)
    out[0] = rng.integers(0, 4)
    draws = rng.random(length - 1)
    cur = out[0]
    for i in range(1, length):
        cur = int(np.searchsorted(cum[cur], draws[i - 1], side="right"))
        cur = min(cur, 3)
        out[i] = cur
    return "".join(ALPHABET[c] for c in out)


def synthetic_reference(label: str, length: int = 20000, seed: int = 7) -> Read:
    """Bundled reference sequence for one class, generated from a Markov
    base-composition profile. Host and pathogen profiles are distinct but
    overlapping."""
    bias = _HOST_BIAS if label == HOST else _PATHOGEN_BIAS
    transition = (1.0 - _PROFILE_MIX) * np.full((4, 4), 0.25) + _PROFILE_MIX * bias
    rng = np.random.default_rng([seed, LABELS.index(label)])
    return Read(f"synthetic_{label}", _markov_sequence(transition, length, rng), label=label)


def simulate_dataset(
    cfg: SimulationConfig,
    host_reference: Read = None,
    pathogen_reference: Read = None,
    name: str = "simulated",
) -> Dataset:
    """Simulate a balanced dataset from the given (or bundled) references."""
    host_ref = host_reference or synthetic_reference(HOST)
    path_ref = pathogen_reference or synthetic_reference(PATHOGEN)
    if host_ref.label != HOST or path_ref.label != PATHOGEN:
        raise ValueError("reference labels must be host and pathogen respectively")
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(2)
    host_cfg = _with_seed(cfg, seeds[0].generate_state(1)[0])
    path_cfg = _with_seed(cfg, seeds[1].generate_state(1)[0])
    host_reads = simulate_reads(host_ref, host_cfg)
    path_reads = simulate_reads(path_ref, path_cfg)
    return Dataset(host_reads + path_reads, name=name)


def _with_seed(cfg: SimulationConfig, seed: int) -> SimulationConfig:
    return SimulationConfig(
        read_length=cfg.read_length,
        q_min=cfg.q_min,
        q_max=cfg.q_max,
        reads_per_class=cfg.reads_per_class,
        pathogen_ratio=cfg.pathogen_ratio,
        rng_seed=int(seed),
    )


# ---------------------------------------------------------------------------
# Dataset manifest
# ---------------------------------------------------------------------------

def write_manifest(dataset: Dataset, per_class: int, seed: int, path: Union[str, Path]) -> None:
    manifest = {
        "name": dataset.name,
        "per_class": per_class,
        "seed": seed,
        "read_ids": [r.id for r in dataset.reads],
        "labels": [r.label for r in dataset.reads],
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path: Union[str, Path]) -> dict:
    return json.loads(Path(path).read_text())
