"""Unsupervised corruption objectives.

Every objective is a pure transform from a token sequence (plus an rng
stream) to a (corrupted input, target) pair. Sentinel-based objectives
keep an exact inverse: splicing the target spans back over the input's
sentinels reconstructs the original sequence, and the target always ends
with one extra, final sentinel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DataError, ParameterError
from .vocab import Vocabulary

OBJECTIVE_KINDS = (
    "prefix_lm",
    "bert_style",
    "mass_style",
    "iid_replace_spans",
    "iid_drop_tokens",
    "random_spans",
    "deshuffle",
    "full_lm",
)


@dataclass(frozen=True)
class CorruptionPair:
    input_ids: tuple[int, ...]
    target_ids: tuple[int, ...]


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str
    corruption_rate: float = 0.15
    mean_span_length: float = 3.0

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ParameterError(f"unknown objective kind {self.kind!r}; choose from {OBJECTIVE_KINDS}")
        if self.kind not in ("prefix_lm", "deshuffle", "full_lm") and not 0.0 < self.corruption_rate < 1.0:
            raise ParameterError(f"corruption_rate must be in (0, 1), got {self.corruption_rate}")
        if self.kind == "random_spans" and self.mean_span_length < 1.0:
            raise ParameterError(f"mean_span_length must be >= 1, got {self.mean_span_length}")


def _as_ids(x) -> list[int]:
    return list(x.ids) if hasattr(x, "ids") else list(x)


def prefix_lm_split(x, rng) -> CorruptionPair:
    """Split at a uniform point: everything before feeds the encoder side."""
    ids = _as_ids(x)
    if len(ids) < 2:
        raise DataError(f"prefix split needs at least 2 tokens, got {len(ids)}")
    s = int(rng.integers(1, len(ids)))
    return CorruptionPair(tuple(ids[:s]), tuple(ids[s:]))


def full_lm(x) -> CorruptionPair:
    """Plain next-token prediction: empty input, whole sequence as target."""
    return CorruptionPair((), tuple(_as_ids(x)))


def _random_natural_token(rng, vocab: Vocabulary) -> int:
    """Uniform draw over non-special pieces (pad/eos/unk/sentinels excluded)."""
    lo, hi = 3, vocab.first_sentinel
    return int(rng.integers(lo, hi))


def bert_style(x, rate: float, rng, vocab: Vocabulary) -> CorruptionPair:
    """Per-token corruption: 90% to the shared mask token, 10% to a random token.

    The shared mask is sentinel 0. The target is the entire original
    sequence.
    """
    ids = _as_ids(x)
    corrupt = rng.random(len(ids)) < rate
    use_mask = rng.random(len(ids)) < 0.9
    mask_id = vocab.sentinel_id(0)
    out = []
    for i, t in enumerate(ids):
        if not corrupt[i]:
            out.append(t)
        elif use_mask[i]:
            out.append(mask_id)
        else:
            out.append(_random_natural_token(rng, vocab))
    return CorruptionPair(tuple(out), tuple(ids))


def mass_style(x, rate: float, rng, vocab: Vocabulary) -> CorruptionPair:
    """Like bert_style but every corrupted token becomes the mask token."""
    ids = _as_ids(x)
    corrupt = rng.random(len(ids)) < rate
    mask_id = vocab.sentinel_id(0)
    out = [mask_id if corrupt[i] else t for i, t in enumerate(ids)]
    return CorruptionPair(tuple(out), tuple(ids))


def _spans_from_mask(corrupt: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as [start, end) pairs."""
    spans = []
    i = 0
    n = len(corrupt)
    while i < n:
        if corrupt[i]:
            j = i
            while j < n and corrupt[j]:
                j += 1
            spans.append((i, j))
            i = j
        else:
            i += 1
    return spans


def _replace_spans(ids: list[int], spans: list[tuple[int, int]], vocab: Vocabulary) -> CorruptionPair:
    if len(spans) + 1 > vocab.num_sentinels:
        raise CapacityError(
            f"{len(spans)} corrupted spans need {len(spans) + 1} sentinels, "
            f"vocabulary reserves {vocab.num_sentinels}"
        )
    inp: list[int] = []
    tgt: list[int] = []
    cursor = 0
    for k, (start, end) in enumerate(spans):
        inp.extend(ids[cursor:start])
        inp.append(vocab.sentinel_id(k))
        tgt.append(vocab.sentinel_id(k))
        tgt.extend(ids[start:end])
        cursor = end
    inp.extend(ids[cursor:])
    tgt.append(vocab.sentinel_id(len(spans)))
    return CorruptionPair(tuple(inp), tuple(tgt))


def iid_replace_spans(x, rate: float, rng, vocab: Vocabulary) -> CorruptionPair:
    """I.i.d. token corruption with each maximal run collapsed to a sentinel."""
    if not 0.0 < rate < 1.0:
        raise ParameterError(f"rate must be in (0, 1), got {rate}")
    ids = _as_ids(x)
    corrupt = rng.random(len(ids)) < rate
    return _replace_spans(ids, _spans_from_mask(corrupt), vocab)


def iid_drop_tokens(x, rate: float, rng) -> CorruptionPair:
    """Corrupted tokens are dropped from the input and become the target."""
    ids = _as_ids(x)
    corrupt = rng.random(len(ids)) < rate
    inp = tuple(t for i, t in enumerate(ids) if not corrupt[i])
    tgt = tuple(t for i, t in enumerate(ids) if corrupt[i])
    return CorruptionPair(inp, tgt)


def _sample_composition(total: int, parts: int, minimum: int, rng) -> list[int]:
    """Uniform composition of `total` into `parts` parts, each >= minimum.

    Stars and bars: place parts-1 bars among total-parts*(minimum-1)... the
    slack is distributed by drawing a uniform (parts-1)-subset of cut points.
    """
    if parts == 0:
        return []
    slack = total - parts * minimum
    if slack < 0:
        raise DataError(f"cannot split {total} into {parts} parts of at least {minimum}")
    if parts == 1:
        return [total]
    # cuts among slack + parts - 1 slots yield a uniform weak composition
    slots = slack + parts - 1
    cuts = np.sort(rng.choice(slots, size=parts - 1, replace=False))
    prev = -1
    sizes = []
    for c in list(cuts) + [slots]:
        sizes.append(int(c - prev - 1))
        prev = c
    return [s + minimum for s in sizes]


def random_spans(x, rate: float, mean_span_length: float, rng, vocab: Vocabulary) -> CorruptionPair:
    """Corrupt a fixed token budget arranged into non-adjacent random spans.

    num_corrupted = round(rate * len) (at least 1); the number of spans is
    round(num_corrupted / mean_span_length) (at least 1). Span lengths and
    the gaps between them are sampled uniformly over all valid layouts:
    interior gaps stay >= 1 so spans never touch, while spans may sit at
    either sequence boundary.
    """
    ids = _as_ids(x)
    n = len(ids)
    if rate * n < 1:
        raise DataError(f"rate {rate} with length {n} corrupts less than one token")
    num_corrupted = max(1, round(rate * n))
    num_spans = max(1, round(num_corrupted / mean_span_length))
    num_gap_tokens = n - num_corrupted
    if num_gap_tokens < num_spans - 1:
        raise DataError(
            f"{num_spans} spans need {num_spans - 1} separating tokens, only {num_gap_tokens} uncorrupted remain"
        )
    if num_spans + 1 > vocab.num_sentinels:
        raise CapacityError(
            f"{num_spans} spans need {num_spans + 1} sentinels, vocabulary reserves {vocab.num_sentinels}"
        )
    span_lengths = _sample_composition(num_corrupted, num_spans, 1, rng)
    # gaps: [before, between..., after]; the num_spans-1 interior gaps get
    # a reserved separator token so spans never merge
    gaps = _sample_composition(num_gap_tokens - (num_spans - 1), num_spans + 1, 0, rng)
    for i in range(1, num_spans):
        gaps[i] += 1
    spans = []
    pos = 0
    for k in range(num_spans):
        pos += gaps[k]
        spans.append((pos, pos + span_lengths[k]))
        pos += span_lengths[k]
    return _replace_spans(ids, spans, vocab)


def deshuffle(x, rng) -> CorruptionPair:
    """Uniformly permuted input; the original order is the target."""
    ids = _as_ids(x)
    perm = rng.permutation(len(ids))
    return CorruptionPair(tuple(ids[i] for i in perm), tuple(ids))


def to_lm_concat(pair: CorruptionPair, sep_strategy: str = "none") -> tuple[tuple[int, ...], int]:
    """Concatenate a pair for language-model consumption.

    Returns (sequence, prefix_len): positions before prefix_len are the
    conditioning prefix (fully visible under a prefix-LM mask), the rest
    is predicted. sep_strategy "eos" inserts the eos id (1) after the
    input portion and counts it as prefix.
    """
    if sep_strategy not in ("none", "eos"):
        raise ParameterError(f"unknown sep_strategy {sep_strategy!r}")
    inp = list(pair.input_ids)
    if sep_strategy == "eos":
        inp.append(1)
    return tuple(inp) + tuple(pair.target_ids), len(inp)


def split_lm_concat(seq, prefix_len: int, sep_strategy: str = "none") -> CorruptionPair:
    """Inverse of to_lm_concat."""
    seq = list(seq)
    inp, tgt = seq[:prefix_len], seq[prefix_len:]
    if sep_strategy == "eos":
        inp = inp[:-1]
    return CorruptionPair(tuple(inp), tuple(tgt))


def reconstruct_from_sentinels(pair: CorruptionPair, vocab: Vocabulary) -> tuple[int, ...]:
    """Splice target spans back over the input's sentinels.

    Exact inverse of the sentinel objectives; raises DataError when the
    pair does not follow the sentinel grammar.
    """
    spans: dict[int, list[int]] = {}
    current: list[int] | None = None
    for t in pair.target_ids:
        if vocab.is_sentinel(t):
            current = spans.setdefault(t, [])
        elif current is not None:
            current.append(t)
        else:
            raise DataError("target does not start with a sentinel")
    out: list[int] = []
    for t in pair.input_ids:
        if vocab.is_sentinel(t):
            if t not in spans:
                raise DataError(f"input sentinel {t} missing from target")
            out.extend(spans[t])
        else:
            out.append(t)
    return tuple(out)


def apply_objective(spec: ObjectiveSpec, x, rng, vocab: Vocabulary) -> CorruptionPair:
    """Dispatch an ObjectiveSpec over one token sequence."""
    if spec.kind == "prefix_lm":
        return prefix_lm_split(x, rng)
    if spec.kind == "bert_style":
        return bert_style(x, spec.corruption_rate, rng, vocab)
    if spec.kind == "mass_style":
        return mass_style(x, spec.corruption_rate, rng, vocab)
    if spec.kind == "iid_replace_spans":
        return iid_replace_spans(x, spec.corruption_rate, rng, vocab)
    if spec.kind == "iid_drop_tokens":
        return iid_drop_tokens(x, spec.corruption_rate, rng)
    if spec.kind == "random_spans":
        return random_spans(x, spec.corruption_rate, spec.mean_span_length, rng, vocab)
    if spec.kind == "deshuffle":
        return deshuffle(x, rng)
    return full_lm(x)
