"""Casting downstream tasks to text-to-text and parsing predictions back.

Each task schema fixes the input template (a task token plus labeled
fields, space-joined in a fixed order) and the output space: a closed
label set, the 21-class similarity grid, or free-form text. Prediction
parsing is strict — an output that matches no label is INVALID and is
scored as wrong, never raised.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

from .errors import DataError, ParameterError


class _Invalid:
    def __repr__(self) -> str:
        return "INVALID"

    def __bool__(self) -> bool:
        return False


INVALID = _Invalid()


@dataclass(frozen=True)
class TaskSchema:
    name: str
    task_token: str  # leading token, "" for tasks without one
    fields: tuple[tuple[str, str], ...]  # (display label, field key); label "" means bare value
    kind: str = "classification"  # classification | regression | generation
    labels: dict[str, str] = field(default_factory=dict)  # raw target -> label text
    metrics: tuple[str, ...] = ("accuracy",)

    def label_set(self) -> list[str]:
        return list(dict.fromkeys(self.labels.values()))


@dataclass(frozen=True)
class TaskExample:
    task_name: str
    fields: dict[str, str]
    target: str


def _schema(name, token, fields, kind="classification", labels=None, metrics=("accuracy",)):
    return TaskSchema(name=name, task_token=token,
                      fields=tuple(fields), kind=kind,
                      labels=dict(labels or {}), metrics=tuple(metrics))


# Field order and label words are the wire format; loaders and the
# formatter must never reorder them.
SCHEMAS: dict[str, TaskSchema] = {s.name: s for s in [
    _schema("cola", "cola", [("sentence", "sentence")],
            labels={"0": "unacceptable", "1": "acceptable"}, metrics=("matthews",)),
    _schema("sst2", "sst2", [("sentence", "sentence")],
            labels={"0": "negative", "1": "positive"}),
    _schema("mrpc", "mrpc", [("sentence1", "sentence1"), ("sentence2", "sentence2")],
            labels={"0": "not_equivalent", "1": "equivalent"}, metrics=("f1", "accuracy")),
    _schema("stsb", "stsb", [("sentence1", "sentence1"), ("sentence2", "sentence2")],
            kind="regression", metrics=("pearson", "spearman")),
    _schema("qqp", "qqp", [("question1", "question1"), ("question2", "question2")],
            labels={"0": "not_duplicate", "1": "duplicate"}, metrics=("f1", "accuracy")),
    _schema("mnli", "mnli", [("hypothesis", "hypothesis"), ("premise", "premise")],
            labels={"0": "entailment", "1": "neutral", "2": "contradiction"}),
    _schema("qnli", "qnli", [("question", "question"), ("sentence", "sentence")],
            labels={"0": "entailment", "1": "not_entailment"}),
    _schema("rte", "rte", [("sentence1", "sentence1"), ("sentence2", "sentence2")],
            labels={"0": "entailment", "1": "not_entailment"}),
    _schema("wnli", "wnli", [("sentence1", "sentence1"), ("sentence2", "sentence2")],
            labels={"0": "not_entailment", "1": "entailment"}),
    _schema("cb", "cb", [("hypothesis", "hypothesis"), ("premise", "premise")],
            labels={"0": "entailment", "1": "contradiction", "2": "neutral"}, metrics=("f1", "accuracy")),
    _schema("copa", "copa", [("choice1", "choice1"), ("choice2", "choice2"),
                             ("premise", "premise"), ("question", "question")],
            labels={"0": "False", "1": "True"}),
    _schema("multirc", "multirc", [("question", "question"), ("answer", "answer"),
                                   ("paragraph", "paragraph")],
            labels={"0": "False", "1": "True"}, metrics=("f1", "exact_match")),
    _schema("wic", "wic", [("pos", "pos"), ("sentence1", "sentence1"),
                           ("sentence2", "sentence2"), ("word", "word")],
            labels={"0": "False", "1": "True"}),
    _schema("wsc", "wsc:", [("", "text")], kind="generation"),
    _schema("boolq", "boolq", [("question", "question"), ("passage", "passage")],
            labels={"0": "False", "1": "True"}),
    _schema("record", "record", [("query", "query"), ("entities", "entities"),
                                 ("passage", "passage")], kind="generation",
            metrics=("f1", "exact_match")),
    _schema("cnndm", "summarize:", [("", "article")], kind="generation",
            metrics=("rouge1", "rouge2", "rougeL")),
    _schema("squad", "", [("question", "question"), ("context", "context")],
            kind="generation", metrics=("exact_match", "f1")),
    _schema("wmt_ende", "translate English to German:", [("", "text")],
            kind="generation", metrics=("bleu",)),
    _schema("wmt_enfr", "translate English to French:", [("", "text")],
            kind="generation", metrics=("bleu",)),
    _schema("wmt_enro", "translate English to Romanian:", [("", "text")],
            kind="generation", metrics=("bleu",)),
]}


def get_schema(name: str) -> TaskSchema:
    try:
        return SCHEMAS[name]
    except KeyError:
        raise ParameterError(f"unknown task {name!r}; known: {sorted(SCHEMAS)}") from None


def format_example(schema: TaskSchema, example: TaskExample) -> tuple[str, str]:
    """Render (input text, target text) for one example.

    Input: task token, then "label: value" per field in schema order,
    all space-joined. Targets: label word for classification, rounded
    grid value for the similarity regression, raw text otherwise.
    """
    parts = [schema.task_token] if schema.task_token else []
    for label, key in schema.fields:
        if key not in example.fields:
            raise DataError(f"task {schema.name!r} example is missing field {key!r}")
        value = example.fields[key]
        parts.append(f"{label}: {value}" if label else value)
    text = " ".join(parts)
    if schema.kind == "classification":
        if example.target not in schema.labels:
            raise DataError(f"task {schema.name!r} has no label for raw target {example.target!r}")
        return text, schema.labels[example.target]
    if schema.kind == "regression":
        return text, stsb_round(float(example.target))
    return text, example.target


def stsb_round(score: float) -> str:
    """Round to the 21-value grid 1.0, 1.2, ..., 5.0; midpoints round up.

    Decimal arithmetic keeps exact midpoints (2.5 -> "2.6") from falling
    the wrong way through float representation.
    """
    if not 1.0 <= score <= 5.0:
        raise DataError(f"similarity score {score} outside [1, 5]")
    steps = (Decimal(str(score)) / Decimal("0.2")).quantize(Decimal("1"), rounding=ROUND_HALF_UP)
    return str((steps * Decimal("0.2")).quantize(Decimal("0.1")))


def parse_prediction(schema: TaskSchema, output_text: str):
    """Map decoded text back to a label, a number, raw text, or INVALID."""
    if schema.kind == "classification":
        return output_text if output_text in schema.label_set() else INVALID
    if schema.kind == "regression":
        try:
            value = float(output_text)
        except ValueError:
            return INVALID
        return value if 1.0 <= value <= 5.0 else INVALID
    return output_text


# -- Winograd machinery -------------------------------------------------

PRONOUNS = ("he", "him", "his", "she", "her", "hers", "it", "its", "they", "them", "their", "theirs")

_POSSESSIVE_BASE = {"his": "he", "her": "she", "its": "it", "their": "they", "theirs": "they", "hers": "she"}


def wsc_format(passage: str, pronoun_index: int) -> str:
    """Wrap the pronoun at word position `pronoun_index` in asterisks."""
    words = passage.split()
    if not 0 <= pronoun_index < len(words):
        raise DataError(f"pronoun index {pronoun_index} out of range for {len(words)} words")
    words = list(words)
    words[pronoun_index] = f"*{words[pronoun_index]}*"
    return " ".join(words)


def _content_words(text: str) -> list[str]:
    words = []
    for raw in text.lower().split():
        word = raw.strip(string.punctuation)
        if word and word not in ("a", "an", "the"):
            words.append(word)
    return words


def wsc_eval(prediction: str, candidate: str) -> bool:
    """True when one side's words are a sub-multiset of the other's.

    Comparison ignores case, articles, and punctuation. An empty
    prediction is always False — the vacuous subset would inflate scores.
    """
    pred = _content_words(prediction)
    cand = _content_words(candidate)
    if not pred:
        return False

    def submultiset(a: list[str], b: list[str]) -> bool:
        pool = list(b)
        for w in a:
            if w in pool:
                pool.remove(w)
            else:
                return False
        return True

    return submultiset(pred, cand) or submultiset(cand, pred)


def wsc_training_filter(examples) -> list:
    """Referent-prediction training keeps only True-labeled examples."""
    return [ex for ex in examples if _truthy_label(ex)]


def _truthy_label(example) -> bool:
    label = example.target if isinstance(example, TaskExample) else example[-1]
    return str(label) in ("1", "True", "true")


def _normalize_words(text: str) -> list[str]:
    return [w.strip(string.punctuation).lower() for w in text.split() if w.strip(string.punctuation)]


@dataclass(frozen=True)
class ReferentExample:
    input_text: str  # passage with the chosen pronoun highlighted
    candidate: str   # noun phrase the prediction is scored against
    label: str       # original True/False label, passed through


def wnli_convert(passage: str, short_sentence: str, label: str) -> ReferentExample | None:
    """Convert a (passage with pronoun, short sentence) pair to
    referent-prediction form.

    For every pronoun occurrence in the passage, measure the longest run
    of words immediately before or after it that appears contiguously in
    the short sentence (case- and punctuation-insensitive). The pronoun
    with the longest match is highlighted; the candidate is the short
    sentence minus that matched run, de-possessivized. Returns None when
    the passage contains no known pronoun (callers count skips).
    """
    passage_words = passage.split()
    norm_passage = _normalize_words(passage)
    norm_short = _normalize_words(short_sentence)
    if len(norm_passage) != len(passage_words):
        # punctuation-only words would desync indices; strip them up front
        passage_words = [w for w in passage_words if w.strip(string.punctuation)]

    def run_in_short(words: list[str]) -> bool:
        if not words:
            return True
        n = len(words)
        return any(norm_short[i:i + n] == words for i in range(len(norm_short) - n + 1))

    best = None  # (match_len, pronoun_pos, matched_words)
    for pos, word in enumerate(norm_passage):
        if word not in PRONOUNS:
            continue
        for direction in ("before", "after"):
            length = 0
            matched: list[str] = []
            while True:
                if direction == "before":
                    lo = pos - (length + 1)
                    if lo < 0:
                        break
                    trial = norm_passage[lo:pos]
                else:
                    hi = pos + length + 2
                    if hi > len(norm_passage):
                        break
                    trial = norm_passage[pos + 1:hi]
                if not run_in_short(trial):
                    break
                length += 1
                matched = trial
            candidate_entry = (length, pos, matched)
            if best is None or candidate_entry[0] > best[0]:
                best = candidate_entry
    if best is None:
        return None
    _, pos, matched = best
    highlighted = wsc_format(" ".join(passage_words), pos)

    remaining = list(norm_short)
    if matched:
        n = len(matched)
        for i in range(len(remaining) - n + 1):
            if remaining[i:i + n] == matched:
                del remaining[i:i + n]
                break
    remaining = [_POSSESSIVE_BASE.get(w, w[:-2] if w.endswith("'s") else w) for w in remaining]
    return ReferentExample(input_text=highlighted, candidate=" ".join(remaining), label=label)


def convert_wnli_examples(rows) -> tuple[list[ReferentExample], int]:
    """Bulk conversion; returns (converted, skipped_count)."""
    out: list[ReferentExample] = []
    skipped = 0
    for passage, short, label in rows:
        converted = wnli_convert(passage, short, label)
        if converted is None:
            skipped += 1
        else:
            out.append(converted)
    return out, skipped


# -- file ingestion ------------------------------------------------------


def load_task_file(schema: TaskSchema, path) -> list[TaskExample]:
    """Read tab-separated examples: one per line, schema fields in order,
    raw target last. Column counts are validated per line."""
    expected = len(schema.fields) + 1
    examples: list[TaskExample] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != expected:
                raise DataError(
                    f"{path}:{lineno}: expected {expected} tab-separated columns for task "
                    f"{schema.name!r}, found {len(cols)}"
                )
            fields = {key: cols[i] for i, (_, key) in enumerate(schema.fields)}
            examples.append(TaskExample(task_name=schema.name, fields=fields, target=cols[-1]))
    return examples
