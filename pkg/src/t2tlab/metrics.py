"""Evaluation metrics.

Accuracy, normalized exact match and token F1, Matthews correlation,
Pearson and Spearman correlations, corpus BLEU (4-gram, exponential
smoothing of zero precisions, international tokenization), and
ROUGE-1/2/L F-measures. Values: accuracy/EM/F1/ROUGE in [0, 1] (the CLI
reports them x100), BLEU in [0, 100], correlations in [-1, 1].
"""

from __future__ import annotations

import math
import re
import string
import unicodedata
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class MetricResult:
    name: str
    value: float
    count: int


def _check_paired(preds, golds):
    if len(preds) != len(golds):
        raise DataError(f"prediction/gold length mismatch: {len(preds)} vs {len(golds)}")
    if len(preds) == 0:
        raise DataError("empty corpus")


def accuracy(preds, golds) -> float:
    """Raw label equality; INVALID predictions simply never match."""
    _check_paired(preds, golds)
    return sum(p == g for p, g in zip(preds, golds)) / len(preds)


_ARTICLES = re.compile(r"\b(a|an|the)\b")


def normalize_answer(text: str) -> str:
    """QA answer normalization: lowercase, drop punctuation and articles,
    collapse whitespace."""
    text = text.lower()
    text = "".join(c for c in text if c not in string.punctuation)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def exact_match(preds, golds) -> float:
    _check_paired(preds, golds)
    return sum(normalize_answer(p) == normalize_answer(g) for p, g in zip(preds, golds)) / len(preds)


def token_f1(preds, golds) -> float:
    """Mean per-example F1 over normalized answer tokens."""
    _check_paired(preds, golds)
    total = 0.0
    for p, g in zip(preds, golds):
        pt = normalize_answer(p).split()
        gt = normalize_answer(g).split()
        if not pt or not gt:
            total += float(pt == gt)
            continue
        overlap = sum((Counter(pt) & Counter(gt)).values())
        if overlap == 0:
            continue
        precision = overlap / len(pt)
        recall = overlap / len(gt)
        total += 2 * precision * recall / (precision + recall)
    return total / len(preds)


def matthews_corr(preds, golds) -> float:
    """Binary MCC; a zero denominator yields 0."""
    _check_paired(preds, golds)
    labels = set(preds) | set(golds)
    if len(labels) > 2:
        raise DataError(f"matthews correlation needs binary labels, got {sorted(map(str, labels))}")
    positive = sorted(map(str, labels))[-1]
    tp = fp = fn = tn = 0
    for p, g in zip(preds, golds):
        if str(p) == positive:
            if str(g) == positive:
                tp += 1
            else:
                fp += 1
        else:
            if str(g) == positive:
                fn += 1
            else:
                tn += 1
    denom = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / denom


def pearson_corr(x, y) -> float:
    _check_paired(x, y)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xd = x - x.mean()
    yd = y - y.mean()
    denom = math.sqrt((xd * xd).sum() * (yd * yd).sum())
    if denom == 0:
        return 0.0  # constant input carries no signal
    return float((xd * yd).sum() / denom)


def _average_ranks(values) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=float)
    sorted_vals = np.asarray(values)[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def spearman_corr(x, y) -> float:
    """Pearson over average ranks (ties share their mean rank)."""
    _check_paired(x, y)
    return pearson_corr(_average_ranks(x), _average_ranks(y))


# -- BLEU ----------------------------------------------------------------


def intl_tokenize(text: str) -> list[str]:
    """International tokenization: split out every symbol character and
    every punctuation character not sitting between two digits."""
    out: list[str] = []
    chars = list(text)
    for i, c in enumerate(chars):
        cat = unicodedata.category(c)
        if cat.startswith("S"):
            out.extend([" ", c, " "])
        elif cat.startswith("P"):
            prev_digit = i > 0 and chars[i - 1].isdigit()
            next_digit = i + 1 < len(chars) and chars[i + 1].isdigit()
            if prev_digit and next_digit:
                out.append(c)
            else:
                out.extend([" ", c, " "])
        else:
            out.append(c)
    return "".join(out).split()


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses, references, max_order: int = 4) -> float:
    """Corpus-level BLEU in [0, 100].

    Modified n-gram precisions up to 4-grams over internationally
    tokenized text; brevity penalty exp(1 - ref/hyp) when the hypothesis
    corpus is shorter; the k-th consecutive zero numerator is replaced by
    1/2^k (exponential smoothing), so a nonempty hypothesis never scores
    exactly zero.
    """
    _check_paired(hypotheses, references)
    hyp_tokens = [intl_tokenize(h) for h in hypotheses]
    ref_tokens = [intl_tokenize(r) for r in references]
    hyp_len = sum(len(t) for t in hyp_tokens)
    ref_len = sum(len(t) for t in ref_tokens)
    if hyp_len == 0:
        return 0.0

    log_precisions = []
    smooth = 1.0
    for n in range(1, max_order + 1):
        matches = 0
        total = 0
        for h, r in zip(hyp_tokens, ref_tokens):
            hc = _ngrams(h, n)
            rc = _ngrams(r, n)
            matches += sum(min(c, rc[g]) for g, c in hc.items())
            total += max(len(h) - n + 1, 0)
        if total == 0:
            break  # corpus too short for this order; shorter geometric mean
        if matches == 0:
            smooth *= 2.0
            precision = 1.0 / (smooth * total)
        else:
            precision = matches / total
        log_precisions.append(math.log(precision))
    if not log_precisions:
        return 0.0
    geo_mean = math.exp(sum(log_precisions) / len(log_precisions))
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * geo_mean


# -- ROUGE ---------------------------------------------------------------


def _rouge_tokens(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


def _f_measure(overlap: int, hyp_count: int, ref_count: int) -> float:
    if hyp_count == 0 or ref_count == 0 or overlap == 0:
        return 0.0
    precision = overlap / hyp_count
    recall = overlap / ref_count
    return 2 * precision * recall / (precision + recall)


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge(hypotheses, references, variant: str = "1") -> float:
    """Mean per-example ROUGE F-measure; variant is "1", "2", or "L"."""
    _check_paired(hypotheses, references)
    if variant not in ("1", "2", "L"):
        raise DataError(f"unknown rouge variant {variant!r}")
    total = 0.0
    for h, r in zip(hypotheses, references):
        ht = _rouge_tokens(h)
        rt = _rouge_tokens(r)
        if variant == "L":
            total += _f_measure(_lcs_length(ht, rt), len(ht), len(rt))
        else:
            n = int(variant)
            hc = _ngrams(ht, n)
            rc = _ngrams(rt, n)
            overlap = sum(min(c, rc[g]) for g, c in hc.items())
            total += _f_measure(overlap, sum(hc.values()), sum(rc.values()))
    return total / len(hypotheses)


# -- benchmark aggregation -------------------------------------------------

# Task -> metrics contributing to its score; tasks marked excluded do not
# enter validation-set averages.
BENCHMARKS: dict[str, dict] = {
    "glue": {
        "tasks": {
            "cola": ("matthews",),
            "sst2": ("accuracy",),
            "mrpc": ("f1", "accuracy"),
            "stsb": ("pearson", "spearman"),
            "qqp": ("f1", "accuracy"),
            "mnli": ("accuracy",),
            "qnli": ("accuracy",),
            "rte": ("accuracy",),
            "wnli": ("accuracy",),
        },
        "excluded": ("wnli",),
    },
    "superglue": {
        "tasks": {
            "boolq": ("accuracy",),
            "cb": ("f1", "accuracy"),
            "copa": ("accuracy",),
            "multirc": ("f1", "exact_match"),
            "record": ("f1", "exact_match"),
            "rte": ("accuracy",),
            "wic": ("accuracy",),
            "wsc": ("accuracy",),
        },
        "excluded": (),
    },
}


def benchmark_average(per_task_scores: dict[str, dict[str, float]], benchmark: str) -> float:
    """Mean over tasks of the mean over each task's metrics.

    Excluded tasks (validation-set convention) are skipped even when
    scores are supplied for them; any other missing task is an error.
    """
    if benchmark not in BENCHMARKS:
        raise DataError(f"unknown benchmark {benchmark!r}")
    schema = BENCHMARKS[benchmark]
    task_values = []
    for task, metric_names in schema["tasks"].items():
        if task in schema["excluded"]:
            continue
        if task not in per_task_scores:
            raise DataError(f"benchmark {benchmark!r} is missing scores for task {task!r}")
        scores = per_task_scores[task]
        missing = [m for m in metric_names if m not in scores]
        if missing:
            raise DataError(f"task {task!r} is missing metrics {missing}")
        task_values.append(sum(scores[m] for m in metric_names) / len(metric_names))
    return sum(task_values) / len(task_values)


METRIC_FUNCTIONS = {
    "accuracy": accuracy,
    "exact_match": exact_match,
    "f1": token_f1,
    "matthews": matthews_corr,
    "pearson": pearson_corr,
    "spearman": spearman_corr,
    "bleu": bleu,
    "rouge1": lambda h, r: rouge(h, r, "1"),
    "rouge2": lambda h, r: rouge(h, r, "2"),
    "rougeL": lambda h, r: rouge(h, r, "L"),
}
