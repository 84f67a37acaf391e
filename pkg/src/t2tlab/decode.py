"""Autoregressive generation: greedy decoding and beam search.

Decoders talk to anything exposing `next_token_logits(input_ids,
prefix_ids) -> [vocab]`, `eos_id`, and `vocab_size`. Correctness is
defined by full re-forward semantics — the bundled scorer re-runs the
decoder stack from scratch each step (the encoder pass is a pure
function of the input and is computed once).

Beam hypotheses are ranked by log_prob / lp(len) with
lp(len) = ((5 + len) / 6) ** alpha, len counting every emitted token
including the end-of-sequence token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ParameterError
from .model import MaskPattern, TextToTextModel


def length_penalty(length: int, alpha: float) -> float:
    return ((5.0 + length) / 6.0) ** alpha


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max()
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum())


@dataclass(frozen=True)
class BeamHypothesis:
    ids: tuple[int, ...]  # includes eos once finished
    log_prob: float
    finished: bool = False

    def score(self, alpha: float) -> float:
        return self.log_prob / length_penalty(max(len(self.ids), 1), alpha)


@dataclass(frozen=True)
class DecodeResult:
    ids: tuple[int, ...]  # generated tokens, eos stripped
    log_prob: float
    finished: bool  # False means max_len hit with no eos


def greedy_decode(model, input_ids, max_len: int) -> DecodeResult:
    """Highest-probability token at every step until eos or max_len."""
    if max_len < 1:
        raise ParameterError(f"max_len must be >= 1, got {max_len}")
    prefix: list[int] = []
    log_prob = 0.0
    for _ in range(max_len):
        logits = np.asarray(model.next_token_logits(input_ids, tuple(prefix)))
        logp = _log_softmax(logits)
        token = int(np.argmax(logits))
        log_prob += float(logp[token])
        if token == model.eos_id:
            return DecodeResult(tuple(prefix), log_prob, True)
        prefix.append(token)
    return DecodeResult(tuple(prefix), log_prob, False)


def beam_decode(model, input_ids, beam_width: int = 4, alpha: float = 0.6,
                max_len: int = 64) -> DecodeResult:
    """Standard beam search with length-penalized final ranking.

    A hypothesis that emits eos is frozen and competes by normalized
    score. The search stops early once no alive hypothesis could beat
    the best finished score even with a free (zero-cost) continuation.
    """
    if beam_width < 1:
        raise ParameterError(f"beam_width must be >= 1, got {beam_width}")
    if max_len < 1:
        raise ParameterError(f"max_len must be >= 1, got {max_len}")
    alive: list[BeamHypothesis] = [BeamHypothesis((), 0.0)]
    finished: list[BeamHypothesis] = []
    for _ in range(max_len):
        candidates: list[BeamHypothesis] = []
        for hyp in alive:
            logp = _log_softmax(np.asarray(model.next_token_logits(input_ids, hyp.ids)))
            # per-hypothesis top beam_width covers the global top beam_width
            top = np.argsort(logp)[::-1][:beam_width]
            for token in top:
                candidates.append(
                    BeamHypothesis(
                        hyp.ids + (int(token),),
                        hyp.log_prob + float(logp[token]),
                        finished=int(token) == model.eos_id,
                    )
                )
        candidates.sort(key=lambda h: h.log_prob, reverse=True)
        # vanilla selection: the global top beam_width candidates advance;
        # the ones emitting eos freeze, the rest stay alive (this makes
        # beam_width=1 reduce exactly to greedy decoding)
        alive = []
        for hyp in candidates[:beam_width]:
            if hyp.finished:
                finished.append(hyp)
            else:
                alive.append(hyp)
        if not alive:
            break
        if finished:
            best_finished = max(h.score(alpha) for h in finished)
            bound = max(h.log_prob for h in alive) / length_penalty(max_len, alpha)
            if bound <= best_finished:
                break
    if finished:
        finished.sort(key=lambda h: h.score(alpha), reverse=True)
        best = finished[0]
        assert all(best.score(alpha) >= h.score(alpha) for h in finished)
        return DecodeResult(best.ids[:-1], best.log_prob, True)
    best = max(alive, key=lambda h: h.score(alpha))
    return DecodeResult(best.ids, best.log_prob, False)


def ensemble_logits(models, input_ids, prefix_ids) -> np.ndarray:
    """Arithmetic mean of per-model next-token logits."""
    if not models:
        raise ConfigurationError("ensemble needs at least one model")
    sizes = {m.vocab_size for m in models}
    if len(sizes) != 1:
        raise ConfigurationError(f"ensemble members disagree on vocab size: {sorted(sizes)}")
    stack = np.stack([np.asarray(m.next_token_logits(input_ids, prefix_ids)) for m in models])
    return stack.mean(axis=0)


class EnsembleModel:
    """Scorer that averages member logits before prediction."""

    def __init__(self, members):
        if not members:
            raise ConfigurationError("ensemble needs at least one model")
        sizes = {m.vocab_size for m in members}
        if len(sizes) != 1:
            raise ConfigurationError(f"ensemble members disagree on vocab size: {sorted(sizes)}")
        eos = {m.eos_id for m in members}
        if len(eos) != 1:
            raise ConfigurationError("ensemble members disagree on eos id")
        self.members = list(members)
        self.eos_id = members[0].eos_id
        self.vocab_size = members[0].vocab_size

    def next_token_logits(self, input_ids, prefix_ids) -> np.ndarray:
        return ensemble_logits(self.members, input_ids, prefix_ids)


class Seq2SeqScorer:
    """Adapts a TextToTextModel to the decoding protocol.

    Teacher-forcing convention: decoding starts from the pad token; for
    single-stack variants the context is pad + input + generated with a
    fully-visible prefix over pad + input.
    """

    def __init__(self, model: TextToTextModel):
        self.model = model
        self.eos_id = model.cfg.eos_id
        self.vocab_size = model.cfg.vocab_size
        self._encoder_cache: dict[tuple[int, ...], T.Tensor] = {}

    def next_token_logits(self, input_ids, prefix_ids) -> np.ndarray:
        model = self.model
        input_ids = tuple(input_ids)
        prefix_ids = tuple(prefix_ids)
        with T.no_grad():
            if model.has_encoder:
                enc = self._encoder_cache.get(input_ids)
                if enc is None:
                    enc = model.encoder_forward(input_ids)
                    self._encoder_cache[input_ids] = enc
                dec_in = (model.cfg.pad_id,) + prefix_ids
                logits = model.decoder_forward(dec_in, enc)
            else:
                seq = (model.cfg.pad_id,) + input_ids + prefix_ids
                mask = (
                    MaskPattern("causal")
                    if model.cfg.architecture == "decoder_lm"
                    else MaskPattern("causal_with_prefix", prefix_len=len(input_ids) + 1)
                )
                logits = model.decoder_forward(seq, self_mask=mask)
        return logits.data[-1]
