"""Training: schedules, example packing, the optimizer, the step loop,
checkpointing/resume, and the partial fine-tuning schemes.

Determinism contract: the data stream is a pure function of the global
example index (each example gets the rng stream keyed by its index), the
optimizer is deterministic, and checkpoints carry the optimizer state
plus the data cursor — so rerunning with one seed, or resuming from a
mid-run checkpoint, reproduces parameters bit for bit.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .corruption import ObjectiveSpec, apply_objective, to_lm_concat
from .errors import ConfigurationError, DataError, ParameterError
from .model import MaskPattern, ModelConfig, TextToTextModel, init_params
from .rng import Rng
from .vocab import Vocabulary


# -- learning-rate schedules ----------------------------------------------


@dataclass(frozen=True)
class InverseSqrtSchedule:
    warmup_steps: int = 10_000

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ParameterError("warmup_steps must be >= 1")

    def __call__(self, step: int) -> float:
        return 1.0 / math.sqrt(max(step, self.warmup_steps))


@dataclass(frozen=True)
class ConstantSchedule:
    lr: float = 0.001

    def __call__(self, step: int) -> float:
        return self.lr


def learning_rate(schedule, step: int) -> float:
    if step < 0:
        raise ParameterError("step must be >= 0")
    return schedule(step)


# -- packing ----------------------------------------------------------------


@dataclass
class PackedEntry:
    """Examples laid out back to back; nothing is padded.

    Attention must be block-diagonal per segment on both sides, and
    relative positions restart at 0 inside each segment.
    """

    examples: list[tuple[list[int], list[int]]] = field(default_factory=list)

    def input_len(self) -> int:
        return sum(len(i) for i, _ in self.examples)

    def target_len(self) -> int:
        return sum(len(t) for _, t in self.examples)

    def fits(self, inp, tgt, max_len: int) -> bool:
        return self.input_len() + len(inp) <= max_len and self.target_len() + len(tgt) <= max_len

    def encoder_arrays(self):
        ids, segments, positions = [], [], []
        for seg, (inp, _) in enumerate(self.examples):
            ids.extend(inp)
            segments.extend([seg] * len(inp))
            positions.extend(range(len(inp)))
        return ids, np.array(segments, dtype=np.int64), np.array(positions, dtype=np.int64)

    def decoder_arrays(self, pad_id: int):
        dec_in, labels, segments, positions = [], [], [], []
        for seg, (_, tgt) in enumerate(self.examples):
            dec_in.extend([pad_id] + list(tgt[:-1]))
            labels.extend(tgt)
            segments.extend([seg] * len(tgt))
            positions.extend(range(len(tgt)))
        return dec_in, labels, np.array(segments, dtype=np.int64), np.array(positions, dtype=np.int64)


@dataclass
class PackedBatch:
    entries: list[PackedEntry]

    def total_tokens(self) -> int:
        return sum(e.input_len() + e.target_len() for e in self.entries)

    def segment_count(self) -> int:
        return sum(len(e.examples) for e in self.entries)


def pack_batch(examples, budget: int, max_len: int) -> tuple[PackedBatch, list]:
    """Greedy first-fit packing.

    Consumes examples until adding one would push total tokens past the
    budget; each consumed pair lands in the first entry whose input and
    target sides both still fit. Returns (batch, leftover examples).
    Entries are ragged, so no padding exists to minimize.
    """
    if budget < max_len:
        raise ParameterError(f"budget {budget} must be >= max_len {max_len}")
    entries: list[PackedEntry] = []
    used = 0
    examples = list(examples)
    consumed = 0
    for inp, tgt in examples:
        if len(inp) > max_len or len(tgt) > max_len:
            raise DataError(
                f"example ({len(inp)}, {len(tgt)}) exceeds max_len {max_len}; truncate upstream"
            )
        size = len(inp) + len(tgt)
        if used + size > budget:
            break
        placed = False
        for entry in entries:
            if entry.fits(inp, tgt, max_len):
                entry.examples.append((list(inp), list(tgt)))
                placed = True
                break
        if not placed:
            entries.append(PackedEntry(examples=[(list(inp), list(tgt))]))
        used += size
        consumed += 1
    return PackedBatch(entries=entries), examples[consumed:]


# -- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    step_count: int = 0
    skipped_steps: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class AdamOptimizer:
    """Bias-corrected adaptive optimizer over a named parameter dict.

    Parameters are replaced, never mutated, so shared and tied entries
    (which live once in the dict) stay consistent. A non-finite gradient
    anywhere skips the whole step and bumps a counter.
    """

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8,
                 grad_clip: float | None = None):
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon
        self.grad_clip = grad_clip
        self.state = AdamState()

    def step(self, params: dict[str, T.Tensor], lr: float, trainable=None) -> dict[str, T.Tensor]:
        names = [n for n in sorted(params) if trainable is None or n in trainable]
        grads = {}
        for name in names:
            g = params[name].grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                self.state.skipped_steps += 1
                return params
            grads[name] = g
        if not grads:
            return params
        if self.grad_clip is not None:
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > self.grad_clip:
                scale = self.grad_clip / norm
                grads = {n: g * scale for n, g in grads.items()}
        self.state.step_count += 1
        t = self.state.step_count
        out = dict(params)
        for name, g in grads.items():
            m = self.state.m.get(name)
            v = self.state.v.get(name)
            if m is None:
                m = np.zeros_like(g)
                v = np.zeros_like(g)
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * (g * g)
            self.state.m[name] = m
            self.state.v[name] = v
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            new_data = params[name].data - lr * m_hat / (np.sqrt(v_hat) + self.epsilon)
            out[name] = T.Tensor(new_data.astype(params[name].data.dtype), requires_grad=True)
        return out

    # serialization into checkpoint extras/arrays
    def export_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        for name, arr in self.state.m.items():
            arrays[f"opt/m/{name}"] = arr
        for name, arr in self.state.v.items():
            arrays[f"opt/v/{name}"] = arr
        return arrays

    def export_extras(self) -> dict:
        return {"adam_step_count": self.state.step_count,
                "adam_skipped_steps": self.state.skipped_steps}

    def restore(self, arrays: dict[str, np.ndarray], extras: dict) -> None:
        self.state = AdamState(
            step_count=int(extras.get("adam_step_count", 0)),
            skipped_steps=int(extras.get("adam_skipped_steps", 0)),
            m={k[len("opt/m/"):]: v.copy() for k, v in arrays.items() if k.startswith("opt/m/")},
            v={k[len("opt/v/"):]: v.copy() for k, v in arrays.items() if k.startswith("opt/v/")},
        )


def optimizer_step(params, grads, lr, state: AdamOptimizer | None = None):
    """Functional wrapper: apply grads (name -> array) through Adam."""
    opt = state or AdamOptimizer()
    for name, g in grads.items():
        params[name].grad = g
    out = opt.step(params, lr)
    for name in grads:
        params[name].zero_grad()
    return out, opt


# -- data sources -------------------------------------------------------------


class CorruptionSource:
    """Pretraining examples: fixed-length chunks of a token stream pushed
    through an unsupervised objective.

    Example i is a pure function of (seed, i): the chunk index maps into
    the corpus and the objective draws from the stream keyed by i. With
    repeat=False the source raises once the corpus is exhausted.
    """

    def __init__(self, token_docs, objective: ObjectiveSpec, vocab: Vocabulary,
                 seed: int, chunk_len: int = 128, repeat: bool = True,
                 max_tokens: int | None = None):
        stream: list[int] = []
        for doc in token_docs:
            stream.extend(doc)
            if max_tokens is not None and len(stream) >= max_tokens:
                stream = stream[:max_tokens]
                break
        if len(stream) < chunk_len:
            raise DataError(f"corpus has {len(stream)} tokens, need at least {chunk_len}")
        self.stream = stream
        self.objective = objective
        self.vocab = vocab
        self.seed = seed
        self.chunk_len = chunk_len
        self.repeat = repeat
        self.num_chunks = len(stream) // chunk_len

    def example_at(self, index: int) -> tuple[list[int], list[int]]:
        if not self.repeat and index >= self.num_chunks:
            raise DataError(
                f"corpus exhausted at example {index} ({self.num_chunks} chunks) and repeats are disabled"
            )
        chunk_idx = index % self.num_chunks
        chunk = self.stream[chunk_idx * self.chunk_len:(chunk_idx + 1) * self.chunk_len]
        rng = Rng(self.seed, (0xC0, index))
        pair = apply_objective(self.objective, chunk, rng, self.vocab)
        target = list(pair.target_ids) + [self.vocab.eos_id]
        return list(pair.input_ids), target


class SupervisedSource:
    """Fine-tuning examples: a fixed list of (input, target) token pairs,
    visited sequentially with a per-epoch reshuffle."""

    def __init__(self, pairs, seed: int, eos_id: int = 1, append_eos: bool = True):
        if not pairs:
            raise DataError("no supervised examples")
        self.pairs = [
            (list(i), list(t) + ([eos_id] if append_eos else [])) for i, t in pairs
        ]
        self.seed = seed

    def example_at(self, index: int) -> tuple[list[int], list[int]]:
        epoch, offset = divmod(index, len(self.pairs))
        rng = Rng(self.seed, (0x5F, epoch))
        order = list(range(len(self.pairs)))
        rng.shuffle(order)
        return self.pairs[order[offset]]


# -- train loop -----------------------------------------------------------------


@dataclass
class TrainConfig:
    total_steps: int
    batch_token_budget: int = 2**16
    max_seq_len: int = 512
    schedule: object = field(default_factory=InverseSqrtSchedule)
    checkpoint_every: int = 5000
    seed: int = 0
    dropout: bool = True

    def __post_init__(self):
        if self.batch_token_budget < self.max_seq_len:
            raise ParameterError("batch_token_budget must be >= max_seq_len")
        if self.total_steps < 0:
            raise ParameterError("total_steps must be >= 0")


@dataclass
class TrainResult:
    checkpoints: list[Checkpoint]
    log_records: list[dict]
    model: TextToTextModel


def packed_loss(model: TextToTextModel, batch: PackedBatch, rng: Rng, training: bool) -> tuple[T.Tensor, int]:
    """Token-mean cross entropy over a packed batch.

    Per entry: one encoder pass over the concatenated inputs and one
    decoder pass over the shifted targets, with segment-blocked masks and
    per-segment positions. Single-stack variants concatenate each pair
    and score only the target region.
    """
    cfg = model.cfg
    losses = []
    counts = []
    for ei, entry in enumerate(batch.entries):
        erng = rng.child(ei)
        if model.has_encoder:
            enc_ids, enc_seg, enc_pos = entry.encoder_arrays()
            dec_in, labels, dec_seg, dec_pos = entry.decoder_arrays(cfg.pad_id)
            enc_out = model.encoder_forward(enc_ids, rng=erng.child(0), training=training,
                                            segments=enc_seg, positions=enc_pos)
            logits = model.decoder_forward(dec_in, enc_out, rng=erng.child(1), training=training,
                                           segments=dec_seg, positions=dec_pos,
                                           encoder_segments=enc_seg)
            losses.append(T.cross_entropy(logits, labels) * float(len(labels)))
            counts.append(len(labels))
        else:
            seq_ids, labels, seg, pos, loss_mask, prefix_lens = [], [], [], [], [], []
            for s, (inp, tgt) in enumerate(entry.examples):
                concat, prefix_len = to_lm_concat(
                    __import__("t2tlab.corruption", fromlist=["CorruptionPair"]).CorruptionPair(
                        tuple(inp), tuple(tgt)))
                shifted = [cfg.pad_id] + list(concat[:-1])
                seq_ids.extend(shifted)
                labels.extend(concat)
                seg.extend([s] * len(concat))
                pos.extend(range(len(concat)))
                loss_mask.extend([False] * prefix_len + [True] * len(tgt))
                prefix_lens.append(prefix_len)
            mask = _single_stack_mask(cfg, entry, prefix_lens)
            logits = model.decoder_forward(
                seq_ids, self_mask=mask, rng=erng.child(1), training=training,
                segments=np.array(seg), positions=np.array(pos))
            masked_labels = [l if keep else -1 for l, keep in zip(labels, loss_mask)]
            n_scored = sum(loss_mask)
            losses.append(T.cross_entropy(logits, masked_labels, ignore_id=-1) * float(n_scored))
            counts.append(n_scored)
    total = losses[0]
    for l in losses[1:]:
        total = total + l
    return total * (1.0 / max(sum(counts), 1)), sum(counts)


def _single_stack_mask(cfg: ModelConfig, entry: PackedEntry, prefix_lens) -> MaskPattern:
    if cfg.architecture == "prefix_lm":
        if len(entry.examples) != 1:
            raise ConfigurationError("prefix-LM packing needs one example per entry")
        # the shifted sequence starts with pad; pad plus the input tokens
        # are the visible prefix
        return MaskPattern("causal_with_prefix", prefix_len=prefix_lens[0] + 1)
    return MaskPattern("causal")


def train(model: TextToTextModel, source, config: TrainConfig,
          out_dir: str | None = None, trainable_fn=None,
          optimizer: AdamOptimizer | None = None,
          resume_from: Checkpoint | None = None) -> TrainResult:
    """Run the step loop; returns checkpoints (in memory, plus files when
    out_dir is given) and the per-step log records.

    trainable_fn(step) -> set of parameter names or None for all.
    """
    opt = optimizer or AdamOptimizer()
    cursor = 0
    start_step = 0
    if resume_from is not None:
        model.cfg.fingerprint()  # touch for clarity; restore validates
        resume_from.restore_into(model.params, model.cfg.fingerprint())
        opt.restore(resume_from.arrays, resume_from.extras)
        cursor = int(resume_from.extras.get("example_cursor", 0))
        start_step = resume_from.step

    out_path = Path(out_dir) if out_dir else None
    if out_path:
        out_path.mkdir(parents=True, exist_ok=True)
    log_records: list[dict] = []
    checkpoints: list[Checkpoint] = []
    tokens_seen = int(resume_from.extras.get("tokens_seen", 0)) if resume_from else 0

    def snapshot(step: int) -> Checkpoint:
        ckpt = Checkpoint.from_params(step, model.params, model.cfg.fingerprint(),
                                      extras={"example_cursor": cursor, "tokens_seen": tokens_seen,
                                              **opt.export_extras()})
        ckpt.arrays.update({k: v.copy() for k, v in opt.export_arrays().items()})
        checkpoints.append(ckpt)
        if out_path:
            ckpt.save(out_path / f"checkpoint_{step:08d}.ckpt")
        return ckpt

    if start_step == 0:
        snapshot(0)

    log_file = open(out_path / "train_log.ndjson", "a", encoding="utf-8") if out_path else None
    try:
        for step in range(start_step, config.total_steps):
            started = time.monotonic()
            examples = []
            used = 0
            while used < config.batch_token_budget:
                pair = source.example_at(cursor)
                size = len(pair[0]) + len(pair[1])
                if examples and used + size > config.batch_token_budget:
                    break
                examples.append(pair)
                cursor += 1
                used += size
            batch, leftover = pack_batch(examples, config.batch_token_budget, config.max_seq_len)
            assert not leftover
            step_rng = Rng(config.seed, (0xA1, step))
            T.zero_grads(model.params)
            loss, token_count = packed_loss(model, batch, step_rng, training=config.dropout)
            T.backward(loss)
            trainable = trainable_fn(step) if trainable_fn else None
            model.params = opt.step(model.params, learning_rate(config.schedule, step), trainable)
            tokens_seen += batch.total_tokens()
            record = {
                "step": step,
                "loss": float(loss.data),
                "lr": learning_rate(config.schedule, step),
                "tokens_seen": tokens_seen,
                "wall_ms": round((time.monotonic() - started) * 1000, 3),
            }
            log_records.append(record)
            if log_file:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
            if (step + 1) % config.checkpoint_every == 0 and (step + 1) != config.total_steps:
                snapshot(step + 1)
        if config.total_steps > start_step or start_step == 0:
            if not checkpoints or checkpoints[-1].step != config.total_steps:
                if config.total_steps > 0:
                    snapshot(config.total_steps)
    finally:
        if log_file:
            log_file.close()
    return TrainResult(checkpoints=checkpoints, log_records=log_records, model=model)


# -- partial fine-tuning -----------------------------------------------------


@dataclass(frozen=True)
class AdapterConfig:
    inner_dim: int
    enabled: bool = True

    def __post_init__(self):
        if self.inner_dim < 1:
            raise ParameterError("adapter inner_dim must be >= 1")


def insert_adapters(model: TextToTextModel, adapter: AdapterConfig) -> TextToTextModel:
    """Add a zero-initialized bottleneck after every feed-forward sublayer.

    The second projection starts at zero, so outputs are bit-identical to
    the base model until training moves the adapters.
    """
    if not adapter.enabled:
        return model
    if model.cfg.adapter_dim is not None:
        raise ConfigurationError("model already has adapters")
    cfg = replace(model.cfg, adapter_dim=adapter.inner_dim)
    reference = init_params(cfg, Rng(0, (0xAD,)))
    params = dict(model.params)
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    init_rng = Rng(0, (0xAD, 1))
    for name in reference:
        if "/adapter/" not in name or name in params:
            continue
        shape = reference[name].data.shape
        if name.endswith("/wi"):
            params[name] = T.Tensor(init_rng.normal(shape, 1.0 / math.sqrt(cfg.d_model)),
                                    requires_grad=True, dtype=dtype)
        else:
            params[name] = T.Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)
    return TextToTextModel(cfg, params=params)


def adapter_trainable_names(model: TextToTextModel) -> set[str]:
    """Adapters plus every layer-norm gain."""
    return {n for n in model.params if "/adapter/" in n or n.endswith("norm")}


@dataclass(frozen=True)
class UnfreezeSchedule:
    num_layers: int
    total_steps: int

    def __post_init__(self):
        if self.total_steps < self.num_layers:
            raise ParameterError(
                f"total_steps {self.total_steps} cannot host {self.num_layers} episodes"
            )

    @property
    def episode_len(self) -> int:
        return self.total_steps // self.num_layers

    def episode(self, step: int) -> int:
        """1-based episode for a step; the division remainder extends the
        final episode."""
        if not 0 <= step < self.total_steps:
            raise ParameterError(f"step {step} outside [0, {self.total_steps})")
        return min(step // self.episode_len, self.num_layers - 1) + 1

    def trainable_layers(self, step: int) -> set[int]:
        """1-based layer indices trainable at `step`: the top n layers in
        episode n (episode 1 trains only the final layer)."""
        n = self.episode(step)
        return set(range(self.num_layers - n + 1, self.num_layers + 1))


def gradual_unfreeze_schedule(num_layers: int, total_steps: int) -> UnfreezeSchedule:
    return UnfreezeSchedule(num_layers=num_layers, total_steps=total_steps)


def unfreeze_trainable_names(model: TextToTextModel, schedule: UnfreezeSchedule, step: int) -> set[str]:
    """Parameter names trainable at `step`: the unfrozen layers of both
    stacks, plus the embedding (tied with the output projection)."""
    layers = schedule.trainable_layers(step)
    names = {"embedding"}
    for name in model.params:
        for layer in layers:
            if f"/layer{layer - 1}/" in name:
                names.add(name)
    return names


def select_best_checkpoint(checkpoints: list[Checkpoint],
                           scores_per_task: dict[str, list[float]]) -> dict[str, Checkpoint]:
    """Per-task argmax over checkpoints; ties go to the earliest step."""
    if not checkpoints:
        raise ParameterError("no checkpoints to select from")
    chosen = {}
    for task, scores in scores_per_task.items():
        if len(scores) != len(checkpoints):
            raise ParameterError(
                f"task {task!r} supplies {len(scores)} scores for {len(checkpoints)} checkpoints"
            )
        best = 0
        for i in range(1, len(scores)):
            if scores[i] > scores[best]:
                best = i
        chosen[task] = checkpoints[best]
    return chosen
