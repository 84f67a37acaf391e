"""Byte-level BPE vocabulary with reserved sentinel ids.

Layout is fixed and dense: specials (pad, eos, unk) first, then the 256
single-byte pieces, then learned merges, and finally `num_sentinels`
sentinel ids occupying the top of the id space. Byte fallback makes
encode/decode lossless on arbitrary byte strings, and sentinels can
never be produced by encoding natural text.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import DataError, ParameterError

PAD_PIECE = "<pad>"
EOS_PIECE = "</s>"
UNK_PIECE = "<unk>"
NUM_SPECIALS = 3

# Display glyphs for the first sentinels; the rest are numbered.
_SENTINEL_GLYPHS = ("<X>", "<Y>", "<Z>")


def sentinel_piece(k: int) -> str:
    return _SENTINEL_GLYPHS[k] if k < len(_SENTINEL_GLYPHS) else f"<Z{k}>"


@dataclass(frozen=True)
class TokenSequence:
    """Ordered token ids; thin wrapper used at module boundaries."""

    ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class Vocabulary:
    pieces: list[bytes | str]  # bytes for byte/merge pieces, str for specials/sentinels
    num_sentinels: int
    merges: list[tuple[bytes, bytes]] = field(default_factory=list)

    pad_id: int = 0
    eos_id: int = 1
    unk_id: int = 2

    def __post_init__(self):
        self._piece_to_id = {p: i for i, p in enumerate(self.pieces)}
        self._merge_rank = {pair: r for r, pair in enumerate(self.merges)}
        self._byte_base = NUM_SPECIALS

    @property
    def size(self) -> int:
        return len(self.pieces)

    @property
    def first_sentinel(self) -> int:
        return self.size - self.num_sentinels

    def sentinel_id(self, k: int) -> int:
        if not 0 <= k < self.num_sentinels:
            raise ParameterError(
                f"sentinel index {k} out of range [0, {self.num_sentinels})"
            )
        return self.first_sentinel + k

    def is_sentinel(self, token_id: int) -> bool:
        return self.first_sentinel <= token_id < self.size

    def is_special(self, token_id: int) -> bool:
        return token_id < NUM_SPECIALS or self.is_sentinel(token_id)

    # -- encode / decode ------------------------------------------------
    def encode(self, text: str) -> TokenSequence:
        """Greedy BPE: repeatedly apply the earliest-learned applicable merge.

        Byte fallback guarantees every input is representable, so <unk>
        is never produced.
        """
        data = text.encode("utf-8")
        symbols: list[bytes] = [bytes([b]) for b in data]
        if not symbols:
            return TokenSequence(())
        while len(symbols) > 1:
            best_rank = None
            for i in range(len(symbols) - 1):
                rank = self._merge_rank.get((symbols[i], symbols[i + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank = rank
            if best_rank is None:
                break
            left, right = self.merges[best_rank]
            merged: list[bytes] = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
                    merged.append(left + right)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        return TokenSequence(tuple(self._piece_to_id[s] for s in symbols))

    def decode(self, ids) -> str:
        ids = ids.ids if isinstance(ids, TokenSequence) else tuple(ids)
        out: list[bytes] = []
        for i in ids:
            piece = self.pieces[i]
            out.append(piece if isinstance(piece, bytes) else piece.encode("utf-8"))
        return b"".join(out).decode("utf-8", errors="replace")

    def decode_pretty(self, ids) -> str:
        """Decode with specials/sentinels shown as space-separated glyphs."""
        ids = ids.ids if isinstance(ids, TokenSequence) else tuple(ids)
        parts: list[str] = []
        run: list[int] = []
        for i in ids:
            if self.is_special(i):
                if run:
                    parts.append(self.decode(run))
                    run = []
                parts.append(self.pieces[i] if isinstance(self.pieces[i], str) else self.decode([i]))
            else:
                run.append(i)
        if run:
            parts.append(self.decode(run))
        return " ".join(parts)

    # -- serialization ---------------------------------------------------
    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"bytebpe-v1 size={self.size} sentinels={self.num_sentinels} merges={len(self.merges)}\n")
            for piece in self.pieces:
                if isinstance(piece, str):
                    f.write("s " + piece + "\n")
                else:
                    f.write("b " + _escape(piece) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip().split()
            if not header or header[0] != "bytebpe-v1":
                raise DataError(f"not a vocabulary file: {path}")
            fields = dict(kv.split("=") for kv in header[1:])
            size = int(fields["size"])
            num_sentinels = int(fields["sentinels"])
            pieces: list[bytes | str] = []
            for line in f:
                line = line.rstrip("\n")
                if not line:
                    continue
                kind, _, body = line.partition(" ")
                pieces.append(body if kind == "s" else _unescape(body))
            if len(pieces) != size:
                raise DataError(f"vocabulary file {path} lists {len(pieces)} pieces, header says {size}")
        merges = _recover_merges(pieces, num_sentinels)
        return cls(pieces=pieces, num_sentinels=num_sentinels, merges=merges)


def _escape(piece: bytes) -> str:
    out = []
    for b in piece:
        if 33 <= b <= 126 and b != 0x5C:  # printable, not backslash
            out.append(chr(b))
        else:
            out.append(f"\\x{b:02x}")
    return "".join(out)


def _unescape(body: str) -> bytes:
    out = bytearray()
    i = 0
    while i < len(body):
        if body[i] == "\\" and i + 4 <= len(body) and body[i + 1] == "x":
            out.append(int(body[i + 2 : i + 4], 16))
            i += 4
        else:
            out.append(ord(body[i]))
            i += 1
    return bytes(out)


def _recover_merges(pieces: list[bytes | str], num_sentinels: int) -> list[tuple[bytes, bytes]]:
    """Rebuild merge order from the piece list (merges are stored in rank order)."""
    known: set[bytes] = set()
    merges: list[tuple[bytes, bytes]] = []
    byte_pieces = [p for p in pieces[NUM_SPECIALS:len(pieces) - num_sentinels] if isinstance(p, bytes)]
    for p in byte_pieces:
        if len(p) == 1:
            known.add(p)
    for p in byte_pieces:
        if len(p) == 1:
            continue
        # the training loop only ever concatenates two existing pieces,
        # so the unique split into known halves is recoverable greedily
        for cut in range(1, len(p)):
            if p[:cut] in known and p[cut:] in known:
                merges.append((p[:cut], p[cut:]))
                known.add(p)
                break
        else:
            raise DataError(f"piece {p!r} is not a product of earlier pieces")
    return merges


def train_vocab(corpus, target_size: int, num_sentinels: int = 100) -> Vocabulary:
    """Greedy byte-pair-merge training over an iterable of text chunks.

    Exactly `target_size` entries come out: 3 specials + 256 byte pieces
    + learned merges + `num_sentinels` sentinels. Ties between equally
    frequent pairs go to the lexicographically smaller pair so training
    is deterministic regardless of corpus shard order.
    """
    if target_size <= 256 + num_sentinels:
        raise ParameterError(
            f"target_size {target_size} must exceed 256 + {num_sentinels} sentinels"
        )
    streams = [chunk.encode("utf-8") for chunk in corpus]
    if not any(streams):
        raise DataError("empty corpus")

    sequences: list[list[bytes]] = [[bytes([b]) for b in s] for s in streams if s]
    num_merges = target_size - 256 - NUM_SPECIALS - num_sentinels
    if num_merges < 0:
        raise ParameterError(
            f"target_size {target_size} leaves no room for {NUM_SPECIALS} specials, "
            f"256 byte pieces, and {num_sentinels} sentinels"
        )
    merges: list[tuple[bytes, bytes]] = []
    for _ in range(num_merges):
        counts: dict[tuple[bytes, bytes], int] = {}
        for seq in sequences:
            for i in range(len(seq) - 1):
                pair = (seq[i], seq[i + 1])
                counts[pair] = counts.get(pair, 0) + 1
        if not counts:
            raise DataError(
                f"corpus supports only {len(merges)} merges; cannot reach target_size {target_size}"
            )
        best = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merges.append(best)
        left, right = best
        joined = left + right
        for si, seq in enumerate(sequences):
            out: list[bytes] = []
            i = 0
            while i < len(seq):
                if i + 1 < len(seq) and seq[i] == left and seq[i + 1] == right:
                    out.append(joined)
                    i += 2
                else:
                    out.append(seq[i])
                    i += 1
            sequences[si] = out

    pieces: list[bytes | str] = [PAD_PIECE, EOS_PIECE, UNK_PIECE]
    pieces.extend(bytes([b]) for b in range(256))
    pieces.extend(left + right for left, right in merges)
    pieces.extend(sentinel_piece(k) for k in range(num_sentinels))
    return Vocabulary(pieces=pieces, num_sentinels=num_sentinels, merges=merges)
