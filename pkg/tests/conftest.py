"""Shared fixtures: a scripted rng and the worked-example word vocabulary."""

import numpy as np
import pytest

from t2tlab.vocab import Vocabulary, sentinel_piece


class FakeRng:
    """Scripted stand-in for Rng: replays queued draws, in call order."""

    def __init__(self, randoms=(), ints=(), choices=(), perms=()):
        self._randoms = [np.asarray(r, dtype=float) for r in randoms]
        self._ints = list(ints)
        self._choices = [np.asarray(c, dtype=np.int64) for c in choices]
        self._perms = [np.asarray(p, dtype=np.int64) for p in perms]

    def random(self, size=None):
        out = self._randoms.pop(0)
        assert size is None or out.shape == ((size,) if isinstance(size, int) else tuple(size))
        return out

    def integers(self, low, high=None, size=None):
        value = self._ints.pop(0)
        assert low <= value < (high if high is not None else low)
        return value

    def choice(self, n, size=None, replace=True):
        out = self._choices.pop(0)
        assert out.shape == (size,)
        return out

    def permutation(self, n):
        out = self._perms.pop(0)
        assert len(out) == n
        return out


PARTY_WORDS = ["Thank", "you", "for", "inviting", "me", "to", "your", "party", "last", "week", "."]
EXTRA_WORDS = ["apple"]


@pytest.fixture(scope="session")
def party_vocab():
    """Word-per-token vocabulary for the worked corruption examples."""
    pieces = ["<pad>", "</s>", "<unk>"]
    pieces += [w.encode("utf-8") for w in PARTY_WORDS + EXTRA_WORDS]
    pieces += [sentinel_piece(k) for k in range(3)]
    return Vocabulary(pieces=pieces, num_sentinels=3, merges=[])


def word_ids(vocab, words):
    lookup = {w: 3 + i for i, w in enumerate(PARTY_WORDS + EXTRA_WORDS)}
    return tuple(lookup[w] for w in words)
