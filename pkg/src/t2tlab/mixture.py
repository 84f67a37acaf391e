"""Multi-task sampling distributions and mixture streams.

Rates follow the capped-proportional rule r_m = min(e_m, K) / sum
min(e_n, K); temperature scaling raises those rates to 1/T and
renormalizes (T=1 reduces to the capped rule); equal mixing ignores
sizes entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ParameterError
from .rng import Rng

DEFAULT_TEMPERATURE_CAP = 2**21


@dataclass(frozen=True)
class TaskStream:
    name: str
    example_count: int
    stream: object = None  # handle to the examples; opaque here

    def __post_init__(self):
        if self.example_count < 1:
            raise ParameterError(f"task {self.name!r} needs example_count >= 1")


@dataclass(frozen=True)
class MixingStrategy:
    kind: str  # examples_proportional | temperature | equal
    cap: int = DEFAULT_TEMPERATURE_CAP  # K
    temperature: float = 1.0  # T

    def __post_init__(self):
        if self.kind not in ("examples_proportional", "temperature", "equal"):
            raise ParameterError(f"unknown mixing strategy {self.kind!r}")
        if self.cap < 1:
            raise ParameterError("cap K must be >= 1")
        if self.temperature < 1:
            raise ParameterError("temperature T must be >= 1")


def examples_proportional(cap: int) -> MixingStrategy:
    return MixingStrategy("examples_proportional", cap=cap)


def temperature(t: float, cap: int = DEFAULT_TEMPERATURE_CAP) -> MixingStrategy:
    return MixingStrategy("temperature", cap=cap, temperature=t)


def equal() -> MixingStrategy:
    return MixingStrategy("equal")


@dataclass(frozen=True)
class MixtureSpec:
    tasks: tuple[TaskStream, ...]
    strategy: MixingStrategy

    def __post_init__(self):
        if not self.tasks:
            raise ParameterError("mixture needs at least one task")
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise ParameterError(f"duplicate task names in mixture: {names}")


def mixing_rates(spec: MixtureSpec) -> np.ndarray:
    """Probability of drawing each task, in spec order."""
    n = len(spec.tasks)
    strategy = spec.strategy
    if strategy.kind == "equal":
        return np.full(n, 1.0 / n)
    capped = np.array([min(t.example_count, strategy.cap) for t in spec.tasks], dtype=float)
    rates = capped / capped.sum()
    if strategy.kind == "temperature":
        rates = rates ** (1.0 / strategy.temperature)
        rates = rates / rates.sum()
    return rates


def sample_task(spec: MixtureSpec, rng: Rng) -> int:
    """Draw a task index according to mixing_rates."""
    rates = mixing_rates(spec)
    u = float(rng.random())
    return int(np.searchsorted(np.cumsum(rates), u, side="right").clip(0, len(rates) - 1))


def leave_one_out(spec: MixtureSpec, excluded: str) -> MixtureSpec:
    """Spec minus one task; rates renormalize on the next call."""
    names = [t.name for t in spec.tasks]
    if excluded not in names:
        raise ParameterError(f"task {excluded!r} not in mixture {names}")
    remaining = tuple(t for t in spec.tasks if t.name != excluded)
    if not remaining:
        raise ParameterError("cannot remove the only task in a mixture")
    return replace(spec, tasks=remaining)


@dataclass
class MixtureStream:
    """Deterministic example stream over a mixture.

    Task choice at global index i uses the stream keyed by i, so batches
    are reproducible regardless of how consumers chunk the stream. Within
    a task, examples run sequentially and reshuffle at each wraparound
    with an epoch-keyed stream.
    """

    spec: MixtureSpec
    examples_by_task: dict[str, list]
    seed: int
    _cursors: dict[str, int] = field(default_factory=dict)
    _orders: dict[str, list] = field(default_factory=dict)

    def _order(self, task: TaskStream, epoch: int) -> list:
        key = (task.name, epoch)
        if key not in self._orders:
            rng = Rng(self.seed, (hash_name(task.name), epoch))
            order = list(range(len(self.examples_by_task[task.name])))
            rng.shuffle(order)
            self._orders[(task.name, epoch)] = order
        return self._orders[(task.name, epoch)]

    def example_at(self, index: int):
        """(task_index, example) for global example index `index`."""
        rng = Rng(self.seed, (0x31, index))
        ti = sample_task(self.spec, rng)
        task = self.spec.tasks[ti]
        pool = self.examples_by_task[task.name]
        cursor = self._cursors.get(task.name, 0)
        epoch, offset = divmod(cursor, len(pool))
        order = self._order(task, epoch)
        self._cursors[task.name] = cursor + 1
        return ti, pool[order[offset]]


def hash_name(name: str) -> int:
    """Stable small hash for stream derivation (process-independent)."""
    import zlib

    return zlib.crc32(name.encode("utf-8")) & 0x7FFFFFFF
