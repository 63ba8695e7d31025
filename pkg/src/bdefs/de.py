"""Binary differential evolution over fixed-length bit masks (minimization).

Trial vectors are built with the agreement-based difference vector,
the "set where the difference is 1, else take the third donor" mutation,
and binomial crossover with one forced mutant position. A trial replaces
its target only when its fitness is strictly lower.

Masks are ``uint8`` numpy arrays of 0/1. Mask bit ``d`` is bound to
feature column ``d``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

log = logging.getLogger(__name__)

FitnessFn = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class DeConfig:
    pop_size: int = 20
    generations: int = 100
    crossover_rate: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.pop_size < 4:
            raise ValueError("pop_size must be >= 4 (target plus three distinct donors)")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if not 0.0 < self.crossover_rate <= 1.0:
            raise ValueError("crossover_rate must lie in (0, 1]")


@dataclass
class RunHistory:
    best_fitness: list[float] = field(default_factory=list)
    best_masks: list[np.ndarray] = field(default_factory=list)
    evaluations: list[int] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["generation", "best_fitness", "evaluations"])
            for g, (f, e) in enumerate(zip(self.best_fitness, self.evaluations)):
                w.writerow([g, f"{f:.17g}", e])


@dataclass
class Population:
    masks: np.ndarray       # (pop_size, d) uint8
    fitness: np.ndarray     # (pop_size,) float64
    generation: int = 0

    def best_index(self) -> int:
        return int(np.argmin(self.fitness))


class DeRunError(RuntimeError):
    """Fitness evaluation failed mid-run; ``history`` holds the completed part."""

    def __init__(self, msg, history: RunHistory):
        super().__init__(msg)
        self.history = history


def mask_to_str(mask) -> str:
    return "".join("1" if b else "0" for b in np.asarray(mask).ravel())


def mask_from_str(s: str) -> np.ndarray:
    s = s.strip()
    if not s or set(s) - {"0", "1"}:
        raise ValueError(f"not a 0/1 mask string: {s[:40]!r}")
    return np.frombuffer(s.encode("ascii"), dtype=np.uint8) - ord("0")


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.shape != b.shape:
        raise ValueError(f"mask length mismatch: {a.shape} vs {b.shape}")
    return a, b


def init_population(cfg: DeConfig, d: int, rng: np.random.Generator) -> np.ndarray:
    """``pop_size`` masks of i.i.d. fair bits."""
    if d < 1:
        raise ValueError("dimensionality must be >= 1")
    return rng.integers(0, 2, size=(cfg.pop_size, d), dtype=np.uint8)


def difference_vector(a, b) -> np.ndarray:
    """0 where ``a`` and ``b`` agree, else ``a``'s bit."""
    a, b = _check_pair(a, b)
    return np.where(a == b, 0, a).astype(np.uint8)


def mutate(diff, donor) -> np.ndarray:
    """1 where ``diff`` is 1, else ``donor``'s bit."""
    diff, donor = _check_pair(diff, donor)
    return np.where(diff == 1, 1, donor).astype(np.uint8)


def crossover(mutant, current, cr: float, rng: np.random.Generator) -> np.ndarray:
    mutant, current = _check_pair(mutant, current)
    if not 0.0 < cr <= 1.0:
        raise ValueError("crossover rate must lie in (0, 1]")
    n = mutant.size
    gamma = rng.random(n)
    # drawn even when cr == 1 so rng consumption does not depend on cr
    d_random = int(rng.integers(n))
    take = gamma <= cr
    take[d_random] = True
    return np.where(take, mutant, current).astype(np.uint8)


def sample_donors(pop_size: int, k: int, rng: np.random.Generator) -> tuple[int, int, int]:
    """Three pairwise-distinct indices, all different from ``k``."""
    picks = rng.permutation(pop_size - 1)[:3]
    picks = picks + (picks >= k)
    return int(picks[0]), int(picks[1]), int(picks[2])


def select(current, current_fitness: float, trial, fitness_fn: FitnessFn):
    """Return ``(mask, fitness, evaluations_used)`` for the survivor."""
    f_trial = float(fitness_fn(trial))
    if f_trial < current_fitness:
        return trial, f_trial, 1
    return current, current_fitness, 1


class _CachedFitness:
    def __init__(self, fn: FitnessFn):
        self.fn = fn
        self.cache: dict[bytes, float] = {}
        self.calls = 0

    def evaluate_many(self, masks: Iterable[np.ndarray], map_fn=map) -> list[float]:
        masks = list(masks)
        keys = [m.tobytes() for m in masks]
        todo: dict[bytes, np.ndarray] = {}
        for key, m in zip(keys, masks):
            if key not in self.cache and key not in todo:
                todo[key] = m
        if todo:
            values = list(map_fn(self.fn, list(todo.values())))
            for key, v in zip(todo, values):
                self.cache[key] = float(v)
            self.calls += len(todo)
        return [self.cache[k] for k in keys]


def run(cfg: DeConfig, d: int, fitness_fn: FitnessFn, *, map_fn=map,
        trace: list | None = None, callback=None):
    """Minimize ``fitness_fn`` over length-``d`` bit masks.

    Trials for a whole generation are built from the population as it
    stood at the start of that generation, evaluated (through ``map_fn``,
    which may be a parallel map), then compared against their targets.
    Entry ``g`` of the history is the population best after generation
    ``g``; entry 0 is the initial population.

    If ``trace`` is a list, ``(generation, k, u1, u2, u3)`` is appended for
    every trial built.

    Returns ``(best_mask, best_fitness, history)``.
    """
    rng = np.random.default_rng(cfg.seed)
    masks = init_population(cfg, d, rng)
    fit = _CachedFitness(fitness_fn)
    history = RunHistory()

    def record(pop: Population):
        b = pop.best_index()
        history.best_fitness.append(float(pop.fitness[b]))
        history.best_masks.append(pop.masks[b].copy())
        history.evaluations.append(fit.calls)

    try:
        fitness = np.array(fit.evaluate_many(masks, map_fn), dtype=np.float64)
    except Exception as exc:
        raise DeRunError(f"fitness failed on the initial population: {exc}", history) from exc
    pop = Population(masks, fitness, 0)
    record(pop)

    for gen in range(1, cfg.generations + 1):
        trials = np.empty_like(pop.masks)
        for k in range(cfg.pop_size):
            u1, u2, u3 = sample_donors(cfg.pop_size, k, rng)
            if trace is not None:
                trace.append((gen, k, u1, u2, u3))
            diff = difference_vector(pop.masks[u1], pop.masks[u2])
            mutant = mutate(diff, pop.masks[u3])
            trials[k] = crossover(mutant, pop.masks[k], cfg.crossover_rate, rng)
        try:
            trial_fit = fit.evaluate_many(trials, map_fn)
        except Exception as exc:
            raise DeRunError(f"fitness failed in generation {gen}: {exc}", history) from exc
        for k in range(cfg.pop_size):
            # same comparison as select(), with the value already computed
            if trial_fit[k] < pop.fitness[k]:
                pop.masks[k] = trials[k]
                pop.fitness[k] = trial_fit[k]
        pop.generation = gen
        record(pop)
        if callback is not None:
            callback(gen, pop)

    b = pop.best_index()
    log.debug("BDE finished: best fitness %.6f after %d evaluations",
              pop.fitness[b], fit.calls)
    return pop.masks[b].copy(), float(pop.fitness[b]), history
