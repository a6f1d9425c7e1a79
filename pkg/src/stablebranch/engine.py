"""Single-tree simulation and ensembles.

Trees are explored depth first from an explicit stack, so memory grows with
the height of the tree rather than its width. Each tree draws from its own
counter-based stream keyed by ``(master_seed, tree_index)``; an ensemble is
therefore a pure function of its inputs whatever the worker count.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigMismatch, NonzeroMean
from .motion import MotionModel, _pick, draw_segment
from .offspring import OffspringLaw, draw_offspring
from .rng import new_state, next_exponential, next_uniform


@dataclass(frozen=True)
class SimConfig:
    """``mode`` is ``"continuous"`` (branching rate ``beta``) or ``"discrete"``."""

    mode: str = "continuous"
    beta: float = 1.0
    budget: int = 10**6
    stop_threshold: float | None = None
    master_seed: int = 0

    def __post_init__(self):
        if self.mode not in ("continuous", "discrete"):
            raise ConfigMismatch(f"unknown mode {self.mode!r}")
        if self.mode == "continuous" and not self.beta > 0:
            raise ConfigMismatch("continuous mode needs beta > 0")
        if int(self.budget) != self.budget or self.budget < 1:
            raise ConfigMismatch("budget must be a positive integer")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigMismatch("master_seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class TreeOutcome:
    m_observed: float
    censored: bool
    stopped_early: bool
    particles_created: int
    generations: int


def check_consistency(law: OffspringLaw, model: MotionModel, config: SimConfig):
    if config.mode == "discrete" and not model.discrete_time:
        raise ConfigMismatch("discrete mode requires a lattice walk")
    if config.mode == "continuous" and model.discrete_time:
        raise ConfigMismatch("continuous mode requires a Brownian or compound Poisson motion")
    if law.p1 >= 1.0:
        raise ConfigMismatch("p_1 = 1 gives an immortal tree")
    if abs(model.mean_per_unit_time) > 1e-12:
        raise NonzeroMean("motion must have mean zero")


_INITIAL_STACK = 1 << 12


@njit(cache=True, nogil=True)
def _tree(
    okind, p0, p1, alpha, kappa, ocdf,
    mkind, eta2, drift, rate, vals, mcdf,
    continuous, beta, budget, x_stop, seed, index,
    pos, gen, cnt,
):
    """Simulate one tree on caller-owned stack arrays.

    Returns ``(m, censored, stopped, created, generations, overflow)``; when
    ``overflow`` is set the stack was too small and the caller must retry
    with larger arrays (the rerun is identical because the stream restarts).
    """
    st = new_state(np.uint64(seed), np.uint64(index))
    cap = pos.shape[0]
    m = 0.0
    created = 1
    maxgen = 0
    if m >= x_stop:
        return m, False, True, created, maxgen, False
    # stack of (position, generation, multiplicity)
    pos[0] = 0.0
    gen[0] = 0
    cnt[0] = 1
    sp = 1
    while sp > 0:
        x = pos[sp - 1]
        g = gen[sp - 1]
        cnt[sp - 1] -= 1
        if cnt[sp - 1] == 0:
            sp -= 1
        if continuous:
            life = next_exponential(st, beta)
            w, top = draw_segment(mkind, eta2, drift, rate, vals, mcdf, life, st)
            if x + top > m:
                m = x + top
                if m >= x_stop:
                    return m, False, True, created, maxgen, False
            k = draw_offspring(okind, p0, p1, alpha, kappa, ocdf, next_uniform(st))
            if k == 0:
                continue
            created += k
            if created > budget:
                return m, True, False, created, maxgen, False
            if sp == cap:
                return m, False, False, created, maxgen, True
            pos[sp] = x + w
            gen[sp] = g + 1
            cnt[sp] = k
            sp += 1
            if g + 1 > maxgen:
                maxgen = g + 1
        else:
            k = draw_offspring(okind, p0, p1, alpha, kappa, ocdf, next_uniform(st))
            if k == 0:
                continue
            created += k
            if created > budget:
                return m, True, False, created, maxgen, False
            if g + 1 > maxgen:
                maxgen = g + 1
            if sp + k > cap:
                return m, False, False, created, maxgen, True
            for _ in range(k):
                y = x + _pick(vals, mcdf, next_uniform(st))
                if y > m:
                    m = y
                    if m >= x_stop:
                        return m, False, True, created, maxgen, False
                pos[sp] = y
                gen[sp] = g + 1
                cnt[sp] = 1
                sp += 1
    return m, False, False, created, maxgen, False


@njit(cache=True, nogil=True)
def _one(
    okind, p0, p1, alpha, kappa, ocdf,
    mkind, eta2, drift, rate, vals, mcdf,
    continuous, beta, budget, x_stop, seed, index,
):
    size = _INITIAL_STACK
    while True:
        pos = np.empty(size)
        gen = np.empty(size, dtype=np.int64)
        cnt = np.empty(size, dtype=np.int64)
        m, c, s, n, g, overflow = _tree(
            okind, p0, p1, alpha, kappa, ocdf,
            mkind, eta2, drift, rate, vals, mcdf,
            continuous, beta, budget, x_stop, seed, index,
            pos, gen, cnt,
        )
        if not overflow:
            return m, c, s, n, g
        size *= 2


@njit(cache=True, nogil=True)
def _batch(
    okind, p0, p1, alpha, kappa, ocdf,
    mkind, eta2, drift, rate, vals, mcdf,
    continuous, beta, budget, x_stop, seed, lo, hi,
    m_out, cens_out, stop_out, created_out, gen_out,
):
    size = _INITIAL_STACK
    pos = np.empty(size)
    gen = np.empty(size, dtype=np.int64)
    cnt = np.empty(size, dtype=np.int64)
    i = lo
    while i < hi:
        m, c, s, n, g, overflow = _tree(
            okind, p0, p1, alpha, kappa, ocdf,
            mkind, eta2, drift, rate, vals, mcdf,
            continuous, beta, budget, x_stop, seed, i,
            pos, gen, cnt,
        )
        if overflow:
            size *= 2
            pos = np.empty(size)
            gen = np.empty(size, dtype=np.int64)
            cnt = np.empty(size, dtype=np.int64)
            continue
        m_out[i] = m
        cens_out[i] = c
        stop_out[i] = s
        created_out[i] = n
        gen_out[i] = g
        i += 1


def _kernel_args(law, model, config):
    x_stop = math.inf if config.stop_threshold is None else float(config.stop_threshold)
    return (
        *law.kernel_args(),
        *model.kernel_args(),
        config.mode == "continuous",
        float(config.beta),
        int(config.budget),
        x_stop,
        np.uint64(config.master_seed),
    )


def simulate_tree(law: OffspringLaw, model: MotionModel, config: SimConfig, tree_index: int) -> TreeOutcome:
    check_consistency(law, model, config)
    m, c, s, n, g = _one(*_kernel_args(law, model, config), np.uint64(tree_index))
    return TreeOutcome(float(m), bool(c), bool(s), int(n), int(g))


class Outcomes:
    """Column-oriented ensemble result; indexing yields :class:`TreeOutcome`."""

    def __init__(self, m_observed, censored, stopped_early, particles_created, generations, stop_threshold=None):
        self.m_observed = np.asarray(m_observed, dtype=float)
        self.censored = np.asarray(censored, dtype=bool)
        self.stopped_early = np.asarray(stopped_early, dtype=bool)
        self.particles_created = np.asarray(particles_created, dtype=np.int64)
        self.generations = np.asarray(generations, dtype=np.int64)
        self.stop_threshold = stop_threshold

    @classmethod
    def from_list(cls, outcomes, stop_threshold=None):
        outcomes = list(outcomes)
        return cls(
            [o.m_observed for o in outcomes],
            [o.censored for o in outcomes],
            [o.stopped_early for o in outcomes],
            [o.particles_created for o in outcomes],
            [o.generations for o in outcomes],
            stop_threshold=stop_threshold,
        )

    def __len__(self):
        return self.m_observed.size

    def __getitem__(self, i):
        return TreeOutcome(
            float(self.m_observed[i]),
            bool(self.censored[i]),
            bool(self.stopped_early[i]),
            int(self.particles_created[i]),
            int(self.generations[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, Outcomes):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, a), getattr(other, a))
            for a in ("m_observed", "censored", "stopped_early", "particles_created", "generations")
        )

    @property
    def censored_fraction(self) -> float:
        return float(self.censored.mean()) if len(self) else 0.0


def run_ensemble(
    law: OffspringLaw,
    model: MotionModel,
    config: SimConfig,
    n_trees: int,
    workers: int = 1,
    chunk_size: int = 4096,
) -> Outcomes:
    """Simulate trees ``0 .. n_trees-1``; the result does not depend on ``workers``."""
    if n_trees < 1 or workers < 1:
        raise ValueError("n_trees and workers must be at least 1")
    check_consistency(law, model, config)
    args = _kernel_args(law, model, config)
    m = np.empty(n_trees)
    cens = np.empty(n_trees, dtype=np.bool_)
    stop = np.empty(n_trees, dtype=np.bool_)
    created = np.empty(n_trees, dtype=np.int64)
    gens = np.empty(n_trees, dtype=np.int64)
    bounds = [(lo, min(lo + chunk_size, n_trees)) for lo in range(0, n_trees, chunk_size)]

    def work(b):
        _batch(*args, b[0], b[1], m, cens, stop, created, gens)

    if workers == 1:
        for b in bounds:
            work(b)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, bounds))
    return Outcomes(m, cens, stop, created, gens, stop_threshold=config.stop_threshold)
