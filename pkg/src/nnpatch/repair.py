"""Particle swarm repair over a localized weight set.

Fitness rewards patching failed samples and keeping sampled passed samples
intact (weighted by alpha), plus loss-ratio terms; an optional perfect-intact
gate zeroes any candidate that breaks even one passed sample. Half the swarm
starts at the original weights, half from a normal fit to the repair layer's
weight distribution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import take_sample
from .localization import LocalizedSet
from .network import (
    Batch,
    Model,
    forward,
    loss,
    loss_from_probs,
    read_weights,
    write_weights,
)

VARIANTS = ("eq1", "eq2")
ORIENTATIONS = ("prose", "literal")


@dataclass(frozen=True)
class FitnessConfig:
    """Knobs of the repair objective."""

    variant: str = "eq2"
    alpha: float = 1.0
    beta: float = 0.25
    delta: float = 1e-6
    perfect_intact: bool = False
    loss_ratio_orientation: str = "prose"

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.loss_ratio_orientation not in ORIENTATIONS:
            raise ValueError(f"orientation must be one of {ORIENTATIONS}")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not self.delta > 0:
            raise ValueError("delta must be > 0")


@dataclass(frozen=True)
class SwarmConfig:
    """Swarm size, iteration budget and the standard PSO coefficients."""

    n_particles: int = 100
    n_iterations: int = 100
    inertia: float = 0.7298
    cognitive: float = 1.49618
    social: float = 1.49618
    velocity_clamp: float = 3.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_particles < 2:
            raise ValueError("need >= 2 particles (half original, half sampled)")
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be >= 0")
        if self.velocity_clamp <= 0:
            raise ValueError("velocity_clamp must be > 0")
        for name in ("inertia", "cognitive", "social"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class FitnessBreakdown:
    """One candidate's score with every ingredient kept for inspection."""

    n_patched: int
    n_intact: int
    loss_neg_before: float
    loss_neg_after: float
    loss_pos_before: float
    loss_pos_after: float
    raw_fitness: float
    gated_fitness: float


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    best_position: np.ndarray
    best_fitness: float
    best_breakdown: FitnessBreakdown | None
    rng: np.random.Generator


@dataclass
class Swarm:
    particles: list[Particle]
    mu_hat: float
    sigma_hat: float


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    gbest_fitness: float
    n_patched: int
    n_intact: int


@dataclass(frozen=True)
class RepairResult:
    model: Model
    best: FitnessBreakdown
    trace: tuple[TraceRow, ...]
    best_position: np.ndarray | None
    identity_fallback: bool
    no_search_space: bool = False


def sample_positives(positive_pool: Batch, n_pos: int, seed: int) -> Batch:
    """Fixed I_pos for a repair run: min(n_pos, pool) without replacement."""
    if len(positive_pool) == 0:
        raise ValueError("positive pool is empty")
    if n_pos < 1:
        raise ValueError("n_pos must be >= 1")
    return take_sample(positive_pool, n_pos, seed)


def loss_ratio(before: float, after: float, cfg: FitnessConfig) -> float:
    """R(I): old/new loss under `prose` orientation, new/old under `literal`."""
    num, den = (before, after) if cfg.loss_ratio_orientation == "prose" else (after, before)
    return (num + cfg.delta) / (den + cfg.delta)


def raw_fitness(
    n_patched: int,
    n_neg: int,
    n_intact: int,
    n_pos: int,
    r_neg: float,
    r_pos: float,
    cfg: FitnessConfig,
) -> float:
    """The two objective variants over already-computed counts and ratios.

    eq1 adds both loss ratios; eq2 keeps only the failed-side ratio, scaled
    by beta.
    """
    base = n_patched / n_neg + cfg.alpha * n_intact / n_pos
    if cfg.variant == "eq1":
        return base + r_neg + r_pos
    return base + cfg.beta * r_neg


def fitness(
    candidate: Model,
    i_neg: Batch,
    i_pos: Batch,
    base_losses: tuple[float, float],
    cfg: FitnessConfig,
) -> FitnessBreakdown:
    """Score a candidate model against fixed I_neg / I_pos.

    base_losses are the pre-repair losses on (I_neg, I_pos), computed once.
    A candidate with non-finite loss scores -inf instead of raising.
    """
    if len(i_neg) == 0 or len(i_pos) == 0:
        raise ValueError("fitness needs non-empty I_neg and I_pos")
    base_neg, base_pos = base_losses
    probs_neg = forward(candidate, i_neg)
    probs_pos = forward(candidate, i_pos)
    n_patched = int((np.argmax(probs_neg, axis=1) == i_neg.labels).sum())
    n_intact = int((np.argmax(probs_pos, axis=1) == i_pos.labels).sum())
    loss_neg = loss_from_probs(probs_neg, i_neg.labels)
    loss_pos = loss_from_probs(probs_pos, i_pos.labels)
    raw = raw_fitness(
        n_patched,
        len(i_neg),
        n_intact,
        len(i_pos),
        loss_ratio(base_neg, loss_neg, cfg),
        loss_ratio(base_pos, loss_pos, cfg),
        cfg,
    )
    if not math.isfinite(raw):
        raw = float("-inf")
    gated = 0.0 if (cfg.perfect_intact and n_intact < len(i_pos)) else raw
    return FitnessBreakdown(
        n_patched=n_patched,
        n_intact=n_intact,
        loss_neg_before=base_neg,
        loss_neg_after=loss_neg,
        loss_pos_before=base_pos,
        loss_pos_after=loss_pos,
        raw_fitness=raw,
        gated_fitness=gated,
    )


def layer_weight_stats(model: Model, layer: int) -> tuple[float, float]:
    """Mean and std of the repair layer's weights; degenerate std gets a
    small floor so init sampling stays well-defined."""
    w = model.weights[layer].ravel()
    mu = float(w.mean())
    sigma = float(w.std())
    if sigma == 0.0:
        sigma = max(abs(mu), 1.0) * 1e-2
    return mu, sigma


def init_swarm(localized: LocalizedSet, model: Model, cfg: SwarmConfig) -> Swarm:
    """Half/half initialization with zero velocities.

    ceil(p/2) particles sit at the original weights; the rest draw i.i.d.
    from Normal(mu_hat, sigma_hat^2) fit to the repair layer. Every particle
    owns an RNG stream spawned from the config seed, so later velocity draws
    are independent of evaluation order.
    """
    if len(localized) == 0:
        raise ValueError("cannot initialize a swarm over an empty localized set")
    refs = localized.refs
    layer = refs[0].layer
    mu, sigma = layer_weight_stats(model, layer)
    original = read_weights(model, refs)
    dim = len(refs)
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_particles)
    n_original = (cfg.n_particles + 1) // 2
    particles = []
    for k in range(cfg.n_particles):
        rng = np.random.default_rng(streams[k])
        if k < n_original:
            pos = original.copy()
        else:
            pos = rng.normal(mu, sigma, size=dim)
        particles.append(
            Particle(
                position=pos,
                velocity=np.zeros(dim),
                best_position=pos.copy(),
                best_fitness=float("-inf"),
                best_breakdown=None,
                rng=rng,
            )
        )
    return Swarm(particles=particles, mu_hat=mu, sigma_hat=sigma)


def repair(
    model: Model,
    localized: LocalizedSet,
    i_neg: Batch,
    i_pos: Batch,
    fcfg: FitnessConfig,
    scfg: SwarmConfig,
) -> RepairResult:
    """Global-best PSO over the localized weights.

    Synchronous updates: every particle moves against the previous
    iteration's global best, and the global best is re-reduced in fixed
    particle order afterwards, so results do not depend on evaluation
    scheduling. If nothing strictly beats the identity patch the original
    model is returned unchanged.
    """
    base_losses = (loss(model, i_neg), loss(model, i_pos))
    identity = fitness(model, i_neg, i_pos, base_losses, fcfg)
    if len(localized) == 0:
        return RepairResult(
            model=model,
            best=identity,
            trace=(),
            best_position=None,
            identity_fallback=True,
            no_search_space=True,
        )
    refs = localized.refs

    def evaluate(position: np.ndarray) -> FitnessBreakdown:
        if not np.isfinite(position).all():
            return FitnessBreakdown(
                0, 0, base_losses[0], float("inf"), base_losses[1], float("inf"),
                float("-inf"), float("-inf"),
            )
        return fitness(write_weights(model, refs, position), i_neg, i_pos, base_losses, fcfg)

    swarm = init_swarm(localized, model, scfg)
    vmax = scfg.velocity_clamp * swarm.sigma_hat

    gbest_pos: np.ndarray | None = None
    gbest: FitnessBreakdown | None = None

    def reduce_gbest() -> None:
        # fixed particle order; ties keep the incumbent
        nonlocal gbest_pos, gbest
        for p in swarm.particles:
            if gbest is None or p.best_fitness > gbest.gated_fitness:
                gbest = p.best_breakdown
                gbest_pos = p.best_position.copy()

    for p in swarm.particles:
        p.best_breakdown = evaluate(p.position)
        p.best_fitness = p.best_breakdown.gated_fitness
    reduce_gbest()

    trace = [TraceRow(0, gbest.gated_fitness, gbest.n_patched, gbest.n_intact)]

    for it in range(1, scfg.n_iterations + 1):
        anchor = gbest_pos.copy()
        for p in swarm.particles:
            r1 = p.rng.uniform(size=len(refs))
            r2 = p.rng.uniform(size=len(refs))
            p.velocity = (
                scfg.inertia * p.velocity
                + scfg.cognitive * r1 * (p.best_position - p.position)
                + scfg.social * r2 * (anchor - p.position)
            )
            np.clip(p.velocity, -vmax, vmax, out=p.velocity)
            p.position = p.position + p.velocity
            bd = evaluate(p.position)
            if bd.gated_fitness > p.best_fitness:
                p.best_fitness = bd.gated_fitness
                p.best_position = p.position.copy()
                p.best_breakdown = bd
        reduce_gbest()
        trace.append(TraceRow(it, gbest.gated_fitness, gbest.n_patched, gbest.n_intact))

    if gbest.gated_fitness > identity.gated_fitness:
        return RepairResult(
            model=write_weights(model, refs, gbest_pos),
            best=gbest,
            trace=tuple(trace),
            best_position=gbest_pos,
            identity_fallback=False,
        )
    return RepairResult(
        model=model,
        best=identity,
        trace=tuple(trace),
        best_position=None,
        identity_fallback=True,
    )


def write_trace_csv(trace, path) -> None:
    lines = ["iteration,gbest_fitness,n_patched,n_intact"]
    for row in trace:
        lines.append(f"{row.iteration},{repr(row.gbest_fitness)},{row.n_patched},{row.n_intact}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
