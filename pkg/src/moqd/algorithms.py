"""The optimization loops.

One shared engine drives the Pareto-front archive family (plain, crowding,
per-objective policy gradients, or both), so ablations differ only in their
sampling mode, replacement policy and enabled gradient objectives. The
mono-objective MAP-Elites-with-gradients baseline and the two classic
population algorithms are scored through a passive archive with the same
tessellation, so all metric curves share an evaluation-count axis.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from moqd.archive import (
    ArchiveMetrics,
    Centroids,
    ConfigurationError,
    MoqdArchive,
    Solution,
    cvt_centroids,
)
from moqd.neuro import (
    InsufficientDataError,
    ReplayBuffer,
    Td3Config,
    TransitionBatch,
    fresh_train_state,
    pg_mutate,
    train_networks,
)
from moqd.pareto import dominance_matrix, non_dominated_sort
from moqd.variation import VariationConfig, iso_line_dd, split_batch

__all__ = [
    "ALGORITHMS",
    "AlgorithmConfig",
    "MetricsRecord",
    "RunResult",
    "run",
    "run_moqd_loop",
    "run_mome_pgx",
    "run_mome",
    "run_mome_crowding",
    "run_mo_pga",
    "run_pga_me",
    "run_nsga2",
    "run_spea2",
    "nsga2_crowding",
    "nsga2_survival",
    "spea2_fitness",
    "spea2_environmental_selection",
]

ALGORITHMS = (
    "mome_pgx",
    "mome",
    "mome_crowding",
    "mo_pga",
    "pga_me",
    "nsga2",
    "spea2",
)

# spawn keys for the per-run random streams; the init pool and tessellation
# streams are shared across algorithms so paired-seed comparisons start
# from identical states
_INIT_STREAM = 0
_CVT_STREAM = 1
_LOOP_STREAM = 2
_TD3_STREAM = 3
_PG_STREAM = 4
_GRID_CVT_STREAM = 5


@dataclass(frozen=True)
class AlgorithmConfig:
    """Everything a run needs besides the task itself."""

    algorithm: str
    iterations: int
    batch_size: int
    cells: int
    front_capacity: int | None
    cvt_samples: int = 5000
    variation: VariationConfig = field(default_factory=VariationConfig)
    td3: Td3Config = field(default_factory=Td3Config)
    pg_objectives: tuple[int, ...] | None = None
    inject_actor: bool = True
    seed: int = 0
    cvt_seed: int | None = None
    metrics_every: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm: {self.algorithm!r}")
        if self.iterations < 1:
            raise ConfigurationError("iterations must be >= 1")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2")
        if self.cells < 1:
            raise ConfigurationError("cells must be >= 1")
        if self.front_capacity is not None and self.front_capacity < 1:
            raise ConfigurationError("front_capacity must be >= 1 or None")
        if self.metrics_every < 1:
            raise ConfigurationError("metrics_every must be >= 1")


@dataclass(frozen=True)
class MetricsRecord:
    """One metrics row; evaluation counts are strictly increasing in a run."""

    evaluations: int
    moqd_score: float
    global_hypervolume: float
    max_sum: float | None
    coverage: float
    seconds: float


@dataclass
class RunResult:
    """Final archive (passive for non-MOQD baselines), metric series and
    any algorithm-specific extras (main grid, final population)."""

    archive: MoqdArchive
    metrics: list[MetricsRecord]
    config: AlgorithmConfig
    extra: dict = field(default_factory=dict)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


def _moqd_centroids(cfg: AlgorithmConfig, env) -> Centroids:
    seed = cfg.cvt_seed if cfg.cvt_seed is not None else None
    cvt_key = [seed] if seed is not None else [cfg.seed, _CVT_STREAM]
    return cvt_centroids(env.descriptor_bounds, cfg.cells, cfg.cvt_samples, seed=cvt_key)


def _record(archive: MoqdArchive, ref, evaluations: int, t0: float) -> MetricsRecord:
    m: ArchiveMetrics = archive.metrics(ref)
    return MetricsRecord(
        evaluations=evaluations,
        moqd_score=m.moqd_score,
        global_hypervolume=m.global_hypervolume,
        max_sum=m.max_sum,
        coverage=m.coverage,
        seconds=time.perf_counter() - t0,
    )


def _push_transitions(buffer: ReplayBuffer | None, results) -> None:
    if buffer is None:
        return
    for res in results:
        if res.transitions is not None:
            buffer.push(res.transitions)


def _train_if_ready(states, buffer: ReplayBuffer, td3: Td3Config) -> None:
    if len(buffer) >= td3.critic_batch:
        train_networks(states, buffer, td3)
    else:
        warnings.warn(
            "replay buffer below one critic batch; skipping network training",
            stacklevel=2,
        )


# ----------------------------------------------------------------- MOQD loop


def run_moqd_loop(
    cfg: AlgorithmConfig,
    env,
    ref,
    sampling: Literal["uniform", "crowding"],
    replacement: Literal["random", "crowding"],
    pg_objectives: tuple[int, ...],
) -> RunResult:
    """The Pareto-front archive loop shared by the whole algorithm family.

    Per iteration: sample parents from the archive (cells uniform, within a
    cell either uniform or crowding-biased), produce a batch of offspring by
    Iso+LineDD and per-objective policy-gradient mutation, evaluate, store
    transitions, train the networks, then insert offspring under the given
    replacement policy. Exactly ``batch_size`` evaluations per iteration.
    """
    m = env.num_objectives
    pg = tuple(sorted(set(pg_objectives)))
    if any(j < 0 or j >= m for j in pg):
        raise ConfigurationError(f"pg_objectives {pg} outside objective range 0..{m - 1}")
    if pg and not env.is_mdp:
        raise ConfigurationError(
            "policy-gradient variation needs an MDP task with transitions"
        )

    init_rng = _rng(cfg.seed, _INIT_STREAM)
    loop_rng = _rng(cfg.seed, _LOOP_STREAM)
    pg_rng = _rng(cfg.seed, _PG_STREAM)
    archive = MoqdArchive(_moqd_centroids(cfg, env), cfg.front_capacity, replacement)

    buffer = None
    states: dict[int, object] = {}
    if pg:
        buffer = ReplayBuffer(cfg.td3.buffer_capacity, env.state_dim, env.action_dim, m)
        states = {
            j: fresh_train_state(
                env.policy_spec,
                env.state_dim,
                env.action_dim,
                j,
                cfg.td3,
                _rng(cfg.seed, _TD3_STREAM, j),
            )
            for j in pg
        }

    t0 = time.perf_counter()
    genotypes = [env.random_genotype(init_rng) for _ in range(cfg.batch_size)]
    results = [env.evaluate(g) for g in genotypes]
    for g, res in zip(genotypes, results):
        archive.insert(g, res.scores, res.descriptor, rng=loop_rng)
    evaluations = cfg.batch_size
    if pg:
        _push_transitions(buffer, results)
        _train_if_ready(list(states.values()), buffer, cfg.td3)
    rows = [_record(archive, ref, evaluations, t0)]

    if pg:
        ga_count, pg_counts = split_batch(cfg.batch_size, len(pg))
    else:
        ga_count, pg_counts = cfg.batch_size, []

    for it in range(cfg.iterations):
        offspring: list[np.ndarray] = []
        xs = archive.sample(ga_count, loop_rng, within_cell=sampling)
        ys = archive.sample(ga_count, loop_rng, within_cell=sampling)
        offspring.extend(
            iso_line_dd(x, y, cfg.variation, loop_rng) for x, y in zip(xs, ys)
        )
        for j, count in zip(pg, pg_counts):
            for parent in archive.sample(count, loop_rng, within_cell=sampling) if count else []:
                try:
                    child = pg_mutate(parent, states[j], buffer, cfg.td3, pg_rng)
                except InsufficientDataError:
                    mate = archive.sample(1, loop_rng, within_cell=sampling)[0]
                    child = iso_line_dd(parent, mate, cfg.variation, loop_rng)
                offspring.append(child)
        results = [env.evaluate(g) for g in offspring]
        evaluations += len(offspring)
        if pg:
            _push_transitions(buffer, results)
            _train_if_ready(list(states.values()), buffer, cfg.td3)
        for g, res in zip(offspring, results):
            archive.insert(g, res.scores, res.descriptor, rng=loop_rng)
        if (it + 1) % cfg.metrics_every == 0 or it == cfg.iterations - 1:
            rows.append(_record(archive, ref, evaluations, t0))

    assert evaluations == (cfg.iterations + 1) * cfg.batch_size
    return RunResult(archive=archive, metrics=rows, config=cfg, extra={"train_states": states})


def run_mome_pgx(cfg: AlgorithmConfig, env, ref) -> RunResult:
    """Crowding-biased sampling and replacement plus per-objective policy
    gradients: the full gradient-assisted archive loop."""
    pg = cfg.pg_objectives if cfg.pg_objectives is not None else tuple(range(env.num_objectives))
    return run_moqd_loop(cfg, env, ref, "crowding", "crowding", pg)


def run_mome(cfg: AlgorithmConfig, env, ref) -> RunResult:
    """The plain Pareto-front archive: uniform selection, random eviction,
    genetic variation only."""
    return run_moqd_loop(cfg, env, ref, "uniform", "random", ())


def run_mome_crowding(cfg: AlgorithmConfig, env, ref) -> RunResult:
    """Crowding-based sampling and replacement without policy gradients."""
    return run_moqd_loop(cfg, env, ref, "crowding", "crowding", ())


def run_mo_pga(cfg: AlgorithmConfig, env, ref) -> RunResult:
    """Plain archive rules plus policy-gradient variation for the configured
    objective subset (all objectives when unset)."""
    pg = cfg.pg_objectives if cfg.pg_objectives is not None else tuple(range(env.num_objectives))
    return run_moqd_loop(cfg, env, ref, "uniform", "random", pg)


# -------------------------------------------------------------------- PGA-ME


def run_pga_me(cfg: AlgorithmConfig, env, ref) -> RunResult:
    """Mono-objective MAP-Elites over summed rewards with TD3 assistance.

    The grid has cells * front_capacity single-occupant niches so its
    population cap matches the Pareto-front archives. Each iteration spends
    the batch on half genetic and half gradient offspring plus one copy of
    the greedy actor. Metrics come from a passive Pareto-front archive fed
    with the whole grid population every iteration.
    """
    if not env.is_mdp:
        raise ConfigurationError("this baseline needs an MDP task with transitions")
    m = env.num_objectives
    pop_cells = cfg.cells * (cfg.front_capacity or 1)
    grid_centroids = cvt_centroids(
        env.descriptor_bounds,
        pop_cells,
        max(cfg.cvt_samples, 10 * pop_cells),
        seed=[cfg.seed, _GRID_CVT_STREAM],
    )
    grid = MoqdArchive(grid_centroids, capacity=1, replacement="crowding")
    passive = MoqdArchive(_moqd_centroids(cfg, env), cfg.front_capacity, "random")

    init_rng = _rng(cfg.seed, _INIT_STREAM)
    loop_rng = _rng(cfg.seed, _LOOP_STREAM)
    pg_rng = _rng(cfg.seed, _PG_STREAM)
    buffer = ReplayBuffer(cfg.td3.buffer_capacity, env.state_dim, env.action_dim, m)
    state = fresh_train_state(
        env.policy_spec, env.state_dim, env.action_dim, None, cfg.td3,
        _rng(cfg.seed, _TD3_STREAM, 0),
    )

    occupants: dict[int, Solution] = {}

    def offer(genotype, res) -> None:
        report = grid.insert(genotype, [res.scores.sum()], res.descriptor, rng=loop_rng)
        if report.added:
            occupants[report.cell] = Solution(
                genotype=np.array(genotype, dtype=float, copy=True),
                scores=res.scores.copy(),
                descriptor=res.descriptor.copy(),
                id=report.solution_id,
            )

    t0 = time.perf_counter()
    genotypes = [env.random_genotype(init_rng) for _ in range(cfg.batch_size)]
    results = [env.evaluate(g) for g in genotypes]
    for g, res in zip(genotypes, results):
        offer(g, res)
    evaluations = cfg.batch_size
    _push_transitions(buffer, results)
    _train_if_ready([state], buffer, cfg.td3)
    passive.passive_insert(occupants.values())
    rows = [_record(passive, ref, evaluations, t0)]

    slots = cfg.batch_size - (1 if cfg.inject_actor else 0)
    ga_count = (slots + 1) // 2
    pg_count = slots - ga_count

    for it in range(cfg.iterations):
        offspring: list[np.ndarray] = []
        xs = grid.sample(ga_count, loop_rng, within_cell="uniform")
        ys = grid.sample(ga_count, loop_rng, within_cell="uniform")
        offspring.extend(
            iso_line_dd(x, y, cfg.variation, loop_rng) for x, y in zip(xs, ys)
        )
        for parent in grid.sample(pg_count, loop_rng, within_cell="uniform") if pg_count else []:
            try:
                child = pg_mutate(parent, state, buffer, cfg.td3, pg_rng)
            except InsufficientDataError:
                mate = grid.sample(1, loop_rng, within_cell="uniform")[0]
                child = iso_line_dd(parent, mate, cfg.variation, loop_rng)
            offspring.append(child)
        if cfg.inject_actor:
            offspring.append(state.actor.copy())
        results = [env.evaluate(g) for g in offspring]
        evaluations += len(offspring)
        _push_transitions(buffer, results)
        _train_if_ready([state], buffer, cfg.td3)
        for g, res in zip(offspring, results):
            offer(g, res)
        passive.passive_insert(occupants.values())
        if (it + 1) % cfg.metrics_every == 0 or it == cfg.iterations - 1:
            rows.append(_record(passive, ref, evaluations, t0))

    assert evaluations == (cfg.iterations + 1) * cfg.batch_size
    return RunResult(
        archive=passive, metrics=rows, config=cfg,
        extra={"grid": grid, "train_state": state},
    )


# ------------------------------------------------------------------- NSGA-II


def nsga2_crowding(scores) -> np.ndarray:
    """Classic cuboid crowding distance of one front: per-objective gaps
    normalized by the front's objective range, boundaries infinite.

    Distinct from the raw-Manhattan crowding used inside the archive; the
    two conventions are never mixed.
    """
    scores = np.asarray(scores, dtype=float)
    n, m = scores.shape
    dist = np.zeros(n)
    for o in range(m):
        order = np.argsort(scores[:, o], kind="stable")
        dist[order[0]] = np.inf
        dist[order[-1]] = np.inf
        span = scores[order[-1], o] - scores[order[0], o]
        if span == 0.0 or n < 3:
            continue
        gaps = (scores[order[2:], o] - scores[order[:-2], o]) / span
        dist[order[1:-1]] += gaps
    return dist


def nsga2_survival(solutions: list[Solution], target: int) -> list[Solution]:
    """Rank-then-crowding truncation: keep whole fronts while they fit and
    split the last one by descending crowding distance, ties by id."""
    if len(solutions) < target:
        raise ValueError(f"cannot select {target} from {len(solutions)} solutions")
    scores = np.array([s.scores for s in solutions])
    selected: list[Solution] = []
    for front in non_dominated_sort(scores):
        if len(selected) + len(front) <= target:
            selected.extend(solutions[i] for i in front)
        else:
            crowd = nsga2_crowding(scores[front])
            order = sorted(
                range(len(front)), key=lambda i: (-crowd[i], solutions[front[i]].id)
            )
            selected.extend(solutions[front[i]] for i in order[: target - len(selected)])
            break
    return selected


def _nsga2_rank_crowding(scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rank = np.empty(len(scores), dtype=int)
    crowd = np.empty(len(scores))
    for r, front in enumerate(non_dominated_sort(scores)):
        rank[front] = r
        crowd[front] = nsga2_crowding(scores[front])
    return rank, crowd


# --------------------------------------------------------------------- SPEA2


def spea2_fitness(scores) -> np.ndarray:
    """Strength-based fitness, lower is better; below 1 iff non-dominated.

    Strength counts dominated solutions; raw fitness sums the strengths of
    a solution's dominators; density is 1/(sigma_k + 2) with sigma_k the
    distance to the floor(sqrt(n))-th nearest neighbour in objective space.
    """
    scores = np.asarray(scores, dtype=float)
    n = scores.shape[0]
    dom = dominance_matrix(scores)
    strength = dom.sum(axis=1)
    raw = (strength[:, None] * dom).sum(axis=0)
    diff = scores[:, None, :] - scores[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    k = min(int(np.sqrt(n)), n - 1)
    if k < 1:
        sigma = np.zeros(n)
    else:
        sigma = np.sort(dist, axis=1)[:, k]
    return raw + 1.0 / (sigma + 2.0)


def spea2_environmental_selection(solutions: list[Solution], target: int) -> list[Solution]:
    """Keep the non-dominated set, truncating by iterated nearest-neighbour
    removal when too large and padding with the best dominated solutions
    when too small."""
    if len(solutions) < target:
        raise ValueError(f"cannot select {target} from {len(solutions)} solutions")
    scores = np.array([s.scores for s in solutions])
    fitness = spea2_fitness(scores)
    nondom = np.flatnonzero(fitness < 1.0)
    if len(nondom) == target:
        return [solutions[i] for i in nondom]
    if len(nondom) < target:
        dominated = np.flatnonzero(fitness >= 1.0)
        order = sorted(dominated, key=lambda i: (fitness[i], solutions[i].id))
        chosen = list(nondom) + order[: target - len(nondom)]
        return [solutions[i] for i in chosen]
    # truncation: repeatedly drop the point with lexicographically smallest
    # sorted distance vector to the other survivors
    pts = scores[nondom]
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    alive = list(range(len(nondom)))
    while len(alive) > target:
        sub = dist[np.ix_(alive, alive)]
        sorted_rows = np.sort(sub, axis=1)[:, 1:]  # drop self-distance
        ids = np.array([solutions[nondom[i]].id for i in alive])
        # lexsort keys run least to most significant: nearest neighbour
        # first, then farther ones, id as the final tie-break
        keys = [ids] + list(sorted_rows.T[::-1])
        victim = int(np.lexsort(keys)[0])
        alive.pop(victim)
    return [solutions[nondom[i]] for i in alive]


# ------------------------------------------------------------ population runs


def _binary_tournament(order_key, n: int, rng) -> int:
    i = int(rng.integers(n))
    j = int(rng.integers(n))
    return i if order_key(i) <= order_key(j) else j


def _run_population_loop(cfg: AlgorithmConfig, env, ref, make_key) -> RunResult:
    """Generational (mu + lambda) loop shared by the population baselines.

    The population starts from the shared seeded pool and grows by one batch
    per iteration until it reaches the cells * front_capacity cap, after
    which survival selection truncates. ``make_key(scores, population)``
    builds the per-iteration tournament ordering key; survival is chosen by
    the algorithm id. Every iteration the surviving population feeds the
    passive archive the metrics are computed from.
    """
    passive = MoqdArchive(_moqd_centroids(cfg, env), cfg.front_capacity, "random")
    cap = cfg.cells * (cfg.front_capacity or 1)
    init_rng = _rng(cfg.seed, _INIT_STREAM)
    loop_rng = _rng(cfg.seed, _LOOP_STREAM)
    next_id = 0

    def make_solution(genotype, res) -> Solution:
        nonlocal next_id
        sol = Solution(
            genotype=np.asarray(genotype, dtype=float),
            scores=res.scores.copy(),
            descriptor=res.descriptor.copy(),
            id=next_id,
        )
        next_id += 1
        return sol

    t0 = time.perf_counter()
    genotypes = [env.random_genotype(init_rng) for _ in range(cfg.batch_size)]
    population = [make_solution(g, env.evaluate(g)) for g in genotypes]
    evaluations = cfg.batch_size
    passive.passive_insert(population)
    rows = [_record(passive, ref, evaluations, t0)]

    survival = nsga2_survival if cfg.algorithm == "nsga2" else spea2_environmental_selection
    for it in range(cfg.iterations):
        scores = np.array([s.scores for s in population])
        key = make_key(scores, population)
        offspring = []
        for _ in range(cfg.batch_size):
            a = _binary_tournament(key, len(population), loop_rng)
            b = _binary_tournament(key, len(population), loop_rng)
            child = iso_line_dd(
                population[a].genotype, population[b].genotype, cfg.variation, loop_rng
            )
            offspring.append(make_solution(child, env.evaluate(child)))
        evaluations += cfg.batch_size
        union = population + offspring
        population = survival(union, min(cap, len(union)))
        passive.passive_insert(population)
        if (it + 1) % cfg.metrics_every == 0 or it == cfg.iterations - 1:
            rows.append(_record(passive, ref, evaluations, t0))

    assert evaluations == (cfg.iterations + 1) * cfg.batch_size
    return RunResult(
        archive=passive, metrics=rows, config=cfg, extra={"population": population}
    )


def run_nsga2(cfg: AlgorithmConfig, env, ref) -> RunResult:
    """Non-dominated sorting GA: binary tournament on (rank, crowding),
    rank-then-crowding survival, scored through the passive archive."""

    def make_key(scores, population):
        rank, crowd = _nsga2_rank_crowding(scores)
        return lambda i: (rank[i], -crowd[i], population[i].id)

    return _run_population_loop(cfg, env, ref, make_key)


def run_spea2(cfg: AlgorithmConfig, env, ref) -> RunResult:
    """Strength-Pareto GA: binary tournament on fitness, environmental
    selection survival, scored through the passive archive."""

    def make_key(scores, population):
        fitness = spea2_fitness(scores)
        return lambda i: (fitness[i], population[i].id)

    return _run_population_loop(cfg, env, ref, make_key)


# ----------------------------------------------------------------- dispatch


_RUNNERS = {
    "mome_pgx": run_mome_pgx,
    "mome": run_mome,
    "mome_crowding": run_mome_crowding,
    "mo_pga": run_mo_pga,
    "pga_me": run_pga_me,
    "nsga2": run_nsga2,
    "spea2": run_spea2,
}


def run(cfg: AlgorithmConfig, env, ref) -> RunResult:
    """Run the configured algorithm on a task against a reference point."""
    return _RUNNERS[cfg.algorithm](cfg, env, ref)
