"""CVT-tessellated archive holding a bounded Pareto front per cell.

The archive stores solutions in the cell of their nearest centroid, keeps
each cell front mutually non-dominated, and evicts over-capacity fronts
either uniformly at random or by minimum crowding distance. The same
container doubles as the passive archive used to score non-QD baselines.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import IO, Iterator, Literal

import numpy as np

from moqd.pareto import (
    MonteCarloEstimate,
    crowding_distances,
    dominates,
    extract_front,
    hypervolume_2d,
    hypervolume_mc,
)

__all__ = [
    "ConfigurationError",
    "EmptyArchiveError",
    "SnapshotParseError",
    "Centroids",
    "Solution",
    "InsertionReport",
    "ArchiveMetrics",
    "MoqdArchive",
    "cvt_centroids",
]


class ConfigurationError(ValueError):
    """Inconsistent archive or tessellation configuration."""


class EmptyArchiveError(RuntimeError):
    """Sampling requested from an archive with no stored solutions."""


class SnapshotParseError(ValueError):
    """Malformed archive snapshot; carries the offending line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class Centroids:
    """k centroid points plus the descriptor-space box they tessellate."""

    points: np.ndarray  # (k, d)
    bounds: np.ndarray  # (d, 2) rows of [low, high]

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        bounds = np.asarray(self.bounds, dtype=float)
        if points.ndim != 2 or points.shape[0] < 1:
            raise ConfigurationError(f"centroids must be (k, d) with k >= 1, got {points.shape}")
        if bounds.shape != (points.shape[1], 2):
            raise ConfigurationError(f"bounds must be (d, 2), got {bounds.shape}")
        if np.any(points < bounds[:, 0]) or np.any(points > bounds[:, 1]):
            raise ConfigurationError("centroids must lie within bounds")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "bounds", bounds)

    @property
    def k(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass
class Solution:
    """A stored search point: genotype, objective scores and descriptor."""

    genotype: np.ndarray
    scores: np.ndarray
    descriptor: np.ndarray
    id: int = -1


@dataclass(frozen=True)
class InsertionReport:
    added: bool
    cell: int
    solution_id: int | None = None
    evicted_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class ArchiveMetrics:
    """The four archive quality measures over a fixed reference point."""

    moqd_score: float
    global_hypervolume: float
    max_sum: float | None
    coverage: float


def cvt_centroids(
    bounds,
    k: int,
    n_samples: int,
    seed,
    max_iter: int = 200,
    tol: float = 1e-6,
) -> Centroids:
    """Centroidal Voronoi tessellation of a box by Lloyd's algorithm.

    Draws ``n_samples`` uniform points in ``bounds`` and runs seeded k-means
    until the largest centroid shift drops below ``tol`` or ``max_iter``
    rounds elapse. Deterministic for a fixed seed.
    """
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2:
        raise ConfigurationError(f"bounds must be (d, 2), got {bounds.shape}")
    if np.any(bounds[:, 1] <= bounds[:, 0]):
        raise ConfigurationError("each bounds row must satisfy low < high")
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    if k > n_samples:
        raise ConfigurationError(f"k={k} exceeds n_samples={n_samples}")
    if n_samples < 10 * k:
        warnings.warn(
            f"n_samples={n_samples} is below the recommended 10*k={10 * k}", stacklevel=2
        )
    d = bounds.shape[0]
    rng = np.random.default_rng(seed)
    samples = bounds[:, 0] + rng.random((n_samples, d)) * (bounds[:, 1] - bounds[:, 0])
    centers = samples[rng.choice(n_samples, size=k, replace=False)].copy()
    for _ in range(max_iter):
        # nearest-centroid assignment, chunked to bound memory
        labels = np.empty(n_samples, dtype=int)
        for start in range(0, n_samples, 8192):
            block = samples[start : start + 8192]
            d2 = ((block[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            labels[start : start + len(block)] = np.argmin(d2, axis=1)
        new_centers = centers.copy()
        for i in range(k):
            members = samples[labels == i]
            if len(members) > 0:
                new_centers[i] = members.mean(axis=0)
            else:
                new_centers[i] = samples[rng.integers(n_samples)]
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if shift < tol:
            break
    return Centroids(points=centers, bounds=bounds)


class MoqdArchive:
    """MAP-Elites grid whose cells each hold a bounded Pareto front.

    ``capacity`` is the maximum front length P (None means unbounded, a
    test-only mode); ``replacement`` chooses the over-capacity eviction
    policy. Writes must be serialized by the caller; reads are safe to run
    concurrently with each other.
    """

    def __init__(
        self,
        centroids: Centroids,
        capacity: int | None,
        replacement: Literal["random", "crowding"] = "crowding",
    ):
        if capacity is not None and capacity < 1:
            raise ConfigurationError("front capacity must be >= 1 (or None for unbounded)")
        if replacement not in ("random", "crowding"):
            raise ConfigurationError(f"unknown replacement policy: {replacement!r}")
        self.centroids = centroids
        self.capacity = capacity
        self.replacement = replacement
        self._cells: list[list[Solution]] = [[] for _ in range(centroids.k)]
        self._next_id = 0
        self._passive_rng = np.random.default_rng(0)

    # ------------------------------------------------------------------ views

    @property
    def num_cells(self) -> int:
        return self.centroids.k

    def cell(self, index: int) -> tuple[Solution, ...]:
        return tuple(self._cells[index])

    def non_empty_cells(self) -> list[int]:
        return [i for i, cell in enumerate(self._cells) if cell]

    def solutions(self) -> Iterator[tuple[int, Solution]]:
        for i, cell in enumerate(self._cells):
            for sol in cell:
                yield i, sol

    def __len__(self) -> int:
        return sum(len(cell) for cell in self._cells)

    # ---------------------------------------------------------------- lookups

    def clip_descriptor(self, descriptor) -> np.ndarray:
        desc = np.asarray(descriptor, dtype=float)
        bounds = self.centroids.bounds
        if desc.shape != (self.centroids.dim,):
            raise ValueError(f"descriptor must have shape ({self.centroids.dim},)")
        return np.clip(desc, bounds[:, 0], bounds[:, 1])

    def cell_index(self, descriptor) -> int:
        """Nearest centroid of the (clipped) descriptor; ties go low."""
        desc = self.clip_descriptor(descriptor)
        d2 = ((self.centroids.points - desc) ** 2).sum(axis=1)
        return int(np.argmin(d2))

    # --------------------------------------------------------------- mutation

    def insert(self, genotype, scores, descriptor, rng=None) -> InsertionReport:
        """Offer one solution to its cell's Pareto front.

        Discarded when an incumbent dominates or exactly ties it. Otherwise
        it joins the front, incumbents it dominates are dropped, and an
        over-capacity front evicts either a uniform-random member (which may
        be the newcomer) or the member with minimum replacement-mode
        crowding distance, ties broken toward the oldest insertion id.
        """
        scores = np.asarray(scores, dtype=float)
        if not np.all(np.isfinite(scores)):
            raise ValueError(f"scores must be finite, got {scores}")
        desc = self.clip_descriptor(descriptor)
        c = self.cell_index(desc)
        front = self._cells[c]
        for sol in front:
            if np.array_equal(sol.scores, scores) or dominates(sol.scores, scores):
                return InsertionReport(added=False, cell=c)
        evicted = [sol for sol in front if dominates(scores, sol.scores)]
        kept = [sol for sol in front if not dominates(scores, sol.scores)]
        new = Solution(
            genotype=np.array(genotype, dtype=float, copy=True),
            scores=scores,
            descriptor=desc,
            id=self._next_id,
        )
        self._next_id += 1
        kept.append(new)
        if self.capacity is not None and len(kept) > self.capacity:
            if self.replacement == "random":
                if rng is None:
                    raise ValueError("random replacement requires an rng")
                victim = int(rng.integers(len(kept)))
            else:
                dist = crowding_distances(
                    np.array([s.scores for s in kept]), mode="replacement"
                )
                lowest = np.flatnonzero(dist == dist.min())
                victim = min(lowest, key=lambda i: kept[i].id)
            evicted.append(kept.pop(victim))
        self._cells[c] = kept
        return InsertionReport(
            added=True,
            cell=c,
            solution_id=new.id,
            evicted_ids=tuple(s.id for s in evicted),
        )

    def passive_insert(self, solutions) -> int:
        """Insert a baseline population via the normal addition rules.

        Used to score algorithms that do not maintain a MOQD archive of
        their own; the donor never sees this archive. Returns the number of
        solutions actually added. Replacement should be the random policy of
        the plain Pareto-front addition rules.
        """
        added = 0
        for sol in solutions:
            report = self.insert(
                sol.genotype, sol.scores, sol.descriptor, rng=self._passive_rng
            )
            if report.added:
                added += 1
        return added

    # --------------------------------------------------------------- sampling

    def sample(
        self,
        batch: int,
        rng,
        within_cell: Literal["crowding", "uniform"] = "crowding",
    ) -> list[np.ndarray]:
        """Draw ``batch`` parent genotypes.

        Cells are chosen uniformly with replacement among non-empty cells;
        within a cell, a solution is drawn with probability proportional to
        its selection-mode crowding distance (falling back to uniform when
        all distances are zero), or uniformly in ``uniform`` mode.
        """
        occupied = self.non_empty_cells()
        if not occupied:
            raise EmptyArchiveError("cannot sample from an empty archive")
        picks = rng.integers(len(occupied), size=batch)
        out = []
        for p in picks:
            front = self._cells[occupied[p]]
            if within_cell == "uniform" or len(front) == 1:
                idx = int(rng.integers(len(front)))
            else:
                weights = crowding_distances(
                    np.array([s.scores for s in front]), mode="selection"
                )
                total = weights.sum()
                if total <= 0.0:
                    idx = int(rng.integers(len(front)))
                else:
                    idx = int(rng.choice(len(front), p=weights / total))
            out.append(front[idx].genotype)
        return out

    # ---------------------------------------------------------------- metrics

    def metrics(self, ref, mc_samples: int = 100_000) -> ArchiveMetrics:
        """MOQD-score, global hypervolume, best score sum and coverage.

        Exact sweep hypervolume for two objectives; seeded Monte-Carlo
        otherwise (``mc_samples`` draws per front).
        """
        ref = np.asarray(ref, dtype=float)
        all_scores = []
        moqd = 0.0
        occupied = 0
        for cell in self._cells:
            if not cell:
                continue
            occupied += 1
            scores = np.array([s.scores for s in cell])
            moqd += self._front_hypervolume(scores, ref, mc_samples)
            all_scores.append(scores)
        if occupied == 0:
            return ArchiveMetrics(0.0, 0.0, None, 0.0)
        union = np.vstack(all_scores)
        global_front = union[extract_front(union)]
        global_hv = self._front_hypervolume(global_front, ref, mc_samples)
        return ArchiveMetrics(
            moqd_score=float(moqd),
            global_hypervolume=float(global_hv),
            max_sum=float(union.sum(axis=1).max()),
            coverage=occupied / self.num_cells,
        )

    @staticmethod
    def _front_hypervolume(scores: np.ndarray, ref: np.ndarray, mc_samples: int) -> float:
        if ref.shape[0] == 2:
            return hypervolume_2d(scores, ref)
        bound = np.maximum(scores.max(axis=0), ref + 1.0) + 1e-9
        est: MonteCarloEstimate = hypervolume_mc(
            scores, ref, bound, samples=mc_samples, seed=0
        )
        return est.value

    # ------------------------------------------------------------- snapshots

    def snapshot(self, stream: IO[str] | str) -> None:
        """Serialize to JSON lines: a header record then one per solution."""
        if isinstance(stream, str):
            with open(stream, "w", encoding="utf-8") as fh:
                self.snapshot(fh)
            return
        header = {
            "kind": "header",
            "centroids": self.centroids.points.tolist(),
            "bounds": self.centroids.bounds.tolist(),
            "P": self.capacity,
            "policy": self.replacement,
        }
        stream.write(json.dumps(header) + "\n")
        for cell_id, sol in self.solutions():
            record = {
                "kind": "sol",
                "cell": cell_id,
                "desc": sol.descriptor.tolist(),
                "scores": sol.scores.tolist(),
                "genotype": sol.genotype.tolist(),
            }
            stream.write(json.dumps(record) + "\n")

    @classmethod
    def load(cls, stream: IO[str] | str) -> "MoqdArchive":
        """Rebuild an archive from :meth:`snapshot` output."""
        if isinstance(stream, str):
            with open(stream, "r", encoding="utf-8") as fh:
                return cls.load(fh)
        lines = stream.read().splitlines()
        if not lines:
            raise SnapshotParseError(1, "empty snapshot: missing header")
        records = []
        for lineno, raw in enumerate(lines, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as err:
                raise SnapshotParseError(lineno, f"invalid JSON: {err.msg}") from err
            records.append((lineno, rec))
        lineno, header = records[0]
        if header.get("kind") != "header":
            raise SnapshotParseError(lineno, "first record must be the header")
        try:
            centroids = Centroids(
                points=np.asarray(header["centroids"], dtype=float),
                bounds=np.asarray(header["bounds"], dtype=float),
            )
            archive = cls(centroids, header["P"], header["policy"])
        except (KeyError, ConfigurationError) as err:
            raise SnapshotParseError(lineno, f"bad header: {err}") from err
        for lineno, rec in records[1:]:
            if rec.get("kind") != "sol":
                raise SnapshotParseError(lineno, f"unexpected record kind: {rec.get('kind')!r}")
            try:
                cell = int(rec["cell"])
                sol = Solution(
                    genotype=np.asarray(rec["genotype"], dtype=float),
                    scores=np.asarray(rec["scores"], dtype=float),
                    descriptor=np.asarray(rec["desc"], dtype=float),
                    id=archive._next_id,
                )
            except (KeyError, TypeError, ValueError) as err:
                raise SnapshotParseError(lineno, f"bad solution record: {err}") from err
            if not 0 <= cell < archive.num_cells:
                raise SnapshotParseError(lineno, f"cell {cell} out of range")
            archive._cells[cell].append(sol)
            archive._next_id += 1
        return archive
