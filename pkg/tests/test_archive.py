import io

import numpy as np
import pytest

from moqd.archive import (
    Centroids,
    ConfigurationError,
    EmptyArchiveError,
    MoqdArchive,
    SnapshotParseError,
    Solution,
    cvt_centroids,
)
from moqd.pareto import dominates

UNIT_SQUARE = [[0.0, 1.0], [0.0, 1.0]]


def grid_archive(capacity=10, replacement="crowding"):
    """2x2 archive with hand-placed centroids for predictable cell lookups."""
    centroids = Centroids(
        points=np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]]),
        bounds=np.array(UNIT_SQUARE),
    )
    return MoqdArchive(centroids, capacity, replacement)


def check_cells_valid(archive):
    """Brute-force audit: fronts non-dominated, within capacity, well-placed."""
    for cell_id, front in enumerate(archive._cells):
        if archive.capacity is not None:
            assert len(front) <= archive.capacity
        for i, a in enumerate(front):
            assert archive.cell_index(a.descriptor) == cell_id
            for j, b in enumerate(front):
                if i != j:
                    assert not dominates(a.scores, b.scores)


class TestCvtCentroids:
    def test_single_centroid_is_box_center(self):
        c = cvt_centroids(UNIT_SQUARE, k=1, n_samples=50_000, seed=0)
        assert np.allclose(c.points[0], [0.5, 0.5], atol=0.01)

    def test_centroids_inside_bounds(self):
        c = cvt_centroids(UNIT_SQUARE, k=4, n_samples=2000, seed=1)
        assert np.all(c.points >= 0.0) and np.all(c.points <= 1.0)
        assert c.k == 4

    def test_deterministic(self):
        a = cvt_centroids(UNIT_SQUARE, k=8, n_samples=1500, seed=33)
        b = cvt_centroids(UNIT_SQUARE, k=8, n_samples=1500, seed=33)
        assert np.array_equal(a.points, b.points)

    def test_k_exceeding_samples_rejected(self):
        with pytest.raises(ConfigurationError):
            cvt_centroids(UNIT_SQUARE, k=100, n_samples=50, seed=0)

    def test_distinct_centroids(self):
        c = cvt_centroids(UNIT_SQUARE, k=16, n_samples=4000, seed=5)
        assert len(np.unique(c.points, axis=0)) == 16


class TestCellIndex:
    def test_exact_centroid_match(self):
        archive = grid_archive()
        assert archive.cell_index([0.75, 0.75]) == 3

    def test_out_of_bounds_clipped(self):
        archive = grid_archive()
        assert archive.cell_index([5.0, 5.0]) == 3
        assert archive.cell_index([-1.0, -1.0]) == 0

    def test_tie_breaks_low(self):
        archive = grid_archive()
        assert archive.cell_index([0.5, 0.25]) == 0


class TestInsert:
    def test_empty_cell_accepts(self):
        archive = grid_archive()
        report = archive.insert([1.0], (1, 2), [0.2, 0.2])
        assert report.added and report.cell == 0 and report.evicted_ids == ()

    def test_dominated_candidate_discarded(self):
        archive = grid_archive()
        archive.insert([0.0], (2, 2), [0.2, 0.2])
        report = archive.insert([1.0], (1, 1), [0.2, 0.2])
        assert not report.added
        assert len(archive) == 1

    def test_exact_tie_discarded(self):
        archive = grid_archive()
        archive.insert([0.0], (2, 2), [0.2, 0.2])
        report = archive.insert([1.0], (2, 2), [0.21, 0.2])
        assert not report.added

    def test_dominating_candidate_sweeps_front(self):
        archive = grid_archive()
        a = archive.insert([0.0], (1, 2), [0.2, 0.2])
        b = archive.insert([0.0], (2, 1), [0.2, 0.2])
        report = archive.insert([0.0], (3, 3), [0.2, 0.2])
        assert report.added
        assert set(report.evicted_ids) == {a.solution_id, b.solution_id}
        assert len(archive) == 1

    def test_crowding_eviction_keeps_boundaries(self):
        archive = grid_archive(capacity=3, replacement="crowding")
        for scores in [(0, 4), (1, 2), (3, 1)]:
            archive.insert([0.0], scores, [0.2, 0.2])
        report = archive.insert([0.0], (2, 1.9), [0.2, 0.2])
        assert report.added
        remaining = {tuple(s.scores) for s in archive.cell(0)}
        # boundaries (0,4) and (3,1) carry infinite distance; the tighter
        # interior point is evicted
        assert (0, 4) in remaining and (3, 1) in remaining
        assert len(remaining) == 3
        assert len(report.evicted_ids) == 1

    def test_random_eviction_may_remove_newcomer(self):
        removed_self = 0
        for seed in range(40):
            archive = grid_archive(capacity=2, replacement="random")
            rng = np.random.default_rng(seed)
            archive.insert([0.0], (0, 4), [0.2, 0.2], rng=rng)
            archive.insert([0.0], (4, 0), [0.2, 0.2], rng=rng)
            report = archive.insert([0.0], (2, 2), [0.2, 0.2], rng=rng)
            assert report.added and len(report.evicted_ids) == 1
            if report.evicted_ids[0] == report.solution_id:
                removed_self += 1
        assert 0 < removed_self < 40

    def test_non_finite_scores_rejected(self):
        archive = grid_archive()
        with pytest.raises(ValueError):
            archive.insert([0.0], (np.nan, 1.0), [0.2, 0.2])

    def test_stress_invariants_hold(self):
        archive = grid_archive(capacity=4, replacement="crowding")
        rng = np.random.default_rng(99)
        for _ in range(500):
            archive.insert([0.0], rng.random(2) * 5, rng.random(2))
        check_cells_valid(archive)


class TestSample:
    def test_single_solution_always_returned(self):
        archive = grid_archive()
        archive.insert([7.0, 8.0], (1, 1), [0.2, 0.2])
        rng = np.random.default_rng(0)
        for g in archive.sample(5, rng):
            assert np.array_equal(g, [7.0, 8.0])

    def test_uniform_cell_choice(self):
        archive = grid_archive()
        archive.insert([1.0], (1, 1), [0.2, 0.2])
        archive.insert([2.0], (1, 1), [0.8, 0.8])
        rng = np.random.default_rng(1)
        genotypes = archive.sample(10_000, rng)
        ones = sum(1 for g in genotypes if g[0] == 1.0)
        assert abs(ones - 5000) < 300

    def test_equal_crowding_distances_give_uniform_within_cell(self):
        archive = grid_archive()
        for marker, scores in enumerate([(0, 4), (1, 2), (3, 1)]):
            archive.insert([float(marker)], scores, [0.2, 0.2])
        rng = np.random.default_rng(2)
        counts = np.zeros(3)
        for g in archive.sample(9000, rng):
            counts[int(g[0])] += 1
        assert np.all(np.abs(counts - 3000) < 350)

    def test_empty_archive_raises(self):
        archive = grid_archive()
        with pytest.raises(EmptyArchiveError):
            archive.sample(1, np.random.default_rng(0))

    def test_cell_choice_chi_square(self):
        archive = grid_archive()
        for i, desc in enumerate([[0.2, 0.2], [0.8, 0.2], [0.2, 0.8], [0.8, 0.8]]):
            archive.insert([float(i)], (1, 1), desc)
        rng = np.random.default_rng(3)
        counts = np.zeros(4)
        for g in archive.sample(10_000, rng):
            counts[int(g[0])] += 1
        chi2 = ((counts - 2500.0) ** 2 / 2500.0).sum()
        assert chi2 < 16.27  # chi2(3) at p=0.001


class TestMetrics:
    def test_single_cell_front(self):
        archive = grid_archive()
        archive.insert([0.0], (2, 3), [0.2, 0.2])
        m = archive.metrics((0, 0))
        assert m.moqd_score == pytest.approx(6.0)
        assert m.global_hypervolume == pytest.approx(6.0)
        assert m.max_sum == pytest.approx(5.0)
        assert m.coverage == pytest.approx(0.25)

    def test_duplicate_fronts_in_two_cells(self):
        archive = grid_archive()
        archive.insert([0.0], (2, 3), [0.2, 0.2])
        archive.insert([0.0], (2, 3), [0.8, 0.8])
        m = archive.metrics((0, 0))
        assert m.moqd_score == pytest.approx(12.0)
        assert m.global_hypervolume == pytest.approx(6.0)

    def test_empty_archive(self):
        m = grid_archive().metrics((0, 0))
        assert m.moqd_score == 0.0
        assert m.global_hypervolume == 0.0
        assert m.max_sum is None
        assert m.coverage == 0.0

    def test_unbounded_capacity_moqd_monotone(self):
        archive = grid_archive(capacity=None)
        rng = np.random.default_rng(17)
        prev = 0.0
        for _ in range(200):
            archive.insert([0.0], rng.random(2) * 3 + 0.1, rng.random(2))
            score = archive.metrics((0, 0)).moqd_score
            assert score >= prev - 1e-12
            prev = score


class TestPassiveInsert:
    def test_reinsertion_of_same_population_adds_nothing(self):
        archive = grid_archive(replacement="random")
        pop = [
            Solution(np.array([1.0]), np.array([1.0, 2.0]), np.array([0.2, 0.2])),
            Solution(np.array([2.0]), np.array([2.0, 1.0]), np.array([0.8, 0.8])),
        ]
        assert archive.passive_insert(pop) == 2
        assert archive.passive_insert(pop) == 0

    def test_empty_population(self):
        assert grid_archive().passive_insert([]) == 0

    def test_single_solution(self):
        archive = grid_archive(replacement="random")
        pop = [Solution(np.array([1.0]), np.array([1.0, 2.0]), np.array([0.2, 0.2]))]
        assert archive.passive_insert(pop) == 1


class TestSnapshot:
    def test_round_trip_preserves_metrics_and_genotypes(self):
        archive = grid_archive(capacity=5)
        rng = np.random.default_rng(4)
        for _ in range(60):
            archive.insert(rng.standard_normal(3), rng.random(2) * 4, rng.random(2))
        buf = io.StringIO()
        archive.snapshot(buf)
        clone = MoqdArchive.load(io.StringIO(buf.getvalue()))
        assert clone.metrics((0, 0)) == archive.metrics((0, 0))
        originals = sorted(
            ((c, tuple(s.genotype)) for c, s in archive.solutions()), key=str
        )
        clones = sorted(((c, tuple(s.genotype)) for c, s in clone.solutions()), key=str)
        assert originals == clones

    def test_header_only_stream(self):
        archive = grid_archive()
        buf = io.StringIO()
        archive.snapshot(buf)
        clone = MoqdArchive.load(io.StringIO(buf.getvalue()))
        assert len(clone) == 0
        assert clone.num_cells == 4
        assert clone.capacity == archive.capacity

    def test_truncated_line_names_line_number(self):
        archive = grid_archive()
        archive.insert([0.0], (1, 1), [0.2, 0.2])
        buf = io.StringIO()
        archive.snapshot(buf)
        broken = buf.getvalue().splitlines()
        broken[1] = broken[1][: len(broken[1]) // 2]
        with pytest.raises(SnapshotParseError, match="line 2"):
            MoqdArchive.load(io.StringIO("\n".join(broken)))

    def test_missing_header(self):
        with pytest.raises(SnapshotParseError, match="line 1"):
            MoqdArchive.load(io.StringIO('{"kind":"sol"}\n'))
