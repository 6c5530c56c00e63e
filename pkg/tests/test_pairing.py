import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coarsepair.errors import InvalidInputError
from coarsepair.pairing import (
    CoarsePairManifest,
    PairRecord,
    PoseLog,
    pair_traversals,
    read_manifest,
    read_pose_log,
    split_by_location,
    write_manifest,
    write_pose_log,
)
from oracles import oracle_nearest_pairs


def make_log(traversal, positions, times=None):
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    return PoseLog(
        traversal_id=traversal,
        frame_ids=tuple(f"{traversal}{i:03d}" for i in range(n)),
        positions=positions,
        times=np.asarray(times if times is not None else np.arange(n), dtype=float),
    )


class TestPairTraversals:
    def test_nearest_by_inspection(self):
        src = make_log("a", [(0, 0), (10, 0), (20, 0)])
        tgt = make_log("b", [(1, 0), (9, 0), (25, 0)])
        m = pair_traversals(src, tgt, max_distance=6)
        assert [(p.source_frame, p.target_frame) for p in m.pairs] == [
            ("a000", "b000"),
            ("a001", "b001"),
            ("a002", "b002"),
        ]
        assert [p.gps_distance for p in m.pairs] == [1.0, 1.0, 5.0]

    def test_threshold_drops_far_pair(self):
        src = make_log("a", [(0, 0), (10, 0), (20, 0)])
        tgt = make_log("b", [(1, 0), (9, 0), (25, 0)])
        m = pair_traversals(src, tgt, max_distance=3)
        assert len(m) == 2
        assert all(p.gps_distance <= 3 for p in m.pairs)

    def test_tie_breaks_to_earliest_target_index(self):
        src = make_log("a", [(0, 0)])
        tgt = make_log("b", [(1, 0), (-1, 0)])
        m = pair_traversals(src, tgt, max_distance=5)
        assert m.pairs == (PairRecord("a000", "b000", 1.0),)

    def test_empty_log_rejected(self):
        with pytest.raises(InvalidInputError):
            make_log("a", np.zeros((0, 2)))

    def test_nonpositive_threshold_rejected(self):
        src = make_log("a", [(0, 0)])
        with pytest.raises(InvalidInputError):
            pair_traversals(src, src, max_distance=0)

    def test_matches_exhaustive_oracle(self, rng):
        for _ in range(25):
            ns, nt = rng.integers(1, 20, 2)
            src = make_log("s", rng.normal(0, 20, (ns, 2)).round(1))
            tgt = make_log("t", rng.normal(0, 20, (nt, 2)).round(1))
            max_d = float(rng.uniform(1, 30))
            got = pair_traversals(src, tgt, max_d)
            want = oracle_nearest_pairs(src.positions, tgt.positions, max_d)
            assert len(got) == len(want)
            for p, (i, j, d) in zip(got.pairs, want):
                assert p.source_frame == src.frame_ids[i]
                assert p.target_frame == tgt.frame_ids[j]
                assert p.gps_distance == pytest.approx(d, abs=1e-9)

    def test_deterministic(self, rng):
        src = make_log("s", rng.normal(0, 5, (10, 2)))
        tgt = make_log("t", rng.normal(0, 5, (12, 2)))
        assert pair_traversals(src, tgt, 4.0) == pair_traversals(src, tgt, 4.0)

    @given(threshold_pair=st.tuples(st.floats(0.5, 20), st.floats(0.5, 20)), seed=st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_threshold_filtering_is_monotone(self, threshold_pair, seed):
        g = np.random.default_rng(seed)
        src = make_log("s", g.normal(0, 10, (8, 2)))
        tgt = make_log("t", g.normal(0, 10, (8, 2)))
        lo, hi = sorted(threshold_pair)
        small = {(p.source_frame, p.target_frame) for p in pair_traversals(src, tgt, lo).pairs}
        large = {(p.source_frame, p.target_frame) for p in pair_traversals(src, tgt, hi).pairs}
        assert small <= large

    def test_no_closer_target_exists(self, rng):
        src = make_log("s", rng.normal(0, 10, (6, 2)))
        tgt = make_log("t", rng.normal(0, 10, (9, 2)))
        m = pair_traversals(src, tgt, 50.0)
        for p in m.pairs:
            i = src.index_of(p.source_frame)
            dists = np.linalg.norm(tgt.positions - src.positions[i], axis=1)
            assert not (dists < p.gps_distance - 1e-12).any()


class TestSplitByLocation:
    def test_even_spacing_80_20(self):
        src = make_log("s", [(i * 100 / 9, 0) for i in range(10)])
        tgt = make_log("t", [(i * 100 / 9, 0) for i in range(10)])
        m = pair_traversals(src, tgt, 1.0)
        train, test = split_by_location(m, src, 0.8)
        assert (len(train), len(test)) == (8, 2)

    def test_symmetric_halves(self):
        src = make_log("s", [(i * 10, 0) for i in range(10)])
        tgt = make_log("t", [(i * 10, 0) for i in range(10)])
        m = pair_traversals(src, tgt, 1.0)
        train, test = split_by_location(m, src, 0.5)
        assert (len(train), len(test)) == (5, 5)

    def test_degenerate_route_rejected(self):
        src = make_log("s", [(3, 3)] * 4)
        tgt = make_log("t", [(3, 3)] * 4)
        m = pair_traversals(src, tgt, 1.0)
        with pytest.raises(InvalidInputError):
            split_by_location(m, src, 0.5)

    def test_disjoint_source_frames(self, rng):
        src = make_log("s", np.cumsum(rng.uniform(1, 3, (20, 2)), axis=0))
        tgt = make_log("t", src.positions + rng.normal(0, 0.1, (20, 2)))
        m = pair_traversals(src, tgt, 5.0)
        train, test = split_by_location(m, src, 0.6)
        assert set(train.source_frames()).isdisjoint(test.source_frames())
        assert len(train) + len(test) == len(m)

    def test_boundary_range_enforced(self):
        src = make_log("s", [(0, 0), (1, 0)])
        m = pair_traversals(src, src, 1.0)
        for bad in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(InvalidInputError):
                split_by_location(m, src, bad)


class TestFiles:
    def test_pose_log_round_trip(self, tmp_path, rng):
        log = make_log("night", rng.normal(0, 5, (7, 2)), times=rng.uniform(0, 100, 7))
        path = tmp_path / "poses.csv"
        write_pose_log(path, log)
        back = read_pose_log(path)
        assert back.traversal_id == log.traversal_id
        assert back.frame_ids == log.frame_ids
        np.testing.assert_array_equal(back.positions, log.positions)
        np.testing.assert_array_equal(back.times, log.times)

    def test_manifest_round_trip(self, tmp_path, rng):
        src = make_log("s", rng.normal(0, 5, (6, 2)))
        tgt = make_log("t", rng.normal(0, 5, (6, 2)))
        m = pair_traversals(src, tgt, 8.0)
        path = tmp_path / "pairs.txt"
        write_manifest(path, m)
        assert read_manifest(path) == m

    def test_manifest_rejects_bad_header(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("not a manifest\n")
        with pytest.raises(InvalidInputError):
            read_manifest(path)

    def test_manifest_invariants_enforced(self):
        with pytest.raises(InvalidInputError):
            CoarsePairManifest("a", "b", 1.0, (PairRecord("x", "y", 2.0),))
        with pytest.raises(InvalidInputError):
            CoarsePairManifest(
                "a", "b", 5.0, (PairRecord("x", "y", 1.0), PairRecord("x", "z", 1.0))
            )
