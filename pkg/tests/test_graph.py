import os

import numpy as np
import pytest

from conftest import net_from_events
from m2dne.graph import (HistoryBuffer, ParseError, build_history_stream,
                         compute_macro_series, parse_edge_list, parse_labels,
                         snapshot_arrays, split_by_time, write_edge_list)


class TestParseEdgeList:
    def test_minimal_two_timestamps(self, tmp_edges):
        net = parse_edge_list(tmp_edges("a b 100\nb c 100\nc a 200"))
        assert net.node_count == 3
        assert len(net) == 3
        assert net.epoch_count == 2
        assert sorted(set(net.time.tolist())) == [1, 2]

    def test_dense_ids_first_appearance(self, tmp_edges):
        net = parse_edge_list(tmp_edges("x y 1\nz x 2"))
        assert net.raw_ids == ("x", "y", "z")
        assert net.dense_id("z") == 2

    def test_self_loop_dropped_with_count(self, tmp_edges):
        net = parse_edge_list(tmp_edges("a a 5\na b 5\n"))
        assert len(net) == 1
        assert net.self_loops_dropped == 1

    def test_unsorted_input_stable_sorted(self, tmp_edges):
        net = parse_edge_list(tmp_edges("a b 9\nc d 1\ne f 9\n"))
        assert net.time.tolist() == [1, 2, 2]
        # stable within equal time: (a,b) line precedes (e,f)
        assert net.raw_ids[net.src[1]] == "a"
        assert net.raw_ids[net.src[2]] == "e"

    def test_comments_and_blank_lines(self, tmp_edges):
        net = parse_edge_list(tmp_edges("# header\n\na b 1\n# trailing\n"))
        assert len(net) == 1

    def test_malformed_line_number(self, tmp_edges):
        with pytest.raises(ParseError, match="line 2"):
            parse_edge_list(tmp_edges("a b 1\na b\n"))

    def test_bad_timestamp(self, tmp_edges):
        with pytest.raises(ParseError, match="timestamp"):
            parse_edge_list(tmp_edges("a b xyz\n"))

    def test_empty_file(self, tmp_edges):
        with pytest.raises(ParseError, match="no events"):
            parse_edge_list(tmp_edges("# nothing\n"))

    def test_weighted(self, tmp_edges):
        net = parse_edge_list(tmp_edges("a b 1 2.5\na c 2\n"), weighted=True)
        assert net.weight.tolist() == [2.5, 1.0]

    def test_weight_rejected_when_not_weighted(self, tmp_edges):
        with pytest.raises(ParseError, match="line 1"):
            parse_edge_list(tmp_edges("a b 1 2.5\n"))

    def test_roundtrip_preserves_events(self, tmp_edges, tmp_path):
        net = parse_edge_list(tmp_edges("a b 30\nc a 10\nb c 30\nd a 45\n"))
        out = tmp_path / "roundtrip.tsv"
        write_edge_list(net, out)
        net2 = parse_edge_list(out)
        assert net2.src.tolist() == net.src.tolist()
        assert net2.dst.tolist() == net.dst.tolist()
        assert net2.time.tolist() == net.time.tolist()
        assert net2.raw_ids == net.raw_ids

    @pytest.mark.skipif("M2DNE_EUCORE" not in os.environ,
                        reason="set M2DNE_EUCORE to the Eucore edge file")
    def test_eucore_statistics(self):
        net = parse_edge_list(os.environ["M2DNE_EUCORE"])
        assert net.node_count == 986
        assert len(net) == 332334
        assert net.epoch_count == 526
        assert net.raw_timestamp_count == 526
        train, test = split_by_time(net, 501)
        assert train.time.max() == 500
        assert len(train) + len(test) == len(net)


class TestHistoryStream:
    def test_first_event_empty_buffers(self):
        net = net_from_events([(0, 1, 1)])
        (_, snap_s, snap_d), = list(build_history_stream(net, h=2))
        assert snap_s.entries == ()
        assert snap_d.entries == ()

    def test_h1_eviction(self):
        # node 0 meets 1, 2, 3 at t=1,2,3; before t=3 only the t=2 neighbor
        net = net_from_events([(0, 1, 1), (0, 2, 2), (0, 3, 3)])
        snaps = [s.entries for _, s, _ in build_history_stream(net, h=1)]
        assert snaps[2] == ((2, 2),)

    def test_four_node_hand_trace(self):
        events = [(0, 1, 1), (0, 2, 1), (1, 2, 2), (2, 3, 3), (0, 3, 3),
                  (3, 1, 4)]
        net = net_from_events(events)
        got = [(s.entries, d.entries)
               for _, s, d in build_history_stream(net, h=2)]
        expected = [
            ((), ()),
            ((), ()),                              # same epoch as the first
            (((0, 1),), ((0, 1),)),
            (((0, 1), (1, 2)), ()),
            (((1, 1), (2, 1)), ()),
            (((2, 3), (0, 3)), ((0, 1), (2, 2))),  # capacity evicted (0, 1)
        ]
        assert got == expected

    def test_replay_is_pure(self):
        rng = np.random.default_rng(0)
        events = [(int(a), int(b), int(t)) for a, b, t in
                  zip(rng.integers(0, 8, 60), rng.integers(8, 16, 60),
                      np.sort(rng.integers(1, 12, 60)))]
        net = net_from_events(events)
        run1 = [(s.entries, d.entries) for _, s, d in build_history_stream(net, 3)]
        run2 = [(s.entries, d.entries) for _, s, d in build_history_stream(net, 3)]
        assert run1 == run2

    def test_snapshot_invariants(self):
        rng = np.random.default_rng(1)
        events = [(int(a), int(a + 1 + b) % 10, int(t)) for a, b, t in
                  zip(rng.integers(0, 9, 200), rng.integers(0, 8, 200),
                      np.sort(rng.integers(1, 30, 200)))]
        events = [(a, b, t) for a, b, t in events if a != b]
        net = net_from_events(events, node_count=10)
        for event, snap_s, snap_d in build_history_stream(net, 4):
            for snap in (snap_s, snap_d):
                assert len(snap) <= 4
                assert all(tp < event.time for _, tp in snap.entries)

    def test_arrays_match_stream(self):
        rng = np.random.default_rng(2)
        events = [(int(a), int(a + 1 + b) % 12, int(t)) for a, b, t in
                  zip(rng.integers(0, 11, 150), rng.integers(0, 10, 150),
                      np.sort(rng.integers(1, 25, 150)))]
        events = [(a, b, t) for a, b, t in events if a != b]
        net = net_from_events(events, node_count=12)
        arrays = snapshot_arrays(net, 3)
        for m, (_, snap_s, snap_d) in enumerate(build_history_stream(net, 3)):
            for prefix, snap in (("src", snap_s), ("dst", snap_d)):
                k = int(getattr(arrays, prefix + "_len")[m])
                got = tuple(zip(getattr(arrays, prefix + "_nodes")[m, :k].tolist(),
                                getattr(arrays, prefix + "_times")[m, :k].tolist()))
                assert got == snap.entries

    def test_capacity_validation(self):
        net = net_from_events([(0, 1, 1)])
        with pytest.raises(ValueError):
            list(build_history_stream(net, 0))
        with pytest.raises(ValueError):
            HistoryBuffer(0, 0)


class TestMacroSeries:
    def test_single_event(self):
        series = compute_macro_series(net_from_events([(0, 1, 1)]))
        assert series.e.tolist() == [1.0]
        assert series.n.tolist() == [2.0]
        assert series.delta_e.tolist() == []

    def test_repeated_pair_counts_temporal_edges(self):
        series = compute_macro_series(net_from_events([(0, 1, 1), (0, 1, 2)]))
        assert series.e.tolist() == [1.0, 2.0]
        assert series.delta_e.tolist() == [1.0]

    def test_ten_event_hand_count(self):
        events = [(0, 1, 1), (0, 2, 1), (1, 2, 1), (0, 1, 2), (2, 3, 2),
                  (3, 4, 3), (0, 4, 3), (1, 4, 3), (2, 4, 4), (0, 1, 4)]
        series = compute_macro_series(net_from_events(events))
        assert series.e.tolist() == [3.0, 5.0, 8.0, 10.0]
        assert series.n.tolist() == [3.0, 4.0, 5.0, 5.0]
        assert series.delta_e.tolist() == [2.0, 3.0, 2.0]

    def test_totals_match_network(self):
        rng = np.random.default_rng(3)
        events = [(int(a), int(a + 1 + b) % 9, int(t)) for a, b, t in
                  zip(rng.integers(0, 8, 80), rng.integers(0, 7, 80),
                      np.sort(rng.integers(1, 15, 80)))]
        events = [(a, b, t) for a, b, t in events if a != b]
        net = net_from_events(events)
        series = compute_macro_series(net)
        assert series.e[-1] == len(net)
        assert series.n[-1] == net.node_count
        assert np.all(np.diff(series.e) >= 0)
        assert np.all(np.diff(series.n) >= 0)


class TestSplitByTime:
    EVENTS = [(0, 1, 1), (0, 2, 1), (1, 2, 1), (0, 1, 2), (2, 3, 2),
              (3, 4, 3), (0, 4, 3), (1, 4, 3), (2, 4, 4), (0, 1, 4)]

    def test_split_past_end_gives_empty_test(self):
        net = net_from_events(self.EVENTS)
        train, test = split_by_time(net, net.epoch_count + 1)
        assert len(train) == len(net)
        assert len(test) == 0

    def test_median_split_hand_count(self):
        net = net_from_events(self.EVENTS)
        train, test = split_by_time(net, 3)
        assert len(train) == 5
        assert len(test) == 5
        assert train.time.max() == 2
        assert test.time.min() == 3

    def test_shares_parent_maps(self):
        net = net_from_events(self.EVENTS)
        train, test = split_by_time(net, 3)
        assert train.node_count == net.node_count == test.node_count
        assert train.raw_ids == net.raw_ids

    def test_empty_train_rejected(self):
        net = net_from_events(self.EVENTS)
        with pytest.raises(ValueError):
            split_by_time(net, 1)

    def test_out_of_range_rejected(self):
        net = net_from_events(self.EVENTS)
        with pytest.raises(ValueError):
            split_by_time(net, net.epoch_count + 2)


class TestParseLabels:
    def test_two_classes(self, tmp_edges):
        net = parse_edge_list(tmp_edges("a b 1\nc a 2"))
        table = parse_labels(tmp_edges("a red\nb blue\nc red\n", "labels"), net)
        assert table.n_classes == 2
        assert len(table) == 3
        assert table.labels[table.node_ids == net.dense_id("c")][0] == 0

    def test_unknown_node_named(self, tmp_edges):
        net = parse_edge_list(tmp_edges("a b 1"))
        with pytest.raises(ParseError, match="zzz"):
            parse_labels(tmp_edges("zzz red\n", "labels"), net)

    def test_five_class_histogram(self, tmp_edges):
        nodes = [f"n{k}" for k in range(12)]
        edges = "\n".join(f"{nodes[k]} {nodes[(k + 1) % 12]} {k + 1}"
                          for k in range(12))
        net = parse_edge_list(tmp_edges(edges))
        per_class = {"c0": 4, "c1": 3, "c2": 2, "c3": 2, "c4": 1}
        lines, k = [], 0
        for cls, count in per_class.items():
            for _ in range(count):
                lines.append(f"{nodes[k]} {cls}")
                k += 1
        table = parse_labels(tmp_edges("\n".join(lines), "labels"), net)
        assert table.n_classes == 5
        hist = np.bincount(table.labels, minlength=5).tolist()
        assert hist == [4, 3, 2, 2, 1]

    def test_duplicate_rejected(self, tmp_edges):
        net = parse_edge_list(tmp_edges("a b 1"))
        with pytest.raises(ParseError, match="duplicate"):
            parse_labels(tmp_edges("a red\na blue\n", "labels"), net)
