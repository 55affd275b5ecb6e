import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mitoadapt import morpho
from mitoadapt.dataio import LabelStack
from mitoadapt.exceptions import SelectionError

from oracles import average_solidity_bruteforce, hull_pixels_bruteforce


def _trace(entries, objective=None):
    trace = morpho.SolidityTrace(objective_solidity=objective)
    for entry in entries:
        trace.append(entry)
    return trace


class TestConnectedComponents:
    def test_empty_mask(self):
        assert len(morpho.connected_components(np.zeros((5, 5), np.uint8))) == 0

    def test_two_disjoint_squares(self):
        mask = np.zeros((12, 12), np.uint8)
        mask[1:4, 1:4] = 1   # 9 px
        mask[6:11, 6:11] = 1  # 25 px
        objs = morpho.connected_components(mask)
        assert sorted(o.area for o in objs.objects) == [9, 25]

    def test_diagonal_connectivity(self):
        mask = np.zeros((4, 4), np.uint8)
        mask[0, 0] = 1
        mask[1, 1] = 1
        assert len(morpho.connected_components(mask, connectivity=8)) == 1
        assert len(morpho.connected_components(mask, connectivity=4)) == 2

    def test_invalid_connectivity(self):
        with pytest.raises(ValueError):
            morpho.connected_components(np.zeros((3, 3)), connectivity=6)


class TestHullArea:
    def test_matches_bruteforce_on_random_small_masks(self):
        rng = np.random.default_rng(0)
        for _ in range(60):
            h = rng.integers(1, 7)
            w = rng.integers(1, 7)
            mask = rng.random((h, w)) < 0.45
            if not mask.any():
                continue
            fast = morpho.average_solidity(mask.astype(np.uint8), min_object_px=1)
            slow = average_solidity_bruteforce(mask, min_object_px=1)
            assert fast == pytest.approx(slow, abs=1e-12)

    @given(st.data())
    @settings(max_examples=40, deadline=None)
    def test_matches_bruteforce_property(self, data):
        h = data.draw(st.integers(1, 6))
        w = data.draw(st.integers(1, 6))
        cells = data.draw(st.lists(st.booleans(), min_size=h * w, max_size=h * w))
        mask = np.asarray(cells, dtype=np.uint8).reshape(h, w)
        if not mask.any():
            return
        fast = morpho.average_solidity(mask, min_object_px=1)
        slow = average_solidity_bruteforce(mask, min_object_px=1)
        assert fast == pytest.approx(slow, abs=1e-12)

    def test_degenerate_line_and_point(self):
        assert morpho.hull_pixel_area(np.array([3]), np.array([4])) == 1
        rows = np.array([0, 1, 2])
        cols = np.array([0, 1, 2])
        assert morpho.hull_pixel_area(rows, cols) == 3
        assert morpho.hull_pixel_area(rows, cols) == hull_pixels_bruteforce(rows, cols)


class TestAverageSolidity:
    def test_filled_square_is_convex(self):
        mask = np.zeros((14, 14), np.uint8)
        mask[2:12, 2:12] = 1
        assert morpho.average_solidity(mask) == 1.0

    def test_sub_ten_pixel_object_discarded(self):
        mask = np.zeros((8, 8), np.uint8)
        mask[1:4, 1:4] = 1  # 9 px < 10
        assert morpho.average_solidity(mask) is None
        assert morpho.average_solidity(mask, min_object_px=9) == 1.0

    def test_plus_shape_matches_hull_oracle(self):
        mask = np.zeros((9, 9), np.uint8)
        mask[2:7, 3:6] = 1
        mask[3:6, 2:7] = 1
        assert int(mask.sum()) == 21
        fast = morpho.average_solidity(mask)
        slow = average_solidity_bruteforce(mask, min_object_px=10)
        assert fast == pytest.approx(slow, abs=1e-12)
        obj = morpho.connected_components(mask).objects[0]
        assert obj.solidity == 21 / obj.hull_area

    def test_solidity_in_unit_interval(self):
        rng = np.random.default_rng(1)
        mask = (rng.random((20, 20)) < 0.4).astype(np.uint8)
        for obj in morpho.connected_components(mask).objects:
            assert obj.area <= obj.hull_area
            assert 0.0 < obj.solidity <= 1.0

    def test_translation_and_rot90_invariance(self):
        base = np.zeros((16, 16), np.uint8)
        base[2:7, 3:6] = 1
        base[3:6, 2:7] = 1
        base[9:13, 9:14] = 1
        value = morpho.average_solidity(base, min_object_px=1)
        shifted = np.roll(base, (2, 1), axis=(0, 1))
        assert morpho.average_solidity(shifted, min_object_px=1) == pytest.approx(value)
        assert morpho.average_solidity(np.rot90(base), min_object_px=1) == pytest.approx(value)

    def test_threshold_sweep_identity_for_large_objects(self):
        mask = np.zeros((20, 20), np.uint8)
        mask[1:6, 1:6] = 1        # 25 px
        mask[10:14, 10:17] = 1    # 28 px
        values = {morpho.average_solidity(mask, min_object_px=k) for k in range(0, 11)}
        assert len(values) == 1

    def test_stack_pools_objects_across_slices(self):
        a = np.zeros((10, 10), np.uint8)
        a[0:5, 0:5] = 1
        b = np.zeros((10, 10), np.uint8)
        b[2:7, 3:6] = 1
        b[3:6, 2:7] = 1
        stack = np.stack([a, b])
        per_object = [
            obj.solidity
            for sl in stack
            for obj in morpho.connected_components(sl).objects
        ]
        assert morpho.average_solidity(stack, min_object_px=10) == pytest.approx(
            np.mean(per_object)
        )


class TestObjectiveSolidity:
    def test_rectangles_give_one(self):
        labels = np.zeros((2, 16, 16), np.uint8)
        labels[0, 1:6, 2:10] = 1
        labels[1, 4:14, 5:9] = 1
        assert morpho.objective_solidity(LabelStack(labels)) == 1.0

    def test_consistent_with_average_solidity(self, blob_dataset):
        direct = morpho.average_solidity(blob_dataset.labels.data)
        assert morpho.objective_solidity(blob_dataset.labels) == direct

    def test_empty_labels_undefined(self):
        assert morpho.objective_solidity(LabelStack(np.zeros((1, 8, 8), np.uint8))) is None


class TestSelection:
    def test_nearest_solidity_wins(self):
        trace = _trace(
            [morpho.TraceEntry(1, target_solidity=0.5),
             morpho.TraceEntry(2, target_solidity=0.8)],
            objective=0.75,
        )
        assert morpho.select_by_solidity(trace) == 2

    def test_single_entry(self):
        trace = _trace([morpho.TraceEntry(3, target_solidity=0.4)], objective=0.9)
        assert morpho.select_by_solidity(trace) == 3

    def test_tie_breaks_to_later_epoch(self):
        trace = _trace(
            [morpho.TraceEntry(3, target_solidity=0.7),
             morpho.TraceEntry(5, target_solidity=0.5),
             morpho.TraceEntry(7, target_solidity=0.9)],
            objective=0.8,
        )
        assert morpho.select_by_solidity(trace) == 7

    def test_undefined_entries_excluded(self):
        trace = _trace(
            [morpho.TraceEntry(1, target_solidity=None),
             morpho.TraceEntry(2, target_solidity=0.6)],
            objective=0.6,
        )
        assert morpho.select_by_solidity(trace) == 2

    def test_all_undefined_raises(self):
        trace = _trace([morpho.TraceEntry(1), morpho.TraceEntry(2)], objective=0.5)
        with pytest.raises(SelectionError):
            morpho.select_by_solidity(trace)

    def test_monotone_source_val_returns_last(self):
        entries = [
            morpho.TraceEntry(e, target_solidity=0.5, source_val_iou=0.1 * e)
            for e in range(1, 6)
        ]
        trace = _trace(entries, objective=0.5)
        assert morpho.select_by_criterion(trace, "source_val") == 5
        assert morpho.select_by_criterion(trace, "last_epoch") == 5

    def test_source_val_peak_detected(self):
        ious = {1: 0.2, 3: 0.4, 5: 0.9, 7: 0.6, 9: 0.3}
        trace = _trace(
            [morpho.TraceEntry(e, source_val_iou=v) for e, v in ious.items()]
        )
        assert morpho.select_by_criterion(trace, "source_val") == 5

    def test_solidity_criterion_delegates(self):
        trace = _trace(
            [morpho.TraceEntry(1, target_solidity=0.5),
             morpho.TraceEntry(2, target_solidity=0.8)],
            objective=0.75,
        )
        assert morpho.select_by_criterion(trace, "solidity") == morpho.select_by_solidity(trace)

    def test_missing_fields_raise(self):
        trace = _trace([morpho.TraceEntry(1, target_solidity=0.5)], objective=None)
        with pytest.raises(SelectionError):
            morpho.select_by_criterion(trace, "solidity")
        with pytest.raises(SelectionError):
            morpho.select_by_criterion(trace, "source_val")
        with pytest.raises(SelectionError):
            morpho.select_by_criterion(trace, "unknown")

    def test_epoch_reindexing_invariance(self):
        solidities = [0.3, 0.9, 0.6, 0.75]
        objective = 0.7
        base = _trace(
            [morpho.TraceEntry(i + 1, target_solidity=s) for i, s in enumerate(solidities)],
            objective=objective,
        )
        remapped = _trace(
            [morpho.TraceEntry(10 * (i + 1) + 3, target_solidity=s)
             for i, s in enumerate(solidities)],
            objective=objective,
        )
        base_pick = morpho.select_by_solidity(base)
        remapped_pick = morpho.select_by_solidity(remapped)
        assert remapped_pick == 10 * base_pick + 3


class TestTraceSerialization:
    def test_json_roundtrip(self, tmp_path):
        trace = _trace(
            [morpho.TraceEntry(1, target_solidity=0.5, target_iou=0.4, source_val_iou=0.6),
             morpho.TraceEntry(2, target_solidity=None, target_iou=None)],
            objective=0.8,
        )
        path = tmp_path / "trace.json"
        trace.save_json(path)
        loaded = morpho.SolidityTrace.load_json(path)
        assert loaded.to_dict() == trace.to_dict()

    def test_entries_strictly_increasing(self):
        trace = _trace([morpho.TraceEntry(1)])
        with pytest.raises(ValueError):
            trace.append(morpho.TraceEntry(1))
