import numpy as np
import pytest

from vqcluster import (
    Codebook,
    CodebookFormatError,
    code_distance,
    load_codebook,
    lookup,
    neighbors_within_rank,
    quantize,
    save_codebook,
)

from conftest import random_codebook


class TestCodebookType:
    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="finite"):
            Codebook([[0.0, np.nan]])

    def test_rejects_empty_and_wrong_ndim(self):
        with pytest.raises(ValueError):
            Codebook(np.empty((0, 3)))
        with pytest.raises(ValueError):
            Codebook([1.0, 2.0])

    def test_entries_are_float32_and_readonly(self):
        cb = Codebook([[0.5, 1.5]])
        assert cb.entries.dtype == np.float32
        with pytest.raises(ValueError):
            cb.entries[0, 0] = 2.0


class TestPersistence:
    def test_binary_round_trip_bit_exact(self, tmp_path):
        cb = random_codebook(17, 5, seed=3)
        path = tmp_path / "cb.cbk"
        save_codebook(cb, path)
        again = load_codebook(path)
        assert again == cb
        assert again.entries.tobytes() == cb.entries.tobytes()

    def test_csv_round_trip_within_tolerance(self, tmp_path):
        cb = random_codebook(9, 4, seed=4)
        path = tmp_path / "cb.csv"
        save_codebook(cb, path)
        again = load_codebook(path)
        np.testing.assert_allclose(again.entries, cb.entries, atol=1e-6)

    def test_load_declared_header(self, data_dir):
        cb = load_codebook(data_dir / "tiny2x2.cbk")
        assert (cb.n_codes, cb.dim) == (2, 2)
        np.testing.assert_array_equal(cb.entries, [[0, 0], [1, 1]])

    def test_csv_and_binary_agree(self, data_dir):
        assert load_codebook(data_dir / "tiny2x2.csv") == load_codebook(data_dir / "tiny2x2.cbk")

    def test_nan_file_rejected_with_offset(self, data_dir):
        with pytest.raises(CodebookFormatError, match="byte offset 16"):
            load_codebook(data_dir / "nan.cbk")

    def test_bad_magic(self, data_dir):
        with pytest.raises(CodebookFormatError, match="magic"):
            load_codebook(data_dir / "badmagic.cbk")

    def test_truncated_payload(self, data_dir):
        with pytest.raises(CodebookFormatError, match="expected"):
            load_codebook(data_dir / "truncated.cbk")

    def test_csv_ragged_row_names_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("0,0\n1\n")
        with pytest.raises(CodebookFormatError, match="row 2"):
            load_codebook(path)

    def test_unwritable_path(self, tmp_path):
        cb = Codebook([[0.0]])
        with pytest.raises(OSError):
            save_codebook(cb, tmp_path / "missing_dir" / "cb.cbk")


class TestQuantize:
    def test_strictly_nearer(self):
        cb = Codebook([[0, 0], [1, 1]])
        assert quantize(np.array([0.1, 0.1]), cb) == 0

    def test_tie_breaks_to_lowest_index(self):
        cb = Codebook([[0, 0], [1, 1]])
        assert quantize(np.array([0.5, 0.5]), cb) == 0

    def test_grid_shape_preserved(self):
        cb = Codebook([[0, 0], [1, 1]])
        grid = np.full((2, 2, 2), 0.9)
        out = quantize(grid, cb)
        assert out.shape == (2, 2)
        np.testing.assert_array_equal(out, 1)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dim"):
            quantize(np.zeros((2, 3)), Codebook([[0, 0], [1, 1]]))

    def test_nearest_neighbor_optimality_exhaustive(self):
        cb = random_codebook(64, 3, seed=9)
        feats = np.random.Generator(np.random.Philox(10)).standard_normal((40, 3))
        idx = quantize(feats, cb)
        entries = cb.as_float64()
        for f, k in zip(feats, idx):
            d = ((entries - f) ** 2).sum(axis=1)
            assert d[k] <= d.min() + 0.0  # chosen row is a true minimizer
            assert k == int(np.argmin(d))


class TestLookup:
    def test_single_token(self):
        cb = Codebook([[0, 0], [1, 1]])
        np.testing.assert_array_equal(lookup(np.array([[0]]), cb), [[[0, 0]]])

    def test_quantize_lookup_fixed_point(self):
        cb = random_codebook(32, 4, seed=2)
        idx = quantize(cb.entries, cb)
        np.testing.assert_array_equal(idx, np.arange(32))
        np.testing.assert_array_equal(lookup(idx, cb), cb.entries)

    def test_out_of_range(self):
        cb = Codebook([[0, 0], [1, 1]])
        with pytest.raises(IndexError, match="5"):
            lookup(np.array([5]), cb)


class TestCodeDistance:
    def test_self_distance_zero(self, line4):
        for i in range(4):
            assert code_distance(line4, i, i) == 0

    def test_line_examples(self, line4):
        # independent oracle: sort all rows by distance from the query row
        def brute(cb, i, j):
            d = np.abs(cb.as_float64()[:, 0] - cb.as_float64()[i, 0])
            order = sorted(range(cb.n_codes), key=lambda k: (k != i, d[k], k))
            return order.index(j)

        assert code_distance(line4, 0, 1) == brute(line4, 0, 1) == 1
        assert code_distance(line4, 1, 3) == brute(line4, 1, 3) == 3

    def test_not_symmetric_witness(self, line4):
        # collinear points with unequal gaps
        assert code_distance(line4, 1, 3) == 3
        assert code_distance(line4, 3, 1) == 2

    def test_rank_map_is_bijection(self):
        cb = random_codebook(50, 2, seed=5)
        for i in (0, 13, 49):
            ranks = sorted(code_distance(cb, i, j) for j in range(50))
            assert ranks == list(range(50))

    def test_duplicate_rows_keep_self_at_rank_zero(self):
        cb = Codebook([[1.0], [1.0], [2.0]])
        assert code_distance(cb, 1, 1) == 0
        assert code_distance(cb, 1, 0) == 1  # the duplicate comes right after self

    def test_out_of_range(self, line4):
        with pytest.raises(IndexError):
            code_distance(line4, 0, 9)
        with pytest.raises(IndexError):
            code_distance(line4, 9, 0)


class TestNeighborsWithinRank:
    def test_zero_rank_is_self(self, line4):
        assert neighbors_within_rank(line4, 2, 0) == [2]

    def test_line_example(self, line4):
        assert neighbors_within_rank(line4, 0, 2) == [0, 1, 2]

    def test_full_range(self, line4):
        assert sorted(neighbors_within_rank(line4, 1, 3)) == [0, 1, 2, 3]

    def test_matches_code_distance(self):
        cb = random_codebook(20, 3, seed=8)
        got = neighbors_within_rank(cb, 4, 7)
        assert got == sorted(range(20), key=lambda j: code_distance(cb, 4, j))[:8]

    def test_bad_rank_bound(self, line4):
        with pytest.raises(IndexError):
            neighbors_within_rank(line4, 0, 4)
