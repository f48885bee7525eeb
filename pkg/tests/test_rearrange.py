import json

import numpy as np
import pytest

from vqcluster import (
    Codebook,
    CodebookRearranger,
    PermutationMap,
    apply_permutation,
    balanced_kmeans,
    build_permutation,
    cluster_label,
    load_permutation,
    load_tokens,
    lookup,
    remap_tokens,
    save_permutation,
    save_tokens,
)
from vqcluster.clustering import ClusterAssignment
from vqcluster.rearrange import load_token_jsonl, save_token_jsonl
from vqcluster.toytrain import TokenSequence

from conftest import random_codebook


def make_assignment(ids, n, m):
    return ClusterAssignment(
        assignment=np.asarray(ids, dtype=np.int64),
        centroids=np.zeros((n, 1)),
        n=n,
        m=m,
        seed=0,
        iterations_run=1,
        converged=True,
    )


class TestPermutationMap:
    def test_from_forward_builds_inverse(self):
        perm = PermutationMap.from_forward([2, 0, 3, 1])
        np.testing.assert_array_equal(perm.inverse[perm.forward], np.arange(4))

    def test_rejects_non_bijection(self):
        with pytest.raises(ValueError, match="bijection"):
            PermutationMap.from_forward([0, 0, 1])

    def test_identity(self):
        np.testing.assert_array_equal(PermutationMap.identity(3).forward, [0, 1, 2])


class TestBuildPermutation:
    def test_interleaved_example(self):
        perm = build_permutation(make_assignment([1, 0, 1, 0], 2, 2))
        np.testing.assert_array_equal(perm.forward, [2, 0, 3, 1])

    def test_already_contiguous_is_identity(self):
        perm = build_permutation(make_assignment([0, 0, 1, 1], 2, 2))
        np.testing.assert_array_equal(perm.forward, np.arange(4))

    def test_single_cluster_is_identity(self):
        perm = build_permutation(make_assignment([0, 0, 0], 1, 3))
        np.testing.assert_array_equal(perm.forward, np.arange(3))

    def test_rejects_unbalanced(self):
        with pytest.raises(ValueError, match="balanced"):
            build_permutation(make_assignment([0, 0, 0, 1], 2, 2))

    def test_cluster_blocks_and_label_agreement(self):
        cb = random_codebook(32, 3, seed=17)
        asg = balanced_kmeans(cb, 4, seed=1)
        perm = build_permutation(asg)
        # members of cluster j occupy [j*m, (j+1)*m), ascending old index
        for j in range(4):
            news = perm.forward[asg.assignment == j]
            assert sorted(news) == list(range(j * 8, (j + 1) * 8))
            assert list(news) == sorted(news)
        # the permutation and the floor-division label rule agree
        np.testing.assert_array_equal(cluster_label(perm.forward, asg.m), asg.assignment)


class TestApplyRemap:
    def test_identity_keeps_codebook(self, line4):
        assert apply_permutation(line4, PermutationMap.identity(4)) == line4

    def test_swap_two_rows(self):
        cb = Codebook([[1.0], [2.0]])
        out = apply_permutation(cb, PermutationMap.from_forward([1, 0]))
        np.testing.assert_array_equal(out.entries, [[2.0], [1.0]])

    def test_forward_then_inverse_restores(self, line4):
        perm = PermutationMap.from_forward([2, 0, 3, 1])
        back = PermutationMap.from_forward(perm.inverse)
        assert apply_permutation(apply_permutation(line4, perm), back) == line4

    def test_remap_examples(self):
        perm = PermutationMap.from_forward([2, 0, 3, 1])
        np.testing.assert_array_equal(remap_tokens(np.array([0, 1]), perm), [2, 0])
        ident = PermutationMap.identity(4)
        np.testing.assert_array_equal(remap_tokens(np.array([3, 2]), ident), [3, 2])

    def test_remap_round_trip(self):
        perm = PermutationMap.from_forward([2, 0, 3, 1])
        back = PermutationMap.from_forward(perm.inverse)
        toks = np.array([0, 1, 2, 3, 1, 2])
        np.testing.assert_array_equal(remap_tokens(remap_tokens(toks, perm), back), toks)

    def test_embedding_preservation_commutes_exactly(self):
        cb = random_codebook(24, 5, seed=19)
        asg = balanced_kmeans(cb, 6, seed=2)
        perm = build_permutation(asg)
        toks = np.random.Generator(np.random.Philox(20)).integers(0, 24, size=100)
        before = lookup(toks, cb)
        after = lookup(remap_tokens(toks, perm), apply_permutation(cb, perm))
        assert before.tobytes() == after.tobytes()

    def test_remap_range_check(self):
        with pytest.raises(IndexError):
            remap_tokens(np.array([4]), PermutationMap.identity(4))

    def test_size_mismatch(self, line4):
        with pytest.raises(ValueError, match="size"):
            apply_permutation(line4, PermutationMap.identity(3))


class TestClusterLabel:
    def test_examples(self):
        assert cluster_label(5, 2) == 2
        assert cluster_label(0, 7) == 0
        for j in range(5):
            assert cluster_label(j * 4, 4) == j

    def test_zero_m_rejected(self):
        with pytest.raises(ValueError):
            cluster_label(3, 0)

    def test_array_input(self):
        np.testing.assert_array_equal(cluster_label(np.array([0, 3, 4, 11]), 4), [0, 0, 1, 2])


class TestSerialization:
    def test_permutation_json_round_trip(self, tmp_path):
        perm = build_permutation(make_assignment([1, 0, 1, 0], 2, 2))
        path = tmp_path / "perm.json"
        save_permutation(perm, path)
        doc = json.loads(path.read_text())
        assert doc == {"n": 2, "m": 2, "forward": [2, 0, 3, 1]}
        again = load_permutation(path)
        np.testing.assert_array_equal(again.forward, perm.forward)
        assert (again.n_clusters, again.cluster_size) == (2, 2)

    def test_permutation_without_metadata_refuses_save(self, tmp_path):
        with pytest.raises(ValueError, match="metadata"):
            save_permutation(PermutationMap.identity(3), tmp_path / "p.json")

    def test_tok1_round_trip(self, tmp_path):
        toks = np.array([0, 5, 7, 2, 0xFFFFFFFF])
        path = tmp_path / "stream.tok"
        save_tokens(toks, path)
        np.testing.assert_array_equal(load_tokens(path), toks)
        assert path.read_bytes()[:4] == b"TOK1"

    def test_tok1_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.tok"
        path.write_bytes(b"XOK1" + b"\x00" * 4)
        with pytest.raises(ValueError, match="magic"):
            load_tokens(path)

    def test_jsonl_round_trip(self, tmp_path):
        seqs = [TokenSequence(0, np.array([1, 2, 3])), TokenSequence(2, np.array([4, 0]))]
        path = tmp_path / "seqs.jsonl"
        save_token_jsonl(seqs, path)
        loaded = load_token_jsonl(path)
        assert [c for c, _ in loaded] == [0, 2]
        np.testing.assert_array_equal(loaded[0][1], [1, 2, 3])
        np.testing.assert_array_equal(loaded[1][1], [4, 0])


class TestCodebookRearranger:
    def test_fit_transform_contiguity(self):
        cb = random_codebook(40, 4, seed=23)
        rearranger = CodebookRearranger(n_clusters=5, random_state=0)
        out = rearranger.fit_transform(cb.entries)
        m = 8
        centred = rearranger.assignment_
        for j in range(5):
            news = rearranger.permutation_.forward[centred.assignment == j]
            assert sorted(news) == list(range(j * m, (j + 1) * m))
        # transformed rows are the original rows, reordered
        np.testing.assert_array_equal(np.sort(out, axis=0), np.sort(cb.entries, axis=0))

    def test_inverse_transform_round_trip(self):
        cb = random_codebook(12, 2, seed=24)
        rearranger = CodebookRearranger(n_clusters=3, random_state=1).fit(cb)
        out = rearranger.transform(cb)
        assert rearranger.inverse_transform(out) == cb

    def test_remap_matches_function(self):
        cb = random_codebook(12, 2, seed=25)
        rearranger = CodebookRearranger(n_clusters=4, random_state=0).fit(cb)
        toks = np.array([0, 3, 7, 11])
        np.testing.assert_array_equal(
            rearranger.remap(toks), remap_tokens(toks, rearranger.permutation_)
        )

    def test_unfitted_raises(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            CodebookRearranger().transform(np.zeros((4, 2)))

    def test_get_params(self):
        params = CodebookRearranger(n_clusters=7, max_iter=9, random_state=4).get_params()
        assert params == {"n_clusters": 7, "max_iter": 9, "random_state": 4}
