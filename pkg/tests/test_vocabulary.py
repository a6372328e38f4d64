import numpy as np
import pytest

from ccr.errors import DataError
from ccr.vocabulary import (
    Vocabulary,
    build_vocabulary,
    descriptor_distances,
    exemplar,
    kmeans_pp_init,
    quantize,
    quantize_batch,
    read_vocabulary,
    write_vocabulary,
)


def test_k1_is_centroid():
    v = build_vocabulary(np.array([[0.0, 0.0], [2.0, 0.0]]), k=1, seed=0)
    assert np.allclose(v.exemplars, [[1.0, 0.0]])


def test_k_equals_n_distinct_points(rng):
    pts = rng.random((8, 3))
    v = build_vocabulary(pts, k=8, seed=3)
    # every training point is an exemplar; distortion is zero
    assert sorted(map(tuple, v.exemplars)) == sorted(map(tuple, pts))
    for p in pts:
        _, d = quantize(p, v)
        assert d == 0.0


def test_lloyd_improves_on_init(rng):
    training = rng.random((512, 8))
    seed = 42
    init = kmeans_pp_init(training, 16, np.random.default_rng(np.random.PCG64(seed)))

    def distortion(centers):
        d = descriptor_distances(training, centers)
        return float(np.sum(np.min(d, axis=1) ** 2))

    v = build_vocabulary(training, k=16, seed=seed)
    assert distortion(v.exemplars) <= distortion(init)


def test_build_rejects_too_few_points():
    with pytest.raises(DataError):
        build_vocabulary(np.zeros((2, 3)), k=5, seed=0)


def test_build_deterministic(tmp_path, rng):
    training = rng.random((100, 4))
    v1 = build_vocabulary(training, k=10, seed=7)
    v2 = build_vocabulary(training, k=10, seed=7)
    p1, p2 = tmp_path / "a", tmp_path / "b"
    write_vocabulary(v1, p1)
    write_vocabulary(v2, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_quantize_exact_exemplar(rng):
    v = Vocabulary(rng.random((5, 4)))
    w, d = quantize(v.exemplars[3], v)
    assert (w, d) == (3, 0.0)


def test_quantize_tie_breaks_to_smaller_word():
    v = Vocabulary(np.array([[5.0], [0.0], [1.0], [9.0], [1.0]]))
    # 0.5 is equidistant from exemplars 1 (0.0) and 2 (1.0); also 4 duplicates 2
    w, d = quantize(np.array([0.5]), v)
    assert w == 1
    assert d == 0.5


def test_quantize_matches_linear_scan_oracle(rng):
    for _ in range(50):
        k = int(rng.integers(1, 30))
        dim = int(rng.integers(1, 8))
        v = Vocabulary(rng.random((k, dim)))
        for _ in range(20):
            d = rng.random(dim)
            best_w, best_d = None, None
            for w in range(k):
                dist = float(np.sqrt(np.sum((d - v.exemplars[w]) ** 2)))
                if best_d is None or dist < best_d:
                    best_w, best_d = w, dist
            assert quantize(d, v) == (best_w, best_d)


def test_quantize_batch_matches_single(rng):
    v = Vocabulary(rng.random((12, 5)))
    descs = rng.random((30, 5))
    words, dists = quantize_batch(descs, v)
    for i in range(30):
        w, d = quantize(descs[i], v)
        assert (words[i], dists[i]) == (w, d)


def test_quantize_idempotent_on_exemplars(rng):
    v = Vocabulary(rng.random((9, 3)))
    for w in range(9):
        assert quantize(exemplar(w, v), v) == (w, 0.0)


def test_exemplar_out_of_range(rng):
    v = Vocabulary(rng.random((4, 2)))
    assert np.array_equal(exemplar(0, v), v.exemplars[0])
    with pytest.raises(DataError):
        exemplar(4, v)


def test_dimension_mismatch():
    v = Vocabulary(np.zeros((2, 3)))
    with pytest.raises(DataError):
        quantize(np.zeros(4), v)
    with pytest.raises(DataError):
        build_vocabulary(np.zeros((3,)), k=1, seed=0)


def test_vocab_file_round_trip(tmp_path, rng):
    v = Vocabulary(rng.random((6, 4)))
    p = tmp_path / "v.ccrvoc"
    write_vocabulary(v, p)
    assert read_vocabulary(p) == v


def test_empty_cluster_repair_keeps_k():
    # two far groups, k=3: one cluster will start empty in some configuration
    pts = np.array([[0.0], [0.0], [0.0], [100.0], [100.0], [100.0]])
    v = build_vocabulary(pts, k=3, seed=1)
    assert v.size == 3
    assert np.all(np.isfinite(v.exemplars))


def test_distortion_monotone_across_iterations(rng):
    training = rng.random((200, 6))

    def distortion(centers):
        d = descriptor_distances(training, centers)
        return float(np.sum(np.min(d, axis=1) ** 2))

    prev = None
    for iters in range(0, 8):
        v = build_vocabulary(training, k=12, seed=5, max_iters=iters, rel_tol=0.0)
        cur = distortion(v.exemplars)
        if prev is not None:
            assert cur <= prev + 1e-9
        prev = cur


def test_nearest_exemplars_fast_path_matches_plain(rng):
    from ccr.vocabulary import nearest_exemplars

    # large enough to take the prefiltered path
    descs = rng.random((300, 16))
    ex = rng.random((600, 16))
    cols, dists = nearest_exemplars(descs, ex)
    full = descriptor_distances(descs, ex)
    assert np.array_equal(cols, np.argmin(full, axis=1))
    assert np.array_equal(dists, full[np.arange(len(descs)), cols])


def test_nearest_exemplars_fast_path_tie_rule(rng):
    from ccr.vocabulary import nearest_exemplars

    ex = rng.random((600, 16))
    ex[599] = ex[7]  # exact duplicate: ties must go to the smaller column
    descs = np.vstack([ex[7][None, :] + 0.0] * 300)
    cols, dists = nearest_exemplars(descs, ex)
    assert np.all(cols == 7)
    assert np.all(dists == 0.0)
