import numpy as np
import pytest

from adahash.errors import DataError
from adahash.feature_store import LabelSet, relevance
from adahash.retrieval import (
    BinaryCodeSet,
    binarize,
    hamming,
    hamming_matrix,
    load_codes,
    map_at_n,
    pack_bits,
    pr_curve,
    precision_at_n,
    precision_series,
    rank,
    save_codes,
    unpack_signs,
)

# ---------------------------------------------------------------------------
# naive references over unpacked +-1 rows
# ---------------------------------------------------------------------------


def oracle_hamming(a_signs, b_signs):
    return int(sum(1 for x, y in zip(a_signs, b_signs) if x != y))


def oracle_rank(dists, ids):
    return [i for _, i in sorted((d, ids[i]) for i, d in enumerate(dists))]


def oracle_ap_at_n(rel_sequence, n):
    r_q = sum(rel_sequence)
    if r_q == 0:
        return None
    hits = 0
    total = 0.0
    for k, is_rel in enumerate(rel_sequence[:n], start=1):
        if is_rel:
            hits += 1
            total += hits / k
    return total / min(r_q, n)


def oracle_pr_points(rel_sequence):
    r_q = sum(rel_sequence)
    hits = 0
    points = []
    for k, is_rel in enumerate(rel_sequence, start=1):
        hits += is_rel
        points.append((hits / r_q, hits / k))
    return points


def oracle_interp(points, grid):
    out = []
    for g in grid:
        vals = [p for r, p in points if r >= g]
        out.append(max(vals) if vals else 0.0)
    return out


def random_codes(rng, n, l):
    return pack_bits(rng.random((n, l)) < 0.5)


# ---------------------------------------------------------------------------
# packing and distance
# ---------------------------------------------------------------------------


def test_binarize_and_unpack_round_trip():
    z = np.array([[0.3, -0.7, 0.0], [-0.1, 0.2, -0.9]])
    codes = binarize(z)
    signs = unpack_signs(codes)
    assert np.array_equal(signs, [[1, -1, 1], [-1, 1, -1]])
    assert binarize(signs.astype(float)).codes.tolist() == codes.codes.tolist()


def test_pack_pads_with_zero_bits():
    bits = np.ones((2, 70), dtype=bool)
    codes = pack_bits(bits)
    assert codes.codes.shape == (2, 2)
    assert codes.codes[0, 1] == (1 << 6) - 1  # only 6 live bits in the second word


def test_code_length_cap():
    with pytest.raises(DataError):
        BinaryCodeSet(l=5000, codes=np.zeros((1, 79), dtype=np.uint64))


def test_hamming_trivial():
    x = pack_bits(np.array([[True, False, True, True]]))
    y = pack_bits(np.array([[False, True, False, False]]))
    assert hamming(x.codes[0], x.codes[0]) == 0
    assert hamming(x.codes[0], y.codes[0]) == 4  # full complement


def test_hamming_matches_bit_loop_oracle():
    rng = np.random.default_rng(0)
    a = random_codes(rng, 10, 128)
    b = random_codes(rng, 10, 128)
    sa, sb = unpack_signs(a), unpack_signs(b)
    for i in range(10):
        for j in range(10):
            assert hamming(a.codes[i], b.codes[j]) == oracle_hamming(sa[i], sb[j])


def test_hamming_inner_product_identity():
    rng = np.random.default_rng(1)
    codes = random_codes(rng, 8, 96)
    signs = unpack_signs(codes).astype(np.int64)
    for i in range(8):
        for j in range(8):
            ip = int(signs[i] @ signs[j])
            assert hamming(codes.codes[i], codes.codes[j]) == (96 - ip) // 2


def test_hamming_matrix_blocks():
    rng = np.random.default_rng(2)
    q = random_codes(rng, 7, 65)
    db = random_codes(rng, 9, 65)
    full = hamming_matrix(q, db, block=3)
    for i in range(7):
        for j in range(9):
            assert full[i, j] == hamming(q.codes[i], db.codes[j])


# ---------------------------------------------------------------------------
# ranking
# ---------------------------------------------------------------------------


def test_rank_self_first_and_tie_break():
    db_bits = np.array([[True, True], [False, False], [True, True]])
    db = pack_bits(db_bits)
    queries = pack_bits(np.array([[True, True]]))
    ranked = rank(queries, db)
    # items 0 and 2 tie at distance zero: lower id first
    assert ranked.order[0].tolist() == [0, 2, 1]


def test_rank_matches_sort_oracle():
    rng = np.random.default_rng(3)
    queries = random_codes(rng, 5, 16)
    db = random_codes(rng, 20, 16)
    ranked = rank(queries, db)
    dists = hamming_matrix(queries, db)
    for q in range(5):
        assert ranked.order[q].tolist() == oracle_rank(dists[q].tolist(), list(range(20)))


def test_rank_is_permutation():
    rng = np.random.default_rng(4)
    ranked = rank(random_codes(rng, 3, 32), random_codes(rng, 12, 32))
    for q in range(3):
        assert sorted(ranked.order[q].tolist()) == list(range(12))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def make_instance(rng, n_query=4, n_db=30, l=16, classes=3):
    queries = random_codes(rng, n_query, l)
    db = random_codes(rng, n_db, l)
    membership = np.zeros((n_query + n_db, classes), dtype=bool)
    membership[np.arange(n_query + n_db), rng.integers(0, classes, n_query + n_db)] = True
    labels = LabelSet(membership)
    query_ids = np.arange(n_query)
    db_ids = np.arange(n_query, n_query + n_db)
    ranked = rank(queries, db, query_ids=query_ids, db_ids=db_ids)
    return ranked, labels


def rel_sequences(ranked, labels):
    out = []
    for q in range(ranked.n_queries):
        qid = int(ranked.query_ids[q])
        out.append([relevance(labels, qid, int(d)) for d in ranked.ranked_ids(q)])
    return out


def test_map_perfect_ranking():
    rng = np.random.default_rng(5)
    ranked, labels = make_instance(rng)
    # force every item relevant: single shared class
    labels = LabelSet(np.ones((labels.n, 1), dtype=bool))
    assert map_at_n(ranked, labels, 10) == pytest.approx(1.0)


def test_map_hand_case():
    # one query; relevant at ranks 1 and 3; N=3; R_q=2 -> (1 + 2/3) / 2
    db = pack_bits(np.array([[True, True], [True, False], [False, False]]))
    queries = pack_bits(np.array([[True, True]]))
    membership = np.array([[1, 0], [1, 0], [0, 1], [1, 0]], dtype=bool)  # query, db0, db1, db2
    labels = LabelSet(membership)
    ranked = rank(queries, db, query_ids=np.array([0]), db_ids=np.array([1, 2, 3]))
    assert rel_sequences(ranked, labels)[0] == [True, False, True]
    assert map_at_n(ranked, labels, 3) == pytest.approx(5.0 / 6.0)


def test_map_matches_oracle_on_random_instances():
    rng = np.random.default_rng(6)
    for _ in range(20):
        ranked, labels = make_instance(rng)
        for n in (1, 5, 30, 100):
            seqs = rel_sequences(ranked, labels)
            aps = [oracle_ap_at_n(s, n) for s in seqs]
            aps = [a for a in aps if a is not None]
            if not aps:
                with pytest.raises(DataError):
                    map_at_n(ranked, labels, n)
            else:
                assert map_at_n(ranked, labels, n) == pytest.approx(np.mean(aps))


def test_map_beyond_db_equals_full_map():
    rng = np.random.default_rng(7)
    ranked, labels = make_instance(rng, n_db=15)
    assert map_at_n(ranked, labels, 15) == pytest.approx(map_at_n(ranked, labels, 10**6))


def test_precision_trivial_and_oracle():
    rng = np.random.default_rng(8)
    ranked, labels = make_instance(rng)
    all_rel = LabelSet(np.ones((labels.n, 1), dtype=bool))
    assert precision_at_n(ranked, all_rel, 7) == pytest.approx(1.0)
    none_rel = LabelSet(np.eye(labels.n, dtype=bool))  # unique classes: nothing shared
    assert precision_at_n(ranked, none_rel, 7) == pytest.approx(0.0)
    seqs = rel_sequences(ranked, labels)
    expected = np.mean([sum(s[:7]) / 7 for s in seqs])
    assert precision_at_n(ranked, labels, 7) == pytest.approx(expected)


def test_precision_series_matches_pointwise():
    rng = np.random.default_rng(9)
    ranked, labels = make_instance(rng, n_db=12)
    series = precision_series(ranked, labels, 12)
    for n in range(1, 13):
        assert series[n - 1] == pytest.approx(precision_at_n(ranked, labels, n))


def test_pr_curve_perfect_ranking_is_flat_one():
    db = pack_bits(np.array([[True, True], [True, False], [False, False]]))
    queries = pack_bits(np.array([[True, True]]))
    labels = LabelSet(np.array([[1], [1], [1], [1]], dtype=bool))
    ranked = rank(queries, db, query_ids=np.array([0]), db_ids=np.array([1, 2, 3]))
    curve = pr_curve(ranked, labels)
    assert np.allclose(curve[:, 1], 1.0)


def test_pr_curve_matches_oracle_and_monotone():
    rng = np.random.default_rng(10)
    for _ in range(10):
        ranked, labels = make_instance(rng, n_db=20)
        seqs = [s for s in rel_sequences(ranked, labels) if any(s)]
        if not seqs:
            continue
        curve = pr_curve(ranked, labels)
        grid = curve[:, 0]
        expected = np.mean([oracle_interp(oracle_pr_points(s), grid) for s in seqs], axis=0)
        assert np.allclose(curve[:, 1], expected)
        assert np.all(np.diff(curve[:, 1]) <= 1e-12)  # nonincreasing


def test_pr_curve_recall_one_precision():
    # five-item database, one query: at full recall the best precision is
    # R_q / (rank of the last relevant item)
    rng = np.random.default_rng(11)
    ranked, labels = make_instance(rng, n_query=1, n_db=5)
    seq = rel_sequences(ranked, labels)[0]
    if not any(seq):
        pytest.skip("random instance had no relevant item")
    last = max(i + 1 for i, r in enumerate(seq) if r)
    expected = sum(seq) / last
    curve = pr_curve(ranked, labels)
    assert curve[-1, 0] == pytest.approx(1.0)
    assert curve[-1, 1] == pytest.approx(expected)


def test_metrics_invariant_under_db_permutation():
    rng = np.random.default_rng(12)
    queries = random_codes(rng, 4, 24)
    db_bits = rng.random((18, 24)) < 0.5
    membership = rng.random((22, 3)) < 0.5
    membership[:, 0] |= ~membership.any(axis=1)  # no empty rows
    labels = LabelSet(membership)
    query_ids = np.arange(4)
    db_ids = np.arange(4, 22)

    perm = rng.permutation(18)
    ranked_a = rank(queries, pack_bits(db_bits), query_ids, db_ids)
    ranked_b = rank(queries, pack_bits(db_bits[perm]), query_ids, db_ids[perm])
    assert map_at_n(ranked_a, labels, 9) == pytest.approx(map_at_n(ranked_b, labels, 9))
    assert precision_at_n(ranked_a, labels, 5) == pytest.approx(
        precision_at_n(ranked_b, labels, 5)
    )
    assert np.allclose(pr_curve(ranked_a, labels), pr_curve(ranked_b, labels))


def test_codes_file_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    codes = random_codes(rng, 9, 100)
    path = tmp_path / "codes.sahb"
    save_codes(path, codes)
    loaded = load_codes(path)
    assert loaded.l == 100
    assert np.array_equal(loaded.codes, codes.codes)
