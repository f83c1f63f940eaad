import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adahash.errors import DataError
from adahash.feature_store import FeatureMatrix, LabelSet
from adahash.simgraph import (
    AndRoundStats,
    SignedSimilarityMatrix,
    and_update,
    build_high_order,
    build_low_order,
    combine,
    cosine_sim,
    f_w,
    from_dense_bool,
    load_graph,
    neighbor_row_similarity,
    round_stats,
    save_graph,
    symmetrize,
)

# ---------------------------------------------------------------------------
# exhaustive reference constructions, kept deliberately naive
# ---------------------------------------------------------------------------


def oracle_low_order(x, k1):
    n = x.shape[0]
    rows = []
    for i in range(n):
        sims = [(-cosine_sim(x[i], x[j]), j) for j in range(n) if j != i]
        sims.sort()
        rows.append(sorted([i] + [j for _, j in sims[:k1]]))
    return rows


def oracle_high_order(wl, k2):
    n = wl.n
    rows = []
    for i in range(n):
        sims = [(-neighbor_row_similarity(wl, i, j), j) for j in range(n) if j != i]
        sims.sort()
        rows.append(sorted([i] + [j for _, j in sims[:k2]]))
    return rows


def as_lists(w):
    return [row.tolist() for row in w.positives]


def random_graph(rng, n, density=0.3):
    dense = rng.random((n, n)) < density
    np.fill_diagonal(dense, True)
    return from_dense_bool(dense)


def test_cosine_sim_trivial():
    v = np.array([1.0, 2.0, 3.0])
    assert cosine_sim(v, v) == pytest.approx(1.0)
    assert cosine_sim([1, 0], [0, 1]) == pytest.approx(0.0)
    assert cosine_sim([1, 0], [-1, 0]) == pytest.approx(-1.0)
    assert cosine_sim([0.0, 0.0], [1.0, 1.0]) == 0.0  # zero norm treated as uninformative
    with pytest.raises(DataError):
        cosine_sim([1, 2], [1, 2, 3])


def test_build_low_order_three_points():
    x = np.array([[1, 0], [0.9, 0.1], [0, 1]], dtype=np.float64)
    w = build_low_order(x, k1=1)
    assert as_lists(w) == oracle_low_order(x, 1)
    assert as_lists(w)[0] == [0, 1]
    assert as_lists(w)[1] == [0, 1]


def test_build_low_order_full_graph():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((6, 4))
    w = build_low_order(x, k1=5)
    assert all(row.size == 6 for row in w.positives)


def test_build_low_order_diagonal_always_positive():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((10, 3))
    w = build_low_order(x, k1=3)
    assert all(i in row for i, row in enumerate(w.positives))


def test_build_low_order_rejects_bad_k():
    with pytest.raises(DataError):
        build_low_order(np.eye(4), k1=4)


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(min_value=3, max_value=24),
    d=st.integers(min_value=1, max_value=6),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_low_and_high_order_match_oracle(n, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    k1 = int(rng.integers(1, n))
    k2 = int(rng.integers(1, n))
    wl = build_low_order(x, k1)
    assert as_lists(wl) == oracle_low_order(x, k1)
    wh = build_high_order(wl, k2)
    assert as_lists(wh) == oracle_high_order(wl, k2)
    combined = combine(wl, wh)
    expected = [sorted(set(a) & set(b)) for a, b in zip(as_lists(wl), as_lists(wh))]
    assert as_lists(combined) == expected


def test_neighbor_row_similarity_closed_forms():
    # rows 0 and 1 share every +1 position: similarity is exactly 1
    w = SignedSimilarityMatrix(4, (np.array([0, 1]), np.array([0, 1]), np.array([2]), np.array([3])))
    assert neighbor_row_similarity(w, 0, 1) == pytest.approx(1.0)
    # rows 2 and 3 differ in exactly two positions
    assert neighbor_row_similarity(w, 2, 3) == pytest.approx(1.0 / (1.0 + 2.0 * np.sqrt(2.0)))


def test_neighbor_row_similarity_disjoint_rows():
    n = 6
    half = n // 2
    rows = [np.arange(half) if i < half else np.arange(half, n) for i in range(n)]
    w = SignedSimilarityMatrix(n, tuple(rows))
    # rows 0 and 3 differ everywhere: h = n differing positions
    assert neighbor_row_similarity(w, 0, 3) == pytest.approx(1.0 / (1.0 + 2.0 * np.sqrt(n)))


def test_high_order_prefers_identical_rows():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((8, 4))
    wl = build_low_order(x, k1=2)
    # force rows 0 and 5 to be identical
    rows = list(wl.positives)
    shared = np.unique(np.concatenate([[0, 5], rows[0]]))
    rows[0] = shared
    rows[5] = shared
    wl = SignedSimilarityMatrix(8, tuple(rows))
    wh = build_high_order(wl, k2=3)
    assert 5 in wh.positives[0]
    assert 0 in wh.positives[5]


def test_combine_truth_table():
    a = from_dense_bool(np.array([[True, True], [False, False]]))
    b = from_dense_bool(np.array([[True, False], [True, False]]))
    assert as_lists(combine(a, b)) == [[0], []]


def test_combine_idempotent_and_bounded():
    rng = np.random.default_rng(3)
    w1 = random_graph(rng, 9)
    w2 = random_graph(rng, 9)
    assert combine(w1, w1) == w1
    combined = combine(w1, w2)
    assert combined.n_plus <= min(w1.n_plus, w2.n_plus)


def test_symmetrize_unions_transpose():
    w = from_dense_bool(np.array([[True, True], [False, True]]))
    assert as_lists(symmetrize(w)) == [[0, 1], [0, 1]]


# ---------------------------------------------------------------------------
# adaptive update
# ---------------------------------------------------------------------------


def test_and_update_all_positive_noop():
    w = from_dense_bool(np.ones((4, 4), dtype=bool))
    sim = np.full((4, 4), 0.5)
    np.fill_diagonal(sim, 1.0)
    updated, stats = and_update(w, sim, gamma=1.0)
    assert updated == w
    assert stats.flipped == 0


def test_and_update_huge_gamma_never_flips():
    rng = np.random.default_rng(5)
    w = random_graph(rng, 8)
    sim = np.clip(rng.random((8, 8)), 0, 1)
    sim = (sim + sim.T) / 2
    np.fill_diagonal(sim, 1.0)
    updated, stats = and_update(w, sim, gamma=1e9)
    assert updated == w
    assert stats.flipped == 0


def test_and_update_hand_instance():
    # +1 entries at (0,1) and (2,3) with sims 0.8 and 0.6:
    # mu = 0.7, population sigma = 0.1, gamma = 1 puts the bar at 0.8.
    # Negative entries at 0.85 and 0.75 straddle it: exactly one flip.
    w = SignedSimilarityMatrix(
        4, (np.array([1]), np.array([], dtype=np.int64), np.array([3]), np.array([], dtype=np.int64))
    )
    sim = np.zeros((4, 4))
    sim[0, 1] = 0.8
    sim[2, 3] = 0.6
    sim[0, 2] = 0.85
    sim[1, 3] = 0.75
    updated, stats = and_update(w, sim, gamma=1.0)
    assert stats.mu == pytest.approx(0.7)
    assert stats.sigma == pytest.approx(0.1)
    assert stats.m == pytest.approx(0.8)
    assert stats.flipped == 1  # (0,2) crosses the bar; (0,1) was already +1 and stays
    assert as_lists(updated) == [[1, 2], [], [3], []]
    assert stats.n_plus == 3

    # direct re-evaluation of the update rule, entry by entry
    mu = (0.8 + 0.6) / 2
    sigma = np.sqrt(((0.8 - mu) ** 2 + (0.6 - mu) ** 2) / 2)
    m = mu + 1.0 * sigma
    dense_before = w.to_dense_bool()
    expected = dense_before | ((~dense_before) & (sim >= m))
    assert np.array_equal(updated.to_dense_bool(), expected)


def test_and_update_refuses_empty_graph():
    w = SignedSimilarityMatrix(2, (np.array([], dtype=np.int64), np.array([], dtype=np.int64)))
    with pytest.raises(DataError, match="no \\+1 entries"):
        and_update(w, np.eye(2), gamma=0.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**31))
def test_and_update_monotone_and_exact(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 16))
    w = random_graph(rng, n)
    sim = rng.uniform(-1, 1, (n, n))
    sim = (sim + sim.T) / 2
    np.fill_diagonal(sim, 1.0)
    gamma = float(rng.uniform(-1, 2))
    updated, stats = and_update(w, sim, gamma)
    before = w.to_dense_bool()
    after = updated.to_dense_bool()
    assert (before <= after).all()  # never demotes
    assert np.array_equal(after, before | (~before & (sim >= stats.m)))
    assert stats.n_plus >= w.n_plus
    assert stats.flipped == stats.n_plus - w.n_plus


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**31))
def test_and_update_gamma_ordering(seed):
    # a smaller gamma is looser: its flip set contains the stricter one's
    rng = np.random.default_rng(seed)
    n = 10
    w = random_graph(rng, n)
    sim = rng.uniform(-1, 1, (n, n))
    sim = (sim + sim.T) / 2
    np.fill_diagonal(sim, 1.0)
    loose, _ = and_update(w, sim, gamma=0.2)
    strict, _ = and_update(w, sim, gamma=1.5)
    assert (strict.to_dense_bool() <= loose.to_dense_bool()).all()


def test_round_stats_matches_and_update_threshold():
    rng = np.random.default_rng(11)
    w = random_graph(rng, 7)
    sim = rng.uniform(-1, 1, (7, 7))
    sim = (sim + sim.T) / 2
    np.fill_diagonal(sim, 1.0)
    observe = round_stats(w, sim, gamma=0.5, round_index=3)
    _, applied = and_update(w, sim, gamma=0.5, round_index=3)
    assert observe.m == applied.m
    assert observe.round == 3
    assert observe.flipped == 0
    assert observe.n_plus == w.n_plus


# ---------------------------------------------------------------------------
# graph quality
# ---------------------------------------------------------------------------


def test_f_w_perfect_graph():
    labels = LabelSet(np.array([[1, 0], [1, 0], [0, 1]], dtype=bool))
    dense = np.array([[1, 1, 0], [1, 1, 0], [0, 0, 1]], dtype=bool)
    quality = f_w(from_dense_bool(dense), labels)
    assert quality.f == pytest.approx(1.0)
    assert not quality.degenerate


def test_f_w_all_positive_half_relevant():
    # two classes of two samples each: 8 of 16 ordered pairs are relevant
    labels = LabelSet(np.array([[1, 0], [1, 0], [0, 1], [0, 1]], dtype=bool))
    quality = f_w(from_dense_bool(np.ones((4, 4), dtype=bool)), labels)
    assert quality.precision == pytest.approx(0.5)
    assert quality.recall == pytest.approx(1.0)
    assert quality.f == pytest.approx(2.0 / 3.0)


def test_f_w_diagonal_only():
    labels = LabelSet(np.array([[1, 0], [1, 0], [0, 1]], dtype=bool))
    diag = from_dense_bool(np.eye(3, dtype=bool))
    quality = f_w(diag, labels)
    # diagonal pairs are always relevant: precision 1, recall n / |relevant|
    n_rel = 3 + 2 * 1  # three self pairs plus the (0,1)/(1,0) pair
    assert quality.precision == pytest.approx(1.0)
    assert quality.recall == pytest.approx(3 / n_rel)


def test_f_w_degenerate_no_overlap():
    labels = LabelSet(np.array([[1, 0], [0, 1]], dtype=bool))
    w = from_dense_bool(np.array([[False, True], [False, False]]))
    quality = f_w(w, labels)
    assert quality.f == 0.0
    assert quality.degenerate


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**31))
def test_f_w_invariant_under_relabeling(seed):
    rng = np.random.default_rng(seed)
    membership = rng.random((8, 5)) < 0.4
    w = random_graph(rng, 8)
    perm = rng.permutation(5)
    before = f_w(w, LabelSet(membership))
    after = f_w(w, LabelSet(membership[:, perm]))
    assert before.f == pytest.approx(after.f)


def test_graph_snapshot_round_trip(tmp_path):
    rng = np.random.default_rng(21)
    w = random_graph(rng, 12)
    path = tmp_path / "w.sahw"
    save_graph(path, w)
    assert load_graph(path) == w


def test_stats_fields():
    stats = AndRoundStats(round=2, mu=0.5, sigma=0.1, m=0.6, n_plus=10, flipped=3)
    assert stats.m == stats.mu + 1.0 * stats.sigma
