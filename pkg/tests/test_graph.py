import numpy as np
import pytest

from conftest import brute_force_sparsify, dense_power_propagate, random_symmetric, rel_err
from fsgraph.errors import DegenerateVectorError
from fsgraph.graph import (
    PropagationConfig,
    build_similarity,
    build_task_graph,
    cosine_similarity,
    normalize_adjacency,
    propagate,
    propagate_alpha_grad,
    sparsify_top_m,
)
from fsgraph.rng import make_rng


# --- cosine -----------------------------------------------------------------


def test_cosine_identical():
    assert cosine_similarity(np.array([3.0, 4.0]), np.array([3.0, 4.0])) == 1.0


def test_cosine_orthogonal():
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0


def test_cosine_45_degrees():
    got = cosine_similarity(np.array([1.0, 1.0]), np.array([1.0, 0.0]))
    assert abs(got - 0.7071067811865475) <= 1e-15


def test_cosine_zero_norm_errors():
    with pytest.raises(DegenerateVectorError):
        cosine_similarity(np.zeros(2), np.ones(2))


def test_cosine_symmetric_in_arguments():
    rng = make_rng(1)
    for _ in range(20):
        u, v = rng.normal(size=4), rng.normal(size=4)
        assert cosine_similarity(u, v) == cosine_similarity(v, u)


# --- similarity matrix --------------------------------------------------------


def test_build_similarity_identical_rows():
    s = build_similarity(np.array([[2.0, 1.0], [2.0, 1.0]]))
    assert np.allclose(s, [[0.0, 1.0], [1.0, 0.0]], atol=1e-15)


def test_build_similarity_orthogonal_rows():
    s = build_similarity(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert np.array_equal(s, np.zeros((2, 2)))


def test_build_similarity_three_rows():
    s = build_similarity(np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))
    assert abs(s[0, 1] - 0.70710678118654746) <= 1e-11
    assert abs(s[1, 2] - 0.70710678118654746) <= 1e-11
    assert s[0, 2] == 0.0
    assert np.array_equal(np.diag(s), np.zeros(3))


def test_build_similarity_exactly_symmetric():
    rng = make_rng(2)
    for _ in range(20):
        v = rng.normal(size=(12, 5))
        s = build_similarity(v)
        assert np.array_equal(s, s.T)


def test_build_similarity_zero_row_names_index():
    v = np.ones((3, 2))
    v[1] = 0.0
    with pytest.raises(DegenerateVectorError, match="1"):
        build_similarity(v)


# --- sparsify ------------------------------------------------------------------


def test_sparsify_noop_when_m_large():
    rng = make_rng(3)
    s = random_symmetric(rng, 6)
    out = sparsify_top_m(s, m=5)
    assert np.array_equal(out, s)
    assert out is not s


def test_sparsify_three_vertex_example():
    # row 0 = (0, .9, .1); row 2's top-1 is (2,1)=.8, so (0,2) dies
    s = np.array([[0.0, 0.9, 0.1], [0.9, 0.0, 0.8], [0.1, 0.8, 0.0]])
    out = sparsify_top_m(s, m=1)
    assert out[0, 2] == 0.0 and out[2, 0] == 0.0
    assert out[0, 1] == 0.9 and out[1, 2] == 0.8


def test_sparsify_matches_brute_force_union():
    rng = make_rng(4)
    for _ in range(100):
        s = random_symmetric(rng, 20)
        m = int(rng.integers(1, 8))
        assert np.array_equal(sparsify_top_m(s, m), brute_force_sparsify(s, m))


def test_sparsify_intersection_rule():
    rng = make_rng(5)
    for _ in range(30):
        s = random_symmetric(rng, 12)
        m = int(rng.integers(1, 6))
        got = sparsify_top_m(s, m, rule="intersection")
        assert np.array_equal(got, brute_force_sparsify(s, m, rule="intersection"))


def test_sparsify_idempotent():
    rng = make_rng(6)
    for _ in range(50):
        s = random_symmetric(rng, 15)
        m = int(rng.integers(1, 6))
        once = sparsify_top_m(s, m)
        assert np.array_equal(sparsify_top_m(once, m), once)


def test_sparsify_preserves_symmetry():
    rng = make_rng(7)
    for _ in range(30):
        s = random_symmetric(rng, 10)
        out = sparsify_top_m(s, 3)
        assert np.array_equal(out, out.T)


def test_sparsify_rejects_unknown_rule():
    with pytest.raises(ValueError):
        sparsify_top_m(np.zeros((3, 3)), 1, rule="nope")


# --- normalize ------------------------------------------------------------------


def test_normalize_worked_example():
    s = np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    e, deg = normalize_adjacency(s)
    assert np.array_equal(deg, np.array([2.0, 1.0, 1.0]))
    r = 0.7071067811865475
    expect = np.array([[0.0, r, r], [r, 0.0, 0.0], [r, 0.0, 0.0]])
    assert np.max(np.abs(e - expect)) <= 1e-15


def test_normalize_all_zero_floors_degrees():
    e, deg = normalize_adjacency(np.zeros((4, 4)))
    assert np.array_equal(e, np.zeros((4, 4)))
    assert np.all(deg == 1e-12)
    assert np.all(np.isfinite(e))


def test_normalize_reconstruction():
    rng = make_rng(8)
    for _ in range(50):
        s = np.abs(random_symmetric(rng, 9))
        e, deg = normalize_adjacency(s)
        recon = np.sqrt(deg)[:, None] * e * np.sqrt(deg)[None, :]
        denom = np.maximum(np.abs(s), 1e-300)
        mask = s != 0.0
        assert np.max(np.abs(recon - s)[mask] / denom[mask]) <= 1e-12


def test_normalize_rejects_negative_entry_by_default():
    s = np.array([[0.0, -0.5], [-0.5, 0.0]])
    with pytest.raises(ValueError, match="negative"):
        normalize_adjacency(s)


def test_normalize_allow_negative_accepts_entries_rejects_negative_degree():
    s = np.array([[0.0, 0.9, -0.1], [0.9, 0.0, 0.2], [-0.1, 0.2, 0.0]])
    e, deg = normalize_adjacency(s, allow_negative=True)
    assert np.array_equal(e, e.T)
    bad = np.array([[0.0, -0.9], [-0.9, 0.0]])
    with pytest.raises(ValueError):
        normalize_adjacency(bad, allow_negative=True)


def test_normalize_output_exactly_symmetric():
    rng = make_rng(9)
    for _ in range(30):
        s = np.abs(random_symmetric(rng, 11))
        e, _ = normalize_adjacency(s)
        assert np.array_equal(e, e.T)
        assert np.array_equal(np.diag(e), np.zeros(11))


# --- propagation -----------------------------------------------------------------


def test_propagate_gamma_zero_identity():
    rng = make_rng(10)
    v = rng.normal(size=(5, 3))
    e = np.abs(random_symmetric(rng, 5))
    out = propagate(v, e, PropagationConfig(alpha=0.7, gamma=0))
    assert np.array_equal(out, v)


def test_propagate_zero_graph_scalar_power():
    rng = make_rng(11)
    v = rng.normal(size=(4, 2))
    out = propagate(v, np.zeros((4, 4)), PropagationConfig(alpha=2.0, gamma=3))
    assert np.allclose(out, 8.0 * v, rtol=1e-15)


def test_propagate_hand_example():
    v = np.eye(2)
    e = np.array([[0.0, 1.0], [1.0, 0.0]])
    out = propagate(v, e, PropagationConfig(alpha=1.0, gamma=1))
    assert np.array_equal(out, np.ones((2, 2)))


def test_propagate_matches_dense_power():
    rng = make_rng(12)
    worst = 0.0
    for _ in range(200):
        # strictly positive rows keep every cosine (and degree) positive
        v = rng.random(size=(10, 4)) + 0.05
        g = build_task_graph(v, m=int(rng.integers(2, 9)))
        alpha = float(rng.uniform(-1.5, 1.5))
        for gamma in range(6):
            got = propagate(v, g.e_norm, PropagationConfig(alpha=alpha, gamma=gamma))
            want = dense_power_propagate(v, g.e_norm, alpha, gamma)
            worst = max(worst, rel_err(got, want))
    assert worst <= 1e-10


def test_alpha_grad_gamma_zero():
    rng = make_rng(13)
    v = rng.normal(size=(4, 3))
    up = rng.normal(size=(4, 3))
    got = propagate_alpha_grad(v, np.zeros((4, 4)), PropagationConfig(1.0, 0), up)
    assert got == 0.0


def test_alpha_grad_identity_case():
    rng = make_rng(14)
    v = rng.normal(size=(5, 3))
    got = propagate_alpha_grad(v, np.zeros((5, 5)), PropagationConfig(0.3, 1), v)
    assert abs(got - np.sum(v * v)) <= 1e-12 * np.sum(v * v)


def test_alpha_grad_matches_fd():
    rng = make_rng(15)
    h = 1e-6
    for _ in range(100):
        v = rng.random(size=(6, 3)) + 0.05
        g = build_task_graph(v, m=3)
        up = rng.normal(size=(6, 3))
        alpha = float(rng.uniform(-1.0, 1.5))
        gamma = int(rng.integers(1, 5))
        cfg = PropagationConfig(alpha=alpha, gamma=gamma)
        got = propagate_alpha_grad(v, g.e_norm, cfg, up)
        lo = np.sum(up * propagate(v, g.e_norm, PropagationConfig(alpha - h, gamma)))
        hi = np.sum(up * propagate(v, g.e_norm, PropagationConfig(alpha + h, gamma)))
        fd = (hi - lo) / (2 * h)
        assert rel_err(got, fd) <= 1e-6


def test_conic_combination_for_nonnegative_features():
    # gamma=1, alpha=0: each output row mixes neighbor rows with
    # non-negative weights, so non-negative inputs stay non-negative
    rng = make_rng(16)
    v = rng.random(size=(8, 3)) + 0.1
    g = build_task_graph(v, m=3)
    out = propagate(v, g.e_norm, PropagationConfig(alpha=0.0, gamma=1))
    assert np.all(out >= 0.0)


# --- task graph assembly ------------------------------------------------------------


def test_build_task_graph_invariants():
    rng = make_rng(17)
    v = rng.normal(size=(30, 8))
    g = build_task_graph(v, m=10)
    assert np.array_equal(g.s, g.s.T)
    assert np.array_equal(g.e_norm, g.e_norm.T)
    assert np.array_equal(np.diag(g.s), np.zeros(30))
    assert np.array_equal(np.diag(g.e_norm), np.zeros(30))
    assert g.m == 10
    recon = np.sqrt(g.degrees)[:, None] * g.e_norm * np.sqrt(g.degrees)[None, :]
    mask = g.s != 0.0
    rel = np.abs(recon - g.s)[mask] / np.abs(g.s)[mask]
    assert np.max(rel) <= 1e-12


def test_build_task_graph_rejects_zero_row():
    v = np.ones((4, 3))
    v[2] = 0.0
    with pytest.raises(DegenerateVectorError):
        build_task_graph(v, m=2)


def test_propagation_config_validation():
    with pytest.raises(ValueError):
        PropagationConfig(alpha=1.0, gamma=-1)
    with pytest.raises(ValueError):
        PropagationConfig(alpha=float("nan"), gamma=1)
