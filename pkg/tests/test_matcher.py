import math

import numpy as np
import pytest

from smseg import losses as L
from smseg.embeddings import ClassEmbeddings, build_joint_embedding
from smseg.matcher import Assignment, Pair, hungarian, split_match

from oracles import (all_optimal_pairsets, brute_force_min_total,
                     dyadic_matrix, lexicographic_optimum)


def test_single_cell():
    a = hungarian(np.array([[3.5]]))
    assert [(p.query, p.target, p.cost) for p in a.pairs] == [(0, 0, 3.5)]
    assert a.unmatched_queries == []


def test_three_by_three_hand_case():
    cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
    a = hungarian(cost)
    assert a.total_cost == 5.0 == brute_force_min_total(cost)
    assert [(p.query, p.target) for p in a.pairs] == [(0, 1), (1, 0), (2, 2)]


def test_rectangular_vs_exhaustive():
    rng = np.random.default_rng(0)
    for _ in range(50):
        k = int(rng.integers(1, 7))
        t = int(rng.integers(1, k + 1))
        cost = dyadic_matrix(rng, k, t)
        a = hungarian(cost)
        assert a.total_cost == brute_force_min_total(cost)
        assert len(a.pairs) == t
        assert len({p.target for p in a.pairs}) == t


def test_lexicographic_tie_breaking():
    fixtures = [
        np.zeros((3, 3)),                                  # fully tied
        np.ones((2, 2)),
        np.array([[0.0, 1.0], [0.0, 1.0]]),
        np.array([[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]),    # K > T tied
        np.array([[2.0, 2.0], [2.0, 1.0], [1.0, 2.0]]),
        np.array([[5.0, 3.0], [3.0, 5.0], [4.0, 4.0]]),    # tied optima 8.0
    ]
    for cost in fixtures:
        a = hungarian(cost)
        expect = lexicographic_optimum(cost)
        assert tuple((p.query, p.target) for p in a.pairs) == expect, cost


def test_random_ties_match_reference():
    rng = np.random.default_rng(1)
    for _ in range(40):
        k = int(rng.integers(2, 6))
        t = int(rng.integers(1, k + 1))
        cost = rng.integers(0, 3, size=(k, t)).astype(np.float64)  # many ties
        a = hungarian(cost)
        best, _ = all_optimal_pairsets(cost)
        assert a.total_cost == best
        assert tuple((p.query, p.target) for p in a.pairs) == \
            lexicographic_optimum(cost)


def test_determinism():
    rng = np.random.default_rng(2)
    cost = rng.integers(0, 2, size=(5, 4)).astype(np.float64)
    runs = [hungarian(cost).pairs for _ in range(3)]
    assert runs[0] == runs[1] == runs[2]


def test_scale_invariance_of_argmin():
    rng = np.random.default_rng(3)
    for _ in range(10):
        cost = dyadic_matrix(rng, 5, 4)
        base = hungarian(cost)
        scaled = hungarian(4.0 * cost)                     # exact in fp
        assert [(p.query, p.target) for p in base.pairs] == \
            [(p.query, p.target) for p in scaled.pairs]
        assert scaled.total_cost == 4.0 * base.total_cost


def test_error_cases():
    with pytest.raises(ValueError):
        hungarian(np.zeros((2, 3)))                        # T > K
    with pytest.raises(ValueError):
        hungarian(np.array([[np.inf]]))
    with pytest.raises(ValueError):
        hungarian(np.zeros(3))


def test_empty_target_list():
    a = hungarian(np.zeros((3, 0)))
    assert a.pairs == [] and a.unmatched_queries == [0, 1, 2]


def test_assignment_validate():
    bad = Assignment(pairs=[Pair(0, 0, 1.0, "seen"), Pair(0, 1, 1.0, "seen")],
                     group="seen")
    with pytest.raises(ValueError):
        bad.validate()


def _joint(n_seen, n_cand, width=8):
    eye = np.eye(n_seen + n_cand, width, dtype=np.float32)
    return build_joint_embedding(
        ClassEmbeddings.from_matrix(eye[:n_seen], tuple(range(n_seen))),
        eye[n_seen:])


def _random_group_fixture(rng, k_s, k_u, t_s, t_u, width=8, hw=4):
    joint = _joint(max(t_s, 1), max(t_u, 1), width)
    v_s = rng.standard_normal((k_s, width)).astype(np.float32)
    v_u = rng.standard_normal((k_u, width)).astype(np.float32)
    m_s = rng.standard_normal((k_s, hw, hw)).astype(np.float32)
    m_u = rng.standard_normal((k_u, hw, hw)).astype(np.float32)
    seen_targets = [(i, (rng.random((hw, hw)) > 0.5).astype(np.float64))
                    for i in range(t_s)]
    cand_targets = [(joint.seen_count + i,
                     (rng.random((hw, hw)) > 0.5).astype(np.float64))
                    for i in range(t_u)]
    return joint, (v_s, m_s), (v_u, m_u), seen_targets, cand_targets


def test_split_match_no_candidates_equals_seen_only():
    rng = np.random.default_rng(4)
    joint, ps, pu, seen_targets, _ = _random_group_fixture(rng, 4, 3, 2, 0)
    w = L.CostWeights()
    combined = split_match(ps, pu, seen_targets, [], joint, w)
    cm = L.match_cost_matrix(L.class_similarity(ps[0], joint), ps[1],
                             seen_targets, "seen", w, joint.seen_count)
    seen_only = hungarian(cm.values, group="seen")
    assert [(p.query, p.target) for p in combined.pairs] == \
        [(p.query, p.target) for p in seen_only.pairs]
    assert combined.unmatched_queries == seen_only.unmatched_queries + [4, 5, 6]


def test_split_match_perfect_fixture_costs_near_zero():
    joint = _joint(2, 2, 8)
    scale = 60.0
    # +scale on the own class, -scale on every other: saturated both ways
    v_all = scale * (2.0 * joint.matrix - joint.matrix.sum(axis=0))
    v_s, v_u = v_all[:2], v_all[2:]
    masks = np.zeros((4, 4, 4))
    for i in range(4):
        masks[i, i, :] = 1.0
    m = 60.0 * (2.0 * masks - 1.0)
    seen_targets = [(0, masks[0]), (1, masks[1])]
    cand_targets = [(2, masks[2]), (3, masks[3])]
    a = split_match((v_s.astype(np.float32), m[:2].astype(np.float32)),
                    (v_u.astype(np.float32), m[2:].astype(np.float32)),
                    seen_targets, cand_targets, joint, L.CostWeights())
    assert len(a.pairs) == 4
    assert {(p.query, p.target) for p in a.pairs} == {(0, 0), (1, 1), (2, 2), (3, 3)}
    assert a.total_cost < 1e-4


def test_split_match_cross_group_exclusion_and_oracle():
    rng = np.random.default_rng(5)
    w = L.CostWeights()
    for _ in range(20):
        k_s, k_u = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        t_s, t_u = int(rng.integers(1, k_s + 1)), int(rng.integers(1, k_u + 1))
        joint, ps, pu, st, ct = _random_group_fixture(rng, k_s, k_u, t_s, t_u)
        a = split_match(ps, pu, st, ct, joint, w)
        # exclusion: seen queries < k_s pair with seen targets < t_s
        for p in a.pairs:
            assert (p.query < k_s) == (p.target < t_s)
            assert (p.group == "seen") == (p.query < k_s)
        # every target matched exactly once
        assert sorted(p.target for p in a.pairs) == list(range(t_s + t_u))
        # per-group totals equal the exhaustive group-respecting optimum
        cm_s = L.match_cost_matrix(L.class_similarity(ps[0], joint), ps[1],
                                   st, "seen", w, joint.seen_count)
        cm_u = L.match_cost_matrix(L.class_similarity(pu[0], joint), pu[1],
                                   ct, "candidate", w, joint.seen_count)
        got_s = math.fsum(p.cost for p in a.pairs if p.group == "seen")
        got_u = math.fsum(p.cost for p in a.pairs if p.group == "candidate")
        assert got_s == brute_force_min_total(cm_s.values)
        assert got_u == brute_force_min_total(cm_u.values)


def test_split_match_capacity_errors():
    rng = np.random.default_rng(6)
    joint, ps, pu, st, ct = _random_group_fixture(rng, 2, 2, 2, 2)
    with pytest.raises(ValueError):
        split_match((ps[0][:1], ps[1][:1]), pu, st, ct, joint, L.CostWeights())
    with pytest.raises(ValueError):
        split_match(ps, (pu[0][:1], pu[1][:1]), st, ct, joint, L.CostWeights())
