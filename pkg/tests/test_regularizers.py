"""Penalty values, gradients, and degeneracies."""

import numpy as np
import pytest

from sparsegrad import tensor as T
from sparsegrad.gates import GateGroup, gates_nonneg
from sparsegrad.regularizers import RegularizerSpec, penalty, penalty_gradient_check


def test_l1_value():
    spec = RegularizerSpec("l1", 0.1)
    assert penalty(spec, [0.5, -0.5, 0.0]).item() == 1.0


def test_group_l21_value_with_zero_group():
    spec = RegularizerSpec("group-l21", 0.1, grouping=[[0, 1], [2, 3]])
    a = T.Tensor([3.0, 4.0, 0.0, 0.0])
    r = penalty(spec, a)
    assert r.item() == 5.0
    g = T.backward(r, wrt=[a])[a].data
    assert np.all(np.isfinite(g))
    assert np.allclose(g, [0.6, 0.8, 0.0, 0.0])


def test_exclusive_l12_value():
    spec = RegularizerSpec("exclusive-l12", 0.1)
    assert penalty(spec, [1.0, 2.0]).item() == 4.5


def test_exclusive_l12_gradient_is_group_l1():
    spec = RegularizerSpec("exclusive-l12", 0.1)
    a = T.Tensor([1.0, 2.0])
    r = penalty(spec, a)
    g = T.backward(r, wrt=[a])[a].data
    assert np.allclose(g, [3.0, 3.0])


def test_lp_value():
    spec = RegularizerSpec("lp", 0.1, p=0.5)
    assert penalty(spec, [0.25, 0.25]).item() == pytest.approx(1.0, abs=1e-12)


def test_lp_rejects_negative():
    spec = RegularizerSpec("lp", 0.1, p=0.5)
    with pytest.raises(ValueError, match="non-negative"):
        penalty(spec, [0.5, -0.1])


def test_lp_excludes_exact_zeros_with_zero_gradient():
    spec = RegularizerSpec("lp", 0.1, p=0.5)
    a = T.Tensor([0.25, 0.0, 0.25])
    r = penalty(spec, a)
    assert r.item() == pytest.approx(1.0, abs=1e-12)
    g = T.backward(r, wrt=[a])[a].data
    assert g[1] == 0.0
    assert np.all(np.isfinite(g))


def test_lp_all_zero_gates():
    spec = RegularizerSpec("lp", 0.1, p=0.5)
    assert penalty(spec, [0.0, 0.0]).item() == 0.0


def test_penalties_nonnegative_and_zero_iff_zero():
    rng = np.random.default_rng(3)
    specs = [
        RegularizerSpec("l1", 1.0),
        RegularizerSpec("group-l21", 1.0, grouping=[[0, 1], [2, 3, 4]]),
        RegularizerSpec("exclusive-l12", 1.0, grouping=[[0, 1], [2, 3, 4]]),
        RegularizerSpec("lp", 1.0, p=0.5),
    ]
    for spec in specs:
        zeros = np.zeros(5)
        assert penalty(spec, zeros).item() == 0.0
        for _ in range(10):
            a = rng.random(5) + 0.01  # positive: valid for all kinds
            assert penalty(spec, a).item() > 0.0


def test_l1_equals_group_l21_with_singletons():
    rng = np.random.default_rng(4)
    a = rng.normal(size=6)
    l1 = penalty(RegularizerSpec("l1", 1.0), a).item()
    singles = RegularizerSpec("group-l21", 1.0, grouping=[[i] for i in range(6)])
    assert penalty(singles, a).item() == pytest.approx(l1, rel=1e-12)


def test_softmax_gates_make_l1_constant_one():
    # Normalized non-negative gates always have l1 norm exactly 1 while any
    # member survives; this is why the lp kind exists.
    rng = np.random.default_rng(5)
    spec = RegularizerSpec("l1", 1.0)
    for _ in range(20):
        g = GateGroup(rng.normal(size=6), float(rng.normal() - 2.0),
                      mode="nonneg-softmax")
        out = gates_nonneg(g)
        if out.degenerate:
            continue
        assert penalty(spec, out.a).item() == pytest.approx(1.0, abs=1e-12)


def test_lp_varies_on_softmax_gates():
    spec = RegularizerSpec("lp", 1.0, p=0.5)
    spread = penalty(spec, [0.25, 0.25, 0.25, 0.25]).item()
    peaked = penalty(spec, [0.91, 0.03, 0.03, 0.03]).item()
    assert spread > peaked  # sparser distribution is cheaper


def test_gradient_check_all_kinds():
    rng = np.random.default_rng(6)
    a_signed = rng.normal(size=6)
    a_signed[np.abs(a_signed) < 0.05] = 0.5
    a_pos = np.abs(a_signed) + 0.01
    grouping = [[0, 1, 2], [3, 4, 5]]
    cases = [
        (RegularizerSpec("l1", 1.0), a_signed),
        (RegularizerSpec("group-l21", 1.0, grouping=grouping), a_signed),
        (RegularizerSpec("exclusive-l12", 1.0, grouping=grouping), a_signed),
        (RegularizerSpec("lp", 1.0, p=0.5), a_pos),
        (RegularizerSpec("lp", 1.0, p=1.0), a_pos),
    ]
    for spec, a in cases:
        assert penalty_gradient_check(spec, a) < 1e-4, spec.kind


def test_gradient_check_rejects_kinks():
    spec = RegularizerSpec("l1", 1.0)
    with pytest.raises(ValueError, match="kink|1e-3"):
        penalty_gradient_check(spec, [0.5, 1e-4])
    with pytest.raises(ValueError, match="lp"):
        penalty_gradient_check(RegularizerSpec("lp", 1.0, p=0.5), [0.5, 0.0])


def test_pre_grouped_tensor_list():
    spec = RegularizerSpec("group-l21", 1.0)
    r = penalty(spec, [T.Tensor([3.0, 4.0]), T.Tensor([0.0, 0.0])])
    assert r.item() == 5.0


def test_spec_validation():
    with pytest.raises(ValueError, match="unknown regularizer"):
        RegularizerSpec("l3", 1.0)
    with pytest.raises(ValueError, match="non-negative"):
        RegularizerSpec("l1", -0.5)
    with pytest.raises(ValueError, match="p in"):
        RegularizerSpec("lp", 1.0, p=1.5)
    with pytest.raises(ValueError, match="p in"):
        RegularizerSpec("lp", 1.0)
    with pytest.raises(ValueError, match="only meaningful"):
        RegularizerSpec("l1", 1.0, p=0.5)
    with pytest.raises(ValueError, match="empty group"):
        RegularizerSpec("l1", 1.0, grouping=[[0], []])
    with pytest.raises(ValueError, match="disjoint"):
        RegularizerSpec("l1", 1.0, grouping=[[0, 1], [1, 2]])
    with pytest.raises(ValueError, match="cover"):
        penalty(RegularizerSpec("group-l21", 1.0, grouping=[[0, 1]]),
                [1.0, 2.0, 3.0])


def test_spec_roundtrip():
    spec = RegularizerSpec("lp", 0.05, p=0.5)
    assert RegularizerSpec.from_dict(spec.to_dict()) == spec
