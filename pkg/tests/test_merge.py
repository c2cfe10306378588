import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mergeir.merge import (
    LayerPartition,
    MergeError,
    MergeSpec,
    Segment,
    classify_tensor,
    infer_total_layers,
    merge_archives,
    merge_tensor,
)
from mergeir.tensor_store import Tensor, TensorArchive

from .conftest import random_archive

GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
PART8 = LayerPartition(8, 4)


def spec(al, au, part=PART8, **kw):
    return MergeSpec(al, au, part, **kw)


@pytest.mark.parametrize(
    "name,expected",
    [
        ("layers.3.attn.wq", Segment.LOWER),
        ("layers.0.mlp.w1", Segment.LOWER),
        ("layers.4.mlp.w1", Segment.UPPER),
        ("layers.7.attn_norm.weight", Segment.UPPER),
        ("embed_tokens.weight", Segment.COPY_FROM_RETRIEVAL),
        ("final_norm.weight", Segment.UPPER),
        ("model.layers.2.self_attn.q_proj.weight", Segment.LOWER),
    ],
)
def test_classify(name, expected):
    assert classify_tensor(name, spec(0.5, 0.5)) is expected


def test_nonlayer_policy_lower():
    assert classify_tensor("final_norm.weight", spec(0.5, 0.5, nonlayer_policy=Segment.LOWER)) is Segment.LOWER


@pytest.mark.parametrize("name", ["layers.8.attn.wq", "layers.x.attn.wq"])
def test_classify_errors(name):
    with pytest.raises(MergeError):
        classify_tensor(name, spec(0.5, 0.5))


def test_partition_and_spec_validation():
    with pytest.raises(MergeError):
        LayerPartition(8, 8)
    with pytest.raises(MergeError):
        LayerPartition(8, 0)
    with pytest.raises(MergeError):
        MergeSpec(1.5, 0.5, PART8)
    assert LayerPartition.halves(32) == LayerPartition(32, 16)


def test_merge_tensor_scalar():
    out = merge_tensor(Tensor("w", np.array([2.0])), Tensor("w", np.array([-2.0])), 0.75)
    assert out.data.tolist() == [1.0]


def test_merge_tensor_mismatch():
    with pytest.raises(MergeError, match="shape"):
        merge_tensor(Tensor("w", np.zeros(2)), Tensor("w", np.zeros(3)), 0.5)
    with pytest.raises(MergeError, match="name"):
        merge_tensor(Tensor("a", np.zeros(2)), Tensor("b", np.zeros(2)), 0.5)


def test_merge_tensor_expression_order():
    rng = np.random.default_rng(0)
    x1 = rng.standard_normal(1000).astype(np.float32)
    x2 = rng.standard_normal(1000).astype(np.float32)
    for alpha in (0.1, 0.3, 0.75):
        a = np.float32(alpha)
        expected = (a * x1) + ((np.float32(1) - a) * x2)
        got = merge_tensor(Tensor("w", x1), Tensor("w", x2), alpha).data
        assert got.tobytes() == expected.tobytes()


def test_endpoint_alpha_one_is_bitwise():
    rng = np.random.default_rng(1)
    t1 = Tensor("w", rng.standard_normal((5, 5)))
    t2 = Tensor("w", rng.standard_normal((5, 5)))
    assert merge_tensor(t1, t2, 1.0).equals(t1)
    assert merge_tensor(t1, t2, 0.0).equals(Tensor("w", t2.data))


def _random_normal_f32(rng, n):
    bits = rng.integers(0, 2**32, size=n, dtype=np.uint64).astype(np.uint32)
    x = bits.view(np.float32)
    # 0.5 * x must stay a normal number for the fixpoint to be exact
    return x[np.isfinite(x) & (np.abs(x) >= np.float32(2.0**-125))]


@pytest.mark.parametrize("alpha", GRID)
def test_self_merge_fixpoint_sweep(alpha):
    x = _random_normal_f32(np.random.default_rng(42), 500_000)
    t = Tensor("w", x)
    assert merge_tensor(t, t, alpha).data.view(np.uint32).tolist() == x.view(np.uint32).tolist()


def test_self_merge_subnormal_exception():
    # halving a tiny odd-significand value underflows and drops a bit
    x = np.array([np.float32(2.0**-126) * np.float32(1.5) * -1], np.float32)
    x = np.nextafter(x, np.float32(0))
    t = Tensor("w", x)
    assert not merge_tensor(t, t, 0.5).equals(t)


def test_merge_archives_endpoints(toy_pair):
    ret, dom = toy_pair
    m11 = merge_archives(ret, dom, spec(1.0, 1.0))
    assert all(m11[n].equals(ret[n]) for n in ret)
    m00 = merge_archives(ret, dom, spec(0.0, 0.0))
    for n in ret:
        expected = ret[n] if n.startswith("embed_tokens.") else dom[n]
        assert m00[n].equals(expected), n
    assert not ret["embed_tokens.weight"].equals(dom["embed_tokens.weight"])


def test_merge_archives_segments(toy_pair):
    ret, dom = toy_pair
    m = merge_archives(ret, dom, spec(1.0, 0.0))
    assert m["layers.3.attn.wq"].equals(ret["layers.3.attn.wq"])
    assert m["layers.4.attn.wq"].equals(dom["layers.4.attn.wq"])
    assert m["final_norm.weight"].equals(dom["final_norm.weight"])


def test_merge_metadata(toy_pair):
    ret, dom = toy_pair
    m = merge_archives(ret, dom, spec(0.75, 1.0))
    assert m.metadata["merge.alpha_lower"] == "0.75"
    assert m.metadata["merge.alpha_upper"] == "1.00"
    assert m.metadata["merge.boundary"] == "4"
    assert m.metadata["merge.retrieval_source"] == ret.metadata["source"]
    assert m.metadata["merge.domain_source"] == dom.metadata["source"]
    assert m.metadata["tokenizer.mode"] == ret.metadata["tokenizer.mode"]
    assert list(m) == sorted(m)


def test_name_set_mismatch_reports_difference():
    rng = np.random.default_rng(0)
    a = random_archive(rng)
    b = TensorArchive({k: v for k, v in a.tensors.items() if k != "final_norm.weight"})
    with pytest.raises(MergeError, match="final_norm.weight"):
        merge_archives(a, b, spec(0.5, 0.5, LayerPartition(4, 2)))
    with pytest.raises(MergeError, match="final_norm.weight"):
        merge_archives(b, a, spec(0.5, 0.5, LayerPartition(4, 2)), allow_missing_domain=True)
    m = merge_archives(a, b, spec(0.5, 0.5, LayerPartition(4, 2)), allow_missing_domain=True)
    assert m["final_norm.weight"].equals(a["final_norm.weight"])


def test_shape_mismatch():
    a = TensorArchive.from_arrays({"layers.0.w": np.zeros((2, 2))})
    b = TensorArchive.from_arrays({"layers.0.w": np.zeros((2, 3))})
    with pytest.raises(MergeError, match="shape"):
        merge_archives(a, b, spec(0.5, 0.5, LayerPartition(2, 1)))


def test_infer_total_layers(toy_pair):
    assert infer_total_layers(toy_pair[0]) == 8


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(GRID), st.sampled_from(GRID))
def test_swap_symmetry(seed, al, au):
    rng = np.random.default_rng(seed)
    a, b = random_archive(rng), random_archive(rng)
    part = LayerPartition(4, 2)
    ab = merge_archives(a, b, spec(al, au, part))
    ba = merge_archives(b, a, spec(1 - al, 1 - au, part))
    for n in ab:
        if not n.startswith("embed_tokens."):
            assert ab[n].equals(ba[n]), n


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(GRID), st.sampled_from(GRID))
def test_self_merge_archive(seed, al, au):
    a = random_archive(np.random.default_rng(seed))
    m = merge_archives(a, a, spec(al, au, LayerPartition(4, 2)))
    assert all(m[n].equals(a[n]) for n in a)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1e6, 1e6, width=32), st.floats(-1e6, 1e6, width=32))
def test_monotone_blend(x1, x2):
    if not x1 > x2 or float(np.float32(x1) - np.float32(x2)) < 1e-3 * max(1.0, abs(x1), abs(x2)):
        return
    outs = [merge_tensor(Tensor("s", [x1]), Tensor("s", [x2]), a).data[0] for a in GRID]
    assert all(lo < hi for lo, hi in zip(outs, outs[1:]))


def test_classification_is_total(toy_pair):
    s = spec(0.5, 0.5)
    assigned = {n: classify_tensor(n, s) for n in toy_pair[0]}
    assert len(assigned) == len(toy_pair[0])
    assert set(assigned.values()) == set(Segment)
