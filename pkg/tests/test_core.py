import statistics

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vecor.core import (
    BatchGrid,
    DegenerateInputError,
    NumericalError,
    ParameterError,
    SeededRng,
    ShapeError,
    Space,
    grid_elementwise,
    grid_from_bytes,
    grid_to_bytes,
    load_checkpoint,
    per_sample_std,
    rng_draw,
    save_checkpoint,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
shapes = st.tuples(*[st.integers(1, 4)] * 4)


@st.composite
def grid_pair(draw):
    shape = draw(shapes)
    a = draw(arrays(np.float64, shape, elements=finite))
    b = draw(arrays(np.float64, shape, elements=finite))
    return BatchGrid(a, Space.LATENT), BatchGrid(b, Space.VELOCITY)


def test_grid_is_read_only_copy():
    src = np.zeros((1, 1, 2, 2))
    g = BatchGrid(src)
    src[0, 0, 0, 0] = 5.0
    assert g.data[0, 0, 0, 0] == 0.0
    with pytest.raises(ValueError):
        g.data[0, 0, 0, 0] = 1.0


def test_grid_rejects_wrong_rank():
    with pytest.raises(ShapeError):
        BatchGrid(np.zeros((2, 2)))


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_grid_rejects_non_finite(bad):
    with pytest.raises(NumericalError):
        BatchGrid(np.full((1, 1, 1, 2), bad))


def test_elementwise_examples():
    x = BatchGrid(np.arange(8.0).reshape(2, 2, 1, 2))
    zero = BatchGrid(np.zeros(x.shape))
    assert np.array_equal(grid_elementwise(zero, x, "add", 1.0).data, x.data)
    assert np.array_equal(grid_elementwise(x, x, "sub", 1.0).data, zero.data)
    two = BatchGrid(np.full((1, 1, 1, 1), 2.0))
    assert grid_elementwise(two, two, "add", 0.5).data.item() == 3.0


def test_elementwise_shape_error_names_both_shapes():
    a, b = BatchGrid(np.zeros((1, 1, 1, 2))), BatchGrid(np.zeros((1, 2, 1, 1)))
    with pytest.raises(ShapeError, match=r"\(1, 1, 1, 2\).*\(1, 2, 1, 1\)"):
        grid_elementwise(a, b)


@given(grid_pair())
def test_elementwise_keeps_left_space_and_commutes(pair):
    a, b = pair
    out = grid_elementwise(a, b, "add")
    assert out.space == Space.LATENT
    assert np.array_equal(out.data, grid_elementwise(b, a, "add").data)
    assert grid_elementwise(a, b, "mul").space == Space.LATENT


@given(grid_pair())
def test_elementwise_is_reproducible(pair):
    a, b = pair
    assert np.array_equal(grid_elementwise(a, b, "sub", 0.3).data, grid_elementwise(a, b, "sub", 0.3).data)


def test_std_examples():
    assert per_sample_std(BatchGrid(np.full((1, 2, 2, 2), 3.7)))[0] == 0.0
    assert per_sample_std(BatchGrid(np.array([0.0, 2.0]).reshape(1, 2, 1, 1)))[0] == 1.0


def test_std_matches_independent_routine():
    x = SeededRng(7, "std").normal((1, 16, 1, 1))
    ref = statistics.pstdev(x.reshape(-1).tolist())
    assert abs(per_sample_std(BatchGrid(x))[0] - ref) < 1e-12


def test_std_single_entry_is_degenerate():
    with pytest.raises(DegenerateInputError):
        per_sample_std(BatchGrid(np.ones((3, 1, 1, 1))))


@given(arrays(np.float64, (1, 2, 2, 3), elements=finite), st.randoms(use_true_random=False))
def test_std_permutation_invariant(x, rnd):
    flat = x.reshape(-1).tolist()
    rnd.shuffle(flat)
    y = np.array(flat).reshape(x.shape)
    assert np.isclose(per_sample_std(BatchGrid(x))[0], per_sample_std(BatchGrid(y))[0], rtol=1e-12, atol=1e-9)


def test_rng_examples():
    rng = SeededRng(3, "draws")
    assert abs(rng_draw(rng, "beta", 100_000, 1.0).mean() - 0.5) < 0.01
    assert np.all(rng_draw(rng, "int_range", 50, 1, 1) == 1)
    assert abs(rng_draw(rng, "normal", 100_000).var() - 1.0) < 0.02


@pytest.mark.parametrize("dist,params", [("uniform", (1.0, 1.0)), ("beta", (0.0,)), ("int_range", (3, 2)), ("gamma", ())])
def test_rng_rejects_bad_ranges(dist, params):
    with pytest.raises(ParameterError):
        rng_draw(SeededRng(0), dist, 3, *params)


@given(st.integers(0, 2**63 - 1), st.text(min_size=1, max_size=12))
def test_rng_replay_is_bit_exact(seed, name):
    a, b = SeededRng(seed, name), SeededRng(seed, name)
    assert np.array_equal(a.normal(5), b.normal(5))
    assert np.array_equal(a.integers(0, 9, 5), b.integers(0, 9, 5))


def test_substreams_are_isolated():
    # Drawing from one substream must not shift another.
    root = SeededRng(11, "run")
    ref = root.substream("noise").normal(4)
    other = SeededRng(11, "run")
    other.substream("perturb").normal(1000)
    assert np.array_equal(other.substream("noise").normal(4), ref)
    assert not np.array_equal(root.substream("time").normal(4), ref)
    corr = np.corrcoef(SeededRng(1, "a").normal(20_000), SeededRng(1, "b").normal(20_000))[0, 1]
    assert abs(corr) < 0.03


@given(shapes, st.sampled_from(list(Space)))
def test_grid_dump_round_trip(shape, space):
    data = np.arange(np.prod(shape), dtype=np.float64).reshape(shape) - 3.5
    g = BatchGrid(data, space)
    buf = grid_to_bytes(g)
    assert len(buf) == 17 + 8 * data.size
    back = grid_from_bytes(buf)
    assert back.shape == g.shape and back.space == space and np.array_equal(back.data, data)


def test_grid_dump_header_is_little_endian():
    buf = grid_to_bytes(BatchGrid(np.zeros((2, 3, 1, 1)), Space.VELOCITY))
    assert buf[:17] == bytes([2, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 2])


def test_truncated_dump_is_rejected():
    buf = grid_to_bytes(BatchGrid(np.zeros((1, 2, 1, 1))))
    with pytest.raises(ShapeError):
        grid_from_bytes(buf[:-3])


def test_checkpoint_round_trip(tmp_path):
    params = SeededRng(0).normal(37)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, "ab" * 32, params)
    digest, back = load_checkpoint(path)
    assert digest == "ab" * 32 and np.array_equal(back, params)
