import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdecal.brownian import (IncrementTensor, counter_words, derive_seed, load_increments,
                             sample_increments, save_increments, standard_normals)
from sdecal.errors import ValidationError


def test_variance_vanishes_with_dt():
    inc = sample_increments(7, 2, 3, 1, 1e-300)
    assert np.all(np.abs(inc.data) <= 1e-140)


def test_bit_identical_on_repeat():
    a = sample_increments(42, 4, 4, 2, 0.1)
    b = sample_increments(42, 4, 4, 2, 0.1)
    assert a.data.tobytes() == b.data.tobytes()


def test_moments():
    inc = sample_increments(1, 100000, 1, 1, 0.01)
    x = inc.data.ravel()
    assert abs(x.var() - 0.01) <= 0.05 * 0.01
    assert abs(x.mean()) <= 0.002


def test_moment_error_shrinks_with_M():
    errs = []
    for M in (1000, 16000, 256000):
        x = standard_normals(3, M, 1, 1).ravel()
        errs.append(abs(x.var() - 1.0) + abs(x.mean()))
    assert errs[-1] < errs[0]


def test_backends_produce_identical_words():
    assert np.array_equal(counter_words(11, 37, 5, 3, "numpy"), counter_words(11, 37, 5, 3, "numba"))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), M=st.integers(1, 9), N=st.integers(1, 6), m=st.integers(1, 3))
def test_cells_are_pure_functions_of_their_counter(seed, M, N, m):
    big = standard_normals(seed, M + 3, N + 2, m + 1)
    small = standard_normals(seed, M, N, m)
    # a cell's value does not depend on the tensor it is generated in
    assert np.array_equal(big[:M, :N, :m], small)


def test_seeds_differ():
    assert not np.array_equal(standard_normals(1, 4, 4, 1), standard_normals(2, 4, 4, 1))
    assert derive_seed(5, "a") != derive_seed(5, "b")
    assert derive_seed(5, "iter", 3) == derive_seed(5, "iter", 3)


@pytest.mark.parametrize("args", [(1, 0, 2, 1, 0.1), (1, 2, 0, 1, 0.1), (1, 2, 2, 0, 0.1),
                                  (1, 2, 2, 1, 0.0), (1, 2, 2, 1, -1.0), (-1, 2, 2, 1, 0.1),
                                  (1, 2, 2, 1, float("nan"))])
def test_rejects_bad_arguments(args):
    with pytest.raises(ValidationError):
        sample_increments(*args)


def test_tensor_is_read_only():
    inc = sample_increments(0, 2, 2, 1, 0.1)
    with pytest.raises(ValueError):
        inc.data[0, 0, 0] = 1.0


def test_binary_round_trip(tmp_path):
    inc = sample_increments(9, 5, 7, 2, 0.03)
    f = tmp_path / "inc.bin"
    save_increments(f, inc)
    raw = f.read_bytes()
    assert raw[:8] == b"SDEINCR1"
    assert len(raw) == 40 + 8 * 5 * 7 * 2
    back = load_increments(f)
    assert back.dt == inc.dt
    assert back.data.tobytes() == inc.data.tobytes()


def test_load_rejects_corrupt(tmp_path):
    f = tmp_path / "bad.bin"
    f.write_bytes(b"NOTMAGIC" + bytes(32))
    with pytest.raises(ValidationError):
        load_increments(f)
    inc = sample_increments(9, 2, 2, 1, 0.1)
    save_increments(f, inc)
    f.write_bytes(f.read_bytes()[:-8])
    with pytest.raises(ValidationError):
        load_increments(f)


def test_coarsen_sums_consecutive_steps():
    inc = sample_increments(4, 3, 8, 2, 0.25)
    c = inc.coarsen(4)
    assert c.N == 2 and c.dt == 1.0
    np.testing.assert_allclose(c.data[:, 0], inc.data[:, :4].sum(axis=1))
    with pytest.raises(ValidationError):
        inc.coarsen(3)


def test_subset_and_shape_properties():
    inc = sample_increments(4, 6, 3, 2, 0.5)
    s = inc.subset(slice(2, 4))
    assert (s.M, s.N, s.m) == (2, 3, 2)
    assert np.array_equal(s.data, inc.data[2:4])
    with pytest.raises(ValidationError):
        IncrementTensor(np.zeros((2, 2)), 0.1)
