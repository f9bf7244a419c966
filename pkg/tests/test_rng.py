import numpy as np

from cpmsim.rng import int_hash, stream, unit_hash


def test_stream_deterministic():
    a = stream(42, 3, "sensors").standard_normal(16)
    b = stream(42, 3, "sensors").standard_normal(16)
    assert np.array_equal(a, b)


def test_streams_independent_of_each_other():
    a = stream(42, 3, "sensors").standard_normal(16)
    b = stream(42, 4, "sensors").standard_normal(16)
    c = stream(42, 3, "ips-noise").standard_normal(16)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_stream_depends_on_seed():
    a = stream(1, "x").standard_normal(8)
    b = stream(2, "x").standard_normal(8)
    assert not np.array_equal(a, b)


def test_unit_hash_range_and_stability():
    vals = [unit_hash(7, "loss", i) for i in range(1000)]
    assert all(0.0 <= v < 1.0 for v in vals)
    assert vals == [unit_hash(7, "loss", i) for i in range(1000)]
    # Roughly uniform.
    assert 0.4 < sum(vals) / len(vals) < 0.6


def test_unit_hash_key_sensitivity():
    assert unit_hash(7, "loss", "a", 1) != unit_hash(7, "loss", "a", 2)
    assert unit_hash(7, "loss", "a", 1) != unit_hash(8, "loss", "a", 1)


def test_int_hash_bounds():
    for bound in (1, 2, 5):
        vals = [int_hash(3, bound, "delay", i) for i in range(200)]
        assert all(0 <= v < max(bound, 1) for v in vals)
    assert int_hash(3, 0, "x") == 0
    assert int_hash(3, 1, "x") == 0
