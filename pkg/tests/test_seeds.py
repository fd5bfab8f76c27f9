"""Seed derivation: determinism, isolation, and collision behavior."""

import numpy as np

from acdesign import seeds


class TestDerive:
    def test_deterministic(self):
        assert seeds.derive(0, 3, 17) == seeds.derive(0, 3, 17)
        assert seeds.derive(12345, 0) == seeds.derive(12345, 0)

    def test_path_order_matters(self):
        assert seeds.derive(0, 1, 2) != seeds.derive(0, 2, 1)

    def test_depth_matters(self):
        # (root, 3) and (root, 3, 0) are different nodes of the tree
        assert seeds.derive(7, 3) != seeds.derive(7, 3, 0)

    def test_roots_are_isolated(self):
        a = {seeds.derive(0, i) for i in range(200)}
        b = {seeds.derive(1, i) for i in range(200)}
        assert not a & b

    def test_fits_in_uint64(self):
        for i in range(50):
            s = seeds.derive(99, i)
            assert 0 <= s < 2 ** 64


class TestRngFrom:
    def test_matches_derive_stream(self):
        # rng_from(root, *path) must seed exactly the sequence derive names
        r1 = seeds.rng_from(5, 2, 4)
        r2 = np.random.default_rng(
            np.random.SeedSequence(5, spawn_key=(2, 4)))
        assert np.array_equal(r1.integers(0, 2 ** 32, 10),
                              r2.integers(0, 2 ** 32, 10))

    def test_no_path_uses_root(self):
        a = seeds.rng_from(11).uniform(size=5)
        b = seeds.rng_from(11).uniform(size=5)
        assert np.array_equal(a, b)

    def test_sibling_streams_differ(self):
        a = seeds.rng_from(0, 100, 0).uniform(size=8)
        b = seeds.rng_from(0, 100, 1).uniform(size=8)
        assert not np.array_equal(a, b)
