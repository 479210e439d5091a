"""Tests for named random streams."""

import json

import numpy as np

from overlapgan.rng import RngStreams


class TestRngStreams:
    """Independence and persistence of named streams."""

    def test_same_seed_same_draws(self):
        a, b = RngStreams(7), RngStreams(7)
        np.testing.assert_array_equal(a["noise"].random(5), b["noise"].random(5))

    def test_streams_are_independent(self):
        """Drawing from one stream does not shift another."""
        a, b = RngStreams(7), RngStreams(7)
        a["dropout"].random(1000)
        np.testing.assert_array_equal(a["noise"].random(5), b["noise"].random(5))

    def test_names_and_seeds_differ(self):
        streams = RngStreams(7)
        assert not np.array_equal(streams["noise"].random(5), streams["data"].random(5))
        assert not np.array_equal(RngStreams(8)["noise"].random(5), RngStreams(7)["noise"].random(5))

    def test_stream_is_cached(self):
        streams = RngStreams(0)
        assert streams.stream("x") is streams["x"]

    def test_positions_restore(self):
        """Saved positions (through JSON) resume the exact sequence."""
        streams = RngStreams(3)
        streams["noise"].random(17)
        saved = json.loads(json.dumps(streams.positions()))
        expected = streams["noise"].random(4)

        resumed = RngStreams(3)
        resumed.restore(saved)
        np.testing.assert_array_equal(resumed["noise"].random(4), expected)
