import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from actiontext.ensembling import EnsembleBuffer, EnsembleConfig, NoCoveringPrediction


def brute_force_action(history, n, H, t):
    """Recompute from the full push history: the last n pushes still inside the
    horizon window of the latest push, then every one of those covering t."""
    latest = history[-1][0]
    alive = [(e, c) for e, c in history if latest - e < H][-n:]
    rows = [c[t - e] for e, c in alive if e <= t < e + H]
    if not rows:
        return None
    total = np.zeros_like(rows[0])
    for r in rows:
        total = total + r
    return total / len(rows)


def chunk(H, D, value):
    return np.full((H, D), float(value))


class TestPush:
    def test_first_push(self):
        buf = EnsembleBuffer(2, 4).push(chunk(4, 1, 0), 0)
        assert len(buf) == 1

    def test_capacity_eviction(self):
        buf = EnsembleBuffer(2, 4)
        for t in range(3):
            buf.push(chunk(4, 1, t), t)
        assert [e for e, _ in buf.entries] == [1, 2]

    def test_coverage_eviction(self):
        buf = EnsembleBuffer(3, 3).push(chunk(3, 1, 0), 0).push(chunk(3, 1, 1), 3)
        assert [e for e, _ in buf.entries] == [3]

    def test_non_increasing(self):
        buf = EnsembleBuffer(2, 4).push(chunk(4, 1, 0), 5)
        with pytest.raises(ValueError):
            buf.push(chunk(4, 1, 0), 5)
        with pytest.raises(ValueError):
            buf.push(chunk(4, 1, 0), 4)

    def test_wrong_horizon(self):
        with pytest.raises(ValueError):
            EnsembleBuffer(2, 4).push(chunk(3, 1, 0), 0)

    def test_config_bounds(self):
        with pytest.raises(ValueError):
            EnsembleConfig(5, 4)
        with pytest.raises(ValueError):
            EnsembleConfig(0, 4)


class TestCurrentAction:
    def test_mean_of_three(self):
        H = 4
        buf = EnsembleBuffer(3, H)
        for t, v in enumerate([0.9, 1.0, 1.1]):
            c = np.zeros((H, 2))
            c[2 - t, 0] = v  # each chunk's row for timestep 2
            buf.push(c, t)
        assert buf.current_action(2)[0] == pytest.approx(1.0, abs=1e-15)

    def test_single_entry(self):
        c = np.arange(12.0).reshape(4, 3)
        assert np.array_equal(EnsembleBuffer(4, 4).push(c, 0).current_action(0), c[0])

    def test_no_cover(self):
        buf = EnsembleBuffer(2, 3).push(chunk(3, 1, 0), 0)
        with pytest.raises(NoCoveringPrediction):
            buf.current_action(3)

    def test_n1_is_plain_chunking(self, rng):
        buf = EnsembleBuffer(1, 5)
        for t in range(20):
            c = rng.normal(size=(5, 3))
            buf.push(c, t)
            assert np.array_equal(buf.current_action(t), c[0])

    @given(st.floats(-1e6, 1e6, allow_nan=False), st.integers(1, 16), st.data())
    def test_constant_rows_exact(self, v, H, data):
        n = data.draw(st.integers(1, H))
        buf = EnsembleBuffer(n, H)
        for t in range(H + 3):
            buf.push(chunk(H, 2, v), t)
            assert np.all(buf.current_action(t) == v)

    def test_permutation_invariant(self, rng):
        H = 6
        chunks = [rng.normal(size=(H, 2)) for _ in range(4)]
        rows = [c[3 - e] for e, c in enumerate(chunks)]
        buf = EnsembleBuffer(4, H)
        for e, c in enumerate(chunks):
            buf.push(c, e)
        np.testing.assert_allclose(buf.current_action(3), np.mean(rows[::-1], axis=0), atol=1e-15)


class TestReset:
    def test_reset(self):
        buf = EnsembleBuffer(2, 3).push(chunk(3, 1, 0), 0)
        buf.reset()
        assert len(buf) == 0 and buf.current_timestep is None
        with pytest.raises(NoCoveringPrediction):
            buf.current_action(0)
        buf.reset()
        assert len(buf) == 0
        buf.push(chunk(3, 1, 0), 0)  # earlier timesteps accepted again


@pytest.mark.parametrize("seed", range(50))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    H = int(rng.integers(1, 17))
    n = int(rng.integers(1, H + 1))
    D = int(rng.integers(1, 5))
    buf = EnsembleBuffer(n, H)
    history = []
    t = int(rng.integers(0, 5))
    for _ in range(40):
        c = rng.normal(size=(H, D))
        buf.push(c, t)
        history.append((t, c))
        assert len(buf) <= n
        assert all(t - e < H for e, _ in buf.entries)
        for q in range(t, t + H):
            expected = brute_force_action(history, n, H, q)
            np.testing.assert_allclose(buf.current_action(q), expected, rtol=0, atol=1e-12)
        t += int(rng.integers(1, 4))
