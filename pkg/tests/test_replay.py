import numpy as np
import pytest
from hypothesis import given, strategies as st

from mcast_rl.replay import NStepBuffer, PrioritizedReplay, SumTree, Transition, n_step_return


def tr(tag, next_state=0.0):
    return Transition(np.array([tag]), 0, float(tag), next_state)


class TestNStepReturn:
    def test_examples(self):
        assert n_step_return([1, 1], 0.9) == pytest.approx(1.9)
        assert n_step_return([-0.3], 0.5) == -0.3
        with pytest.raises(ValueError):
            n_step_return([], 0.9)

    @given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.floats(0.01, 1.0))
    def test_three_terms(self, rewards, gamma):
        r0, r1, r2 = rewards
        assert n_step_return(rewards, gamma) == pytest.approx(r0 + gamma * r1 + gamma * gamma * r2, abs=1e-12)


class TestSumTree:
    def test_root_equals_leaf_sum_after_many_updates(self):
        rng = np.random.default_rng(0)
        tree = SumTree(37)
        for _ in range(10_000):
            tree.update(int(rng.integers(37)), float(rng.exponential()))
            assert tree.total == pytest.approx(tree.leaves().sum(), rel=1e-9)

    @given(st.integers(1, 64), st.lists(st.tuples(st.integers(0, 10**6), st.floats(0, 100)), max_size=200))
    def test_root_property(self, capacity, ops):
        tree = SumTree(capacity)
        for slot, value in ops:
            tree.update(slot % capacity, value)
        assert tree.total == pytest.approx(tree.leaves().sum(), rel=1e-9, abs=1e-12)

    def test_find_maps_mass_to_leaf(self):
        tree = SumTree(4)
        for i, p in enumerate([1.0, 0.0, 2.0, 1.0]):
            tree.update(i, p)
        assert [tree.find(x) for x in (0.0, 0.99, 1.0, 2.99, 3.0, 3.99)] == [0, 0, 2, 2, 3, 3]

    def test_rejects_empty_capacity(self):
        with pytest.raises(ValueError):
            SumTree(0)


class TestPrioritizedReplay:
    def test_proportional_probabilities(self):
        buf = PrioritizedReplay(8, alpha=1.0, eps=1e-12)
        buf.insert(tr(0), td_error=1.0)
        buf.insert(tr(1), td_error=3.0)
        assert buf.probabilities() == pytest.approx([0.25, 0.75])

    def test_beta_zero_gives_unit_weights(self):
        buf = PrioritizedReplay(8)
        for i, d in enumerate([0.1, 2.0, 5.0, 0.3]):
            buf.insert(tr(i), td_error=d)
        _, weights, _ = buf.sample(4, beta=0.0, rng=np.random.default_rng(0))
        assert np.array_equal(weights, np.ones(4))

    def test_weights_formula(self):
        buf = PrioritizedReplay(4, alpha=1.0, eps=1e-12)
        for i, d in enumerate([1.0, 1.0, 2.0]):
            buf.insert(tr(i), td_error=d)
        batch, weights, idx = buf.sample(3, beta=0.5, rng=np.random.default_rng(1))
        probs = np.array([1, 1, 2])[idx] / 4
        expected = (3 * probs) ** -0.5
        assert weights == pytest.approx(expected / expected.max())
        assert [b.n_step_return for b in batch] == [float(i) for i in idx]

    def test_empirical_frequencies(self):
        buf = PrioritizedReplay(4, alpha=1.0, eps=1e-12)
        for i, d in enumerate([1.0, 1.0, 2.0]):
            buf.insert(tr(i), td_error=d)
        rng = np.random.default_rng(2)
        draws = 100_000
        counts = np.zeros(3)
        for _ in range(draws):
            _, _, idx = buf.sample(1, 0.4, rng)
            counts[idx[0]] += 1
        p = np.array([0.25, 0.25, 0.5])
        sigma = np.sqrt(draws * p * (1 - p))
        assert (np.abs(counts - draws * p) < 3 * sigma).all()

    def test_new_items_get_max_priority_and_updates_replace(self):
        buf = PrioritizedReplay(4, alpha=0.6)
        buf.insert(tr(0), td_error=4.0)
        slot = buf.insert(tr(1))
        assert buf.tree[slot] == pytest.approx(buf.priority(4.0))
        buf.update([slot], [0.5])
        assert buf.tree[slot] == pytest.approx((0.5 + 1e-5) ** 0.6)

    def test_ring_overwrites_oldest(self):
        buf = PrioritizedReplay(2)
        for i in range(3):
            buf.insert(tr(i), td_error=1.0)
        assert len(buf) == 2
        assert sorted(t.n_step_return for t in buf.data) == [1.0, 2.0]

    def test_sampling_errors(self):
        buf = PrioritizedReplay(4)
        with pytest.raises(ValueError, match="empty"):
            buf.sample(1, 0.4, np.random.default_rng(0))
        buf.insert(tr(0))
        with pytest.raises(ValueError, match="batch of 2"):
            buf.sample(2, 0.4, np.random.default_rng(0))


class TestNStepBuffer:
    def test_windows_and_flush(self):
        buf = NStepBuffer(3, 0.5)
        assert buf.push("s0", 0, 1.0, "s1", False) == []
        assert buf.push("s1", 1, 2.0, "s2", False) == []
        out = buf.push("s2", 2, 4.0, "s3", False)
        assert len(out) == 1
        assert out[0].state == "s0" and out[0].next_state == "s3" and out[0].steps_spanned == 3
        assert out[0].n_step_return == pytest.approx(1 + 0.5 * 2 + 0.25 * 4)
        tail = buf.push("s3", 3, 8.0, None, True)
        assert [(t.state, t.steps_spanned, t.next_state) for t in tail] == [("s1", 3, None), ("s2", 2, None),
                                                                           ("s3", 1, None)]
        assert tail[-1].n_step_return == 8.0
        assert not buf.window

    def test_one_step_passthrough(self):
        buf = NStepBuffer(1, 0.9)
        (t,) = buf.push("a", 5, -1.0, "b", False)
        assert (t.state, t.action, t.n_step_return, t.next_state, t.steps_spanned) == ("a", 5, -1.0, "b", 1)

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            NStepBuffer(0, 0.9)
