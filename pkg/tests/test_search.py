import numpy as np
import pytest

from logitfuse import (
    AlphaGrid,
    ExpertLogits,
    LogitVector,
    StepLogits,
    multi_objective,
    search_alpha,
)
from logitfuse.core import MODE_JOINT_GRID, MODE_SINGLE_EXPERT_PER_STEP
from logitfuse.errors import GridTooLargeError

from testutil import random_step
from oracles import naive_search_joint, naive_search_single


def identity_step(rng, size=5, num_experts=2):
    large = LogitVector(rng.uniform(-2, 2, size))
    experts = []
    for t in range(num_experts):
        v = rng.uniform(-2, 2, size)
        experts.append(
            ExpertLogits(f"e{t}", LogitVector(v.copy()), LogitVector(v.copy()))
        )
    return StepLogits(large=large, experts=experts)


class TestSearchSingleExpertPerStep:
    def test_zero_delta_ties_to_all_zero(self, rng):
        step = identity_step(rng)
        result = search_alpha(step, AlphaGrid(), MODE_SINGLE_EXPERT_PER_STEP)
        assert result.objective_value == 0.0
        np.testing.assert_array_equal(result.alphas, [0.0, 0.0])

    def test_matches_bruteforce_oracle(self, rng):
        for _ in range(20):
            step = random_step(rng, 6, 2)
            result = search_alpha(step, AlphaGrid(), MODE_SINGLE_EXPERT_PER_STEP)
            alphas, obj = naive_search_single(
                list(step.large.values),
                [(list(e.fine_tuned.values), list(e.base.values))
                 for e in step.experts],
                0.0, 2.0, 0.1,
            )
            assert result.objective_value == pytest.approx(obj, abs=1e-12)
            np.testing.assert_allclose(result.alphas, alphas, atol=1e-12)

    def test_evaluation_count(self, rng):
        step = random_step(rng, 4, 3)
        result = search_alpha(step, AlphaGrid(), MODE_SINGLE_EXPERT_PER_STEP)
        assert result.evaluations == 21 * 3

    def test_at_most_one_nonzero(self, rng):
        for _ in range(10):
            step = random_step(rng, 5, 4)
            result = search_alpha(step, AlphaGrid(), MODE_SINGLE_EXPERT_PER_STEP)
            assert np.count_nonzero(result.alphas) <= 1

    def test_deterministic(self, rng):
        step = random_step(rng, 6, 2)
        a = search_alpha(step, AlphaGrid(), MODE_SINGLE_EXPERT_PER_STEP)
        b = search_alpha(step, AlphaGrid(), MODE_SINGLE_EXPERT_PER_STEP)
        np.testing.assert_array_equal(a.alphas, b.alphas)
        assert a.objective_value == b.objective_value


class TestSearchJointGrid:
    def test_matches_bruteforce_oracle(self, rng):
        grid = AlphaGrid(0.0, 2.0, 0.5)
        for _ in range(10):
            step = random_step(rng, 5, 2)
            result = search_alpha(step, grid, MODE_JOINT_GRID)
            alphas, obj = naive_search_joint(
                list(step.large.values),
                [(list(e.fine_tuned.values), list(e.base.values))
                 for e in step.experts],
                0.0, 2.0, 0.5,
            )
            assert result.objective_value == pytest.approx(obj, abs=1e-12)
            np.testing.assert_allclose(result.alphas, alphas, atol=1e-12)

    def test_evaluation_count(self, rng):
        step = random_step(rng, 4, 2)
        grid = AlphaGrid(0.0, 2.0, 0.5)
        result = search_alpha(step, grid, MODE_JOINT_GRID)
        assert result.evaluations == grid.num_points**2

    def test_blowup_guard(self, rng):
        step = random_step(rng, 4, 4)
        with pytest.raises(GridTooLargeError):
            search_alpha(step, AlphaGrid(), MODE_JOINT_GRID)

    def test_joint_at_least_as_good_as_restricted(self, rng):
        # full grid contains every restricted candidate
        grid = AlphaGrid(0.0, 2.0, 0.5)
        for _ in range(5):
            step = random_step(rng, 5, 2)
            joint = search_alpha(step, grid, MODE_JOINT_GRID)
            restricted = search_alpha(step, grid, MODE_SINGLE_EXPERT_PER_STEP)
            assert joint.objective_value <= restricted.objective_value + 1e-15


class TestSearchReturnedObjective:
    def test_objective_value_is_reevaluable(self, rng):
        step = random_step(rng, 6, 2)
        result = search_alpha(step, AlphaGrid(), MODE_SINGLE_EXPERT_PER_STEP)
        assert result.objective_value == multi_objective(step, result.alphas)

    def test_alphas_within_grid_bounds(self, rng):
        grid = AlphaGrid(0.5, 1.5, 0.25)
        step = random_step(rng, 6, 2)
        result = search_alpha(step, grid, MODE_SINGLE_EXPERT_PER_STEP)
        nonzero = result.alphas[result.alphas != 0]
        assert ((nonzero >= 0.5) & (nonzero <= 1.5)).all()
