import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from riskflow.agents import (
    Agent,
    AveragingWindow,
    Population,
    aggregate_flow,
    aggregate_variable,
    cell_sum,
    macro_of,
    matrix_velocities,
    parse_population_csv,
    population_csv,
    random_population,
    step_population,
)
from riskflow.domain import Grid, VectorField, mean_risk_of_field
from riskflow.errors import ConfigError, DimensionMismatch, ParseError, ZeroMass
from riskflow.transitions import GradeScale, TransitionMatrix


def single(x, amount=5.0, v=0.0):
    return Population.from_agents([Agent(0, np.array([x]), np.array([v]), {"A": amount})])


def loop_aggregate(pop, grid, name):
    """Oracle: per-agent loop with explicit cell arithmetic."""
    out = np.zeros(grid.size)
    for pos, a in zip(pop.positions, pop.amounts(name)):
        flat = 0
        for x in pos:
            flat = flat * grid.m + min(int(math.floor(x * grid.m)), grid.m - 1)
        out[flat] += a
    return out


@st.composite
def populations(draw, max_agents=40):
    n = draw(st.integers(1, 3))
    N = draw(st.integers(1, max_agents))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    pos = rng.random((N, n))
    # put some agents exactly on faces and corners
    pos[rng.random((N, n)) < 0.1] = 1.0
    pos[rng.random((N, n)) < 0.1] = 0.0
    vel = rng.normal(0, 0.3, (N, n))
    amounts = rng.uniform(0.0, 5.0, N)
    amounts[0] += 0.5
    return Population(np.arange(N), pos, vel, {"A": amounts})


class TestPopulation:
    def test_validation(self):
        with pytest.raises(ValueError):
            Population([0, 0], [[0.1], [0.2]], [[0.0], [0.0]], {})
        with pytest.raises(ValueError):
            Population([0], [[1.5]], [[0.0]], {})
        with pytest.raises(ValueError):
            Population([0], [[0.5]], [[0.0]], {"A": [1.0, 2.0]})

    def test_row_view(self):
        pop = single(0.3, 7.0, 0.1)
        a = pop.agents[0]
        assert a.id == 0 and a.variables == {"A": 7.0}
        assert pop.count == 1 and pop.n == 1

    def test_missing_variable_reads_zero(self):
        np.testing.assert_array_equal(single(0.3).amounts("B"), [0.0])


class TestStep:
    def test_zero_velocity(self):
        pop = random_population(20, 2, seed=3)
        out = step_population(pop, None, 1.0)
        np.testing.assert_array_equal(out.positions, pop.positions)

    def test_euler(self):
        out = step_population(single(0.5, v=0.1), None, 1.0)
        assert out.positions[0, 0] == pytest.approx(0.6)

    def test_clamp(self):
        out = step_population(single(0.95, v=0.1), None, 1.0)
        assert out.positions[0, 0] == 1.0
        assert out.velocities[0, 0] == 0.0

    def test_reflect(self):
        out = step_population(single(0.95, v=0.1), None, 1.0, boundary="reflect")
        assert out.positions[0, 0] == pytest.approx(0.95)
        assert out.velocities[0, 0] == -0.1

    def test_field_source(self):
        g = Grid(1, 2)
        v = VectorField(g, [[0.1], [-0.2]])
        pop = Population([0, 1], [[0.2], [0.7]], [[0.0], [0.0]], {})
        out = step_population(pop, v, 0.5)
        np.testing.assert_allclose(out.positions[:, 0], [0.25, 0.6])

    @given(populations(), st.sampled_from(["clamp", "reflect"]), st.floats(0.01, 3.0))
    def test_stays_in_cube(self, pop, boundary, dt):
        for _ in range(3):
            pop = step_population(pop, None, dt, boundary)
            assert np.all(pop.positions >= 0.0) and np.all(pop.positions <= 1.0)


class TestWindow:
    def test_box_average(self):
        w = AveragingWindow(2)
        np.testing.assert_array_equal(w.push(np.array([0, 5, 0, 0.0])), [0, 5, 0, 0])
        np.testing.assert_array_equal(w.push(np.array([0, 0, 5, 0.0])), [0, 2.5, 2.5, 0])
        np.testing.assert_array_equal(w.push(np.array([0, 0, 0, 5.0])), [0, 0, 2.5, 2.5])

    def test_invalid_span(self):
        with pytest.raises(ValueError):
            AveragingWindow(0)


class TestAggregate:
    def test_single_agent(self):
        f = aggregate_variable(single(0.25), Grid(1, 4), "A")
        np.testing.assert_array_equal(f.values, [0, 5, 0, 0])

    def test_window(self):
        g = Grid(1, 4)
        w = AveragingWindow(2)
        aggregate_variable(single(0.25), g, "A", w)
        f = aggregate_variable(single(0.5), g, "A", w)
        np.testing.assert_array_equal(f.values, [0, 2.5, 2.5, 0])

    def test_empty(self):
        pop = Population.from_agents([], n=1)
        np.testing.assert_array_equal(aggregate_variable(pop, Grid(1, 3), "A").values, 0.0)

    def test_flow_single(self):
        f = aggregate_flow(single(0.25, v=0.1), Grid(1, 4), "A")
        np.testing.assert_allclose(f.vectors[:, 0], [0, 0.5, 0, 0])

    def test_flow_two_in_one_cell(self):
        pop = Population([0, 1], [[0.1], [0.15]], [[0.1], [-0.1]], {"A": [2.0, 3.0]})
        f = aggregate_flow(pop, Grid(1, 4), "A")
        assert f.vectors[0, 0] == pytest.approx(-0.1)

    def test_zero_velocity_flow(self):
        pop = random_population(30, 2, seed=1, variables={"A": {"kind": "constant", "value": 1}})
        np.testing.assert_array_equal(aggregate_flow(pop, Grid(2, 4), "A").vectors, 0.0)

    @given(populations(), st.integers(2, 9))
    def test_matches_loop_oracle(self, pop, m):
        g = Grid(pop.n, m)
        np.testing.assert_allclose(aggregate_variable(pop, g, "A").flat(), loop_aggregate(pop, g, "A"), rtol=1e-13, atol=1e-13)


class TestMacro:
    def test_single(self):
        ms = macro_of(single(0.3, 7.0), "A")
        assert ms.total == 7.0
        np.testing.assert_array_equal(ms.mean_risk, [0.3])

    def test_weighted(self):
        pop = Population([0, 1], [[0.2], [0.8]], [[0.0], [0.0]], {"A": [1.0, 3.0]})
        ms = macro_of(pop, "A")
        assert ms.total == 4.0
        np.testing.assert_allclose(ms.mean_risk, [0.65], rtol=1e-15)

    def test_scale(self):
        pop = random_population(50, 2, seed=5, variables={"A": {"kind": "uniform", "low": 0, "high": 2}})
        big = pop.replace(variables={"A": pop.amounts("A") * 10})
        a, b = macro_of(pop, "A"), macro_of(big, "A")
        assert b.total == pytest.approx(10 * a.total, rel=1e-14)
        np.testing.assert_allclose(b.mean_risk, a.mean_risk, rtol=1e-14)

    def test_zero_mass(self):
        with pytest.raises(ZeroMass):
            macro_of(single(0.3, 0.0), "A")

    @given(populations(), st.integers(2, 12))
    def test_exact_consistency_with_fields(self, pop, m):
        g = Grid(pop.n, m)
        ms = macro_of(pop, "A", grid=g)
        field = aggregate_variable(pop, g, "A")
        flow = aggregate_flow(pop, g, "A")
        assert ms.total == float(cell_sum(field.flat()))
        np.testing.assert_array_equal(ms.flow, cell_sum(flow.vectors.reshape(g.size, g.n)))
        gap = np.abs(ms.mean_risk - mean_risk_of_field(field))
        assert np.all(gap <= g.h / 2 + 1e-12)

    @given(populations())
    def test_gridless_close_to_gridded(self, pop):
        g = Grid(pop.n, 7)
        a, b = macro_of(pop, "A"), macro_of(pop, "A", grid=g)
        assert a.total == pytest.approx(b.total, rel=1e-12)
        np.testing.assert_allclose(a.mean_risk, b.mean_risk, rtol=1e-12)


class TestRandomPopulation:
    def test_deterministic(self):
        dist = {"kind": "gaussian", "mean": [0.4, 0.6], "sigma": [0.2, 0.1]}
        a = random_population(100, 2, 9, dist, {"A": {"kind": "uniform", "low": 1, "high": 2}})
        b = random_population(100, 2, 9, dist, {"A": {"kind": "uniform", "low": 1, "high": 2}})
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.amounts("A"), b.amounts("A"))
        assert np.all((a.positions >= 0) & (a.positions <= 1))

    def test_bad_distributions(self):
        with pytest.raises(ConfigError):
            random_population(5, 1, 0, {"kind": "beta"})
        with pytest.raises(ConfigError):
            random_population(5, 1, 0, None, {"A": {"kind": "poisson"}})


class TestMatrixVelocities:
    def setup_method(self):
        self.m = TransitionMatrix(GradeScale([0.0, 0.5, 1.0]), [[0.5, 0.5, 0], [0, 0.5, 0.5], [0, 0, 1]], 2.0)

    def test_mean_by_nearest(self):
        v = matrix_velocities([self.m], [[0.1], [0.6], [0.9]], "mean")
        np.testing.assert_allclose(v[:, 0], [0.125, 0.125, 0.0])

    def test_field_interpolates(self):
        v = matrix_velocities([self.m], [[0.25]], "field")
        assert v[0, 0] == pytest.approx(0.125)

    def test_jump_targets(self):
        rng = np.random.default_rng(0)
        v = matrix_velocities([self.m], np.full((2000, 1), 0.5), "jump", rng)
        assert set(np.round(v[:, 0], 12)) == {0.0, 0.25}

    def test_needs_matrix_per_axis(self):
        with pytest.raises(DimensionMismatch):
            matrix_velocities([self.m], [[0.1, 0.2]])


class TestCsv:
    def test_round_trip(self):
        pop = random_population(10, 2, 4, variables={"B": {"kind": "uniform"}, "A": {"kind": "constant"}})
        text = population_csv(pop)
        assert text.splitlines()[0] == "id,x_1,x_2,v_1,v_2,A,B"
        back = parse_population_csv(text)
        np.testing.assert_array_equal(back.positions, pop.positions)
        np.testing.assert_array_equal(back.amounts("B"), pop.amounts("B"))

    def test_errors(self):
        with pytest.raises(ParseError):
            parse_population_csv("id,x_1,v_1,A\n0,0.1,0\n")
        with pytest.raises(ParseError):
            parse_population_csv("id,y_1,v_1\n")
