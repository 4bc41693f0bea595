import random

import pytest

from parascan.errors import DefinitionError
from parascan.ranges import parse_range
from parascan.storage import iter_tsv_rows
from parascan.strategies.optimize import (
    Population, _Coordinate, apply_replacements, de_trials, run_optimize,
    update_waiting,
)


class TestMutation:
    def test_zero_difference_vector_returns_a(self):
        coord = _Coordinate(parse_range("interval(-5, 5)"))
        assert coord.mutate(1.5, 2.0, 2.0, 0.6) == 1.5

    def test_continuous_clamped_to_interval(self):
        coord = _Coordinate(parse_range("interval(0, 1)"))
        assert coord.mutate(0.9, 1.0, 0.0, 0.6) == 1.0
        assert coord.mutate(0.1, 0.0, 1.0, 0.6) == 0.0

    def test_discrete_mutates_on_indices(self):
        coord = _Coordinate(parse_range("10, 20, 30, 40"))
        # index arithmetic: 0 + 0.6 * (3 - 1) = 1.2 -> index 1
        assert coord.mutate(10.0, 40.0, 20.0, 0.6) == 20.0
        # clamps to the valid index range
        assert coord.mutate(40.0, 40.0, 10.0, 1.0) == 40.0

    def test_log_interval_mutates_in_log_space(self):
        coord = _Coordinate(parse_range(
            "interval(0.01, 100) with distribution=log"
        ))
        value = coord.mutate(1.0, 10.0, 0.1, 0.5)
        assert value == pytest.approx(10.0)  # 10^(0 + 0.5*(1-(-1)))


class TestGeneration:
    def population(self):
        return Population([((0.0, 0.0), 0.0), ((1.0, 0.0), -1.0),
                           ((0.0, 1.0), -1.0), ((1.0, 1.0), -2.0)])

    def test_crossover_probability_one_is_fixed_point(self):
        rng = random.Random(0)
        population = self.population()
        coords = [_Coordinate(parse_range("interval(-5, 5)"))] * 2
        trials = de_trials(population, coords, rng, weight=0.6, crossover=1.0)
        assert trials == [pars for pars, _ in population.members]

    def test_replacement_only_improves(self):
        population = self.population()
        before = [f for _, f in population.members]
        trials = [(9.0, 9.0)] * 4
        apply_replacements(population, trials, [-5.0, -0.5, -5.0, -1.0])
        after = [f for _, f in population.members]
        assert after == [0.0, -0.5, -1.0, -1.0]
        assert all(b >= a for a, b in zip(before, after))

    def test_waiting_counter(self):
        population = self.population()
        assert update_waiting(population, 1.0, 1.0, 0.0, 1e-8) == 1
        assert update_waiting(population, 1.0, 1.0 + 5e-9, 0.0, 1e-8) == 2
        assert update_waiting(population, 1.0, 2.0, 0.0, 1e-8) == 0


OPT_DEF = """
[setup]
mode = optimize
concurrent_processors = 2
unit_length = 20

[parameter_space]
par_names = x, y
par_x = interval(-1, 1)
par_y = interval(-1, 1)

[algorithm]
likelihood = -((pars.x - 0.3) ** 2 + (pars.y + 0.2) ** 2)
waiting_time = 20
"""


class TestRunOptimize:
    def test_finds_the_analytic_optimum(self, make_session, tmp_path):
        session = make_session(OPT_DEF, randomseed=123)
        assert run_optimize(session) == 0
        row = (tmp_path / "test.scan.optimum").read_text().split()
        fitness, x, y = float(row[0]), float(row[1]), float(row[2])
        assert x == pytest.approx(0.3, abs=1e-3)
        assert y == pytest.approx(-0.2, abs=1e-3)
        assert fitness >= -1e-5

    def test_population_file_format(self, make_session, tmp_path):
        session = make_session(OPT_DEF, randomseed=1)
        run_optimize(session)
        rows = list(iter_tsv_rows(str(tmp_path / "test.scan.population"),
                                  skip_excluded=False))
        assert len(rows) == 20
        assert all(len(row) == 3 for row in rows)  # fitness, x, y

    def test_data_rows_carry_fitness_annotation(self, make_session, tmp_path):
        session = make_session(OPT_DEF, randomseed=1)
        run_optimize(session)
        rows = list(iter_tsv_rows(str(tmp_path / "test.scan.data")))
        assert rows
        for row in rows[:50]:
            x, y, fitness = map(float, row)
            assert fitness == pytest.approx(-((x - 0.3) ** 2 + (y + 0.2) ** 2))

    def test_resume_from_population_file(self, make_session, tmp_path):
        session = make_session(OPT_DEF, randomseed=5)
        run_optimize(session)
        session.close()
        best = float((tmp_path / "test.scan.optimum").read_text().split()[0])
        resumed = make_session(OPT_DEF, randomseed=6)
        run_optimize(resumed)
        resumed.close()
        resumed_best = float(
            (tmp_path / "test.scan.optimum").read_text().split()[0]
        )
        assert resumed_best >= best - 1e-12  # never degrades

    def test_finite_space_never_computes_twice(self, make_session, tmp_path):
        definition = OPT_DEF.replace(
            "par_x = interval(-1, 1)", "par_x = -1, -0.5, 0, 0.5, 1"
        ).replace(
            "par_y = interval(-1, 1)", "par_y = -1, -0.5, 0, 0.5, 1"
        ).replace("unit_length = 20", "unit_length = 8")
        session = make_session(definition, randomseed=2)
        run_optimize(session)
        rows = [tuple(row[:2]) for row in
                iter_tsv_rows(str(tmp_path / "test.scan.data"))]
        assert len(rows) == len(set(rows))
        assert len(rows) <= 25

    def test_fitness_required(self, make_session):
        session = make_session(OPT_DEF.replace(
            "likelihood = -((pars.x - 0.3) ** 2 + (pars.y + 0.2) ** 2)", ""
        ))
        with pytest.raises(DefinitionError):
            run_optimize(session)

    def test_monotone_best_fitness(self, make_session, tmp_path):
        bests = []

        def track(iteration, total, line):
            bests.append(float(line.split()[-1]))

        session = make_session(OPT_DEF, randomseed=77)
        run_optimize(session, progress=track)
        assert all(b >= a for a, b in zip(bests, bests[1:]))
