import math
import random

import pytest

from parascan.errors import DefinitionError
from parascan.ranges import parse_range
from parascan.storage import iter_tsv_rows
from parascan.strategies.mcmc import (
    proposal_correction, propose, run_mcmc,
)


class TestPropose:
    def test_gaussian_step_stays_centered(self):
        rng = random.Random(1)
        spec = parse_range("interval(-10, 10) with mcmc_stepsize=0.5")
        draws = [propose((0.0,), [spec], rng)[0] for _ in range(20000)]
        mean = sum(draws) / len(draws)
        sigma = math.sqrt(sum((d - mean) ** 2 for d in draws) / len(draws))
        assert mean == pytest.approx(0.0, abs=0.02)
        assert sigma == pytest.approx(0.5, abs=0.02)

    def test_out_of_range_proposal_rejected_by_prior(self):
        rng = random.Random(2)
        spec = parse_range("interval(0, 1) with mcmc_stepsize=0.5")
        results = [propose((0.01,), [spec], rng) for _ in range(200)]
        assert any(r is None for r in results)
        assert all(0 <= r[0] <= 1 for r in results if r is not None)

    def test_discrete_steps_on_indices(self):
        rng = random.Random(3)
        spec = parse_range("10, 20, 30, 40 with mcmc_stepsize=1")
        seen = set()
        for _ in range(500):
            proposal = propose((20.0,), [spec], rng)
            if proposal is not None:
                seen.add(proposal[0])
        assert seen <= {10.0, 20.0, 30.0, 40.0}
        assert {10.0, 20.0, 30.0} <= seen

    def test_no_stepsize_draws_from_prior(self):
        rng = random.Random(4)
        spec = parse_range("interval(0, 1)")
        draws = [propose((0.99,), [spec], rng)[0] for _ in range(2000)]
        assert sum(draws) / len(draws) == pytest.approx(0.5, abs=0.05)

    def test_symmetric_proposal_correction_is_one(self):
        specs = [parse_range("interval(-1, 1) with mcmc_stepsize=0.1"),
                 parse_range("1, 2, 3 with mcmc_stepsize=1")]
        assert proposal_correction((0.0, 1.0), (0.1, 2.0), specs) == 1.0

    def test_gaussian_prior_correction(self):
        spec = parse_range("normalvariate(0, 1) with mcmc_stepsize=0.1")
        correction = proposal_correction((1.0,), (0.0,), [spec])
        assert correction == pytest.approx(math.exp(0.5))


MCMC_DEF = """
[setup]
mode = mcmc
concurrent_processors = 2
unit_length = 400

[parameter_space]
par_names = x
par_x = interval(-10, 10) with mcmc_stepsize=1.0

[algorithm]
likelihood = exp(-pars.x ** 2 / 2)
"""


def chain_rows(tmp_path, i):
    return list(iter_tsv_rows(str(tmp_path / ("test.scan.chain.%d" % i)),
                              skip_excluded=False))


class TestRunMcmc:
    def test_chain_row_counts_and_weighted_moments(self, make_session, tmp_path):
        session = make_session(MCMC_DEF, randomseed=11)
        assert run_mcmc(session) == 0
        weighted = []
        for i in range(2):
            rows = chain_rows(tmp_path, i)
            assert len(rows) == 400  # accepted rows, not stay-count weighted
            for row in rows:
                x, likelihood, stay = float(row[0]), float(row[1]), int(row[2])
                assert likelihood == pytest.approx(math.exp(-x * x / 2))
                assert stay >= 1
                weighted.extend([x] * stay)
        mean = sum(weighted) / len(weighted)
        var = sum((w - mean) ** 2 for w in weighted) / len(weighted)
        assert mean == pytest.approx(0.0, abs=0.2)
        assert var == pytest.approx(1.0, abs=0.3)

    def test_stay_counts_equal_proposals(self, make_session, tmp_path):
        session = make_session(MCMC_DEF, randomseed=5, slots=1)
        run_mcmc(session)
        rows = chain_rows(tmp_path, 0)
        stay_sum = sum(int(row[-1]) for row in rows)
        rejected = list(iter_tsv_rows(str(tmp_path / "test.scan.rejected.0"),
                                      skip_excluded=False))
        # every proposal either advanced the chain or incremented a stay count;
        # valid rejections also landed in the rejected file
        assert stay_sum >= len(rows) + len(rejected)

    def test_rejected_rows_carry_likelihood(self, make_session, tmp_path):
        session = make_session(MCMC_DEF, randomseed=5, slots=1)
        run_mcmc(session)
        for row in iter_tsv_rows(str(tmp_path / "test.scan.rejected.0"),
                                 skip_excluded=False):
            x, likelihood = float(row[0]), float(row[1])
            assert likelihood == pytest.approx(math.exp(-x * x / 2))

    def test_seeded_runs_reproducible(self, make_session, tmp_path):
        one = make_session(MCMC_DEF, randomseed=3, slots=1,
                           output_dir=str(tmp_path / "a"))
        run_mcmc(one)
        one.close()
        two = make_session(MCMC_DEF, randomseed=3, slots=1,
                           output_dir=str(tmp_path / "b"))
        run_mcmc(two)
        two.close()
        assert (tmp_path / "a" / "test.scan.chain.0").read_bytes() == \
            (tmp_path / "b" / "test.scan.chain.0").read_bytes()

    def test_resume_completes_chain_without_excess_rows(self, make_session, tmp_path):
        short = MCMC_DEF.replace("unit_length = 400", "unit_length = 50")
        session = make_session(short, randomseed=9, slots=1)
        run_mcmc(session)
        session.close()
        # relaunching a finished run must not add rows
        again = make_session(short, randomseed=9, slots=1)
        run_mcmc(again)
        again.close()
        assert len(chain_rows(tmp_path, 0)) == 50

        # truncate the chain file to simulate an interrupt, then resume
        path = tmp_path / "test.scan.chain.0"
        lines = path.read_text().splitlines(keepends=True)
        path.write_text("".join(lines[:20]))
        resumed = make_session(short, randomseed=10, slots=1)
        run_mcmc(resumed)
        resumed.close()
        assert len(chain_rows(tmp_path, 0)) == 50

    def test_zero_likelihood_never_accepted(self, make_session, tmp_path):
        definition = MCMC_DEF.replace(
            "likelihood = exp(-pars.x ** 2 / 2)",
            "likelihood = exp(-pars.x ** 2 / 2) if pars.x < 2 else 0",
        ).replace("unit_length = 400", "unit_length = 200")
        session = make_session(definition, randomseed=21, slots=1)
        run_mcmc(session)
        for row in chain_rows(tmp_path, 0):
            assert float(row[0]) < 2

    def test_workers_rejected_in_mcmc_mode(self, make_session):
        with pytest.raises(DefinitionError, match="mcmc"):
            make_session(MCMC_DEF + "\n[setup]\nworkers = 127.0.0.1\nauthkey = k\n")

    def test_likelihood_required(self, make_session):
        session = make_session("""
            [setup]
            mode = mcmc
            [parameter_space]
            par_names = x
            par_x = interval(0, 1)
        """)
        with pytest.raises(DefinitionError, match="likelihood"):
            run_mcmc(session)
