"""Global maximization with differential evolution.

Per member x of the population, three distinct other members a, b, c are
drawn, the mutant is a + S*(b - c), and the trial takes each coordinate from
x with probability rho, from the mutant otherwise. The trial replaces x only
when its fitness is higher, so the population's best fitness never
decreases. The run converges once the best fitness has changed by less than
``waiting_threshold + waiting_threshold_relative * |best|`` for more than
``waiting_time`` consecutive iterations.

Discrete ranges mutate on the value's list index (rounded and clamped);
continuous intervals mutate on the value (log10 of it for log-distributed
intervals) and clamp to the interval. Finite parameter spaces cache results
so no point is calculated twice.
"""

import logging
import math
import time

from ..errors import DefinitionError, EvalError
from ..pipeline import evaluate_over_record, project_out_columns
from ..ranges import FiniteList, Interval, Normal, LOG
from ..session import ALGORITHM, _get_float, _get_int

log = logging.getLogger("parascan.optimize")

DEFAULT_DIFFERENTIAL_WEIGHT = 0.6
DEFAULT_CROSSOVER_PROBABILITY = 0.5
DEFAULT_RELATIVE_THRESHOLD = 1e-8
NEG_INF = float("-inf")


class _Coordinate:
    """Mutation arithmetic for one parameter axis."""

    def __init__(self, spec):
        self.spec = spec
        if isinstance(spec, FiniteList):
            self.kind = "index"
            self.values = spec.values
            self.lookup = {v: i for i, v in enumerate(spec.values)}
        elif isinstance(spec, Interval):
            self.kind = "log" if spec.distribution == LOG else "linear"
        else:
            self.kind = "free"

    def mutate(self, a, b, c, weight):
        if self.kind == "index":
            index = self.lookup[a] + weight * (self.lookup[b] - self.lookup[c])
            index = min(max(int(round(index)), 0), len(self.values) - 1)
            return self.values[index]
        if self.kind == "log":
            exponent = math.log10(a) + weight * (math.log10(b) - math.log10(c))
            return min(max(10.0 ** exponent, self.spec.a), self.spec.b)
        value = a + weight * (b - c)
        if self.kind == "linear":
            value = min(max(value, self.spec.a), self.spec.b)
        return value


class Population:
    """Members as (pars tuple, fitness); replacement never lowers fitness."""

    def __init__(self, members):
        self.members = list(members)
        self.waiting = 0

    @property
    def size(self):
        return len(self.members)

    def best(self):
        return max(self.members, key=lambda m: m[1])

    def best_fitness(self):
        return self.best()[1]


def de_trials(population, coordinates, rng, weight, crossover):
    """One generation of trial points (snapshot semantics for batching)."""
    trials = []
    size = population.size
    for m, (x, _) in enumerate(population.members):
        others = [i for i in range(size) if i != m]
        ia, ib, ic = rng.sample(others, 3)
        a = population.members[ia][0]
        b = population.members[ib][0]
        c = population.members[ic][0]
        trial = tuple(
            x[k] if rng.random() < crossover
            else coordinates[k].mutate(a[k], b[k], c[k], weight)
            for k in range(len(coordinates))
        )
        trials.append(trial)
    return trials


def apply_replacements(population, trials, fitnesses):
    replaced = 0
    for m, (trial, fitness) in enumerate(zip(trials, fitnesses)):
        if fitness > population.members[m][1]:
            population.members[m] = (trial, fitness)
            replaced += 1
    return replaced


def update_waiting(population, old_best, new_best, eps, eps_rel):
    if abs(new_best - old_best) < eps + eps_rel * abs(old_best):
        population.waiting += 1
    else:
        population.waiting = 0
    return population.waiting


class _FitnessEvaluator:
    """Batch evaluation of fitness values with result caching and output."""

    def __init__(self, session, cache_enabled):
        self.session = session
        self.cache = {} if cache_enabled else None
        self._formula_error_logged = False
        self._counter = 0

    def fitness_of(self, record):
        if not record.is_valid:
            return NEG_INF
        try:
            value = evaluate_over_record(self.session.likelihood_expr, record)
        except EvalError as exc:
            # a failing fitness formula never replaces anything
            if not self._formula_error_logged:
                self._formula_error_logged = True
                log.warning("fitness formula failed; counting such trials as "
                            "-inf: %s", exc)
            return NEG_INF
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            return NEG_INF
        return value

    def evaluate(self, points):
        """Fitness per point, writing newly computed records to the files."""
        results = {}
        fresh = []
        for point in points:
            if self.cache is not None and point in self.cache:
                results[point] = self.cache[point]
            elif point not in results:
                fresh.append(point)
        fresh = list(dict.fromkeys(fresh))
        if fresh:
            items = []
            for point in fresh:
                items.append(("o%d" % self._counter, point))
                self._counter += 1
            records = self.session.dispatcher.run_batch(items)
            for point, record in zip(fresh, records):
                fitness = self.fitness_of(record)
                if record.is_valid:
                    self.session.outputs.write_valid(
                        project_out_columns(record, self.session.space),
                        annotations=[fitness],
                    )
                else:
                    self.session.outputs.write_excluded(record)
                results[point] = fitness
                if self.cache is not None:
                    self.cache[point] = fitness
        return [results[point] for point in points]


def initial_population(session, evaluator, size, rng):
    members = []
    attempts = 0
    cap = 1000 * size
    while len(members) < size:
        remaining = size - len(members)
        draw = [
            tuple(spec.sample(rng) for spec in session.ranges)
            for _ in range(max(remaining, 8))
        ]
        fitnesses = evaluator.evaluate(draw)
        for point, fitness in zip(draw, fitnesses):
            if fitness > NEG_INF and len(members) < size:
                members.append((point, fitness))
        attempts += len(draw)
        if attempts > cap and not members:
            raise DefinitionError(
                "no valid points found in %d random draws; check bounds and "
                "formulas" % attempts
            )
        if attempts > cap:
            raise DefinitionError(
                "only %d of %d valid population members found in %d draws"
                % (len(members), size, attempts)
            )
    return Population(members)


def run_optimize(session, progress=None):
    if session.likelihood_expr is None:
        raise DefinitionError("optimize mode needs an [algorithm] likelihood "
                              "(fitness) formula")
    definition = session.definition
    dimensions = session.dimension_count
    size = session.unit_length or 10 * max(dimensions, 1)
    if size < 4:
        raise DefinitionError(
            "population size %d is too small; differential evolution needs "
            "at least 4 members" % size
        )
    weight = _get_float(definition, ALGORITHM, "differential_weight",
                        DEFAULT_DIFFERENTIAL_WEIGHT)
    crossover = _get_float(definition, ALGORITHM, "crossover_probability",
                           DEFAULT_CROSSOVER_PROBABILITY)
    eps = _get_float(definition, ALGORITHM, "waiting_threshold", 0.0)
    eps_rel = _get_float(definition, ALGORITHM, "waiting_threshold_relative",
                         DEFAULT_RELATIVE_THRESHOLD)
    waiting_time = _get_int(definition, ALGORITHM, "waiting_time",
                            10 * max(dimensions, 1))

    coordinates = [_Coordinate(spec) for spec in session.ranges]
    cache_enabled = all(isinstance(spec, FiniteList) for spec in session.ranges)
    evaluator = _FitnessEvaluator(session, cache_enabled)
    rng = session.rng

    resumed = session.outputs.load_population()
    if resumed:
        population = Population([(pars, fitness) for fitness, pars in resumed])
        log.info("resuming with a population of %d (waiting counter restarts)",
                 population.size)
    else:
        population = initial_population(session, evaluator, size, rng)
        session.outputs.write_population(
            [(f, pars) for pars, f in population.members]
        )

    iteration = 0
    started = time.monotonic()
    while population.waiting <= waiting_time:
        iteration += 1
        old_best = population.best_fitness()
        trials = de_trials(population, coordinates, rng, weight, crossover)
        fitnesses = evaluator.evaluate(trials)
        apply_replacements(population, trials, fitnesses)
        new_best = population.best_fitness()
        update_waiting(population, old_best, new_best, eps, eps_rel)
        session.outputs.write_population(
            [(f, pars) for pars, f in population.members]
        )
        if iteration % 20 == 0 or population.waiting > waiting_time:
            log.info("iteration %d: best fitness %r (waiting %d/%d)",
                     iteration, new_best, population.waiting, waiting_time)
        if progress is not None:
            progress(iteration, None, "best %r" % new_best)

    best_pars, best_fitness = population.best()
    session.outputs.write_optimum(best_fitness, best_pars)
    session.outputs.flush()
    log.info(
        "optimize complete after %d iterations (%.1f s): best fitness %r at %r",
        iteration, time.monotonic() - started, best_fitness, best_pars,
    )
    return 0
