"""Metropolis-Hastings sampling.

Each chain is an independent sequential loop (one per local slot). Per
parameter, the proposal is either a Gaussian step of width ``mcmc_stepsize``
around the current value (on the value for continuous ranges, on the list
index, rounded, for discrete ones) or, without a step size, a fresh draw
from the prior. Proposals leaving the prior's support and points excluded
by the constraints both count as a stay. Acceptance follows

    a < min(L1 / L0 * q(p0, p1) / q(p1, p0), 1)

where the proposal-density ratio cancels for symmetric steps and reduces to
the prior-density ratio for Gaussian priors stepped with ``mcmc_stepsize``.
A chain stops after writing ``unit_length`` accepted rows (stay counts do
not weigh in); the previous point is written on each acceptance, carrying
its stay count.
"""

import logging
import math
import random
import threading

from ..errors import DefinitionError, ScanAbort
from ..ranges import FiniteList, Normal
from ..storage import SpeedTracker, iter_tsv_rows

log = logging.getLogger("parascan.mcmc")

DEFAULT_UNIT_LENGTH = 1000
INITIAL_POINT_ATTEMPTS = 10 ** 4


class ChainState:
    """One Markov chain: current point, its likelihood, bookkeeping."""

    def __init__(self, index, rng):
        self.index = index
        self.rng = rng
        self.record = None
        self.likelihood = 0.0
        self.stay_count = 1
        self.accepted_count = 0

    @property
    def pars(self):
        return tuple(self.record.pars)


def propose(pars, ranges, rng):
    """One proposal point, or None when it falls outside the prior support."""
    proposal = []
    for value, spec in zip(pars, ranges):
        step = spec.mcmc_stepsize
        if step is None:
            proposal.append(spec.sample(rng))
        elif isinstance(spec, FiniteList):
            index = spec.values.index(value)
            new_index = round(rng.normalvariate(index, step))
            if not 0 <= new_index < len(spec.values):
                return None
            proposal.append(spec.values[new_index])
        else:
            new_value = rng.normalvariate(value, step)
            if not spec.contains(new_value):
                return None
            proposal.append(new_value)
    return tuple(proposal)


def proposal_correction(old_pars, new_pars, ranges):
    """q(p0,p1)/q(p1,p0) * prior(p1)/prior(p0) for the acceptance ratio.

    Gaussian steps are symmetric, so only non-flat priors stepped with
    mcmc_stepsize contribute; prior-drawn coordinates cancel exactly.
    """
    log_ratio = 0.0
    for old, new, spec in zip(old_pars, new_pars, ranges):
        if spec.mcmc_stepsize is not None and isinstance(spec, Normal):
            log_ratio += spec.prior_logpdf(new) - spec.prior_logpdf(old)
    return math.exp(log_ratio)


def find_initial_point(evaluator, session, rng, attempts=INITIAL_POINT_ATTEMPTS):
    """Sample the priors until a valid point with non-zero likelihood appears."""
    for attempt in range(attempts):
        pars = tuple(spec.sample(rng) for spec in session.ranges)
        record = evaluator.evaluate("init%d" % attempt, pars)
        if not record.is_valid:
            continue
        likelihood = session.likelihood_of(record)
        if likelihood < 0:
            raise ScanAbort(
                "likelihood must be non-negative, got %r" % likelihood
            )
        if likelihood > 0:
            return record, likelihood
    raise ScanAbort(
        "no valid starting point with non-zero likelihood found in %d attempts"
        % attempts
    )


def run_chain(chain, session, evaluator, unit_length, on_accept=None):
    """Advance one chain until it has written ``unit_length`` accepted rows."""
    outputs = session.outputs
    rng = chain.rng
    ranges = session.ranges
    proposals = 0
    while chain.accepted_count < unit_length:
        proposals += 1
        new_pars = propose(chain.pars, ranges, rng)
        if new_pars is None:
            chain.stay_count += 1
            continue
        record = evaluator.evaluate(
            "c%d.%d" % (chain.index, proposals), new_pars
        )
        if not record.is_valid:
            chain.stay_count += 1
            continue
        likelihood = session.likelihood_of(record)
        if likelihood < 0:
            raise ScanAbort("likelihood must be non-negative, got %r" % likelihood)
        ratio = 0.0
        if likelihood > 0:
            ratio = (likelihood / chain.likelihood) * proposal_correction(
                chain.pars, new_pars, ranges
            )
        if rng.random() < min(ratio, 1.0):
            outputs.chain_append(
                chain.index, chain.record, chain.likelihood, chain.stay_count
            )
            chain.record = record
            chain.likelihood = likelihood
            chain.stay_count = 1
            chain.accepted_count += 1
            if on_accept is not None:
                on_accept(chain)
        else:
            chain.stay_count += 1
            outputs.rejected_append(chain.index, record, likelihood)
    return chain


def resume_chain(chain, session, evaluator, unit_length):
    """Rebuild the current point from the chain file tail, if any."""
    path = session.outputs.chain_path(chain.index)
    rows = list(iter_tsv_rows(path, skip_excluded=False)) if \
        session.outputs.byte_size(path) else []
    if not rows:
        return False
    chain.accepted_count = len(rows)
    width = len(session.space.par_names)
    pars = tuple(float(v) for v in rows[-1][:width])
    record = evaluator.evaluate("c%d.resume" % chain.index, pars)
    if not record.is_valid:
        raise ScanAbort(
            "cannot resume chain %d: its last point no longer evaluates as "
            "valid" % chain.index
        )
    chain.record = record
    chain.likelihood = session.likelihood_of(record)
    if chain.likelihood <= 0:
        raise ScanAbort("cannot resume chain %d: last point has zero likelihood"
                        % chain.index)
    log.info("chain %d resumes with %d accepted points", chain.index,
             chain.accepted_count)
    return True


def run_mcmc(session, progress=None):
    if session.likelihood_expr is None:
        raise DefinitionError("mcmc mode needs an [algorithm] likelihood formula")
    unit_length = session.unit_length
    if unit_length is None:
        unit_length = DEFAULT_UNIT_LENGTH
        log.info("unit_length not set; defaulting to %d accepted points per chain",
                 unit_length)
    chain_count = session.slots
    speed = SpeedTracker(session.outputs)
    total = chain_count * unit_length
    accepted_lock = threading.Lock()
    accepted_total = [0]
    last_report = [0.0]

    def on_accept(chain):
        import time
        with accepted_lock:
            accepted_total[0] += 1
            count = accepted_total[0]
            now = time.monotonic()
            if now - last_report[0] > 2.0:
                last_report[0] = now
                log.info("accepted %d/%d points", count, total)
                if progress is not None:
                    progress(count, total, "accepted %d/%d" % (count, total))

    def seeded_rng(index):
        if session.randomseed is None:
            return random.Random()
        return random.Random("%s/chain%d" % (session.randomseed, index))

    errors = []
    threads = []

    def drive(index):
        import time
        try:
            chain = ChainState(index, seeded_rng(index))
            evaluator = session.new_evaluator()
            try:
                if not resume_chain(chain, session, evaluator, unit_length):
                    chain.record, chain.likelihood = find_initial_point(
                        evaluator, session, chain.rng
                    )
                if chain.accepted_count >= unit_length:
                    return
                started = time.monotonic()
                before = chain.accepted_count
                run_chain(chain, session, evaluator, unit_length, on_accept)
                speed.update(chain.accepted_count - before,
                             time.monotonic() - started)
            finally:
                evaluator.close()
        except Exception as exc:
            errors.append(exc)

    for index in range(chain_count):
        thread = threading.Thread(target=drive, args=(index,), daemon=True)
        thread.start()
        threads.append(thread)
    for thread in threads:
        thread.join()
    session.outputs.flush()
    if errors:
        raise errors[0]
    log.info("mcmc complete: %d chains x %d accepted points",
             chain_count, unit_length)
    return 0
