"""Local slot pool: N worker threads, each owning its processor instances.

Point processors spawn subprocesses and plugin children, so slots are
threads; during subprocess waits the interpreter lock is released and slots
genuinely run in parallel. Each slot thread builds its own evaluator from
the factory on first use (per factory token), so processor state is never
shared between slots.
"""

import threading
from concurrent.futures import ThreadPoolExecutor


class LocalPool:
    def __init__(self, slots):
        self.slots = max(1, int(slots))
        self._executor = ThreadPoolExecutor(
            max_workers=self.slots, thread_name_prefix="slot"
        )
        self._tls = threading.local()
        self._lock = threading.Lock()
        self._created = {}  # token -> [evaluator]

    def _evaluator(self, factory, token):
        cache = getattr(self._tls, "cache", None)
        if cache is None:
            cache = {}
            self._tls.cache = cache
        evaluator = cache.get(token)
        if evaluator is None:
            evaluator = factory()
            cache[token] = evaluator
            with self._lock:
                self._created.setdefault(token, []).append(evaluator)
        return evaluator

    def run_batch(self, items, factory, token="default"):
        """Evaluate ``[(point_id, pars), ...]``; results keep input order."""

        def run_one(item):
            point_id, pars = item
            return self._evaluator(factory, token).evaluate(point_id, pars)

        return list(self._executor.map(run_one, items))

    def release(self, token):
        """Close all evaluators created for one factory token."""
        with self._lock:
            evaluators = self._created.pop(token, [])
        for evaluator in evaluators:
            try:
                evaluator.close()
            except Exception:
                pass

    def close(self):
        with self._lock:
            tokens = list(self._created)
        for token in tokens:
            self.release(token)
        self._executor.shutdown(wait=True)
