"""Parameter range DSL: ``par_NAME`` directive values.

Recognized forms::

    1, 2.5, 4                        finite list
    1, 1.2, ..., 2                   finite list with ellipsis expansion
    interval(a, b)                   continuous interval
    normalvariate(mu, sigma)         Gaussian distribution

optionally followed by ``with key=value, ...`` where the keys are ``count``
(discretize a continuous range), ``distribution`` (``linear`` or ``log``,
intervals only) and ``mcmc_stepsize`` (Gaussian proposal width).
"""

import math
import statistics

from .errors import RangeError

LINEAR = "linear"
LOG = "log"

_LOG_SQRT_TWO_PI = 0.5 * math.log(2.0 * math.pi)
_ELLIPSIS_TOKENS = ("...", "..")


class RangeSpec:
    """One parameter's domain plus its options."""

    mcmc_stepsize = None

    @property
    def is_expandable(self):
        """True when :meth:`expand` can produce the finite value list."""
        raise NotImplementedError

    @property
    def is_multi_valued(self):
        """True when the range holds at least two possible values."""
        raise NotImplementedError

    def expand(self):
        raise NotImplementedError

    def sample(self, rng):
        raise NotImplementedError

    def contains(self, x):
        raise NotImplementedError

    def prior_logpdf(self, x):
        """Log prior density up to an additive constant; flat ranges give 0."""
        return 0.0


class FiniteList(RangeSpec):
    def __init__(self, values, mcmc_stepsize=None):
        if not values:
            raise RangeError("empty value list")
        self.values = [float(v) for v in values]
        self.mcmc_stepsize = mcmc_stepsize

    @property
    def is_expandable(self):
        return True

    @property
    def is_multi_valued(self):
        return len(self.values) > 1

    def expand(self):
        return list(self.values)

    def sample(self, rng):
        return rng.choice(self.values)

    def contains(self, x):
        return x in self.values

    def __repr__(self):
        return "FiniteList(%r)" % (self.values,)


class Interval(RangeSpec):
    def __init__(self, a, b, distribution=LINEAR, count=None, mcmc_stepsize=None):
        if a > b:
            raise RangeError("interval bounds out of order: %r > %r" % (a, b))
        if distribution not in (LINEAR, LOG):
            raise RangeError("unknown distribution %r" % (distribution,))
        if distribution == LOG and a <= 0:
            raise RangeError("log distribution needs a positive lower bound")
        self.a = float(a)
        self.b = float(b)
        self.distribution = distribution
        self.count = count
        self.mcmc_stepsize = mcmc_stepsize

    @property
    def is_expandable(self):
        return self.count is not None

    @property
    def is_multi_valued(self):
        if self.count is not None:
            return self.count > 1
        return self.a != self.b

    def expand(self):
        if self.count is None:
            raise RangeError("cannot enumerate a continuous interval; set count=")
        n = self.count
        if n == 1:
            return [self.a]
        if self.distribution == LOG:
            la, lb = math.log10(self.a), math.log10(self.b)
            values = [10.0 ** (la + k * (lb - la) / (n - 1)) for k in range(n)]
        else:
            values = [self.a + k * (self.b - self.a) / (n - 1) for k in range(n)]
        values[0] = self.a
        values[-1] = self.b
        return values

    def sample(self, rng):
        if self.distribution == LOG:
            return 10.0 ** rng.uniform(math.log10(self.a), math.log10(self.b))
        return rng.uniform(self.a, self.b)

    def contains(self, x):
        return self.a <= x <= self.b

    def __repr__(self):
        return "Interval(%r, %r, %s)" % (self.a, self.b, self.distribution)


class Normal(RangeSpec):
    def __init__(self, mu, sigma, count=None, mcmc_stepsize=None):
        if sigma <= 0:
            raise RangeError("normalvariate needs sigma > 0")
        self.mu = float(mu)
        self.sigma = float(sigma)
        self.count = count
        self.mcmc_stepsize = mcmc_stepsize

    @property
    def is_expandable(self):
        return self.count is not None

    @property
    def is_multi_valued(self):
        return self.count > 1 if self.count is not None else True

    def expand(self):
        if self.count is None:
            raise RangeError("cannot enumerate normalvariate; set count=")
        n = self.count
        inv = statistics.NormalDist().inv_cdf
        return [self.mu + self.sigma * inv(k / (n + 1)) for k in range(1, n + 1)]

    def sample(self, rng):
        return rng.normalvariate(self.mu, self.sigma)

    def contains(self, x):
        return True

    def prior_logpdf(self, x):
        z = (x - self.mu) / self.sigma
        return -0.5 * z * z - math.log(self.sigma) - _LOG_SQRT_TWO_PI

    def __repr__(self):
        return "Normal(%r, %r)" % (self.mu, self.sigma)


def _number(token):
    try:
        return float(token)
    except ValueError:
        raise RangeError("malformed number %r" % (token,)) from None


def _split_options(text):
    """Split off a trailing ``with k=v, ...`` clause at parenthesis depth 0."""
    depth = 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif depth == 0 and text.startswith("with", i):
            before = text[i - 1] if i else " "
            after = text[i + 4] if i + 4 < len(text) else " "
            if not (before.isalnum() or before == "_") and not (after.isalnum() or after == "_"):
                return text[:i].strip(), text[i + 4:].strip()
    return text.strip(), ""


def _parse_options(text, kind):
    allowed = {
        "list": ("mcmc_stepsize",),
        "interval": ("count", "distribution", "mcmc_stepsize"),
        "normalvariate": ("count", "mcmc_stepsize"),
    }[kind]
    options = {}
    if not text:
        return options
    for item in text.split(","):
        if "=" not in item:
            raise RangeError("malformed option %r (expected name=value)" % (item.strip(),))
        name, _, value = item.partition("=")
        name = name.strip()
        value = value.strip()
        if name not in ("count", "distribution", "mcmc_stepsize"):
            raise RangeError("unknown range option %r" % (name,))
        if name not in allowed:
            raise RangeError("option %r not valid for %s ranges" % (name, kind))
        if name == "count":
            try:
                count = int(value)
            except ValueError:
                raise RangeError("count must be an integer, got %r" % (value,)) from None
            if count < 1:
                raise RangeError("count must be positive, got %d" % count)
            options[name] = count
        elif name == "distribution":
            options[name] = value
        else:
            step = _number(value)
            if step <= 0:
                raise RangeError("mcmc_stepsize must be positive, got %r" % (value,))
            options[name] = step
    return options


def _call_args(definition, func):
    inner = definition[len(func):].strip()
    if not (inner.startswith("(") and inner.endswith(")")):
        raise RangeError("malformed %s range %r" % (func, definition))
    args = [part.strip() for part in inner[1:-1].split(",")]
    if len(args) != 2:
        raise RangeError("%s takes two arguments, got %d" % (func, len(args)))
    return _number(args[0]), _number(args[1])


def _expand_ellipsis(a, b, c):
    """Values after ``b`` on the progression a, b, b+step, ... up to ``c``."""
    step = b - a
    if step == 0:
        raise RangeError("ellipsis with zero step")
    ascending = step > 0
    tol = 1e-9 * abs(step)
    out = []
    i = 2
    while True:
        v = a + i * step
        if (ascending and v < c - tol) or (not ascending and v > c + tol):
            out.append(v)
            i += 1
        else:
            break
    last = out[-1] if out else b
    if abs(last - c) > tol:
        out.append(c)
    elif out:
        out[-1] = c
    return out


def _parse_list(definition):
    tokens = [t.strip() for t in definition.split(",")]
    values = []
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if token in _ELLIPSIS_TOKENS:
            if len(values) < 2:
                raise RangeError("ellipsis needs at least two values before it")
            if i + 1 >= len(tokens):
                raise RangeError("ellipsis needs a value after it")
            c = _number(tokens[i + 1])
            values.extend(_expand_ellipsis(values[-2], values[-1], c))
            i += 2
        else:
            values.append(_number(token))
            i += 1
    return values


def parse_range(text):
    """Parse a ``par_NAME`` directive value into a :class:`RangeSpec`."""
    text = text.strip()
    if not text:
        raise RangeError("empty range definition")
    definition, option_text = _split_options(text)
    if definition.startswith("interval"):
        options = _parse_options(option_text, "interval")
        a, b = _call_args(definition, "interval")
        return Interval(a, b, distribution=options.get("distribution", LINEAR),
                        count=options.get("count"),
                        mcmc_stepsize=options.get("mcmc_stepsize"))
    if definition.startswith("normalvariate"):
        options = _parse_options(option_text, "normalvariate")
        mu, sigma = _call_args(definition, "normalvariate")
        return Normal(mu, sigma, count=options.get("count"),
                      mcmc_stepsize=options.get("mcmc_stepsize"))
    options = _parse_options(option_text, "list")
    return FiniteList(_parse_list(definition), mcmc_stepsize=options.get("mcmc_stepsize"))
