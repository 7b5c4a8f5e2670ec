"""Streaming mid-price estimate from execution prices (exponentially weighted VWAP)."""

import math

from .errors import NoObservations, NonPositiveHalflife, NonPositiveInput, TimeRegression

DEFAULT_HALFLIFE = 2.0


class EwVwap:
    """Ratio of two exponential moving averages, of ``price * volume`` and of ``volume``.

    Each update blends the new trade into the running numerator ``N`` and
    denominator ``D`` as ``N <- a * p * v + (1 - a) * N`` (same for ``D``),
    where history loses half its weight per ``halflife`` seconds.

    With ``adjust=True`` (default) the blend weight ``a`` is the bias-adjusted
    one: ``a = 1 / W`` with ``W <- 1 + 2**(-dt / halflife) * W``. The estimate
    then equals ``sum(w_i p_i v_i) / sum(w_i v_i)`` with
    ``w_i = 2**(-(t - t_i) / halflife)`` exactly, so it reduces to plain VWAP
    as the halflife grows. With ``adjust=False``, ``a = 1 - 2**(-dt / halflife)``,
    which lets the first observation dominate for long halflives.

    The first observation always sets ``N = p * v`` and ``D = v``.

    The ratio is a convex combination of observed prices, so it is clamped to
    their running range; this only removes rounding, and makes a constant
    price stream return that price bit for bit.
    """

    __slots__ = ("halflife", "adjust", "low", "high", "numerator", "denominator", "weight", "last_time")

    def __init__(self, halflife=DEFAULT_HALFLIFE, adjust=True):
        if not (halflife > 0):
            raise NonPositiveHalflife(f"halflife must be positive, got {halflife}")
        self.halflife = float(halflife)
        self.adjust = adjust
        self.low = self.high = 0.0
        self.numerator = 0.0
        self.denominator = 0.0
        self.weight = 0.0
        self.last_time = None

    @property
    def has_estimate(self):
        return self.last_time is not None

    @property
    def estimate(self):
        if self.last_time is None:
            raise NoObservations("no trade observed yet")
        return min(max(self.numerator / self.denominator, self.low), self.high)

    def update(self, price, volume, time):
        if not (price > 0 and volume > 0):
            raise NonPositiveInput(f"price and volume must be positive, got {price}, {volume}")
        if self.last_time is None:
            self.low = self.high = float(price)
            self.numerator = price * volume
            self.denominator = float(volume)
            self.weight = 1.0
            self.last_time = float(time)
            return self.low
        dt = time - self.last_time
        if dt < 0:
            raise TimeRegression(f"update at {time} precedes last update at {self.last_time}")
        decay = math.exp(-math.log(2.0) * dt / self.halflife)
        if self.adjust:
            self.weight = 1.0 + decay * self.weight
            alpha = 1.0 / self.weight
        else:
            alpha = 1.0 - decay
        self.numerator = alpha * price * volume + (1.0 - alpha) * self.numerator
        self.denominator = alpha * volume + (1.0 - alpha) * self.denominator
        self.low, self.high = min(self.low, price), max(self.high, price)
        self.last_time = float(time)
        return self.estimate

    def copy(self):
        other = EwVwap.__new__(EwVwap)
        for name in self.__slots__:
            setattr(other, name, getattr(self, name))
        return other

    def __repr__(self):
        est = self.estimate if self.has_estimate else None
        return f"EwVwap(halflife={self.halflife}, estimate={est})"
