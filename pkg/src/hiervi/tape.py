"""Minimal scalar reverse-mode automatic differentiation.

Every bound estimator in this package is built out of the primitives here.
The same functions (``exp``, ``log_sigmoid``, ``logsumexp``, ...) accept
either :class:`Var` objects (recorded on a tape) or plain floats, so an
estimator can be evaluated value-only without paying for the tape.  The two
paths perform identical floating point operations in identical order, so
their results agree bit-for-bit.
"""
from __future__ import annotations

import math

LOG_2PI = math.log(2.0 * math.pi)


class Tape:
    """Append-only record of primitive operations.

    Handles are dense indices issued in creation order; a node only ever
    references strictly smaller handles, so the record is topologically
    sorted by construction.  A tape is single-threaded; use one tape per
    estimate (or call :meth:`reset` between estimates).
    """

    __slots__ = ("_parents", "_partials")

    def __init__(self) -> None:
        self._parents: list[tuple[int, ...]] = []
        self._partials: list[tuple[float, ...]] = []

    def __len__(self) -> int:
        return len(self._parents)

    def reset(self) -> None:
        """Discard all recorded nodes. Vars from before the reset are invalid."""
        self._parents.clear()
        self._partials.clear()

    def leaf(self, value: float) -> "Var":
        """Record an input variable. Gradients flow back to leaves."""
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"leaf value must be finite, got {value!r}")
        self._parents.append(())
        self._partials.append(())
        return Var(self, len(self._parents) - 1, value)

    def _node(self, value: float, parents: tuple[int, ...],
              partials: tuple[float, ...]) -> "Var":
        self._parents.append(parents)
        self._partials.append(partials)
        return Var(self, len(self._parents) - 1, value)

    def backward(self, root: "Var", seed: float = 1.0) -> list[float]:
        """Reverse sweep from ``root``.

        Returns adjoints indexed by handle (``result[h]`` is d root / d node h).
        Leaves not on the root's path get 0.  Linear in the seed.
        """
        if root.tape is not self:
            raise ValueError("root was recorded on a different tape")
        adj = [0.0] * len(self._parents)
        adj[root.handle] = float(seed)
        parents = self._parents
        partials = self._partials
        for h in range(root.handle, -1, -1):
            a = adj[h]
            if a == 0.0:
                continue
            ps = parents[h]
            if ps:
                ds = partials[h]
                for j in range(len(ps)):
                    adj[ps[j]] += a * ds[j]
        return adj


class Var:
    """A scalar recorded on a tape. Supports ordinary arithmetic with other
    Vars and with plain numbers."""

    __slots__ = ("tape", "handle", "value")

    def __init__(self, tape: Tape, handle: int, value: float) -> None:
        self.tape = tape
        self.handle = handle
        self.value = value

    def __repr__(self) -> str:
        return f"Var(handle={self.handle}, value={self.value})"

    def __add__(self, other):
        if isinstance(other, Var):
            return self.tape._node(self.value + other.value,
                                   (self.handle, other.handle), (1.0, 1.0))
        return self.tape._node(self.value + other, (self.handle,), (1.0,))

    def __radd__(self, other):
        return self.tape._node(other + self.value, (self.handle,), (1.0,))

    def __sub__(self, other):
        if isinstance(other, Var):
            return self.tape._node(self.value - other.value,
                                   (self.handle, other.handle), (1.0, -1.0))
        return self.tape._node(self.value - other, (self.handle,), (1.0,))

    def __rsub__(self, other):
        return self.tape._node(other - self.value, (self.handle,), (-1.0,))

    def __mul__(self, other):
        if isinstance(other, Var):
            return self.tape._node(self.value * other.value,
                                   (self.handle, other.handle),
                                   (other.value, self.value))
        return self.tape._node(self.value * other, (self.handle,), (float(other),))

    def __rmul__(self, other):
        return self.tape._node(other * self.value, (self.handle,), (float(other),))

    def __truediv__(self, other):
        if isinstance(other, Var):
            if other.value == 0.0:
                raise ZeroDivisionError(
                    f"division by zero (denominator handle {other.handle})")
            inv = 1.0 / other.value
            return self.tape._node(self.value * inv,
                                   (self.handle, other.handle),
                                   (inv, -self.value * inv * inv))
        if other == 0.0:
            raise ZeroDivisionError("division by zero constant")
        inv = 1.0 / other
        return self.tape._node(self.value * inv, (self.handle,), (inv,))

    def __rtruediv__(self, other):
        if self.value == 0.0:
            raise ZeroDivisionError(
                f"division by zero (denominator handle {self.handle})")
        inv = 1.0 / self.value
        return self.tape._node(other * inv, (self.handle,), (-other * inv * inv,))

    def __pow__(self, n):
        if not isinstance(n, int):
            raise TypeError("Var exponent must be an integer")
        return self.tape._node(self.value ** n, (self.handle,),
                               (n * self.value ** (n - 1),))

    def __neg__(self):
        return self.tape._node(-self.value, (self.handle,), (-1.0,))


def value_of(x) -> float:
    """The numeric value of a Var, or the float itself."""
    return x.value if isinstance(x, Var) else float(x)


def exp(x):
    if isinstance(x, Var):
        v = math.exp(x.value)
        return x.tape._node(v, (x.handle,), (v,))
    return math.exp(x)


def log(x):
    v = value_of(x)
    if v <= 0.0:
        raise ValueError(f"log requires a positive argument, got {v}")
    if isinstance(x, Var):
        return x.tape._node(math.log(v), (x.handle,), (1.0 / v,))
    return math.log(v)


def sqrt(x):
    v = value_of(x)
    if v < 0.0:
        raise ValueError(f"sqrt requires a nonnegative argument, got {v}")
    r = math.sqrt(v)
    if isinstance(x, Var):
        return x.tape._node(r, (x.handle,), (0.5 / r if r > 0.0 else math.inf,))
    return r


def tanh(x):
    v = value_of(x)
    t = math.tanh(v)
    if isinstance(x, Var):
        return x.tape._node(t, (x.handle,), (1.0 - t * t,))
    return t


def _sigmoid_value(v: float) -> float:
    # two-branch form, stable for large |v|
    if v >= 0.0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def sigmoid(x):
    v = value_of(x)
    s = _sigmoid_value(v)
    if isinstance(x, Var):
        return x.tape._node(s, (x.handle,), (s * (1.0 - s),))
    return s


def log_sigmoid(x):
    v = value_of(x)
    # log sigmoid(v) = -log1p(exp(-v)) for v >= 0, v - log1p(exp(v)) otherwise
    if v >= 0.0:
        lv = -math.log1p(math.exp(-v))
    else:
        lv = v - math.log1p(math.exp(v))
    if isinstance(x, Var):
        return x.tape._node(lv, (x.handle,), (1.0 - _sigmoid_value(v),))
    return lv


def vsum(xs):
    """Sum of a nonempty list of Vars and/or floats (single n-ary node)."""
    if len(xs) == 0:
        raise ValueError("sum of an empty list")
    total = 0.0
    parents = []
    for x in xs:
        if isinstance(x, Var):
            total += x.value
            parents.append(x.handle)
        else:
            total += x
    if not parents:
        return total
    t = xs[0].tape if isinstance(xs[0], Var) else next(
        x for x in xs if isinstance(x, Var)).tape
    return t._node(total, tuple(parents), (1.0,) * len(parents))


def dot(xs, ys):
    """Inner product of two equal-length lists of Vars and/or floats."""
    if len(xs) != len(ys):
        raise ValueError(f"dot length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) == 0:
        raise ValueError("dot of empty lists")
    total = 0.0
    parents = []
    partials = []
    for x, y in zip(xs, ys):
        xv = x.value if isinstance(x, Var) else x
        yv = y.value if isinstance(y, Var) else y
        total += xv * yv
        if isinstance(x, Var):
            parents.append(x.handle)
            partials.append(yv)
        if isinstance(y, Var):
            parents.append(y.handle)
            partials.append(xv)
    if not parents:
        return total
    t = next(v for v in list(xs) + list(ys) if isinstance(v, Var)).tape
    return t._node(total, tuple(parents), tuple(partials))


def logsumexp(xs):
    """log sum exp of a nonempty list, computed as m + log sum exp(x - m).

    Backward yields softmax weights on the inputs.
    """
    if len(xs) == 0:
        raise ValueError("logsumexp of an empty list")
    vals = [x.value if isinstance(x, Var) else float(x) for x in xs]
    m = max(vals)
    es = [math.exp(v - m) for v in vals]
    s = sum(es)
    out = m + math.log(s)
    parents = []
    partials = []
    for x, e in zip(xs, es):
        if isinstance(x, Var):
            parents.append(x.handle)
            partials.append(e / s)
    if not parents:
        return out
    t = next(x for x in xs if isinstance(x, Var)).tape
    return t._node(out, tuple(parents), tuple(partials))
