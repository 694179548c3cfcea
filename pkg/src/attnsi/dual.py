"""Forward-mode automatic differentiation on numpy arrays.

A :class:`Dual` carries a value array and the derivative of that value with
respect to a single scalar parameter.  All arithmetic follows the chain rule
exactly, so seeding an input with ``dot = dX/dz`` and running any computation
built from the operations below yields the exact derivative of the result
with respect to ``z`` (up to floating point rounding).

The helpers at module level (:func:`exp`, :func:`sqrt`, :func:`erf`, ...)
accept either a plain ndarray or a :class:`Dual`, which lets numerical code
be written once and evaluated with or without derivative tracking.
"""

from __future__ import annotations

import numpy as np
import scipy.special as _sp

from .errors import DomainError

_TWO_OVER_SQRT_PI = 2.0 / np.sqrt(np.pi)

ArrayLike = "np.ndarray | float"


def _as_array(x) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(float)
    return x


class Dual:
    """Value/derivative pair; both sides are numpy arrays of the same shape.

    ``Dual(v)`` has a zero derivative; ``Dual(v, d)`` represents a quantity
    whose derivative with respect to the tracked scalar is ``d``.
    """

    __slots__ = ("val", "dot")

    def __init__(self, val, dot=None):
        val = _as_array(val)
        if dot is None:
            dot = np.zeros_like(val)
        else:
            dot = _as_array(dot)
            if dot.shape != val.shape:
                dot = np.broadcast_to(dot, val.shape).copy()
        self.val = val
        self.dot = dot

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _wrap(cls, val, dot) -> "Dual":
        out = cls.__new__(cls)
        out.val = val
        out.dot = dot
        return out

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self):
        return self.val.ndim

    def __repr__(self):
        return f"Dual(val={self.val!r}, dot={self.dot!r})"

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual._wrap(self.val + other.val, self.dot + other.dot)
        return Dual._wrap(self.val + other, _match(self.dot, np.shape(other)))

    __radd__ = __add__

    def __neg__(self):
        return Dual._wrap(-self.val, -self.dot)

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual._wrap(self.val - other.val, self.dot - other.dot)
        return Dual._wrap(self.val - other, _match(self.dot, np.shape(other)))

    def __rsub__(self, other):
        return Dual._wrap(other - self.val, _match(-self.dot, np.shape(other)))

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual._wrap(
                self.val * other.val,
                self.dot * other.val + self.val * other.dot,
            )
        return Dual._wrap(self.val * other, self.dot * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        # Value part uses plain division (not reciprocal-multiply) so it is
        # bitwise identical to a derivative-free evaluation.
        if isinstance(other, Dual):
            _check_nonzero(other.val)
            v = self.val / other.val
            return Dual._wrap(v, (self.dot - v * other.dot) / other.val)
        _check_nonzero(other)
        return Dual._wrap(self.val / other, self.dot / other)

    def __rtruediv__(self, other):
        _check_nonzero(self.val)
        v = other / self.val
        return Dual._wrap(v, -v * self.dot / self.val)

    def __pow__(self, p):
        if not np.isscalar(p):
            raise TypeError("Dual ** only supports scalar constant exponents")
        v = self.val**p
        return Dual._wrap(v, p * self.val ** (p - 1) * self.dot)

    def __matmul__(self, other):
        # The value product is kept as its own GEMM (identical shape and
        # order as a derivative-free run) so zero-seeded duals reproduce the
        # plain forward bit for bit.
        if isinstance(other, Dual):
            return Dual._wrap(
                self.val @ other.val,
                self.dot @ other.val + self.val @ other.dot,
            )
        return Dual._wrap(self.val @ other, self.dot @ other)

    def __rmatmul__(self, other):
        return Dual._wrap(other @ self.val, other @ self.dot)

    # -- shape manipulation ---------------------------------------------------

    def reshape(self, *shape):
        return Dual._wrap(self.val.reshape(*shape), self.dot.reshape(*shape))

    def swapaxes(self, a, b):
        return Dual._wrap(self.val.swapaxes(a, b), self.dot.swapaxes(a, b))

    def transpose(self, axes):
        return Dual._wrap(self.val.transpose(axes), self.dot.transpose(axes))

    def __getitem__(self, key):
        return Dual._wrap(self.val[key], self.dot[key])

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        return Dual._wrap(
            self.val.sum(axis=axis, keepdims=keepdims),
            self.dot.sum(axis=axis, keepdims=keepdims),
        )

    def mean(self, axis=None, keepdims=False):
        return Dual._wrap(
            self.val.mean(axis=axis, keepdims=keepdims),
            self.dot.mean(axis=axis, keepdims=keepdims),
        )

    def min(self, axis=-1, keepdims=False):
        """Minimum along ``axis``, carrying the derivative of the argmin
        element (the a.e. correct derivative of a pointwise minimum)."""
        return self._select(np.argmin, axis, keepdims)

    def max(self, axis=-1, keepdims=False):
        return self._select(np.argmax, axis, keepdims)

    def _select(self, argfn, axis, keepdims):
        idx = np.expand_dims(argfn(self.val, axis=axis), axis)
        v = np.take_along_axis(self.val, idx, axis=axis)
        d = np.take_along_axis(self.dot, idx, axis=axis)
        if not keepdims:
            v = np.squeeze(v, axis=axis)
            d = np.squeeze(d, axis=axis)
        return Dual._wrap(v, d)


def _match(dot: np.ndarray, other_shape) -> np.ndarray:
    """Broadcast a derivative array to the result shape of an op against a
    constant operand (whose derivative is zero)."""
    shape = np.broadcast_shapes(dot.shape, other_shape)
    if shape == dot.shape:
        return dot
    return np.broadcast_to(dot, shape).copy()


def _check_nonzero(denom):
    vals = denom if isinstance(denom, np.ndarray) else np.asarray(denom)
    if np.any(vals == 0.0):
        raise DomainError("division by zero")


# -- generic elementwise functions (work on ndarray or Dual) ------------------


def value_of(x):
    """Strip derivative tracking: the plain ndarray of values."""
    return x.val if isinstance(x, Dual) else _as_array(x)


def exp(x):
    if isinstance(x, Dual):
        v = np.exp(x.val)
        return Dual._wrap(v, v * x.dot)
    return np.exp(x)


def sqrt(x):
    if isinstance(x, Dual):
        if np.any(x.val < 0.0):
            raise DomainError("sqrt of negative value")
        v = np.sqrt(x.val)
        return Dual._wrap(v, 0.5 * x.dot / v)
    if np.any(_as_array(x) < 0.0):
        raise DomainError("sqrt of negative value")
    return np.sqrt(x)


def erf(x):
    if isinstance(x, Dual):
        return Dual._wrap(
            _sp.erf(x.val),
            _TWO_OVER_SQRT_PI * np.exp(-x.val * x.val) * x.dot,
        )
    return _sp.erf(x)


def tanh(x):
    if isinstance(x, Dual):
        v = np.tanh(x.val)
        return Dual._wrap(v, (1.0 - v * v) * x.dot)
    return np.tanh(x)


def concat(parts, axis=0):
    """Concatenate a mix of Dual and constant arrays along ``axis``."""
    if any(isinstance(p, Dual) for p in parts):
        vals = [value_of(p) for p in parts]
        dots = [
            p.dot if isinstance(p, Dual) else np.zeros_like(_as_array(p))
            for p in parts
        ]
        return Dual._wrap(np.concatenate(vals, axis=axis), np.concatenate(dots, axis=axis))
    return np.concatenate(parts, axis=axis)


def softmax(x, axis=-1):
    """Row-stochastic softmax with max-subtraction for overflow safety.

    The subtracted maximum is treated as a constant, which leaves both value
    and derivative mathematically unchanged (softmax is shift invariant).
    """
    shift = np.max(value_of(x), axis=axis, keepdims=True)
    e = exp(x - shift)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_rows(m):
    """Softmax applied to each row of a matrix (last axis)."""
    return softmax(m, axis=-1)
