"""A small automatic-differentiation engine for the surrogate.

Two mechanisms are combined:

* :class:`DualNumber` carries a value together with its first and second
  derivative along one input direction (forward mode).  It is used for the
  input derivatives that enter the heat-equation residual.
* :class:`Tape` / :class:`Var` record operations on numpy arrays and run
  reverse mode over them, which gives gradients with respect to network
  parameters.

Dual-number components may themselves be :class:`Var` objects, so reverse
mode runs straight through the forward-mode program: this is how the
gradient of the PDE residual with respect to the weights is obtained.

The primitive set is closed: ``+ - * /``, negation, ``tanh``, ``exp``,
``sin``, ``cos``, affine maps (``@`` plus bias), reductions and reshaping.
Anything else raises :class:`UnsupportedOperationError` at construction
time.
"""

from __future__ import annotations

import math
from numbers import Number

import numpy as np

from .errors import InvalidInputError, NonFiniteError, UnsupportedOperationError

__all__ = [
    "Tape",
    "Var",
    "DualNumber",
    "tanh",
    "exp",
    "sin",
    "cos",
    "affine",
    "square",
    "mean",
    "eval_with_input_derivs",
    "InputDerivatives",
    "grad_params",
    "fd_check",
]


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """Evaluation-local record of primitive operations.

    Records are appended in execution order, so every record only refers to
    earlier ones and a single reverse sweep suffices.
    """

    def __init__(self):
        self.values = []
        self.records = []  # (parent indices, vjp closure) per node

    def __len__(self):
        return len(self.values)

    def variable(self, value) -> "Var":
        """Register a leaf (an independent variable)."""
        return self._push(np.asarray(value, dtype=float), (), None)

    def _push(self, value, parents, vjp):
        self.values.append(value)
        self.records.append((parents, vjp))
        return Var(self, len(self.values) - 1)

    def gradient(self, output: "Var", wrt: "Var") -> np.ndarray:
        """Reverse sweep from scalar ``output``; returns d output / d ``wrt``."""
        if output.tape is not self or wrt.tape is not self:
            raise InvalidInputError("variables belong to a different tape")
        if output.value.size != 1:
            raise InvalidInputError("reverse sweep needs a scalar output")
        adjoints = [None] * (output.index + 1)
        adjoints[output.index] = np.ones_like(output.value)
        for i in range(output.index, wrt.index - 1, -1):
            adj = adjoints[i]
            if adj is None:
                continue
            parents, vjp = self.records[i]
            if vjp is None:
                continue
            for p, g in zip(parents, vjp(adj)):
                if g is None:
                    continue
                adjoints[p] = g if adjoints[p] is None else adjoints[p] + g
        grad = adjoints[wrt.index]
        return np.zeros_like(wrt.value) if grad is None else grad


def _lift(tape, other):
    if isinstance(other, Var):
        if other.tape is not tape:
            raise InvalidInputError("cannot mix variables from different tapes")
        return other
    if isinstance(other, (Number, np.ndarray, np.generic)):
        return None
    raise UnsupportedOperationError(f"unsupported operand type {type(other).__name__}")


class Var:
    """Handle to a node on a :class:`Tape`."""

    __slots__ = ("tape", "index")
    __array_priority__ = 1000

    def __init__(self, tape, index):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.index]

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.shape}, index={self.index})"

    def _binary(self, other, fwd, vjp_self, vjp_other):
        if isinstance(other, DualNumber):
            return NotImplemented
        tape = self.tape
        o = _lift(tape, other)
        a = self.value
        b = o.value if o is not None else np.asarray(other, dtype=float)
        out = fwd(a, b)
        sa, sb = a.shape, b.shape
        if o is None:
            return tape._push(out, (self.index,), lambda g: (_unbroadcast(vjp_self(g, a, b), sa),))
        return tape._push(
            out,
            (self.index, o.index),
            lambda g: (_unbroadcast(vjp_self(g, a, b), sa), _unbroadcast(vjp_other(g, a, b), sb)),
        )

    def __add__(self, other):
        return self._binary(other, np.add, lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract, lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        return self._binary(other, np.multiply, lambda g, a, b: g * b, lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(
            other, np.divide, lambda g, a, b: g / b, lambda g, a, b: -g * a / (b * b)
        )

    def __rtruediv__(self, other):
        if _lift(self.tape, other) is not None:
            return other / self
        c = np.asarray(other, dtype=float)
        a = self.value
        out = c / a
        shape = a.shape
        return self.tape._push(out, (self.index,), lambda g: (_unbroadcast(-g * c / (a * a), shape),))

    def __neg__(self):
        return self.tape._push(-self.value, (self.index,), lambda g: (-g,))

    def __matmul__(self, other):
        if isinstance(other, DualNumber):
            return NotImplemented
        o = _lift(self.tape, other)
        a = self.value
        b = o.value if o is not None else np.asarray(other, dtype=float)
        out = a @ b
        if o is None:
            return self.tape._push(out, (self.index,), lambda g: (g @ b.T,))
        return self.tape._push(out, (self.index, o.index), lambda g: (g @ b.T, a.T @ g))

    def __rmatmul__(self, other):
        a = np.asarray(other, dtype=float)
        b = self.value
        return self.tape._push(a @ b, (self.index,), lambda g: (a.T @ g,))

    def __pow__(self, power):
        if power == 2:
            return square(self)
        raise UnsupportedOperationError("only squaring is supported; use explicit products")

    def __getitem__(self, key):
        a = self.value
        out = a[key]

        def vjp(g):
            full = np.zeros_like(a)
            full[key] += g
            return (full,)

        return self.tape._push(out, (self.index,), vjp)

    def reshape(self, *shape):
        orig = self.value.shape
        return self.tape._push(self.value.reshape(*shape), (self.index,), lambda g: (g.reshape(orig),))

    def sum(self):
        a = self.value
        return self.tape._push(np.asarray(a.sum()), (self.index,), lambda g: (np.broadcast_to(g, a.shape).copy(),))

    def mean(self):
        return self.sum() * (1.0 / self.value.size)

    def __bool__(self):
        raise UnsupportedOperationError("control flow on traced values is not supported")

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        # numpy operands on the left must defer to Var, never silently detach
        if method != "__call__" or kwargs:
            return NotImplemented
        table = {np.add: "__radd__", np.multiply: "__rmul__", np.subtract: "__rsub__",
                 np.true_divide: "__rtruediv__", np.matmul: "__rmatmul__"}
        name = table.get(ufunc)
        if name is None or len(inputs) != 2 or inputs[1] is not self:
            raise UnsupportedOperationError(f"numpy ufunc {ufunc.__name__} is not a supported primitive")
        return getattr(self, name)(inputs[0])


def _unary(x, fwd, deriv):
    if isinstance(x, Var):
        a = x.value
        out = fwd(a)
        return x.tape._push(out, (x.index,), lambda g: (g * deriv(a, out),))
    if isinstance(x, (Number, np.ndarray, np.generic)):
        return fwd(np.asarray(x, dtype=float)) if isinstance(x, np.ndarray) else fwd(float(x))
    raise UnsupportedOperationError(f"unsupported operand type {type(x).__name__}")


def tanh(x):
    if isinstance(x, DualNumber):
        y = tanh(x.value)
        s = 1 - y * y
        d2 = None if x.d2 is None else s * x.d2 - 2 * (y * s) * (x.d1 * x.d1)
        return DualNumber(y, s * x.d1, d2)
    return _unary(x, np.tanh, lambda a, out: 1 - out * out)


def exp(x):
    if isinstance(x, DualNumber):
        y = exp(x.value)
        d2 = None if x.d2 is None else y * (x.d2 + x.d1 * x.d1)
        return DualNumber(y, y * x.d1, d2)
    return _unary(x, np.exp, lambda a, out: out)


def sin(x):
    if isinstance(x, DualNumber):
        s, c = sin(x.value), cos(x.value)
        d2 = None if x.d2 is None else c * x.d2 - s * (x.d1 * x.d1)
        return DualNumber(s, c * x.d1, d2)
    return _unary(x, np.sin, lambda a, out: np.cos(a))


def cos(x):
    if isinstance(x, DualNumber):
        s, c = sin(x.value), cos(x.value)
        d2 = None if x.d2 is None else -s * x.d2 - c * (x.d1 * x.d1)
        return DualNumber(c, -s * x.d1, d2)
    return _unary(x, np.cos, lambda a, out: -np.sin(a))


def square(x):
    if isinstance(x, DualNumber):
        return x * x
    if isinstance(x, Var):
        a = x.value
        return x.tape._push(a * a, (x.index,), lambda g: (2 * g * a,))
    return np.square(x)


def mean(x):
    return x.mean() if isinstance(x, Var) else np.mean(x)


def affine(x, weight, bias):
    """``x @ weight + bias`` for arrays, tape variables or dual numbers.

    For a dual number the bias only enters the value: derivatives of an
    affine map are linear.
    """
    if isinstance(x, DualNumber):
        d2 = None if x.d2 is None else x.d2 @ weight
        return DualNumber(x.value @ weight + bias, x.d1 @ weight, d2)
    return x @ weight + bias


class DualNumber:
    """Value with first and second derivative along one direction.

    ``d2`` may be ``None`` to propagate first derivatives only.  Components
    can be floats, numpy arrays or :class:`Var` objects.
    """

    __slots__ = ("value", "d1", "d2")
    # numpy operands on the left defer to the reflected dual operators
    __array_ufunc__ = None

    def __init__(self, value, d1=0.0, d2=0.0):
        self.value = value
        self.d1 = d1
        self.d2 = d2

    @classmethod
    def seed(cls, value, direction=True, second_order=True):
        """Independent variable: unit first derivative along ``direction``."""
        if isinstance(value, Var):
            one = np.ones_like(value.value)
        else:
            value = np.asarray(value, dtype=float) if not isinstance(value, Number) else float(value)
            one = np.ones_like(value)
        zero = one * 0.0
        return cls(value, one if direction else zero, zero if second_order else None)

    def __repr__(self):
        return f"DualNumber({self.value!r}, {self.d1!r}, {self.d2!r})"

    @staticmethod
    def _coerce(other):
        if isinstance(other, DualNumber):
            return other
        if isinstance(other, (Number, np.ndarray, np.generic, Var)):
            return None
        raise UnsupportedOperationError(f"unsupported operand type {type(other).__name__}")

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            return DualNumber(self.value + other, self.d1, self.d2)
        d2 = None if self.d2 is None or o.d2 is None else self.d2 + o.d2
        return DualNumber(self.value + o.value, self.d1 + o.d1, d2)

    __radd__ = __add__

    def __neg__(self):
        return DualNumber(-self.value, -self.d1, None if self.d2 is None else -self.d2)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        o = self._coerce(other)
        if o is None:
            d2 = None if self.d2 is None else self.d2 * other
            return DualNumber(self.value * other, self.d1 * other, d2)
        d2 = None
        if self.d2 is not None and o.d2 is not None:
            d2 = self.d2 * o.value + 2 * (self.d1 * o.d1) + self.value * o.d2
        return DualNumber(self.value * o.value, self.d1 * o.value + self.value * o.d1, d2)

    __rmul__ = __mul__

    def reciprocal(self):
        inv = 1.0 / self.value
        d1 = -self.d1 * (inv * inv)
        d2 = None
        if self.d2 is not None:
            d2 = 2 * (self.d1 * self.d1) * (inv * inv * inv) - self.d2 * (inv * inv)
        return DualNumber(inv, d1, d2)

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is None:
            return self * (1.0 / other)
        return self * o.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, power):
        if power == 2:
            return self * self
        raise UnsupportedOperationError("only squaring is supported")

    def __matmul__(self, weight):
        d2 = None if self.d2 is None else self.d2 @ weight
        return DualNumber(self.value @ weight, self.d1 @ weight, d2)

    def __bool__(self):
        raise UnsupportedOperationError("control flow on dual numbers is not supported")


class InputDerivatives(tuple):
    """``(value, dT_dt, dT_dx, d2T_dx2)`` with named access."""

    __slots__ = ()

    def __new__(cls, value, dt, dx, dxx):
        return super().__new__(cls, (value, dt, dx, dxx))

    value = property(lambda self: self[0])
    dt = property(lambda self: self[1])
    dx = property(lambda self: self[2])
    dxx = property(lambda self: self[3])


def eval_with_input_derivs(f, x, t, *extra) -> InputDerivatives:
    """Evaluate ``f(x, t, *extra)`` with its derivatives in ``t`` and ``x``.

    ``f`` is called twice: once with ``x`` seeded as a second-order dual
    number (giving the value, d/dx and d2/dx2) and once with ``t`` seeded as
    a first-order dual number.  ``x`` and ``t`` may be scalars, arrays or
    :class:`Var` objects; ``extra`` inputs are passed through unchanged.
    """
    xd = DualNumber.seed(x, direction=True, second_order=True)
    td = DualNumber.seed(t, direction=False, second_order=True)
    out_x = f(xd, td, *extra)
    xd = DualNumber.seed(x, direction=False, second_order=False)
    td = DualNumber.seed(t, direction=True, second_order=False)
    out_t = f(xd, td, *extra)
    for out in (out_x, out_t):
        if not isinstance(out, DualNumber):
            raise UnsupportedOperationError(
                "f must be built from supported primitives acting on its inputs"
            )
    return InputDerivatives(out_x.value, out_t.d1, out_x.d1, out_x.d2)


def _as_float(v):
    return float(np.asarray(v.value if isinstance(v, Var) else v).reshape(()))


def grad_params(loss_fn, theta):
    """Reverse-mode gradient of a scalar loss with respect to ``theta``.

    ``loss_fn`` receives ``theta`` as a tape variable and returns either the
    scalar loss or ``(loss, components)`` where ``components`` maps names to
    scalar terms.  Components are only used to name the culprit when the
    loss is not finite.

    Returns
    -------
    loss : float
    grad : ndarray, same shape as ``theta``
    """
    tape = Tape()
    leaf = tape.variable(np.array(theta, dtype=float, copy=True))
    result = loss_fn(leaf)
    components = {}
    if isinstance(result, tuple):
        result, components = result
    if not isinstance(result, Var):
        # loss does not depend on theta
        return _as_float(result), np.zeros_like(leaf.value)
    loss = _as_float(result)
    if not math.isfinite(loss):
        bad = [name for name, v in components.items() if not math.isfinite(_as_float(v))]
        named = ", ".join(bad) if bad else "loss"
        raise NonFiniteError(f"non-finite loss ({loss}); offending term(s): {named}", bad or ["loss"])
    return loss, tape.gradient(result, leaf)


def fd_check(f, x, t, *extra, h=1e-4):
    """Largest relative error of the input derivatives against central differences.

    ``f`` must accept plain floats as well as dual numbers.  Each of
    ``dT_dt``, ``dT_dx`` and ``d2T_dx2`` is compared through
    ``|ad - fd| / max(|ad|, |fd|, 1)``, which is exactly 0 when both vanish.
    """
    if not h > 0:
        raise InvalidInputError("h must be positive")
    ad = eval_with_input_derivs(f, x, t, *extra)

    def val(xx, tt):
        return np.asarray(f(xx, tt, *extra), dtype=float)

    f0 = val(x, t)
    fd = (
        (val(x, t + h) - val(x, t - h)) / (2 * h),
        (val(x + h, t) - val(x - h, t)) / (2 * h),
        (val(x + h, t) - 2 * f0 + val(x - h, t)) / (h * h),
    )
    worst = 0.0
    for a, b in zip((ad.dt, ad.dx, ad.dxx), fd):
        a = np.asarray(a, dtype=float)
        diff = np.abs(a - b)
        scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
        worst = max(worst, float(np.max(diff / scale)))
    return worst
