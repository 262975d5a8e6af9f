"""Tape-based reverse-mode differentiation over numpy arrays.

Only the handful of primitives the taggers need are provided.  Every value is
float64.  A :class:`Tape` records each primitive as it executes together with
a closure that pushes the output gradient back onto the inputs;
:meth:`Tape.backward` replays those closures in reverse order.

Example::

    tape = Tape()
    h = tape.tanh(tape.affine(x, W, b))
    loss = tape.softmax_cross_entropy(h, targets)
    tape.backward(loss)
"""

import struct

import numpy as np
from scipy.special import expit, log_softmax, softmax


class ShapeError(ValueError):
    pass


class Var:
    """A node in the computation graph."""

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad=True):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.shape})"


def const(value):
    return Var(value, requires_grad=False)


class Param(Var):
    """A named leaf whose gradient accumulates across backward passes."""

    __slots__ = ("name", "trainable")

    def __init__(self, name, value, trainable=True):
        # Frozen params skip gradient accumulation entirely.
        super().__init__(value, requires_grad=trainable)
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def _acc(var, g):
    if not var.requires_grad:
        return
    if var.grad is None:
        var.grad = np.array(g, dtype=np.float64)
    else:
        var.grad = var.grad + g


def _check(cond, op, msg):
    if not cond:
        raise ShapeError(f"{op}: {msg}")


def _basic_index(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, np.integer)) or p is Ellipsis for p in parts)


class Tape:
    def __init__(self, enabled=True):
        self.enabled = enabled
        self.records = []
        self.visits = 0

    def __len__(self):
        return len(self.records)

    def _record(self, out, backward):
        if self.enabled:
            self.records.append((out, backward))
        return out

    def backward(self, loss):
        """Seed ``loss`` with gradient 1 and propagate to every input.

        Intermediate gradients are reset first, so calling this twice on the
        same tape adds exactly one more copy of each gradient to the leaves.
        """
        _check(loss.value.size == 1, "backward", f"loss must be scalar, got {loss.shape}")
        for out, _ in self.records:
            if not isinstance(out, Param):
                out.grad = None
        loss.grad = np.ones_like(loss.value)
        for out, back in reversed(self.records):
            self.visits += 1
            if out.grad is not None:
                back(out.grad)

    # primitives -----------------------------------------------------------

    def affine(self, x, W, b=None):
        """``x @ W.T + b`` over the last axis of ``x``."""
        _check(W.value.ndim == 2, "affine", f"weight must be a matrix, got {W.shape}")
        n_out, n_in = W.shape
        _check(x.shape[-1:] == (n_in,), "affine", f"input {x.shape} incompatible with weight {W.shape}")
        if b is not None:
            _check(b.shape == (n_out,), "affine", f"bias {b.shape} does not match weight {W.shape}")
        val = x.value @ W.value.T
        if b is not None:
            val = val + b.value
        out = Var(val)

        def back(g):
            _acc(x, g @ W.value)
            g2 = g.reshape(-1, n_out)
            _acc(W, g2.T @ x.value.reshape(-1, n_in))
            if b is not None:
                _acc(b, g2.sum(axis=0))

        return self._record(out, back)

    def add(self, a, b):
        _check(a.shape == b.shape, "add", f"shapes differ: {a.shape} vs {b.shape}")
        out = Var(a.value + b.value)

        def back(g):
            _acc(a, g)
            _acc(b, g)

        return self._record(out, back)

    def hadamard(self, a, b):
        _check(a.shape == b.shape, "hadamard", f"shapes differ: {a.shape} vs {b.shape}")
        out = Var(a.value * b.value)

        def back(g):
            _acc(a, g * b.value)
            _acc(b, g * a.value)

        return self._record(out, back)

    def scale(self, x, c):
        out = Var(x.value * c)
        return self._record(out, lambda g: _acc(x, g * c))

    def sigmoid(self, x):
        s = expit(x.value)
        out = Var(s)
        return self._record(out, lambda g: _acc(x, g * s * (1.0 - s)))

    def tanh(self, x):
        t = np.tanh(x.value)
        out = Var(t)
        return self._record(out, lambda g: _acc(x, g * (1.0 - t * t)))

    def concat(self, xs, axis=-1):
        xs = list(xs)
        _check(len(xs) > 0, "concat", "nothing to concatenate")
        ax = axis % xs[0].value.ndim
        for x in xs[1:]:
            _check(x.value.ndim == xs[0].value.ndim
                   and all(x.shape[i] == xs[0].shape[i] for i in range(x.value.ndim) if i != ax),
                   "concat", f"shapes {[v.shape for v in xs]} incompatible on axis {axis}")
        out = Var(np.concatenate([x.value for x in xs], axis=ax))
        bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

        def back(g):
            for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
                _acc(x, np.take(g, np.arange(lo, hi), axis=ax))

        return self._record(out, back)

    def stack(self, xs, axis=0):
        xs = list(xs)
        _check(len(xs) > 0, "stack", "nothing to stack")
        _check(all(x.shape == xs[0].shape for x in xs), "stack", "shapes differ")
        out = Var(np.stack([x.value for x in xs], axis=axis))

        def back(g):
            for i, x in enumerate(xs):
                _acc(x, np.take(g, i, axis=axis))

        return self._record(out, back)

    def gather(self, x, index):
        """``x[index]`` with a scatter-add backward (repeated rows accumulate)."""
        try:
            val = x.value[index]
        except IndexError as exc:
            raise ShapeError(f"gather: {exc}") from None
        out = Var(val)
        basic = _basic_index(index)

        def back(g):
            if not x.requires_grad:
                return
            full = np.zeros_like(x.value)
            if basic:
                full[index] = g
            else:
                np.add.at(full, index, g)
            _acc(x, full)

        return self._record(out, back)

    def embed_row(self, matrix, index):
        _check(matrix.value.ndim == 2, "embed_row", f"expected a matrix, got {matrix.shape}")
        return self.gather(matrix, index)

    def dropout(self, x, rate, train, rng):
        """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``."""
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        if not train or rate == 0.0:
            return x
        mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
        out = Var(x.value * mask)
        return self._record(out, lambda g: _acc(x, g * mask))

    def softmax_cross_entropy(self, logits, targets, weights=None):
        """Summed (optionally weighted) cross-entropy of integer targets.

        ``logits`` has the class axis last; ``targets`` and ``weights`` have
        the remaining shape.  Zero weights mask positions out.
        """
        targets = np.asarray(targets, dtype=np.int64)
        _check(logits.shape[:-1] == targets.shape, "softmax_cross_entropy",
               f"logits {logits.shape} vs targets {targets.shape}")
        w = np.ones(targets.shape) if weights is None else np.asarray(weights, dtype=np.float64)
        _check(w.shape == targets.shape, "softmax_cross_entropy", "weights shape mismatch")
        logp = log_softmax(logits.value, axis=-1)
        picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
        out = Var(-(w * picked).sum())

        def back(g):
            d = softmax(logits.value, axis=-1)
            np.put_along_axis(d, targets[..., None],
                              np.take_along_axis(d, targets[..., None], axis=-1) - 1.0, axis=-1)
            _acc(logits, g * w[..., None] * d)

        return self._record(out, back)

    def sum(self, x):
        out = Var(x.value.sum())
        return self._record(out, lambda g: _acc(x, np.broadcast_to(g, x.shape)))

    def op(self, value, backward):
        """Register a custom primitive.

        ``backward(g)`` must return a list of ``(input_var, gradient)`` pairs.
        """
        out = Var(value)

        def back(g):
            for var, grad in backward(g):
                _acc(var, grad)

        return self._record(out, back)


# optimization ---------------------------------------------------------------


class Adam:
    """Bias-corrected Adam over a list of :class:`Param`."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p in params:
            if p.trainable:
                g = p.grad
                m = self.m.get(p.name)
                if m is None:
                    m = np.zeros_like(p.value)
                    self.v[p.name] = np.zeros_like(p.value)
                m = self.beta1 * m + (1.0 - self.beta1) * g
                v = self.beta2 * self.v[p.name] + (1.0 - self.beta2) * g * g
                self.m[p.name] = m
                self.v[p.name] = v
                p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.zero_grad()


# gradient checking ----------------------------------------------------------


class GradCheckReport:
    def __init__(self, tolerance):
        self.tolerance = tolerance
        self.worst = {}
        self.failures = []

    @property
    def passed(self):
        return not self.failures

    def __str__(self):
        lines = [f"grad check ({'pass' if self.passed else 'FAIL'}, tol={self.tolerance:g})"]
        for name, (idx, ana, num, err) in self.worst.items():
            lines.append(f"  {name}{list(idx)}: analytic={ana:.6g} numeric={num:.6g} rel={err:.2e}")
        return "\n".join(lines)


def grad_check(loss_fn, params, tolerance=1e-6, h=1e-5, samples=20, seed=0, floor=1e-4):
    """Compare tape gradients with central differences.

    ``loss_fn(tape)`` must build a scalar loss on the given tape and be
    deterministic.  Up to ``samples`` coordinates per parameter are checked.
    The relative error is ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps
    vanishing gradients from turning roundoff into a failure.
    """
    params = list(params)
    report = GradCheckReport(tolerance)
    if not params:
        return report
    for p in params:
        p.zero_grad()
    tape = Tape()
    tape.backward(loss_fn(tape))
    analytic = {p.name: p.grad.copy() for p in params}
    for p in params:
        p.zero_grad()

    rng = np.random.default_rng(seed)
    for p in params:
        size = p.value.size
        flat = rng.choice(size, size=min(samples, size), replace=False) if size else []
        worst = None
        for k in sorted(flat):
            idx = np.unravel_index(k, p.shape)
            orig = p.value[idx]
            p.value[idx] = orig + h
            up = loss_fn(Tape(enabled=False)).value.item()
            p.value[idx] = orig - h
            down = loss_fn(Tape(enabled=False)).value.item()
            p.value[idx] = orig
            num = (up - down) / (2 * h)
            ana = analytic[p.name][idx].item()
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            entry = (tuple(int(i) for i in idx), ana, num, err)
            if worst is None or err > worst[3]:
                worst = entry
            if err >= tolerance:
                report.failures.append((p.name,) + entry)
        if worst is not None:
            report.worst[p.name] = worst
    return report


# checkpoints ----------------------------------------------------------------

_MAGIC = b"ATECKPT\x00"
_VERSION = 1


def save_params(path, params):
    """Write params to a flat little-endian binary container."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(params)))
        for p in params:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            fh.write(struct.pack("<I", p.value.ndim))
            fh.write(struct.pack(f"<{p.value.ndim}Q", *p.shape))
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def load_params(path):
    """Read a checkpoint into an ordered ``{name: array}`` dict."""
    out = {}
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        for _ in range(count):
            (n,) = struct.unpack("<I", fh.read(4))
            name = fh.read(n).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            out[name] = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    return out
