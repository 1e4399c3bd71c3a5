"""Minimal dense reverse-mode engine for small MLPs and attention layers.

Values are float64 numpy arrays (vectors, matrices, or 0-d scalars). A Tape
records one backward closure per produced tensor; replaying the tape in
reverse yields exact gradients. Ops accept plain ndarrays wherever an input
should be treated as a constant (no gradient flows into it).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, UsageError

Array = np.ndarray


class Tensor:
    """A value in the computation graph. `grad` is filled by `backward`."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name: str = ""):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.name = name

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape})"


def param(data, name: str = "") -> Tensor:
    """Create a leaf parameter tensor (owns a fresh float64 copy)."""
    return Tensor(np.array(data, dtype=np.float64), name=name)


class Tape:
    """Ordered record of primitive ops; single-owner, single backward pass."""

    __slots__ = ("entries",)

    def __init__(self):
        self.entries: list[tuple[Tensor, object]] = []

    def record(self, out: Tensor, bw) -> None:
        self.entries.append((out, bw))

    def __len__(self):
        return len(self.entries)


def accum(t: Tensor, g: Array) -> None:
    """Add a gradient contribution. Rebinds, never mutates in place, so
    contributions may alias upstream grad buffers safely."""
    t.grad = g if t.grad is None else t.grad + g


def _val(x) -> Array:
    return x.data if isinstance(x, Tensor) else x


def backward(tape: Tape, out: Tensor, params: list[Tensor] | None = None):
    """Reverse sweep over the tape from a scalar output.

    Visits every recorded node exactly once. Returns a map from parameter to
    accumulated gradient when `params` is given; parameters the output never
    touched map to exact zeros.
    """
    if out.data.size != 1:
        raise UsageError("backward requires a scalar output")
    out.grad = np.ones_like(out.data)
    for t, bw in reversed(tape.entries):
        g = t.grad
        if g is not None:
            bw(g)
    if params is None:
        return None
    return {p: (p.grad if p.grad is not None else np.zeros_like(p.data)) for p in params}


# ---------------------------------------------------------------- primitives

def linear(x, W, b, tape: Tape | None = None) -> Tensor:
    """W @ x + b for a vector x."""
    xd, Wd, bd = _val(x), _val(W), _val(b)
    if Wd.ndim != 2 or xd.ndim != 1 or Wd.shape[1] != xd.shape[0]:
        raise ConfigError(f"linear: W is {Wd.shape}, x is {xd.shape}")
    if bd.shape != (Wd.shape[0],):
        raise ConfigError(f"linear: b is {bd.shape}, expected ({Wd.shape[0]},)")
    out = Tensor(Wd @ xd + bd)
    if tape is not None:
        def bw(g, x=x, W=W, b=b, xd=xd, Wd=Wd):
            if isinstance(W, Tensor):
                accum(W, g[:, None] * xd[None, :])
            if isinstance(b, Tensor):
                accum(b, g)
            if isinstance(x, Tensor):
                accum(x, Wd.T @ g)
        tape.record(out, bw)
    return out


def add(a, b, tape: Tape | None = None) -> Tensor:
    out = Tensor(_val(a) + _val(b))
    if tape is not None:
        def bw(g, a=a, b=b):
            if isinstance(a, Tensor):
                accum(a, g)
            if isinstance(b, Tensor):
                accum(b, g)
        tape.record(out, bw)
    return out


def sub(a, b, tape: Tape | None = None) -> Tensor:
    out = Tensor(_val(a) - _val(b))
    if tape is not None:
        def bw(g, a=a, b=b):
            if isinstance(a, Tensor):
                accum(a, g)
            if isinstance(b, Tensor):
                accum(b, -g)
        tape.record(out, bw)
    return out


def mul(a, b, tape: Tape | None = None) -> Tensor:
    ad, bd = _val(a), _val(b)
    out = Tensor(ad * bd)
    if tape is not None:
        def bw(g, a=a, b=b, ad=ad, bd=bd):
            if isinstance(a, Tensor):
                accum(a, g * bd)
            if isinstance(b, Tensor):
                accum(b, g * ad)
        tape.record(out, bw)
    return out


def scale(x, c: float, tape: Tape | None = None) -> Tensor:
    out = Tensor(_val(x) * c)
    if tape is not None:
        def bw(g, x=x, c=c):
            if isinstance(x, Tensor):
                accum(x, g * c)
        tape.record(out, bw)
    return out


def tanh(x, tape: Tape | None = None) -> Tensor:
    y = np.tanh(_val(x))
    out = Tensor(y)
    if tape is not None:
        def bw(g, x=x, y=y):
            if isinstance(x, Tensor):
                accum(x, g * (1.0 - y * y))
        tape.record(out, bw)
    return out


def leaky_relu(x, slope: float = 0.2, tape: Tape | None = None) -> Tensor:
    """Elementwise max(x, slope*x); derivative at 0 taken as 1."""
    if not (0.0 < slope < 1.0):
        raise ConfigError(f"leaky_relu slope must be in (0,1), got {slope}")
    xd = _val(x)
    out = Tensor(np.where(xd >= 0.0, xd, slope * xd))
    if tape is not None:
        def bw(g, x=x, xd=xd, slope=slope):
            if isinstance(x, Tensor):
                accum(x, g * np.where(xd >= 0.0, 1.0, slope))
        tape.record(out, bw)
    return out


def exp(x, tape: Tape | None = None) -> Tensor:
    y = np.exp(_val(x))
    out = Tensor(y)
    if tape is not None:
        def bw(g, x=x, y=y):
            if isinstance(x, Tensor):
                accum(x, g * y)
        tape.record(out, bw)
    return out


def dot(a, b, tape: Tape | None = None) -> Tensor:
    ad, bd = _val(a), _val(b)
    out = Tensor(np.asarray(ad @ bd))
    if tape is not None:
        def bw(g, a=a, b=b, ad=ad, bd=bd):
            if isinstance(a, Tensor):
                accum(a, g * bd)
            if isinstance(b, Tensor):
                accum(b, g * ad)
        tape.record(out, bw)
    return out


def concat(a, b, tape: Tape | None = None) -> Tensor:
    ad, bd = _val(a), _val(b)
    out = Tensor(np.concatenate([ad, bd]))
    if tape is not None:
        na = ad.shape[0]
        def bw(g, a=a, b=b, na=na):
            if isinstance(a, Tensor):
                accum(a, g[:na])
            if isinstance(b, Tensor):
                accum(b, g[na:])
        tape.record(out, bw)
    return out


def index(x, i: int, tape: Tape | None = None) -> Tensor:
    xd = _val(x)
    out = Tensor(np.asarray(xd[i]))
    if tape is not None:
        def bw(g, x=x, i=i, n=xd.shape[0]):
            if isinstance(x, Tensor):
                contrib = np.zeros(n)
                contrib[i] = g
                accum(x, contrib)
        tape.record(out, bw)
    return out


def vsum(x, tape: Tape | None = None) -> Tensor:
    xd = _val(x)
    out = Tensor(np.asarray(xd.sum()))
    if tape is not None:
        def bw(g, x=x, shape=xd.shape):
            if isinstance(x, Tensor):
                accum(x, np.full(shape, float(g)))
        tape.record(out, bw)
    return out


def sum_list(xs: list, tape: Tape | None = None) -> Tensor:
    """Sum of scalar tensors (used to combine per-sample losses)."""
    total = 0.0
    for x in xs:
        total = total + float(_val(x))
    out = Tensor(np.asarray(total))
    if tape is not None:
        def bw(g, xs=xs):
            for x in xs:
                if isinstance(x, Tensor):
                    accum(x, g)
        tape.record(out, bw)
    return out


def softmax(scores, tape: Tape | None = None) -> Tensor:
    """Max-stabilized softmax over a vector; output sums to 1."""
    s = _val(scores)
    if s.ndim != 1 or s.shape[0] < 1:
        raise ConfigError(f"softmax expects a non-empty vector, got shape {s.shape}")
    z = np.exp(s - s.max())
    p = z / z.sum()
    out = Tensor(p)
    if tape is not None:
        def bw(g, scores=scores, p=p):
            if isinstance(scores, Tensor):
                accum(scores, p * (g - float(p @ g)))
        tape.record(out, bw)
    return out


def mse_to_const(x, target: Array, tape: Tape | None = None) -> Tensor:
    """Mean squared error between a vector and a constant vector."""
    xd = _val(x)
    diff = xd - target
    out = Tensor(np.asarray(float(diff @ diff) / diff.shape[0]))
    if tape is not None:
        def bw(g, x=x, diff=diff):
            if isinstance(x, Tensor):
                accum(x, (2.0 * float(g) / diff.shape[0]) * diff)
        tape.record(out, bw)
    return out


def logprob_categorical(logits, action: int, tape: Tape | None = None) -> Tensor:
    """log softmax(logits)[action], stabilized through logsumexp."""
    z = _val(logits)
    m = z.max()
    e = np.exp(z - m)
    lse = m + math.log(e.sum())
    out = Tensor(np.asarray(z[action] - lse))
    if tape is not None:
        p = e / e.sum()
        def bw(g, logits=logits, p=p, action=action):
            if isinstance(logits, Tensor):
                contrib = (-float(g)) * p
                contrib[action] += float(g)
                accum(logits, contrib)
        tape.record(out, bw)
    return out


def entropy_categorical(logits, tape: Tape | None = None) -> Tensor:
    """Entropy of softmax(logits)."""
    z = _val(logits)
    e = np.exp(z - z.max())
    p = e / e.sum()
    logp = np.log(p)
    h = -float(p @ logp)
    out = Tensor(np.asarray(h))
    if tape is not None:
        def bw(g, logits=logits, p=p, logp=logp, h=h):
            if isinstance(logits, Tensor):
                accum(logits, float(g) * (-p * (logp + h)))
        tape.record(out, bw)
    return out


def huber_scalar(v, target: float, delta: float, tape: Tape | None = None) -> Tensor:
    """Huber loss of a scalar residual v - target."""
    r = float(_val(v)) - target
    if abs(r) <= delta:
        loss = 0.5 * r * r
    else:
        loss = delta * (abs(r) - 0.5 * delta)
    out = Tensor(np.asarray(loss))
    if tape is not None:
        def bw(g, v=v, r=r, delta=delta):
            if isinstance(v, Tensor):
                d = r if abs(r) <= delta else math.copysign(delta, r)
                accum(v, np.asarray(float(g) * d))
        tape.record(out, bw)
    return out


def squared_scalar(v, target: float, tape: Tape | None = None) -> Tensor:
    """(v - target)^2 for a scalar v."""
    r = float(_val(v)) - target
    out = Tensor(np.asarray(r * r))
    if tape is not None:
        def bw(g, v=v, r=r):
            if isinstance(v, Tensor):
                accum(v, np.asarray(float(g) * 2.0 * r))
        tape.record(out, bw)
    return out


def ppo_surrogate(logp_new, logp_old: float, advantage: float, clip_eps: float,
                  tape: Tape | None = None) -> Tensor:
    """-min(r*A, clip(r, 1-eps, 1+eps)*A) with r = exp(logp_new - logp_old).

    Ties go to the unclipped branch, so the gradient is -A*r inside the clip
    region and exactly zero when the clipped branch binds outside it.
    """
    r = math.exp(float(_val(logp_new)) - logp_old)
    rc = min(max(r, 1.0 - clip_eps), 1.0 + clip_eps)
    t1, t2 = r * advantage, rc * advantage
    out = Tensor(np.asarray(-min(t1, t2)))
    if tape is not None:
        def bw(g, logp_new=logp_new, r=r, t1=t1, t2=t2, advantage=advantage):
            if isinstance(logp_new, Tensor):
                d = -advantage * r if t1 <= t2 else 0.0
                accum(logp_new, np.asarray(float(g) * d))
        tape.record(out, bw)
    return out


# ---------------------------------------------------------------- optimizer

class Adam:
    """Adam with global-norm gradient clipping over the owned parameter set.

    One instance per agent covers that agent's full parameter set, so the
    clip is a per-agent global norm.
    """

    def __init__(self, params: list[Tensor], lr: float = 5e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-5, max_grad_norm: float = 10.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.max_grad_norm = max_grad_norm
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads: dict | None = None) -> None:
        """Clip, update, and clear gradients. Missing gradients count as zero."""
        gs = []
        for p in self.params:
            g = grads.get(p) if grads is not None else p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise UsageError(f"non-finite gradient for parameter {p.name!r}")
            gs.append(g)
        sq = 0.0
        for g in gs:
            sq += float((g * g).sum())
        norm = math.sqrt(sq)
        if norm > self.max_grad_norm:
            coef = self.max_grad_norm / norm
            gs = [g * coef for g in gs]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        if self.lr != 0.0:
            for p, g, m, v in zip(self.params, gs, self.m, self.v):
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * (g * g)
                p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        else:
            for g, m, v in zip(gs, self.m, self.v):
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * (g * g)
        for p in self.params:
            p.grad = None


def adam_step(state: Adam, grads: dict | None = None) -> None:
    state.step(grads)


def clip_by_global_norm(grads: list[Array], max_norm: float) -> list[Array]:
    """Standalone global-norm clip (same rule Adam applies internally)."""
    sq = sum(float((g * g).sum()) for g in grads)
    norm = math.sqrt(sq)
    if norm > max_norm:
        coef = max_norm / norm
        return [g * coef for g in grads]
    return grads


# ----------------------------------------------------- finite-difference oracle

def finite_difference(f, params: list[Tensor], eps: float = 1e-5,
                      coords: dict | None = None) -> dict:
    """Central-difference gradient of the scalar closure f().

    f must re-run the full forward pass from current parameter values.
    `coords` optionally restricts each parameter to a list of flat indices;
    unsampled entries are returned as 0.
    """
    grads = {}
    for p in params:
        flat = p.data.reshape(-1)
        idxs = range(flat.size) if coords is None else coords.get(p, [])
        g = np.zeros(flat.size)
        for i in idxs:
            old = flat[i]
            flat[i] = old + eps
            f_plus = float(f())
            flat[i] = old - eps
            f_minus = float(f())
            flat[i] = old
            g[i] = (f_plus - f_minus) / (2.0 * eps)
        grads[p] = g.reshape(p.data.shape)
    return grads


def relative_error(analytic: Array, numeric: Array) -> float:
    """Scale-free gradient mismatch: ||a-n|| / max(||a||, ||n||, tiny)."""
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(n)), 1e-12)
    return float(np.linalg.norm(a - n)) / denom


def assert_finite(name: str, arr: Array) -> None:
    if not np.all(np.isfinite(arr)):
        raise UsageError(f"non-finite values in {name}")
