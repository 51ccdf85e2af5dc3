"""Feed-forward tanh networks with nested differentiation.

Spatial derivatives to second order travel forward through the layers as jets
whose components are tape nodes, so any scalar assembled from them remains
differentiable with respect to the parameters (forward-over-reverse). The
critic's input gradient is built the same way: backpropagation written out as
tape operations, so the gradient-penalty term supports parameter gradients.

tanh derivatives use the closed forms 1-t^2 and -2t(1-t^2) rather than nested
differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape
from .tape import Var, as_var

Array = np.ndarray


@dataclass
class MlpNetwork:
    """Affine-tanh stack: tanh on hidden layers, identity on the output."""

    widths: tuple[int, ...]
    weights: list[Array]
    biases: list[Array]

    def __post_init__(self):
        self.widths = tuple(self.widths)
        if len(self.widths) < 2:
            raise ValueError("need at least input and output widths")
        if len(self.weights) != len(self.widths) - 1 or len(self.biases) != len(
            self.weights
        ):
            raise ValueError("parameter count does not match widths")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.widths[i], self.widths[i + 1]) or b.shape != (
                self.widths[i + 1],
            ):
                raise ValueError(f"layer {i} has shape {w.shape}, widths {self.widths}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite parameters")

    @property
    def input_width(self) -> int:
        return self.widths[0]

    @property
    def output_width(self) -> int:
        return self.widths[-1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def to_flat(self) -> Array:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def set_flat(self, flat: Array) -> None:
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {flat.shape}")
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[pos : pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = flat[pos : pos + b.size].copy()
            pos += b.size

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(
            self.widths,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )


def init_network(widths, seed) -> MlpNetwork:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    widths = tuple(widths)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpNetwork(widths, weights, biases)


def forward(net: MlpNetwork, x: Array) -> Array:
    """Plain numeric forward pass; accepts a single input or a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != net.input_width:
        raise ValueError(f"input width {h.shape[1]} != network width {net.input_width}")
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < last:
            h = np.tanh(h)
    return h[0] if single else h


@dataclass
class Jet2:
    """Value and first/second partials with respect to two seeded directions.

    d1 = (d/da, d/db); d2 = (d2/da2, d2/dadb, d2/db2) -- the symmetric second
    derivative stored as three numbers. Components are tape Vars (or plain
    numbers for hand-built jets).
    """

    value: object
    d1: tuple
    d2: tuple


class _JetState:
    """Per-layer jet channels; d2 channels of None mean identically zero."""

    __slots__ = ("val", "da", "db", "daa", "dab", "dbb")

    def __init__(self, val, da, db, daa=None, dab=None, dbb=None):
        self.val, self.da, self.db = val, da, db
        self.daa, self.dab, self.dbb = daa, dab, dbb


class TapedNetwork:
    """A network bound to the gradient tape.

    Parameters become leaf Vars (tracked when trainable) so that scalars built
    from forward passes, jets, or input gradients can be differentiated with
    respect to them.
    """

    def __init__(self, net: MlpNetwork, trainable: bool = True):
        self.net = net
        self.trainable = trainable
        self.weights = [Var(w, requires_grad=trainable) for w in net.weights]
        self.biases = [Var(b, requires_grad=trainable) for b in net.biases]

    @property
    def params(self) -> list[Var]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x, keep_hidden: bool = False):
        """Forward pass on a (batch, input_width) Var or array."""
        h = as_var(x)
        if h.value.ndim != 2 or h.value.shape[1] != self.net.input_width:
            raise ValueError(
                f"expected (batch, {self.net.input_width}) input, got {h.value.shape}"
            )
        hidden = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = tape.matmul(h, w) + b
            if i < last:
                h = tape.tanh(h)
                hidden.append(h)
        return (h, hidden) if keep_hidden else h

    def forward_jet_batch(
        self, x: Array, seeds: Array | None = None, order: int = 2
    ) -> list[Jet2]:
        """Jets of every output component over a batch of inputs.

        x has shape (batch, input_width). seeds is an (input_width, 2) matrix
        of tangent directions; the default seeds the two leading (spatial)
        slots. Returns one Jet2 per output component whose fields are Vars of
        shape (batch,). order=1 skips second-derivative channels (their jets
        are zero Vars).
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.net.input_width:
            raise ValueError(
                f"expected (batch, {self.net.input_width}) input, got {x.shape}"
            )
        if order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        n = x.shape[0]
        if seeds is None:
            seeds = np.zeros((self.net.input_width, 2))
            seeds[0, 0] = 1.0
            seeds[1, 1] = 1.0
        else:
            seeds = np.asarray(seeds, dtype=np.float64)
            if seeds.shape != (self.net.input_width, 2):
                raise ValueError("seeds must have shape (input_width, 2)")

        state = _JetState(
            Var(x),
            Var(np.broadcast_to(seeds[:, 0], (n, self.net.input_width)).copy()),
            Var(np.broadcast_to(seeds[:, 1], (n, self.net.input_width)).copy()),
        )
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            state = _jet_affine(state, w, b)
            if i < last:
                state = _jet_tanh(state, order)

        zero = Var(np.zeros(n))
        jets = []
        for k in range(self.net.output_width):
            col = (slice(None), k)
            d2 = (
                (state.daa[col], state.dab[col], state.dbb[col])
                if state.daa is not None
                else (zero, zero, zero)
            )
            jets.append(
                Jet2(
                    value=state.val[col],
                    d1=(state.da[col], state.db[col]),
                    d2=d2,
                )
            )
        return jets

    def input_gradient(self, v) -> Var:
        """Gradient of the scalar output with respect to each input row.

        Returns a (batch, input_width) Var; scalars built from it (the
        gradient penalty) support parameter gradients because the chain of
        matmuls lives on the tape.
        """
        if self.net.output_width != 1:
            raise ValueError("input_gradient requires a scalar-output network")
        v = as_var(v)
        _, hidden = self.forward(v, keep_hidden=True)
        n = v.value.shape[0]
        g = Var(np.ones((n, 1)))
        for i in range(len(self.weights) - 1, 0, -1):
            g = tape.matmul(g, self.weights[i].T)
            h = hidden[i - 1]
            g = g * (1.0 - h * h)
        return tape.matmul(g, self.weights[0].T)


def _jet_affine(s: _JetState, w: Var, b: Var) -> _JetState:
    lin = lambda c: None if c is None else tape.matmul(c, w)
    return _JetState(
        tape.matmul(s.val, w) + b,
        tape.matmul(s.da, w),
        tape.matmul(s.db, w),
        lin(s.daa),
        lin(s.dab),
        lin(s.dbb),
    )


def _jet_tanh(s: _JetState, order: int) -> _JetState:
    t = tape.tanh(s.val)
    slope = 1.0 - t * t
    if order == 1:
        return _JetState(t, slope * s.da, slope * s.db)
    curve = -2.0 * t * slope

    def second(dab, d1a, d1b):
        term = curve * d1a * d1b
        return term if dab is None else slope * dab + term

    return _JetState(
        t,
        slope * s.da,
        slope * s.db,
        second(s.daa, s.da, s.da),
        second(s.dab, s.da, s.db),
        second(s.dbb, s.db, s.db),
    )


def forward_jet(net: MlpNetwork, x, xi, order: int = 2) -> list[Jet2]:
    """Jets of a single evaluation at spatial point x with noise xi.

    Derivatives are with respect to the two spatial inputs; returns one Jet2
    of plain floats per output component.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    xi = np.asarray(xi, dtype=np.float64).ravel()
    inp = np.concatenate([x, xi])[None, :]
    jets = TapedNetwork(net, trainable=False).forward_jet_batch(inp, order=order)
    return [
        Jet2(
            value=float(j.value.value[0]),
            d1=tuple(float(c.value[0]) for c in j.d1),
            d2=tuple(float(c.value[0]) for c in j.d2),
        )
        for j in jets
    ]


def param_gradient(scalar: Var, nets) -> Array:
    """Flat gradient of a scalar over all parameters of the given networks.

    Blocks follow the order of nets, each laid out like MlpNetwork.to_flat();
    networks the scalar does not depend on contribute zero blocks.
    """
    leaves = []
    for net in nets:
        leaves.extend(net.params)
    grads = tape.grad(scalar, leaves)
    return np.concatenate([g.ravel() for g in grads])
