"""Networks of per-edge learnable activations built on a B-spline basis.

Each edge (q, p) of a layer carries its own 1-D function
``phi(x) = base_weight[q,p] * x*sigmoid(x) + sum_l coeffs[q,p,l] * B_l(x)``
over a fixed uniform spline basis; a unit's output is the plain sum of its
incoming edge functions. The basis tensor for a batch is computed once per
layer and contracted against the coefficient stack, instead of expanding
one intermediate per edge.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ContractError, ShapeError


@dataclass(frozen=True)
class SplineGrid:
    """Uniform knot grid on [lo, hi] with `intervals` segments of degree `degree`.

    The knot vector extends `degree` extra uniformly spaced knots beyond each
    end, giving ``intervals + degree`` basis functions.
    """

    lo: float = -1.0
    hi: float = 1.0
    intervals: int = 5
    degree: int = 3
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.lo >= self.hi:
            raise ConfigError(f"grid range is empty: [{self.lo}, {self.hi}]")
        if self.intervals < 1:
            raise ConfigError(f"grid needs at least one interval, got {self.intervals}")
        if self.degree < 0:
            raise ConfigError(f"spline degree must be non-negative, got {self.degree}")
        h = (self.hi - self.lo) / self.intervals
        idx = np.arange(-self.degree, self.intervals + self.degree + 1, dtype=np.float64)
        object.__setattr__(self, "knots", self.lo + idx * h)

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / self.intervals

    @property
    def n_bases(self) -> int:
        return self.intervals + self.degree


def _raw_bases(grid: SplineGrid, xc: np.ndarray):
    """Evaluate all bases at already-clamped points.

    Returns (bases, prev) where prev is the degree-1-lower table needed for
    the derivative recurrence (None when degree == 0).
    """
    kn = grid.knots
    p = grid.degree
    n_seg = len(kn) - 1
    x1 = xc[..., None]
    b = ((x1 >= kn[:n_seg]) & (x1 < kn[1 : n_seg + 1])).astype(np.float64)
    if p == 0:
        # close the last retained interval so x == hi still has a live basis
        b[..., grid.intervals - 1] += (x1[..., 0] == kn[grid.intervals]) * 1.0
        return b, None
    prev = None
    for d in range(1, p + 1):
        cnt = n_seg - d
        inv = 1.0 / (d * grid.step)
        prev = b
        b = (x1 - kn[:cnt]) * inv * prev[..., :cnt] + (
            kn[d + 1 : d + 1 + cnt] - x1
        ) * inv * prev[..., 1 : cnt + 1]
    return b, prev


def basis_values(x: np.ndarray, grid: SplineGrid) -> np.ndarray:
    """Plain-array basis evaluation; out-of-range inputs clamp to the ends."""
    xc = np.clip(np.asarray(x, dtype=np.float64), grid.lo, grid.hi)
    return _raw_bases(grid, xc)[0]


def bspline_basis(x: Tensor, grid: SplineGrid) -> Tensor:
    """Recorded basis evaluation: (B, n) inputs to a (B, n, L) basis tensor.

    Differentiable in x at interior points; clamped points get zero
    derivative.
    """
    xc = np.clip(x.values, grid.lo, grid.hi)
    inside = (x.values > grid.lo) & (x.values < grid.hi)
    bases, prev = _raw_bases(grid, xc)
    out = Tensor(bases, op="bspline_basis")

    def backward():
        if not x.requires_grad:
            return
        if prev is None:
            return
        dbases = (prev[..., :-1] - prev[..., 1:]) / grid.step
        x.accumulate(np.einsum("bnl,bnl->bn", out.grad, dbases) * inside)

    return ag._finish(out, (x,), backward)


class KanLayer:
    """One layer: n_in inputs fan into n_out units through per-edge functions."""

    def __init__(self, n_in: int, n_out: int, grid: SplineGrid | None = None,
                 rng: np.random.Generator | None = None):
        if n_in < 1 or n_out < 1:
            raise ConfigError(f"layer widths must be positive, got {n_in}->{n_out}")
        self.n_in = n_in
        self.n_out = n_out
        self.grid = grid if grid is not None else SplineGrid()
        L = self.grid.n_bases
        rng = rng if rng is not None else np.random.default_rng()
        bound = 1.0 / np.sqrt(n_in)
        self.base_weight = ag.parameter(rng.uniform(-bound, bound, size=(n_out, n_in)))
        self.spline_coeffs = ag.parameter(
            rng.normal(0.0, 0.1 / np.sqrt(L), size=(n_out, n_in, L))
        )

    def forward(self, x: Tensor) -> Tensor:
        if x.values.ndim != 2 or x.values.shape[1] != self.n_in:
            raise ShapeError(
                f"layer expects (B, {self.n_in}) input, got {x.values.shape}"
            )
        bases = bspline_basis(x, self.grid)
        spline_part = ag.spline_mix(bases, self.spline_coeffs)
        base_part = ag.matmul(ag.silu(x), ag.transpose(self.base_weight))
        return ag.add(base_part, spline_part)

    def edge_values(self, sample: np.ndarray) -> np.ndarray:
        """phi_{q,p}(sample[:, p]) for every edge, shape (B, n_out, n_in)."""
        sample = np.asarray(sample, dtype=np.float64)
        bases = basis_values(sample, self.grid)
        spline = np.einsum("bpl,qpl->bqp", bases, self.spline_coeffs.values)
        s = 1.0 / (1.0 + np.exp(-sample))
        base = (sample * s)[:, None, :] * self.base_weight.values[None, :, :]
        return spline + base

    def parameters(self) -> list[Tensor]:
        return [self.base_weight, self.spline_coeffs]


class KanNetwork:
    """A stack of KanLayers with optional per-layer input renormalization.

    ``input_norm='affine'`` maps [0, 1]-bounded features onto the grid range
    before each layer; ``'none'`` feeds inputs through unchanged (out-of-range
    values clamp at the basis evaluation).
    """

    def __init__(self, widths: list[int], grid: SplineGrid | None = None,
                 input_norm: str = "none", rng: np.random.Generator | None = None):
        if len(widths) < 2:
            raise ConfigError("a network needs at least one layer (two widths)")
        if input_norm not in ("none", "affine"):
            raise ConfigError(f"unknown input_norm {input_norm!r}")
        grid = grid if grid is not None else SplineGrid()
        self.input_norm = input_norm
        self.layers = [
            KanLayer(n_in, n_out, grid=grid, rng=rng)
            for n_in, n_out in zip(widths, widths[1:])
        ]

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].n_in] + [ly.n_out for ly in self.layers]

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            if self.input_norm == "affine":
                g = layer.grid
                x = ag.shift(ag.scale(x, g.hi - g.lo), g.lo)
            x = layer.forward(x)
        return x

    def forward_values(self, x: np.ndarray) -> np.ndarray:
        with ag.no_grad():
            return self.forward(ag.constant(x)).values

    def layer_inputs(self, x: np.ndarray) -> list[np.ndarray]:
        """The plain-array input each layer sees for the given sample."""
        outs = []
        cur = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            if self.input_norm == "affine":
                g = layer.grid
                cur = g.lo + (g.hi - g.lo) * cur
            outs.append(cur)
            with ag.no_grad():
                cur = layer.forward(ag.constant(cur)).values
        return outs

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


def edge_importance(layer: KanLayer, sample: np.ndarray) -> np.ndarray:
    """Mean absolute edge activation over the sample, shape (n_out, n_in)."""
    sample = np.asarray(sample, dtype=np.float64)
    if sample.size == 0:
        raise ContractError("edge_importance needs a non-empty sample")
    return np.abs(layer.edge_values(sample)).mean(axis=0)


@dataclass
class PruneResult:
    network: KanNetwork
    kept_per_layer: list[tuple[int, int]]  # (kept edges, total edges)


def prune(net: KanNetwork, sample: np.ndarray, threshold: float) -> PruneResult:
    """Zero out edges whose importance falls below threshold * layer maximum.

    The sample is propagated through the network so each layer is scored on
    the inputs it actually sees. threshold 0 keeps everything; the cutoff
    caps at the layer maximum, so thresholds above 1 keep only the
    strongest edge (and its ties).
    """
    if threshold < 0:
        raise ConfigError(f"prune threshold must be non-negative, got {threshold}")
    pruned = copy.deepcopy(net)
    kept = []
    for layer, layer_in in zip(pruned.layers, pruned.layer_inputs(sample)):
        imp = edge_importance(layer, layer_in)
        cutoff = min(threshold, 1.0) * imp.max()
        drop = imp < cutoff
        layer.base_weight.values[drop] = 0.0
        layer.spline_coeffs.values[drop] = 0.0
        kept.append((int((~drop).sum()), int(drop.size)))
    return PruneResult(pruned, kept)
