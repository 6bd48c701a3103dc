"""Self-attention (SAB) and cross-attention (CAB) blocks over bank vectors.

Both blocks are residual: the output is the input plus an attention-weighted
value term.  Logits are plain inner products ``q k^T`` with no ``1/sqrt(d)``
temperature, unlike the usual transformer attention.

Multi-head variants split each d-vector into ``h`` contiguous slices of width
``d/h``, attend independently per slice with their own projections, and
concatenate the per-head value terms before the single residual add.  A block
with one head is exactly the plain single-head block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .numeric import Matrix, ShapeError


class ConfigError(ValueError):
    """Invalid block or model configuration."""


@dataclass
class ProjectionTriple:
    """Query, key and value projections, each ``dim x dim``."""

    w_q: Matrix
    w_k: Matrix
    w_v: Matrix

    def __post_init__(self):
        shapes = {self.w_q.shape, self.w_k.shape, self.w_v.shape}
        if len(shapes) != 1 or self.w_q.rows != self.w_q.cols:
            raise ShapeError(f"projection matrices must be equal and square, got {sorted(shapes)}")

    @property
    def dim(self) -> int:
        return self.w_q.rows

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator) -> "ProjectionTriple":
        bound = 1.0 / math.sqrt(dim)
        return cls(*(nm.uniform(dim, dim, bound, rng) for _ in range(3)))

    @classmethod
    def from_arrays(cls, w_q, w_k, w_v) -> "ProjectionTriple":
        return cls(*(Matrix(w, requires_grad=True) for w in (w_q, w_k, w_v)))

    def parameters(self, prefix: str) -> list[tuple[str, Matrix]]:
        return [(f"{prefix}.w_q", self.w_q), (f"{prefix}.w_k", self.w_k), (f"{prefix}.w_v", self.w_v)]

    def restrict(self, start: int, stop: int) -> "ProjectionTriple":
        """Diagonal sub-block ``[start:stop, start:stop]`` as fresh leaves."""
        return ProjectionTriple.from_arrays(
            *(w.data[start:stop, start:stop] for w in (self.w_q, self.w_k, self.w_v))
        )


def _head_bounds(dim: int, heads: int) -> list[tuple[int, int]]:
    if heads < 1 or dim % heads:
        raise ConfigError(f"feature dim {dim} is not divisible by {heads} heads")
    width = dim // heads
    return [(h * width, (h + 1) * width) for h in range(heads)]


def _head_slice(b: Matrix, lo: int, hi: int, dim: int) -> Matrix:
    return b if (lo, hi) == (0, dim) else nm.slice_cols(b, lo, hi)


def _join_heads(parts: list[Matrix]) -> Matrix:
    return parts[0] if len(parts) == 1 else nm.concat_cols(parts)


class SelfAttentionBlock:
    """Scalar-gated residual: ``z = b + sigmoid(q(b) k(b)^T) v(b)``.

    ``q k^T`` is one number per sample, so the gate rescales the whole value
    vector rather than masking individual features.
    """

    def __init__(self, dim: int, heads: list[ProjectionTriple]):
        self.dim = dim
        self.heads = list(heads)
        self.bounds = _head_bounds(dim, len(self.heads))
        for (lo, hi), p in zip(self.bounds, self.heads):
            if p.dim != hi - lo:
                raise ShapeError(f"head projection is {p.dim}x{p.dim}, expected width {hi - lo}")

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator, heads: int = 1) -> "SelfAttentionBlock":
        width = _head_bounds(dim, heads)[0][1]
        return cls(dim, [ProjectionTriple.init(width, rng) for _ in range(heads)])

    @property
    def proj(self) -> ProjectionTriple:
        if len(self.heads) != 1:
            raise ConfigError("proj is only defined for single-head blocks")
        return self.heads[0]

    def parameters(self, prefix: str = "sab") -> list[tuple[str, Matrix]]:
        out = []
        for h, p in enumerate(self.heads):
            out += p.parameters(f"{prefix}.h{h}")
        return out

    def delta(self, b: Matrix) -> Matrix:
        """The attention term added to ``b`` (everything except the residual)."""
        if b.cols != self.dim:
            raise ShapeError(f"SAB expects {self.dim} features, got {b.cols}")
        parts = []
        for (lo, hi), p in zip(self.bounds, self.heads):
            x = _head_slice(b, lo, hi, self.dim)
            gate = nm.sigmoid(nm.row_dot(x @ p.w_q, x @ p.w_k))
            parts.append(nm.row_scale(x @ p.w_v, gate))
        return _join_heads(parts)

    def __call__(self, b: Matrix) -> Matrix:
        return nm.add(b, self.delta(b))


class CrossAttentionBlock:
    """Each branch attends to every other branch of the bank.

    For branch i the logits ``q_i(b_i) k_j(b_j)^T`` over ``j != i`` become
    weights through a sigmoid when there are two branches and a softmax over
    the ``N - 1`` others otherwise; the output is
    ``b_i + sum_j w_ij v_j(b_j)``.
    """

    def __init__(self, dim: int, branches: list[list[ProjectionTriple]]):
        if len(branches) < 2:
            raise ConfigError(f"cross attention needs at least 2 branches, got {len(branches)}")
        self.dim = dim
        self.branches = [list(hs) for hs in branches]
        n_heads = {len(hs) for hs in self.branches}
        if len(n_heads) != 1:
            raise ConfigError("all branches must have the same number of heads")
        self.bounds = _head_bounds(dim, n_heads.pop())
        for hs in self.branches:
            for (lo, hi), p in zip(self.bounds, hs):
                if p.dim != hi - lo:
                    raise ShapeError(f"head projection is {p.dim}x{p.dim}, expected width {hi - lo}")

    @classmethod
    def init(
        cls, dim: int, n_branches: int, rng: np.random.Generator, heads: int = 1
    ) -> "CrossAttentionBlock":
        bounds = _head_bounds(dim, heads)
        width = bounds[0][1]
        return cls(
            dim, [[ProjectionTriple.init(width, rng) for _ in range(heads)] for _ in range(n_branches)]
        )

    @property
    def branch_count(self) -> int:
        return len(self.branches)

    @property
    def heads(self) -> int:
        return len(self.bounds)

    def parameters(self, prefix: str = "cab") -> list[tuple[str, Matrix]]:
        out = []
        for i, hs in enumerate(self.branches):
            for h, p in enumerate(hs):
                out += p.parameters(f"{prefix}.b{i}.h{h}")
        return out

    def weights(self, bank: list[Matrix], head: int = 0) -> list[list[Matrix]]:
        """Attention weights ``w[i][m]`` (B x 1) for the m-th other branch of i."""
        self._check(bank)
        lo, hi = self.bounds[head]
        xs = [_head_slice(b, lo, hi, self.dim) for b in bank]
        return self._weights(xs, head)

    def _weights(self, xs: list[Matrix], head: int) -> list[list[Matrix]]:
        n = len(xs)
        qs = [xs[i] @ self.branches[i][head].w_q for i in range(n)]
        ks = [xs[j] @ self.branches[j][head].w_k for j in range(n)]
        out = []
        for i in range(n):
            logits = [nm.row_dot(qs[i], ks[j]) for j in range(n) if j != i]
            if n == 2:
                out.append([nm.sigmoid(logits[0])])
            else:
                w = nm.softmax_row(nm.concat_cols(logits))
                out.append([nm.slice_cols(w, m, m + 1) for m in range(n - 1)])
        return out

    def _check(self, bank: list[Matrix]) -> None:
        if len(bank) != self.branch_count:
            raise ConfigError(f"CAB has {self.branch_count} branches but the bank has {len(bank)} vectors")
        for b in bank:
            if b.cols != self.dim:
                raise ShapeError(f"CAB expects {self.dim} features, got {b.cols}")

    def deltas(self, bank: list[Matrix]) -> list[Matrix]:
        """Per-branch attention terms, without the residual."""
        self._check(bank)
        n = len(bank)
        per_head: list[list[Matrix]] = [[] for _ in range(n)]
        for head, (lo, hi) in enumerate(self.bounds):
            xs = [_head_slice(b, lo, hi, self.dim) for b in bank]
            vs = [xs[j] @ self.branches[j][head].w_v for j in range(n)]
            ws = self._weights(xs, head)
            for i in range(n):
                others = [j for j in range(n) if j != i]
                terms = [nm.row_scale(vs[j], ws[i][m]) for m, j in enumerate(others)]
                per_head[i].append(nm.add_all(terms))
        return [_join_heads(parts) for parts in per_head]

    def __call__(self, bank: list[Matrix]) -> list[Matrix]:
        return [nm.add(b, d) for b, d in zip(bank, self.deltas(bank))]


def sab_forward(block: SelfAttentionBlock, b: Matrix) -> Matrix:
    return block(b)


def cab_forward(block: CrossAttentionBlock, bank: list[Matrix]) -> list[Matrix]:
    return block(bank)


def mha_wrap(block, heads: int):
    """Re-split a single-head block into ``heads`` heads.

    Head k takes the diagonal ``(d/h) x (d/h)`` sub-block of each of the
    block's projections as its own projection, so ``heads=1`` returns a block
    computing exactly what ``block`` computes.
    """
    if isinstance(block, SelfAttentionBlock):
        base = block.proj
        bounds = _head_bounds(block.dim, heads)
        return SelfAttentionBlock(block.dim, [base.restrict(lo, hi) for lo, hi in bounds])
    if isinstance(block, CrossAttentionBlock):
        if block.heads != 1:
            raise ConfigError("mha_wrap expects a single-head block")
        bounds = _head_bounds(block.dim, heads)
        return CrossAttentionBlock(
            block.dim, [[hs[0].restrict(lo, hi) for lo, hi in bounds] for hs in block.branches]
        )
    raise TypeError(f"cannot wrap {type(block).__name__}")
