"""Fusion architectures: attention blocks over a bank, merged, then an FC head.

Every multi-branch architecture concatenates its branch outputs in bank order
before the classifier; the ``ADD`` baseline sums them instead.  ``SCA`` runs
self- and cross-attention side by side on the raw bank and adds both
attention terms onto a single residual copy of each input.
"""

from __future__ import annotations

import enum
import math
import re
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .attention import ConfigError, CrossAttentionBlock, SelfAttentionBlock, mha_wrap
from .numeric import Matrix, ShapeError


class Kind(enum.Enum):
    SA_ONLY = "SA_ONLY"
    CA_ONLY = "CA_ONLY"
    SA2CA = "SA2CA"
    CA2SA = "CA2SA"
    SCA = "SCA"
    ADD = "ADD"
    CONCAT = "CONCAT"
    SINGLE = "SINGLE"
    SINGLE_SA = "SINGLE_SA"


ATTENTION_KINDS = (Kind.SA_ONLY, Kind.CA_ONLY, Kind.SA2CA, Kind.CA2SA, Kind.SCA)
BASELINE_KINDS = (Kind.ADD, Kind.CONCAT)
_USES_SAB = {Kind.SA_ONLY, Kind.SA2CA, Kind.CA2SA, Kind.SCA, Kind.SINGLE_SA}
_USES_CAB = {Kind.CA_ONLY, Kind.SA2CA, Kind.CA2SA, Kind.SCA}
_ALIASES = {"ADD_BASELINE": "ADD", "CONCAT_BASELINE": "CONCAT"}


@dataclass(frozen=True)
class Architecture:
    kind: Kind
    index: int | None = None

    def __post_init__(self):
        single = self.kind in (Kind.SINGLE, Kind.SINGLE_SA)
        if single and (self.index is None or self.index < 0):
            raise ConfigError(f"{self.kind.value} needs a non-negative branch index")
        if not single and self.index is not None:
            raise ConfigError(f"{self.kind.value} takes no branch index")

    @property
    def name(self) -> str:
        return self.kind.value if self.index is None else f"{self.kind.value}{self.index}"

    @property
    def is_single(self) -> bool:
        return self.index is not None

    @classmethod
    def parse(cls, text: str) -> "Architecture":
        """Accepts e.g. ``SA2CA``, ``concat``, ``ADD_BASELINE``, ``SINGLE1``, ``SINGLE_SA(0)``."""
        t = text.strip().upper()
        t = _ALIASES.get(t, t)
        m = re.fullmatch(r"(SINGLE_SA|SINGLE)[_(]?(\d+)\)?", t)
        if m:
            return cls(Kind(m.group(1)), int(m.group(2)))
        try:
            return cls(Kind(t))
        except ValueError:
            raise ConfigError(f"unknown architecture {text!r}") from None

    def __str__(self) -> str:
        return self.name


def ablation_architectures(n_branches: int) -> list[Architecture]:
    """All ablation variants: five attention kinds, two baselines, and per-branch singles."""
    archs = [Architecture(k) for k in ATTENTION_KINDS + BASELINE_KINDS]
    archs += [Architecture(Kind.SINGLE, i) for i in range(n_branches)]
    archs += [Architecture(Kind.SINGLE_SA, i) for i in range(n_branches)]
    return archs


def aggregate(kind: Kind, outputs: list[Matrix]) -> Matrix:
    if kind is Kind.ADD:
        return nm.add_all(outputs)
    return outputs[0] if len(outputs) == 1 else nm.concat_cols(outputs)


class FusionModel:
    """Bank -> attention blocks -> aggregation -> fully connected logits.

    Parameters are created from ``np.random.default_rng(seed)`` in a fixed
    order (self-attention blocks by branch, cross-attention block, head), so
    two models with the same arguments are identical.  Multi-head blocks are
    derived from the single-head initialisation with :func:`mha_wrap`.
    """

    def __init__(
        self,
        arch: Architecture | str,
        n_branches: int,
        dim: int,
        classes: int,
        heads: int = 1,
        seed: int = 0,
    ):
        if isinstance(arch, str):
            arch = Architecture.parse(arch)
        if n_branches < 1 or dim < 1 or classes < 2:
            raise ConfigError(f"need N >= 1, d >= 1, classes >= 2; got {n_branches}, {dim}, {classes}")
        if arch.is_single and arch.index >= n_branches:
            raise ConfigError(f"{arch.name} needs at least {arch.index + 1} branches, got {n_branches}")
        if arch.kind in _USES_CAB and n_branches < 2:
            raise ConfigError(f"{arch.name} needs at least 2 branches")
        if dim % heads:
            raise ConfigError(f"feature dim {dim} is not divisible by {heads} heads")
        self.arch = arch
        self.n_branches = n_branches
        self.dim = dim
        self.classes = classes
        self.heads = heads
        self.seed = seed
        self.norm_mean: np.ndarray | None = None
        self.norm_std: np.ndarray | None = None

        rng = np.random.default_rng(seed)
        kind = arch.kind
        self.sab: dict[int, SelfAttentionBlock] = {}
        if kind in _USES_SAB:
            branches = [arch.index] if arch.is_single else range(n_branches)
            for i in branches:
                block = SelfAttentionBlock.init(dim, rng)
                self.sab[i] = mha_wrap(block, heads) if heads > 1 else block
        self.cab: CrossAttentionBlock | None = None
        if kind in _USES_CAB:
            block = CrossAttentionBlock.init(dim, n_branches, rng)
            self.cab = mha_wrap(block, heads) if heads > 1 else block

        in_dim = dim if kind is Kind.ADD or arch.is_single else n_branches * dim
        self.head_w = nm.uniform(in_dim, classes, 1.0 / math.sqrt(in_dim), rng)
        self.head_b = nm.zeros(1, classes, requires_grad=True)

    @property
    def in_dim(self) -> int:
        return self.head_w.rows

    def parameters(self) -> list[tuple[str, Matrix]]:
        out = []
        for i in sorted(self.sab):
            out += self.sab[i].parameters(f"sab{i}")
        if self.cab is not None:
            out += self.cab.parameters("cab")
        out += [("head.w", self.head_w), ("head.b", self.head_b)]
        return out

    def n_parameters(self) -> int:
        return sum(p.data.size for _, p in self.parameters())

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data.copy()) for name, p in self.parameters())

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        names = [n for n, _ in params]
        if list(state) != names:
            raise ConfigError(f"parameter names differ: expected {names}, got {list(state)}")
        for name, p in params:
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: expected {p.shape}, got {arr.shape}")
            p.data[...] = arr

    def set_normalization(self, mean: np.ndarray | None, std: np.ndarray | None) -> None:
        """Per-feature standardisation applied to raw bank features, shape (N, d)."""
        if mean is None:
            self.norm_mean = self.norm_std = None
            return
        mean = np.asarray(mean, dtype=np.float64).reshape(self.n_branches, self.dim)
        std = np.asarray(std, dtype=np.float64).reshape(self.n_branches, self.dim)
        if np.any(std <= 0):
            raise ConfigError("standard deviations must be positive")
        self.norm_mean, self.norm_std = mean, std

    def bank(self, features: np.ndarray) -> list[Matrix]:
        """Split a (B, N, d) feature array into N input matrices of shape B x d."""
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 2:
            features = features[None]
        if features.shape[1:] != (self.n_branches, self.dim):
            raise ShapeError(
                f"expected features of shape (B, {self.n_branches}, {self.dim}), got {features.shape}"
            )
        if self.norm_mean is not None:
            features = (features - self.norm_mean) / self.norm_std
        return [Matrix(features[:, i, :]) for i in range(self.n_branches)]

    def branch_outputs(self, bank: list[Matrix]) -> list[Matrix]:
        kind, idx = self.arch.kind, self.arch.index
        if self.arch.is_single:
            if len(bank) <= idx:
                raise ConfigError(f"{self.arch.name} needs branch {idx}, bank has {len(bank)}")
        elif len(bank) != self.n_branches:
            raise ConfigError(f"model expects {self.n_branches} bank vectors, got {len(bank)}")

        if kind is Kind.SINGLE:
            return [bank[idx]]
        if kind is Kind.SINGLE_SA:
            return [self.sab[idx](bank[idx])]
        if kind in BASELINE_KINDS:
            return list(bank)
        if kind is Kind.SA_ONLY:
            return [self.sab[i](b) for i, b in enumerate(bank)]
        if kind is Kind.CA_ONLY:
            return self.cab(bank)
        if kind is Kind.SA2CA:
            return self.cab([self.sab[i](b) for i, b in enumerate(bank)])
        if kind is Kind.CA2SA:
            return [self.sab[i](z) for i, z in enumerate(self.cab(bank))]
        if kind is Kind.SCA:
            cross = self.cab.deltas(bank)
            return [nm.add_all([b, self.sab[i].delta(b), cross[i]]) for i, b in enumerate(bank)]
        raise AssertionError(kind)

    def forward(self, bank: list[Matrix]) -> Matrix:
        z = aggregate(self.arch.kind, self.branch_outputs(bank))
        return nm.add(z @ self.head_w, self.head_b)

    __call__ = forward

    def logits(self, features: np.ndarray, chunk: int = 4096) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        out = [self.forward(self.bank(features[s:s + chunk])).data for s in range(0, len(features), chunk)]
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.classes))

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(features), axis=1)


def forward(model: FusionModel, bank: list[Matrix]) -> Matrix:
    return model.forward(bank)


def zero_value_projections(model: FusionModel) -> None:
    """Set every W_v in the model to zero, leaving only the residual paths."""
    for name, p in model.parameters():
        if name.endswith(".w_v"):
            p.data[...] = 0.0


def sa2ca_parameter_count(n_branches: int, dim: int, classes: int) -> int:
    return n_branches * 3 * dim * dim * 2 + n_branches * dim * classes + classes
