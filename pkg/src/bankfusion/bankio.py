"""Representation-bank datasets and the package's text file formats.

Bank files are UTF-8 CSV::

    #bank N=2 d=3 C=2 split=train
    id,label,p1f0,p1f1,p1f2,p2f0,p2f1,p2f2
    s0,1,0.25,-1.5,...

The column-name line is optional on input.  Floats are written with
``repr``, which is the shortest string that round-trips exactly.

Checkpoints and weight files are plain text: a ``#checkpoint`` header line
with ``key=value`` fields, then for each parameter a ``param <name> <rows>
<cols>`` line followed by one comma-separated line per row.

Training configs are flat ``key = value`` files; ``#`` starts a comment.
"""

from __future__ import annotations

import io
import math
import os
import re
from dataclasses import dataclass, field, fields
from typing import TYPE_CHECKING

import numpy as np

from .fusion import Architecture, FusionModel

if TYPE_CHECKING:
    from .training import TrainConfig


class BankFormatError(ValueError):
    """A bank, checkpoint or config file could not be parsed or validated."""


@dataclass
class FeatureBankDataset:
    """Samples of N feature vectors of length d plus an integer label."""

    features: np.ndarray  # (n, N, d) float64
    labels: np.ndarray  # (n,) int64
    classes: int
    ids: list[str] = field(default_factory=list)
    split: str | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.features.ndim != 3:
            raise BankFormatError(f"features must have shape (n, N, d), got {self.features.shape}")
        n = len(self.features)
        if not self.ids:
            self.ids = [f"s{i}" for i in range(n)]
        if len(self.labels) != n or len(self.ids) != n:
            raise BankFormatError(f"{n} feature rows but {len(self.labels)} labels and {len(self.ids)} ids")
        if self.classes < 1:
            raise BankFormatError(f"class count must be positive, got {self.classes}")
        for sid, y in zip(self.ids, self.labels):
            if not 0 <= y < self.classes:
                raise BankFormatError(f"sample {sid}: label {y} outside [0, {self.classes})")
        bad = ~np.isfinite(self.features).all(axis=(1, 2))
        if bad.any():
            raise BankFormatError(f"sample {self.ids[int(np.argmax(bad))]}: non-finite feature")
        if self.split not in (None, "train", "test"):
            raise BankFormatError(f"split must be train or test, got {self.split!r}")

    @property
    def n_branches(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.features.shape[2]

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> "FeatureBankDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return FeatureBankDataset(
            self.features[idx], self.labels[idx], self.classes, [self.ids[i] for i in idx], self.split
        )

    def equals(self, other: "FeatureBankDataset") -> bool:
        return (
            self.classes == other.classes
            and self.split == other.split
            and self.ids == other.ids
            and self.features.shape == other.features.shape
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.features, other.features)
        )


_HEADER_TOKEN = re.compile(r"(\w+)=([^\s,]+)")


def _parse_header(line: str, tag: str) -> dict[str, str]:
    body = line.strip()
    if body.startswith("#"):
        body = body[1:].strip()
        if body.startswith(tag):
            body = body[len(tag):]
    pairs = dict(_HEADER_TOKEN.findall(body))
    if not pairs:
        raise BankFormatError(f"line 1: expected a '#{tag} key=value ...' header, got {line.strip()!r}")
    return pairs


def _header_int(header: dict[str, str], key: str) -> int:
    try:
        value = int(header[key])
    except KeyError:
        raise BankFormatError(f"line 1: header is missing {key}=") from None
    except ValueError:
        raise BankFormatError(f"line 1: {key}={header[key]!r} is not an integer") from None
    if value < 1:
        raise BankFormatError(f"line 1: {key} must be positive, got {value}")
    return value


def format_bank(ds: FeatureBankDataset) -> str:
    n_b, d = ds.n_branches, ds.dim
    out = io.StringIO()
    header = f"#bank N={n_b} d={d} C={ds.classes}"
    if ds.split:
        header += f" split={ds.split}"
    out.write(header + "\n")
    cols = [f"p{i + 1}f{j}" for i in range(n_b) for j in range(d)]
    out.write(",".join(["id", "label"] + cols) + "\n")
    for sid, y, row in zip(ds.ids, ds.labels, ds.features.reshape(len(ds), n_b * d)):
        out.write(",".join([sid, str(int(y))] + [repr(float(v)) for v in row]) + "\n")
    return out.getvalue()


def save_bank(ds: FeatureBankDataset, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_bank(ds))


def parse_bank(text: str) -> FeatureBankDataset:
    lines = text.splitlines()
    if not lines:
        raise BankFormatError("line 1: empty bank file")
    header = _parse_header(lines[0], "bank")
    n_b, d, c = (_header_int(header, k) for k in ("N", "d", "C"))
    split = header.get("split")
    width = 2 + n_b * d
    ids, labels, rows = [], [], []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        cells = line.split(",")
        if cells[0] == "id" and lineno == 2:
            continue
        sid = cells[0]
        if len(cells) != width:
            raise BankFormatError(
                f"line {lineno}: row {sid!r} has {len(cells) - 2} features, expected {n_b * d}"
            )
        if sid in seen:
            raise BankFormatError(f"line {lineno}: duplicate sample id {sid!r}")
        seen.add(sid)
        try:
            labels.append(int(cells[1]))
            rows.append([float(v) for v in cells[2:]])
        except ValueError as exc:
            raise BankFormatError(f"line {lineno}: row {sid!r}: {exc}") from None
        ids.append(sid)
    features = np.array(rows, dtype=np.float64).reshape(len(rows), n_b, d)
    return FeatureBankDataset(features, np.array(labels, dtype=np.int64), c, ids, split)


def load_bank(path: str | os.PathLike) -> FeatureBankDataset:
    with open(path, encoding="utf-8") as fh:
        return parse_bank(fh.read())


# ----------------------------------------------------------------------------
# synthetic banks


SYNTHETIC_KINDS = ("complementary-xor", "redundant", "separable")


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Parameters of a generated bank.

    ``complementary-xor``
        Latent fair bits ``u_1..u_N``; the label is their parity and bank i
        is an affine embedding of ``u_i`` alone plus Gaussian noise.
        No single bank carries any label information.
    ``redundant``
        Label ``y`` uniform over C classes; every bank embeds ``y`` with the
        same class centroids (independent noise per bank).
    ``separable``
        Bank 1 holds class centroid plus noise; the other banks are pure
        standard-normal noise.
    """

    kind: str = "complementary-xor"
    dim: int = 8
    n_branches: int = 2
    classes: int = 2
    train_samples: int = 2000
    test_samples: int = 1000
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}; choose from {SYNTHETIC_KINDS}")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if self.dim < 1 or self.n_branches < 1 or self.train_samples < 0 or self.test_samples < 0:
            raise ValueError("dim and n_branches must be positive, sample counts non-negative")
        if self.kind == "complementary-xor" and (self.classes != 2 or self.n_branches < 2):
            raise ValueError("complementary-xor needs classes=2 and at least 2 branches")
        if self.kind != "complementary-xor" and self.classes < 2:
            raise ValueError("need at least 2 classes")


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass
class XorEmbedding:
    """Bank i of sample with bit u_i is ``offsets[i] + (2 u_i - 1) * directions[i]``."""

    offsets: np.ndarray  # (N, d)
    directions: np.ndarray  # (N, d)

    def encode(self, bits: np.ndarray) -> np.ndarray:
        signs = 2.0 * np.asarray(bits, dtype=np.float64) - 1.0
        return self.offsets[None] + signs[:, :, None] * self.directions[None]


def xor_embedding(spec: SyntheticTaskSpec) -> XorEmbedding:
    rng = np.random.default_rng([spec.seed, 0])
    return XorEmbedding(_unit_rows(rng, spec.n_branches, spec.dim), _unit_rows(rng, spec.n_branches, spec.dim))


def gen_synthetic(spec: SyntheticTaskSpec) -> tuple[FeatureBankDataset, FeatureBankDataset]:
    """Generate a (train, test) pair; identical spec gives identical data."""
    n_b, d = spec.n_branches, spec.dim
    rng = np.random.default_rng([spec.seed, 1])
    centroids = 2.0 * _unit_rows(np.random.default_rng([spec.seed, 0]), spec.classes, d)
    xor = xor_embedding(spec) if spec.kind == "complementary-xor" else None

    def draw(n: int, split: str) -> FeatureBankDataset:
        if spec.kind == "complementary-xor":
            bits = rng.integers(0, 2, size=(n, n_b))
            labels = bits.sum(axis=1) % 2
            feats = xor.encode(bits)
        elif spec.kind == "redundant":
            labels = rng.integers(0, spec.classes, size=n)
            feats = np.repeat(centroids[labels][:, None, :], n_b, axis=1)
        else:
            labels = rng.integers(0, spec.classes, size=n)
            feats = rng.normal(size=(n, n_b, d))
            feats[:, 0, :] = centroids[labels]
        noise = rng.normal(size=(n, n_b, d))
        if spec.kind == "separable":
            noise[:, 1:, :] = 0.0
        feats = feats + spec.noise * noise
        ids = [f"{split}{i}" for i in range(n)]
        return FeatureBankDataset(feats, labels, spec.classes, ids, split)

    return draw(spec.train_samples, "train"), draw(spec.test_samples, "test")


# ----------------------------------------------------------------------------
# weights and checkpoints


def format_params(params: list[tuple[str, np.ndarray]]) -> str:
    out = io.StringIO()
    for name, arr in params:
        arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
        out.write(f"param {name} {arr.shape[0]} {arr.shape[1]}\n")
        for row in arr:
            out.write(",".join(repr(float(v)) for v in row) + "\n")
    return out.getvalue()


def parse_params(lines: list[str], first_lineno: int = 1) -> list[tuple[str, np.ndarray]]:
    params = []
    i = 0
    while i < len(lines):
        lineno = first_lineno + i
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4 or parts[0] != "param":
            raise BankFormatError(f"line {lineno}: expected 'param <name> <rows> <cols>', got {line!r}")
        try:
            rows, cols = int(parts[2]), int(parts[3])
        except ValueError:
            raise BankFormatError(f"line {lineno}: bad shape in {line!r}") from None
        if i + rows > len(lines):
            raise BankFormatError(f"line {lineno}: {parts[1]} truncated")
        data = []
        for r in range(rows):
            cells = lines[i + r].strip().split(",")
            if len(cells) != cols:
                raise BankFormatError(f"line {lineno + r + 1}: {parts[1]} row has {len(cells)} values, expected {cols}")
            try:
                data.append([float(c) for c in cells])
            except ValueError as exc:
                raise BankFormatError(f"line {lineno + r + 1}: {exc}") from None
        i += rows
        params.append((parts[1], np.array(data, dtype=np.float64).reshape(rows, cols)))
    return params


def format_checkpoint(model: FusionModel) -> str:
    header = (
        f"#checkpoint kind={model.arch.name} N={model.n_branches} d={model.dim} "
        f"classes={model.classes} heads={model.heads} seed={model.seed}\n"
    )
    params = [(name, p.data) for name, p in model.parameters()]
    if model.norm_mean is not None:
        params += [("norm.mean", model.norm_mean), ("norm.std", model.norm_std)]
    return header + format_params(params)


def save_checkpoint(model: FusionModel, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_checkpoint(model))


def parse_checkpoint(text: str) -> FusionModel:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#checkpoint"):
        raise BankFormatError("line 1: expected a '#checkpoint' header")
    header = _parse_header(lines[0], "checkpoint")
    try:
        arch = Architecture.parse(header["kind"])
        seed = int(header.get("seed", "0"))
    except (KeyError, ValueError) as exc:
        raise BankFormatError(f"line 1: {exc}") from None
    model = FusionModel(
        arch,
        _header_int(header, "N"),
        _header_int(header, "d"),
        _header_int(header, "classes"),
        heads=_header_int(header, "heads"),
        seed=seed,
    )
    params = dict(parse_params(lines[1:], first_lineno=2))
    mean, std = params.pop("norm.mean", None), params.pop("norm.std", None)
    try:
        model.load_state(params)
    except ValueError as exc:
        raise BankFormatError(str(exc)) from None
    model.set_normalization(mean, std)
    return model


def load_checkpoint(path: str | os.PathLike) -> FusionModel:
    with open(path, encoding="utf-8") as fh:
        return parse_checkpoint(fh.read())


# ----------------------------------------------------------------------------
# training configs


def parse_config(text: str) -> "TrainConfig":
    from .training import TrainConfig

    known = {f.name: f for f in fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BankFormatError(f"config line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise BankFormatError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(key, value)
        except ValueError:
            raise BankFormatError(f"config line {lineno}: bad value for {key}: {value!r}") from None
    try:
        return TrainConfig(**values)
    except ValueError as exc:
        raise BankFormatError(f"config: {exc}") from None


def _convert(key: str, value: str):
    if key in ("batch_size", "epochs", "seed"):
        return int(value)
    if key == "lr_drop_epochs":
        return tuple(int(v) for v in value.replace(",", " ").split())
    if key == "standardize":
        low = value.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(value)
        return low in ("true", "1", "yes")
    out = float(value)
    if not math.isfinite(out):
        raise ValueError(value)
    return out


def format_config(config: "TrainConfig") -> str:
    lines = []
    for f in fields(config):
        v = getattr(config, f.name)
        if isinstance(v, tuple):
            v = ", ".join(str(e) for e in v)
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_config(path: str | os.PathLike) -> "TrainConfig":
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(config: "TrainConfig", path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_config(config))
