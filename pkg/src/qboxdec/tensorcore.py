"""Dense complex matrices over labelled multipartite systems.

Every object in the toolkit (states, Choi matrices, effects, supermaps) is a
:class:`ComplexMatrix` whose rows and columns carry an ordered list of wire
labels with dimensions.  Reshuffles of tensor factors are always explicit and
go through :func:`permute_systems`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class WireSystem:
    """Ordered tensor factors, each with a dimension and a unique label."""

    dims: tuple[int, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "labels", tuple(str(l) for l in self.labels))
        if len(self.dims) != len(self.labels):
            raise ValueError("dims and labels must have the same length")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"dimensions must be positive, got {self.dims}")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"duplicate wire labels {self.labels}")

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64))

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown wire label {label!r}") from None

    def dim_of(self, label: str) -> int:
        return self.dims[self.index(label)]

    def select(self, labels: Iterable[str]) -> "WireSystem":
        labels = list(labels)
        return WireSystem(tuple(self.dim_of(l) for l in labels), tuple(labels))

    def without(self, labels: Iterable[str]) -> "WireSystem":
        drop = set(labels)
        return self.select(l for l in self.labels if l not in drop)

    def relabel(self, mapping: Mapping[str, str]) -> "WireSystem":
        return WireSystem(self.dims, tuple(mapping.get(l, l) for l in self.labels))

    def __add__(self, other: "WireSystem") -> "WireSystem":
        return WireSystem(self.dims + other.dims, self.labels + other.labels)

    def __len__(self):
        return len(self.dims)


TRIVIAL = WireSystem((), ())


def wires(dims: Sequence[int], prefix: str) -> WireSystem:
    """Wires ``prefix0, prefix1, ...`` with the given dimensions."""
    return WireSystem(tuple(dims), tuple(f"{prefix}{i}" for i in range(len(dims))))


@dataclass(frozen=True)
class ComplexMatrix:
    """A dense complex matrix whose row side is ``system`` and column side ``cosystem``.

    ``cosystem`` defaults to ``system`` (square operators on one space).
    """

    data: np.ndarray
    system: WireSystem
    cosystem: Optional[WireSystem] = None

    def __post_init__(self):
        if self.cosystem is None:
            object.__setattr__(self, "cosystem", self.system)
        data = np.array(self.data, dtype=np.complex128)
        shape = (self.system.dim, self.cosystem.dim)
        if data.size != shape[0] * shape[1]:
            raise ValueError(f"expected {shape[0]}x{shape[1]} entries, got {data.shape}")
        data = data.reshape(shape)
        if not np.all(np.isfinite(data)):
            raise ValueError("matrix has non-finite entries")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def labels(self) -> tuple[str, ...]:
        return self.system.labels

    @property
    def dims(self) -> tuple[int, ...]:
        return self.system.dims

    @property
    def is_square(self) -> bool:
        return self.system == self.cosystem

    def tensor(self) -> np.ndarray:
        """View as a tensor with one axis per row wire followed by one per column wire."""
        return self.data.reshape(self.system.dims + self.cosystem.dims)

    def trace(self) -> complex:
        _require_square(self)
        return complex(np.trace(self.data))

    def dagger(self) -> "ComplexMatrix":
        return ComplexMatrix(self.data.conj().T, self.cosystem, self.system)

    def relabel(self, mapping: Mapping[str, str]) -> "ComplexMatrix":
        cosys = None if self.is_square else self.cosystem.relabel(mapping)
        return ComplexMatrix(self.data, self.system.relabel(mapping), cosys)

    def scaled(self, factor: complex) -> "ComplexMatrix":
        return ComplexMatrix(factor * self.data, self.system, self.cosystem)

    def __add__(self, other: "ComplexMatrix") -> "ComplexMatrix":
        _require_same_shape(self, other)
        return ComplexMatrix(self.data + other.data, self.system, self.cosystem)

    def __sub__(self, other: "ComplexMatrix") -> "ComplexMatrix":
        _require_same_shape(self, other)
        return ComplexMatrix(self.data - other.data, self.system, self.cosystem)

    def to_json(self) -> dict:
        out = {
            "dims": list(self.system.dims),
            "labels": list(self.system.labels),
            "entries": [[float(z.real), float(z.imag)] for z in self.data.ravel()],
        }
        if not self.is_square:
            out["codims"] = list(self.cosystem.dims)
            out["colabels"] = list(self.cosystem.labels)
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "ComplexMatrix":
        system = WireSystem(tuple(obj["dims"]), tuple(obj["labels"]))
        cosystem = None
        if "codims" in obj:
            cosystem = WireSystem(tuple(obj["codims"]), tuple(obj["colabels"]))
        entries = np.asarray(obj["entries"], dtype=float)
        return cls(entries[:, 0] + 1j * entries[:, 1], system, cosystem)


def _require_square(m: ComplexMatrix):
    if not m.is_square:
        raise ValueError("operation requires a square matrix on a single system")


def _require_same_shape(a: ComplexMatrix, b: ComplexMatrix):
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch {a.data.shape} vs {b.data.shape}")


def identity(system: WireSystem) -> ComplexMatrix:
    return ComplexMatrix(np.eye(system.dim), system)


def tensor_product(a: ComplexMatrix, b: ComplexMatrix) -> ComplexMatrix:
    """Kronecker product; wire labels are concatenated and must not collide."""
    clash = set(a.system.labels) & set(b.system.labels)
    clash |= set(a.cosystem.labels) & set(b.cosystem.labels)
    if clash:
        raise ValueError(f"label collision in tensor product: {sorted(clash)}")
    cosys = None
    if not (a.is_square and b.is_square):
        cosys = a.cosystem + b.cosystem
    return ComplexMatrix(np.kron(a.data, b.data), a.system + b.system, cosys)


def partial_trace(m: ComplexMatrix, over: Iterable[str]) -> ComplexMatrix:
    """Trace out the named subsystems; remaining wires keep their order."""
    _require_square(m)
    over = set(over)
    for label in over:
        m.system.index(label)
    n = len(m.system)
    keep = [i for i, l in enumerate(m.system.labels) if l not in over]
    row = list(range(n))
    col = [i + n if i in keep else i for i in range(n)]
    out_idx = keep + [i + n for i in keep]
    t = np.einsum(m.tensor(), row + col, out_idx)
    kept = WireSystem(tuple(m.system.dims[i] for i in keep), tuple(m.system.labels[i] for i in keep))
    return ComplexMatrix(np.asarray(t).reshape(kept.dim, kept.dim), kept)


def permute_systems(m: ComplexMatrix, order: Sequence[str]) -> ComplexMatrix:
    """Reorder the tensor factors of a square matrix to the given label order."""
    _require_square(m)
    order = list(order)
    if sorted(order) != sorted(m.system.labels):
        raise ValueError(f"{order} is not a permutation of {list(m.system.labels)}")
    perm = [m.system.index(l) for l in order]
    n = len(perm)
    t = m.tensor().transpose(perm + [p + n for p in perm])
    target = m.system.select(order)
    return ComplexMatrix(t.reshape(target.dim, target.dim), target)


def is_hermitian(m: ComplexMatrix, tol: float = DEFAULT_TOL) -> bool:
    _require_square(m)
    return bool(np.max(np.abs(m.data - m.data.conj().T), initial=0.0) <= tol)


def is_psd(m: ComplexMatrix, tol: float = DEFAULT_TOL) -> bool:
    """Hermitian within ``tol`` and smallest eigenvalue at least ``-tol``."""
    if not is_hermitian(m, tol):
        return False
    h = (m.data + m.data.conj().T) / 2
    return bool(np.linalg.eigvalsh(h)[0] >= -tol)


def frobenius_distance(a: ComplexMatrix, b: ComplexMatrix) -> float:
    _require_same_shape(a, b)
    return float(np.linalg.norm(a.data - b.data))


def rng_for(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def derive_seeds(seed: int, n: int, stream: int = 0) -> list[int]:
    """``n`` independent child seeds; ``stream`` separates unrelated uses of one master seed."""
    ss = np.random.SeedSequence([int(seed), int(stream)])
    return [int(x) for x in ss.generate_state(n, dtype=np.uint32)] if n > 0 else []


def ginibre(d: int, rng: np.random.Generator, cols: Optional[int] = None) -> np.ndarray:
    cols = d if cols is None else cols
    return (rng.standard_normal((d, cols)) + 1j * rng.standard_normal((d, cols))) / np.sqrt(2)


def haar_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary by QR of a Ginibre matrix with the R-diagonal phases removed."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    q, r = np.linalg.qr(ginibre(d, rng))
    phases = np.diagonal(r) / np.abs(np.diagonal(r))
    return q * phases


def random_unitary(d: int, seed: int, label: str = "x0") -> ComplexMatrix:
    return ComplexMatrix(haar_unitary(d, rng_for(seed)), WireSystem((d,), (label,)))


def density_from_rng(d: int, rng: np.random.Generator) -> np.ndarray:
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    g = ginibre(d, rng)
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_density(d: int, seed: int, label: str = "x0") -> ComplexMatrix:
    return ComplexMatrix(density_from_rng(d, rng_for(seed)), WireSystem((d,), (label,)))


def link(a: ComplexMatrix, b: ComplexMatrix, common: Iterable[str]) -> ComplexMatrix:
    """Choi-level composition: partial transpose of ``a`` on ``common``, multiply, trace ``common``.

    Wires of ``a`` and ``b`` outside ``common`` must be distinct; the result
    carries ``a``'s remaining wires followed by ``b``'s.
    """
    _require_square(a)
    _require_square(b)
    common = list(common)
    for label in common:
        if a.system.dim_of(label) != b.system.dim_of(label):
            raise ValueError(f"dimension mismatch on common wire {label!r}")
    shared = set(a.system.labels) & set(b.system.labels)
    if shared - set(common):
        raise ValueError(f"wires {sorted(shared - set(common))} appear on both sides but are not linked")
    rest_a = [l for l in a.system.labels if l not in common]
    rest_b = [l for l in b.system.labels if l not in common]
    da = a.system.select(rest_a).dim
    db = b.system.select(rest_b).dim
    dc = a.system.select(common).dim
    # a[x c''; x' c] b[c'' y; c y'] summed over c, c''
    ta = permute_systems(a, rest_a + common).data.reshape(da, dc, da, dc)
    tb = permute_systems(b, common + rest_b).data.reshape(dc, db, dc, db)
    ma = ta.transpose(0, 2, 1, 3).reshape(da * da, dc * dc)
    mb = tb.transpose(0, 2, 1, 3).reshape(dc * dc, db * db)
    t = (ma @ mb).reshape(da, da, db, db).transpose(0, 2, 1, 3)
    system = a.system.select(rest_a) + b.system.select(rest_b)
    return ComplexMatrix(np.asarray(t).reshape(system.dim, system.dim), system)
