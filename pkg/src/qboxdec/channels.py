"""Completely positive maps in Choi form.

Convention: the Choi matrix of ``g`` is ``sum_ij |i><j| (x) g(|i><j|)`` with the
input factor first and no normalisation, so a CPTP map has trace ``d_in`` and
``Tr_out J(g) = I_in``.  Maps are applied with ``g(rho) = Tr_in[(rho^T (x) I) J(g)]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .tensorcore import (
    DEFAULT_TOL,
    ComplexMatrix,
    WireSystem,
    haar_unitary,
    is_psd,
    link,
    partial_trace,
    permute_systems,
    rng_for,
    tensor_product,
    wires,
)


def default_in(dims: Sequence[int]) -> WireSystem:
    return wires(dims, "x")


def default_out(dims: Sequence[int]) -> WireSystem:
    return wires(dims, "y")


@dataclass(frozen=True)
class Channel:
    """A CP map ``in_sys -> out_sys`` stored as its Choi matrix on ``in_sys + out_sys``."""

    choi: ComplexMatrix
    in_sys: WireSystem
    out_sys: WireSystem

    def __post_init__(self):
        if self.choi.system != self.in_sys + self.out_sys or not self.choi.is_square:
            raise ValueError("Choi matrix wires must be in_sys followed by out_sys")

    @property
    def d_in(self) -> int:
        return self.in_sys.dim

    @property
    def d_out(self) -> int:
        return self.out_sys.dim

    @property
    def matrix(self) -> np.ndarray:
        return self.choi.data

    def relabel(self, mapping) -> "Channel":
        return Channel(self.choi.relabel(mapping), self.in_sys.relabel(mapping), self.out_sys.relabel(mapping))

    def with_labels(self, in_labels: Sequence[str], out_labels: Sequence[str]) -> "Channel":
        mapping = dict(zip(self.in_sys.labels + self.out_sys.labels, tuple(in_labels) + tuple(out_labels)))
        return self.relabel(mapping)

    def to_json(self) -> dict:
        return {
            "in": {"dims": list(self.in_sys.dims), "labels": list(self.in_sys.labels)},
            "out": {"dims": list(self.out_sys.dims), "labels": list(self.out_sys.labels)},
            "choi": self.choi.to_json(),
        }

    @classmethod
    def from_json(cls, obj) -> "Channel":
        in_sys = WireSystem(tuple(obj["in"]["dims"]), tuple(obj["in"]["labels"]))
        out_sys = WireSystem(tuple(obj["out"]["dims"]), tuple(obj["out"]["labels"]))
        return cls(ComplexMatrix.from_json(obj["choi"]), in_sys, out_sys)


def channel_from_array(choi: np.ndarray, in_sys: WireSystem, out_sys: WireSystem) -> Channel:
    return Channel(ComplexMatrix(choi, in_sys + out_sys), in_sys, out_sys)


@dataclass(frozen=True)
class KrausSet:
    operators: tuple[np.ndarray, ...]
    in_sys: WireSystem
    out_sys: WireSystem

    def __post_init__(self):
        ops = tuple(np.asarray(k, dtype=np.complex128) for k in self.operators)
        for k in ops:
            if k.shape != (self.out_sys.dim, self.in_sys.dim):
                raise ValueError(f"Kraus operator of shape {k.shape}, expected {(self.out_sys.dim, self.in_sys.dim)}")
        object.__setattr__(self, "operators", ops)

    def __len__(self):
        return len(self.operators)

    def completeness(self) -> np.ndarray:
        return sum(k.conj().T @ k for k in self.operators)


def choi_from_kraus(k: KrausSet) -> Channel:
    d_in, d_out = k.in_sys.dim, k.out_sys.dim
    j = np.zeros((d_in * d_out, d_in * d_out), dtype=np.complex128)
    for op in k.operators:
        # vectorised with input index first: v[i*d_out + a] = op[a, i]
        v = op.T.reshape(-1)
        j += np.outer(v, v.conj())
    return channel_from_array(j, k.in_sys, k.out_sys)


def kraus_from_choi(c: Channel, tol: float = DEFAULT_TOL) -> KrausSet:
    """Minimal Kraus set from the eigendecomposition; eigenvalues at or below ``tol`` are dropped."""
    if not is_psd(c.choi, tol):
        raise ValueError("Choi matrix is not positive semidefinite")
    h = (c.matrix + c.matrix.conj().T) / 2
    w, v = np.linalg.eigh(h)
    ops = []
    for lam, vec in zip(w[::-1], v.T[::-1]):
        if lam <= tol:
            break
        ops.append(np.sqrt(lam) * vec.reshape(c.d_in, c.d_out).T)
    return KrausSet(tuple(ops), c.in_sys, c.out_sys)


def is_trace_preserving(c: Channel, tol: float = DEFAULT_TOL) -> bool:
    marg = partial_trace(c.choi, c.out_sys.labels).data
    return bool(np.max(np.abs(marg - np.eye(c.d_in))) <= tol)


def is_cptp(c: Channel, tol: float = DEFAULT_TOL) -> bool:
    return is_psd(c.choi, tol) and is_trace_preserving(c, tol)


def apply_channel(c: Channel, rho: ComplexMatrix | np.ndarray) -> ComplexMatrix:
    """``Tr_in[(rho^T (x) I_out) J]``; ``rho`` lives on ``c.in_sys`` (labels are not checked for arrays)."""
    r = rho.data if isinstance(rho, ComplexMatrix) else np.asarray(rho, dtype=np.complex128)
    if r.shape != (c.d_in, c.d_in):
        raise ValueError(f"input of shape {r.shape} does not match channel input dimension {c.d_in}")
    j = c.matrix.reshape(c.d_in, c.d_out, c.d_in, c.d_out)
    out = np.einsum("ij,iajb->ab", r, j)
    return ComplexMatrix(out, c.out_sys)


def identity_channel(system: WireSystem, out_labels: Optional[Sequence[str]] = None) -> Channel:
    out_sys = default_out(system.dims) if out_labels is None else WireSystem(system.dims, tuple(out_labels))
    d = system.dim
    v = np.eye(d).reshape(-1)
    return channel_from_array(np.outer(v, v), system, out_sys)


def depolarizing_channel(d: int) -> Channel:
    """``rho -> Tr(rho) I/d``."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    return channel_from_array(np.eye(d * d) / d, default_in([d]), default_out([d]))


def constant_preparation(sigma: np.ndarray, in_sys: WireSystem, out_sys: WireSystem) -> Channel:
    """Discard the input and prepare ``sigma``."""
    sigma = np.asarray(sigma, dtype=np.complex128)
    return channel_from_array(np.kron(np.eye(in_sys.dim), sigma), in_sys, out_sys)


def is_unitary(u: np.ndarray, tol: float = DEFAULT_TOL) -> bool:
    u = np.asarray(u)
    return u.ndim == 2 and u.shape[0] == u.shape[1] and np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=tol)


def unitary_channel(u: ComplexMatrix | np.ndarray, tol: float = DEFAULT_TOL) -> Channel:
    """``rho -> U rho U^dagger``."""
    arr = u.data if isinstance(u, ComplexMatrix) else np.asarray(u, dtype=np.complex128)
    if not is_unitary(arr, tol):
        raise ValueError("input is not unitary")
    d = arr.shape[0]
    return choi_from_kraus(KrausSet((arr,), default_in([d]), default_out([d])))


def channel_from_map(fn: Callable[[np.ndarray], np.ndarray], in_sys: WireSystem, out_sys: WireSystem) -> Channel:
    """Choi matrix of a linear map given as a function on ``d_in x d_in`` arrays."""
    d_in, d_out = in_sys.dim, out_sys.dim
    j = np.zeros((d_in, d_out, d_in, d_out), dtype=np.complex128)
    for a in range(d_in):
        for b in range(d_in):
            e = np.zeros((d_in, d_in))
            e[a, b] = 1.0
            j[a, :, b, :] = fn(e)
    return channel_from_array(j.reshape(d_in * d_out, d_in * d_out), in_sys, out_sys)


def compose(g: Channel, f: Channel) -> Channel:
    """``g o f`` via the link product; wire labels of the result are those of f's input and g's output."""
    if f.out_sys.dims != g.in_sys.dims:
        raise ValueError(f"cannot compose: {f.out_sys.dims} -> {g.in_sys.dims}")
    mid = [f"__mid{i}" for i in range(len(f.out_sys))]
    fi = [f"__fin{i}" for i in range(len(f.in_sys))]
    go = [f"__gout{i}" for i in range(len(g.out_sys))]
    f2 = f.with_labels(fi, mid)
    g2 = g.with_labels(mid, go)
    j = link(f2.choi, g2.choi, mid)
    back = dict(zip(fi + go, f.in_sys.labels + g.out_sys.labels))
    in_sys, out_sys = f.in_sys, g.out_sys
    if set(in_sys.labels) & set(out_sys.labels):
        in_sys, out_sys = default_in(in_sys.dims), default_out(out_sys.dims)
        back = dict(zip(fi + go, in_sys.labels + out_sys.labels))
    return Channel(j.relabel(back), in_sys, out_sys)


def tensor_channels(f: Channel, g: Channel) -> Channel:
    """Parallel composition; the result's inputs are f's then g's, likewise for outputs."""
    j = tensor_product(f.choi, g.choi)
    in_sys = f.in_sys + g.in_sys
    out_sys = f.out_sys + g.out_sys
    j = permute_systems(j, in_sys.labels + out_sys.labels)
    return Channel(j, in_sys, out_sys)


def operator_basis(d: int):
    for a in range(d):
        for b in range(d):
            e = np.zeros((d, d), dtype=np.complex128)
            e[a, b] = 1.0
            yield e


def is_extremal_kraus(k: KrausSet, tol: float = DEFAULT_TOL) -> bool:
    """Choi's criterion: ``{K_i^dagger K_j}`` linearly independent.

    Rank is judged on singular values relative to the largest one.
    """
    if len(k) == 0:
        raise ValueError("empty Kraus set")
    m = len(k)
    rows = [(a.conj().T @ b).reshape(-1) for a in k.operators for b in k.operators]
    s = np.linalg.svd(np.array(rows), compute_uv=False)
    return bool(np.sum(s > tol * s[0]) == m * m)


def is_constant_preparation(c: Channel, tol: float = DEFAULT_TOL) -> Optional[np.ndarray]:
    """Return ``sigma`` if ``c(X) = Tr(X) sigma`` on a full operator basis, else ``None``."""
    sigma = apply_channel(c, np.eye(c.d_in) / c.d_in).data
    for e in operator_basis(c.d_in):
        expected = np.trace(e) * sigma
        if np.max(np.abs(apply_channel(c, e).data - expected)) > tol:
            return None
    return sigma


def stinespring_channel(v: np.ndarray, in_sys: WireSystem, out_sys: WireSystem, env_d: int) -> Channel:
    """Channel ``rho -> Tr_env[V rho V^dagger]`` for an isometry ``V: in -> out (x) env``."""
    d_out = out_sys.dim
    ops = tuple(v.reshape(d_out, env_d, in_sys.dim)[:, e, :] for e in range(env_d))
    return choi_from_kraus(KrausSet(ops, in_sys, out_sys))


def cptp_from_rng(in_d: int, out_d: int, env_d: int, rng: np.random.Generator,
                  in_sys: Optional[WireSystem] = None, out_sys: Optional[WireSystem] = None) -> Channel:
    if min(in_d, out_d, env_d) < 1:
        raise ValueError("dimensions must be >= 1")
    in_sys = default_in([in_d]) if in_sys is None else in_sys
    out_sys = default_out([out_d]) if out_sys is None else out_sys
    n = out_d * env_d
    if n >= in_d:
        v = haar_unitary(n, rng)[:, :in_d]
    else:
        # output space too small for an isometry: dilate further and trace the excess
        extra = -(-in_d // n)
        v = haar_unitary(n * extra, rng)[:, :in_d]
        return stinespring_channel(v, in_sys, out_sys, env_d * extra)
    return stinespring_channel(v, in_sys, out_sys, env_d)


def random_cptp(in_d: int, out_d: int, env_d: int, seed: int) -> Channel:
    """Stinespring sample: Haar unitary column slice as isometry, environment traced out."""
    return cptp_from_rng(in_d, out_d, env_d, rng_for(seed))


def max_eigenvalue(rho: ComplexMatrix | np.ndarray) -> float:
    r = rho.data if isinstance(rho, ComplexMatrix) else np.asarray(rho)
    return float(np.linalg.eigvalsh((r + r.conj().T) / 2)[-1])
