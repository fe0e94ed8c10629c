"""Higher-order maps on types ``[H1,H1] (x) ... (x) [Hn,Hn]``.

Wire conventions
----------------
A type with ``n`` pairs has wires ``b0..b{n-1}`` (bottom, the input of the
channel plugged into the slot) followed by ``t0..t{n-1}`` (top, its output).
A state of the type is a :class:`~qboxdec.channels.Channel` from the bottoms
to the tops.  A supermap ``S: A -> B`` is stored as the Choi matrix of its
action on Choi matrices, with source wires prefixed ``in.`` and target wires
prefixed ``out.``; applying it is a link product over the ``in.`` wires.

Effects (discards) pair with states through ``Tr(W^T J)``, the full link
product, so the prep-discard effect ``rho (x) I`` feeds ``rho`` into the bottom
and traces the top.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from scipy.linalg import expm

from .channels import (
    Channel,
    KrausSet,
    channel_from_array,
    choi_from_kraus,
    cptp_from_rng,
    is_cptp,
)
from .tensorcore import (
    DEFAULT_TOL,
    ComplexMatrix,
    WireSystem,
    density_from_rng,
    haar_unitary,
    identity,
    is_psd,
    link,
    partial_trace,
    permute_systems,
    rng_for,
    tensor_product,
)

MAX_CHOI_DIM = 64
PREP_DISCARD = "prep-discard"
PROCESS_MATRIX = "process-matrix"
FAMILIES = (PREP_DISCARD, PROCESS_MATRIX)


class SignallingInputError(ValueError):
    """A channel required to be non-signalling is not."""


class InsufficientBasisError(ValueError):
    """Affine decomposition left a residual although the input is non-signalling."""


class DimensionBoundError(ValueError):
    pass


@dataclass(frozen=True)
class HigherOrderType:
    """``(x)_i [H_i, H_i]``, given by the pair dimensions. ``(1,)`` is the trivial type."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise ValueError("a type needs at least one pair; use (1,) for the trivial type")
        if any(d < 1 for d in dims):
            raise ValueError(f"pair dimensions must be positive, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def n(self) -> int:
        return len(self.dims)

    @property
    def dim(self) -> int:
        """Dimension of ``(x)_i H_i``."""
        return int(np.prod(self.dims))

    @property
    def is_trivial(self) -> bool:
        return self.dim == 1

    def bottoms(self, prefix: str = "") -> WireSystem:
        return WireSystem(self.dims, tuple(f"{prefix}b{i}" for i in range(self.n)))

    def tops(self, prefix: str = "") -> WireSystem:
        return WireSystem(self.dims, tuple(f"{prefix}t{i}" for i in range(self.n)))

    def wires(self, prefix: str = "") -> WireSystem:
        return self.bottoms(prefix) + self.tops(prefix)

    def parties(self, prefix: str = "") -> list[tuple[str, str]]:
        return [(f"{prefix}b{i}", f"{prefix}t{i}") for i in range(self.n)]

    @property
    def pairs(self) -> list[tuple[WireSystem, WireSystem]]:
        return [(WireSystem((d,), (f"b{i}",)), WireSystem((d,), (f"t{i}",))) for i, d in enumerate(self.dims)]

    def __matmul__(self, other: "HigherOrderType") -> "HigherOrderType":
        return HigherOrderType(self.dims + other.dims)

    def to_json(self) -> list:
        return [[d, d] for d in self.dims]

    @classmethod
    def from_json(cls, obj) -> "HigherOrderType":
        dims = []
        for pair in obj:
            b, t = (pair, pair) if isinstance(pair, int) else pair
            if b != t:
                raise ValueError("only pairs [H,H] with equal bottom and top are supported")
            dims.append(b)
        return cls(tuple(dims))


def state_type(state: Channel) -> HigherOrderType:
    typ = HigherOrderType(state.in_sys.dims)
    if state.in_sys != typ.bottoms() or state.out_sys != typ.tops():
        raise ValueError("channel is not a state on canonical b*/t* wires")
    return typ


def as_state(channel: Channel) -> Channel:
    """Relabel a channel ``(x)_i H_i -> (x)_i H_i`` as a state of the matching type."""
    if channel.in_sys.dims != channel.out_sys.dims:
        raise ValueError("state channels must have matching input and output wire dimensions")
    typ = HigherOrderType(channel.in_sys.dims)
    return channel.with_labels(typ.bottoms().labels, typ.tops().labels)


def state_from_array(choi: np.ndarray, typ: HigherOrderType) -> Channel:
    return channel_from_array(choi, typ.bottoms(), typ.tops())


@dataclass(frozen=True)
class HigherOrderMap:
    channel: Channel
    source: HigherOrderType
    target: HigherOrderType

    def __post_init__(self):
        if self.channel.in_sys != self.source.wires("in.") or self.channel.out_sys != self.target.wires("out."):
            raise ValueError("supermap wires do not match its source/target types")

    @property
    def choi(self) -> ComplexMatrix:
        return self.channel.choi

    @property
    def matrix(self) -> np.ndarray:
        return self.channel.matrix

    def to_json(self, deterministic: Optional[bool] = None) -> dict:
        out = {"source": self.source.to_json(), "target": self.target.to_json(), "choi": self.choi.to_json()}
        if deterministic is not None:
            out["deterministic"] = deterministic
        return out

    @classmethod
    def from_json(cls, obj) -> "HigherOrderMap":
        src = HigherOrderType.from_json(obj["source"])
        tgt = HigherOrderType.from_json(obj["target"])
        return supermap_from_array(ComplexMatrix.from_json(obj["choi"]).data, src, tgt)


def supermap_from_array(choi: np.ndarray, source: HigherOrderType, target: HigherOrderType) -> HigherOrderMap:
    return HigherOrderMap(channel_from_array(choi, source.wires("in."), target.wires("out.")), source, target)


def supermap_from_action(fn: Callable[[np.ndarray], np.ndarray], source: HigherOrderType,
                         target: HigherOrderType) -> HigherOrderMap:
    """Build a supermap from its (linear) action on Choi matrices of source states."""
    ds = source.dim ** 2
    dk = target.dim ** 2
    j = np.zeros((ds, dk, ds, dk), dtype=np.complex128)
    for a in range(ds):
        for b in range(ds):
            e = np.zeros((ds, ds))
            e[a, b] = 1.0
            j[a, :, b, :] = fn(e)
    return supermap_from_array(j.reshape(ds * dk, ds * dk), source, target)


def identity_supermap(typ: HigherOrderType) -> HigherOrderMap:
    v = np.eye(typ.dim ** 2).reshape(-1)
    return supermap_from_array(np.outer(v, v), typ, typ)


def _strip(prefix: str, labels: Iterable[str]) -> dict:
    return {l: l[len(prefix):] for l in labels if l.startswith(prefix)}


MapLike = Union[ComplexMatrix, Channel, HigherOrderMap]


def _as_matrix(x: MapLike) -> ComplexMatrix:
    if isinstance(x, ComplexMatrix):
        return x
    return x.choi


def link_product(a: MapLike, b: MapLike, common: Iterable[str]) -> ComplexMatrix:
    """Link product of two Choi matrices over the named common wires."""
    return link(_as_matrix(a), _as_matrix(b), common)


def apply_supermap(s: HigherOrderMap, state: Channel) -> Channel:
    """Image of a source state under ``s``, as a state of the target type."""
    if state_type(state) != s.source:
        raise ValueError(f"state of type {state_type(state).dims} does not match source {s.source.dims}")
    g = state.relabel({l: "in." + l for l in state.choi.labels})
    j = link(g.choi, s.choi, s.source.wires("in.").labels)
    j = j.relabel(_strip("out.", j.labels))
    return Channel(j, s.target.bottoms(), s.target.tops())


def compose_supermaps(t: HigherOrderMap, s: HigherOrderMap) -> HigherOrderMap:
    """``t o s``."""
    if s.target != t.source:
        raise ValueError(f"cannot compose {s.target.dims} with {t.source.dims}")
    mid = s.target.wires("mid.").labels
    s2 = s.choi.relabel(dict(zip(s.target.wires("out.").labels, mid)))
    t2 = t.choi.relabel(dict(zip(t.source.wires("in.").labels, mid)))
    j = link(s2, t2, mid)
    return HigherOrderMap(Channel(j, s.source.wires("in."), t.target.wires("out.")), s.source, t.target)


def _shift(typ: HigherOrderType, prefix: str, offset: int) -> dict:
    m = {}
    for i in range(typ.n):
        m[f"{prefix}b{i}"] = f"{prefix}b{i + offset}"
        m[f"{prefix}t{i}"] = f"{prefix}t{i + offset}"
    return m


def tensor_states(a: Channel, b: Channel) -> Channel:
    ta, tb = state_type(a), state_type(b)
    typ = ta @ tb
    b2 = b.relabel(_shift(tb, "", ta.n))
    j = tensor_product(a.choi, b2.choi)
    j = permute_systems(j, typ.wires().labels)
    return Channel(j, typ.bottoms(), typ.tops())


def tensor_supermaps(s: HigherOrderMap, t: HigherOrderMap) -> HigherOrderMap:
    src = s.source @ t.source
    tgt = s.target @ t.target
    m = _shift(t.source, "in.", s.source.n)
    m.update(_shift(t.target, "out.", s.target.n))
    j = tensor_product(s.choi, t.choi.relabel(m))
    j = permute_systems(j, src.wires("in.").labels + tgt.wires("out.").labels)
    return HigherOrderMap(Channel(j, src.wires("in."), tgt.wires("out.")), src, tgt)


# ---------------------------------------------------------------------------
# batched checks on arrays of state Choi matrices (wire order b..., t...)
# ---------------------------------------------------------------------------


def _batch_tensor(batch: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    dims = tuple(dims)
    return batch.reshape((batch.shape[0],) + dims * 4)


def _trace_out(t: np.ndarray, n_wires: int, axes: Sequence[int]) -> np.ndarray:
    """Trace wire indices ``axes`` of a batch tensor with ``n_wires`` row and column wires."""
    row = list(range(1, n_wires + 1))
    col = [n_wires + i if (i - 1) not in axes else i for i in row]
    keep = [i for i in row if (i - 1) not in axes]
    return np.einsum(t, [0] + row + col, [0] + keep + [n_wires + i for i in keep])


def tp_violation(batch: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Per-element max deviation of ``Tr_tops J`` from the identity on the bottoms."""
    n = len(dims)
    t = _batch_tensor(batch, dims)
    marg = _trace_out(t, 2 * n, list(range(n, 2 * n)))
    d = int(np.prod(dims))
    marg = marg.reshape(batch.shape[0], d, d)
    return np.abs(marg - np.eye(d)).reshape(batch.shape[0], -1).max(axis=1)


def ns_violation(batch: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Per-element max deviation from non-signalling across the pairs of the type."""
    n = len(dims)
    N = batch.shape[0]
    out = np.zeros(N)
    if n < 2:
        return out
    t = _batch_tensor(batch, dims)
    w = 2 * n
    for k in range(n):
        a = _trace_out(t, w, [n + k])
        b = _trace_out(t, w, [k, n + k])
        # indices of a: batch, rows (all but t_k), cols (all but t_k)
        rows = [i for i in range(w) if i != n + k]
        a_idx = [0] + [1 + i for i in rows] + [1 + w + i for i in rows]
        b_rows = [i for i in rows if i != k]
        b_idx = [0] + [1 + i for i in b_rows] + [1 + w + i for i in b_rows]
        expected = np.einsum(b, b_idx, np.eye(dims[k]) / dims[k], [1 + k, 1 + w + k], a_idx)
        out = np.maximum(out, np.abs(a - expected).reshape(N, -1).max(axis=1))
    return out


def is_nonsignalling(n: Channel, parties: Sequence[tuple[str, str]], tol: float = DEFAULT_TOL) -> bool:
    """True iff each party's input cannot influence the other parties' marginal output."""
    covered = [l for p in parties for l in p]
    if sorted(covered) != sorted(n.choi.labels):
        raise ValueError(f"partition {parties} does not cover the wires {n.choi.labels}")
    for b, t in parties:
        marg = partial_trace(n.choi, [t])
        rest = partial_trace(n.choi, [b, t])
        d = n.choi.system.dim_of(b)
        expected = tensor_product(identity(WireSystem((d,), (b,))).scaled(1 / d), rest)
        expected = permute_systems(expected, marg.labels)
        if np.max(np.abs(marg.data - expected.data)) > tol:
            return False
    return True


@dataclass(frozen=True)
class NSChannel:
    channel: Channel
    parties: tuple[tuple[str, str], ...]
    tol: float = field(default=DEFAULT_TOL, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "parties", tuple(tuple(p) for p in self.parties))
        if not is_nonsignalling(self.channel, self.parties, self.tol):
            raise SignallingInputError("channel signals between parties")

    @classmethod
    def from_state(cls, state: Channel, tol: float = DEFAULT_TOL) -> "NSChannel":
        return cls(state, tuple(state_type(state).parties()), tol)


# ---------------------------------------------------------------------------
# affine basis of local channels and of non-signalling channels
# ---------------------------------------------------------------------------

ROTATION_ANGLES = (0.0, np.pi / 2, np.pi, np.sqrt(2.0), np.sqrt(3.0))


def gell_mann(d: int) -> list[np.ndarray]:
    """Generalised Gell-Mann matrices (the Pauli matrices for ``d = 2``)."""
    mats = []
    for j in range(d):
        for k in range(j + 1, d):
            s = np.zeros((d, d), dtype=np.complex128)
            s[j, k] = s[k, j] = 1
            a = np.zeros((d, d), dtype=np.complex128)
            a[j, k], a[k, j] = -1j, 1j
            mats += [s, a]
    for l in range(1, d):
        diag = np.zeros(d)
        diag[:l] = 1
        diag[l] = -l
        mats.append(np.diag(diag * np.sqrt(2 / (l * (l + 1)))).astype(np.complex128))
    return mats


def _local_candidates(d: int):
    gens = gell_mann(d)
    for a, b in itertools.product(range(len(gens)), repeat=2):
        for th, ph in itertools.product(ROTATION_ANGLES, repeat=2):
            u = expm(-1j * th * gens[a]) @ expm(-1j * ph * gens[b])
            v = u.T.reshape(-1)
            yield np.outer(v, v.conj())
    basis = np.eye(d)
    states = [basis[j] for j in range(d)]
    for j, k in itertools.combinations(range(d), 2):
        states.append((basis[j] + basis[k]) / np.sqrt(2))
        states.append((basis[j] + 1j * basis[k]) / np.sqrt(2))
    for psi in states:
        yield np.kron(np.eye(d), np.outer(psi, psi.conj()))
    # measure in the computational basis, prepare a shifted superposition state
    for shift in range(1, len(states)):
        j = np.zeros((d * d, d * d), dtype=np.complex128)
        for m in range(d):
            psi = states[(m + shift) % len(states)]
            j += np.kron(np.diag(np.eye(d)[m]), np.outer(psi, psi.conj()))
        yield j


@lru_cache(maxsize=None)
def local_cptp_basis(d: int) -> np.ndarray:
    """Affinely independent CPTP Choi matrices ``d -> d`` spanning the CPTP affine hull.

    Candidates are unitary channels from products of two axis rotations and
    prepare/measure channels; each is kept only if it raises the affine rank.
    """
    target = d ** 4 - d ** 2 + 1
    kept: list[np.ndarray] = []
    ortho: list[np.ndarray] = []
    anchor = None
    for j in _local_candidates(d):
        if anchor is None:
            anchor = j
            kept.append(j)
            continue
        v = (j - anchor).reshape(-1)
        for q in ortho:
            v = v - np.vdot(q, v) * q
        for q in ortho:
            v = v - np.vdot(q, v) * q
        nrm = np.linalg.norm(v)
        if nrm > 1e-8:
            ortho.append(v / nrm)
            kept.append(j)
            if len(kept) == target:
                break
    if len(kept) != target:
        raise InsufficientBasisError(f"generating set reached affine rank {len(kept)} of {target} for d={d}")
    out = np.array(kept)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=16)
def _ns_basis_array(dims: tuple[int, ...]) -> np.ndarray:
    locs = [local_cptp_basis(d) for d in dims]
    n = len(dims)
    ops, subs = [], []
    # local Choi L_k[i_k, b_k, t_k, b'_k, t'_k]
    for k, (loc, d) in enumerate(zip(locs, dims)):
        ops.append(loc.reshape(loc.shape[0], d, d, d, d))
        subs.append([k, n + k, 2 * n + k, 3 * n + k, 4 * n + k])
    args = []
    for op, sub in zip(ops, subs):
        args += [op, sub]
    out_idx = list(range(n)) + [n + k for k in range(n)] + [2 * n + k for k in range(n)] \
        + [3 * n + k for k in range(n)] + [4 * n + k for k in range(n)]
    t = np.einsum(*args, out_idx)
    big = int(np.prod([d * d for d in dims]))
    out = np.ascontiguousarray(t.reshape(-1, big, big))
    out.setflags(write=False)
    return out


def _check_bound(dims: Sequence[int], max_dim: int):
    total = int(np.prod([d * d for d in dims]))
    if total > max_dim:
        raise DimensionBoundError(f"Choi dimension {total} exceeds the configured bound {max_dim}")


def ns_basis_array(dims: Sequence[int], max_dim: int = MAX_CHOI_DIM) -> np.ndarray:
    """Stacked Choi matrices (wire order ``b..., t...``) of the product basis."""
    _check_bound(dims, max_dim)
    return _ns_basis_array(tuple(int(d) for d in dims))


def nonsignalling_affine_basis(dims: Sequence[int], max_dim: int = MAX_CHOI_DIM) -> list[Channel]:
    """Product channels whose Choi matrices affinely span the non-signalling channels on the pairs."""
    typ = HigherOrderType(tuple(dims))
    return [state_from_array(j, typ) for j in ns_basis_array(dims, max_dim)]


def decompose_nonsignalling(n: NSChannel, tol: float = 1e-8,
                            max_dim: int = MAX_CHOI_DIM) -> list[tuple[float, Channel]]:
    """Affine coefficients of ``n`` over the product basis (least squares)."""
    if not is_nonsignalling(n.channel, n.parties, n.tol):
        raise SignallingInputError("input channel is signalling")
    ins = [p[0] for p in n.parties]
    outs = [p[1] for p in n.parties]
    j = permute_systems(n.channel.choi, ins + outs)
    dims = [j.system.dim_of(l) for l in ins]
    if [j.system.dim_of(l) for l in outs] != dims:
        raise ValueError("each party must have equal input and output dimension")
    basis = ns_basis_array(dims, max_dim)
    a = basis.reshape(basis.shape[0], -1).T
    a_real = np.vstack([a.real, a.imag])
    target = j.data.reshape(-1)
    coef, *_ = np.linalg.lstsq(a_real, np.concatenate([target.real, target.imag]), rcond=None)
    recon = a @ coef
    resid = float(np.linalg.norm(recon - target))
    if resid > tol or abs(coef.sum() - 1) > tol:
        raise InsufficientBasisError(f"reconstruction residual {resid:.3e} (coefficient sum {coef.sum():.6f})")
    typ = HigherOrderType(tuple(dims))
    return [(float(c), state_from_array(b, typ)) for c, b in zip(coef, basis)]


def reconstruct(terms: Sequence[tuple[float, Channel]]) -> np.ndarray:
    return sum(c * ch.matrix for c, ch in terms)


# ---------------------------------------------------------------------------
# discard effects
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscardEffect:
    matrix: ComplexMatrix
    family: str
    typ: HigherOrderType

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.matrix.system != self.typ.wires():
            raise ValueError("effect wires do not match its type")

    def to_json(self) -> dict:
        return {"type": self.typ.to_json(), "family": self.family, **self.matrix.to_json()}

    @classmethod
    def from_json(cls, obj) -> "DiscardEffect":
        return cls(ComplexMatrix.from_json(obj), obj["family"], HigherOrderType.from_json(obj["type"]))


def prep_discard(rho: np.ndarray, typ: HigherOrderType) -> DiscardEffect:
    """Prepare ``rho`` on the bottoms and discard the tops."""
    m = np.kron(np.asarray(rho, dtype=np.complex128), np.eye(typ.dim))
    return DiscardEffect(ComplexMatrix(m, typ.wires()), PREP_DISCARD, typ)


def pairing(w: ComplexMatrix | np.ndarray, j: ComplexMatrix | np.ndarray) -> complex:
    """``Tr(W^T J)``: the full link product of an effect with a state."""
    w = w.data if isinstance(w, ComplexMatrix) else w
    j = j.data if isinstance(j, ComplexMatrix) else j
    return complex(np.sum(w * j))


def is_process_matrix(w: ComplexMatrix, typ: HigherOrderType, tol: float = DEFAULT_TOL,
                      max_dim: int = MAX_CHOI_DIM) -> bool:
    """Positive, and normalised against every element of the non-signalling affine basis."""
    if w.system.dims != typ.wires().dims:
        raise ValueError(f"effect dims {w.system.dims} do not match type {typ.dims}")
    if not is_psd(w, tol):
        return False
    basis = ns_basis_array(typ.dims, max_dim)
    vals = basis.reshape(basis.shape[0], -1) @ w.data.reshape(-1)
    return bool(np.max(np.abs(vals - 1)) <= tol)


def sequential_comb_effect(typ: HigherOrderType, order: Sequence[int], rng: np.random.Generator,
                           memory: int = 2) -> DiscardEffect:
    """Deterministic comb visiting the pairs in ``order``, with memory carried between slots."""
    order = list(order)
    first = order[0]
    d0 = typ.dims[first]
    rho = density_from_rng(d0 * memory, rng)
    w = ComplexMatrix(rho, WireSystem((d0, memory), (f"b{first}", "m0")))
    for step, (p, q) in enumerate(zip(order, order[1:])):
        in_sys = WireSystem((typ.dims[p], memory), (f"t{p}", f"m{step}"))
        out_sys = WireSystem((typ.dims[q], memory), (f"b{q}", f"m{step + 1}"))
        c = cptp_from_rng(in_sys.dim, out_sys.dim, 2, rng, in_sys, out_sys)
        w = link(w, c.choi, [f"m{step}"])
    last = order[-1]
    w = partial_trace(w, [f"m{len(order) - 1}"])
    w = tensor_product(w, identity(WireSystem((typ.dims[last],), (f"t{last}",))))
    w = permute_systems(w, typ.wires().labels)
    return DiscardEffect(w, PROCESS_MATRIX, typ)


def sample_discard(typ: HigherOrderType, family: str, seed: int) -> DiscardEffect:
    """Random valid discard.

    ``prep-discard``: random state on the bottoms, identity on the tops.
    ``process-matrix``: a random convex mixture of prep-discards and
    sequential combs through the pairs in random causal orders.
    """
    rng = rng_for(seed)
    if family == PREP_DISCARD:
        return prep_discard(density_from_rng(typ.dim, rng), typ)
    if family != PROCESS_MATRIX:
        raise ValueError(f"unknown family {family!r}")
    k = int(rng.integers(1, 4))
    weights = rng.dirichlet(np.ones(k))
    total = np.zeros((typ.dim ** 2, typ.dim ** 2), dtype=np.complex128)
    for wt in weights:
        if typ.n >= 2 and rng.random() < 0.75:
            part = sequential_comb_effect(typ, rng.permutation(typ.n), rng)
        else:
            part = prep_discard(density_from_rng(typ.dim, rng), typ)
        total += wt * part.matrix.data
    return DiscardEffect(ComplexMatrix(total, typ.wires()), PROCESS_MATRIX, typ)


def apply_effect(state: Channel, w: DiscardEffect) -> float:
    if state_type(state) != w.typ:
        raise ValueError("effect type does not match the state")
    return float(pairing(w.matrix, state.choi).real)


def reduced_state(state: Channel, w: DiscardEffect, discard: Sequence[int]) -> Channel:
    """Apply ``w`` to the pairs ``discard`` of ``state``; the remaining pairs are renumbered in order."""
    typ = state_type(state)
    discard = list(discard)
    if len(set(discard)) != len(discard) or not all(0 <= i < typ.n for i in discard):
        raise ValueError(f"invalid pair selection {discard}")
    if tuple(typ.dims[i] for i in discard) != w.typ.dims:
        raise ValueError("effect type does not match the discarded pairs")
    mapping = {}
    for k, i in enumerate(discard):
        mapping[f"b{k}"] = f"b{i}"
        mapping[f"t{k}"] = f"t{i}"
    eff = w.matrix.relabel(mapping)
    j = link(state.choi, eff, eff.labels)
    kept = [i for i in range(typ.n) if i not in discard]
    new = HigherOrderType(tuple(typ.dims[i] for i in kept)) if kept else HigherOrderType((1,))
    if not kept:
        return state_from_array(j.data, new)
    rename = {}
    for k, i in enumerate(kept):
        rename[f"b{i}"] = f"b{k}"
        rename[f"t{i}"] = f"t{k}"
    return state_from_array(j.relabel(rename).data, new)


def verify_no_superluminal(state: Channel, w1: DiscardEffect, w2: DiscardEffect,
                           discard: Sequence[int], tol: float = DEFAULT_TOL) -> float:
    """Distance between the reduced states left by two discards on the same pairs."""
    NSChannel.from_state(state, tol)
    r1 = reduced_state(state, w1, discard)
    r2 = reduced_state(state, w2, discard)
    return float(np.linalg.norm(r1.matrix - r2.matrix))


# ---------------------------------------------------------------------------
# determinism of supermaps
# ---------------------------------------------------------------------------


def apply_supermap_batch(s: HigherOrderMap, batch: np.ndarray, ancilla: int = 1) -> np.ndarray:
    """Apply ``s (x) id_[L,L]`` to stacked states of type ``source (x) [L,L]``.

    Returns stacked states of type ``target (x) [L,L]`` in canonical wire order.
    """
    src, tgt = s.source, s.target
    ds, dk, L = src.dim, tgt.dim, ancilla
    N = batch.shape[0]
    # (N, src_b, Lb, src_t, Lt, col...) -> (N, Lb, Lt, Lb', Lt', src_row, src_col)
    x = batch.reshape(N, ds, L, ds, L, ds, L, ds, L)
    x = x.transpose(0, 2, 4, 6, 8, 1, 3, 5, 7).reshape(N * L ** 4, (ds * ds) ** 2)
    j4 = s.matrix.reshape(ds * ds, dk * dk, ds * ds, dk * dk).transpose(0, 2, 1, 3).reshape((ds * ds) ** 2, -1)
    y = (x @ j4).reshape(N, L, L, L, L, dk, dk, dk, dk)
    # y axes: N, Lb, Lt, Lb', Lt', kb, kt, kb', kt'
    y = y.transpose(0, 5, 1, 6, 2, 7, 3, 8, 4)
    size = (dk * L) ** 2
    return y.reshape(N, size, size)


def determinism_violation(s: HigherOrderMap, ancilla_dims: Sequence[int] = (1, 2),
                          max_dim: int = MAX_CHOI_DIM) -> float:
    """Largest violation of positivity, trace preservation or non-signalling of ``s (x) id_[L,L]``
    on the non-signalling affine basis of ``source (x) [L,L]``, over the listed ``L``."""
    j = s.matrix
    worst = float(np.max(np.abs(j - j.conj().T), initial=0.0))
    worst = max(worst, -float(np.linalg.eigvalsh((j + j.conj().T) / 2)[0]))
    for L in ancilla_dims:
        src_dims = s.source.dims + ((L,) if L > 1 else ())
        tgt_dims = s.target.dims + ((L,) if L > 1 else ())
        images = apply_supermap_batch(s, ns_basis_array(src_dims, max_dim), L)
        worst = max(worst, float(np.max(tp_violation(images, tgt_dims))))
        worst = max(worst, float(np.max(ns_violation(images, tgt_dims))))
    return worst


def is_deterministic_supermap(s: HigherOrderMap, tol: float = DEFAULT_TOL,
                              ancilla_dims: Sequence[int] = (1, 2), max_dim: int = MAX_CHOI_DIM) -> bool:
    """Completely positive, and ``s (x) id_[L,L]`` sends the non-signalling affine basis of
    ``source (x) [L,L]`` to trace-preserving non-signalling channels for every listed ``L``."""
    if not is_psd(s.choi, tol):
        return False
    return determinism_violation(s, ancilla_dims, max_dim) <= tol


# ---------------------------------------------------------------------------
# random non-signalling states
# ---------------------------------------------------------------------------


def random_product_state(typ: HigherOrderType, rng: np.random.Generator) -> Channel:
    state = None
    for d in typ.dims:
        env = int(rng.integers(1, d * d + 1))
        local = as_state(cptp_from_rng(d, d, env, rng))
        state = local if state is None else tensor_states(state, local)
    return state


def random_entanglement_assisted_state(typ: HigherOrderType, rng: np.random.Generator,
                                       ancilla: int = 2) -> Channel:
    """Local channels ``(b_k, a_k) -> t_k`` acting on a shared random state of the ancillas."""
    anc = WireSystem((ancilla,) * typ.n, tuple(f"a{k}" for k in range(typ.n)))
    j = ComplexMatrix(density_from_rng(anc.dim, rng), anc)
    for k, d in enumerate(typ.dims):
        in_sys = WireSystem((d, ancilla), (f"b{k}", f"a{k}"))
        out_sys = WireSystem((d,), (f"t{k}",))
        c = cptp_from_rng(in_sys.dim, d, int(rng.integers(1, 4)), rng, in_sys, out_sys)
        j = link(j, c.choi, [f"a{k}"])
    j = permute_systems(j, typ.wires().labels)
    return Channel(j, typ.bottoms(), typ.tops())


def random_nonsignalling_state(typ: HigherOrderType, seed: int) -> Channel:
    """Convex mixture of product channels and entanglement-assisted local channels."""
    rng = rng_for(seed)
    k = int(rng.integers(1, 4))
    weights = rng.dirichlet(np.ones(k))
    total = 0
    for wt in weights:
        part = random_entanglement_assisted_state(typ, rng) if rng.random() < 0.5 else random_product_state(typ, rng)
        total = total + wt * part.matrix
    return state_from_array(total, typ)


def transpose_supermap(typ: HigherOrderType) -> HigherOrderMap:
    """The (non-positive) map sending each Choi matrix to its transpose."""
    return supermap_from_action(lambda x: x.T, typ, typ)


def comb_supermap(pre: Channel, post: Channel, source: HigherOrderType, target: HigherOrderType,
                  memory: int) -> HigherOrderMap:
    """One-slot comb ``g -> post o (g (x) id_M) o pre``.

    ``pre``: target bottoms -> source bottoms (x) memory; ``post``: source tops (x) memory -> target tops,
    both with default ``x0``/``y0`` single-wire labels over the joint spaces.
    """
    pre_in = WireSystem((target.dim,), ("out.B",))
    pre_out = WireSystem((source.dim, memory), ("in.B", "mem"))
    post_in = WireSystem((source.dim, memory), ("in.T", "mem"))
    post_out = WireSystem((target.dim,), ("out.T",))
    a = channel_from_array(pre.matrix, pre_in, pre_out)
    b = channel_from_array(post.matrix, post_in, post_out)
    j = link(a.choi, b.choi, ["mem"])
    j = permute_systems(j, ["in.B", "in.T", "out.B", "out.T"])
    return supermap_from_array(j.data, source, target)


def random_comb(source: HigherOrderType, target: HigherOrderType, rng: np.random.Generator,
                memory: int = 2) -> HigherOrderMap:
    pre = cptp_from_rng(target.dim, source.dim * memory, int(rng.integers(1, 3)), rng)
    post = cptp_from_rng(source.dim * memory, target.dim, int(rng.integers(1, 3)), rng)
    return comb_supermap(pre, post, source, target, memory)


def random_deterministic_supermap(source: HigherOrderType, target: HigherOrderType, seed: int) -> HigherOrderMap:
    """Random deterministic supermap.

    A single target pair admits any one-slot comb.  For several target pairs
    with the same pair count as the source, a convex mixture of two products
    of per-pair combs is used so that outputs stay non-signalling.
    """
    rng = rng_for(seed)
    if target.n == 1:
        return random_comb(source, target, rng)
    if source.n != target.n:
        raise ValueError("multi-pair targets need a source with the same number of pairs")
    terms = []
    for _ in range(2):
        s = None
        for ds, dk in zip(source.dims, target.dims):
            local = random_comb(HigherOrderType((ds,)), HigherOrderType((dk,)), rng)
            s = local if s is None else tensor_supermaps(s, local)
        terms.append(s)
    p = rng.random()
    return supermap_from_array(p * terms[0].matrix + (1 - p) * terms[1].matrix, source, target)


def state_as_supermap(state: Channel) -> HigherOrderMap:
    """View a state of type ``A`` as a supermap from the trivial type into ``A``."""
    return supermap_from_array(state.matrix, HigherOrderType((1,)), state_type(state))


def supermap_as_state(m: HigherOrderMap) -> Channel:
    if not m.source.is_trivial:
        raise ValueError("only supermaps with trivial source are states")
    return state_from_array(m.matrix, m.target)
