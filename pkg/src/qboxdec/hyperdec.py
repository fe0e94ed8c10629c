"""Hyper-decoherence of higher-order quantum processes.

``hypdec`` depolarises the bottom of every pair and leaves the top alone:
a state ``g`` is sent to ``g o (D_1 (x) ... (x) D_n)``, i.e. on Choi matrices
``J(g) -> I_bottom (x) g(I/d)``.  Maps invariant under it on both sides form
a category equivalent to ordinary channels; :func:`functor_F` and
:func:`functor_G` implement the two directions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np

from .channels import (
    Channel,
    KrausSet,
    apply_channel,
    compose,
    constant_preparation,
    cptp_from_rng,
    default_in,
    default_out,
    identity_channel,
    is_constant_preparation,
    is_cptp,
    is_extremal_kraus,
    kraus_from_choi,
    max_eigenvalue,
    tensor_channels,
    unitary_channel,
)
from .higherorder import (
    PROCESS_MATRIX,
    HigherOrderMap,
    HigherOrderType,
    compose_supermaps,
    identity_supermap,
    random_deterministic_supermap,
    sample_discard,
    sequential_comb_effect,
    state_as_supermap,
    state_from_array,
    supermap_from_action,
    supermap_from_array,
    tensor_supermaps,
)
from .tensorcore import (
    DEFAULT_TOL,
    ComplexMatrix,
    WireSystem,
    derive_seeds,
    haar_unitary,
    identity,
    link,
    partial_trace,
    permute_systems,
    rng_for,
    tensor_product,
)


@dataclass(frozen=True)
class HypdecMap:
    underlying: HigherOrderMap
    typ: HigherOrderType

    @property
    def choi(self) -> ComplexMatrix:
        return self.underlying.choi

    @property
    def matrix(self) -> np.ndarray:
        return self.underlying.matrix


def hypdec_choi(typ: HigherOrderType) -> np.ndarray:
    """``(I_in.b (x) I_out.b)/d (x) Phi+(in.t, out.t)`` in canonical wire order."""
    d = typ.dim
    bottoms = WireSystem((d, d), ("in.B", "out.B"))
    phi = np.eye(d).reshape(-1)
    j = tensor_product(
        ComplexMatrix(np.eye(d * d) / d, bottoms),
        ComplexMatrix(np.outer(phi, phi), WireSystem((d, d), ("in.T", "out.T"))),
    )
    return permute_systems(j, ["in.B", "in.T", "out.B", "out.T"]).data


@lru_cache(maxsize=32)
def hypdec_map(typ: HigherOrderType) -> HypdecMap:
    return HypdecMap(supermap_from_array(hypdec_choi(typ), typ, typ), typ)


def hypdec_action(choi: np.ndarray, typ: HigherOrderType) -> np.ndarray:
    """Action on a state's Choi matrix: ``I_bottom (x) Tr_bottom(J) / d``."""
    d = typ.dim
    t = np.asarray(choi).reshape(d, d, d, d)
    return np.kron(np.eye(d), np.einsum("iaib->ab", t) / d)


def hypdec_from_action(typ: HigherOrderType) -> HigherOrderMap:
    """Same map built column by column from :func:`hypdec_action` (an independent route)."""
    return supermap_from_action(lambda x: hypdec_action(x, typ), typ, typ)


def apply_hypdec(g: Channel) -> Channel:
    """``g o D`` with ``D`` the completely depolarising channel on the whole input."""
    sigma = apply_channel(g, np.eye(g.d_in) / g.d_in).data
    return constant_preparation(sigma, g.in_sys, g.out_sys)


def _map_of(h: Union[HypdecMap, HigherOrderMap]) -> HigherOrderMap:
    return h.underlying if isinstance(h, HypdecMap) else h


def verify_idempotent(h: Union[HypdecMap, HigherOrderMap]) -> float:
    """``||J(h o h) - J(h)||_F``."""
    m = _map_of(h)
    return float(np.linalg.norm(compose_supermaps(m, m).matrix - m.matrix))


def strictness_residual(typ: HigherOrderType) -> float:
    """``||J(hypdec) - J(identity)||_F``; positive whenever some pair is nontrivial."""
    return float(np.linalg.norm(hypdec_map(typ).matrix - identity_supermap(typ).matrix))


def prep_discard_residual(effect: ComplexMatrix, typ: HigherOrderType) -> float:
    """Distance from ``effect`` to ``rho (x) I_top`` with ``rho`` read off by partial trace.

    A non-normalised or non-positive ``rho`` also counts towards the residual.
    """
    d = typ.dim
    rho = partial_trace(effect, typ.tops().labels).data / d
    resid = np.linalg.norm(effect.data - np.kron(rho, np.eye(d)))
    herm = np.linalg.norm(rho - rho.conj().T)
    lam = np.linalg.eigvalsh((rho + rho.conj().T) / 2)[0]
    return float(resid + herm + abs(np.trace(rho) - 1) + max(0.0, -lam))


def pull_back_effect(effect: ComplexMatrix, m: HigherOrderMap) -> ComplexMatrix:
    """The effect ``W o m`` on the source of ``m``, with canonical wire labels."""
    w = effect.relabel({l: "out." + l for l in effect.labels})
    e = link(m.choi, w, m.target.wires("out.").labels)
    return e.relabel({l: l[3:] for l in e.labels})


def verify_no_backwards_signalling(h: Union[HypdecMap, HigherOrderMap], trials: int, seed: int,
                                   tol: float = DEFAULT_TOL) -> float:
    """Max distance of ``W o h`` from the prep-discard family.

    Samples ``trials`` process-matrix effects on the target, plus a
    prep-discard and, for two or more pairs, a comb in reversed order.
    """
    m = _map_of(h)
    typ = m.target
    effects = [sample_discard(typ, PROCESS_MATRIX, s).matrix for s in derive_seeds(seed, trials, 1)]
    if typ.n >= 2:
        effects.append(sequential_comb_effect(typ, list(range(typ.n))[::-1], rng_for(seed)).matrix)
    worst = 0.0
    for w in effects:
        worst = max(worst, prep_discard_residual(pull_back_effect(w, m), m.source))
    return worst


# ---------------------------------------------------------------------------
# split category
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSystem:
    typ: HigherOrderType
    idem: HypdecMap

    def __post_init__(self):
        if self.idem.typ != self.typ:
            raise ValueError("idempotent is typed on a different system")
        if verify_idempotent(self.idem) > 1e-9:
            raise ValueError("map is not idempotent")


@lru_cache(maxsize=32)
def split_system(typ: HigherOrderType) -> SplitSystem:
    return SplitSystem(typ, hypdec_map(typ))


def sandwich(m: HigherOrderMap) -> HigherOrderMap:
    """``hypdec_target o m o hypdec_source``."""
    h_src = hypdec_map(m.source).underlying
    h_tgt = hypdec_map(m.target).underlying
    return compose_supermaps(h_tgt, compose_supermaps(m, h_src))


def split_hom_residual(m: HigherOrderMap) -> float:
    return float(np.linalg.norm(sandwich(m).matrix - m.matrix))


def split_hom_check(s: HigherOrderMap, typ_src: Optional[HigherOrderType] = None,
                    typ_tgt: Optional[HigherOrderType] = None, tol: float = DEFAULT_TOL) -> bool:
    if (typ_src is not None and typ_src != s.source) or (typ_tgt is not None and typ_tgt != s.target):
        raise ValueError("supermap is typed differently from the requested split systems")
    return split_hom_residual(s) <= tol


@dataclass(frozen=True)
class SplitMorphism:
    map: HigherOrderMap
    source: SplitSystem
    target: SplitSystem
    tol: float = field(default=1e-9, compare=False)

    def __post_init__(self):
        if self.map.source != self.source.typ or self.map.target != self.target.typ:
            raise ValueError("map is typed differently from its split systems")
        resid = split_hom_residual(self.map)
        if resid > self.tol:
            raise ValueError(f"map is not invariant under the idempotents (residual {resid:.3e})")

    @classmethod
    def of(cls, m: HigherOrderMap, tol: float = 1e-9) -> "SplitMorphism":
        return cls(m, split_system(m.source), split_system(m.target), tol)


def functor_F(s: Union[SplitMorphism, HigherOrderMap], tol: float = 1e-9) -> Channel:
    """Channel ``rho -> [s applied to (discard, prepare rho)] evaluated at I/d_K``.

    One chain of link products: the preparation map into states, ``s``, and
    the maximally mixed input on the target bottoms.
    """
    m = s.map if isinstance(s, SplitMorphism) else SplitMorphism.of(s, tol).map
    src, tgt = m.source, m.target
    dh, dk = src.dim, tgt.dim
    x = WireSystem((dh,), ("x",))
    phi = np.eye(dh).reshape(-1)
    prep = tensor_product(
        ComplexMatrix(np.outer(phi, phi), WireSystem((dh, dh), ("x", "in.T"))),
        identity(WireSystem((dh,), ("in.B",))),
    )
    s_joint = ComplexMatrix(m.matrix, WireSystem((dh, dh, dk, dk), ("in.B", "in.T", "out.B", "out.T")))
    j = link(prep, s_joint, ["in.B", "in.T"])
    j = link(j, identity(WireSystem((dk,), ("out.B",))).scaled(1 / dk), ["out.B"])
    j = permute_systems(j, ["x", "out.T"])
    in_sys = default_in(src.dims) if not src.is_trivial else default_in([1])
    out_sys = default_out(tgt.dims)
    del x
    return Channel(ComplexMatrix(j.data, in_sys + out_sys), in_sys, out_sys)


def functor_G(f: Channel, tol: float = DEFAULT_TOL) -> SplitMorphism:
    """Supermap ``g -> (discard, prepare f(g(I/d)))``, built in closed form.

    Its Choi matrix is ``I_in.b/d_H (x) I_out.b (x) J(f)`` with ``J(f)`` on ``in.t, out.t``.
    """
    if not is_cptp(f, tol):
        raise ValueError("G is defined on CPTP maps only")
    src = HigherOrderType(f.in_sys.dims)
    tgt = HigherOrderType(f.out_sys.dims)
    dh, dk = src.dim, tgt.dim
    j = tensor_product(
        ComplexMatrix(np.eye(dh) / dh, WireSystem((dh,), ("in.B",))),
        ComplexMatrix(np.eye(dk), WireSystem((dk,), ("out.B",))),
    )
    j = tensor_product(j, ComplexMatrix(f.matrix, WireSystem((dh, dk), ("in.T", "out.T"))))
    j = permute_systems(j, ["in.B", "in.T", "out.B", "out.T"])
    return SplitMorphism(supermap_from_array(j.data, src, tgt), split_system(src), split_system(tgt), max(tol, 1e-9))


def _same_io(f: Channel) -> Channel:
    return Channel(ComplexMatrix(f.matrix, default_in(f.in_sys.dims) + default_out(f.out_sys.dims)),
                   default_in(f.in_sys.dims), default_out(f.out_sys.dims))


def channel_distance(a: Channel, b: Channel) -> float:
    if a.matrix.shape != b.matrix.shape:
        raise ValueError("channels have different shapes")
    return float(np.linalg.norm(a.matrix - b.matrix))


def random_hyperdecohered(src: HigherOrderType, tgt: HigherOrderType, seed: int) -> HigherOrderMap:
    """``hypdec o T o hypdec`` for a random deterministic ``T``."""
    return sandwich(random_deterministic_supermap(src, tgt, seed))


def bottom_unitary_supermap(typ: HigherOrderType, u: np.ndarray) -> HigherOrderMap:
    """``g -> g o U(.)U^dagger``: on Choi matrices, conjugation by ``U^T (x) I``."""
    w = np.kron(np.asarray(u).T, np.eye(typ.dim))
    return supermap_from_array(unitary_channel(w).matrix, typ, typ)


TENSOR_PROBE_DIM = 4


def equivalence_residuals(trials: int, dims: Sequence[int], seed: int) -> dict[str, float]:
    """Residuals of the round trips, identity, composition, tensor and faithfulness checks."""
    typ = HigherOrderType(tuple(dims))
    d = typ.dim
    seeds = iter(derive_seeds(seed, 13 * trials, 2))
    out = {}

    def rnd_channel(din, dout):
        return cptp_from_rng(din, dout, int(rng_for(next(seeds)).integers(1, 4)), rng_for(next(seeds)))

    r = 0.0
    for _ in range(trials):
        f = rnd_channel(d, d)
        f = Channel(ComplexMatrix(f.matrix, default_in(typ.dims) + default_out(typ.dims)),
                    default_in(typ.dims), default_out(typ.dims))
        r = max(r, channel_distance(functor_F(functor_G(f)), f))
    out["F(G(f)) = f"] = r

    r = 0.0
    for _ in range(trials):
        s = random_hyperdecohered(typ, typ, next(seeds))
        back = functor_G(functor_F(s)).map
        r = max(r, float(np.linalg.norm(back.matrix - s.matrix)))
    out["G(F(s)) = s"] = r

    out["F(hypdec) = identity"] = channel_distance(functor_F(hypdec_map(typ).underlying),
                                                   identity_channel(default_in(typ.dims)))

    r = 0.0
    for _ in range(trials):
        s1 = random_hyperdecohered(typ, typ, next(seeds))
        s2 = random_hyperdecohered(typ, typ, next(seeds))
        lhs = functor_F(compose_supermaps(s2, s1))
        rhs = compose(_same_io(functor_F(s2)), _same_io(functor_F(s1)))
        r = max(r, channel_distance(lhs, _same_io(rhs)))
    out["F preserves composition"] = r

    r = 0.0
    for _ in range(trials):
        f1 = _same_io(rnd_channel(d, d))
        f2 = _same_io(rnd_channel(d, d))
        lhs = functor_G(_same_io(compose(f2, f1))).map
        rhs = compose_supermaps(functor_G(f2).map, functor_G(f1).map)
        r = max(r, float(np.linalg.norm(lhs.matrix - rhs.matrix)))
    out["G preserves composition"] = r

    # tensor products are probed on single-pair factors with joint dimension at most
    # TENSOR_PROBE_DIM, so the joint supermap stays small; larger configs fall back to qubits
    a = HigherOrderType((typ.dims[0],))
    b = HigherOrderType((typ.dims[-1],))
    if a.dim * b.dim > TENSOR_PROBE_DIM:
        a = b = HigherOrderType((2,))
    r = 0.0
    for _ in range(trials):
        s = random_hyperdecohered(a, a, next(seeds))
        t = random_hyperdecohered(b, b, next(seeds))
        lhs = functor_F(tensor_supermaps(s, t))
        rhs = tensor_channels(functor_F(s), functor_F(t).with_labels(["x1"], ["y1"]))
        r = max(r, channel_distance(lhs, rhs))
    out["F preserves tensor"] = r

    # different supermaps with equal hyper-decoherence: F cannot tell them apart
    r = 0.0
    gap = np.inf
    for _ in range(trials):
        t1 = random_deterministic_supermap(typ, typ, next(seeds))
        u = haar_unitary(d, rng_for(next(seeds)))
        t2 = compose_supermaps(t1, bottom_unitary_supermap(typ, u))
        gap = min(gap, float(np.linalg.norm(t1.matrix - t2.matrix)))
        r = max(r, channel_distance(functor_F(sandwich(t1)), functor_F(sandwich(t2))))
    out["faithfulness probe"] = r
    out["faithfulness probe distinct inputs"] = gap
    return out


def verify_equivalence_roundtrip(trials: int, dims: Sequence[int], seed: int, tol: float = 1e-9) -> float:
    res = equivalence_residuals(trials, dims, seed)
    res.pop("faithfulness probe distinct inputs")
    return max(res.values())


# ---------------------------------------------------------------------------
# maximally mixed state and purity
# ---------------------------------------------------------------------------


def maximally_mixed_state(typ: HigherOrderType) -> Channel:
    """Discard the bottoms and prepare ``I/d`` on the tops."""
    d = typ.dim
    return state_from_array(np.eye(d * d) / d, typ)


def verify_maxmix_preserved(typ: HigherOrderType) -> tuple[float, float]:
    """``(||hypdec(m) - m||, ||F(m) - I/d||)`` for the maximally mixed state ``m``."""
    m = state_as_supermap(maximally_mixed_state(typ))
    h = hypdec_map(typ).underlying
    fixed = compose_supermaps(h, m)
    r1 = float(np.linalg.norm(fixed.matrix - m.matrix))
    r2 = float(np.linalg.norm(functor_F(m).matrix - np.eye(typ.dim) / typ.dim))
    return r1, r2


VACUOUS, PASS, FAIL = "vacuous", "pass", "fail"


def check_purity_copreservation(g: Channel, tol: float = DEFAULT_TOL) -> str:
    """If ``g(I/d)`` is pure, ``g`` must be an extremal constant preparation of it."""
    if not is_cptp(g, tol):
        raise ValueError("state channel is not CPTP")
    image = apply_channel(g, np.eye(g.d_in) / g.d_in).data
    if max_eigenvalue(image) < 1 - tol:
        return VACUOUS
    sigma = is_constant_preparation(g, max(tol, 1e-8))
    if sigma is None or np.max(np.abs(sigma - image)) > max(tol, 1e-8):
        return FAIL
    return PASS if is_extremal_kraus(kraus_from_choi(g, max(tol, 1e-8))) else FAIL


def pure_preparation_instance(phi: np.ndarray, d_in: int) -> Channel:
    """Kraus operators ``|phi><i|``: discard the input, prepare ``|phi>``."""
    phi = np.asarray(phi, dtype=np.complex128)
    phi = phi / np.linalg.norm(phi)
    ops = tuple(np.outer(phi, np.eye(d_in)[i]) for i in range(d_in))
    from .channels import choi_from_kraus

    return choi_from_kraus(KrausSet(ops, default_in([d_in]), default_out([phi.size])))


PERTURBATIONS = (1e-2, 1e-4, 1e-6)


def purity_search(trials: int, seed: int, dims: Sequence[int] = (2, 3), tol: float = DEFAULT_TOL) -> dict[str, int]:
    """Counts of verdicts over random channels.

    Samples cycle through random channels, exact pure preparations and
    pure preparations perturbed by a random channel with weight ``1e-2``,
    ``1e-4`` or ``1e-6`` (kept well away from ``tol``).
    """
    counts = {VACUOUS: 0, PASS: 0, FAIL: 0}
    for k, s in enumerate(derive_seeds(seed, trials, 3)):
        rng = rng_for(s)
        d = dims[k % len(dims)]
        kind = k % 3
        if kind == 0:
            g = cptp_from_rng(d, d, int(rng.integers(1, d * d + 1)), rng)
        else:
            phi = haar_unitary(d, rng)[:, 0]
            g = pure_preparation_instance(phi, d)
            if kind == 2:
                eps = PERTURBATIONS[(k // 3) % len(PERTURBATIONS)]
                noise = cptp_from_rng(d, d, int(rng.integers(1, d * d + 1)), rng)
                g = Channel(ComplexMatrix((1 - eps) * g.matrix + eps * noise.matrix, g.choi.system), g.in_sys, g.out_sys)
        counts[check_purity_copreservation(g, tol)] += 1
    return counts
