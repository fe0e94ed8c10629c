"""Command-line verification harness.

``qboxdec verify <suite> --dims 2 --dims 2,2 --trials N --seed S --tol T --out PATH --format json|text``

Exit status: 0 when every check passes, 1 on a failed check, 2 on a
configuration error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .channels import Channel, channel_from_array, unitary_channel
from .higherorder import (
    MAX_CHOI_DIM,
    PREP_DISCARD,
    PROCESS_MATRIX,
    HigherOrderType,
    InsufficientBasisError,
    NSChannel,
    SignallingInputError,
    decompose_nonsignalling,
    determinism_violation,
    random_nonsignalling_state,
    reconstruct,
    sample_discard,
    verify_no_superluminal,
)
from .hyperdec import (
    FAIL,
    PASS,
    equivalence_residuals,
    hypdec_from_action,
    hypdec_map,
    pure_preparation_instance,
    purity_search,
    check_purity_copreservation,
    strictness_residual,
    verify_idempotent,
    verify_maxmix_preserved,
    verify_no_backwards_signalling,
)
from .purification import (
    MEMORY_DIMS,
    PurificationInstance,
    ReversibleComb,
    apply_reversible_comb,
    connector_search,
    environment_effects,
    equal_marginals,
    family_states,
    find_counterexample_instance,
    is_deterministic_state,
    is_extremal_state,
    phase_witness,
)
from .tensorcore import derive_seeds, haar_unitary, rng_for

SUITES = (
    "idempotence",
    "backwards-signalling",
    "purity",
    "maxmix",
    "equivalence",
    "no-superluminal",
    "affine-decomposition",
    "purification",
)
ALL = "all"
SEED_ENV = "QBOXDEC_SEED"
PURITY_MULTIPLIER = 100
PURITY_DIMS = (2, 3)
DEFAULT_RESTARTS = 50

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SuiteConfig:
    suite: str
    dims: tuple[tuple[int, ...], ...] = ((2,),)
    trials: int = 100
    seed: int = 0
    tol: float = 1e-9
    out: Optional[str] = None
    allow_large: bool = False
    restarts: int = DEFAULT_RESTARTS
    instance: Optional[str] = None

    def __post_init__(self):
        if self.suite not in SUITES + (ALL,):
            raise ConfigError(f"unknown suite {self.suite!r}; choose from {', '.join(SUITES + (ALL,))}")
        if not self.dims:
            raise ConfigError("at least one --dims is required")
        for d in self.dims:
            if not d or any(int(x) < 1 for x in d):
                raise ConfigError(f"invalid type dims {list(d)}")
            total = int(np.prod([x * x for x in d]))
            if total > MAX_CHOI_DIM and not self.allow_large:
                raise ConfigError(f"type {list(d)} has Choi dimension {total} > {MAX_CHOI_DIM}; pass --allow-large")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.restarts < 1:
            raise ConfigError("restarts must be at least 1")

    @property
    def types(self) -> list[HigherOrderType]:
        return [HigherOrderType(tuple(d)) for d in self.dims]

    @property
    def max_dim(self) -> int:
        return 1 << 62 if self.allow_large else MAX_CHOI_DIM

    def params(self) -> dict:
        return {
            "dims": [list(d) for d in self.dims],
            "trials": self.trials,
            "seed": self.seed,
            "tol": fmt(self.tol),
            "restarts": self.restarts,
            "allow_large": self.allow_large,
            "instance": self.instance,
        }


def fmt(x: float) -> str:
    """Scientific notation with six significant digits."""
    return f"{float(x):.5e}"


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    anchor: str
    residual: float
    threshold: float
    comparison: str = "<"
    details: Optional[dict] = None

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.residual):
            return False
        if self.comparison == "<":
            return self.residual < self.threshold
        return self.residual > self.threshold

    def to_json(self) -> dict:
        out = {
            "suite": self.suite,
            "name": self.name,
            "anchor": self.anchor,
            "residual": fmt(self.residual),
            "comparison": self.comparison,
            "threshold": fmt(self.threshold),
            "pass": self.passed,
        }
        if self.details is not None:
            out["details"] = self.details
        return out


@dataclass
class SuiteReport:
    suite: str
    config: SuiteConfig
    checks: list[Check] = field(default_factory=list)
    wall_time: float = 0.0
    version: str = __version__

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> dict:
        # wall time is left out so identical configurations give identical bytes
        return {
            "toolkit": "qboxdec",
            "version": self.version,
            "suite": self.suite,
            "params": self.config.params(),
            "checks": [c.to_json() for c in self.checks],
            "pass": self.passed,
        }


def emit_report(r: SuiteReport, format: str = "json") -> bytes:
    if format == "json":
        return (json.dumps(r.to_json(), indent=2) + "\n").encode()
    if format != "text":
        raise ConfigError(f"unknown format {format!r}")
    lines = []
    for c in r.checks:
        status = "PASS" if c.passed else "FAIL"
        lines.append(f"{status}  [{c.suite}] {c.name}: {fmt(c.residual)} {c.comparison} {fmt(c.threshold)}  ({c.anchor})")
    lines.append(f"{'PASS' if r.passed else 'FAIL'}  {r.suite}: {sum(c.passed for c in r.checks)}/{len(r.checks)} checks"
                 f" in {r.wall_time:.1f} s (qboxdec {r.version})")
    return ("\n".join(lines) + "\n").encode()


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

A_IDEM = "axiom: hyper-decoherence is idempotent"
A_NBS = "axiom: hyper-decoherence is no-backwards-signalling"
A_PURE = "axiom: hyper-decoherence copreserves purity of states"
A_MAXMIX = "axiom: hyper-decoherence preserves the maximally mixed state"
A_EQUIV = "theorem: split hyper-decohered higher-order maps are equivalent to CPTP maps"
A_STRICT = "post-quantum: hyper-decoherence is not the identity"
A_NSL = "higher-order states do not allow superluminal signalling"
A_AFFINE = "non-signalling channels are affine combinations of product channels"
A_PURIF = "purifications of higher-order states are not unique up to reversible environment combs"


def _label(typ: HigherOrderType) -> str:
    return "[" + ",".join(str(d) for d in typ.dims) + "]"


def suite_idempotence(cfg: SuiteConfig) -> list[Check]:
    checks = []
    for typ in cfg.types:
        h = hypdec_map(typ)
        checks.append(Check("idempotence", f"hypdec o hypdec = hypdec on {_label(typ)}", A_IDEM,
                            verify_idempotent(h), min(cfg.tol, 1e-10)))
        checks.append(Check("idempotence", f"closed form matches action on {_label(typ)}", A_IDEM,
                            float(np.linalg.norm(hypdec_from_action(typ).matrix - h.matrix)), cfg.tol))
        if int(np.prod([d * d for d in typ.dims])) * 4 <= cfg.max_dim:
            checks.append(Check("idempotence", f"hypdec deterministic on {_label(typ)}", A_IDEM,
                                determinism_violation(h.underlying, max_dim=cfg.max_dim), cfg.tol))
        if not typ.is_trivial:
            checks.append(Check("idempotence", f"hypdec differs from identity on {_label(typ)}", A_STRICT,
                                strictness_residual(typ), 0.5, ">"))
    return checks


def suite_backwards(cfg: SuiteConfig) -> list[Check]:
    checks = []
    for k, typ in enumerate(cfg.types):
        seed = derive_seeds(cfg.seed, 1, 100 + k)[0]
        r = verify_no_backwards_signalling(hypdec_map(typ), cfg.trials, seed, cfg.tol)
        checks.append(Check("backwards-signalling", f"W o hypdec is prep-discard on {_label(typ)}", A_NBS, r, cfg.tol,
                            details={"effects": cfg.trials + (1 if typ.n >= 2 else 0)}))
    return checks


def suite_purity(cfg: SuiteConfig) -> list[Check]:
    checks = []
    dims = sorted(set(PURITY_DIMS) | {d for t in cfg.types for d in t.dims if d >= 2})
    analytic_fail = 0
    for d in dims:
        phi = haar_unitary(d, rng_for(derive_seeds(cfg.seed, 1, 200 + d)[0]))[:, 0]
        for basis_state in (np.eye(d)[0], phi):
            if check_purity_copreservation(pure_preparation_instance(basis_state, d), cfg.tol) != PASS:
                analytic_fail += 1
    checks.append(Check("purity", "pure preparations |phi><i| are extremal constant preparations", A_PURE,
                        analytic_fail, 0.5))
    samples = PURITY_MULTIPLIER * cfg.trials
    counts = purity_search(samples, derive_seeds(cfg.seed, 1, 300)[0], dims, cfg.tol)
    checks.append(Check("purity", "pure image implies extremal constant preparation (random search)", A_PURE,
                        counts[FAIL], 0.5, details={"samples": samples, **counts}))
    return checks


def suite_maxmix(cfg: SuiteConfig) -> list[Check]:
    checks = []
    for typ in cfg.types:
        r1, r2 = verify_maxmix_preserved(typ)
        checks.append(Check("maxmix", f"hypdec fixes the maximally mixed state on {_label(typ)}", A_MAXMIX,
                            r1, min(cfg.tol, 1e-12)))
        checks.append(Check("maxmix", f"F maps the maximally mixed state to I/d on {_label(typ)}", A_MAXMIX,
                            r2, min(cfg.tol, 1e-12)))
    return checks


def suite_equivalence(cfg: SuiteConfig) -> list[Check]:
    checks = []
    for k, typ in enumerate(cfg.types):
        seed = derive_seeds(cfg.seed, 1, 400 + k)[0]
        res = equivalence_residuals(cfg.trials, typ.dims, seed)
        gap = res.pop("faithfulness probe distinct inputs")
        for name, r in res.items():
            checks.append(Check("equivalence", f"{name} on {_label(typ)}", A_EQUIV, r, cfg.tol))
        checks.append(Check("equivalence", f"faithfulness probe inputs differ on {_label(typ)}", A_EQUIV, gap, 1e-3, ">"))
    return checks


def _bipartite_types(cfg: SuiteConfig) -> list[HigherOrderType]:
    out = []
    for typ in cfg.types:
        t = typ if typ.n >= 2 else HigherOrderType((typ.dims[0], typ.dims[0]))
        if t not in out:
            out.append(t)
    return out


def suite_no_superluminal(cfg: SuiteConfig) -> list[Check]:
    checks = []
    for k, typ in enumerate(_bipartite_types(cfg)):
        worst = 0.0
        for s in derive_seeds(cfg.seed, cfg.trials, 500 + k):
            rng = rng_for(s)
            state = random_nonsignalling_state(typ, int(rng.integers(2 ** 31)))
            discard = [int(rng.integers(typ.n))]
            sub = HigherOrderType((typ.dims[discard[0]],))
            fam = (PROCESS_MATRIX, PREP_DISCARD)
            w1 = sample_discard(sub, fam[int(rng.integers(2))], int(rng.integers(2 ** 31)))
            w2 = sample_discard(sub, fam[int(rng.integers(2))], int(rng.integers(2 ** 31)))
            worst = max(worst, verify_no_superluminal(state, w1, w2, discard, cfg.tol))
        checks.append(Check("no-superluminal", f"reduced state independent of discard on {_label(typ)}", A_NSL,
                            worst, cfg.tol))
    return checks


def controlled_shift_state(typ: HigherOrderType) -> Channel:
    """Controlled cyclic shift from pair 0 to pair 1 (a CNOT for qubits); signalling."""
    d0, d1 = typ.dims[0], typ.dims[1]
    rest = int(np.prod(typ.dims[2:])) if typ.n > 2 else 1
    u = np.zeros((d0 * d1, d0 * d1))
    for a in range(d0):
        for b in range(d1):
            u[a * d1 + (a + b) % d1, a * d1 + b] = 1
    u = np.kron(u, np.eye(rest))
    return channel_from_array(unitary_channel(u).matrix, typ.bottoms(), typ.tops())


def suite_affine(cfg: SuiteConfig) -> list[Check]:
    checks = []
    for k, typ in enumerate(_bipartite_types(cfg)):
        worst = 0.0
        for s in derive_seeds(cfg.seed, cfg.trials, 600 + k):
            state = random_nonsignalling_state(typ, s)
            terms = decompose_nonsignalling(NSChannel.from_state(state, cfg.tol), tol=1e-6, max_dim=cfg.max_dim)
            worst = max(worst, float(np.linalg.norm(reconstruct(terms) - state.matrix)))
        checks.append(Check("affine-decomposition", f"affine reconstruction on {_label(typ)}", A_AFFINE,
                            worst, max(cfg.tol, 1e-8)))
        rejected = 0.0
        try:
            NSChannel.from_state(controlled_shift_state(typ), cfg.tol)
        except SignallingInputError:
            rejected = 1.0
        checks.append(Check("affine-decomposition", f"controlled shift rejected as signalling on {_label(typ)}",
                            A_AFFINE, rejected, 0.5, ">"))
    return checks


def load_instance(path: str) -> PurificationInstance:
    with open(path) as fh:
        return PurificationInstance.from_json(json.load(fh))


def suite_purification(cfg: SuiteConfig) -> list[Check]:
    if cfg.instance:
        inst = load_instance(cfg.instance)
    else:
        inst, _ = find_counterexample_instance(2)
    seed = derive_seeds(cfg.seed, 1, 700)[0]
    checks = []
    marg = equal_marginals(inst, environment_effects(inst.d, 8, seed))
    checks.append(Check("purification", "equal system marginals", A_PURIF, marg, cfg.tol,
                        details={"family": inst.family}))
    bad = sum(not is_extremal_state(p) for p in (inst.psi1, inst.psi2))
    checks.append(Check("purification", "both purifications extremal", A_PURIF, bad, 0.5))
    bad = sum(not is_deterministic_state(p, cfg.tol) for p in (inst.psi1, inst.psi2))
    checks.append(Check("purification", "both purifications deterministic", A_PURIF, bad, 0.5))
    res = connector_search(inst.psi1, inst.psi2, cfg.restarts, seed, MEMORY_DIMS)
    checks.append(Check("purification", "no reversible environment comb connects the purifications", A_PURIF,
                        res.residual, 1e-2, ">",
                        details={"restarts": cfg.restarts, "memory_dims": list(MEMORY_DIMS), "best_memory": res.memory}))
    planted = 0.0
    for m in MEMORY_DIMS:
        for b, base in enumerate((inst.psi1, inst.psi2)):
            r0 = ReversibleComb.random(inst.d, m, derive_seeds(seed, 1, 800 + 10 * m + b)[0])
            target = apply_reversible_comb(r0, base)
            planted = max(planted, connector_search(base, target, cfg.restarts, seed, MEMORY_DIMS,
                                                    stop_below=1e-8).residual)
    checks.append(Check("purification", "planted connectors are recovered", A_PURIF, planted, 1e-6))
    u0 = inst.u0.data
    p1, p2 = family_states(inst.family, u0, np.exp(0.7j) * u0)
    control = connector_search(p1, p2, cfg.restarts, seed, MEMORY_DIMS, stop_below=1e-8).residual
    checks.append(Check("purification", "phase-equal unitaries are connectable", A_PURIF, control, 1e-6))
    overlap, points = phase_witness(inst, seed=seed)
    checks.append(Check("purification", "connectable relaxations force equal unitaries up to phase", A_PURIF,
                        1 - overlap if np.isfinite(overlap) else np.inf, 1e-6,
                        details={"points": [[fmt(p.t), fmt(p.overlap), fmt(p.residual)] for p in points]}))
    return checks


RUNNERS: dict[str, Callable[[SuiteConfig], list[Check]]] = {
    "idempotence": suite_idempotence,
    "backwards-signalling": suite_backwards,
    "purity": suite_purity,
    "maxmix": suite_maxmix,
    "equivalence": suite_equivalence,
    "no-superluminal": suite_no_superluminal,
    "affine-decomposition": suite_affine,
    "purification": suite_purification,
}


def run_suite(cfg: SuiteConfig) -> SuiteReport:
    """Run one suite (or all of them, in a fixed order) sequentially."""
    start = time.perf_counter()
    names = SUITES if cfg.suite == ALL else (cfg.suite,)
    checks = []
    for name in names:
        checks.extend(RUNNERS[name](cfg))
    return SuiteReport(cfg.suite, cfg, checks, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def parse_dims(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        raise ConfigError("empty --dims")
    try:
        dims = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"invalid --dims {text!r}") from None
    return dims


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qboxdec", description="Verify hyper-decoherence of higher-order quantum maps.")
    sub = parser.add_subparsers(dest="command", required=True)
    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("suite", help=f"one of {', '.join(SUITES + (ALL,))}")
    v.add_argument("--dims", action="append", type=str,
                   help="pair dimensions of a type, comma separated; repeat for several types (default 2)")
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV} or 0")
    v.add_argument("--tol", type=float, default=1e-9)
    v.add_argument("--restarts", type=int, default=DEFAULT_RESTARTS, help="connector search restarts")
    v.add_argument("--instance", default=None, help="purification instance JSON to re-verify")
    v.add_argument("--allow-large", action="store_true", help=f"lift the Choi dimension bound of {MAX_CHOI_DIM}")
    v.add_argument("--out", default=None, help="write the report here instead of stdout")
    v.add_argument("--format", choices=("json", "text"), default="json")
    i = sub.add_parser("instance", help="search for a purification instance and write it as JSON")
    i.add_argument("--d", type=int, default=2)
    i.add_argument("--seed", type=int, default=None, help="random unitaries from this seed (default: identity and shift)")
    i.add_argument("--out", default=None)
    return parser


def _write(data: bytes, out: Optional[str]):
    if out:
        with open(out, "wb") as fh:
            fh.write(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "instance":
            inst, reports = find_counterexample_instance(args.d, args.seed)
            for r in reports:
                print(f"{r.family}: accepted={r.accepted}", file=sys.stderr)
            _write((inst.dumps() + "\n").encode(), args.out)
            return EXIT_OK
        dims = tuple(parse_dims(d) for d in (args.dims or ["2"]))
        seed = args.seed if args.seed is not None else default_seed()
        cfg = SuiteConfig(args.suite, dims, args.trials, seed, args.tol, args.out, args.allow_large,
                          args.restarts, args.instance)
        if cfg.instance and not os.path.exists(cfg.instance):
            raise ConfigError(f"instance file {cfg.instance!r} not found")
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = run_suite(cfg)
    _write(emit_report(report, args.format), cfg.out)
    if not report.passed:
        failed = [f"[{c.suite}] {c.name}" for c in report.checks if not c.passed]
        print("failed checks: " + "; ".join(failed), file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
