"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""
import subprocess
import sys
import time

import numpy as np
import pytest

from qboxdec.cli import SuiteConfig, controlled_shift_state, emit_report, run_suite
from qboxdec.higherorder import (
    PREP_DISCARD,
    PROCESS_MATRIX,
    HigherOrderType,
    NSChannel,
    SignallingInputError,
    decompose_nonsignalling,
    random_nonsignalling_state,
    reconstruct,
    sample_discard,
    verify_no_superluminal,
)
from qboxdec.hyperdec import (
    FAIL,
    PASS,
    check_purity_copreservation,
    equivalence_residuals,
    hypdec_map,
    pure_preparation_instance,
    purity_search,
    strictness_residual,
    verify_idempotent,
    verify_maxmix_preserved,
    verify_no_backwards_signalling,
)
from qboxdec.purification import (
    MEMORY_DIMS,
    ReversibleComb,
    apply_reversible_comb,
    connector_search,
    environment_effects,
    equal_marginals,
    find_counterexample_instance,
    is_extremal_state,
)
from qboxdec.tensorcore import derive_seeds, haar_unitary, rng_for

T2 = HigherOrderType((2,))
T3 = HigherOrderType((3,))
T22 = HigherOrderType((2, 2))
SEED = 2024


@pytest.fixture
def verdict(capsys):
    def report(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return report


def test_criterion_1_idempotence(verdict):
    start = time.perf_counter()
    res = {t.dims: verify_idempotent(hypdec_map(t)) for t in (T2, T3, T22)}
    elapsed = time.perf_counter() - start
    worst = max(res.values())
    ok = worst < 1e-10 and elapsed < 5
    assert verdict(1, ok, f"max residual {worst:.2e} < 1e-10, {elapsed:.1f} s < 5 s")


def test_criterion_2_no_backwards_signalling(verdict):
    start = time.perf_counter()
    worst = max(verify_no_backwards_signalling(hypdec_map(t), 100, SEED) for t in (T2, T22))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-9 and elapsed < 30
    assert verdict(2, ok, f"100 process-matrix effects per type, max residual {worst:.2e} < 1e-9, "
                          f"{elapsed:.1f} s < 30 s")


def test_criterion_3_purity_copreservation(verdict):
    start = time.perf_counter()
    analytic = []
    for d in (2, 3):
        phi = haar_unitary(d, rng_for(SEED + d))[:, 0]
        for vec in (np.eye(d)[0], phi):
            analytic.append(check_purity_copreservation(pure_preparation_instance(vec, d)))
    counts = purity_search(10_000, SEED, (2, 3))
    elapsed = time.perf_counter() - start
    ok = all(v == PASS for v in analytic) and counts[FAIL] == 0 and elapsed < 60
    assert verdict(3, ok, f"analytic instances {analytic}, 10^4 samples {counts}, {elapsed:.1f} s < 60 s")


def test_criterion_4_maximal_mixedness(verdict):
    res = {t.dims: verify_maxmix_preserved(t) for t in (T2, T3, T22)}
    fixed = max(r[0] for r in res.values())
    image = max(r[1] for r in res.values())
    ok = fixed < 1e-12 and image < 1e-12
    assert verdict(4, ok, f"hypdec residual {fixed:.2e} < 1e-12, F image residual {image:.2e} < 1e-12")


def test_criterion_5_equivalence(verdict):
    start = time.perf_counter()
    worst = {}
    gap = np.inf
    for t in (T2, T22):
        res = equivalence_residuals(100, t.dims, SEED)
        gap = min(gap, res.pop("faithfulness probe distinct inputs"))
        for k, v in res.items():
            worst[k] = max(worst.get(k, 0.0), v)
    elapsed = time.perf_counter() - start
    identity = worst["F(hypdec) = identity"]
    rest = max(v for k, v in worst.items() if k != "F(hypdec) = identity")
    ok = rest < 1e-9 and identity < 1e-12 and gap > 1e-3 and elapsed < 60
    assert verdict(5, ok, f"100 trials per check on [2] and [2,2], max residual {rest:.2e} < 1e-9, "
                          f"F(hypdec) residual {identity:.2e}, {elapsed:.1f} s < 60 s")


def test_criterion_6_no_superluminal_and_affine(verdict):
    worst_nsl = 0.0
    fams = (PROCESS_MATRIX, PREP_DISCARD)
    for s in derive_seeds(SEED, 100, 1):
        rng = rng_for(s)
        state = random_nonsignalling_state(T22, int(rng.integers(2 ** 31)))
        pair = int(rng.integers(2))
        w1 = sample_discard(T2, fams[int(rng.integers(2))], int(rng.integers(2 ** 31)))
        w2 = sample_discard(T2, fams[int(rng.integers(2))], int(rng.integers(2 ** 31)))
        worst_nsl = max(worst_nsl, verify_no_superluminal(state, w1, w2, [pair]))
    worst_affine = 0.0
    for s in derive_seeds(SEED, 100, 2):
        state = random_nonsignalling_state(T22, s)
        terms = decompose_nonsignalling(NSChannel.from_state(state))
        worst_affine = max(worst_affine, float(np.linalg.norm(reconstruct(terms) - state.matrix)))
    try:
        NSChannel.from_state(controlled_shift_state(T22))
        rejected = False
    except SignallingInputError:
        rejected = True
    ok = worst_nsl < 1e-9 and worst_affine < 1e-8 and rejected
    assert verdict(6, ok, f"reduced-state residual {worst_nsl:.2e} < 1e-9, affine residual {worst_affine:.2e} "
                          f"< 1e-8, CNOT rejected: {rejected}")


def test_criterion_7_purification_non_uniqueness(verdict):
    start = time.perf_counter()
    inst, _ = find_counterexample_instance(2)
    marg = equal_marginals(inst, environment_effects(2, 20, SEED))
    extremal = is_extremal_state(inst.psi1) and is_extremal_state(inst.psi2)
    search = connector_search(inst.psi1, inst.psi2, 50, SEED, MEMORY_DIMS)
    planted = 0.0
    for m in MEMORY_DIMS:
        for k, base in enumerate((inst.psi1, inst.psi2)):
            target = apply_reversible_comb(ReversibleComb.random(2, m, SEED + 10 * m + k), base)
            planted = max(planted, connector_search(base, target, 50, SEED, MEMORY_DIMS, stop_below=1e-8).residual)
    elapsed = time.perf_counter() - start
    ok = marg < 1e-9 and extremal and search.residual > 1e-2 and planted < 1e-6 and elapsed < 300
    assert verdict(7, ok, f"family {inst.family}: marginals {marg:.2e} < 1e-9, extremal {extremal}, "
                          f"connector residual {search.residual:.3f} > 1e-2 over 50 restarts (memory <= 4), "
                          f"planted {planted:.2e} < 1e-6, {elapsed:.1f} s < 300 s")


def test_criterion_8_strictness(verdict):
    types = [T2, T3, T22, HigherOrderType((1, 2)), HigherOrderType((2, 3))]
    res = {t.dims: strictness_residual(t) for t in types}
    low = min(res.values())
    ok = low > 0.5
    assert verdict(8, ok, f"min ||J(hypdec) - J(id)|| {low:.3f} > 0.5 over {sorted(res)}")


def test_criterion_9_determinism(verdict, tmp_path):
    argv = ["verify", "all", "--dims", "2", "--dims", "2,2", "--trials", "10", "--seed", str(SEED), "--restarts", "8"]
    outputs = []
    for k in range(2):
        path = tmp_path / f"run{k}.json"
        subprocess.run([sys.executable, "-m", "qboxdec", *argv, "--out", str(path)], check=False)
        outputs.append(path.read_bytes())
    cfg = SuiteConfig("all", dims=((2,), (2, 2)), trials=10, seed=SEED, restarts=8)
    outputs.append(emit_report(run_suite(cfg)))
    ok = len(outputs[0]) > 0 and len(set(outputs)) == 1
    assert verdict(9, ok, f"two `verify all` processes and one in-process run, {len(outputs[0])} bytes, "
                          f"identical: {ok}")
