"""Acceptance suite.

Each test checks one criterion at its stated tolerance and prints a single
``ACCEPTANCE <k> PASS|FAIL`` line.  Runs shared between criteria are
computed once per session.
"""

import math
import subprocess
import sys

import numpy as np
import pytest

from conftest import audit_system, random_spectrum_matrix
from stabkit.aedc import adjoint_split, kato_projection, split_spectral, validate_aedc
from stabkit.gramian import (check_exact_controllability, synthesize_feedback_KT,
                             verify_observability_constants)
from stabkit.hautus import equivalence_audit, sweep_halfplane
from stabkit.models import (build_fractional_model, build_heat_dirichlet,
                            fractional_hautus_bound)
from stabkit.operators import ControlSystem, dumps_system
from stabkit.pipeline import certify_l2, stabilize

pytestmark = pytest.mark.acceptance


def verdict(capsys, k, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {k} {'PASS' if ok else 'FAIL'}: {detail}")


# -- shared runs ------------------------------------------------------------------

@pytest.fixture(scope="session")
def gramian_runs():
    """50 exactly controllable pairs with entries in [-2, 2] at three rates."""
    rng = np.random.default_rng(1)
    pairs = []
    while len(pairs) < 50:
        n = int(rng.integers(1, 9))
        m = int(rng.integers(1, 4))
        A = rng.uniform(-2, 2, (n, n))
        B = rng.uniform(-2, 2, (n, m))
        if check_exact_controllability(A, B)["controllable"]:
            pairs.append((A, B))
    runs = []
    for k, (A, B) in enumerate(pairs):
        for alpha in (0.5, 1.0, 2.0):
            try:
                fb = synthesize_feedback_KT(A, B, alpha, seed=k)
            except Exception as exc:
                runs.append((A, B, alpha, None, exc))
            else:
                runs.append((A, B, alpha, fb, None))
    return runs


@pytest.fixture(scope="session")
def audit_runs():
    rng = np.random.default_rng(5)
    out = []
    for i in range(100):
        sys_, alpha = audit_system(rng, i)
        out.append((sys_, alpha, equivalence_audit(sys_, alpha, seed=i)))
    return out


@pytest.fixture(scope="session")
def heat_runs():
    return {N: stabilize(build_heat_dirichlet(N).sys, 5.0) for N in (16, 32, 64)}


# -- criteria -----------------------------------------------------------------------

def test_1_gramian_feedback_decay(capsys, gramian_runs):
    certified = [(A, B, a, fb) for A, B, a, fb, exc in gramian_runs if fb is not None]
    bad = [a for A, B, a, fb in certified
           if np.max(np.linalg.eigvals(A + B @ fb.K).real) > -a + 0.05]
    ok = bool(certified) and not bad
    verdict(capsys, 1, ok, f"{len(certified)}/{len(gramian_runs)} runs certified, "
            f"{len(bad)} with abscissa above -alpha + 0.05")
    assert ok


def test_2_equivalence_audit(capsys, audit_runs):
    disagree = [i for i, (_, _, r) in enumerate(audit_runs) if not r.agree]
    aligns = [r.witness_alignment for _, _, r in audit_runs if r.witness_alignment is not None]
    negatives = sum(not r.pbh.passed for _, _, r in audit_runs)
    gammas = {s.gamma >= 0.5 for s, _, _ in audit_runs}
    worst = max(aligns) if aligns else 0.0
    ok = not disagree and worst <= 1e-6 and gammas == {False, True}
    verdict(capsys, 2, ok, f"{100 - len(disagree)}/100 agree ({negatives} negative), "
            f"max witness misalignment {worst:.2e}, disagreements {disagree}")
    assert ok


def test_3_aedc_machinery(capsys):
    rng = np.random.default_rng(3)
    failed, kato, adj = 0, 0.0, 0.0
    for _ in range(100):
        n = int(rng.integers(2, 9))
        alpha = float(rng.uniform(0.3, 2.0))
        A = random_spectrum_matrix(rng, n, alpha, gap=0.1)
        split = split_spectral(A, alpha)
        failed += not validate_aedc(A, split).passed
        kato = max(kato, np.linalg.norm(kato_projection(A, alpha) - split.P, 2))
        # independent split of A* against the adjoint of the split of A
        P_star = split_spectral(A.conj().T, alpha).P
        adj = max(adj, np.linalg.norm(P_star - split.P.conj().T, 2),
                  np.linalg.norm(adjoint_split(split, A).P - P_star, 2))
    ok = failed == 0 and kato <= 1e-6 and adj <= 1e-8
    verdict(capsys, 3, ok, f"{100 - failed}/100 validated, Kato deviation {kato:.2e}, "
            f"adjoint deviation {adj:.2e}")
    assert ok


def test_4_heat_model(capsys, heat_runs):
    norms = {N: r.report["K_raw_norm"] for N, r in heat_runs.items()}
    rates = {N: r.report["fitted_rate"] for N, r in heat_runs.items()}
    duh = {N: r.report["duhamel_residual"] for N, r in heat_runs.items()}
    spread = max(norms.values()) / min(norms.values())
    ok = (all(r.report["passed"] for r in heat_runs.values()) and spread < 2
          and max(rates.values()) <= -4.9 and max(duh.values()) <= 1e-6)
    verdict(capsys, 4, ok, f"||K|| {[round(v, 3) for v in norms.values()]} (spread {spread:.3f}), "
            f"rates {[round(v, 3) for v in rates.values()]}, Duhamel max {max(duh.values()):.1e}")
    assert ok


def test_5_fractional_model(capsys):
    rows, ok = [], True
    for s in (0.0, 0.5, 0.75):
        coarse = build_fractional_model(128, s).sys
        fine = build_fractional_model(256, s).sys
        for alpha in (0.5, 1.0, 2.0):
            m1 = sweep_halfplane(coarse, alpha)
            m2 = sweep_halfplane(fine, alpha)
            ratio = m2.min_margin / m1.min_margin if m1.min_margin > 0 else math.inf
            ok &= m1.passed and m2.passed and 0.5 <= ratio <= 2
            rows.append(ratio)
    empty = build_fractional_model(128, 0.5, mask=np.zeros(128, bool)).sys
    off = max(sweep_halfplane(empty, a).min_margin for a in (0.5, 1.0, 2.0))
    # grid-scan oracle for the analytic bound, independent of the module's scan
    r = np.concatenate([np.linspace(2.0, 12.0, 400001), np.geomspace(12.0, 1e6, 10001)])
    scan = np.min((r - 1.0) / np.sqrt(1 + r)) ** 2
    bound = fractional_hautus_bound(0.5, 1.0)
    ok &= off <= 1e-8 and abs(bound - 1 / 3) <= 1e-10 and abs(bound - scan) <= 1e-10
    verdict(capsys, 5, ok, f"n 128 -> 256 margin ratios in [{min(rows):.4f}, {max(rows):.4f}], "
            f"empty-mask margin {off:.1e}, C(0.5, 1) = {bound:.12f}")
    assert ok


def test_6_constants_soundness(capsys, gramian_runs, audit_runs, heat_runs):
    cases = [(A, B, fb.constants) for A, B, _, fb, _ in gramian_runs if fb is not None]
    for res in [r.stabilization for _, _, r in audit_runs] + list(heat_runs.values()):
        if res is not None and res.feedback.gramian is not None:
            pp = res.feedback.projected
            cases.append((pp.A1, pp.B1, res.feedback.gramian.constants))
    bad = 0
    for k, (A, B, c) in enumerate(cases):
        good, _ = verify_observability_constants(A, B, c, n_probes=64, refine=4,
                                                 seed=900_000 + k, slack=1e-8)
        bad += not good
    ok = bad == 0 and bool(cases)
    verdict(capsys, 6, ok, f"{len(cases) - bad}/{len(cases)} certified (D1, D2) re-verified "
            "on fresh probes over a 4x grid")
    assert ok


def test_7_l2_trajectories(capsys, audit_runs, heat_runs):
    results = [r.stabilization for _, _, r in audit_runs if r.stabilize_ok]
    results += [r for r in heat_runs.values() if r.report["passed"]]
    checks = [certify_l2(res.trajectory) for res in results]
    bad = [c for c in checks if not (c["in_l2"] and c["tail_ratio"] < 1)]
    worst = max(c["tail_ratio"] for c in checks)
    ok = bool(results) and not bad
    verdict(capsys, 7, ok, f"{len(results) - len(bad)}/{len(results)} successful runs in L2, "
            f"worst tail ratio {worst:.3g}")
    assert ok


def _cli(out, *args):
    return subprocess.run([sys.executable, "-m", "stabkit", *args, "--out", str(out)],
                          capture_output=True, text=True)


def test_8_determinism(capsys, tmp_path):
    rng = np.random.default_rng(8)
    A = random_spectrum_matrix(rng, 5, 1.0)
    sysfile = tmp_path / "system.json"
    sysfile.write_text(dumps_system(ControlSystem(A, rng.standard_normal((5, 2)), gamma=0.6)))
    commands = [
        ("audit", "--model", "heat", "--N", "16", "--alpha", "5"),
        ("sweep", "--model", "fractional", "--n-grid", "64", "--alpha", "1"),
        ("simulate", "--model", "heat", "--N", "32", "--alpha", "5", "--seed", "3"),
        ("synthesize", "--system", str(sysfile), "--alpha", "1", "--seed", "11"),
        ("audit", "--system", str(sysfile), "--alpha", "1", "--seed", "11"),
    ]
    compared, mismatched, codes = 0, [], []
    for k, cmd in enumerate(commands):
        runs = [tmp_path / f"c{k}" / f"run{j}" for j in range(2)]
        codes += [_cli(out, *cmd).returncode for out in runs]
        for f in sorted(runs[0].glob("*.csv")):
            compared += 1
            if f.read_bytes() != (runs[1] / f.name).read_bytes():
                mismatched.append(f"{cmd[0]}:{f.name}")
    ok = compared > 0 and not mismatched and set(codes) == {0}
    verdict(capsys, 8, ok, f"{compared - len(mismatched)}/{compared} CSV files byte-identical "
            f"across reruns, exit codes {sorted(set(codes))}")
    assert ok
