"""Report assembly for a problem spec, and the randomized cross-condition sweep."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import kernels
from .certify import (
    CT,
    DT,
    coupling_matrix,
    block_scaled_certificate,
    complex_condition,
    frequency_condition,
    global_lyapunov,
    lyapunov_condition,
    max_rate,
    mode_matrices,
    rate_verdict,
    real_condition,
)
from .errors import (
    AmbiguousNullSpaceError,
    NonCoprimeError,
    SyncCertError,
)
from .graph import build_laplacian, left_null_vector
from .problem import ProblemSpec, random_problem
from .simulate import (
    envelope_check,
    fit_rate,
    lyapunov_decrease_check,
    simulate,
)
from .spectral import laplacian_spectrum

ENVELOPE_M_FACTOR = 1.05


def _floats(a):
    return [float(x) for x in np.asarray(a).ravel()]


def _cplx(z):
    return [float(np.real(z)), float(np.imag(z))]


def analyze(spec: ProblemSpec) -> dict:
    """Spectrum, every enabled condition with its verdict, and the global certificate."""
    agent, mode, alpha = spec.agent, spec.mode, spec.alpha_star
    lap = build_laplacian(spec.graph)
    lm = coupling_matrix(agent, lap)
    spectrum = laplacian_spectrum(lm)
    modes = mode_matrices(agent, spectrum)
    alpha_max = max_rate(agent, spectrum, mode)
    verdict = rate_verdict(alpha_max, alpha, mode)

    try:
        p = left_null_vector(lap)
        centrality = {"p": _floats(p.entries)}
    except AmbiguousNullSpaceError as exc:
        centrality = {"p": None, "error": str(exc), "null_dimension": exc.dimension}

    cverd, cmarg = complex_condition(modes, alpha, mode)
    rverd, rmarg = real_condition(modes, alpha, mode)
    lverd, certs = lyapunov_condition(modes, alpha, mode)
    conditions = {
        "complex": {"verdict": cverd, "margins": _floats(cmarg)},
        "real": {"verdict": rverd, "margins": _floats(rmarg)},
        "lyapunov": {
            "verdict": lverd,
            "certificates": [c.to_json() if c is not None else None for c in certs],
        },
    }
    if mode == CT:
        try:
            fverd, roots = frequency_condition(agent, spectrum, alpha)
            conditions["frequency"] = {
                "verdict": fverd,
                "roots": [[_cplx(r) for r in rts] for rts in roots],
            }
        except NonCoprimeError as exc:
            conditions["frequency_skipped"] = str(exc)
    consistent = all(c["verdict"] == verdict for c in conditions.values() if isinstance(c, dict))

    report = {
        "instance": spec.to_json(),
        "backend": kernels.BACKEND,
        "mode": mode,
        "alpha_star": alpha,
        "coupling": "L" if agent.d == 0 else "L_d",
        "centrality": centrality,
        "spectrum": spectrum.to_json(),
        "modes": [
            {"k": mm.k, "lambda": _cplx(mm.lambda_k), "margin": float(m)}
            for mm, m in zip(modes, cmarg)
        ],
        "conditions": conditions,
        "alpha_max": alpha_max,
        "verdict": verdict,
        "consistent": consistent,
        "global_certificate": None,
    }
    if verdict:
        report["global_certificate"] = global_lyapunov(agent, lap, alpha, mode).to_json()
    report["exit_status"] = 0 if verdict else 2
    return report


def default_horizon(mode: str, alpha_used: float | None) -> float:
    if mode == DT:
        if alpha_used is None or not 0 < alpha_used < 1:
            return 40
        return int(min(200, max(20, math.ceil(math.log(1e-9) / math.log(alpha_used)))))
    if alpha_used is None or alpha_used <= 0:
        return 10.0
    return float(min(30.0, max(1.0, 10.0 / alpha_used)))


def run_simulation(spec: ProblemSpec, *, exact: bool = False, horizon=None, dt=None,
                   certificate=None):
    """Simulate a problem; returns (trace, report section)."""
    agent, mode, alpha = spec.agent, spec.mode, spec.alpha_star
    lap = build_laplacian(spec.graph)
    if certificate is None:
        try:
            certificate = global_lyapunov(agent, lap, alpha, mode)
        except SyncCertError:
            certificate = None
    alpha_used = certificate.alpha_used if certificate is not None else None
    if horizon is None:
        horizon = spec.sim.horizon or default_horizon(mode, alpha_used)
    dt = dt if dt is not None else spec.sim.dt
    try:
        p = left_null_vector(lap)
    except AmbiguousNullSpaceError:
        p = None
    x0 = spec.initial_state()
    trace = simulate(agent, lap, x0, horizon, dt, certificate=certificate, p=p, exact=exact)
    section = {
        "horizon": float(horizon),
        "dt": float(trace.times[1] - trace.times[0]) if trace.times.size > 1 else None,
        "samples": int(trace.times.size),
        "diverged": trace.diverged,
        "fit": None,
        "envelope": None,
        "certificate_envelope": None,
        "lyapunov_decrease": None,
    }
    fit = None
    try:
        fit = fit_rate(trace)
        section["fit"] = fit.to_json()
    except ValueError as exc:
        section["fit_error"] = str(exc)
    if fit is not None and not trace.diverged:
        M = fit.M_fit * ENVELOPE_M_FACTOR
        ok, worst = envelope_check(trace, alpha, M)
        section["envelope"] = {"alpha": alpha, "M": M, "ok": ok, "worst_ratio": worst}
    if certificate is not None and not trace.diverged:
        m_cert = math.sqrt(certificate.c2 / certificate.c1) * (1 + 1e-6)
        ok, worst = envelope_check(trace, certificate.alpha_used, m_cert)
        section["certificate_envelope"] = {
            "alpha": certificate.alpha_used, "M": m_cert, "ok": ok, "worst_ratio": worst,
        }
        ok, worst = lyapunov_decrease_check(trace, certificate.alpha_used)
        section["lyapunov_decrease"] = {"ok": ok, "worst_ratio": worst}
    if trace.reference is not None and trace.times.size and not trace.diverged:
        blocks = trace.states[-1].reshape(trace.N, trace.n)
        section["ivp_final_error"] = float(np.max(np.linalg.norm(blocks - trace.reference[-1], axis=1)))
    return trace, section


def simulate_report(spec: ProblemSpec, *, exact: bool = False):
    report = analyze(spec)
    cert = None
    if report["verdict"]:
        cert = global_lyapunov(spec.agent, build_laplacian(spec.graph), spec.alpha_star, spec.mode)
    trace, section = run_simulation(spec, exact=exact, certificate=cert)
    report["simulation"] = section
    failed = trace.diverged or not report["verdict"]
    for key in ("envelope", "certificate_envelope", "lyapunov_decrease"):
        if report["verdict"] and section.get(key) is not None and not section[key]["ok"]:
            failed = True
    report["exit_status"] = 2 if failed else 0
    return report, trace


# -- sweep ----------------------------------------------------------------------

def sweep_alphas(alpha_max: float, mode: str) -> list[float]:
    """{0 | 0.05, alpha_max / 2, 2 alpha_max}, clipped into the mode's domain."""
    if mode == CT:
        raw = [0.0, 0.5 * alpha_max, 2.0 * alpha_max]
        return [float(max(0.0, a)) for a in raw]
    raw = [0.05, 0.5 * alpha_max, 2.0 * alpha_max]
    return [float(min(1.0, max(0.05, a))) for a in raw]


def check_instance(spec: ProblemSpec, *, simulate_true: bool = True) -> dict:
    """Run every condition at each sweep rate; list any disagreement."""
    agent, mode = spec.agent, spec.mode
    lap = build_laplacian(spec.graph)
    lm = coupling_matrix(agent, lap)
    spectrum = laplacian_spectrum(lm)
    modes = mode_matrices(agent, spectrum)
    alpha_max = max_rate(agent, spectrum, mode)
    minimal = agent.is_minimal()
    rows = []
    failures = []
    for alpha in sweep_alphas(alpha_max, mode):
        expected = rate_verdict(alpha_max, alpha, mode)
        verdicts = {
            "complex": complex_condition(modes, alpha, mode)[0],
            "real": real_condition(modes, alpha, mode)[0],
            "lyapunov": lyapunov_condition(modes, alpha, mode)[0],
        }
        if mode == CT and minimal:
            verdicts["frequency"] = frequency_condition(agent, spectrum, alpha)[0]
        row = {"alpha_star": alpha, "expected": expected, "verdicts": verdicts}
        for name, v in verdicts.items():
            if v != expected:
                failures.append(f"alpha_star={alpha!r}: {name} condition says {v}, rate test says {expected}")
        if expected and simulate_true:
            try:
                cert = global_lyapunov(agent, lap, alpha, mode)
                _, halvings, _ = block_scaled_certificate(agent, lap, alpha, mode)
                row["block_scaling_halvings"] = halvings
                _, sim = run_simulation(spec.with_alpha(alpha), certificate=cert)
                row["simulation"] = {
                    k: sim[k] for k in ("envelope", "certificate_envelope", "lyapunov_decrease", "diverged")
                }
                if sim["diverged"]:
                    failures.append(f"alpha_star={alpha!r}: certified instance diverged in simulation")
                for key in ("envelope", "certificate_envelope", "lyapunov_decrease"):
                    if sim[key] is not None and not sim[key]["ok"]:
                        failures.append(f"alpha_star={alpha!r}: {key} check failed ({sim[key]['worst_ratio']:.6g})")
            except SyncCertError as exc:
                failures.append(f"alpha_star={alpha!r}: certificate construction failed: {exc}")
        rows.append(row)
    return {
        "mode": mode,
        "N": spec.graph.node_count,
        "n": agent.n,
        "alpha_max": alpha_max,
        "checks": rows,
        "failures": failures,
    }


def generate_instances(count: int, seed: int, nmax: int = 6, sizemax: int = 3) -> list[ProblemSpec]:
    children = np.random.SeedSequence(seed).spawn(count)
    return [random_problem(np.random.default_rng(c), nmax, sizemax) for c in children]


def run_sweep(specs, workers: int = 1, simulate_true: bool = True) -> dict:
    """Check every spec; the summary is deterministic for a fixed input list."""
    def one(spec):
        return check_instance(spec, simulate_true=simulate_true)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, specs))
    else:
        results = [one(s) for s in specs]
    disagreements = []
    true_checks = 0
    total_checks = 0
    for i, (spec, res) in enumerate(zip(specs, results)):
        for row in res["checks"]:
            total_checks += 1
            true_checks += bool(row["expected"])
        if res["failures"]:
            disagreements.append({"index": i, "failures": res["failures"], "instance": spec.to_json()})
    by_mode = {m: sum(1 for r in results if r["mode"] == m) for m in (CT, DT)}
    return {
        "instances": len(specs),
        "by_mode": by_mode,
        "checks": total_checks,
        "true_verdicts": true_checks,
        "disagreements": len(disagreements),
        "failures": disagreements,
        "backend": kernels.BACKEND,
    }
