"""Command line entry points.

Subcommands: ``sample``, ``build-nf``, ``check-nf``, ``evolve``, ``drift`` and
``verify-lemma``.  Reports go to stdout as JSON; bulk data goes to ``--out``.
"""
from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import dynamics, gibbs, harness, normal_form
from .fourier_state import ModelParams, load_state


def _coeffs(text: str, q: int | None) -> tuple[float, ...]:
    c = tuple(float(x) for x in text.split(",") if x.strip())
    if q is not None and len(c) != q - 1:
        raise SystemExit(f"--c must list q-1 = {q - 1} coefficients c_2..c_q, got {len(c)}")
    return c


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(type(o).__name__)


def _emit(obj) -> None:
    print(json.dumps(obj, default=_json_default, indent=2))


def cmd_sample(a) -> int:
    params = ModelParams(_coeffs(a.c, a.q), a.beta, a.truncation)
    cfg = gibbs.SamplerConfig(params, seed=a.seed, method=a.method, n_samples=a.n,
                              workers=a.workers)
    batch = gibbs.draw(cfg)
    gibbs.write_samples(a.out, batch, beta_hint=a.beta)
    w = batch.weights
    _emit({"out": a.out, "method": batch.method, "n": len(batch),
           "ess": float(w.sum() ** 2 / np.sum(w * w)),
           "mean_weight": float(np.exp(batch.log_weight).mean())})
    return 0


def cmd_build_nf(a) -> int:
    params = ModelParams(_coeffs(a.c, None), a.beta, a.n)
    if a.delta == "auto":
        cut = normal_form.CutoffSpec.auto(a.beta)
    else:
        cut = normal_form.CutoffSpec(float(a.delta), a.beta)
    pkg = normal_form.build_package(a.n, a.tk, params, cut)
    normal_form.save_package(a.out, pkg)
    _emit(pkg.summary())
    return 0


def cmd_check_nf(a) -> int:
    pkg = normal_form.load_package(a.package)
    params = pkg.params
    beta = pkg.cutoff.beta or params.beta
    states = gibbs.sample_gaussian(gibbs.SamplerConfig(params.with_beta(beta), seed=a.seed,
                                                      n_samples=a.samples))
    report = {"package": pkg.summary(),
              "homological": normal_form.homological_residues(pkg),
              "nonres_max_relative": float(np.max(normal_form.nonres_residual(pkg, states)))
              if pkg.resonance_count else 0.0,
              "admissibility": normal_form.admissibility_tags(pkg)}
    dec = normal_form.derivative_decomposition_check(pkg, states[: min(20, len(states))], params)
    report["decomposition"] = {"median_exponent": dec.median_exponent,
                               "modulated_residue": dec.modulated_residue,
                               "degenerate": dec.degenerate, "pass": dec.passed}
    report["pass"] = bool(max(report["homological"].values()) < 1e-12
                          and report["nonres_max_relative"] < 1e-10 and dec.passed)
    _emit(report)
    return 0 if report["pass"] else 1


def cmd_evolve(a) -> int:
    state = load_state(a.state)
    N = state.N
    params = ModelParams(_coeffs(a.c, None), a.beta, N)
    k_max = N if a.k_max is None else min(a.k_max, N)
    obs = dynamics.action_observables(range(-k_max, k_max + 1))
    phi_name = None
    if a.phi:
        pkg = normal_form.load_package(a.phi)
        phi_name = f"phi6_{pkg.tk}"
        phi = pkg.phi6_fast
        obs[phi_name] = lambda s: phi.evaluate(s).reshape(np.shape(s)[:-1])
    cfg = dynamics.IntegratorConfig(dt=a.dt, t_end=a.t_end, observe_every=a.observe)
    traj = dynamics.evolve(state, cfg, params, observables=obs)
    dynamics.write_trajectory_csv(a.out, traj, k_max, N, phi_name)
    _emit({"out": a.out, "steps": int(round(a.t_end / abs(traj.dt))) if traj.dt else 0,
           "conservation": dynamics.conservation_report(traj).as_dict()})
    return 0


def cmd_drift(a) -> int:
    cfg = harness.ExperimentConfig.from_toml(a.config)
    exp = harness.run_drift_experiment(cfg, modes_all=a.all_modes,
                                       progress=lambda m: print(m, file=sys.stderr))
    exp.to_csv(a.out)
    summary = {"out": a.out, "runs": []}
    for run in exp.runs:
        s = run.summary()
        s["chebyshev"] = {k: [r.as_dict() for r in harness.chebyshev_reports(run, k)]
                          for k in run.phi_dot_norm}
        if a.all_modes:
            s["corollary"] = harness.corollary_all_modes(run.records, cfg.alpha, cfg.eta1,
                                                         cfg.eta2).as_dict()
        summary["runs"].append(s)
    _emit(summary)
    return 0


def cmd_verify_lemma(a) -> int:
    cfg = harness.ExperimentConfig.from_toml(a.config)
    verdict = harness.verify_lemma(a.lemma, cfg)
    _emit(verdict)
    return 0 if verdict["pass"] else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlsgibbs", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="draw Gaussian or Gibbs samples to JSON lines")
    s.add_argument("--beta", type=float, required=True)
    s.add_argument("--n", type=int, required=True, help="number of samples")
    s.add_argument("--q", type=int, default=None, help="degree of F (checked against --c)")
    s.add_argument("--c", default="1.0", help="comma separated c_2,...,c_q")
    s.add_argument("--truncation", "-N", type=int, default=8, help="modes |k| <= N")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--method", choices=gibbs.METHODS, default="importance-weights")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    b = sub.add_parser("build-nf", help="construct and serialise the normal-form package")
    b.add_argument("--n", type=int, required=True, help="truncation N")
    b.add_argument("--tk", type=int, required=True)
    b.add_argument("--beta", type=float, required=True)
    b.add_argument("--delta", default="auto", help="'auto' for beta^(-13/10) or a number")
    b.add_argument("--c", default="1.0")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_nf)

    c = sub.add_parser("check-nf", help="verify the identities of a saved package")
    c.add_argument("package")
    c.add_argument("--samples", type=int, default=100)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_check_nf)

    e = sub.add_parser("evolve", help="integrate one state and write a CSV trajectory")
    e.add_argument("--state", required=True)
    e.add_argument("--dt", type=float, default=None)
    e.add_argument("--t-end", type=float, required=True)
    e.add_argument("--observe", type=int, default=1, help="steps between observations")
    e.add_argument("--c", default="1.0")
    e.add_argument("--beta", type=float, default=1.0, help="only recorded, the flow ignores it")
    e.add_argument("--k-max", type=int, default=None)
    e.add_argument("--phi", default=None, help="package JSON adding a phi6_<tk> column")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evolve)

    d = sub.add_parser("drift", help="run a drift experiment from a TOML config")
    d.add_argument("--config", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--all-modes", action="store_true", help="record every mode (corollary)")
    d.set_defaults(func=cmd_drift)

    v = sub.add_parser("verify-lemma", help="run one named bound check")
    v.add_argument("lemma", choices=harness.LEMMAS)
    v.add_argument("--config", required=True)
    v.set_defaults(func=cmd_verify_lemma)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
