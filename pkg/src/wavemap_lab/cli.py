"""Command-line front end: ``wavemap-lab {analyze,shoot,minimize,evolve,dossier}``.

Each subcommand reads an optional config file (see :mod:`wavemap_lab.config`),
writes its reports under the output directory together with the resolved
config (``config.resolved.ini``), and exits with 0 on success, 1 on a
computational failure and 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
from scipy.optimize import bisect
from threadpoolctl import threadpool_limits

from . import energy as en
from . import profiles as pr
from . import stability as st
from . import wave as wv
from .config import ExperimentConfig, load_config
from .errors import ComputationError, ConfigError, ProfileNotMatching, WavemapError

EXIT_OK, EXIT_COMPUTE, EXIT_CONFIG = 0, 1, 2


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, payload):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(payload), fh, indent=2, allow_nan=False)
        fh.write("\n")


def _outdir(cfg: ExperimentConfig, sub=None):
    out = Path(cfg["run"]["out"])
    if sub:
        out = out / sub
    out.mkdir(parents=True, exist_ok=True)
    return out


def _header(cfg):
    m = cfg.metric()
    return {"metric": m.params(), "d": cfg.cls.d, "ell": cfg.cls.ell, "k": cfg.cls.k}


# --- subcommands -------------------------------------------------------------------

def cmd_analyze(cfg: ExperimentConfig, sub=None):
    """Local equator criterion; writes ``criterion.json``."""
    metric, cls = cfg.metric(), cfg.cls
    rep = st.local_criterion(metric, cls, basis_size=cfg["analyze"]["basis_size"])
    payload = {**_header(cfg), **rep.to_dict(),
               "jager_kaul_threshold": st.jager_kaul_threshold(cls.d)}
    write_json(_outdir(cfg, sub) / "criterion.json", payload)
    return payload


def cmd_shoot(cfg: ExperimentConfig, sub=None, bracket=None):
    """Shooting for a smooth profile; writes ``profile.json`` (+ ``profile.csv``).

    ``NotFound`` is a successful outcome carrying ``verdict = "NotFound"``.
    """
    metric, cls = cfg.metric(), cfg.cls
    sh = cfg["shoot"]
    bracket = tuple(sh["alpha_bracket"] if bracket is None else bracket)
    res = pr.shoot_smooth_profile(metric, cls, bracket, n_scan=sh["n_scan"])
    out = _outdir(cfg, sub)
    if isinstance(res, pr.NotFound):
        payload = {**_header(cfg), **res.to_dict()}
        write_json(out / "profile.json", payload)
        return payload, None
    ep = pr.classify_endpoint(res)
    res.endpoint = ep
    res.write_csv(out / "profile.csv")
    payload = {**_header(cfg), **res.to_dict(), "verdict": "Found",
               "endpoint": ep.to_dict(), "bracket": list(bracket)}
    write_json(out / "profile.json", payload)
    return payload, res


def _ee_alpha(cfg, metric):
    a = cfg["minimize"]["alpha"]
    return metric.phi_star if a == "equator" else float(a)


def _eh_init(cfg, metric, seed):
    kind = cfg["minimize"]["eh_init"]
    if kind == "ramp":
        return lambda r: metric.phi_star * np.asarray(r)
    if kind == "equator":
        return "equator"
    return en.equator_perturbations(metric, 1, seed, cfg["minimize"]["amplitude"])[0]


def cmd_minimize(cfg: ExperimentConfig, sub=None):
    """Descent on ``E_e`` and/or ``E_h``; writes ``ee.json``/``eh.json`` and CSVs.

    A run stopped by the iteration cap is still reported (``converged``
    false) rather than failing the command.
    """
    metric, cls = cfg.metric(), cfg.cls
    mn = cfg["minimize"]
    seed = cfg["run"]["seed"]
    out = _outdir(cfg, sub)
    payload = dict(_header(cfg))
    if mn["functional"] in ("ee", "both"):
        alpha = _ee_alpha(cfg, metric)
        init = "equator" if mn["ee_init"] == "equator" else None
        rep = en.minimize_ee(metric, cls, alpha, grid=mn["n_nodes"], init=init,
                             tol=mn["tol"], max_iter=mn["max_iter"], seed=seed,
                             raise_on_fail=False)
        rep.write_json(out / "ee.json")
        rep.write_csv(out / "ee.csv")
        payload["ee"] = rep.to_dict()
    if mn["functional"] in ("eh", "both"):
        rep = en.minimize_eh(metric, cls, _eh_init(cfg, metric, seed), grid=mn["n_nodes"],
                             tol=mn["tol"], max_iter=mn["max_iter"], seed=seed,
                             raise_on_fail=False)
        rep.write_json(out / "eh.json")
        rep.write_csv(out / "eh.csv")
        payload["eh"] = rep.to_dict()
    write_json(out / "minimize.json", payload)
    return payload


def _glued_profile(cfg):
    res = pr.shoot_smooth_profile(cfg.metric(), cfg.cls, tuple(cfg["shoot"]["alpha_bracket"]),
                                  n_scan=cfg["shoot"]["n_scan"])
    if isinstance(res, pr.NotFound):
        raise ProfileNotMatching("no smooth profile in the alpha bracket; "
                                 "self-similar data cannot be built")
    return res


def cmd_evolve(cfg: ExperimentConfig, sub=None):
    """Evolve the configured data; writes ``ledger.jsonl``, ``evolve.json`` and
    optionally ``trajectory.csv``."""
    metric, cls = cfg.metric(), cfg.cls
    ev = cfg["evolve"]
    out = _outdir(cfg, sub)
    grid = wv.RadialGrid.with_spacing(ev["r_max"], ev["dr"])
    t0, t1 = ev["t0"], ev["t_end"]
    dt = ev["dt"] if ev["dt"] > 0 else None
    payload = {**_header(cfg), "data": ev["data"], "dr": grid.dr, "t0": t0, "t_end": t1}
    if ev["data"] == "linearized":
        probe = wv.stability_probe(metric, cls, t_end=t1, dr=ev["dr"],
                                   bump_center=ev["bump_center"],
                                   bump_width=ev["bump_width"])
        payload["probe"] = probe.to_dict()
        write_json(out / "evolve.json", payload)
        return payload
    blowup = None
    if ev["data"] == "equator":
        state = wv.WaveState.equator(grid, metric, cls, t=t0)
    elif ev["data"] == "self_similar":
        blowup = ev["blowup_time"]
        state = wv.build_self_similar(_glued_profile(cfg), blowup, grid, t0, metric, cls)
    else:
        bump = wv.compact_bump(grid.r, ev["bump_center"], ev["bump_width"],
                               ev["bump_height"])
        state = wv.WaveState(t0, grid, bump, np.zeros_like(bump), cls, metric,
                             center=float(bump[0]))
    traj = wv.evolve(state, dt=dt, t_end=t1, cfl=ev["cfl"])
    rep = wv.verify_energy_equality(traj, t1 - t0, ev["R"], blowup_time=blowup)
    rep.ledger.write_jsonl(out / "ledger.jsonl")
    if ev["write_trajectory"]:
        traj.write_csv(out / "trajectory.csv")
    payload.update({"dt": traj.dt, "equality": rep.to_dict(),
                    "tolerance": wv.EQUALITY_TOL,
                    "within_tolerance": bool(rep.max_residual <= wv.EQUALITY_TOL),
                    "max_deviation_from_initial": float(np.max(np.abs(traj.phi - traj.phi[0])))})
    write_json(out / "evolve.json", payload)
    return payload


# --- dossier -------------------------------------------------------------------------

def _stage(errors, name, fn):
    try:
        return fn()
    except ComputationError as exc:
        errors[name] = f"{type(exc).__name__}: {exc}"
        return None


def cmd_dossier(cfg: ExperimentConfig, sub=None):
    """Numerical status of the three clauses for one (metric, d, ell).

    Clause (i): equator is the unique minimiser of ``E_e`` with boundary
    value ``phi*``; true when the local criterion holds and the descent
    family confirms it.  Clause (ii) evidence: a counterexample to
    uniqueness is built when a smooth profile exists.  Clause (iii): no
    smooth profile; true when shooting on the widened bracket finds none.
    Sub-stages write into their own subdirectories.
    """
    metric, cls = cfg.metric(), cfg.cls
    ds = cfg["dossier"]
    stages = set(ds["stages"])
    seed = cfg["run"]["seed"]
    errors: dict = {}
    out = _outdir(cfg, sub)
    base = Path(sub) if sub else Path()
    dossier = {**_header(cfg), "stages": sorted(stages), "seed": seed}

    crit = None
    if "analyze" in stages:
        crit = _stage(errors, "analyze", lambda: cmd_analyze(cfg, base / "analyze"))
        dossier["analyze"] = crit

    evidence = eh_rep = None
    if "minimize" in stages:
        def run_min():
            ev = en.equator_minimality_evidence(metric, cls, n_inits=ds["n_inits"],
                                                seed=seed)
            ev = {k: v for k, v in ev.items() if k != "runs"}
            mcfg = cfg.copy().set("minimize", "functional", "eh")
            return ev, cmd_minimize(mcfg, base / "minimize")["eh"]
        got = _stage(errors, "minimize", run_min)
        if got is not None:
            evidence, eh_rep = got
            write_json(out / "minimize" / "equator_evidence.json", evidence)

    shoot = None
    if "shoot" in stages:
        got = _stage(errors, "shoot",
                     lambda: cmd_shoot(cfg, base / "shoot", cfg["shoot"]["widened_bracket"]))
        if got is not None:
            shoot = got

    exhibit = None
    if "evolve" in stages:
        if shoot is not None and shoot[1] is not None:
            exhibit = _stage(errors, "evolve", lambda: wv.nonuniqueness_exhibit(
                metric, cls, dr=ds["evolve_dr"], profile=shoot[1]))
            if exhibit is not None:
                exhibit = {k: v for k, v in exhibit.items() if k != "energy"}
        else:
            exhibit = {"skipped": "no smooth profile to glue"}

    # clause (i)
    c1 = None
    if crit is not None and evidence is not None:
        c1 = bool(crit["verdict"] == "Stable" and evidence["holds"])
    elif crit is not None and crit["verdict"] == "Unstable":
        c1 = False
    elif crit is not None:
        c1 = crit["verdict"] == "Stable"
    # clause (iii)
    c3 = None
    found = None
    if shoot is not None:
        found = shoot[1] is not None
        c3 = not found
    # clause (ii) evidence
    counterexample = None
    if exhibit is not None and "sup_difference_in_cone" in exhibit:
        counterexample = bool(exhibit["sup_difference_in_cone"] >= 1.0
                              and exhibit["both_within_tolerance"])
    c2 = False if counterexample else None

    eh_negative = None
    if eh_rep is not None:
        eh_negative = bool(eh_rep["converged"]
                           and eh_rep["value"] < -cfg["minimize"]["certify_tol"])
    flags = {
        "eh_negative_and_profile_found": bool(eh_negative and found),
        "eh_nonnegative_and_not_found": bool(eh_negative is False and found is False),
        "clause_i_implies_iii": None if c1 is None or c3 is None else bool(not c1 or c3),
        "clauses_i_iii_agree": None if c1 is None or c3 is None else bool(c1 == c3),
    }
    error_state = bool(eh_negative and found is False)
    if error_state:
        state = "ERROR"
    elif flags["clause_i_implies_iii"] is False:
        state = "INCONSISTENT"
    else:
        state = "CONSISTENT"
    complete = not errors and {"analyze", "minimize", "shoot", "evolve"} <= stages
    dossier.update({
        "clauses": {
            "i": {"status": c1, "local_verdict": crit["verdict"] if crit else None,
                  "descent_evidence": evidence},
            "ii_evidence": {"status": c2, "counterexample_found": counterexample,
                            "nonuniqueness": exhibit},
            "iii": {"status": c3, "shoot_verdict": None if shoot is None
                    else shoot[0].get("verdict"),
                    "alpha": None if not found else shoot[0].get("alpha"),
                    "bracket": cfg["shoot"]["widened_bracket"]},
        },
        "eh_minimum": None if eh_rep is None else eh_rep["value"],
        "eh_certified_negative": eh_negative,
        "consistency": {**flags, "state": state},
        "complete": complete,
        "errors": errors,
    })
    write_json(out / "dossier.json", dossier)
    return dossier


def dossier_flip(d, a_lo, a_hi, tol=1e-4, stages=("analyze",), ell=1, out=None):
    """Bisect in the ellipse semi-axis for the point where clause (i) flips.

    Runs a dossier (restricted to ``stages``) at every bisection point and
    returns ``(a^2 at the flip, number of dossiers run)``.
    """
    calls = []

    def status(a):
        cfg = ExperimentConfig()
        cfg.set("metric", "kind", "ellipse").set("metric", "a", float(a))
        cfg.set("class", "d", d).set("class", "ell", ell)
        cfg.set("dossier", "stages", list(stages))
        with tempfile.TemporaryDirectory() as tmp:
            cfg.set("run", "out", str(out) if out else tmp)
            dos = cmd_dossier(cfg, f"a_{a:.10f}")
        calls.append(a)
        return 1.0 if dos["clauses"]["i"]["status"] else -1.0

    s_lo, s_hi = status(a_lo), status(a_hi)
    if s_lo == s_hi:
        raise ValueError("clause (i) has the same status at both ends of the sweep")
    a = bisect(status, a_lo, a_hi, xtol=tol)
    return a * a, len(calls)


# --- entry point ---------------------------------------------------------------------

COMMANDS = {"analyze": cmd_analyze, "shoot": cmd_shoot, "minimize": cmd_minimize,
            "evolve": cmd_evolve, "dossier": cmd_dossier}


def build_parser():
    p = argparse.ArgumentParser(prog="wavemap-lab",
                                description="Equivariant wave map numerical laboratory")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", metavar="PATH", help="experiment config file")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides run.out)")
    p.add_argument("--threads", type=int, metavar="N", help="BLAS threads (run.threads)")
    p.add_argument("--seed", type=int, metavar="S", help="seed for randomised inits")
    return p


def resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.out is not None:
        cfg.set("run", "out", args.out)
    if args.seed is not None:
        cfg.set("run", "seed", args.seed)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg.set("run", "threads", args.threads)
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        out = _outdir(cfg)
        cfg.dump(out / "config.resolved.ini")
        start = time.perf_counter()
        with threadpool_limits(limits=cfg["run"]["threads"]):
            result = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ComputationError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except (WavemapError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    summary = result[0] if isinstance(result, tuple) else result
    verdict = summary.get("verdict") or summary.get("consistency", {}).get("state", "")
    print(f"{args.command}: done in {time.perf_counter() - start:.2f}s "
          f"-> {cfg['run']['out']} {verdict}".rstrip())
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
