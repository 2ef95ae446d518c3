"""Config parsing and the seeded end-to-end pipeline.

A run simulates the teacher and student processes, assembles the
divergence ledger, evaluates every bound and tail check, and returns a
self-contained report dictionary.  Output files are written by
:func:`write_outputs`.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import bounds as B
from .divergence import assemble_ledger
from .estimators import (McSummary, _map_trials, default_lambda_grid, estimate_gen_student,
                         estimate_gen_teacher, estimate_sharpness_empirical,
                         empirical_sharpness_closed_form, fit_sigma, central_condition_check,
                         mgf_subgaussian_check, population_sharpness_closed_form)
from .numcore import BallPerturbation, ParameterError, make_stream
from .processes import (MATCH_TEACHER, ProblemSpec, StudentConfig, TeacherConfig, draw_dataset,
                        fit_teacher_posterior, sample_teacher)

SCHEMA_VERSION = "1.0"
SE_TOL = 3.0

LEDGER_COLUMNS = [
    ("trial", "dataset trial index, or 'mean' for the dataset average"),
    ("bias", "||(W_bar - W_star) X||_F^2"),
    ("var", "tr(X^T Sigma_T X)"),
    ("datasetShift", "(bias + k var) / (2 nu^2)"),
    ("apx", "rank-bottleneck cost, MC over teacher draws"),
    ("apxStdErr", "MC standard error of apx"),
    ("cov", "covariance mismatch k/2 (tr(St^-1 Ss) - d + log det St/det Ss)"),
    ("spread", "k (lambda tr Sigma_T + betaT/nu^2 tr(X^T Sigma_T X))"),
    ("algoShift", "apx + cov + spread"),
    ("knUpper", "datasetShift + algoShift"),
    ("algoShiftDoubled", "2 apx + cov + 2 spread"),
    ("knUpperDoubled", "datasetShift + algoShiftDoubled"),
    ("degenerate", "1 if any teacher draw hit an SVD singular-value tie at rank kappa"),
]

SWEEP_COLUMNS = [
    ("row", "'grid' for a requested radius, 'rho0' for the tightening radius"),
    ("rho", "perturbation radius"),
    ("sigmaU", "local variance proxy sigma_u(rho)"),
    ("nu", "empirical-sharpness proxy nu(rho)"),
    ("spBound", "population sharpness bound tau_op rho^2 / 2"),
    ("bStd", "genT + sigma0 sqrt(2 knUpper)"),
    ("bSh", "genT + spBound + (sigmaU + nu) sqrt(2 knUpper)"),
    ("improved", "1 if bSh < bStd"),
]

GAP_COLUMNS = [
    ("process", "'teacher' or 'student'"),
    ("trial", "trial index"),
    ("value", "population risk minus training risk"),
]


class ConfigError(ValueError):
    """Config failed validation; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def load_schema(name: str) -> dict:
    return json.loads(resources.files("kdlab").joinpath("schemas").joinpath(name).read_text())


@dataclass
class ExperimentConfig:
    raw: dict
    spec: ProblemSpec
    teacher: TeacherConfig
    student: StudentConfig
    sharpness: B.SharpnessConstants | None
    dataset_trials: int
    posterior_samples: int
    perturb_samples: int
    rho_grid: list | None
    seed: int
    out_dir: str = "out"
    formats: list = field(default_factory=lambda: ["json", "csv"])


def _json_path(parts) -> str:
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in parts)


def random_orthogonal_rows(k: int, d: int, scale: float, seed: int) -> np.ndarray:
    if k > d:
        raise ConfigError("$.problem.Wstar", f"orthogonal rows need k <= d (k={k}, d={d})")
    q, r = np.linalg.qr(make_stream(seed, 0, "wstar").standard_normal((d, k)))
    q = q * np.sign(np.diag(r))
    return scale * q.T


def parse_config(raw: dict, seed: int | None = None, trials: int | None = None) -> ExperimentConfig:
    """Validate ``raw`` against the shipped schema and build typed parameters.

    ``seed`` and ``trials`` override ``seed`` and ``mc.datasetTrials`` and
    are written back into the echoed config.
    """
    raw = json.loads(json.dumps(raw))
    if seed is not None:
        raw["seed"] = int(seed)
    if trials is not None:
        raw.setdefault("mc", {})["datasetTrials"] = int(trials)
    validator = jsonschema.Draft202012Validator(load_schema("config.schema.json"))
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(_json_path(e.absolute_path), e.message)

    p = raw["problem"]
    d, k, n = p["d"], p["k"], p["n"]
    if isinstance(p["Wstar"], dict):
        w_star = random_orthogonal_rows(k, d, float(p["Wstar"].get("scale", 1.0)), raw["seed"])
    else:
        w_star = np.asarray(p["Wstar"], dtype=float)
        if w_star.shape != (k, d):
            raise ConfigError("$.problem.Wstar", f"expected a {k}x{d} matrix, got shape {w_star.shape}")
    spec = ProblemSpec(d, k, n, w_star, float(p["nu"]))
    teacher = TeacherConfig(float(raw["teacher"]["lambda"]), float(raw["teacher"]["betaT"]))

    s = raw["student"]
    if not 1 <= s["rankKappa"] <= min(k, d):
        raise ConfigError("$.student.rankKappa", f"must lie in [1, {min(k, d)}]")
    if s["sigmaS"] == MATCH_TEACHER:
        sigma_s = MATCH_TEACHER
    elif isinstance(s["sigmaS"], list):
        sigma_s = np.asarray(s["sigmaS"], dtype=float)
        if sigma_s.shape != (d, d):
            raise ConfigError("$.student.sigmaS", f"expected a {d}x{d} matrix, got shape {sigma_s.shape}")
    else:
        sigma_s = float(s["sigmaS"]) * np.eye(d)
    try:
        student = StudentConfig(int(s["rankKappa"]), sigma_s)
    except ParameterError as exc:
        raise ConfigError("$.student.sigmaS", str(exc)) from None

    sharp = None
    if "sharpness" in raw:
        c = raw["sharpness"]
        if c["b"] < c["a"]:
            raise ConfigError("$.sharpness.b", "must be >= a")
        sharp = B.SharpnessConstants(c["a"], c["b"], c["L"], c["g0"], c["alpha"], c["stabKappa"],
                                     c["tauOp"], n, c["rho"])
    mc = raw["mc"]
    out = raw.get("outputs", {})
    return ExperimentConfig(raw, spec, teacher, student, sharp, mc["datasetTrials"],
                            mc["posteriorSamples"], mc.get("perturbSamples", 1000),
                            raw.get("rhoGrid"), raw["seed"], out.get("dir", "out"),
                            out.get("formats", ["json", "csv"]))


def load_config(path, seed: int | None = None, trials: int | None = None) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("$", "config must be a JSON object")
    return parse_config(raw, seed=seed, trials=trials)


# ---------------------------------------------------------------------------


def teacher_sharpness(cfg: ExperimentConfig, workers: int = 1) -> dict:
    """Empirical sharpness of the sampled teacher, MC vs closed form, per trial."""
    rho = cfg.sharpness.rho
    spec = cfg.spec
    p = BallPerturbation(rho, spec.k * spec.d)

    def one(t):
        data = draw_dataset(spec, make_stream(cfg.seed, t, "teacher-data"))
        post = fit_teacher_posterior(data, cfg.teacher, spec)
        w_t = sample_teacher(post, make_stream(cfg.seed, t, "teacher-draw"))
        mc = estimate_sharpness_empirical(w_t, data, p, cfg.perturb_samples,
                                          make_stream(cfg.seed, t, "sharpness"))
        return mc.mean, empirical_sharpness_closed_form(data.X, spec.k, rho)

    pairs = _map_trials(one, cfg.dataset_trials, workers)
    mc_vals = np.array([a for a, _ in pairs])
    cf_vals = np.array([b for _, b in pairs])
    return {
        "rho": rho,
        "empiricalMc": McSummary.from_values(mc_vals).to_dict(),
        "empiricalClosedForm": McSummary.from_values(cf_vals).to_dict(),
        "populationClosedForm": population_sharpness_closed_form(spec.k, spec.d, rho),
        "populationProxyBound": B.proxy_sp_bound(cfg.sharpness),
    }


def _dv_suite(seed: int) -> dict:
    from .verify import suite_dv
    r = suite_dv(seed=seed)
    return {"cases": r.cases, "failures": r.failures, "worstSlack": r.worst, "pass": r.ok}


def default_rho_grid(c: B.SharpnessConstants, kn_upper: float) -> list:
    r0 = B.rho_zero(c, kn_upper)
    top = 2.0 * r0 if r0 is not None else 1.0
    return [float(x) for x in np.linspace(0.0, top, 21)]


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> dict:
    """Full pipeline; returns the report dictionary (see ``report.schema.json``)."""
    t0 = time.perf_counter()
    spec, tcfg, scfg = cfg.spec, cfg.teacher, cfg.student
    ledger = assemble_ledger(spec, tcfg, scfg, cfg.dataset_trials, cfg.posterior_samples,
                             cfg.seed, workers=workers)
    gen_t, gaps_t = estimate_gen_teacher(spec, tcfg, cfg.dataset_trials, cfg.seed, workers)
    gen_s, gaps_s = estimate_gen_student(spec, tcfg, scfg, cfg.dataset_trials, cfg.seed, workers)

    h = np.array([g.value for g in gaps_t])
    grid = default_lambda_grid(h)
    sigma = fit_sigma(h, grid)
    report_bounds = B.build_bound_report(gen_t.mean, gen_t.std_err, gen_s.mean, gen_s.std_err,
                                         sigma, ledger.kn_upper, ledger.std_err["knUpper"],
                                         sigma_source="mgf-fit", sharp=cfg.sharpness)

    checks = {}
    resid = ledger.identity_residuals()
    checks["ledgerIdentities"] = {"residuals": resid,
                                  "pass": all(v <= 1e-12 * max(1.0, ledger.kn_upper_doubled)
                                              for v in resid.values())}
    checks["upperBound"] = {"margin": report_bounds.upper_margin, "stdErr": report_bounds.upper_margin_se,
                      "tolerance": f"margin >= -{SE_TOL} SE",
                      "pass": report_bounds.upper_margin >= -SE_TOL * report_bounds.upper_margin_se}
    if report_bounds.lower_bound is not None:
        checks["lowerBound"] = {"margin": report_bounds.lower_margin,
                          "stdErr": report_bounds.lower_margin_se,
                          "tolerance": f"margin >= -{SE_TOL} SE",
                          "pass": report_bounds.lower_margin >= -SE_TOL * report_bounds.lower_margin_se}
    mgf = mgf_subgaussian_check(h, sigma ** 2, grid, seed=cfg.seed, min_samples=2)
    checks["mgf"] = {"sigmaHat": sigma, "lambdaMin": float(grid.min()), "lambdaMax": float(grid.max()),
                     "gridPoints": int(grid.size), "slack": mgf.slack, "lambdaAtWorst": mgf.lam,
                     "stdErr": mgf.std_err, "samples": int(h.size),
                     "belowRecommendedSamples": bool(h.size < 1000),
                     "pass": mgf.slack >= -1e-12}
    if report_bounds.central is not None:
        slack, se = central_condition_check(h, report_bounds.central, seed=cfg.seed)
        checks["central"] = {"eta": report_bounds.central.eta, "c": report_bounds.central.c,
                             "slack": slack, "stdErr": se, "pass": slack >= -SE_TOL * se}
    checks["dv"] = _dv_suite(cfg.seed)

    sharp_block, sweep, rho0 = None, [], None
    if cfg.sharpness is not None:
        c = cfg.sharpness
        grid_rho = cfg.rho_grid if cfg.rho_grid is not None else default_rho_grid(c, ledger.kn_upper)
        sweep = B.rho_sweep(c, gen_t.mean, ledger.kn_upper, grid_rho)
        rho0 = B.rho_zero(c, ledger.kn_upper)
        a0, a1, a2 = B.a_coefficients(c)
        sharp_block = {
            "constants": {"a": c.a, "b": c.b, "L": c.L, "g0": c.g0, "alpha": c.alpha,
                          "stabKappa": c.stab_kappa, "tauOp": c.tau_op, "n": c.n, "rho": c.rho},
            "flatnessGap": c.flatness_gap,
            "sigma0": B.proxy_sigma0(c), "sigmaU": B.proxy_sigma_u(c), "nu": B.proxy_nu(c),
            "spBound": B.proxy_sp_bound(c), "A": [a0, a1, a2],
            "identityResidual": B.sigma_gap_identity_check(c),
            "teacher": teacher_sharpness(cfg, workers),
        }
        bad = [r for r in sweep if r["row"] == "grid" and rho0 is not None
               and 0 < r["rho"] < rho0 and not r["improved"]]
        checks["tightening"] = {"rho0": rho0, "violations": len(bad), "pass": not bad}

    ok = all(v["pass"] for v in checks.values())
    return {
        "schemaVersion": SCHEMA_VERSION,
        "config": cfg.raw,
        "seed": cfg.seed,
        "resolvedWstar": spec.w_star.tolist(),
        "ledger": ledger.to_dict(),
        "genTeacher": gen_t.to_dict(),
        "genStudent": gen_s.to_dict(),
        "bounds": report_bounds.to_dict(),
        "checks": checks,
        "sharpness": sharp_block,
        "rhoSweep": sweep,
        "rho0": rho0,
        "pass": ok,
        "wallClockSeconds": time.perf_counter() - t0,
        "_ledger_rows": ledger.rows,
        "_gaps": {"teacher": gaps_t, "student": gaps_s},
    }


# ---------------------------------------------------------------------------
# serialization


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def csv_text(columns, rows) -> str:
    """CSV with one ``# name: description`` comment line per column."""
    buf = io.StringIO()
    for name, desc in columns:
        buf.write(f"# {name}: {desc}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([name for name, _ in columns])
    for row in rows:
        w.writerow([_fmt(row[name]) for name, _ in columns])
    return buf.getvalue()


def ledger_csv(report: dict) -> str:
    rows = []
    for r in report["_ledger_rows"]:
        rows.append({"trial": r.trial, "bias": r.bias, "var": r.var, "datasetShift": r.dataset_shift,
                     "apx": r.apx, "apxStdErr": r.apx_std_err, "cov": r.cov, "spread": r.spread,
                     "algoShift": r.algo_shift, "knUpper": r.kn_upper,
                     "algoShiftDoubled": r.algo_shift_doubled, "knUpperDoubled": r.kn_upper_doubled,
                     "degenerate": r.degenerate})
    L = report["ledger"]
    rows.append({"trial": "mean", "bias": L["bias"], "var": L["var"], "datasetShift": L["datasetShift"],
                 "apx": L["apx"], "apxStdErr": L["stdErr"]["apx"], "cov": L["cov"], "spread": L["spread"],
                 "algoShift": L["algoShift"], "knUpper": L["knUpper"],
                 "algoShiftDoubled": L["algoShiftDoubled"], "knUpperDoubled": L["knUpperDoubled"],
                 "degenerate": L["degenerateTrials"] > 0})
    return csv_text(LEDGER_COLUMNS, rows)


def sweep_csv(rows) -> str:
    return csv_text(SWEEP_COLUMNS, rows)


def gaps_csv(report: dict) -> str:
    rows = [{"process": proc, "trial": g.trial, "value": g.value}
            for proc in ("teacher", "student") for g in report["_gaps"][proc]]
    return csv_text(GAP_COLUMNS, rows)


def public_report(report: dict) -> dict:
    return {k: v for k, v in report.items() if not k.startswith("_")}


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def report_json(report: dict) -> str:
    return json.dumps(_clean(public_report(report)), indent=2) + "\n"


def validate_report(report: dict):
    jsonschema.validate(_clean(public_report(report)), load_schema("report.schema.json"))


def write_outputs(report: dict, out_dir, formats=("json", "csv")) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        (out / "report.json").write_text(report_json(report))
        written.append(out / "report.json")
    if "csv" in formats:
        for name, text in (("ledger.csv", ledger_csv(report)), ("gaps.csv", gaps_csv(report)),
                           ("rho_sweep.csv", sweep_csv(report["rhoSweep"]))):
            (out / name).write_text(text)
            written.append(out / name)
    return written

