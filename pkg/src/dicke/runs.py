"""Run configuration and the work behind each CLI subcommand.

Couplings in a :class:`RunConfig` are reduced (critical at 0.5 for every D)
unless ``coupling_units = "physical"``. Observables that are derivatives
with respect to the coupling (chi_f, s_f, d2e0) are reported in the same
units as the coupling axis.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import __version__, core
from .core import FockBasis, ModelParams, assemble_number_fock
from .eigen import fock_lowest, ground_state, solve_fixed
from .observables import (
    CURVATURE_STEP,
    FS_STEPS,
    fs_fock_full_spectrum,
    fs_overlap_route,
    fs_sum_full_spectrum,
    fs_sum_route,
    grid_peaks,
    gs_parity_fock,
    peak_stretch,
    photon_number_per_atom,
    second_derivative_with_state,
    singular_energy,
    stretch,
    wavefunction_grid,
)
from .scaling import (
    CurveEvaluator,
    Degenerate,
    SweepRecord,
    _peak_of,
    alpha_exponents,
    collapse,
    find_peak,
    fit_loglog,
    golden_max,
    optimize_nu,
    save_report,
    write_records,
)

SCHEMA_VERSION = 1
LAMBDA_C = 0.5  # reduced units

SWEEP_OBSERVABLES = ("e0", "n_photon", "s_f", "chi_f", "d2e0")

# scaled offsets x = N^(2/3) (lam - lam_max) sampled for the collapse curves
COLLAPSE_X = tuple(sorted(
    {round(0.125 * i, 4) for i in range(-20, 21)}
    | {s * x for s in (-1, 1) for x in (3.0, 3.75, 4.5, 5.5, 6.5, 7.5)}))
# the collapse residual is dominated by the steep low side of the scaled curve,
# so a peak offset of 1e-5 already moves the best nu; collapse peaks are re-polished
COLLAPSE_PEAK_TOL = 1e-7


class ConfigError(ValueError):
    """Invalid run configuration; raised before any computation."""


class CheckFailed(RuntimeError):
    """A validation check did not pass."""


# --------------------------------------------------------------------------
# configuration

@dataclass
class RunConfig:
    out: Path = Path("out")
    workers: int = 1
    seed: int = 0
    n_list: tuple = ()
    d_ratio: tuple = (1.0,)
    lambda_min: float = 0.3
    lambda_max: float = 0.7
    lambda_steps: int = 41
    lambdas: tuple = ()
    coupling_units: str = "reduced"
    tol_energy: float = 1e-10
    tol_residual: float | None = None
    n_eig: int = 1
    cache: bool = True
    # exponents
    energy_n_list: tuple = (64, 128, 256, 512, 1024)
    order_n_list: tuple = (64, 128, 256, 512, 1024, 2048)
    peak_n_list: tuple = (128, 256, 512, 1024, 2048)
    collapse_n_list: tuple = (512, 1024, 2048)
    tol_lambda: float = 5e-5
    window: float = 2.0
    nu_min: float = 0.5
    nu_max: float = 0.9
    # wavefunction
    resolution: int = 201
    x_range: tuple | None = None
    y_range: tuple | None = None

    def coupling(self, d: float, lam: float, n: int) -> ModelParams:
        if self.coupling_units == "reduced":
            return ModelParams.reduced(d, lam, n)
        return ModelParams(1.0, d, lam, n)

    def lambda_grid(self) -> list[float]:
        if self.lambdas:
            return [float(x) for x in self.lambdas]
        if self.lambda_steps == 1:
            return [float(self.lambda_min)]
        grid = np.linspace(self.lambda_min, self.lambda_max, self.lambda_steps)
        return [round(float(x), 12) for x in grid]

    def provenance(self) -> dict:
        return {"version": __version__, "tol_energy": self.tol_energy,
                "tol_residual": self.tol_residual, "seed": self.seed,
                "coupling_units": self.coupling_units,
                "fs_steps_reduced": list(FS_STEPS), "curvature_step_reduced": CURVATURE_STEP}


TUPLE_INT = {"n_list", "energy_n_list", "order_n_list", "peak_n_list", "collapse_n_list"}
TUPLE_FLOAT = {"d_ratio", "lambdas", "x_range", "y_range"}


def _coerce(key: str, value):
    if key in TUPLE_INT:
        return tuple(int(v) for v in _as_list(value))
    if key in TUPLE_FLOAT:
        return tuple(float(v) for v in _as_list(value))
    if key == "out":
        return Path(value)
    if key in {"workers", "seed", "lambda_steps", "n_eig", "resolution"}:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{key} must be an integer, got {value}")
        return int(value)
    if key in {"cache"}:
        return bool(value)
    if key == "coupling_units":
        return str(value)
    if value is None:
        return None
    return float(value)


def _as_list(value) -> list:
    if isinstance(value, str):
        return [v for v in value.replace(",", " ").split() if v]
    if isinstance(value, (int, float)):
        return [value]
    return list(value)


def load_toml(path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc


def build_config(subcommand: str, file_values: dict | None = None,
                 overrides: dict | None = None) -> RunConfig:
    """Defaults < top-level file keys < file table [subcommand] < overrides."""
    known = {f.name for f in fields(RunConfig)}
    merged: dict = {}
    file_values = dict(file_values or {})
    section = file_values.pop(subcommand, {}) or {}
    for name in ("validate", "sweep", "exponents", "wavefunction"):
        file_values.pop(name, None)
    for layer in (file_values, section, overrides or {}):
        for key, value in layer.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown configuration key {key!r}")
            if value is not None:
                try:
                    merged[key] = _coerce(key, value)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"bad value for {key}: {value!r}") from exc
    cfg = RunConfig(**merged)
    if cfg.n_list:
        # a single --n-list drives every analysis; the collapse uses the largest three
        cfg = replace(cfg, energy_n_list=cfg.n_list, order_n_list=cfg.n_list,
                      peak_n_list=cfg.n_list, collapse_n_list=tuple(sorted(cfg.n_list)[-3:]))
    validate_config(subcommand, cfg)
    return cfg


def validate_config(subcommand: str, cfg: RunConfig) -> None:
    if cfg.coupling_units not in ("reduced", "physical"):
        raise ConfigError("coupling_units must be 'reduced' or 'physical'")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if cfg.n_eig < 1:
        raise ConfigError("n_eig must be >= 1")
    for name in ("tol_energy", "tol_lambda", "window"):
        if not getattr(cfg, name) > 0:
            raise ConfigError(f"{name} must be positive")
    if cfg.tol_residual is not None and not cfg.tol_residual > 0:
        raise ConfigError("tol_residual must be positive")
    if not cfg.d_ratio or any(not d > 0 for d in cfg.d_ratio):
        raise ConfigError("d_ratio must be a non-empty list of positive numbers")
    if subcommand == "sweep":
        if not cfg.n_list:
            raise ConfigError("sweep needs a non-empty n_list")
        _check_lambdas(cfg)
    elif subcommand == "exponents":
        for name in ("energy_n_list", "order_n_list", "peak_n_list"):
            if len(set(getattr(cfg, name))) < 4:
                raise ConfigError(f"Degenerate: {name} needs at least 4 distinct sizes "
                                  f"for a log-log fit, got {list(getattr(cfg, name))}")
        if len(set(cfg.collapse_n_list)) < 3:
            raise ConfigError("Degenerate: collapse needs at least 3 sizes")
        if not 0 < cfg.nu_min < cfg.nu_max < 2:
            raise ConfigError("need 0 < nu_min < nu_max < 2")
    elif subcommand == "wavefunction":
        if len(cfg.n_list) != 1:
            raise ConfigError(f"wavefunction needs exactly one N, got {list(cfg.n_list)}")
        if len(cfg.d_ratio) != 1:
            raise ConfigError("wavefunction needs exactly one D")
        if not cfg.lambdas:
            raise ConfigError("wavefunction needs a non-empty lambdas list")
        if cfg.resolution < 2:
            raise ConfigError("resolution must be >= 2")
    if any(n < 1 for n in cfg.n_list):
        raise ConfigError("system sizes must be positive")
    _check_writable(cfg.out)


def _check_lambdas(cfg: RunConfig) -> None:
    if cfg.lambdas:
        grid = cfg.lambdas
    else:
        if cfg.lambda_steps < 1 or cfg.lambda_max < cfg.lambda_min:
            raise ConfigError(f"empty lambda grid: [{cfg.lambda_min}, {cfg.lambda_max}] "
                              f"with {cfg.lambda_steps} steps")
        grid = cfg.lambda_grid()
    if not grid:
        raise ConfigError("empty lambda grid")
    if any(not (x >= 0 and math.isfinite(x)) for x in grid):
        raise ConfigError("couplings must be finite and non-negative")


def _check_writable(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=out, prefix=".probe"):
            pass
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc


# --------------------------------------------------------------------------
# caching and parallel map

def write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cache_key(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def cached(cache_dir: Path | None, payload: dict, compute: Callable[[], dict]) -> dict:
    if cache_dir is None:
        return compute()
    path = cache_dir / f"{cache_key(payload)}.json"
    if path.exists():
        with open(path) as fh:
            return json.load(fh)["result"]
    result = compute()
    cache_dir.mkdir(parents=True, exist_ok=True)
    write_atomic(path, json.dumps({"key": payload, "result": result}, sort_keys=True))
    return result


def run_tasks(fn, tasks: list, workers: int) -> list:
    """Map ``fn`` over ``tasks`` keeping input order; results are independent of ``workers``."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _cache_dir(cfg: RunConfig) -> Path | None:
    return cfg.out / "cache" if cfg.cache else None


# --------------------------------------------------------------------------
# validate

@dataclass
class Check:
    name: str
    passed: bool
    value: float
    limit: float
    detail: str = ""


def _check(name, err, limit, detail="") -> Check:
    err = float(err)
    return Check(name, bool(err <= limit), err, limit, detail)


def validation_checks(seed: int = 0) -> Iterable[Check]:
    """Extended basis against the truncated Fock oracle, parity and FS routes at N <= 16."""
    for n in (2, 4, 8, 16):
        for d in (0.1, 1.0, 5.0):
            for lam in (0.2, 0.45, 0.5, 0.6):
                p = ModelParams.reduced(d, lam, n)
                basis = FockBasis.default(p)
                ref = fock_lowest(p, basis)
                sol, _ = ground_state(p, energy_tol=1e-12, seed=seed)
                tag = f"N={n} D={d} lam={lam}"
                yield _check(f"energy {tag}", abs(sol.e0 - ref.eigenvalues[0]), 1e-8)
                ref_nph = assemble_number_fock(p, basis).expectation(ref.eigenvectors[:, 0]) / n
                yield _check(f"photon number {tag}", abs(photon_number_per_atom(sol) - ref_nph), 1e-8)
    for n, d, lam in ((8, 1.0, 0.45), (8, 5.0, 0.6), (16, 0.1, 0.5)):
        p = ModelParams.reduced(d, lam, n)
        sector = solve_fixed(p, 40, sector="ground").e0
        full = solve_fixed(p, 40, sector=None).e0
        yield _check(f"parity sector N={n} D={d} lam={lam}", abs(sector - full), 1e-9)
        a = fs_overlap_route(p).s_f
        b = fs_sum_route(p).s_f
        yield _check(f"fs routes N={n} D={d} lam={lam}", abs(a - b) / b, 1e-6)
    p = ModelParams.reduced(1.0, 0.45, 8)
    oracle = fs_fock_full_spectrum(p, FockBasis(8, 60))
    yield _check("fs full spectrum N=8", abs(fs_sum_full_spectrum(p, 40).s_f - oracle) / oracle, 1e-8)
    p = ModelParams(1.0, 1.0, 0.0, 8)
    yield _check("decoupled energy", abs(ground_state(p)[0].e0 / 8 + 0.5), 1e-10)
    yield _check("decoupled fs", abs(fs_overlap_route(p).s_f - 0.25), 1e-8)
    yield _check("decoupled parity", abs(abs(gs_parity_fock(p).parity) - 1), 1e-8)


def apply_mutation(name: str | None) -> None:
    """Deliberately break the model so validation can be shown to catch it."""
    if name is None:
        return
    if name != "ladder-sign":
        raise ConfigError(f"unknown mutation {name!r}")
    original = core.spin_ladder

    def flipped(n_atoms):
        lad = original(n_atoms).copy()
        lad[n_atoms // 2] *= -1
        return lad

    core.spin_ladder = flipped


def cmd_validate(cfg: RunConfig, mutation: str | None = None) -> dict:
    apply_mutation(mutation)
    checks = []
    first_failure = None
    for c in validation_checks(cfg.seed):
        checks.append(asdict(c))
        if not c.passed and first_failure is None:
            first_failure = c.name
    report = {"schema_version": SCHEMA_VERSION, "provenance": cfg.provenance(),
              "passed": first_failure is None, "first_failure": first_failure,
              "n_checks": len(checks), "checks": checks}
    write_atomic(cfg.out / "validate.json", json.dumps(report, indent=2, sort_keys=True))
    if first_failure is not None:
        raise CheckFailed(f"check failed: {first_failure}")
    return report


# --------------------------------------------------------------------------
# sweep

def sweep_point(task: tuple) -> dict:
    """All sweep observables at one (N, D, lam), computed cold."""
    cfg, n, d, lam = task
    payload = {"kind": "sweep", "n": n, "d": d, "lam": lam, "n_eig": cfg.n_eig,
               **cfg.provenance()}

    def compute():
        p = cfg.coupling(d, lam, n)
        scale = p.coupling_scale if cfg.coupling_units == "reduced" else 1.0
        sol, rep = ground_state(p, energy_tol=cfg.tol_energy, tol=cfg.tol_residual,
                                seed=cfg.seed, n_eig=cfg.n_eig)
        fs = fs_overlap_route(p, n_tr=sol.n_tr, tol=cfg.tol_residual, v0=sol.ground)
        d2, _ = second_derivative_with_state(p, n_tr=sol.n_tr, tol=cfg.tol_residual, v0=sol.ground)
        values = {"e0": sol.e0 / n, "n_photon": photon_number_per_atom(sol),
                  "s_f": fs.s_f * scale**2, "chi_f": fs.chi_f * scale**2,
                  "d2e0": d2 * scale**2}
        for k in range(1, cfg.n_eig):
            values[f"e{k}"] = float(sol.energies[k]) / n
        return {"n_tr": sol.n_tr, "values": values}

    try:
        return {"ok": True, **cached(_cache_dir(cfg), payload, compute)}
    except Exception as exc:  # recorded per point; the sweep carries on
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}


def cmd_sweep(cfg: RunConfig) -> dict:
    tasks = [(cfg, n, d, lam) for n in sorted(set(cfg.n_list)) for d in cfg.d_ratio
             for lam in cfg.lambda_grid()]
    results = run_tasks(sweep_point, tasks, cfg.workers)
    records, failures = [], []
    extra = [f"e{k}" for k in range(1, cfg.n_eig)]
    for (_, n, d, lam), res in zip(tasks, results):
        if not res["ok"]:
            failures.append({"n_atoms": n, "D": d, "lambda": lam, "error": res["error"]})
            continue
        for name in SWEEP_OBSERVABLES + tuple(extra):
            records.append(SweepRecord(n, d, lam, name, res["values"][name], res["n_tr"],
                                       cfg.tol_energy, cfg.seed))
    write_records(cfg.out / "sweep.csv", records)
    report = {"schema_version": SCHEMA_VERSION, "provenance": cfg.provenance(),
              "n_points": len(tasks), "failures": failures,
              "observables": list(SWEEP_OBSERVABLES) + extra}
    write_atomic(cfg.out / "sweep.json", json.dumps(report, indent=2, sort_keys=True))
    return report


# --------------------------------------------------------------------------
# exponents

def peak_bracket(n: int) -> tuple[float, float]:
    w = n ** (-2 / 3)
    return max(LAMBDA_C - 2 * w, 0.05), LAMBDA_C + 4 * w


def exponent_task(task: tuple) -> dict:
    """Everything the exponent analysis needs from one (D, N)."""
    cfg, d, n, roles = task
    payload = {"kind": "exponents", "n": n, "d": d, "roles": sorted(roles),
               "tol_lambda": cfg.tol_lambda, "collapse_x": list(COLLAPSE_X),
               **cfg.provenance()}
    return cached(_cache_dir(cfg), payload, lambda: _exponent_task(cfg, d, n, roles))


def _exponent_task(cfg: RunConfig, d: float, n: int, roles) -> dict:
    out: dict = {"D": d, "N": n}
    p_c = ModelParams.reduced(d, LAMBDA_C, n)
    if {"energy", "order"} & set(roles):
        sol, rep = ground_state(p_c, energy_tol=cfg.tol_energy, tol=cfg.tol_residual, seed=cfg.seed)
        out.update(e0=sol.e0 / n, e_singular=singular_energy(sol.e0 / n, p_c),
                   n_photon=photon_number_per_atom(sol), n_tr_critical=rep.final_n_tr)
    if "peak" in roles or "collapse" in roles:
        scale = p_c.coupling_scale
        lo, hi = peak_bracket(n)
        ev = CurveEvaluator(ModelParams.reduced(d, 0.5 * (lo + hi), n),
                            energy_tol=cfg.tol_energy, tol=cfg.tol_residual)

        def chi(lam_red):
            return ev(lam_red * scale) * scale**2

        lam_max, chi_max, _ = find_peak(chi, (lo, hi), cfg.tol_lambda)
        out.update(lambda_max=lam_max, chi_max=chi_max, s_max=chi_max * n, n_tr_fs=ev.n_tr)
        if "collapse" in roles:
            lams = [lam_max + x * n ** (-2 / 3) for x in COLLAPSE_X]
            lams = [x for x in lams if x > 0]  # only bites for very small N
            ev2 = CurveEvaluator(ModelParams.reduced(d, lam_max, n), "neg_d2e", n_tr=ev.n_tr,
                                 energy_tol=cfg.tol_energy, tol=cfg.tol_residual)
            out["curve_lambda"] = lams
            out["curve_chi_f"] = [chi(x) for x in lams]
            out["curve_neg_d2e"] = [ev2(x * scale) * scale**2 for x in lams]
            out["d2e_peak"] = _peak_of(np.array(lams), np.array(out["curve_neg_d2e"]))[0]
    return out


def _fit_entry(points) -> dict:
    fit = fit_loglog(points)
    return {"value": fit.extrapolated_slope, "stderr": fit.extrapolated_stderr,
            "ols_slope": fit.slope, "ols_stderr": fit.stderr,
            "asymptotic_slope": fit.asymptotic_slope, "asymptotic_stderr": fit.asymptotic_stderr,
            "local_slopes": fit.local_slopes, "points": [list(map(float, p)) for p in sorted(points)]}


def _nu_entry(curves, peaks, cfg: RunConfig) -> dict:
    nu, best, (nus, scan) = optimize_nu(curves, (cfg.nu_min, cfg.nu_max), window=cfg.window,
                                        peaks=peaks)
    at = collapse(curves, 2 / 3, cfg.window, peaks)
    r_min = min(best.residual, float(scan.min()))
    # spread of nu over which the residual stays within 5% of its minimum
    ok = np.append(nus[scan <= 1.05 * r_min], nu)
    spread = float(max(ok.max() - nu, nu - ok.min(), nus[1] - nus[0]))
    return {"value": nu, "stderr": spread, "residual_min": r_min,
            "residual_scan_min": float(scan.min()), "residual_two_thirds": at.residual,
            "ratio_two_thirds": at.residual / float(scan.min()),
            "integrated_two_thirds": at.integrated,
            "scan": [[float(a), float(b)] for a, b in zip(nus, scan)]}


def analyse_d(cfg: RunConfig, d: float, rows: dict) -> dict:
    """Fits, collapse and tables for one D from the per-N task results."""
    energy = [(n, rows[n]["e_singular"]) for n in cfg.energy_n_list]
    order = [(n, rows[n]["n_photon"]) for n in cfg.order_n_list]
    peaks = [(n, rows[n]["chi_max"]) for n in cfg.peak_n_list]
    totals = [(n, rows[n]["s_max"]) for n in cfg.peak_n_list]
    res: dict = {}
    for key, pts in (("singular_energy_slope", energy), ("order_param_slope", order),
                     ("mu_per_site", peaks), ("mu_total", totals)):
        try:
            res[key] = _fit_entry(pts)
        except (Degenerate, ValueError) as exc:
            raise type(exc)(f"D={d} {key}: {exc}") from exc
    res["lambda_max"] = [{"N": n, "lambda_max": rows[n]["lambda_max"], "chi_max": rows[n]["chi_max"],
                          "stderr": cfg.tol_lambda, "n_tr": rows[n]["n_tr_fs"]}
                         for n in cfg.peak_n_list]
    try:
        res["lambda_max_drift"] = _fit_entry(
            [(n, rows[n]["lambda_max"] - LAMBDA_C) for n in cfg.peak_n_list])
    except ValueError as exc:
        res["lambda_max_drift"] = {"error": str(exc)}
    cn = sorted(cfg.collapse_n_list)
    chi_curves = {n: (rows[n]["curve_lambda"], rows[n]["curve_chi_f"]) for n in cn}
    fine = {n: rows[n].get("collapse_peaks") for n in cn}
    chi_peaks = {n: tuple(f["chi_f"]) for n, f in fine.items() if f}
    res["nu_best"] = _nu_entry(chi_curves, chi_peaks, cfg)
    d2_curves = {n: (rows[n]["curve_lambda"], rows[n]["curve_neg_d2e"]) for n in cn}
    d2_peaks = {n: tuple(f["neg_d2e"]) for n, f in fine.items() if f}
    res["nu_best_d2e"] = _nu_entry(d2_curves, d2_peaks, cfg)
    res["collapse_peaks"] = [{"N": n, "chi_f": chi_peaks.get(n), "neg_d2e": d2_peaks.get(n)}
                             for n in cn]
    res["d2e_peak"] = [{"N": n, "lambda_peak": d2_peaks.get(n, (rows[n]["d2e_peak"],))[0]}
                       for n in cn]
    nu = res["nu_best"]["value"]
    res["alpha_per_site"] = alpha_exponents(res["mu_per_site"]["value"], nu)
    res["alpha_total"] = alpha_exponents(res["mu_total"]["value"], nu)
    res["curves"] = {str(n): {"lambda": rows[n]["curve_lambda"], "chi_f": rows[n]["curve_chi_f"],
                              "neg_d2e": rows[n]["curve_neg_d2e"]} for n in cn}
    return res


def exponent_tasks(cfg: RunConfig) -> list:
    tasks = []
    for d in cfg.d_ratio:
        roles: dict[int, set] = {}
        for role, ns in (("energy", cfg.energy_n_list), ("order", cfg.order_n_list),
                         ("peak", cfg.peak_n_list), ("collapse", cfg.collapse_n_list)):
            for n in ns:
                roles.setdefault(int(n), set()).add(role)
        tasks += [(cfg, float(d), n, tuple(sorted(r))) for n, r in sorted(roles.items())]
    return tasks


def collapse_peak_task(task: tuple) -> dict:
    """Peaks of the chi_F and -d2e0 curves of one collapse size, to COLLAPSE_PEAK_TOL."""
    cfg, d, n, coarse = task
    payload = {"kind": "collapse_peaks", "n": n, "d": d, "tol": COLLAPSE_PEAK_TOL,
               "coarse": coarse, **cfg.provenance()}
    return cached(_cache_dir(cfg), payload, lambda: _collapse_peak_task(cfg, d, n, coarse))


def _collapse_peak_task(cfg: RunConfig, d: float, n: int, coarse: dict) -> dict:
    p = ModelParams.reduced(d, coarse["lambda_max"], n)
    scale = p.coupling_scale
    out = {}
    for kind, centre, half in (("chi_f", coarse["lambda_max"], 2 * cfg.tol_lambda),
                               ("neg_d2e", coarse["d2e_peak"], 0.125 * n ** (-2 / 3))):
        ev = CurveEvaluator(p.with_lam(centre * scale), kind, n_tr=coarse["n_tr_fs"],
                            energy_tol=cfg.tol_energy, tol=cfg.tol_residual)
        x, y = golden_max(lambda lam: ev(lam * scale) * scale**2,
                          centre - half, centre + half, COLLAPSE_PEAK_TOL)
        out[kind] = [x, y]
    return out


def cmd_exponents(cfg: RunConfig) -> dict:
    tasks = exponent_tasks(cfg)
    results = run_tasks(exponent_task, tasks, cfg.workers)
    by_d: dict = {}
    for (_, d, n, _), r in zip(tasks, results):
        by_d.setdefault(d, {})[n] = r
    fine_tasks = [(cfg, d, n, {k: by_d[d][n][k] for k in ("lambda_max", "d2e_peak", "n_tr_fs")})
                  for d in by_d for n in sorted(cfg.collapse_n_list)]
    for (_, d, n, _), r in zip(fine_tasks, run_tasks(collapse_peak_task, fine_tasks, cfg.workers)):
        by_d[d][n]["collapse_peaks"] = r
    report = {"schema_version": SCHEMA_VERSION, "provenance": {**cfg.provenance(),
              "tol_lambda": cfg.tol_lambda, "window": cfg.window,
              "slope_estimator": "local slopes extrapolated linearly in 1/N"},
              "D": {repr(d): analyse_d(cfg, d, rows) for d, rows in by_d.items()}}
    save_report(cfg.out / "exponents.json", report)
    return report


# --------------------------------------------------------------------------
# wavefunction

def _lam_tag(lam: float) -> str:
    return f"{lam:.6f}".rstrip("0").rstrip(".")


def wavefunction_task(task: tuple) -> dict:
    cfg, lam = task
    n, d = cfg.n_list[0], cfg.d_ratio[0]
    p = cfg.coupling(d, lam, n)
    sol, rep = ground_state(p, energy_tol=cfg.tol_energy, tol=cfg.tol_residual, seed=cfg.seed)
    grid = wavefunction_grid(sol, cfg.x_range, cfg.y_range, cfg.resolution)
    path = cfg.out / f"wavefunction_N{n}_D{_lam_tag(d)}_lam{_lam_tag(lam)}.dat"
    grid.save(path)
    angle, ratio = peak_stretch(grid)
    cov_angle, cov_ratio = stretch(grid)
    return {"lambda": lam, "file": path.name, "n_tr": rep.final_n_tr,
            "norm": grid.norm_estimate, "peaks": [list(q) for q in grid_peaks(grid)],
            "peak_stretch_angle": angle, "peak_stretch_ratio": ratio,
            "covariance_angle": cov_angle, "covariance_ratio": cov_ratio}


def cmd_wavefunction(cfg: RunConfig) -> dict:
    entries = run_tasks(wavefunction_task, [(cfg, float(lam)) for lam in cfg.lambdas], cfg.workers)
    manifest = {"schema_version": SCHEMA_VERSION, "provenance": cfg.provenance(),
                "n_atoms": cfg.n_list[0], "D": cfg.d_ratio[0], "resolution": cfg.resolution,
                "format": "gnuplot nonuniform matrix: first row nx then x values; "
                          "each further row y then Psi(x, y)",
                "grids": entries}
    write_atomic(cfg.out / "wavefunction_manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


__all__ = ["RunConfig", "ConfigError", "CheckFailed", "build_config", "load_toml",
           "cmd_validate", "cmd_sweep", "cmd_exponents", "cmd_wavefunction"]
