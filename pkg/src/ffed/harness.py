"""Experiment engine: energy traces, convergence sweeps and damping tables.

Every run writes plain CSV (one header line, 17 significant digits) plus a
JSON summary, so the numbers can be re-derived by any downstream tool.
"""
from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import OracleSelfConsistencyFailure
from .integrators import Method, Trajectory, integrate, make_stepper
from .systems import Problem, get_problem, make_linear

__all__ = [
    "ExperimentSpec",
    "Reference",
    "compute_reference",
    "write_trajectory_csv",
    "read_csv",
    "run_single",
    "run_energy_experiment",
    "run_convergence_experiment",
    "run_damping_experiment",
    "fit_order",
    "MONOTONE_TOL",
]

log = logging.getLogger(__name__)

MONOTONE_TOL = 1e-10
ORACLE_STEP = 1e-4
ORACLE_RTOL = 1e-10


@dataclass
class ExperimentSpec:
    problem: str
    methods: list[Method]
    step_sizes: list[float]
    T: float | None = None
    outputs: Path = Path("out")
    seed: int = 0
    jobs: int = 1
    problem_params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.outputs = Path(self.outputs)
        if not self.methods:
            raise ValueError("at least one method is required")
        if not self.step_sizes or any(not h > 0 for h in self.step_sizes):
            raise ValueError("step sizes must be positive")
        if self.T is not None and not self.T > 0:
            raise ValueError("T must be positive")

    def build_problem(self) -> Problem:
        p = get_problem(self.problem, **self.problem_params)
        return p if self.T is None else p.with_horizon(self.T)


# -- CSV helpers ----------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _atomic_write(path: Path, text: str | bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(text, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def write_csv(path: Path, header: list[str], rows) -> Path:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else _fmt(v) for v in row))
    _atomic_write(Path(path), "\n".join(lines) + "\n")
    return Path(path)


def write_trajectory_csv(path: Path, traj: Trajectory) -> Path:
    d = traj.states.shape[1]
    header = ["t"] + [f"y_{i + 1}" for i in range(d)] + ["U"]
    rows = np.column_stack([traj.times, traj.states, traj.energies])
    return write_csv(path, header, rows)


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def energy_increments_from_csv(path: Path) -> np.ndarray:
    header, data = read_csv(path)
    return np.diff(data[:, header.index("U")])


# -- reference oracle -------------------------------------------------------------

@dataclass
class Reference:
    times: np.ndarray
    states: np.ndarray
    step: float
    self_consistency: float

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]

    def at(self, t: float) -> np.ndarray | None:
        """Recorded state at time ``t`` (None when ``t`` is not on the record grid)."""
        k = int(round(t / (self.times[1] - self.times[0]))) if len(self.times) > 1 else 0
        if 0 <= k < len(self.times) and abs(self.times[k] - t) <= 1e-9 * max(1.0, abs(t)):
            return self.states[k]
        return None


def _fast_field(system):
    if system.metric_matrix is not None:
        MinvT = np.linalg.inv(system.metric_matrix).T
        return lambda y: -(np.asarray(system.gradient(y), dtype=float) @ MinvT)
    return system.vector_field


def _rk4(f, y0, h, n_steps, record_every):
    y = np.array(y0, dtype=float)
    out = [y.copy()]
    for k in range(1, n_steps + 1):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if k % record_every == 0:
            out.append(y.copy())
    return np.array(out)


_MEMO: dict = {}


def compute_reference(problem: Problem, T: float | None = None, record_dt: float | None = None,
                      step: float = ORACLE_STEP, cache_dir: Path | None = None,
                      rtol: float = ORACLE_RTOL) -> Reference:
    """Classical RK4 at a tiny step, recorded every ``record_dt``.

    The run is repeated with half the step; the relative endpoint change
    must stay below ``rtol``. Results are memoised in-process and, with
    ``cache_dir``, on disk (keyed by the problem's content hash).
    """
    T = problem.T if T is None else T
    record_dt = T if record_dt is None else record_dt
    n_record = int(round(T / record_dt))
    if n_record < 1 or abs(n_record * record_dt - T) > 1e-9 * T:
        raise ValueError("record_dt must divide T")
    per_record = max(1, math.ceil(record_dt / step - 1e-9))
    h_ref = record_dt / per_record
    key = f"{problem.with_horizon(T).key()}-{float.hex(record_dt)}-{float.hex(h_ref)}"
    if key in _MEMO:
        return _MEMO[key]
    path = Path(cache_dir) / f"ref-{problem.name}-{key}.npz" if cache_dir else None
    if path is not None and path.exists():
        with np.load(path) as z:
            ref = Reference(z["times"], z["states"], float(z["step"]), float(z["self_consistency"]))
        _MEMO[key] = ref
        return ref

    f = _fast_field(problem.system)
    states = _rk4(f, problem.y0, h_ref, n_record * per_record, per_record)
    fine = _rk4(f, problem.y0, h_ref / 2, 2 * n_record * per_record, 2 * n_record * per_record)
    drift = float(np.linalg.norm(fine[-1] - states[-1]) / max(np.linalg.norm(fine[-1]), 1e-300))
    if not drift <= rtol:
        raise OracleSelfConsistencyFailure(
            f"halving the oracle step moved the endpoint by {drift:.2e} (relative) > {rtol:.0e}")
    ref = Reference(np.arange(n_record + 1) * record_dt, states, h_ref, drift)
    ref.times[-1] = T
    if path is not None:
        import io

        buf = io.BytesIO()
        np.savez(buf, times=ref.times, states=ref.states, step=ref.step,
                 self_consistency=ref.self_consistency)
        _atomic_write(path, buf.getvalue())
    _MEMO[key] = ref
    return ref


def fit_order(step_sizes, errors) -> float:
    """Least-squares slope of log(error) against log(h)."""
    return float(np.polyfit(np.log(step_sizes), np.log(errors), 1)[0])


# -- runs --------------------------------------------------------------------------

def _run_job(problem_spec, problem_params, T, method, h):
    problem = get_problem(problem_spec, **problem_params)
    return integrate(problem, method, h, T=T)


def _run_all(spec: ExperimentSpec, problem: Problem):
    jobs = [(m, h) for m in spec.methods for h in spec.step_sizes]
    if spec.jobs > 1:
        with ProcessPoolExecutor(spec.jobs) as pool:
            futures = [pool.submit(_run_job, spec.problem, spec.problem_params, problem.T, m, h)
                       for m, h in jobs]
            trajs = [f.result() for f in futures]
    else:
        trajs = [integrate(problem, m, h) for m, h in jobs]
    results = sorted(zip(jobs, trajs), key=lambda item: (item[0][0].label(), item[0][1]))
    return [(m, h, tr) for (m, h), tr in results]


def _nonconverged(method: Method, traj: Trajectory) -> int:
    fp = getattr(method.config, "fp", None)
    if fp is None:
        return 0
    return int(np.sum(traj.residuals[1:] > fp.tolerance))


def _h_tag(h: float) -> str:
    return format(h, ".6g")


def run_single(problem: Problem, method: Method, h: float, out: Path) -> tuple[Path, Trajectory]:
    traj = integrate(problem, method, h)
    path = write_trajectory_csv(Path(out) / f"{problem.name}_{method.label()}_h{_h_tag(h)}.csv", traj)
    return path, traj


def run_energy_experiment(spec: ExperimentSpec) -> dict:
    """One trajectory CSV per (method, h) plus ``energy_summary.json``."""
    problem = spec.build_problem()
    out = spec.outputs
    written: list[Path] = []
    try:
        runs = []
        for method, h, traj in _run_all(spec, problem):
            path = write_trajectory_csv(out / f"energy_{problem.name}_{method.label()}_h{_h_tag(h)}.csv", traj)
            written.append(path)
            inc = energy_increments_from_csv(path)
            runs.append({
                "method": method.label(), "h": h, "file": path.name, "steps": len(inc),
                "energy_start": float(traj.energies[0]), "energy_end": float(traj.energies[-1]),
                "max_increment": float(inc.max()) if inc.size else 0.0,
                "min_increment": float(inc.min()) if inc.size else 0.0,
                "monotone": bool(inc.size == 0 or inc.max() <= MONOTONE_TOL),
                "max_iterations": int(traj.iterations.max()),
                "nonconverged_steps": _nonconverged(method, traj),
            })
        summary = {"problem": problem.name, "T": problem.T, "tolerance": MONOTONE_TOL, "runs": runs}
        written.append(out / "energy_summary.json")
        _atomic_write(out / "energy_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return summary


def run_convergence_experiment(spec: ExperimentSpec, cache_dir: Path | None = None) -> dict:
    """Endpoint errors against the oracle and fitted orders per method.

    Also writes the error along each trajectory (error vs t at fixed h)
    whenever the run's times fall on the reference record grid.
    """
    if len(spec.step_sizes) < 3:
        raise ValueError("a convergence sweep needs at least 3 step sizes")
    problem = spec.build_problem()
    out = spec.outputs
    hmin = min(spec.step_sizes)
    aligned = all(abs(h / hmin - round(h / hmin)) < 1e-9 for h in spec.step_sizes)
    ref = compute_reference(problem, record_dt=hmin if aligned else None, cache_dir=cache_dir)
    rows, by_method = [], {}
    for method, h, traj in _run_all(spec, problem):
        err = float(np.linalg.norm(traj.states[-1] - ref.endpoint))
        rows.append((method.label(), h, err))
        by_method.setdefault(method.label(), []).append((h, err))
        if aligned:
            t_rows = []
            for t, y in zip(traj.times, traj.states):
                y_ref = ref.at(t)
                if y_ref is not None:
                    t_rows.append((t, float(np.linalg.norm(y - y_ref))))
            write_csv(out / f"error_vs_t_{problem.name}_{method.label()}_h{_h_tag(h)}.csv",
                      ["t", "error"], t_rows)
    write_csv(out / f"errors_{problem.name}.csv", ["method", "h", "error"],
              [(m, _fmt(h), _fmt(e)) for m, h, e in rows])
    orders = {}
    for label, pairs in by_method.items():
        hs, errs = zip(*pairs)
        orders[label] = fit_order(hs, errs) if all(e > 0 for e in errs) else float("nan")
    summary = {"problem": problem.name, "T": problem.T, "reference_step": ref.step,
               "reference_self_consistency": ref.self_consistency,
               "errors": [{"method": m, "h": h, "error": e} for m, h, e in rows],
               "orders": orders}
    _atomic_write(out / f"orders_{problem.name}.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


DAMPING_METHODS = ("effed", "avf", "avfc", "ieuler")


def damping_methods(r: int = 2) -> list[Method]:
    """The damping roster, with Newton stage solves (the test problem is linear)."""
    return [Method.from_options(name, r=r, solver="newton", fp_maxiter=50)
            for name in DAMPING_METHODS]


def run_damping_experiment(lambdas, hs, out: Path | None = None, methods=None) -> dict:
    """Amplification ``|y1 / y0|`` on ``y' = -lam y`` for each (lam, h).

    Checks that the EFFED column equals ``exp(-h lam)`` within 1e-10 and is
    the smallest in every row with ``h lam > 0``.
    """
    methods = methods or damping_methods()
    labels = [m.label() for m in methods]
    rows = []
    ok = True
    for lam in lambdas:
        problem = make_linear(lam=float(lam), y0=1.0)
        for h in hs:
            amp = {}
            for m in methods:
                res = make_stepper(m, problem.system).step(h, problem.y0)
                amp[m.label()] = abs(float(res.y1[0]) / float(problem.y0[0]))
            eff = next(v for k, v in amp.items() if k.startswith("effed"))
            exact = math.exp(-h * lam)
            matches = abs(eff - exact) <= 1e-10
            others = [v for k, v in amp.items() if not k.startswith("effed")]
            smallest = all(eff < v for v in others) if h * lam > 0 else all(eff <= v for v in others)
            ok = ok and matches and smallest
            rows.append({"lambda": lam, "h": h, "z": h * lam, "exp(-z)": exact, **amp,
                         "effed_matches_exp": matches, "effed_smallest": smallest})
    result = {"rows": rows, "ok": ok}
    if out is not None:
        header = ["lambda", "h", "z", "exp(-z)"] + labels + ["effed_matches_exp", "effed_smallest"]
        write_csv(Path(out) / "damping.csv", header,
                  [[str(r[k]).lower() if isinstance(r[k], bool) else r[k] for k in header] for r in rows])
        _atomic_write(Path(out) / "damping_summary.json", json.dumps(result, indent=2) + "\n")
    return result
