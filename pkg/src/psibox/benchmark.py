"""Iteration timing with standard-error statistics and the scaling fit.

Repeats a fixed number of sweeps per worker count from one fixed initial
condition, reports mean and standard error sigma_e = sigma/sqrt(R), and
measures the host's per-site update and transfer times to feed the
analytic scaling model. Results are host-specific.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass

import numpy as np

from . import kernels, observables
from .config import RunConfig
from .errors import ConfigError
from .lattice import allocate, fill_random_gaussian
from .parallel import ScalingEstimate, evolve_parallel, scaling_estimate
from .transport import DIR_MIRROR, InprocHub, KIND_PLANE

__all__ = ["BenchmarkReport", "timing_stats", "fit_loglog_slope", "run_benchmark"]


@dataclass(frozen=True)
class MResult:
    workers: int
    mean: float
    sigma: float
    sigma_e: float
    runs: int


@dataclass
class BenchmarkReport:
    results: list[MResult]
    dtau_u: float
    dtau_c: float
    estimate: ScalingEstimate
    slope: float
    slope_err: float
    steps: int

    def to_dict(self) -> dict:
        return {
            "per_worker": [
                {"workers": r.workers, "mean_iteration_s": r.mean,
                 "sigma": r.sigma, "sigma_e": r.sigma_e, "runs": r.runs}
                for r in self.results
            ],
            "dtau_u_per_site_s": self.dtau_u,
            "dtau_c_per_site_s": self.dtau_c,
            "max_nodes_1d": self.estimate.max_nodes_1d,
            "max_nodes_3d": self.estimate.max_nodes_3d,
            "slope": self.slope,
            "slope_err": self.slope_err,
            "steps_per_run": self.steps,
        }


def timing_stats(times) -> tuple[float, float, float]:
    """Mean, sample standard deviation (ddof=1) and sigma_e = sigma/sqrt(R)."""
    t = np.asarray(times, dtype=np.float64)
    if t.size < 2:
        raise ConfigError("need at least 2 repetitions for a standard error")
    mean = float(np.mean(t))
    sigma = float(np.std(t, ddof=1))
    return mean, sigma, sigma / math.sqrt(t.size)


def fit_loglog_slope(workers, means) -> tuple[float, float]:
    """Least-squares slope of log(time) vs log(M), with its uncertainty."""
    x = np.log(np.asarray(workers, dtype=np.float64))
    y = np.log(np.asarray(means, dtype=np.float64))
    if x.size < 2:
        raise ConfigError("need at least 2 worker counts for a slope")
    if x.size == 2:
        slope = (y[1] - y[0]) / (x[1] - x[0])
        return float(slope), float("nan")
    coeffs, cov = np.polyfit(x, y, 1, cov=True)
    return float(coeffs[0]), float(np.sqrt(cov[0, 0]))


def measure_update_time(cfg: RunConfig, steps: int = 10) -> float:
    """Serial per-site sweep time (seconds/site)."""
    spec = cfg.spec()
    grid = cfg.make_grid(spec)
    f = fill_random_gaussian(allocate(spec), cfg.seed)
    out = f.values.copy()
    kernels.stencil_update(f.values, grid.coef_a, grid.coef_c, out, 1, spec.N)  # warm
    t0 = time.perf_counter()
    for _ in range(steps):
        kernels.stencil_update(f.values, grid.coef_a, grid.coef_c, out, 1, spec.N)
    elapsed = time.perf_counter() - t0
    return elapsed / (steps * spec.N ** 3)


def measure_transfer_time(cfg: RunConfig, reps: int = 50) -> float:
    """Per-site plane transfer time over the in-process transport.

    One round trip moves one (N+2)^2 plane each way; reported as seconds
    per site communicated (send plus receive).
    """
    ext = cfg.N + 2
    plane = np.arange(ext * ext, dtype=np.float64)
    hub = InprocHub(2)
    a, b = hub.endpoint(0), hub.endpoint(1)

    def echo():
        for tag in range(1, reps + 1):
            msg = b.recv(0, KIND_PLANE, tag)
            b.send(0, KIND_PLANE, DIR_MIRROR, tag, msg.payload)

    t = threading.Thread(target=echo, daemon=True)
    t.start()
    a.send(1, KIND_PLANE, DIR_MIRROR, 1, plane)
    a.recv(1, KIND_PLANE, 1)  # warm both directions
    t0 = time.perf_counter()
    for tag in range(2, reps + 1):
        a.send(1, KIND_PLANE, DIR_MIRROR, tag, plane)
        a.recv(1, KIND_PLANE, tag)
    elapsed = time.perf_counter() - t0
    t.join()
    return elapsed / ((reps - 1) * ext * ext)


def run_benchmark(cfg: RunConfig, m_list, reps: int = 5,
                  steps: int = 30) -> BenchmarkReport:
    """Time ``steps`` sweeps per worker count, R repetitions each.

    Every repetition starts from the same seeded initial condition;
    convergence checking is disabled so the loop times pure sweeps plus
    the per-sweep renormalization reduction.
    """
    if reps < 2:
        raise ConfigError("benchmark needs reps >= 2")
    results = []
    for m in m_list:
        if cfg.N % m:
            raise ConfigError(f"N={cfg.N} not divisible by benchmark worker count {m}")
        spec = cfg.spec()
        grid = cfg.make_grid(spec)
        times = []
        for _ in range(reps):
            initial = fill_random_gaussian(allocate(spec), cfg.seed)
            t0 = time.perf_counter()
            evolve_parallel(grid, workers=m, initial=initial, tol=cfg.tol,
                            check_freq=steps + 1, max_steps=steps,
                            max_snapshots=0)
            times.append((time.perf_counter() - t0) / steps)
        mean, sigma, sigma_e = timing_stats(times)
        results.append(MResult(workers=m, mean=mean, sigma=sigma,
                               sigma_e=sigma_e, runs=reps))
    dtau_u = measure_update_time(cfg)
    dtau_c = measure_transfer_time(cfg)
    estimate = scaling_estimate(dtau_u, dtau_c, cfg.N, max(m_list))
    slope, slope_err = fit_loglog_slope([r.workers for r in results],
                                        [r.mean for r in results])
    return BenchmarkReport(results=results, dtau_u=dtau_u, dtau_c=dtau_c,
                           estimate=estimate, slope=slope, slope_err=slope_err,
                           steps=steps)
