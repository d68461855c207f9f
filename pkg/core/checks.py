"""
Invariant suite behind ``soc_cli.py selftest``.

Each check returns a CheckResult instead of raising so the whole suite runs
and reports every failure at once.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from core.narx import (
    ClosedLoopState,
    NarxConfig,
    NarxNetwork,
    RegressorRows,
    forward,
    init_network,
    iter_closed_loop,
    predict_closed_loop,
    predict_open_loop,
)
from core.pipeline import CoulombConfig, coulomb_count
from core.presets import list_presets, load_preset
from core.series import Device, SampleSeries
from core.simulator import simulate_battery, simulate_sc
from core.trainer import lm_jacobian

log = logging.getLogger("selftest")

COULOMB_TOL = 1e-9
JACOBIAN_RTOL = 1e-5


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def to_dict(self) -> Dict[str, object]:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


# ── Random instances ──────────────────────────────────────────────────

def random_config(rng: np.random.Generator, model: str = "narx") -> NarxConfig:
    n_in = int(rng.integers(1, 4))
    n_out = int(rng.integers(1, 4)) if model == "narx" else 0
    return NarxConfig(
        input_delays=tuple(sorted(rng.choice(np.arange(1, 6), size=n_in, replace=False))),
        output_delays=tuple(sorted(rng.choice(np.arange(1, 6), size=n_out, replace=False))),
        hidden_neurons=int(rng.integers(1, 9)),
        model=model,
    )


def random_series(rng: np.random.Generator, n: int = 40, dt: float = 1.0) -> SampleSeries:
    return SampleSeries(
        t=np.arange(n) * dt,
        current=rng.uniform(-1.0, 1.0, n),
        voltage=rng.uniform(-1.0, 1.0, n),
        soc=rng.uniform(-1.0, 1.0, n),
        normalized=True,
    )


# ── Checks ────────────────────────────────────────────────────────────

def check_coulomb_equivalence(presets: Optional[List[str]] = None) -> CheckResult:
    """Coulomb counting on noiseless simulator output reproduces the simulator SOC."""
    worst, where = 0.0, ""
    for name in presets or list_presets():
        preset = load_preset(name)
        kind = preset.default_profile
        for dev_name, block in preset.devices.items():
            params = block.device_params()
            soc_init = block.soc_init(kind)
            profile = block.profile(kind, seed=0)
            sim = simulate_battery if block.kind == Device.BATTERY else simulate_sc
            series = sim(params, profile, soc_init)
            counted = coulomb_count(series.without_soc(), CoulombConfig(params.capacity_c, soc_init))
            err = float(np.max(np.abs(counted.soc - series.soc)))
            if err > worst:
                worst, where = err, f"{name}/{dev_name}"
    passed = worst <= COULOMB_TOL
    return CheckResult("coulomb_equivalence", passed, f"max |diff| {worst:.3e}" + (f" at {where}" if where else ""))


def _finite_difference(net: NarxNetwork, row: np.ndarray, h: float = 1e-6) -> np.ndarray:
    theta = net.parameters()
    grad = np.empty_like(theta)
    for k in range(len(theta)):
        up, down = theta.copy(), theta.copy()
        up[k] += h
        down[k] -= h
        grad[k] = (forward(net.with_parameters(up), row) - forward(net.with_parameters(down), row)) / (2 * h)
    return grad


def check_jacobian(instances: int = 20, seed: int = 0) -> CheckResult:
    """lm_jacobian against central differences of the residual."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        cfg = random_config(rng)
        net = init_network(cfg, seed=int(rng.integers(1 << 31))).with_parameters(
            rng.normal(0.0, 1.0, cfg.n_parameters)
        )
        row = rng.uniform(-1.0, 1.0, cfg.regressor_len)
        rows = RegressorRows(cfg, row[None, :], np.zeros(1), np.zeros(1, dtype=int))
        analytic = lm_jacobian(net, rows)[0]
        numeric = -_finite_difference(net, row)          # residual = target - output
        rel = float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12))
        worst = max(worst, rel)
    return CheckResult("jacobian_fd", worst <= JACOBIAN_RTOL, f"worst relative error {worst:.3e} over {instances} instances")


def check_feedback_independence(instances: int = 10, seed: int = 1) -> CheckResult:
    """With zero weights on the output-lag columns, closed loop equals open loop bitwise."""
    rng = np.random.default_rng(seed)
    for i in range(instances):
        cfg = random_config(rng)
        net = init_network(cfg, seed=i)
        w = np.array(net.hidden_weights)
        w[:, :len(cfg.output_delays)] = 0.0
        net = NarxNetwork(cfg, w, net.hidden_bias, net.output_weights, net.output_bias)
        series = random_series(rng)
        open_loop = predict_open_loop(net, series)
        closed = predict_closed_loop(net, series.without_soc(), ClosedLoopState.start(cfg, soc0=0.5))
        if not np.array_equal(open_loop[cfg.max_lag:], closed[cfg.max_lag:]):
            return CheckResult("feedback_independence", False, f"instance {i} differs")
    return CheckResult("feedback_independence", True, f"{instances} instances identical")


def check_bootstrap(instances: int = 10, seed: int = 2) -> CheckResult:
    """Output-lag slots hold exactly SOC0 for every step before n0."""
    rng = np.random.default_rng(seed)
    for i in range(instances):
        cfg = random_config(rng)
        net = init_network(cfg, seed=i)
        series = random_series(rng).without_soc()
        soc0 = float(rng.uniform(0.0, 1.0))
        n0 = int(rng.integers(cfg.max_lag, len(series)))
        state = ClosedLoopState.start(cfg, soc0=soc0, n0=n0)
        n_y = len(cfg.output_delays)
        for n, row, y in iter_closed_loop(net, series, state):
            if row is None:
                ok = y == soc0
            elif n < n0:
                ok = bool(np.all(row[:n_y] == soc0))
            else:
                ok = True
            if not ok:
                return CheckResult("bootstrap", False, f"instance {i} step {n} (n0={n0}) did not feed SOC0")
    return CheckResult("bootstrap", True, f"{instances} instances respect n0")


CHECKS: Dict[str, Callable[[], CheckResult]] = {
    "coulomb_equivalence": check_coulomb_equivalence,
    "jacobian_fd": check_jacobian,
    "feedback_independence": check_feedback_independence,
    "bootstrap": check_bootstrap,
}


def run_selftest() -> List[CheckResult]:
    results = []
    for name, check in CHECKS.items():
        result = check()
        log.info("%-22s %s  %s", name, "ok" if result.passed else "FAIL", result.detail)
        results.append(result)
    return results
