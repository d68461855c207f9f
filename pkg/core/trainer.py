"""
Levenberg-Marquardt training of NARX networks on open-loop rows, plus the
feedforward ANN baseline trained with the same machinery.

Epoch = one full-batch LM iteration that ends in an accepted step.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from core.errors import (
    DimensionMismatch,
    InvalidConfig,
    MissingGroundTruth,
    NonFiniteLoss,
    SingularSystem,
    TooFewRows,
)
from core.narx import NarxNetwork, RegressorRows, forward_batch, init_network, predict_free_run

log = logging.getLogger("trainer")

MIN_ROWS = 10
VALIDATION_MODES = ("open_loop", "closed_loop")


class StopReason(str, Enum):
    MAX_EPOCHS = "MaxEpochs"
    GOAL = "Goal"
    VAL_PATIENCE = "ValPatience"
    MU_OVERFLOW = "MuOverflow"


@dataclass
class TrainConfig:
    """LM hyperparameters.  Defaults are the conventional LM / toolbox values."""

    max_epochs: int = 1000
    mu_init: float = 1e-3
    mu_increase: float = 10.0
    mu_decrease: float = 0.1
    mu_max: float = 1e10
    mu_min: float = 1e-20
    goal_mse: float = 0.0
    val_patience: int = 6
    split_ratios: Tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 0
    # "closed_loop" scores validation/test rows with fed-back estimates
    validation: str = "open_loop"
    # std of seeded noise added to the output-lag columns of training rows (normalized units)
    feedback_noise: float = 0.0

    def __post_init__(self) -> None:
        self.split_ratios = tuple(float(r) for r in self.split_ratios)
        if len(self.split_ratios) != 3 or min(self.split_ratios) <= 0:
            raise InvalidConfig("split_ratios must be three positive numbers")
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise InvalidConfig(f"split_ratios must sum to 1, got {sum(self.split_ratios)}")
        if not (0 < self.mu_min <= self.mu_init <= self.mu_max):
            raise InvalidConfig("mu bounds must satisfy 0 < mu_min <= mu_init <= mu_max")
        if not (0 < self.mu_decrease < 1 < self.mu_increase):
            raise InvalidConfig("need 0 < mu_decrease < 1 < mu_increase")
        if self.max_epochs < 0 or self.val_patience < 0 or self.goal_mse < 0:
            raise InvalidConfig("max_epochs, val_patience and goal_mse must be non-negative")
        if self.validation not in VALIDATION_MODES:
            raise InvalidConfig(f"validation must be one of {VALIDATION_MODES}, got {self.validation!r}")
        if not (self.feedback_noise >= 0 and math.isfinite(self.feedback_noise)):
            raise InvalidConfig("feedback_noise must be a finite non-negative number")

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["split_ratios"] = list(self.split_ratios)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class SplitIndices:
    train: range
    val: range
    test: range

    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


MSE_FIELDS = ("final_train_mse", "final_val_mse", "final_test_mse")
MSE_HISTORIES = ("train_mse", "val_mse", "test_mse")


def _finite_or_none(value: float) -> Optional[float]:
    return value if math.isfinite(value) else None


def _none_to_nan(value: Optional[float]) -> float:
    return float("nan") if value is None else float(value)


@dataclass
class TrainReport:
    model: str = "narx"
    epochs_run: int = 0
    train_mse: List[float] = field(default_factory=list)
    val_mse: List[float] = field(default_factory=list)
    test_mse: List[float] = field(default_factory=list)
    accepted_steps: int = 0
    rejected_steps: int = 0
    stop_reason: StopReason = StopReason.MAX_EPOCHS
    best_epoch: int = 0
    final_train_mse: float = float("nan")
    final_val_mse: float = float("nan")
    final_test_mse: float = float("nan")
    split_sizes: Tuple[int, int, int] = (0, 0, 0)
    checksum: str = ""

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["stop_reason"] = self.stop_reason.value
        d["split_sizes"] = list(self.split_sizes)
        # empty blocks score NaN, written as null
        for key in MSE_FIELDS:
            d[key] = _finite_or_none(d[key])
        for key in MSE_HISTORIES:
            d[key] = [_finite_or_none(v) for v in d[key]]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TrainReport":
        d = dict(d)
        d["stop_reason"] = StopReason(d.get("stop_reason", StopReason.MAX_EPOCHS.value))
        d["split_sizes"] = tuple(d.get("split_sizes", (0, 0, 0)))
        for key in MSE_FIELDS:
            if key in d:
                d[key] = _none_to_nan(d[key])
        for key in MSE_HISTORIES:
            if key in d:
                d[key] = [_none_to_nan(v) for v in d[key]]
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


# ── Splitting ─────────────────────────────────────────────────────────

def split_rows(rows: Union[RegressorRows, int], config: TrainConfig) -> SplitIndices:
    """
    Contiguous train/val/test blocks in temporal order.

    Rounding rule: floor the train and validation sizes, the remainder is test.
    """
    n = rows if isinstance(rows, int) else len(rows)
    if n < MIN_ROWS:
        raise TooFewRows(f"need at least {MIN_ROWS} rows to split, got {n}")
    r_train, r_val, _ = config.split_ratios
    n_train = int(math.floor(r_train * n + 1e-9))
    n_val = int(math.floor(r_val * n + 1e-9))
    if n_train == 0:
        raise TooFewRows(f"train ratio {r_train} leaves no training rows out of {n}")
    return SplitIndices(
        train=range(0, n_train),
        val=range(n_train, n_train + n_val),
        test=range(n_train + n_val, n),
    )


def split_by_steps(rows: RegressorRows, timeline: SplitIndices) -> SplitIndices:
    """
    Row blocks whose target steps fall in the ``timeline`` step ranges.

    ``timeline`` is a split of sample indices (not row indices), so several row
    sets cut from the same series share one train/val/test boundary.  Steps must
    be non-decreasing; rows outside every range are dropped.
    """
    steps = np.asarray(rows.steps)
    if len(steps) > 1 and np.any(np.diff(steps) < 0):
        raise DimensionMismatch("rows must be in time order to split by step")

    def block(r: range) -> range:
        lo, hi = np.searchsorted(steps, [r.start, r.stop], side="left")
        return range(int(lo), int(hi))

    split = SplitIndices(block(timeline.train), block(timeline.val), block(timeline.test))
    if len(split.train) == 0:
        raise TooFewRows(f"no rows fall in training steps {timeline.train.start}..{timeline.train.stop}")
    return split


# ── Jacobian & damped solve ───────────────────────────────────────────

def lm_jacobian(net: NarxNetwork, rows: RegressorRows) -> np.ndarray:
    """
    d(residual)/d(weight) for residual e_i = target_i - forward(row_i).

    Columns follow the flat parameter order of ``NarxNetwork.parameters``.
    """
    X = np.asarray(rows.values, dtype=float)
    if len(X) == 0:
        raise TooFewRows("jacobian needs at least one row")
    if X.ndim != 2 or X.shape[1] != net.config.regressor_len:
        raise DimensionMismatch(f"rows have shape {X.shape}, network expects {net.config.regressor_len} columns")

    m = len(X)
    hidden = np.tanh(X @ net.hidden_weights.T + net.hidden_bias)      # [m x H]
    gate = (1.0 - hidden ** 2) * net.output_weights                    # d f / d pre-activation
    d_weights = (gate[:, :, None] * X[:, None, :]).reshape(m, -1)     # row-major (i, j)
    jac_f = np.hstack([d_weights, gate, hidden, np.ones((m, 1))])
    return -jac_f


def solve_damped(jtj: np.ndarray, jte: np.ndarray, mu: float) -> np.ndarray:
    """Solve (J^T J + mu I) delta = J^T e through a Cholesky factorization."""
    a = jtj + mu * np.eye(len(jtj))
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"damped system not positive definite at mu={mu:.3g}") from exc
    return np.linalg.solve(lower.T, np.linalg.solve(lower, jte))


def _residuals(net: NarxNetwork, rows: RegressorRows) -> np.ndarray:
    return rows.targets - forward_batch(net, rows.values)


def _mse(net: NarxNetwork, rows: RegressorRows) -> float:
    if len(rows) == 0:
        return float("nan")
    e = _residuals(net, rows)
    return float(np.mean(e * e))


def _score(net: NarxNetwork, rows: RegressorRows, config: TrainConfig) -> float:
    """Validation/test error, fed back through the network in closed-loop mode."""
    if config.validation != "closed_loop" or len(rows) == 0:
        return _mse(net, rows)
    e = rows.targets - predict_free_run(net, rows)
    return float(np.mean(e * e))


def _with_feedback_noise(rows: RegressorRows, config: TrainConfig) -> RegressorRows:
    n_y = len(rows.config.output_delays)
    if n_y == 0 or config.feedback_noise == 0 or len(rows) == 0:
        return rows
    rng = np.random.default_rng(config.seed)
    values = np.array(rows.values, dtype=float)
    values[:, :n_y] += rng.normal(0.0, config.feedback_noise, size=(len(values), n_y))
    return RegressorRows(rows.config, values, rows.targets, rows.steps)


# ── Training ──────────────────────────────────────────────────────────

def _levenberg_marquardt(
    net: NarxNetwork,
    rows: RegressorRows,
    config: TrainConfig,
    split: Optional[SplitIndices] = None,
) -> Tuple[NarxNetwork, TrainReport]:
    if rows.targets is None:
        raise MissingGroundTruth("training rows carry no targets")
    if rows.values.shape[1] != net.config.regressor_len:
        raise DimensionMismatch(
            f"rows have {rows.values.shape[1]} columns, network expects {net.config.regressor_len}"
        )

    split = split or split_rows(rows, config)
    train, val, test = rows.take(split.train), rows.take(split.val), rows.take(split.test)
    train = _with_feedback_noise(train, config)
    report = TrainReport(model=net.config.model, split_sizes=split.sizes())
    if len(val) == 0:
        log.warning("empty validation block: keeping the last accepted epoch, no early stopping")

    current = net
    theta = current.parameters()
    e = _residuals(current, train)
    if not np.all(np.isfinite(e)):
        raise NonFiniteLoss("initial residuals are not finite")
    train_mse = float(np.mean(e * e))

    best_net, best_val = current, _score(current, val, config)
    fails = 0
    mu = config.mu_init
    stop = StopReason.MAX_EPOCHS

    while report.epochs_run < config.max_epochs:
        if train_mse <= config.goal_mse:
            stop = StopReason.GOAL
            break

        jac = lm_jacobian(current, train)
        jtj = jac.T @ jac
        jte = jac.T @ e

        accepted = False
        while True:
            try:
                delta = solve_damped(jtj, jte, mu)
            except SingularSystem:
                if mu >= config.mu_max:
                    raise
                mu = min(mu * config.mu_increase, config.mu_max)
                report.rejected_steps += 1
                continue
            if not np.all(np.isfinite(delta)):
                raise NonFiniteLoss(f"LM step is not finite at mu={mu:.3g}")

            candidate_theta = theta - delta
            candidate = current.with_parameters(candidate_theta)
            e_new = _residuals(candidate, train)
            if not np.all(np.isfinite(e_new)):
                raise NonFiniteLoss("residuals became non-finite")
            new_mse = float(np.mean(e_new * e_new))

            if new_mse < train_mse:
                current, theta, e, train_mse = candidate, candidate_theta, e_new, new_mse
                mu = max(mu * config.mu_decrease, config.mu_min)
                accepted = True
                break

            mu *= config.mu_increase
            report.rejected_steps += 1
            if mu > config.mu_max:
                break

        if not accepted:
            stop = StopReason.MU_OVERFLOW
            break

        report.epochs_run += 1
        report.accepted_steps += 1
        val_mse = _score(current, val, config)
        report.train_mse.append(train_mse)
        report.val_mse.append(val_mse)
        report.test_mse.append(_score(current, test, config))
        log.debug("epoch %d  mu=%.3g  train=%.4e  val=%.4e", report.epochs_run, mu, train_mse, val_mse)

        # without a validation block every accepted epoch counts as an improvement
        if len(val) == 0 or val_mse < best_val:
            best_net, best_val, fails = current, val_mse, 0
            report.best_epoch = report.epochs_run
        else:
            fails += 1
            if fails > config.val_patience:
                stop = StopReason.VAL_PATIENCE
                break

        if train_mse <= config.goal_mse:
            stop = StopReason.GOAL
            break

    report.stop_reason = stop
    report.final_train_mse = _mse(best_net, train)
    report.final_val_mse = _score(best_net, val, config)
    report.final_test_mse = _score(best_net, test, config)
    report.checksum = best_net.checksum()
    log.info(
        "%s stopped: %s after %d epochs (best %d), train=%.3e val=%.3e test=%.3e",
        net.config.model, stop.value, report.epochs_run, report.best_epoch,
        report.final_train_mse, report.final_val_mse, report.final_test_mse,
    )
    return best_net, report


def train_narx(
    net: NarxNetwork,
    rows: RegressorRows,
    config: TrainConfig,
    split: Optional[SplitIndices] = None,
) -> Tuple[NarxNetwork, TrainReport]:
    """
    Fit ``net`` on open-loop rows with Levenberg-Marquardt.

    Rows are split with ``split_rows`` unless a ``split`` of row indices is
    given; the returned network holds the weights of the best validation epoch.
    """
    if rows.config.regressor_len != net.config.regressor_len:
        raise DimensionMismatch("rows and network were built from different configurations")
    return _levenberg_marquardt(net, rows, config, split)


def train_ann_baseline(
    rows: RegressorRows,
    config: TrainConfig,
    hidden_neurons: Optional[int] = None,
    split: Optional[SplitIndices] = None,
) -> Tuple[NarxNetwork, TrainReport]:
    """
    Static feedforward baseline: same input lags, no output feedback.

    NARX rows are accepted and stripped of their output-lag columns.
    """
    if rows.config.model != "ann":
        rows = rows.without_feedback()
    cfg = rows.config
    if hidden_neurons is not None and hidden_neurons != cfg.hidden_neurons:
        cfg = type(cfg)(cfg.input_delays, (), hidden_neurons, cfg.input_channels, "ann")
        rows = RegressorRows(cfg, rows.values, rows.targets, rows.steps)
    net = init_network(cfg, seed=config.seed)
    return _levenberg_marquardt(net, rows, config, split)
