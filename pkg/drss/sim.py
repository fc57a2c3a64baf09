"""
Simulation settings and the Monte Carlo harness.

Gaussian covariates, labeling models P1 (constant), P2 (offset logistic),
P2' (sparse offset logistic) and P3 (stratified), outcome models O1 (linear),
O2 (quadratic), O3 (cubic) and O1' (sparse linear). Every replication draws
from its own random stream so results do not depend on worker count.
"""
import functools
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import expit
from tqdm import tqdm

from .core import RandomStream, SampleMode, SemiSupervisedSample, make_folds, validate_sample
from .errors import CalibrationNotBracketed, DimensionMismatch, DrssError, InvalidSpec
from .inference import build_report
from .linear_models import OutcomeSpec
from .mean_estimators import (
    CrossFitted,
    NuisancePredictions,
    cross_fit_outcome,
    cross_fit_propensity,
    estimate_dr,
    naive_labeled_mean,
)
from .propensity import PsSpec, fit_offset_logistic_lasso, fit_offset_logistic_mle, theoretical_penalty

logger = logging.getLogger(__name__)

CALIBRATION_BRACKET = (-20.0, 20.0)
CALIBRATION_MC_SIZE = 10**6
HIGH_DIMENSION = 50

TABLE_COLUMNS = ["estimator_ps", "estimator_m", "bias", "rmse", "length", "coverage", "esd", "asd", "err_m", "err_pi"]
ADJUSTED_COLUMNS = ["length_adj", "coverage_adj", "asd_adj"]


class PsModel(str, Enum):
    P1 = "P1_constant"
    P2 = "P2_offset_logistic"
    P2_SPARSE = "P2prime_sparse"
    P3 = "P3_stratified"


class OutcomeModel(str, Enum):
    O1 = "O1_linear"
    O2 = "O2_quadratic"
    O1_SPARSE = "O1prime_sparse"
    O3 = "O3_cubic"


SETTINGS: Dict[str, Tuple[PsModel, OutcomeModel]] = {
    "a": (PsModel.P1, OutcomeModel.O1),
    "b": (PsModel.P1, OutcomeModel.O2),
    "c": (PsModel.P2, OutcomeModel.O1),
    "d": (PsModel.P2, OutcomeModel.O2),
    "e": (PsModel.P3, OutcomeModel.O2),
    "f": (PsModel.P2, OutcomeModel.O3),
    "c'": (PsModel.P2_SPARSE, OutcomeModel.O1_SPARSE),
}
SETTING_ALIASES = {"c-prime": "c'", "cprime": "c'"}


def _padded(head: Sequence[float], length: int) -> np.ndarray:
    vector = np.zeros(length)
    vector[: len(head)] = head
    return vector


def beta0(p: int) -> np.ndarray:
    return _padded([-0.5, 1.0, 1.0, 1.0], p + 1)


def alpha0(p: int) -> np.ndarray:
    return _padded([0.0, 1.0, 1.0, 1.0], p + 1)


def zeta0(p: int) -> np.ndarray:
    return _padded([0.0, 0.2, 0.2, 0.2], p + 1)


def beta_sparse(p: int, s_m: int) -> np.ndarray:
    return _padded([-0.5] + [np.sqrt(3.0 / s_m)] * s_m, p + 1)


def gamma_slopes(p: int) -> np.ndarray:
    return _padded([1.0], p)


def gamma_sparse_slopes(p: int, s_pi: int) -> np.ndarray:
    return _padded([np.sqrt(1.0 / s_pi)] * s_pi, p)


@functools.lru_cache(maxsize=64)
def _calibrate(pi_N: float, slope_norm: float, mc_size: int, seed: int) -> float:
    # x'slopes ~ N(0, |slopes|^2) for standard normal x, so one dimension suffices
    u = slope_norm * RandomStream(seed).derive("calibration").generator().standard_normal(mc_size)
    log_pi = np.log(pi_N)

    def excess(intercept: float) -> float:
        return float(np.mean(expit(intercept + u + log_pi)) - pi_N)

    low, high = CALIBRATION_BRACKET
    if excess(low) > 0 or excess(high) < 0:
        raise CalibrationNotBracketed(f"no intercept in [{low}, {high}] gives E(R) = {pi_N}")
    for _ in range(200):
        middle = 0.5 * (low + high)
        if excess(middle) < 0:
            low = middle
        else:
            high = middle
        if high - low < 1e-12:
            break
    return 0.5 * (low + high)


def calibrate_gamma_intercept(
    pi_N: float, gamma_slopes, p: int, mc_size: int = CALIBRATION_MC_SIZE, seed: int = 0
) -> float:
    """Intercept making the Monte Carlo mean of g(x'gamma + log pi_N) equal pi_N."""
    slopes = np.asarray(gamma_slopes, dtype=float)
    if slopes.shape != (p,):
        raise DimensionMismatch(f"gamma slopes have shape {slopes.shape}, expected ({p},)")
    if not 0.0 < pi_N < 1.0:
        raise InvalidSpec(f"pi_N must lie in (0, 1), got {pi_N}")
    return _calibrate(float(pi_N), float(np.linalg.norm(slopes)), int(mc_size), int(seed))


@dataclass(frozen=True, eq=False)
class OutcomeFunction:
    """m(x) = x'beta + sum alpha_j x_j^2 + sum zeta_j x_j^3 (intercept in beta)."""

    beta: np.ndarray
    alpha: Optional[np.ndarray] = None
    zeta: Optional[np.ndarray] = None

    def __call__(self, X: np.ndarray) -> np.ndarray:
        values = self.beta[0] + X @ self.beta[1:]
        if self.alpha is not None:
            values = values + (X**2) @ self.alpha[1:]
        if self.zeta is not None:
            values = values + (X**3) @ self.zeta[1:]
        return values


@dataclass(frozen=True, eq=False)
class PropensityFunction:
    model: PsModel
    pi_N: float
    intercept: float = 0.0
    slopes: Optional[np.ndarray] = None

    def __call__(self, X: np.ndarray) -> np.ndarray:
        if self.model is PsModel.P1:
            return np.full(X.shape[0], self.pi_N)
        if self.model is PsModel.P3:
            p_delta = expit(X[:, 0])
            return 0.5 * self.pi_N * p_delta + 1.5 * self.pi_N * (1.0 - p_delta)
        return expit(self.intercept + X @ self.slopes + np.log(self.pi_N))


@dataclass(frozen=True)
class DgpSpec:
    ps_model: PsModel
    outcome_model: OutcomeModel
    N: int
    p: int
    pi_N: float
    s_m: Optional[int] = None
    s_pi: Optional[int] = None
    setting: Optional[str] = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "ps_model", PsModel(self.ps_model))
            object.__setattr__(self, "outcome_model", OutcomeModel(self.outcome_model))
        except ValueError as exc:
            raise InvalidSpec(str(exc)) from exc
        if self.N < 2:
            raise InvalidSpec(f"N must be at least 2, got {self.N}")
        if not 0.0 < self.pi_N < 1.0:
            raise InvalidSpec(f"pi_N must lie in (0, 1), got {self.pi_N}")
        if self.ps_model is PsModel.P3 and 1.5 * self.pi_N > 1.0:
            raise InvalidSpec(f"stratified labeling needs 1.5 pi_N <= 1, got pi_N={self.pi_N}")
        if self.outcome_model is not OutcomeModel.O1_SPARSE and self.p < 3:
            raise InvalidSpec(f"outcome model {self.outcome_model.value} needs p >= 3, got {self.p}")
        if self.p < 1:
            raise InvalidSpec(f"p must be positive, got {self.p}")
        if self.outcome_model is OutcomeModel.O1_SPARSE and not (self.s_m and 1 <= self.s_m <= self.p):
            raise InvalidSpec(f"sparse outcome needs 1 <= s_m <= p, got s_m={self.s_m}")
        if self.ps_model is PsModel.P2_SPARSE and not (self.s_pi and 1 <= self.s_pi <= self.p):
            raise InvalidSpec(f"sparse propensity needs 1 <= s_pi <= p, got s_pi={self.s_pi}")

    @classmethod
    def from_setting(
        cls, setting: str, N: int, p: int, pi_N: float, s_m: Optional[int] = None, s_pi: Optional[int] = None
    ) -> "DgpSpec":
        setting = SETTING_ALIASES.get(setting, setting)
        if setting not in SETTINGS:
            raise InvalidSpec(f"unknown setting '{setting}'; choose from {sorted(SETTINGS)}")
        ps_model, outcome_model = SETTINGS[setting]
        if setting == "c'":
            s_m, s_pi = s_m or 3, s_pi or 15
        return cls(ps_model, outcome_model, N, p, pi_N, s_m, s_pi, setting)

    @property
    def label(self) -> str:
        name = self.setting or f"{self.ps_model.value}+{self.outcome_model.value}"
        sparsity = f" s_m={self.s_m} s_pi={self.s_pi}" if self.s_m or self.s_pi else ""
        return f"{name} p={self.p} N={self.N} pi={self.pi_N:g}{sparsity}"

    @property
    def setting_id(self) -> str:
        return f"{self.ps_model.value}|{self.outcome_model.value}|{self.N}|{self.p}|{self.pi_N!r}|{self.s_m}|{self.s_pi}"

    @property
    def theta0(self) -> float:
        if self.outcome_model in (OutcomeModel.O2, OutcomeModel.O3):
            return 2.5
        return -0.5

    def outcome_function(self) -> OutcomeFunction:
        if self.outcome_model is OutcomeModel.O1_SPARSE:
            return OutcomeFunction(beta_sparse(self.p, self.s_m))
        if self.outcome_model is OutcomeModel.O1:
            return OutcomeFunction(beta0(self.p))
        if self.outcome_model is OutcomeModel.O2:
            return OutcomeFunction(beta0(self.p), alpha0(self.p))
        return OutcomeFunction(beta0(self.p), alpha0(self.p), zeta0(self.p))

    def gamma0(self) -> Optional[np.ndarray]:
        """Full (intercept, slopes) of the offset model, None off P2/P2'."""
        if self.ps_model is PsModel.P2:
            slopes = gamma_slopes(self.p)
        elif self.ps_model is PsModel.P2_SPARSE:
            slopes = gamma_sparse_slopes(self.p, self.s_pi)
        else:
            return None
        return np.concatenate([[calibrate_gamma_intercept(self.pi_N, slopes, self.p)], slopes])

    def propensity_function(self) -> PropensityFunction:
        gamma = self.gamma0()
        if gamma is None:
            return PropensityFunction(self.ps_model, self.pi_N)
        return PropensityFunction(self.ps_model, self.pi_N, float(gamma[0]), gamma[1:])


@dataclass(frozen=True, eq=False)
class SimulatedDraw:
    sample: SemiSupervisedSample
    true_m: Callable[[np.ndarray], np.ndarray]
    true_pi: Callable[[np.ndarray], np.ndarray]
    theta0: float
    m_values: np.ndarray
    pi_values: np.ndarray
    true_m0: Optional[Callable[[np.ndarray], np.ndarray]] = None


@dataclass(frozen=True, eq=False)
class ShiftedOutcome:
    base: OutcomeFunction
    shift: float

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.base(X) + self.shift


def _draw(spec: DgpSpec, stream: RandomStream):
    rng = stream.generator()
    X = rng.standard_normal((spec.N, spec.p))
    noise = rng.standard_normal(spec.N)
    true_m, true_pi = spec.outcome_function(), spec.propensity_function()
    delta = None
    if spec.ps_model is PsModel.P3:
        delta = (rng.random(spec.N) < expit(X[:, 0])).astype(np.int8)
        labeling = 0.5 * spec.pi_N * delta + 1.5 * spec.pi_N * (1 - delta)
    else:
        labeling = true_pi(X)
    R = (rng.random(spec.N) < labeling).astype(np.int8)
    return X, noise, R, delta, true_m, true_pi


def generate(spec: DgpSpec, stream: RandomStream) -> SimulatedDraw:
    """One sample from the setting with its true m, pi and theta0."""
    X, noise, R, delta, true_m, true_pi = _draw(spec, stream)
    m_values = true_m(X)
    sample = validate_sample(X, R, m_values + noise, delta, SampleMode.MISSING_DATA)
    return SimulatedDraw(sample, true_m, true_pi, spec.theta0, m_values, true_pi(X))


def generate_causal(spec: DgpSpec, stream: RandomStream, tau: float = 1.0) -> SimulatedDraw:
    """Causal version: R is treatment, Y(1) from the outcome model, Y(0) = Y(1) - tau."""
    X, noise, R, delta, true_m, true_pi = _draw(spec, stream)
    m_values = true_m(X)
    Y = m_values + noise - tau * (1 - R)
    sample = validate_sample(X, R, Y, delta, SampleMode.CAUSAL)
    return SimulatedDraw(sample, true_m, true_pi, tau, m_values, true_pi(X), ShiftedOutcome(true_m, -tau))


@dataclass(frozen=True)
class EstimatorCell:
    """One table row: a propensity model paired with an outcome model."""

    ps: str
    m: str

    @property
    def label(self) -> str:
        return f"{self.ps}/{self.m}"

    @property
    def is_naive(self) -> bool:
        return self.ps == "naive"

    @property
    def adjustable(self) -> bool:
        return self.ps in ("constant", "logistic", "stratified") and self.m != "oracle"


NAIVE_CELL = EstimatorCell("naive", "naive")
ORACLE_CELL = EstimatorCell("oracle", "oracle")


def default_grid(setting: str, p: int) -> List[EstimatorCell]:
    """naive and oracle rows, then PS x outcome models by dimension."""
    setting = SETTING_ALIASES.get(setting, setting)
    if p > HIGH_DIMENSION:
        ps_models, outcome_models = ["constant", "log-lasso"], ["lasso", "poly-lasso"]
        stratified = "stratified-lasso"
    else:
        ps_models, outcome_models = ["constant", "logistic"], ["ls", "poly", "rkhs"]
        stratified = "stratified"
    if setting == "e":
        ps_models.append(stratified)
    return [NAIVE_CELL, ORACLE_CELL] + [EstimatorCell(ps, m) for ps in ps_models for m in outcome_models]


def adjusted_grid() -> List[EstimatorCell]:
    """naive and oracle rows, then the cells compared with and without the adjustment."""
    return [NAIVE_CELL, ORACLE_CELL] + [EstimatorCell("logistic", m) for m in ("ls", "poly", "poly3")]


def parse_grid(cells: Sequence[str]) -> List[EstimatorCell]:
    grid = []
    for text in cells:
        ps, sep, m = text.partition("/")
        if not sep or not ps or not m:
            raise InvalidSpec(f"estimator cell '{text}' must read 'ps/m'")
        grid.append(EstimatorCell(ps, m))
    return grid


def _cell_specs(cell: EstimatorCell, draw: SimulatedDraw, K: int) -> Tuple[PsSpec, OutcomeSpec]:
    ps_spec = PsSpec.oracle(draw.true_pi) if cell.ps == "oracle" else PsSpec.parse(cell.ps, K)
    outcome_spec = OutcomeSpec.oracle(draw.true_m) if cell.m == "oracle" else OutcomeSpec.parse(cell.m, K)
    return ps_spec, outcome_spec


def _replicate(spec: DgpSpec, grid, rep: int, seed: int, K: int, alpha: float, adjust: bool) -> List[Dict[str, Any]]:
    stream = RandomStream(seed).derive(spec.setting_id, rep)
    draw = generate(spec, stream.derive("data"))
    sample = draw.sample
    plan = make_folds(sample.n, K, stream.derive("folds").integer_seed())
    outcome_cache: Dict[str, CrossFitted] = {}
    ps_cache: Dict[str, CrossFitted] = {}
    rows = []
    for cell in grid:
        try:
            if cell.is_naive:
                report = build_report(sample, naive_labeled_mean(sample), alpha=alpha)
            else:
                ps_spec, outcome_spec = _cell_specs(cell, draw, K)
                if cell.m not in outcome_cache:
                    outcome_cache[cell.m] = cross_fit_outcome(sample, plan, outcome_spec)
                if cell.ps not in ps_cache:
                    ps_cache[cell.ps] = cross_fit_propensity(sample, plan, ps_spec)
                preds = NuisancePredictions.combine(plan, outcome_cache[cell.m], ps_cache[cell.ps])
                estimate = estimate_dr(sample, preds.m_hat, preds.pi_hat, known_ps=ps_spec.is_oracle)
                report = build_report(
                    sample, estimate, preds, alpha, adjust and cell.adjustable, draw.m_values, draw.pi_values
                )
        except DrssError as err:
            raise err.annotate(rep=rep, cell=cell.label)

        row = {
            "rep": rep,
            "estimator_ps": cell.ps,
            "estimator_m": cell.m,
            "theta": report.theta,
            "se": report.se,
            "length": report.ci[1] - report.ci[0],
            "covered": float(report.ci[0] <= draw.theta0 <= report.ci[1]),
            "err_m": np.nan if report.err_m is None else report.err_m,
            "err_pi": np.nan if report.err_pi is None else report.err_pi,
        }
        if adjust:
            adjusted = report.ci_adjusted
            row["se_adj"] = np.nan if adjusted is None else report.se_adjusted
            row["length_adj"] = np.nan if adjusted is None else adjusted[1] - adjusted[0]
            row["covered_adj"] = np.nan if adjusted is None else float(adjusted[0] <= draw.theta0 <= adjusted[1])
        rows.append(row)
    return rows


@dataclass(frozen=True, eq=False)
class SimTable:
    """Aggregated metrics per estimator cell, columns in TABLE_COLUMNS order."""

    frame: pd.DataFrame
    reps: int
    theta0_true: float
    label: str = ""

    def row(self, ps: str, m: str) -> pd.Series:
        match = self.frame[(self.frame["estimator_ps"] == ps) & (self.frame["estimator_m"] == m)]
        if match.empty:
            raise KeyError(f"no row {ps}/{m} in table")
        return match.iloc[0]

    def to_csv(self, path) -> None:
        self.frame.to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def read_csv(cls, path, reps: int, theta0_true: float, label: str = "") -> "SimTable":
        return cls(pd.read_csv(path, float_precision="round_trip"), reps, theta0_true, label)

    def to_markdown(self) -> str:
        return self.frame.to_markdown(index=False, floatfmt=".3f")


def aggregate(replicates: pd.DataFrame, theta0_true: float, reps: int, label: str = "") -> SimTable:
    """Bias, RMSE, Length, Coverage, ESD, ASD and mean Err_m / Err_pi per cell."""
    error = replicates["theta"] - theta0_true
    frame = replicates.assign(error=error, squared=error**2)
    grouped = frame.groupby(["estimator_ps", "estimator_m"], sort=False)
    table = pd.DataFrame({
        "bias": grouped["error"].mean(),
        "rmse": np.sqrt(grouped["squared"].mean()),
        "length": grouped["length"].mean(),
        "coverage": grouped["covered"].mean(),
        "esd": grouped["theta"].std(ddof=1),
        "asd": grouped["se"].mean(),
        "err_m": grouped["err_m"].mean(),
        "err_pi": grouped["err_pi"].mean(),
    })
    columns = list(TABLE_COLUMNS)
    if "covered_adj" in frame:
        table["length_adj"] = grouped["length_adj"].mean()
        table["coverage_adj"] = grouped["covered_adj"].mean()
        table["asd_adj"] = grouped["se_adj"].mean()
        columns += ADJUSTED_COLUMNS
    return SimTable(table.reset_index()[columns], reps, theta0_true, label)


def run_setting(
    spec: DgpSpec,
    grid: Optional[Sequence[EstimatorCell]] = None,
    reps: int = 500,
    alpha: float = 0.05,
    seed: int = 0,
    K: int = 5,
    n_jobs: int = 1,
    adjust: bool = False,
    progress: bool = False,
) -> SimTable:
    grid = list(grid) if grid is not None else default_grid(spec.setting or "", spec.p)
    logger.info("campaign %s: %d reps x %d cells", spec.label, reps, len(grid))
    per_rep = Parallel(n_jobs=n_jobs)(
        delayed(_replicate)(spec, grid, rep, seed, K, alpha, adjust)
        for rep in tqdm(range(reps), desc=spec.label, disable=not progress)
    )
    replicates = pd.DataFrame([row for rows in per_rep for row in rows])
    return aggregate(replicates, spec.theta0, reps, spec.label)


def run_campaign(
    settings: Sequence[Tuple[DgpSpec, Optional[Sequence[EstimatorCell]]]],
    reps: int = 500,
    alpha: float = 0.05,
    seed: int = 0,
    K: int = 5,
    n_jobs: int = 1,
    adjust: bool = False,
    progress: bool = False,
) -> List[SimTable]:
    """One SimTable per (setting, grid) pair; a None grid means the default grid."""
    return [
        run_setting(spec, grid, reps, alpha, seed, K, n_jobs, adjust, progress)
        for spec, grid in settings
    ]


def _rate_error(spec: DgpSpec, rep: int, seed: int, lasso: bool) -> float:
    draw = generate(spec, RandomStream(seed).derive(spec.setting_id, rep).derive("data"))
    sample = draw.sample
    if lasso:
        lam = theoretical_penalty(sample.pi_bar, sample.p, sample.n)
        fit = fit_offset_logistic_lasso(sample.X, sample.R, lam=lam)
    else:
        fit = fit_offset_logistic_mle(sample.X, sample.R)
    return float(np.linalg.norm(fit.gamma - spec.gamma0()))


def estimation_error_curve(
    Ns: Sequence[int],
    p: int,
    pi_N: float,
    reps: int = 100,
    seed: int = 0,
    lasso: bool = False,
    s_pi: Optional[int] = None,
    n_jobs: int = 1,
) -> pd.DataFrame:
    """Monte Carlo mean of ||gamma_hat - gamma0||_2 for each N."""
    rows = []
    for N in Ns:
        if s_pi is None:
            spec = DgpSpec(PsModel.P2, OutcomeModel.O1, N, p, pi_N)
        else:
            spec = DgpSpec(PsModel.P2_SPARSE, OutcomeModel.O1_SPARSE, N, p, pi_N, s_m=1, s_pi=s_pi)
        errors = Parallel(n_jobs=n_jobs)(delayed(_rate_error)(spec, rep, seed, lasso) for rep in range(reps))
        rows.append({"N": N, "n_pi": N * pi_N, "mean_error": float(np.mean(errors)), "sd_error": float(np.std(errors, ddof=1)) if reps > 1 else np.nan})
    return pd.DataFrame(rows)
