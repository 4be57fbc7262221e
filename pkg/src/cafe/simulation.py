"""Monte Carlo harness for the three parametric simulation designs.

Each replicate draws an observational sample of size ``m`` and a trial of
size ``n`` from the same outcome model, fits a CATE learner and a logistic
propensity model on the observational data, and runs both fit tests on the
trial.  With ``two_stage`` set, part of the observational sample is held
out and the attribution procedure is run as well.

Random streams are keyed by ``(seed, replicate_index, stream)`` through
:class:`numpy.random.SeedSequence`, so a replicate's draws do not depend on
which worker ran it or in what order.
"""

import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import PredictionSet, TrialDataset
from .engine import cafe_m_test, cafe_test, decide, group_summaries
from .errors import CafeError, ConfigError, ScenarioAbortedError
from .learners import FeatureMap, fit_logistic_propensity, fit_r_learner, fit_s_learner, fit_t_learner
from .partition import PartitionRule, build_partition

STREAM_OS, STREAM_RCT, STREAM_SPLIT, STREAM_LEARNER = range(4)
MAX_FAILURE_FRACTION = 0.05

_X5 = tuple(f"x{j}" for j in range(1, 6))


def _expit(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


@dataclass(frozen=True)
class Setting:
    name: str
    names: tuple
    draw_x: object
    baseline: object
    cate: object
    propensity: object
    noise_sd: float
    features: dict
    propensity_features: dict

    def outcome(self, X, a, rng):
        return self.baseline(X) + a * self.cate(X) + self.noise_sd * rng.standard_normal(X.shape[0])


_BETA1_P1 = np.array([0.5, 0.5, 0.0, -0.5, 1.0])
_BETA0_P1 = np.array([1.0, -1.0, 0.5, 0.0, 1.0])
_BETA0_P3 = np.array([1.0, -1.0, 0.5, 0.6, 1.0])
_BETA_E = np.array([0.5, -0.3, 0.2, 0.1, -0.1])


def _cate_p3(X):
    return 0.3 * X[:, 0] + 0.2 * X[:, 1] - 0.4 * X[:, 2] + 0.2 * X[:, 3] - 0.5 * X[:, 4] + X[:, 0] ** 2


SETTINGS = {
    "P1": Setting(
        "P1", _X5,
        draw_x=lambda rng, k: rng.uniform(0.0, 5.0, size=(k, 5)),
        baseline=lambda X: X @ _BETA0_P1,
        cate=lambda X: X @ _BETA1_P1,
        propensity=lambda X: _expit(X @ _BETA_E),
        noise_sd=2.0,
        features={"correct": FeatureMap(_X5), "misspecified": FeatureMap(_X5[:4])},
        propensity_features={"correct": FeatureMap(_X5), "misspecified": FeatureMap(_X5[:4])},
    ),
    "P2": Setting(
        "P2", ("x1", "x2"),
        draw_x=lambda rng, k: rng.uniform(0.0, 3.0, size=(k, 2)),
        baseline=lambda X: X[:, 1],
        cate=lambda X: 3.0 * X[:, 0] - 2.0 * X[:, 1] + 0.5 * X[:, 0] * X[:, 1],
        propensity=lambda X: _expit(0.5 * X[:, 0] - 0.3 * X[:, 1]),
        noise_sd=1.0,
        features={"correct": FeatureMap(("x1", "x2", "interaction:x1*x2")),
                  "misspecified": FeatureMap(("x1", "x2"))},
        propensity_features={"correct": FeatureMap(("x1", "x2")),
                             "misspecified": FeatureMap(("x1", "x2"))},
    ),
    "P3": Setting(
        "P3", _X5,
        # N(0, 2) read as variance 2
        draw_x=lambda rng, k: math.sqrt(2.0) * rng.standard_normal(size=(k, 5)),
        baseline=lambda X: X @ _BETA0_P3,
        cate=_cate_p3,
        propensity=lambda X: _expit(X @ _BETA_E),
        noise_sd=1.0,
        features={"correct": FeatureMap(_X5 + ("square:x1",)),
                  "misspecified": FeatureMap(_X5)},
        propensity_features={"correct": FeatureMap(_X5), "misspecified": FeatureMap(_X5)},
    ),
}

LEARNER_NAMES = ("t", "s", "r")
LEARNER_DETAILS = {
    "t": "OLS per arm on the feature map; CATE is the coefficient difference",
    "s": "one OLS fit on [1, phi(x), A, A*phi(x)]; CATE is the A contrast",
    "r": "2-fold cross-fitting with seeded shuffle; m_hat by OLS on the feature map, e_hat by logistic "
         "regression; weighted least squares with weights (A - e_hat)^2; rows with |A - e_hat| < 1e-6 dropped",
}
VARIANTS = ("correct", "misspecified")


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation cell.

    ``test_fraction`` enables the two-stage protocol: that share of the
    observational sample is held out as the test set for stage 2 and the
    learner is trained on the rest.
    """

    setting: str = "P1"
    m: int = 800
    n: int = 120
    learner: str = "t"
    spec_variant: str = "correct"
    partition_by: str = "propensity"
    groups: object = "auto"
    alpha: float = 0.05
    replicates: int = 500
    seed: int = 0
    test_fraction: float = None

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ConfigError(f"unknown setting {self.setting!r}; choose from {sorted(SETTINGS)}")
        if self.learner not in LEARNER_NAMES:
            raise ConfigError(f"unknown learner {self.learner!r}; choose from {LEARNER_NAMES}")
        if self.spec_variant not in VARIANTS:
            raise ConfigError(f"spec_variant must be one of {VARIANTS}, got {self.spec_variant!r}")
        for name in ("m", "n", "replicates"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.test_fraction is not None and not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must lie in (0, 1), got {self.test_fraction!r}")
        self.rule  # validates partition_by / groups

    @property
    def rule(self):
        return PartitionRule.parse(self.partition_by, self.groups)

    @property
    def two_stage(self):
        return self.test_fraction is not None

    @classmethod
    def from_dict(cls, d):
        d = dict(d.get("scenario", d))
        two = d.pop("two_stage", None)
        if isinstance(two, dict):
            d["test_fraction"] = two.get("test_fraction", two.get("split"))
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    @classmethod
    def from_toml(cls, path):
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))


def _rng(seed, index, stream):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index, stream)))


def generate_setting(spec, replicate_index):
    """Draw ``(os, rct, truth)`` for one replicate.

    ``truth`` maps a covariate matrix to the true CATE.
    """
    s = SETTINGS[spec.setting]
    rng = _rng(spec.seed, replicate_index, STREAM_OS)
    X = s.draw_x(rng, spec.m)
    a = (rng.random(spec.m) < s.propensity(X)).astype(np.int8)
    os_ds = TrialDataset(X, a, s.outcome(X, a, rng), s.names, "OS")

    rng = _rng(spec.seed, replicate_index, STREAM_RCT)
    X = s.draw_x(rng, spec.n)
    a = (rng.random(spec.n) < 0.5).astype(np.int8)
    rct = TrialDataset(X, a, s.outcome(X, a, rng), s.names, "RCT")
    return os_ds, rct, s.cate


def fit_models(spec, train, replicate_index=0):
    """Fit the configured CATE learner and propensity model on ``train``."""
    s = SETTINGS[spec.setting]
    feats = s.features[spec.spec_variant]
    e_model = fit_logistic_propensity(train, s.propensity_features[spec.spec_variant])
    if spec.learner == "t":
        tau_model = fit_t_learner(train, feats)
    elif spec.learner == "s":
        tau_model = fit_s_learner(train, feats)
    else:
        seed = int(_rng(spec.seed, replicate_index, STREAM_LEARNER).integers(2**63))
        tau_model = fit_r_learner(train, feats, seed=seed)
    return tau_model, e_model


def _predict(tau_model, e_model, ds):
    return PredictionSet(tau_model.predict(ds.covariates), e_model.predict(ds.covariates))


def _split(spec, os_ds, replicate_index):
    rng = _rng(spec.seed, replicate_index, STREAM_SPLIT)
    perm = rng.permutation(os_ds.n)
    n_test = int(round(spec.test_fraction * os_ds.n))
    test = np.sort(perm[:n_test])
    train = np.sort(perm[n_test:])
    return os_ds.subset(train), os_ds.subset(test)


def run_replicate(spec, replicate_index):
    """One replicate; returns a flat dict of p-values and decisions."""
    os_ds, rct, _ = generate_setting(spec, replicate_index)
    if spec.two_stage:
        train, test = _split(spec, os_ds, replicate_index)
    else:
        train, test = os_ds, None
    tau_model, e_model = fit_models(spec, train, replicate_index)
    preds = _predict(tau_model, e_model, rct)
    rule = spec.rule
    part = build_partition(rct, preds, rule)
    summaries = group_summaries(rct, preds, part)
    out = {"index": replicate_index, "K": part.K}
    stage1 = {"cafe": cafe_test(summaries, spec.alpha), "cafe-m": cafe_m_test(summaries, spec.alpha)}
    out["p_cafe"] = stage1["cafe"].p_value
    out["p_cafe_m"] = stage1["cafe-m"].p_value
    if test is not None:
        # Stage 2 is only needed when stage 1 rejects; an infeasible stage-2
        # partition fails the replicate only if a decision depends on it.
        test_preds = _predict(tau_model, e_model, test)
        try:
            part_o = build_partition(test, test_preds, rule, K=part.K)
            summ_o = group_summaries(test, test_preds, part_o)
        except CafeError as exc:
            stage2 = None
            out["stage2_error"] = f"{type(exc).__name__}: {exc}"
        else:
            stage2 = {"cafe": cafe_test(summ_o, spec.alpha), "cafe-m": cafe_m_test(summ_o, spec.alpha)}
        for key, stat in (("cafe", "cafe"), ("cafe_m", "cafe-m")):
            out[f"p_os_{key}"] = None if stage2 is None else stage2[stat].p_value
            if stage2 is None and stage1[stat].reject:
                out[f"decision_{key}"] = None
            else:
                out[f"decision_{key}"] = decide(stage1[stat], stage2 and stage2[stat]).label
    return out


def _safe_replicate(args):
    spec, index = args
    try:
        return run_replicate(spec, index)
    except CafeError as exc:
        return {"index": index, "error": f"{type(exc).__name__}: {exc}"}


@dataclass
class QQResult:
    """Sorted p-values against uniform plotting positions.

    ``ks`` is the largest gap between a sorted p-value and its plotting
    position (i - 0.5)/R; the one-sample Kolmogorov-Smirnov statistic
    against Uniform(0, 1) is exactly ``ks + 0.5/R``.
    """

    theoretical: list
    empirical: list
    ks: float
    ks_statistic: float

    @property
    def pairs(self):
        return list(zip(self.theoretical, self.empirical))


def qq_points(p_values):
    p = np.sort(np.asarray(p_values, dtype=float))
    if p.size == 0:
        raise ValueError("qq_points needs at least one p-value")
    R = p.size
    theo = (np.arange(1, R + 1) - 0.5) / R
    ks = float(np.max(np.abs(p - theo)))
    return QQResult(theo.tolist(), p.tolist(), ks, ks + 0.5 / R)


_P_KEYS = ("p_cafe", "p_cafe_m", "p_os_cafe", "p_os_cafe_m")
_DECISION_KEYS = ("decision_cafe", "decision_cafe_m")


@dataclass
class ReplicateReport:
    spec: ScenarioSpec
    p_values: dict
    decisions: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    K: int = None
    stage2_skipped: list = field(default_factory=list)

    @property
    def completed(self):
        return len(next(iter(self.p_values.values())))

    def valid(self, key):
        return [p for p in self.p_values[key] if p is not None]

    def rejection_rate(self, key):
        v = self.valid(key)
        return float(np.mean(np.asarray(v) < self.spec.alpha)) if v else float("nan")

    def decision_frequencies(self, key):
        labels = [d for d in self.decisions.get(key, []) if d is not None]
        if not labels:
            return {}
        return {lab: labels.count(lab) / len(labels) for lab in ("D1", "D2", "D3")}

    def modal_decision(self, key):
        freq = self.decision_frequencies(key)
        return max(freq, key=freq.get) if freq else None

    def qq(self, key):
        return qq_points(self.valid(key))

    def to_dict(self):
        summary = {}
        for key in self.p_values:
            q = self.qq(key) if self.valid(key) else None
            summary[key] = {
                "rejection_rate": self.rejection_rate(key),
                "ks": None if q is None else q.ks,
                "ks_statistic": None if q is None else q.ks_statistic,
            }
        return {
            "spec": asdict(self.spec),
            "learner": LEARNER_DETAILS[self.spec.learner],
            "K": self.K,
            "replicates": self.spec.replicates,
            "failed": len(self.failures),
            "summary": summary,
            "decision_frequencies": {k: self.decision_frequencies(k) for k in self.decisions},
            "p_values": self.p_values,
            "decisions": self.decisions,
            "failures": self.failures,
            "stage2_skipped": self.stage2_skipped,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)

    def write_json(self, path):
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    def write_csv(self, path):
        """Per-replicate p-values and decisions, one row per replicate."""
        keys = list(self.p_values) + list(self.decisions)
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["replicate", *keys])
            for i in range(self.spec.replicates):
                row = [i]
                for k in keys:
                    v = (self.p_values.get(k) or self.decisions.get(k))[i]
                    row.append("" if v is None else (f"{v:.17g}" if isinstance(v, float) else v))
                w.writerow(row)

    def write_qq_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["series", "theoretical", "empirical"])
            for k in self.p_values:
                if not self.valid(k):
                    continue
                q = self.qq(k)
                for t, e in q.pairs:
                    w.writerow([k, f"{t:.17g}", f"{e:.17g}"])


def run_scenario(spec, workers=1, progress=None, batch=50):
    """Run every replicate of ``spec`` and aggregate.

    Failed replicates (degenerate partitions, under-occupied groups, fitting
    failures) are recorded with their index; the scenario raises
    :class:`ScenarioAbortedError` when more than 5% fail.  ``progress`` is
    called with ``(done, total)`` after each batch.
    """
    jobs = [(spec, i) for i in range(spec.replicates)]
    results = []
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for start in range(0, len(jobs), batch):
                results.extend(pool.map(_safe_replicate, jobs[start:start + batch]))
                if progress:
                    progress(len(results), len(jobs))
    else:
        for start in range(0, len(jobs), batch):
            results.extend(_safe_replicate(j) for j in jobs[start:start + batch])
            if progress:
                progress(len(results), len(jobs))
    results.sort(key=lambda r: r["index"])

    failures = []
    for r in results:
        if "error" in r:
            failures.append({"index": r["index"], "stage": 1, "error": r["error"]})
        elif "stage2_error" in r and None in (r["decision_cafe"], r["decision_cafe_m"]):
            failures.append({"index": r["index"], "stage": 2, "error": r["stage2_error"]})
    if len(failures) > MAX_FAILURE_FRACTION * spec.replicates:
        raise ScenarioAbortedError(
            f"{len(failures)} of {spec.replicates} replicates failed (limit 5%); "
            f"first: replicate {failures[0]['index']}: {failures[0]['error']}", failures)
    stage2_skipped = [r["index"] for r in results if "stage2_error" in r]

    keys = _P_KEYS if spec.two_stage else _P_KEYS[:2]
    p_values = {k: [r.get(k) for r in results] for k in keys}
    decisions = {k: [r.get(k) for r in results] for k in _DECISION_KEYS} if spec.two_stage else {}
    Ks = {r["K"] for r in results if "K" in r}
    return ReplicateReport(spec, p_values, decisions, failures, Ks.pop() if len(Ks) == 1 else None,
                           stage2_skipped)


def print_progress(done, total, stream=None):
    print(f"replicates {done}/{total}", file=stream or sys.stderr, flush=True)
