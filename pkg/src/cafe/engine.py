"""Group summaries, the sum-type and max-type fit tests, and attribution.

The sum-type statistic is ``T = sum_k z_k**2`` calibrated against
chi-squared with K degrees of freedom; the max-type statistic is
``M = max_k |z_k|`` calibrated through the Gumbel limit of the maximum of K
absolute standard normals.  Each ``z_k`` compares the trial
difference-in-means in group k with the group average of the observational
CATE predictions, standardised by the plug-in standard error.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .errors import AttributionUnavailableError, DataError, OccupancyError, ZeroVarianceError
from .partition import build_partition

STATISTICS = ("cafe", "cafe-m")
LABELS = ("D1", "D2", "D3")


@dataclass(frozen=True)
class GroupSummary:
    group: int
    n_k: int
    n1_k: int
    n0_k: int
    tau_rct_k: float
    sigma2_k: float
    tau_obs_mean_k: float
    z_k: float

    def to_dict(self):
        return {
            "group": self.group + 1,
            "n": self.n_k,
            "n_treated": self.n1_k,
            "n_control": self.n0_k,
            "diff_in_means": self.tau_rct_k,
            "variance": self.sigma2_k,
            "mean_prediction": self.tau_obs_mean_k,
            "z": self.z_k,
        }


def group_summaries(ds, preds, part):
    """Per-group difference-in-means, plug-in variance and standardized gap.

    Arm variances use the n - 1 denominator, so each arm of each group needs
    at least two units.
    """
    if len(preds) != ds.n or part.group_of.shape[0] != ds.n:
        raise DataError("dataset, predictions and partition must have the same length")
    a = ds.treatment
    y = ds.outcome
    out = []
    for k in range(part.K):
        rows = part.members(k)
        treated = y[rows[a[rows] == 1]]
        control = y[rows[a[rows] == 0]]
        n1, n0 = treated.size, control.size
        if n1 < 2 or n0 < 2:
            raise OccupancyError(
                f"group {k + 1} of {part.K} has {n1} treated and {n0} control units; "
                "at least 2 of each are required", group=k + 1)
        tau_r = treated.mean() - control.mean()
        sigma2 = treated.var(ddof=1) / n1 + control.var(ddof=1) / n0
        if not sigma2 > 0:
            raise ZeroVarianceError(
                f"group {k + 1} of {part.K}: outcomes are constant within both arms, "
                "plug-in variance is zero", group=k + 1)
        tau_o = float(preds.tau_hat[rows].mean())
        out.append(GroupSummary(k, int(rows.size), int(n1), int(n0), float(tau_r),
                                float(sigma2), tau_o, float((tau_r - tau_o) / math.sqrt(sigma2))))
    return out


@dataclass
class TestReport:
    """Outcome of one fit test.

    ``family`` is ``"chi_squared"`` (params ``{"df": K}``) or ``"gumbel"``
    (params ``{"a": a_K, "b": b_K}``).
    """

    __test__ = False  # not a pytest class

    statistic_name: str
    statistic: float
    family: str
    params: dict
    p_value: float
    K: int
    groups: list
    alpha: float
    reject: bool
    partition: dict = None
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "test": self.statistic_name,
            "statistic": self.statistic,
            "family": self.family,
            "params": dict(self.params),
            "p_value": numerics.clamp_probability(self.p_value),
            "K": self.K,
            "alpha": self.alpha,
            "reject": self.reject,
            "partition": self.partition,
            "groups": [g.to_dict() for g in self.groups],
            "notes": list(self.notes),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def render(self):
        return render_report(self)


def _check_alpha(alpha):
    alpha = numerics.check_probability(alpha, "alpha")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie strictly inside (0, 1), got {alpha}")
    return alpha


def _z(summaries):
    if len(summaries) < 1:
        raise ValueError("need at least one group summary")
    return np.array([s.z_k for s in summaries])


def cafe_test(summaries, alpha=0.05, partition=None):
    """Sum-of-squares test: T = sum z_k^2 against chi-squared(K)."""
    alpha = _check_alpha(alpha)
    z = _z(summaries)
    K = z.size
    T = float(np.sum(z * z))
    p = numerics.chi2_survival(T, K)
    return TestReport("cafe", T, "chi_squared", {"df": K}, p, K, list(summaries), alpha,
                      p < alpha, partition)


def cafe_m_test(summaries, alpha=0.05, partition=None):
    """Max-type test: M = max |z_k| with a Gumbel p-value."""
    alpha = _check_alpha(alpha)
    z = _z(summaries)
    K = z.size
    if K < 2:
        raise ValueError(
            "the max-type test needs K >= 2 groups: a_K = Phi^-1(1 - 1/(2K)) is 0 at K = 1, "
            "so b_K = 1/a_K is undefined")
    a, b = numerics.gumbel_constants(K)
    M = float(np.max(np.abs(z)))
    p = numerics.gumbel_survival((M - a) / b)
    return TestReport("cafe-m", M, "gumbel", {"a": a, "b": b}, p, K, list(summaries), alpha,
                      p < alpha, partition)


_TESTS = {"cafe": cafe_test, "cafe-m": cafe_m_test}


def run_test(ds, preds, part, statistic="cafe", alpha=0.05):
    """Summaries plus the chosen test on one (dataset, predictions, partition)."""
    if statistic not in _TESTS:
        raise ValueError(f"statistic must be one of {STATISTICS}, got {statistic!r}")
    return _TESTS[statistic](group_summaries(ds, preds, part), alpha, part.describe())


@dataclass
class Decision:
    """Two-stage attribution result.

    D1: no evidence of lack of fit.  D2: lack of fit attributed to hidden
    confounding.  D3: lack of fit attributed to the observational contrast
    model itself (confounding not ruled out).
    """

    label: str
    stage1: TestReport
    stage2: TestReport = None
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if self.label == "D1":
            ok = not self.stage1.reject and self.stage2 is None
        elif self.label == "D2":
            ok = self.stage1.reject and self.stage2 is not None and not self.stage2.reject
        elif self.label == "D3":
            ok = self.stage1.reject and self.stage2 is not None and self.stage2.reject
        else:
            raise ValueError(f"unknown decision label {self.label!r}")
        if not ok:
            raise ValueError(f"decision {self.label} is inconsistent with the stage reports")

    def to_dict(self):
        return {
            "decision": self.label,
            "stage1": self.stage1.to_dict(),
            "stage2": None if self.stage2 is None else self.stage2.to_dict(),
            "notes": list(self.notes),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def render(self):
        out = [f"decision: {self.label}", "", "stage 1 (trial)", render_report(self.stage1)]
        if self.stage2 is not None:
            out += ["", "stage 2 (observational test set)", render_report(self.stage2)]
        return "\n".join(out)


def decide(stage1, stage2=None):
    if not stage1.reject:
        return Decision("D1", stage1)
    if stage2 is None:
        raise AttributionUnavailableError(
            "attribution unavailable: stage 1 rejected but no observational test set was given")
    return Decision("D3" if stage2.reject else "D2", stage1, stage2)


def two_stage_diagnose(rct_report, os_stage=None, alpha=None, statistic=None):
    """Attribute a stage-1 rejection to confounding (D2) or modelling (D3).

    ``os_stage`` is ``(dataset, predictions, partition)`` for an
    observational test set disjoint from the data that trained the CATE
    model.  Its within-group difference-in-means estimates the observational
    treatment contrast rather than the causal effect, so comparing it with
    the predictions checks the model for that contrast alone.  The partition
    must have the same K as stage 1; ``statistic`` defaults to the stage-1
    statistic.
    """
    alpha = rct_report.alpha if alpha is None else _check_alpha(alpha)
    stage1 = rct_report
    if stage1.alpha != alpha:
        stage1 = _realpha(rct_report, alpha)
    if not stage1.reject:
        return Decision("D1", stage1)
    if os_stage is None:
        raise AttributionUnavailableError(
            "attribution unavailable: stage 1 rejected but no observational test set was given")
    ds, preds, part = os_stage
    if part.K != stage1.K:
        raise ValueError(f"stage-2 partition has K = {part.K}, stage 1 used K = {stage1.K}")
    stage2 = run_test(ds, preds, part, statistic or stage1.statistic_name, alpha)
    stage2.notes.append("observational test set must be disjoint from the CATE training data")
    return Decision("D3" if stage2.reject else "D2", stage1, stage2)


def _realpha(report, alpha):
    d = dict(report.__dict__)
    d["alpha"] = alpha
    d["reject"] = report.p_value < alpha
    d["notes"] = list(report.notes)
    return TestReport(**d)


def diagnose(rct, rct_preds, rule, os_test=None, os_preds=None, alpha=0.05, statistic="cafe",
             stage2_statistic=None):
    """Full pipeline: partition both samples with ``rule`` and run both stages."""
    part = build_partition(rct, rct_preds, rule)
    stage1 = run_test(rct, rct_preds, part, statistic, alpha)
    os_stage = None
    if os_test is not None:
        if os_preds is None:
            raise DataError("observational test set given without predictions")
        if stage1.reject:
            os_stage = (os_test, os_preds, build_partition(os_test, os_preds, rule, K=part.K))
    return two_stage_diagnose(stage1, os_stage, alpha, stage2_statistic)


def render_report(report):
    """Aligned plain-text table of a :class:`TestReport`."""
    if report.family == "chi_squared":
        fam = f"chi-squared(df={report.params['df']})"
    else:
        fam = f"Gumbel(a={report.params['a']:.6f}, b={report.params['b']:.6f})"
    lines = [
        f"test       {report.statistic_name}",
        f"statistic  {report.statistic:.6g}",
        f"reference  {fam}",
        f"p-value    {numerics.clamp_probability(report.p_value):.6g}",
        f"alpha      {report.alpha:g}",
        f"reject     {'yes' if report.reject else 'no'}",
    ]
    if report.partition:
        lines.append(f"partition  {report.partition.get('variable')} (K={report.K})")
    head = ("group", "n", "n1", "n0", "diff-in-means", "variance", "mean pred", "z")
    rows = [(str(g.group + 1), str(g.n_k), str(g.n1_k), str(g.n0_k), f"{g.tau_rct_k:.5g}",
             f"{g.sigma2_k:.5g}", f"{g.tau_obs_mean_k:.5g}", f"{g.z_k:.4f}")
            for g in report.groups]
    widths = [max(len(r[j]) for r in [head] + rows) for j in range(len(head))]
    lines.append("")
    lines.append("  ".join(h.rjust(w) for h, w in zip(head, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(c.rjust(w) for c, w in zip(r, widths)))
    for note in report.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines)
