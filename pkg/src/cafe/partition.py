"""Stratification of a sample into K groups by a scalar score."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DegeneratePartitionError

VARIABLES = ("propensity", "cate", "covariate")


def default_group_count(n):
    """floor(n ** (2/7)), but never fewer than two groups."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n!r}")
    k = math.floor(n ** (2.0 / 7.0))
    # guard against n**(2/7) landing a hair below an exact integer
    while (k + 1) ** 7 <= n ** 2:
        k += 1
    while k ** 7 > n ** 2:
        k -= 1
    return max(2, k)


@dataclass(frozen=True)
class PartitionRule:
    """Which scalar to stratify on, and how many groups.

    ``variable`` is ``"propensity"``, ``"cate"`` or ``"covariate"``; for the
    latter ``covariate`` names the column.  ``groups`` is an int >= 2 or
    ``"auto"``.
    """

    variable: str = "propensity"
    covariate: str = None
    groups: object = "auto"

    def __post_init__(self):
        if self.variable not in VARIABLES:
            raise ConfigError(f"unknown partition variable {self.variable!r}")
        if self.variable == "covariate" and not self.covariate:
            raise ConfigError("covariate partition needs a covariate name")
        if self.groups != "auto":
            if isinstance(self.groups, bool) or not isinstance(self.groups, (int, np.integer)):
                raise ConfigError(f"groups must be an integer or 'auto', got {self.groups!r}")
            if self.groups < 2:
                raise ConfigError(f"groups must be at least 2, got {self.groups}")

    @classmethod
    def parse(cls, partition_by="propensity", groups="auto"):
        """Build a rule from CLI-style strings such as ``covariate:x5``."""
        if isinstance(groups, str) and groups != "auto":
            try:
                groups = int(groups)
            except ValueError:
                raise ConfigError(f"--groups must be 'auto' or an integer, got {groups!r}") from None
        if partition_by.startswith("covariate:"):
            return cls("covariate", partition_by.split(":", 1)[1], groups)
        return cls(partition_by, None, groups)

    def resolve_groups(self, n):
        return default_group_count(n) if self.groups == "auto" else int(self.groups)

    def with_groups(self, k):
        return PartitionRule(self.variable, self.covariate, int(k))

    @property
    def label(self):
        return f"covariate:{self.covariate}" if self.variable == "covariate" else self.variable


@dataclass(frozen=True, eq=False)
class Partition:
    """Group labels ``0..K-1`` for each unit plus the rule that made them."""

    group_of: np.ndarray
    K: int
    cuts: tuple
    rule: PartitionRule = None

    def sizes(self):
        return np.bincount(self.group_of, minlength=self.K)

    def members(self, k):
        return np.flatnonzero(self.group_of == k)

    def describe(self):
        d = {"variable": None, "K": self.K, "cuts": list(self.cuts)}
        if self.rule is not None:
            d["variable"] = self.rule.label
        return d


def quantile_partition(values, K, rule=None):
    """Split units into K groups at the empirical j/K quantiles.

    Intervals are ``(lower, upper]`` with the first one closed on the left, so
    a value equal to a cut point falls in the lower group.

    >>> quantile_partition(np.arange(1, 11), 2).group_of.tolist()
    [0, 0, 0, 0, 0, 1, 1, 1, 1, 1]
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1:
        raise DataError("partition values must be a vector")
    K = int(K)
    if K < 1:
        raise ValueError(f"K must be positive, got {K}")
    if v.size < 2 * K:
        raise DataError(f"need at least 2K = {2 * K} units to form {K} groups, got {v.size}")
    if not np.isfinite(v).all():
        raise DataError("partition values must be finite")
    cuts = np.quantile(v, np.arange(1, K) / K)
    if np.any(np.diff(cuts) <= 0):
        raise DegeneratePartitionError(f"degenerate partition: tied quantiles {cuts.tolist()} for K={K}")
    group_of = np.searchsorted(cuts, v, side="left")
    sizes = np.bincount(group_of, minlength=K)
    if (sizes == 0).any():
        empty = int(np.flatnonzero(sizes == 0)[0]) + 1
        raise DegeneratePartitionError(f"degenerate partition: group {empty} of {K} is empty")
    group_of.setflags(write=False)
    return Partition(group_of, K, tuple(float(c) for c in cuts), rule)


def partition_values(ds, preds, rule):
    """The scalar a rule stratifies on.  Outcomes are deliberately not an input."""
    if rule.variable == "propensity":
        if preds.e_hat is None:
            raise DataError("propensity partition requested but predictions carry no e_hat column")
        return preds.e_hat
    if rule.variable == "cate":
        return preds.tau_hat
    return ds.column(rule.covariate)


def build_partition(ds, preds, rule, K=None):
    """Partition ``ds`` according to ``rule``.

    ``K`` overrides the rule's group count (used to hold K fixed across the
    two stages of the attribution procedure).
    """
    if len(preds) != ds.n:
        raise DataError(f"{len(preds)} predictions for {ds.n} rows")
    k = int(K) if K is not None else rule.resolve_groups(ds.n)
    resolved = rule.with_groups(k)
    return quantile_partition(partition_values(ds, preds, rule), k, resolved)
