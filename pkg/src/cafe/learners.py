"""Linear meta-learners and a logistic propensity model.

These are only what the parametric simulations need.  Richer learners
(boosting, forests, lasso) are run elsewhere and enter through prediction
files.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, DataError, RankDeficiencyError


@dataclass(frozen=True)
class FeatureMap:
    """Basis expansion declared as terms.

    A term is a raw column name (``"x1"``), ``"interaction:x1*x2"`` or
    ``"square:x1"``.  The intercept is added by the models, not here.
    """

    terms: tuple

    def __post_init__(self):
        terms = tuple(self.terms)
        for t in terms:
            kind, _, arg = t.partition(":")
            if arg and kind not in ("interaction", "square"):
                raise DataError(f"unknown feature term {t!r}")
            if kind == "interaction" and len(arg.split("*")) != 2:
                raise DataError(f"interaction term must look like 'interaction:a*b', got {t!r}")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def linear(cls, names):
        return cls(tuple(names))

    def columns(self):
        """Raw covariates the map reads."""
        cols = []
        for t in self.terms:
            kind, _, arg = t.partition(":")
            for c in (arg.split("*") if kind == "interaction" else [arg] if arg else [t]):
                if c not in cols:
                    cols.append(c)
        return cols

    def expand(self, X, names):
        names = list(names)
        X = np.asarray(X, dtype=float)

        def col(c):
            try:
                return X[:, names.index(c)]
            except ValueError:
                raise DataError(f"feature map uses unknown covariate {c!r}") from None

        out = []
        for t in self.terms:
            kind, _, arg = t.partition(":")
            if kind == "interaction":
                a, b = arg.split("*")
                out.append(col(a) * col(b))
            elif kind == "square":
                out.append(col(arg) ** 2)
            else:
                out.append(col(t))
        if not out:
            return np.empty((X.shape[0], 0))
        return np.column_stack(out)


def _with_intercept(F):
    return np.column_stack([np.ones(F.shape[0]), F])


def ols(D, y, column_names=None, rtol=1e-10):
    """Least squares via pivoted QR; rank deficiency names the column."""
    n, q = D.shape
    if n <= q:
        raise RankDeficiencyError(f"{n} rows cannot identify {q} coefficients")
    Q, R, piv = scipy.linalg.qr(D, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    small = diag <= rtol * diag[0] if diag[0] > 0 else np.ones(q, bool)
    if small.any():
        j = int(piv[int(np.flatnonzero(small)[0])])
        name = column_names[j] if column_names else f"column {j}"
        raise RankDeficiencyError(f"design matrix is rank deficient at {name!r}")
    coef = np.empty(q)
    coef[piv] = scipy.linalg.solve_triangular(R, Q.T @ y)
    return coef


@dataclass(frozen=True, eq=False)
class LinearModel:
    """``x -> coefficients[0] + features(x) @ coefficients[1:]``."""

    coefficients: np.ndarray
    feature_map: FeatureMap
    covariate_names: tuple

    def __post_init__(self):
        if len(self.coefficients) != len(self.feature_map.terms) + 1:
            raise ValueError("coefficient length must equal the number of features + 1")

    def predict(self, X):
        F = self.feature_map.expand(X, self.covariate_names)
        return self.coefficients[0] + F @ self.coefficients[1:]

    __call__ = predict

    def to_dict(self):
        return {"intercept": float(self.coefficients[0]),
                **{t: float(c) for t, c in zip(self.feature_map.terms, self.coefficients[1:])}}


def _design(ds, features):
    F = features.expand(ds.covariates, ds.covariate_names)
    return _with_intercept(F), ["intercept", *features.terms]


def _check_arms(ds):
    if ds.n == 0:
        raise DataError("empty dataset")
    n1 = int(ds.treatment.sum())
    if n1 == 0 or n1 == ds.n:
        raise DataError("both treatment arms must be present")


def fit_linear(ds, features, rows=None):
    D, names = _design(ds, features)
    y = ds.outcome
    if rows is not None:
        D, y = D[rows], y[rows]
    return LinearModel(ols(D, y, names), features, ds.covariate_names)


def fit_t_learner(ds, features):
    """Separate OLS outcome models per arm; CATE is their difference."""
    _check_arms(ds)
    a = ds.treatment
    mu1 = fit_linear(ds, features, a == 1)
    mu0 = fit_linear(ds, features, a == 0)
    return LinearModel(mu1.coefficients - mu0.coefficients, features, ds.covariate_names)


def fit_s_learner(ds, features):
    """One OLS fit on ``[1, phi(x), A, A * phi(x)]``; CATE is the A contrast."""
    _check_arms(ds)
    F = features.expand(ds.covariates, ds.covariate_names)
    a = ds.treatment.astype(float)[:, None]
    D = np.column_stack([np.ones(ds.n), F, a, a * F])
    names = ["intercept", *features.terms, "A", *(f"A*{t}" for t in features.terms)]
    coef = ols(D, ds.outcome, names)
    q = F.shape[1]
    return LinearModel(coef[q + 1:], features, ds.covariate_names)


@dataclass(frozen=True, eq=False)
class PropensityModel:
    coefficients: np.ndarray
    feature_map: FeatureMap
    covariate_names: tuple
    iterations: int = 0
    clip: float = 1e-6

    def predict(self, X):
        F = _with_intercept(self.feature_map.expand(X, self.covariate_names))
        e = _expit(F @ self.coefficients)
        return np.clip(e, self.clip, 1.0 - self.clip)

    __call__ = predict


def _expit(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def _loglik(D, a, beta):
    eta = D @ beta
    # log(1 + exp(eta)) computed stably
    return float(np.sum(a * eta - np.logaddexp(0.0, eta)))


def logistic_regression(D, a, tol=1e-8, max_iter=100, max_coef=30.0):
    """Maximum likelihood by damped Newton steps.

    Converged when the max-norm of the mean score falls below ``tol``.
    """
    n, q = D.shape
    beta = np.zeros(q)
    ll = _loglik(D, a, beta)
    for it in range(1, max_iter + 1):
        e = _expit(D @ beta)
        grad = D.T @ (a - e) / n
        if np.max(np.abs(grad)) < tol:
            return beta, it - 1
        H = (D * (e * (1 - e))[:, None]).T @ D / n
        try:
            step = scipy.linalg.solve(H, grad, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            cand_ll = _loglik(D, a, cand)
            if cand_ll >= ll or t < 1e-10:
                break
            t *= 0.5
        beta, ll = cand, cand_ll
        if np.max(np.abs(beta)) > max_coef:
            raise ConvergenceError(
                f"logistic fit did not converge: coefficients exceed {max_coef:g} "
                "(perfect or quasi-complete separation)")
    e = _expit(D @ beta)
    if np.max(np.abs(D.T @ (a - e) / n)) < tol:
        return beta, max_iter
    raise ConvergenceError(f"logistic fit did not converge in {max_iter} iterations")


def fit_logistic_propensity(ds, features):
    _check_arms(ds)
    D, _ = _design(ds, features)
    beta, iters = logistic_regression(D, ds.treatment.astype(float))
    return PropensityModel(beta, features, ds.covariate_names, iters)


@dataclass(frozen=True, eq=False)
class RLearnerFit:
    model: LinearModel
    dropped: int


def fit_r_learner(ds, features, propensity=None, folds=2, seed=0, return_info=False, fold_ids=None):
    """Residual-on-residual CATE fit with 2-fold cross-fitted nuisances.

    Nuisances are OLS for E[Y | x] and logistic regression for the propensity,
    each fitted on the opposite fold.  ``propensity`` (callable of the
    covariate matrix) replaces the fitted propensity when the assignment
    mechanism is known.  ``fold_ids`` (values ``0..folds-1``) replaces the
    seeded shuffle.  Rows with |A - e| < 1e-6 are dropped.
    """
    _check_arms(ds)
    n = ds.n
    rng = np.random.default_rng(seed)
    if fold_ids is None:
        fold = np.empty(n, dtype=int)
        fold[rng.permutation(n)] = np.arange(n) % folds
    else:
        fold = np.asarray(fold_ids, dtype=int)
        if fold.shape != (n,) or set(np.unique(fold)) != set(range(folds)):
            raise DataError(f"fold_ids must label every row with 0..{folds - 1}")
    m_hat = np.empty(n)
    e_hat = np.empty(n)
    for f in range(folds):
        train = fold != f
        test = fold == f
        m_model = fit_linear(ds, features, train)
        m_hat[test] = m_model.predict(ds.covariates[test])
        if propensity is None:
            e_model = fit_logistic_propensity(ds.subset(np.flatnonzero(train)), features)
            e_hat[test] = e_model.predict(ds.covariates[test])
        else:
            e_hat[test] = propensity(ds.covariates[test])
    resid_a = ds.treatment - e_hat
    keep = np.abs(resid_a) >= 1e-6
    dropped = int(n - keep.sum())
    if not keep.any():
        raise DataError(f"R-learner: all {n} rows dropped for |A - e_hat| < 1e-6")
    pseudo = (ds.outcome[keep] - m_hat[keep]) / resid_a[keep]
    w = np.abs(resid_a[keep])
    D, names = _design(ds, features)
    D = D[keep]
    coef = ols(D * w[:, None], pseudo * w, names)
    model = LinearModel(coef, features, ds.covariate_names)
    return RLearnerFit(model, dropped) if return_info else model


LEARNERS = {"t": fit_t_learner, "s": fit_s_learner, "r": fit_r_learner}
