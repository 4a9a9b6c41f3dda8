"""Simulation laboratory: data generators, domain selection, replication runner
and the OLS-versus-CART selection-bias demonstration.
"""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from . import tree as cart
from .boost import BoostParams
from .data import Dataset
from .errors import DacartError, NumericalError, UserError
from .metrics import rmse
from .pipeline import (
    NoInformativeVariables,
    estimate_weights,
    fallback_selection,
    fit_bagged,
    selection_from_tree,
)
from .tree import FitParams
from .weights import DEFAULT_TRUNC, selection_logit, true_weights_from_logit

log = logging.getLogger(__name__)

FORMULAS = ("main_sim", "bias_demo")
MECHANISMS = ("restricted", "shifted", "none", "bias_demo_logit")
SCORES = ("x1", "x1_plus_2x4")
CSV_HEADER = ("scenario", "replication", "model", "estimator", "n_source", "metric", "value")

MODELS = {
    "cart": "naive CART on all features",
    "target-cart": "CART trained on held-out labelled target rows",
    "da-cart": "DA-CART (needs an estimator)",
    "bt": "naive bagged trees",
    "target-bt": "bagged trees on held-out labelled target rows",
    "da-bt-bootstrap": "bagged trees, importance-weighted bootstrap",
    "da-bt-split": "bagged trees, importance-weighted split criterion",
}
SIM_ESTIMATORS = ("ew1", "ew2", "ew3", "tw", "unit")


@dataclass(frozen=True)
class GeneratorSpec:
    formula: str = "main_sim"
    noise_sd: float = 1.0

    def __post_init__(self):
        if self.formula not in FORMULAS:
            raise UserError(f"generator.formula: unknown formula {self.formula!r}")
        if not self.noise_sd >= 0:
            raise UserError("generator.noise_sd must be >= 0")


@dataclass(frozen=True)
class SelectionSpec:
    mechanism: str = "restricted"
    score: str = "x1"

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise UserError(f"selection.mechanism: unknown mechanism {self.mechanism!r}")
        if self.score not in SCORES:
            raise UserError(f"selection.score: unknown score {self.score!r}")

    @property
    def score_features(self) -> list:
        return ["X1"] if self.score == "x1" else ["X1", "X4"]


def main_sim_mean(X1, X2):
    """Noise-free regression function of the main simulation."""
    return 5 * np.sin(X1 * X2) + X1 + X1**2 + X2 + X2**2


def generate_pool(spec: GeneratorSpec, n: int, rng) -> Dataset:
    """``n`` i.i.d. rows; ``rng`` is a Generator or an integer seed.

    main_sim: X1~N(0, sd 3), X2~N(0,1), X3~U(0,1), X4~N(0,1), X5~Gamma(2, 1).
    bias_demo: X1, X2, X3 ~ N(0,1), y = 3 X1 + 2 X2 + 0.5 X3 + noise.
    """
    if n < 1:
        raise UserError("pool size must be >= 1")
    rng = np.random.default_rng(rng)
    if spec.formula == "main_sim":
        X1 = rng.normal(0.0, 3.0, n)
        X2 = rng.normal(0.0, 1.0, n)
        X3 = rng.uniform(0.0, 1.0, n)
        X4 = rng.normal(0.0, 1.0, n)
        X5 = rng.gamma(2.0, 1.0, n)
        y = main_sim_mean(X1, X2) + rng.normal(0.0, spec.noise_sd, n)
        cols = {"X1": X1, "X2": X2, "X3": X3, "X4": X4, "X5": X5}
    else:
        X = rng.normal(0.0, 1.0, (3, n))
        y = 3 * X[0] + 2 * X[1] + 0.5 * X[2] + rng.normal(0.0, spec.noise_sd, n)
        cols = {"X1": X[0], "X2": X[1], "X3": X[2]}
    kinds = {k: "continuous" for k in cols}
    return Dataset.from_arrays(cols, response=y, kinds=kinds)


def score_values(pool: Dataset, score: str) -> np.ndarray:
    if score == "x1":
        return pool.column("X1")
    return pool.column("X1") + 2.0 * pool.column("X4")


def selection_logits(pool: Dataset, sel: SelectionSpec):
    """Per-row logit of ``P(W=1)`` and the score mean it was centred on."""
    if sel.mechanism == "bias_demo_logit":
        return 2.0 * pool.column("X2"), 0.0
    s = score_values(pool, sel.score)
    mean = float(np.mean(s))
    return selection_logit(s, sel.mechanism, mean), mean


@dataclass(frozen=True, eq=False)
class DomainSplit:
    source: Dataset
    target: Dataset
    source_logit: np.ndarray
    target_logit: np.ndarray
    score_mean: float


def assign_domains(pool: Dataset, sel: SelectionSpec, rng) -> DomainSplit:
    """Draw ``W ~ Bernoulli(sigmoid(logit))`` per row; ``W=1`` rows form the target."""
    rng = np.random.default_rng(rng)
    z, mean = selection_logits(pool, sel)
    w = rng.random(pool.n) < expit(z)
    src = np.flatnonzero(~w)
    tgt = np.flatnonzero(w)
    if src.size == 0 or tgt.size == 0:
        raise NumericalError("domain assignment left one domain empty; use a larger pool")
    return DomainSplit(pool.take(src), pool.take(tgt), z[src], z[tgt], mean)


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    generator: GeneratorSpec = GeneratorSpec()
    selection: SelectionSpec = SelectionSpec()
    n_source: int = 1000
    n_target_test: int = 10000
    models: tuple = ("cart", "da-cart:ew1", "da-cart:tw", "target-cart")
    replications: int = 20
    master_seed: int = 0
    tree: FitParams = FitParams()
    boost: BoostParams = BoostParams()
    trunc: tuple = DEFAULT_TRUNC
    threshold: float = 0.85
    n_trees: int = 100
    ew1_features: tuple = ("X1",)
    ew2_features: tuple = ("X1", "X4")
    ew3_features: tuple | None = None
    tree_features: str = "all"
    pool_factor: int = 4
    max_batches: int = 100

    def __post_init__(self):
        if int(self.n_source) < 2:
            raise UserError("scenario.n_source must be >= 2")
        if int(self.n_target_test) < 1:
            raise UserError("scenario.n_target_test must be >= 1")
        if int(self.replications) < 1:
            raise UserError("scenario.replications must be >= 1")
        if int(self.n_trees) < 1:
            raise UserError("bagging.n_trees must be >= 1")
        if not 0 < self.threshold <= 1:
            raise UserError("weights.threshold must lie in (0, 1]")
        lo, hi = self.trunc
        if not 0.0 < lo < hi < 1.0:
            raise UserError(f"weights.trunc must satisfy 0 < lo < hi < 1, got {self.trunc}")
        if self.tree_features not in ("all", "selected"):
            raise UserError("tree.features must be 'all' or 'selected'")
        for spec in self.models:
            parse_model(spec)

    @property
    def needs_target_train(self) -> bool:
        return any(parse_model(m)[0] in ("target-cart", "target-bt") for m in self.models)

    def weight_features(self, estimator: str) -> list:
        if estimator == "ew1":
            return list(self.ew1_features)
        if estimator == "ew2":
            return list(self.ew2_features)
        if estimator == "ew3":
            return list(self.ew3_features or self.selection.score_features)
        return []


def parse_model(spec: str):
    """``"da-cart:ew1"`` -> ``("da-cart", "ew1")``; plain models get estimator ``"none"``."""
    name, _, est = spec.strip().partition(":")
    if name not in MODELS:
        raise UserError(f"scenario.models: unknown model {name!r}")
    if name in ("da-cart", "da-bt-bootstrap", "da-bt-split"):
        est = est or "ew1"
        if est not in SIM_ESTIMATORS:
            raise UserError(f"scenario.models: unknown estimator {est!r} in {spec!r}")
    elif est:
        raise UserError(f"scenario.models: model {name!r} takes no estimator")
    else:
        est = "none"
    return name, est


def replication_seed(master_seed: int, replication: int) -> int:
    """Seed for replication ``r``: first word of ``SeedSequence([master_seed, r])``."""
    return int(np.random.SeedSequence([int(master_seed), int(replication)]).generate_state(1)[0])


@dataclass(frozen=True, eq=False)
class ScenarioData:
    train: Dataset
    test: Dataset
    target_train: Dataset | None
    train_logit: np.ndarray
    seed: int


def build_scenario_data(sc: Scenario, replication: int) -> ScenarioData:
    """Source training rows, target test rows and (if needed) labelled target training rows.

    Pool batches are generated and split until both domains have enough
    rows, then truncated to exact sizes. Each batch centres its score on its
    own mean. The true selection logit of every source row is returned for
    true-mechanism weights.
    """
    seed = replication_seed(sc.master_seed, replication)
    rng = np.random.default_rng(seed)
    n_src = int(sc.n_source)
    n_tgt = int(sc.n_target_test) + (n_src if sc.needs_target_train else 0)
    batch = sc.pool_factor * (n_src + n_tgt)
    srcs, tgts, logits = [], [], []
    have_s = have_t = generated = 0
    for _ in range(sc.max_batches):
        pool = generate_pool(sc.generator, batch, rng)
        split = assign_domains(pool, sc.selection, rng)
        generated += batch
        if have_s < n_src:
            srcs.append(split.source)
            logits.append(split.source_logit)
            have_s += split.source.n
        if have_t < n_tgt:
            tgts.append(split.target)
            have_t += split.target.n
        if have_s >= n_src and have_t >= n_tgt:
            break
    else:
        rate = min(have_s, have_t) / max(generated, 1)
        raise NumericalError(
            f"acceptance too low after {sc.max_batches} pool batches (rate {rate:.3%}); "
            "check the selection mechanism"
        )
    source = _concat(srcs).take(np.arange(n_src))
    target = _concat(tgts).take(np.arange(n_tgt))
    n_test = int(sc.n_target_test)
    test = target.take(np.arange(n_test))
    target_train = target.take(np.arange(n_test, n_tgt)) if n_tgt > n_test else None
    logit = np.concatenate(logits)[:n_src]
    return ScenarioData(source, test, target_train, logit, seed)


def _concat(parts) -> Dataset:
    first = parts[0]
    return Dataset(
        first.schema,
        np.hstack([p.columns for p in parts]),
        np.concatenate([p.response for p in parts]),
        None,
        first.response_name,
    )


# ---------------------------------------------------------------- study runner


@dataclass
class StudyResult:
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in self.records:
            writer.writerow([*rec[:6], repr(float(rec[6]))])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text

    def values(self, model: str, estimator: str = "none", metric: str = "rmse", n_source=None) -> np.ndarray:
        return np.array(
            [
                r[6]
                for r in self.records
                if r[2] == model and r[3] == estimator and r[5] == metric and (n_source is None or r[4] == n_source)
            ]
        )

    def median(self, model: str, estimator: str = "none", metric: str = "rmse", n_source=None) -> float:
        return float(np.median(self.values(model, estimator, metric, n_source)))

    def summary(self) -> list:
        """``(model, estimator, n_source, metric, count, q1, median, q3)`` per group."""
        keys = []
        for r in self.records:
            k = (r[2], r[3], r[4], r[5])
            if k not in keys:
                keys.append(k)
        out = []
        for model, est, n, metric in keys:
            v = self.values(model, est, metric, n)
            q1, med, q3 = np.percentile(v, [25, 50, 75])
            out.append((model, est, n, metric, len(v), float(q1), float(med), float(q3)))
        return out

    def summary_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["model", "estimator", "n_source", "metric", "count", "q1", "median", "q3", "iqr"])
        for model, est, n, metric, cnt, q1, med, q3 in self.summary():
            writer.writerow([model, est, n, metric, cnt, repr(q1), repr(med), repr(q3), repr(q3 - q1)])
        if self.failures:
            writer.writerow([f"# failed replications: {len(self.failures)}"])
        return buf.getvalue()


def _weights_for(est, sc, data, params, cache):
    if est in cache:
        return cache[est]
    if est == "tw":
        wv = true_weights_from_logit(data.train_logit, sc.trunc)
    else:
        kind = {"ew1": "ew", "ew2": "ew", "ew3": "kliep", "unit": "unit"}[est]
        wv, _ = estimate_weights(
            data.train, data.test.without_response(), kind, sc.weight_features(est), sc.boost, sc.trunc,
            seed=params.seed,
        )
    cache[est] = wv
    return wv


def run_replication(sc: Scenario, replication: int) -> list:
    """RMSE records for every configured model on one replication."""
    data = build_scenario_data(sc, replication)
    params = replace(sc.tree, seed=data.seed)
    bag_params = replace(params, prune=False)
    truth = data.test.response
    test = data.test.without_response()
    state = {}
    weights = {}

    def naive_tree():
        if "naive" not in state:
            state["naive"] = cart.fit(data.train, None, None, params)
        return state["naive"]

    def selection():
        if "selection" not in state:
            try:
                state["selection"] = selection_from_tree(naive_tree(), sc.threshold)
            except NoInformativeVariables:
                state["selection"] = fallback_selection(data.train.names, sc.threshold)
        return state["selection"]

    def tree_candidates():
        return None if sc.tree_features == "all" else selection().selected

    records = []
    for spec in sc.models:
        model, est = parse_model(spec)
        if model == "cart":
            pred = cart.predict(naive_tree(), test)
        elif model == "target-cart":
            pred = cart.predict(cart.fit(data.target_train, None, None, params), test)
        elif model == "da-cart":
            wv = _weights_for(est, sc, data, params, weights)
            m3 = cart.fit(data.train, wv.values, tree_candidates(), params)
            pred = cart.predict(m3, test)
        elif model == "bt":
            pred = fit_bagged(data.train, "naive", None, sc.n_trees, bag_params, data.seed).predict(test)
        elif model == "target-bt":
            pred = fit_bagged(data.target_train, "naive", None, sc.n_trees, bag_params, data.seed).predict(test)
        else:
            variant = "da_bootstrap" if model == "da-bt-bootstrap" else "da_split"
            wv = _weights_for(est, sc, data, params, weights)
            bag = fit_bagged(data.train, variant, wv, sc.n_trees, bag_params, data.seed, tree_candidates())
            pred = bag.predict(test)
        records.append((sc.name, replication, model, est, int(sc.n_source), "rmse", rmse(pred, truth)))
    return records


def _safe_replication(args):
    sc, r = args
    try:
        return r, run_replication(sc, r), None
    except DacartError as exc:
        return r, [], f"{type(exc).__name__}: {exc}"


def run_study(sc: Scenario, workers: int = 1) -> StudyResult:
    """Run every replication; records are ordered by replication then model.

    Replications are independent and seeded from ``(master_seed, r)``, so the
    result does not depend on ``workers``. A replication that raises a
    library error is dropped and listed in ``failures``.
    """
    jobs = [(sc, r) for r in range(int(sc.replications))]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            outcomes = list(pool.map(_safe_replication, jobs))
    else:
        outcomes = [_safe_replication(j) for j in jobs]
    result = StudyResult()
    for r, recs, err in sorted(outcomes, key=lambda o: o[0]):
        if err is None:
            result.records.extend(recs)
        else:
            log.warning("replication %d failed: %s", r, err)
            result.failures.append((r, err))
    return result


# ---------------------------------------------------------------- bias demo


def ols_fit(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least squares with intercept via the normal equations; returns ``[b0, b1, ...]``.

    ``X`` is ``(n, p)``.
    """
    Z = np.column_stack([np.ones(len(X)), X])
    try:
        return np.linalg.solve(Z.T @ Z, Z.T @ y)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular normal equations: {exc}") from None


def ols_predict(beta: np.ndarray, X: np.ndarray) -> np.ndarray:
    return beta[0] + X @ beta[1:]


@dataclass(frozen=True)
class BiasDemoResult:
    mse_ols: np.ndarray
    mse_cart: np.ndarray

    @property
    def mean_mse_ols(self) -> float:
        return float(np.mean(self.mse_ols))

    @property
    def mean_mse_cart(self) -> float:
        return float(np.mean(self.mse_cart))


def bias_demo(replications: int = 100, seed: int = 0, n: int = 2000, params: FitParams = FitParams()) -> BiasDemoResult:
    """Linear model under selection on X2: OLS and CART fit on the ``W=1`` rows,
    scored by MSE on the ``W=0`` rows.
    """
    if replications < 1:
        raise UserError("replications must be >= 1")
    spec = GeneratorSpec("bias_demo")
    sel = SelectionSpec("bias_demo_logit")
    ols, tree_mse = [], []
    for r in range(replications):
        rep_seed = replication_seed(seed, r)
        rng = np.random.default_rng(rep_seed)
        split = assign_domains(generate_pool(spec, n, rng), sel, rng)
        # W = 1 rows train, W = 0 rows evaluate
        train, evaluate = split.target, split.source
        beta = ols_fit(train.columns.T, train.response)
        ols.append(np.mean((ols_predict(beta, evaluate.columns.T) - evaluate.response) ** 2))
        t = cart.fit(train, None, None, replace(params, seed=rep_seed))
        tree_mse.append(np.mean((cart.predict(t, evaluate) - evaluate.response) ** 2))
    return BiasDemoResult(np.array(ols), np.array(tree_mse))
