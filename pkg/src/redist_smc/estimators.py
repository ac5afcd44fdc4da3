"""scikit-learn style front ends.

Samplers take the :class:`~redist_smc.graph.Graph` as ``X`` in ``fit`` and
expose results as fitted attributes; ``PlanStatistics`` turns an assignment
matrix into a statistics matrix.  Parameters follow the sklearn conventions so
``get_params``, ``set_params`` and ``clone`` work.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .constraints import ConstraintSpec
from .enumerate import enumerate_partitions, reweight_reference
from .graph import Graph, Labeling, log_tau_nodes
from .mcmc import MergeSplitParams, initial_plan, run_chain
from .metrics import dev, rem, spl
from .rng import RngStream
from .smc import SmcConfig, run_smc


def _check_graph(X) -> Graph:
    if not isinstance(X, Graph):
        raise TypeError(f"expected a Graph, got {type(X).__name__}")
    return X


def _constraints(c) -> ConstraintSpec:
    if c is None:
        return ConstraintSpec()
    if isinstance(c, ConstraintSpec):
        return c
    return ConstraintSpec(list(c))


class SMCSampler(BaseEstimator):
    """Sequential Monte Carlo plan sampler.

    After ``fit(graph)``: ``ensemble_`` (the :class:`WeightedEnsemble`),
    ``assignments_``, ``log_weights_`` and ``diagnostics_``.
    """

    def __init__(self, n_districts=2, n_particles=1000, pop_tol=0.01, rho=1.0, alpha=0.5,
                 constraints=None, k="auto", k_threshold=0.95, k_trees=None, truncation=None,
                 admin_levels=None, correct_ordering=False, final_resample=False,
                 max_attempts=None, random_state=None, n_jobs=1):
        self.n_districts = n_districts
        self.n_particles = n_particles
        self.pop_tol = pop_tol
        self.rho = rho
        self.alpha = alpha
        self.constraints = constraints
        self.k = k
        self.k_threshold = k_threshold
        self.k_trees = k_trees
        self.truncation = truncation
        self.admin_levels = admin_levels
        self.correct_ordering = correct_ordering
        self.final_resample = final_resample
        self.max_attempts = max_attempts
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _config(self) -> SmcConfig:
        return SmcConfig(
            n_particles=self.n_particles, n_districts=self.n_districts, pop_tol=self.pop_tol,
            rho=self.rho, alpha=self.alpha, constraints=_constraints(self.constraints), k=self.k,
            k_threshold=self.k_threshold, k_trees=self.k_trees, truncation=self.truncation,
            admin_levels=self.admin_levels, seed=self.random_state, n_jobs=self.n_jobs,
            correct_ordering=self.correct_ordering, final_resample=self.final_resample,
            max_attempts=self.max_attempts,
        )

    def fit(self, X, y=None):
        graph = _check_graph(X)
        ens = run_smc(self._config(), graph)
        self.ensemble_ = ens
        self.assignments_ = ens.assignments
        self.log_weights_ = ens.log_weights
        self.diagnostics_ = ens.diagnostics
        return self

    def sample(self, size=None, random_state=None) -> np.ndarray:
        """Assignments drawn with replacement by final weight."""
        check_is_fitted(self, "ensemble_")
        seed = self.ensemble_.diagnostics["seed"] if random_state is None else random_state
        idx = self.ensemble_.resample(size, RngStream(seed, (5,)).generator())
        return self.assignments_[idx]


class MergeSplitSampler(BaseEstimator):
    """Merge-split MCMC baseline.

    After ``fit(graph)``: ``assignments_``, ``iterations_`` and
    ``acceptance_rate_``.  ``initial`` may be an assignment; by default one
    single-particle SMC draw starts the chain.
    """

    def __init__(self, n_districts=2, pop_tol=0.01, rho=1.0, constraints=None, k=None,
                 admin_levels=None, iterations=1000, burn_in=0, thin=1, initial=None,
                 random_state=None):
        self.n_districts = n_districts
        self.pop_tol = pop_tol
        self.rho = rho
        self.constraints = constraints
        self.k = k
        self.admin_levels = admin_levels
        self.iterations = iterations
        self.burn_in = burn_in
        self.thin = thin
        self.initial = initial
        self.random_state = random_state

    def fit(self, X, y=None):
        graph = _check_graph(X)
        lab = Labeling(graph, self.admin_levels) if self.admin_levels else None
        params = MergeSplitParams(self.n_districts, self.pop_tol, self.rho,
                                  _constraints(self.constraints), self.k, lab)
        seed = int(np.random.SeedSequence(self.random_state).entropy)
        init = self.initial
        if init is None:
            init = initial_plan(graph, params, seed)
        res = run_chain(graph, init, self.iterations, params, RngStream(seed, (6,)),
                        self.burn_in, self.thin)
        self.seed_ = seed
        self.chain_ = res
        self.assignments_ = res.assignments
        self.iterations_ = res.iterations
        self.acceptance_rate_ = res.acceptance_rate
        return self


class PlanEnumerator(BaseEstimator):
    """Exhaustive enumeration; ``reference_`` holds the :class:`ReferenceSet`."""

    def __init__(self, n_districts=2, pop_tol=0.01, admin_levels=None, cap=10**8):
        self.n_districts = n_districts
        self.pop_tol = pop_tol
        self.admin_levels = admin_levels
        self.cap = cap

    def fit(self, X, y=None):
        graph = _check_graph(X)
        self.reference_ = enumerate_partitions(graph, self.n_districts, self.pop_tol, self.cap,
                                               self.admin_levels)
        self.assignments_ = self.reference_.plans
        return self

    def target(self, rho=1.0, constraints=None) -> np.ndarray:
        check_is_fitted(self, "reference_")
        return reweight_reference(self.reference_, rho, _constraints(constraints))


class PlanStatistics(TransformerMixin, BaseEstimator):
    """Map an ``(plans, nodes)`` assignment matrix to per-plan statistics.

    Columns: ``dev``, ``rem``, ``log_tau``, then one ``spl`` column per level
    in ``admin_levels``.
    """

    def __init__(self, graph=None, admin_levels=None):
        self.graph = graph
        self.admin_levels = admin_levels

    def fit(self, X, y=None):
        graph = _check_graph(self.graph)
        X = check_array(X, dtype=np.int64)
        if X.shape[1] != graph.m:
            raise ValueError(f"assignments have {X.shape[1]} columns, graph has {graph.m} nodes")
        names = ["dev", "rem", "log_tau"] + [f"spl_{lv}" for lv in (self.admin_levels or [])]
        self.feature_names_out_ = np.asarray(names, dtype=object)
        self.n_features_in_ = graph.m
        return self

    def transform(self, X):
        check_is_fitted(self, "feature_names_out_")
        X = check_array(X, dtype=np.int64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError("assignment width does not match the fitted graph")
        graph = self.graph
        lab = Labeling(graph, self.admin_levels) if self.admin_levels else None
        out = np.empty((len(X), len(self.feature_names_out_)))
        for j, a in enumerate(X):
            n = int(a.max()) + 1
            row = [dev(a, graph, n), rem(a, graph),
                   sum(log_tau_nodes(graph, np.flatnonzero(a == i).tolist()) for i in range(n))]
            if lab is not None:
                row += [spl(a, graph, lab, lv) for lv in range(lab.n_levels)]
            out[j] = row
        return out

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "feature_names_out_")
        return self.feature_names_out_
