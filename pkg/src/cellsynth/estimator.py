"""scikit-learn style wrappers around planning, synthesis and measurement."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .geometry import Environment, exit_spec
from .planner import plan_from_environment
from .synthesis import landmark_vector, synthesize_plan
from .transversal import LinearSystem


class LandmarkMeasurement(TransformerMixin, BaseEstimator):
    """Maps positions ``p`` (rows of X) to ``vec(Y - p 1^T)``.

    Parameters
    ----------
    landmarks : array of shape (d, n_l)
        Landmark coordinates, one column per landmark.
    """

    def __init__(self, landmarks=None):
        self.landmarks = landmarks

    def fit(self, X=None, y=None):
        Y = check_array(self.landmarks, ensure_min_samples=1)
        self.landmarks_ = Y
        self.n_features_in_ = Y.shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "landmarks_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} position coordinates, got {X.shape[1]}")
        n_l = self.landmarks_.shape[1]
        return landmark_vector(self.landmarks_)[None, :] - np.tile(X, (1, n_l))


class CellControllerSynthesizer(BaseEstimator):
    """Plans exits over an environment and fits one landmark controller per cell.

    ``fit`` takes an :class:`Environment`; ``predict`` maps full states (rows of
    X) to inputs using the controller of the cell containing each position.
    """

    def __init__(self, system: LinearSystem | None = None, c_b=(0.5,), c_V=(0.5,), w_b=1.0,
                 w_l=1.0, goal=None, patrol=None, method="simplex", n_jobs=1):
        self.system = system
        self.c_b = c_b
        self.c_V = c_V
        self.w_b = w_b
        self.w_l = w_l
        self.goal = goal
        self.patrol = patrol
        self.method = method
        self.n_jobs = n_jobs

    def fit(self, env: Environment, y=None):
        if not isinstance(env, Environment):
            raise TypeError("fit expects an Environment")
        if self.system is None:
            raise ValueError("system must be set before fitting")
        plan, env2, graph = plan_from_environment(env, self.goal, self.patrol)
        res = synthesize_plan(env2, self.system, plan, self.c_b, self.c_V, self.w_b, self.w_l,
                              self.method, self.n_jobs)
        self.env_, self.plan_, self.graph_, self.result_ = env2, plan, graph, res
        self.controllers_ = res.controllers
        self.programs_ = res.programs
        self.n_features_in_ = self.system.n_x
        return self

    def active_cell(self, x) -> int | None:
        check_is_fitted(self, "controllers_")
        p = np.asarray(x, dtype=float)[list(self.system.pos_idx)]
        cands = [c for c in self.env_.locate(p) if c in self.controllers_]
        for cid in cands:
            if exit_spec(self.env_.cell(cid), self.plan_.exits[cid], self.system).value(x) > 0:
                return cid
        return cands[0] if cands else None

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "controllers_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} state coordinates, got {X.shape[1]}")
        out = np.full((len(X), self.system.n_u), np.nan)
        for k, x in enumerate(X):
            cid = self.active_cell(x)
            if cid is not None:
                out[k] = self.controllers_[cid].control(x, self.env_.cell(cid).landmarks, self.system)
        return out

    def margins(self) -> list[dict]:
        check_is_fitted(self, "controllers_")
        return self.result_.margins_table()
