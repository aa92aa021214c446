"""scikit-learn style wrappers around POD reduction and source identification."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import fem, rom as rom_mod, si


class PODReducer(TransformerMixin, BaseEstimator):
    """POD basis learned from snapshot rows of nodal values.

    ``transform`` returns L2 coefficients, ``inverse_transform`` maps them back
    to nodal fields. With ``flow`` set, ``fit`` also projects the operator and
    stores a :class:`~asi.rom.ReducedModel` in ``model_``.
    """

    def __init__(self, mesh=None, flow=None, eta=0.97):
        self.mesh = mesh
        self.flow = flow
        self.eta = eta

    def fit(self, X, y=None):
        if self.mesh is None:
            raise ValueError("PODReducer needs a mesh")
        X = check_array(X, ensure_min_samples=1)
        self.mass_ = fem.mass_matrix(self.mesh)
        C = rom_mod.covariance(X, self.mesh, self.mass_)
        self.components_, self.eigenvalues_, self.n_components_ = rom_mod.pod_basis(C, X, self.eta)
        if self.flow is not None:
            K = fem.assemble(self.mesh, self.flow)
            A = rom_mod.reduce_operator(K, self.components_)
            self.model_ = rom_mod.ReducedModel(mesh=self.mesh, psi=self.components_, A=A,
                                               eigenvalues=self.eigenvalues_, eta=self.eta)
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X)
        return X @ (self.mass_ @ self.components_)

    def inverse_transform(self, Z):
        check_is_fitted(self, "components_")
        return check_array(Z) @ self.components_.T


class SourceIdentifier(RegressorMixin, BaseEstimator):
    """Fit tower sources to point readings; ``predict`` gives concentrations.

    ``fit(waypoints, readings)`` runs the sensitivity initialization followed by
    projected Newton-CG. Pass ``p0`` to skip the initialization.
    """

    def __init__(self, rom=None, tau=si.TAU_DEFAULT, alpha=0.7, beta_max=None, max_iter=200, cover=None):
        self.rom = rom
        self.tau = tau
        self.alpha = alpha
        self.beta_max = beta_max
        self.max_iter = max_iter
        self.cover = cover

    def fit(self, X, y, p0=None):
        if self.rom is None:
            raise ValueError("SourceIdentifier needs a reduced model")
        X = check_array(X)
        if X.shape[1] != 2:
            raise ValueError(f"waypoints must have two columns, got {X.shape[1]}")
        y = np.asarray(y, dtype=float).ravel()
        self.problem_ = si.SiProblem(self.rom, X, y, tau=self.tau)
        if p0 is None:
            beta_max = np.inf if self.beta_max is None else self.beta_max
            p0 = si.sa_initialize(self.problem_, alpha=self.alpha, cover=self.cover, beta_max=beta_max)
        self.solution_ = si.solve_si(self.problem_, p0, max_iter=self.max_iter)
        self.params_ = self.solution_.params
        self.coef_ = self.rom.reduced_solve(self.params_)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return self.rom.eval_basis(X) @ self.coef_
