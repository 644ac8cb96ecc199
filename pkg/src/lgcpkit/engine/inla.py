"""Nested Laplace inference for assembled latent Gaussian models.

For each hyperparameter vector theta the latent full conditional is
approximated by a Gaussian matched at its mode (Newton iterations with the
sum-to-zero constraints enforced by conditioning).  The ratio of joint
density to that Gaussian, evaluated at the mode, gives the hyperparameter
posterior up to a constant; theta is then integrated out on a small design
around the posterior mode and the latent marginals are mixtures of the
per-point Gaussians.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.special import gammaln

from ..errors import ConvergenceError, IndefiniteError
from ..parallel import parallel_map
from .model import AssembledModel
from .sparse import SparseCholesky

log = logging.getLogger(__name__)

CLAMP = 30.0
LOG_2PI = float(np.log(2 * np.pi))
SMALL_COMPONENT = 64  # components up to this length get full posterior covariances
TRUST = 5.0  # half-width of the hyperparameter search box
SCREEN_STEP = 4.0  # offset of the extra starting points on each precision axis


@numba.njit(cache=True)
def _row_quadratic(a_indptr, a_indices, a_data, indptr, indices, s_val, pos, out):
    """out[i] = a_i' S a_i using S entries from a selected inverse."""
    for i in range(out.size):
        acc = 0.0
        for p in range(a_indptr[i], a_indptr[i + 1]):
            for q in range(p, a_indptr[i + 1]):
                a = pos[a_indices[p]]
                b = pos[a_indices[q]]
                lo = min(a, b)
                hi = max(a, b)
                left = indptr[lo]
                right = indptr[lo + 1] - 1
                found = -1
                while left <= right:
                    mid = (left + right) // 2
                    if indices[mid] == hi:
                        found = mid
                        break
                    elif indices[mid] < hi:
                        left = mid + 1
                    else:
                        right = mid - 1
                if found < 0:
                    return i
                v = a_data[p] * a_data[q] * s_val[found]
                acc += v if p == q else 2.0 * v
        out[i] = acc
    return -1


@dataclass
class GaussianApprox:
    """Gaussian approximation of the latent field at one theta."""

    theta: np.ndarray
    mode: np.ndarray
    factor: SparseCholesky
    design: sp.csr_matrix
    v: np.ndarray  # H^{-1} C'
    s_inv: np.ndarray  # (C H^{-1} C')^{-1}
    loglik: float
    log_posterior: float
    grad_norm: float
    n_iter: int
    objective_trace: list = field(default_factory=list)
    n_clamped: int = 0
    _selinv: object = None

    def selected_inverse(self):
        if self._selinv is None:
            self._selinv = self.factor.selected_inverse()
        return self._selinv

    def _correction(self):
        return self.v @ self.s_inv

    def marginal_variances(self) -> np.ndarray:
        var = self.selected_inverse().diagonal()
        if self.v.shape[1]:
            var = var - np.sum(self._correction() * self.v, axis=1)
        return np.maximum(var, 0.0)

    def covariance_block(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        e = np.zeros((self.mode.size, idx.size))
        e[idx, np.arange(idx.size)] = 1.0
        x = self.factor.solve(e)[idx]
        if self.v.shape[1]:
            x = x - self._correction()[idx] @ self.v[idx].T
        return 0.5 * (x + x.T)

    def predictor_variances(self, a: sp.csr_matrix | None = None) -> np.ndarray:
        a = self.design if a is None else a.tocsr()
        a.sort_indices()
        sel = self.selected_inverse()
        out = np.empty(a.shape[0])
        bad = _row_quadratic(a.indptr.astype(np.int64), a.indices.astype(np.int64), a.data,
                             sel._indptr, sel._indices, sel._values, sel._pos, out)
        if bad >= 0:
            raise IndefiniteError(f"predictor row {bad} couples latent pairs outside the factor pattern")
        if self.v.shape[1]:
            out -= np.sum((a @ self._correction()) * (a @ self.v), axis=1)
        return np.maximum(out, 0.0)


@dataclass
class PointSummary:
    """What the mixture needs from one hyper point once its factor is released."""

    mode: np.ndarray
    var: np.ndarray
    eta_mean: np.ndarray  # linear predictor incl. offset, per observation
    eta_var: np.ndarray
    obs_log_tau: np.ndarray  # gaussian log precision per observation (nan for Poisson)
    cov_index: np.ndarray
    cov: np.ndarray


@dataclass
class HyperPoint:
    theta: np.ndarray
    log_posterior: float
    weight: float = 0.0
    z: np.ndarray | None = None
    summary: PointSummary | None = None


class InlaEngine:
    """Approximate Bayesian inference for one assembled model."""

    def __init__(self, model: AssembledModel, tol: float = 1e-6, max_iter: int = 50,
                 threads: int = 1, grid_step: float = 0.75, grid_drop: float = 4.0,
                 hessian_step: float = 1e-4):
        self.model = model
        self.tol = tol
        self.max_iter = max_iter
        self.threads = threads
        self.grid_step = grid_step
        self.grid_drop = grid_drop
        self.hessian_step = hessian_step
        self._pois = model.family_code == 0
        self._y = model.y
        self._lgy = np.where(self._pois, gammaln(model.y + 1.0), 0.0)
        c = model.constraints
        self._c = c
        self._ct = np.ascontiguousarray(c.T)
        self._cct_inv = np.linalg.inv(c @ c.T) if c.shape[0] else np.zeros((0, 0))
        self._warm = np.zeros(model.dim)
        self.n_clamped = 0
        self.n_evaluations = 0
        self._small_idx = self._small_component_index()

    def _small_component_index(self) -> np.ndarray:
        idx = []
        for comp in self.model.spec.components:
            start, stop = self.model.layout[comp.name]
            if stop - start <= SMALL_COMPONENT:
                idx.extend(range(start, stop))
        return np.array(idx, dtype=np.int64)

    # -------------------------------------------------------------- likelihood

    def _obs_log_tau(self, theta) -> np.ndarray:
        lt = np.full(self._y.size, np.nan)
        for b in self.model.blocks:
            if b.family == "gaussian":
                lt[b.rows] = self.model.obs_log_precision(b, theta)
        return lt

    def _likelihood(self, eta, obs_log_tau):
        """Log-likelihood, its gradient and negative curvature per observation."""
        y = self._y
        p = self._pois
        ll = np.empty(y.size)
        g = np.empty(y.size)
        w = np.empty(y.size)
        e = eta[p]
        ec = np.clip(e, -CLAMP, CLAMP)
        n_clamped = int(np.count_nonzero(ec != e))
        mu = np.exp(ec)
        ll[p] = y[p] * ec - mu - self._lgy[p]
        g[p] = y[p] - mu
        w[p] = mu
        q = ~p
        if np.any(q):
            tau = np.exp(obs_log_tau[q])
            r = y[q] - eta[q]
            ll[q] = 0.5 * obs_log_tau[q] - 0.5 * LOG_2PI - 0.5 * tau * r * r
            g[q] = tau * r
            w[q] = tau
        return ll, g, w, n_clamped

    # -------------------------------------------------------------- Gaussian approximation

    def _project(self, v):
        if not self._c.shape[0]:
            return v
        return v - self._ct @ (self._cct_inv @ (self._c @ v))

    def _negligible_step(self, fac, grad, f0) -> bool:
        """Newton decrement below rounding level of the objective (very stiff precisions)."""
        g = self._project(grad)
        return bool(abs(g @ fac.solve(g)) < 1e-12 * max(1.0, abs(f0)))

    def gaussian_approx(self, theta, start=None, tol: float | None = None) -> GaussianApprox:
        """Newton iterations to the constrained mode of the latent full conditional."""
        model = self.model
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        tol = self.tol if tol is None else tol
        a = model.design(theta)
        at = a.T.tocsr()
        q = model.precision(theta)
        obs_lt = self._obs_log_tau(theta)
        off = model.offset
        zeta = (self._warm if start is None else np.asarray(start, dtype=float)).copy()
        if self._c.shape[0]:
            zeta = self._project(zeta)

        def objective(z):
            ll, _, _, _ = self._likelihood(a @ z + off, obs_lt)
            return -0.5 * z @ (q @ z) + ll.sum()

        trace = []
        fac = None
        gnorm = np.inf
        n_cl = 0
        for it in range(self.max_iter + 1):
            eta = a @ zeta + off
            ll, g, w, n_cl = self._likelihood(eta, obs_lt)
            qz = q @ zeta
            f0 = -0.5 * zeta @ qz + ll.sum()
            trace.append(f0)
            grad = at @ g - qz
            gnorm = float(np.max(np.abs(self._project(grad)))) if grad.size else 0.0
            h = (q + at @ sp.diags(w) @ a).tocsc()
            fac = SparseCholesky(h)
            if gnorm < tol:
                break
            if it == self.max_iter:
                if gnorm < self.tol or self._negligible_step(fac, grad, f0):
                    break
                raise ConvergenceError(f"Newton iteration did not converge at theta={theta.tolist()}", gnorm)
            z_new = fac.solve(h @ zeta + grad)
            if self._c.shape[0]:
                v = fac.solve(self._ct)
                z_new = z_new - v @ np.linalg.solve(self._c @ v, self._c @ z_new)
            delta = z_new - zeta
            step = 1.0
            for _ in range(40):
                cand = zeta + step * delta
                f1 = objective(cand)
                if np.isfinite(f1) and f1 >= f0 - 1e-12 * max(1.0, abs(f0)):
                    break
                step *= 0.5
            else:
                if gnorm < self.tol:
                    break
                raise ConvergenceError("line search failed to increase the objective", gnorm)
            zeta = cand
        self.n_clamped += n_cl
        self.n_evaluations += 1

        if self._c.shape[0]:
            v = fac.solve(self._ct).reshape(model.dim, -1)
            s = self._c @ v
            s_inv = np.linalg.inv(s)
            sign, logdet_s = np.linalg.slogdet(s)
            if sign <= 0:
                raise IndefiniteError("constraint covariance is not positive definite")
        else:
            v = np.zeros((model.dim, 0))
            s_inv = np.zeros((0, 0))
            logdet_s = 0.0
        logdet_q, logdet_cq = model.prior_log_terms(theta)
        eta = a @ zeta + off
        ll = float(self._likelihood(eta, obs_lt)[0].sum())
        lp = (model.log_prior_theta(theta)
              + 0.5 * logdet_q - 0.5 * zeta @ (q @ zeta) + 0.5 * logdet_cq
              + ll
              - 0.5 * fac.logdet - 0.5 * logdet_s)
        return GaussianApprox(theta=theta, mode=zeta, factor=fac, design=a, v=v, s_inv=s_inv,
                              loglik=ll, log_posterior=float(lp), grad_norm=gnorm, n_iter=it,
                              objective_trace=trace, n_clamped=n_cl)

    def log_posterior_theta(self, theta, start=None, tol=None) -> float:
        return self.gaussian_approx(theta, start=start, tol=tol).log_posterior

    # -------------------------------------------------------------- hyperparameters

    def _lp_warm(self, theta, tol=None) -> float:
        ga = self.gaussian_approx(theta, tol=tol)
        self._warm = ga.mode
        return ga.log_posterior

    def _bounds(self):
        out = []
        for h in self.model.hypers:
            out.append((None, None) if h.kind == "scaling" else (-15.0, 25.0))
        return out

    def _fd_gradient(self, theta, h=1e-3) -> np.ndarray:
        g = np.empty(theta.size)
        for k in range(theta.size):
            e = np.zeros(theta.size)
            e[k] = h
            g[k] = (self._lp_warm(theta + e) - self._lp_warm(theta - e)) / (2 * h)
        return g

    def _hessian(self, theta, f0) -> np.ndarray:
        """Central finite-difference Hessian of the log posterior."""
        d = theta.size
        hs = self.hessian_step
        tight = min(self.tol, 1e-10)
        start = self._warm.copy()

        def f(t):
            return self.gaussian_approx(t, start=start, tol=tight).log_posterior

        f0 = f(theta)
        hess = np.empty((d, d))
        fp = np.empty(d)
        fm = np.empty(d)
        for i in range(d):
            e = np.zeros(d)
            e[i] = hs
            fp[i] = f(theta + e)
            fm[i] = f(theta - e)
            hess[i, i] = (fp[i] - 2 * f0 + fm[i]) / hs**2
        for i in range(d):
            for j in range(i + 1, d):
                ei = np.zeros(d)
                ej = np.zeros(d)
                ei[i] = hs
                ej[j] = hs
                v = (f(theta + ei + ej) - f(theta + ei - ej) - f(theta - ei + ej) + f(theta - ei - ej)) / (4 * hs**2)
                hess[i, j] = hess[j, i] = v
        return hess

    def find_mode(self):
        """Quasi-Newton ascent of the hyperparameter log posterior."""
        model = self.model
        theta0 = model.initial_theta()
        cache = {}

        def negf(t):
            key = tuple(np.round(t, 12))
            if key not in cache:
                cache[key] = -self._lp_warm(t)
            return cache[key]

        def negg(t):
            return -self._fd_gradient(t)

        full = self._bounds()

        def ascend(theta):
            # search a moving box of half-width TRUST around the current point so a
            # steep start cannot throw the first line search onto the far bounds
            for _ in range(10):
                box = []
                for t, (lo, hi) in zip(theta, full):
                    box.append((t - TRUST if lo is None else max(lo, t - TRUST),
                                t + TRUST if hi is None else min(hi, t + TRUST)))
                res = minimize(negf, theta, jac=negg, method="L-BFGS-B", bounds=box,
                               options=dict(maxiter=200, gtol=1e-4, ftol=1e-10))
                theta = np.asarray(res.x, dtype=float)
                on_edge = any((abs(t - b) < 1e-6 and b not in f)
                              for t, bx, f in zip(theta, box, full) for b in bx)
                if not on_edge:
                    break
            return theta

        # The posterior can have a second mode where a smooth effect is switched
        # off (precision so large the prior alone sets it).  Screen a few starts
        # along each precision axis and ascend from the two most promising.
        starts = [np.asarray(theta0, dtype=float)]
        for k, h in enumerate(model.hypers):
            if h.kind != "scaling":
                for sign in (1.0, -1.0):
                    s = starts[0].copy()
                    s[k] = np.clip(s[k] + sign * SCREEN_STEP, full[k][0], full[k][1])
                    starts.append(s)
        screened = sorted(starts, key=negf)[:2]
        ends = [ascend(s) for s in screened]
        theta = min(ends, key=negf)
        if not np.all(np.isfinite(theta)):
            raise ConvergenceError("hyperparameter mode search produced non-finite values")
        ga = self.gaussian_approx(theta)
        self._warm = ga.mode
        lp = ga.log_posterior
        # polish with Newton steps on the finite-difference Hessian
        hess = None
        for _ in range(5):
            hess = self._hessian(theta, lp)
            neg = -0.5 * (hess + hess.T)
            w, vecs = np.linalg.eigh(neg)
            if np.all(w > 0):
                grad = self._fd_gradient(theta, h=1e-3)
                step = vecs @ ((vecs.T @ grad) / w)
                if np.max(np.abs(step)) < 1e-3:
                    break
                for _ in range(10):
                    cand = theta + step
                    lo = [b[0] for b in self._bounds()]
                    ok = all(l is None or c > l for c, l in zip(cand, lo))
                    if ok:
                        ga_c = self.gaussian_approx(cand)
                        if ga_c.log_posterior > lp:
                            theta, lp = cand, ga_c.log_posterior
                            self._warm = ga_c.mode
                            break
                    step = step / 2
                else:
                    break
            else:
                break
        if hess is None or np.any(~np.isfinite(hess)):
            raise ConvergenceError("hyperparameter Hessian is not finite")
        grad = self._fd_gradient(theta, h=1e-3)
        if np.max(np.abs(grad)) > 0.5:
            raise ConvergenceError("hyperparameter mode search did not converge", float(np.max(np.abs(grad))))
        return theta, lp, hess

    @staticmethod
    def _standardize(hess):
        neg = -0.5 * (hess + hess.T)
        w, vecs = np.linalg.eigh(neg)
        floor = 1e-6 * max(1.0, float(np.max(np.abs(w))))
        if np.any(w <= floor):
            log.warning("hyperparameter Hessian not negative definite at the mode; clipping eigenvalues")
            w = np.maximum(np.abs(w), floor)
        # theta = mode + vecs diag(1/sqrt(w)) z
        return vecs / np.sqrt(w), vecs @ np.diag(1.0 / w) @ vecs.T

    def explore_theta(self) -> list[HyperPoint]:
        model = self.model
        d = model.n_theta
        if d == 0:
            ga = self.gaussian_approx(np.zeros(0))
            pt = HyperPoint(np.zeros(0), ga.log_posterior, 1.0, np.zeros(0))
            pt.summary = self._summarize(ga)
            self.theta_cov = np.zeros((0, 0))
            return [pt]
        mode, lp_mode, hess = self.find_mode()
        scale, cov = self._standardize(hess)
        self.theta_mode = mode
        self.theta_cov = cov
        start = self._warm.copy()

        def evaluate(z, floor=-np.inf):
            # summarise straight away so the factor can be released; points
            # below ``floor`` are about to be discarded and skip the summary
            z = np.asarray(z, dtype=float)
            theta = mode + scale @ z
            ga = self.gaussian_approx(theta, start=start)
            hp = HyperPoint(theta, ga.log_posterior, 0.0, z)
            if hp.log_posterior >= floor:
                hp.summary = self._summarize(ga)
            return hp

        points: list[HyperPoint] = []
        step = self.grid_step
        drop = self.grid_drop
        if d <= 2:
            center = evaluate(np.zeros(d))
            floor = center.log_posterior - drop
            points.append(center)

            def walk(base, axis):
                found = []
                for sign in (1.0, -1.0):
                    for k in range(1, 41):
                        z = np.array(base, dtype=float)
                        z[axis] += sign * k * step
                        hp = evaluate(z, floor)
                        if hp.log_posterior < floor:
                            break
                        found.append(hp)
                return found

            axis0 = walk(np.zeros(d), 0)
            points.extend(axis0)
            if d == 2:
                bases = [np.zeros(2)] + [hp.z for hp in axis0]
                for found in parallel_map(lambda b: walk(b, 1), bases, self.threads):
                    points.extend(found)
        else:
            zs = [np.zeros(d)]
            for k in range(d):
                for sign in (1.0, -1.0):
                    z = np.zeros(d)
                    z[k] = sign
                    zs.append(z)
            points.extend(parallel_map(evaluate, zs, self.threads))
        lps = np.array([hp.log_posterior for hp in points])
        w = np.exp(lps - lps.max())
        w /= w.sum()
        for hp, wk in zip(points, w):
            hp.weight = float(wk)
        return points

    def _summarize(self, ga: GaussianApprox) -> PointSummary:
        obs_lt = self._obs_log_tau(ga.theta)
        eta_mean = ga.design @ ga.mode + self.model.offset
        eta_var = ga.predictor_variances()
        var = ga.marginal_variances()
        idx = self._small_idx
        cov = ga.covariance_block(idx) if idx.size else np.zeros((0, 0))
        return PointSummary(ga.mode.copy(), var, eta_mean, eta_var, obs_lt, idx, cov)

    # -------------------------------------------------------------- results

    def latent_marginals(self, points: list[HyperPoint]):
        from .results import build_fit_result
        return build_fit_result(self, points)

    def fit(self):
        points = self.explore_theta()
        return self.latent_marginals(points)


def fit_model(model: AssembledModel, **kwargs):
    """Convenience wrapper: explore theta and return a :class:`FitResult`."""
    return InlaEngine(model, **kwargs).fit()
