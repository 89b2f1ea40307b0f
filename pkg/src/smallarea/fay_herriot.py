"""Area-level smoothing of logit-scale direct estimates.

Two linking models over a working likelihood theta_hat_i ~ N(theta_i, V_i):

* iid: theta_i = mu_i + u_i with u_i ~ N(0, sigma_u^2), fitted by empirical
  Bayes (marginal ML for sigma_u^2, GLS for the mean structure), posterior
  draws from the plug-in conditionals.
* bym2: theta_i = mu_i + sigma_u * (sqrt(1-phi) e_i + sqrt(phi) S_i) with
  iid e and a variance-scaled intrinsic spatial field S, fitted by MCMC.

The mean structure mu_i is a single intercept (pooled) or one intercept per
admin1 area (nested); optional covariates append to either. Areas with no
usable direct estimate are "missing": they borrow strength through the
linking model and come back with genuinely wider posteriors.

The MCMC is a collapsed two-block sampler. Random-walk Metropolis moves
(log sigma_u, logit phi) against the marginal likelihood with every Gaussian
latent integrated out; given the hyperparameters, the full latent vector
(intercepts, e, S) is drawn exactly from its joint Gaussian conditional with
per-component sum-to-zero constraints enforced by conditioning. Latent draws
are therefore conditionally independent across iterations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, eigh, solve_triangular
from scipy.optimize import minimize_scalar
from scipy.special import expit

from .direct import DomainEstimate, Legality
from .interval import logit_transform

_EIG_TOL = 1e-9  # relative cutoff for the intrinsic null space


class FitError(RuntimeError):
    """Model fitting failed (non-convergence or structural problem)."""


@dataclass
class FHInput:
    """Logit-scale inputs to the smoothers, one row per area."""

    area_ids: tuple[str, ...]
    admin1_ids: tuple[str | None, ...]
    theta: np.ndarray  # nan where missing
    var_theta: np.ndarray  # nan where missing
    missing: np.ndarray  # bool
    covariates: np.ndarray | None = None  # (I, k)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.var_theta = np.asarray(self.var_theta, dtype=np.float64)
        self.missing = np.asarray(self.missing, dtype=bool)
        n = len(self.area_ids)
        if not (
            len(self.admin1_ids) == n
            and self.theta.shape == (n,)
            and self.var_theta.shape == (n,)
            and self.missing.shape == (n,)
        ):
            raise ValueError("FHInput arrays must share one length")
        obs = ~self.missing
        if not np.all(np.isfinite(self.theta[obs])):
            raise ValueError("non-missing areas need finite theta")
        if not np.all(np.isfinite(self.var_theta[obs]) & (self.var_theta[obs] > 0)):
            raise ValueError(
                "non-missing areas need var_theta > 0; repair or declare "
                "zero-variance areas missing before smoothing"
            )
        if obs.sum() < 2:
            raise ValueError("need at least two observed areas to smooth")

    @classmethod
    def from_estimates(
        cls,
        estimates: dict[str, DomainEstimate],
        extra_areas: dict[str, str | None] | None = None,
    ) -> "FHInput":
        """Assemble smoother input from direct estimates.

        An area is usable when it is legal with positive variance and an
        interior estimate; anything else becomes a missing area. extra_areas
        maps area id -> admin1 id (or None) for areas absent from the
        estimates table entirely.
        """
        areas: dict[str, str | None] = {}
        for area_id, est in estimates.items():
            areas[area_id] = est.admin1_id
        for area_id, admin1_id in (extra_areas or {}).items():
            areas.setdefault(area_id, admin1_id)
        area_ids = tuple(sorted(areas))
        theta = np.full(len(area_ids), np.nan)
        var_theta = np.full(len(area_ids), np.nan)
        missing = np.ones(len(area_ids), dtype=bool)
        for i, area_id in enumerate(area_ids):
            est = estimates.get(area_id)
            if est is None or est.legality is not Legality.LEGAL:
                continue
            if est.variance is None or est.variance <= 0 or est.p_hat is None:
                continue
            if not 0.0 < est.p_hat < 1.0:
                continue
            t = logit_transform(est.p_hat, est.variance)
            theta[i] = t.theta
            var_theta[i] = t.var_theta
            missing[i] = False
        return cls(
            area_ids=area_ids,
            admin1_ids=tuple(areas[a] for a in area_ids),
            theta=theta,
            var_theta=var_theta,
            missing=missing,
        )


@dataclass(frozen=True)
class SpatialStructure:
    """Variance-scaled intrinsic autoregression over an adjacency graph."""

    area_ids: tuple[str, ...]
    adjacency: np.ndarray  # symmetric 0/1, zero diagonal
    structure: np.ndarray  # scaled precision Q*
    covariance: np.ndarray  # constrained generalized inverse of Q*
    marginal_variances: np.ndarray  # diag of covariance
    component_labels: np.ndarray  # int label per area
    singletons: tuple[str, ...]

    @property
    def n_components(self) -> int:
        return int(self.component_labels.max()) + 1 if self.component_labels.size else 0


def build_scaled_icar(
    area_ids: tuple[str, ...], edges: list[tuple[str, str]]
) -> SpatialStructure:
    """Build the intrinsic spatial structure and scale it per component so the
    geometric mean of the constrained marginal variances is one.

    Connected components are handled independently, each with its own
    sum-to-zero constraint; singleton areas are pinned to zero and excluded
    from the scaling.
    """
    index = {a: i for i, a in enumerate(area_ids)}
    if len(index) != len(area_ids):
        raise ValueError("duplicate area ids in roster")
    if not edges:
        raise ValueError("adjacency has no edges; fit the iid model instead")
    n = len(area_ids)
    W = np.zeros((n, n))
    for a, b in edges:
        if a not in index or b not in index:
            missing = a if a not in index else b
            raise ValueError(f"edge references unknown area {missing!r}")
        if a == b:
            raise ValueError(f"self-adjacency for area {a!r}")
        W[index[a], index[b]] = 1.0
        W[index[b], index[a]] = 1.0
    Q = np.diag(W.sum(axis=1)) - W

    # connected components by breadth-first search
    labels = np.full(n, -1, dtype=np.int64)
    current = 0
    for start in range(n):
        if labels[start] >= 0:
            continue
        stack = [start]
        labels[start] = current
        while stack:
            node = stack.pop()
            for nb in np.flatnonzero(W[node] > 0):
                if labels[nb] < 0:
                    labels[nb] = current
                    stack.append(nb)
        current += 1

    Q_scaled = np.zeros_like(Q)
    covariance = np.zeros_like(Q)
    singletons = []
    for comp in range(current):
        members = np.flatnonzero(labels == comp)
        if members.size == 1:
            singletons.append(area_ids[members[0]])
            continue
        sub = np.ix_(members, members)
        vals, vecs = eigh(Q[sub])
        cutoff = _EIG_TOL * vals[-1]
        keep = vals > cutoff
        # intrinsic structure on a connected component drops exactly one
        # dimension (the constant vector)
        if (~keep).sum() != 1:
            raise ValueError(
                f"component including {area_ids[members[0]]!r} has a "
                f"degenerate structure (null dimension {(~keep).sum()})"
            )
        pinv = (vecs[:, keep] / vals[keep]) @ vecs[:, keep].T
        log_marginals = np.log(np.diag(pinv))
        scale = math.exp(float(log_marginals.mean()))
        Q_scaled[sub] = Q[sub] * scale
        covariance[sub] = pinv / scale
    return SpatialStructure(
        area_ids=tuple(area_ids),
        adjacency=W,
        structure=Q_scaled,
        covariance=covariance,
        marginal_variances=np.diag(covariance).copy(),
        component_labels=labels,
        singletons=tuple(singletons),
    )


@dataclass
class FHFit:
    """Posterior draws and diagnostics from either smoother."""

    model: str
    nested: bool
    area_ids: tuple[str, ...]
    admin1_ids: tuple[str | None, ...]
    missing: np.ndarray
    theta_draws: np.ndarray  # (ndraws, I)
    sigma_u_draws: np.ndarray | None = None
    phi_draws: np.ndarray | None = None
    spatial_draws: np.ndarray | None = None  # (ndraws, I) unit-scale field
    intercept_draws: np.ndarray | None = None  # (ndraws, H)
    sigma2_u: float | None = None  # EB point estimate
    shrinkage: np.ndarray | None = None  # EB per-area gamma
    posterior_mean: np.ndarray | None = None  # analytic, logit scale (EB)
    posterior_var: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def n_draws(self) -> int:
        return self.theta_draws.shape[0]

    def prevalence_draws(self) -> np.ndarray:
        return expit(self.theta_draws)

    def hyperparameter_summary(self) -> list[dict]:
        """Table S-style summary rows for the variance parameters."""
        rows: list[dict] = []

        def add(name: str, draws: np.ndarray | None, point: float | None = None):
            if draws is not None:
                qs = np.quantile(draws, [0.025, 0.5, 0.975])
                rows.append(
                    dict(
                        parameter=name,
                        mean=float(draws.mean()),
                        sd=float(draws.std(ddof=1)),
                        q2_5=float(qs[0]),
                        median=float(qs[1]),
                        q97_5=float(qs[2]),
                    )
                )
            elif point is not None:
                rows.append(
                    dict(
                        parameter=name,
                        mean=float(point),
                        sd=0.0,
                        q2_5=float(point),
                        median=float(point),
                        q97_5=float(point),
                    )
                )

        if self.sigma_u_draws is not None:
            add("total_sd", self.sigma_u_draws)
            add("precision", 1.0 / self.sigma_u_draws**2)
        elif self.sigma2_u is not None:
            add("total_sd", None, math.sqrt(self.sigma2_u))
            add(
                "precision",
                None,
                (1.0 / self.sigma2_u) if self.sigma2_u > 0 else float("inf"),
            )
        add("phi", self.phi_draws)
        return rows


def _design_matrix(
    input: FHInput, nested: bool
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Mean-structure design matrix over all areas plus column names."""
    n = len(input.area_ids)
    if nested:
        admin1 = []
        for area_id, a in zip(input.area_ids, input.admin1_ids):
            if a is None:
                raise FitError(
                    f"nested mean structure needs an admin1 id for every "
                    f"area; missing for {area_id!r}"
                )
            admin1.append(a)
        groups = tuple(sorted(set(admin1)))
        X = np.zeros((n, len(groups)))
        for i, a in enumerate(admin1):
            X[i, groups.index(a)] = 1.0
        names = tuple(f"intercept[{g}]" for g in groups)
    else:
        X = np.ones((n, 1))
        names = ("intercept",)
    if input.covariates is not None:
        cov = np.asarray(input.covariates, dtype=np.float64)
        if cov.shape[0] != n:
            raise ValueError("covariate rows must match area count")
        X = np.hstack([X, cov])
        names = names + tuple(f"beta[{j}]" for j in range(cov.shape[1]))
    return X, names


def fit_iid_eb(
    input: FHInput,
    nested: bool = False,
    ndraws: int = 4000,
    seed: int = 0,
    fixed_sigma2: float | None = None,
    fixed_alpha: np.ndarray | float | None = None,
) -> FHFit:
    """Empirical-Bayes fit of the iid linking model.

    The linking variance is estimated by profile marginal maximum likelihood
    via a bracketed search on its log; the mean structure is profiled out by
    GLS. Posterior draws use plug-in conjugate conditionals; missing areas
    draw from the linking model and so come back wider than any observed
    area.
    """
    X, _ = _design_matrix(input, nested)
    obs = ~input.missing
    if obs.sum() < 3:
        raise FitError("empirical-Bayes fit needs at least 3 observed areas")
    theta_o = input.theta[obs]
    V_o = input.var_theta[obs]
    X_o = X[obs]

    if fixed_alpha is not None:
        mu_all = np.broadcast_to(
            np.asarray(fixed_alpha, dtype=np.float64), (len(input.area_ids),)
        ).copy()
    else:
        mu_all = None

    def profile_negloglik(log_s2: float) -> float:
        s2 = math.exp(log_s2)
        total = s2 + V_o
        if mu_all is None:
            w = 1.0 / total
            xtwx = (X_o * w[:, None]).T @ X_o
            xtwy = (X_o * w[:, None]).T @ theta_o
            try:
                beta = np.linalg.solve(xtwx, xtwy)
            except np.linalg.LinAlgError as exc:
                raise FitError(
                    "singular mean structure; every admin1 group needs an "
                    "observed area"
                ) from exc
            resid = theta_o - X_o @ beta
        else:
            resid = theta_o - mu_all[obs]
        return 0.5 * float(np.log(total).sum() + (resid**2 / total).sum())

    if fixed_sigma2 is not None:
        sigma2 = float(fixed_sigma2)
    else:
        lo = math.log(1e-10)
        hi = math.log(max(float(np.var(theta_o)) * 10.0, 1e-6))
        res = minimize_scalar(
            profile_negloglik,
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-11},
        )
        if not res.success:
            raise FitError(f"variance optimization did not converge: {res}")
        sigma2 = math.exp(float(res.x))
        # snap to the boundary when the optimizer pushed against it
        if res.x <= lo + 1e-6:
            sigma2 = 0.0

    total = sigma2 + V_o
    w = 1.0 / total
    if mu_all is None:
        xtwx = (X_o * w[:, None]).T @ X_o
        xtwy = (X_o * w[:, None]).T @ theta_o
        try:
            beta = np.linalg.solve(xtwx, xtwy)
        except np.linalg.LinAlgError as exc:
            raise FitError(
                "singular mean structure; every admin1 group needs an "
                "observed area"
            ) from exc
        mu_all = X @ beta
    else:
        beta = None

    I = len(input.area_ids)
    gamma = np.zeros(I)
    post_mean = mu_all.copy()
    post_var = np.full(I, sigma2)
    g_obs = sigma2 / (sigma2 + V_o)
    gamma[obs] = g_obs
    post_mean[obs] = g_obs * theta_o + (1.0 - g_obs) * mu_all[obs]
    post_var[obs] = g_obs * V_o

    rng = np.random.default_rng([seed, 0x51D])
    draws = rng.normal(
        loc=post_mean[None, :], scale=np.sqrt(post_var)[None, :], size=(ndraws, I)
    )
    return FHFit(
        model="iid_eb",
        nested=nested,
        area_ids=input.area_ids,
        admin1_ids=input.admin1_ids,
        missing=input.missing.copy(),
        theta_draws=draws,
        sigma2_u=sigma2,
        shrinkage=gamma,
        posterior_mean=post_mean,
        posterior_var=post_var,
        diagnostics={"beta": None if beta is None else beta.tolist()},
    )


def _split_rhat(x: np.ndarray) -> float:
    """Split-chain potential scale reduction for one scalar (chains, n)."""
    chains, n = x.shape
    half = n // 2
    if half < 2:
        return float("nan")
    seqs = np.concatenate([x[:, :half], x[:, half : 2 * half]], axis=0)
    means = seqs.mean(axis=1)
    variances = seqs.var(axis=1, ddof=1)
    within = variances.mean()
    between = half * means.var(ddof=1)
    var_plus = (half - 1) / half * within + between / half
    if within <= 0:
        return 1.0
    return float(math.sqrt(var_plus / within))


def _ess(x: np.ndarray) -> float:
    """Bulk effective sample size via per-chain autocorrelation (Geyer pairs)."""
    chains, n = x.shape
    if n < 4:
        return float(chains * n)
    acov = np.zeros(n)
    for c in range(chains):
        centered = x[c] - x[c].mean()
        full = np.correlate(centered, centered, mode="full")[n - 1 :]
        acov += full / n
    acov /= chains
    within = acov[0] * n / (n - 1)
    var_plus = _split_rhat_var_plus(x)
    rho = 1.0 - (within - acov) / var_plus
    # sum consecutive pairs while they stay positive
    total = 0.0
    t = 1
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        total += pair
        t += 2
    ess = chains * n / (1.0 + 2.0 * total)
    return float(min(ess, chains * n))


def _split_rhat_var_plus(x: np.ndarray) -> float:
    chains, n = x.shape
    half = n // 2
    seqs = np.concatenate([x[:, :half], x[:, half : 2 * half]], axis=0)
    means = seqs.mean(axis=1)
    variances = seqs.var(axis=1, ddof=1)
    within = variances.mean()
    between = half * means.var(ddof=1)
    return float((half - 1) / half * within + between / half)


def fit_bym2_mcmc(
    input: FHInput,
    spatial: SpatialStructure,
    nested: bool = False,
    chains: int = 4,
    iterations: int = 2500,
    burn_in: int = 500,
    seed: int = 0,
    fix_phi: float | None = None,
    sigma_prior_scale: float = 1.0,
    intercept_precision: float = 0.001,
) -> FHFit:
    """MCMC fit of the bym2 linking model (see module docstring).

    Defaults: half-normal(scale 1) prior on the total standard deviation,
    uniform prior on the spatial fraction phi, four chains of 2500 iterations
    with 500 discarded. A split-Rhat above 1.05 on any monitored quantity is
    reported as a warning on the fit, never silently.
    """
    if spatial.area_ids != input.area_ids:
        raise ValueError("spatial structure and input cover different areas")
    if burn_in >= iterations:
        raise ValueError("burn_in must be smaller than iterations")
    if nested and len(set(a for a in input.admin1_ids if a is not None)) < 2:
        raise FitError("nested fit needs at least 2 admin1 groups")
    X, _ = _design_matrix(input, nested)
    I = len(input.area_ids)
    H = X.shape[1]
    obs = np.flatnonzero(~input.missing)
    theta_o = input.theta[obs]
    V_o = input.var_theta[obs]
    X_o = X[obs]
    Sigma_S = spatial.covariance
    Sigma_S_oo = Sigma_S[np.ix_(obs, obs)]
    n_obs = obs.size

    labels = spatial.component_labels
    n_comp = int(labels.max()) + 1

    # latent order: [intercepts/covariates (H), e (I), S (I)]
    p = H + 2 * I
    prior = np.zeros((p, p))
    prior[:H, :H] = intercept_precision * np.eye(H)
    prior[H : H + I, H : H + I] = np.eye(I)
    S_slice = slice(H + I, H + 2 * I)
    prior[S_slice, S_slice] = spatial.structure
    # rank filler: vanishes on the constraint subspace, makes the prior proper
    filler = np.zeros((I, I))
    for comp in range(n_comp):
        members = np.flatnonzero(labels == comp)
        filler[np.ix_(members, members)] += 1.0 / members.size
    prior[S_slice, S_slice] += filler

    # sum-to-zero constraint rows over the S block (one per component;
    # singleton components pin S_i = 0)
    A = np.zeros((n_comp, p))
    for comp in range(n_comp):
        members = np.flatnonzero(labels == comp)
        A[comp, H + I + members] = 1.0

    # constant pieces of the likelihood contribution
    D = 1.0 / V_o
    K = X_o.T * D[None, :]  # (H, n_obs)
    xtdx = K @ X_o
    xtdy = K @ theta_o
    Dtheta = D * theta_o

    alpha_cov = (1.0 / intercept_precision) * (X_o @ X_o.T)

    def marginal_negloglik(sigma: float, phi: float) -> float:
        M = alpha_cov + (sigma * sigma * (1.0 - phi)) * np.eye(n_obs)
        if phi > 0:
            M = M + (sigma * sigma * phi) * Sigma_S_oo
        M[np.diag_indices_from(M)] += V_o
        try:
            L = cholesky(M, lower=True)
        except np.linalg.LinAlgError as exc:
            raise FitError(f"marginal covariance not positive definite: {exc}")
        half_logdet = float(np.log(np.diag(L)).sum())
        resid = solve_triangular(L, theta_o, lower=True)
        return half_logdet + 0.5 * float(resid @ resid)

    def log_target(log_sigma: float, logit_phi: float | None, phi_value: float) -> float:
        sigma = math.exp(log_sigma)
        ll = -marginal_negloglik(sigma, phi_value)
        # half-normal prior on sigma plus log-scale Jacobian
        lp = -0.5 * (sigma / sigma_prior_scale) ** 2 + log_sigma
        if logit_phi is not None:
            # uniform(0,1) prior through the logit transform
            lp += math.log(phi_value) + math.log1p(-phi_value)
        return ll + lp

    n_keep = iterations - burn_in
    all_theta = np.empty((chains, n_keep, I))
    all_S = np.empty((chains, n_keep, I))
    all_alpha = np.empty((chains, n_keep, H))
    all_sigma = np.empty((chains, n_keep))
    all_phi = np.empty((chains, n_keep))
    kept_accepts = np.zeros(2)

    for chain in range(chains):
        rng = np.random.default_rng([seed, 0xB1, chain])
        accept_counts = np.zeros(2)
        log_sigma = math.log(0.5) + 0.1 * rng.standard_normal()
        if fix_phi is None:
            phi = 0.5
            logit_phi = 0.0
        else:
            phi = float(fix_phi)
            logit_phi = None
        current = log_target(log_sigma, logit_phi, phi)
        step_sigma, step_phi = 0.5, 0.8

        for it in range(iterations):
            # sigma move
            prop = log_sigma + step_sigma * rng.standard_normal()
            cand = log_target(prop, logit_phi, phi)
            if math.log(rng.random()) < cand - current:
                log_sigma, current = prop, cand
                accept_counts[0] += 1
                if it >= burn_in:
                    kept_accepts[0] += 1
            # phi move
            if logit_phi is not None:
                prop = logit_phi + step_phi * rng.standard_normal()
                phi_prop = float(expit(prop))
                if 0.0 < phi_prop < 1.0:
                    cand = log_target(log_sigma, prop, phi_prop)
                    if math.log(rng.random()) < cand - current:
                        logit_phi, phi, current = prop, phi_prop, cand
                        accept_counts[1] += 1
                        if it >= burn_in:
                            kept_accepts[1] += 1
            if it < burn_in:
                # crude Robbins-Monro scale adaptation, frozen afterwards
                if (it + 1) % 25 == 0:
                    rate = accept_counts / 25.0
                    step_sigma *= math.exp(0.5 * (min(rate[0], 1.0) - 0.38))
                    step_sigma = min(max(step_sigma, 1e-3), 10.0)
                    if logit_phi is not None:
                        step_phi *= math.exp(0.5 * (min(rate[1], 1.0) - 0.38))
                        step_phi = min(max(step_phi, 1e-3), 10.0)
                    accept_counts[:] = 0.0
                continue

            sigma = math.exp(log_sigma)
            a_e = sigma * math.sqrt(1.0 - phi)
            a_s = sigma * math.sqrt(phi)
            P = prior.copy()
            b = np.zeros(p)
            # likelihood contributions; e and S enter only at observed areas
            P[:H, :H] += xtdx
            cols_e = H + obs
            cols_s = H + I + obs
            P[:H, cols_e] += a_e * K
            P[cols_e, :H] += a_e * K.T
            P[:H, cols_s] += a_s * K
            P[cols_s, :H] += a_s * K.T
            P[cols_e, cols_e] += a_e * a_e * D
            P[cols_s, cols_s] += a_s * a_s * D
            P[cols_e, cols_s] += a_e * a_s * D
            P[cols_s, cols_e] += a_e * a_s * D
            b[:H] = xtdy
            b[cols_e] = a_e * Dtheta
            b[cols_s] = a_s * Dtheta

            chol = cho_factor(P, lower=True)
            mean = cho_solve(chol, b)
            noise = solve_triangular(
                chol[0], rng.standard_normal(p), lower=True, trans="T"
            )
            x = mean + noise
            # conditioning on the sum-to-zero rows
            W_corr = cho_solve(chol, A.T)
            G = A @ W_corr
            x = x - W_corr @ np.linalg.solve(G, A @ x)

            alpha = x[:H]
            e_field = x[H : H + I]
            s_field = x[S_slice]
            theta_draw = X @ alpha + a_e * e_field + a_s * s_field
            k = it - burn_in
            all_theta[chain, k] = theta_draw
            all_S[chain, k] = s_field
            all_alpha[chain, k] = alpha
            all_sigma[chain, k] = sigma
            all_phi[chain, k] = phi

    theta_flat = all_theta.reshape(chains * n_keep, I)
    s_flat = all_S.reshape(chains * n_keep, I)
    alpha_flat = all_alpha.reshape(chains * n_keep, H)
    sigma_flat = all_sigma.reshape(-1)
    phi_flat = all_phi.reshape(-1)

    rhat_theta = np.array([_split_rhat(all_theta[:, :, i]) for i in range(I)])
    rhat_sigma = _split_rhat(all_sigma)
    rhat_phi = _split_rhat(all_phi) if fix_phi is None else 1.0
    ess_sigma = _ess(all_sigma)
    max_abs_sum_s = 0.0
    for comp in range(n_comp):
        members = np.flatnonzero(labels == comp)
        sums = np.abs(s_flat[:, members].sum(axis=1))
        max_abs_sum_s = max(max_abs_sum_s, float(sums.max()))

    warnings: list[str] = []
    with np.errstate(invalid="ignore"):
        worst = np.nanmax(np.concatenate([rhat_theta, [rhat_sigma, rhat_phi]]))
    if np.isfinite(worst) and worst > 1.05:
        warnings.append(
            f"split-Rhat {worst:.3f} exceeds 1.05; chains may not have mixed"
        )

    return FHFit(
        model="bym2",
        nested=nested,
        area_ids=input.area_ids,
        admin1_ids=input.admin1_ids,
        missing=input.missing.copy(),
        theta_draws=theta_flat,
        sigma_u_draws=sigma_flat,
        phi_draws=phi_flat if fix_phi is None else np.full_like(sigma_flat, fix_phi),
        spatial_draws=s_flat,
        intercept_draws=alpha_flat,
        diagnostics={
            "rhat_theta_max": float(np.nanmax(rhat_theta)),
            "rhat_sigma": rhat_sigma,
            "rhat_phi": rhat_phi,
            "ess_sigma": ess_sigma,
            "max_abs_component_sum_S": max_abs_sum_s,
            "accept_rate_sigma": float(kept_accepts[0] / (chains * n_keep)),
            "accept_rate_phi": float(kept_accepts[1] / (chains * n_keep)),
            "chains": chains,
            "kept_per_chain": n_keep,
        },
        warnings=warnings,
    )


@dataclass(frozen=True)
class AreaPosterior:
    area_id: str
    admin1_id: str | None
    missing: bool
    median: float
    q2_5: float
    q10: float
    q90: float
    q97_5: float


def posterior_prevalence(fit: FHFit) -> list[AreaPosterior]:
    """Per-area prevalence-scale posterior summaries."""
    if fit.n_draws < 1000:
        raise ValueError(
            f"posterior summaries need at least 1000 draws, have {fit.n_draws}"
        )
    prev = fit.prevalence_draws()
    qs = np.quantile(prev, [0.025, 0.10, 0.5, 0.90, 0.975], axis=0)
    out = []
    for i, area_id in enumerate(fit.area_ids):
        out.append(
            AreaPosterior(
                area_id=area_id,
                admin1_id=fit.admin1_ids[i],
                missing=bool(fit.missing[i]),
                median=float(qs[2, i]),
                q2_5=float(qs[0, i]),
                q10=float(qs[1, i]),
                q90=float(qs[3, i]),
                q97_5=float(qs[4, i]),
            )
        )
    return out


def band_sizes(n_areas: int, fractions: tuple[float, ...]) -> tuple[int, ...]:
    """Apportion areas to ranking bands by largest remainder."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"band fractions must sum to 1, got {fractions}")
    raw = [f * n_areas for f in fractions]
    sizes = [int(math.floor(r)) for r in raw]
    shortfall = n_areas - sum(sizes)
    remainders = sorted(
        range(len(fractions)), key=lambda j: (-(raw[j] - sizes[j]), j)
    )
    for j in remainders[:shortfall]:
        sizes[j] += 1
    return tuple(sizes)


@dataclass(frozen=True)
class RankTable:
    area_ids: tuple[str, ...]
    fractions: tuple[float, ...]
    sizes: tuple[int, ...]
    probabilities: np.ndarray  # (I, n_bands)
    median_prevalence: np.ndarray


def ranking_probabilities(
    fit: FHFit, fractions: tuple[float, ...] = (0.2, 0.6, 0.2)
) -> RankTable:
    """Posterior probability of landing in each prevalence band.

    Areas are ranked within each draw (rank 1 = highest prevalence, ties
    broken by area id) and assigned to ordered bands whose sizes apportion
    the area count by the given fractions.
    """
    return rank_from_draws(fit.area_ids, fit.prevalence_draws(), fractions)


def rank_from_draws(
    area_ids: tuple[str, ...],
    prev: np.ndarray,
    fractions: tuple[float, ...] = (0.2, 0.6, 0.2),
) -> RankTable:
    """ranking_probabilities on a bare (draws, areas) prevalence matrix."""
    prev = np.asarray(prev, dtype=np.float64)
    if prev.ndim != 2 or prev.shape[1] != len(area_ids):
        raise ValueError("draw matrix must be (ndraws, n_areas)")
    ndraws, I = prev.shape
    sizes = band_sizes(I, fractions)
    edges = np.cumsum(sizes)
    # alphabetical rank of each area id, for deterministic tie-breaking
    alpha_rank = np.empty(I, dtype=np.int64)
    alpha_rank[np.argsort(np.array(area_ids, dtype=object))] = np.arange(I)
    band_of_position = np.empty(I, dtype=np.int64)
    start = 0
    for band, edge in enumerate(edges):
        band_of_position[start:edge] = band
        start = edge
    counts = np.zeros((I, len(sizes)), dtype=np.int64)
    for d in range(ndraws):
        order = np.lexsort((alpha_rank, -prev[d]))
        counts[order, band_of_position] += 1
    return RankTable(
        area_ids=tuple(area_ids),
        fractions=tuple(fractions),
        sizes=sizes,
        probabilities=counts / ndraws,
        median_prevalence=np.median(prev, axis=0),
    )
