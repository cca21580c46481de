//! Gibbs sampler for the hierarchical model, plus the truncated-Moran
//! baseline it is compared against.
//!
//! Every full conditional is conjugate, so one iteration is a systematic
//! scan drawing mu, beta, delta, sigma2, sigma2_eta, phi in that fixed
//! order. Both models share the same scan; they differ only in the basis
//! matrix (Lambda versus the leading Moran eigenvectors) and the spectral
//! prior attached to its coefficients, so the comparison isolates the basis
//! choice.
//!
//! Determinism contract: a chain is a pure function of (spec, config). Chain
//! c uses the counter-based RNG seeded with `config.seed` on stream c, so
//! chains are mutually independent and individually reproducible.

use nalgebra::{DMatrix, DVector};
use rand::{Rng as RngCore, SeedableRng};
use thiserror::Error;

use crate::basis::{truncated_moran_basis, BasisError, JitterPolicy, SpectralPrior};
use crate::linalg::{self, LinalgError};
use crate::model::{ChainState, ModelError, ModelSpec, PriorSpec};
use crate::scalar::{cvt, Scalar};
use crate::stats::{self, Summary};

#[derive(Debug, Error)]
pub enum SamplerError<T: Scalar> {
    #[error("invalid sampler configuration: {message}")]
    Config { message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("initialization failed: {message}")]
    InitFailure { message: String },
    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical {
        iteration: usize,
        message: String,
        /// State before the failing scan, for post-mortem inspection.
        last_state: Box<ChainState<T>>,
    },
}

/// How the chain's starting state is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// beta from least squares of y on X, delta = 0, mu = y, variances at
    /// prior means (or 1 when the prior mean is undefined), phi = 1.
    LeastSquares,
    /// A joint draw from the prior.
    PriorDraw,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    pub init: InitStrategy,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            iterations: 5000,
            burnin: 1000,
            thin: 1,
            seed: 0,
            chains: 1,
            init: InitStrategy::LeastSquares,
        }
    }
}

impl SamplerConfig {
    /// Retained draws per chain.
    pub fn retained(&self) -> usize {
        if self.thin == 0 || self.burnin >= self.iterations {
            return 0;
        }
        (self.iterations - self.burnin) / self.thin
    }

    pub fn validate<T: Scalar>(&self) -> Result<(), SamplerError<T>> {
        let fail = |message: String| Err(SamplerError::Config { message });
        if self.iterations == 0 {
            return fail("iterations must be positive".into());
        }
        if self.burnin >= self.iterations {
            return fail(format!(
                "burnin {} must be smaller than iterations {}",
                self.burnin, self.iterations
            ));
        }
        if self.thin == 0 {
            return fail("thin must be at least 1".into());
        }
        if self.chains == 0 {
            return fail("chains must be at least 1".into());
        }
        if self.retained() < 10 {
            return fail(format!(
                "(iterations - burnin) / thin = {} retained draws; need at least 10",
                self.retained()
            ));
        }
        Ok(())
    }
}

/// Summary of one scalar parameter across pooled retained draws.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary<T> {
    pub name: String,
    pub summary: Summary<T>,
}

/// Retained draws plus pooled summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples<T> {
    /// Retained post-burnin, post-thinning states, one inner vector per chain.
    pub chains: Vec<Vec<ChainState<T>>>,
    pub p: usize,
    /// Basis coefficient count (r for the hybrid model, q for the baseline).
    pub k: usize,
    /// All moves are Gibbs draws, accepted by construction.
    pub acceptance_rate: f64,
    /// Pooled per-parameter summaries in [beta..., delta..., sigma2,
    /// sigma2_eta, phi] order.
    pub summaries: Vec<ParameterSummary<T>>,
    /// Pooled posterior mean of the latent mu, accumulated so that identical
    /// draws average to themselves exactly.
    pub mean_mu: DVector<T>,
    /// Basic potential-scale-reduction per parameter when chains >= 2.
    pub rhat: Option<Vec<f64>>,
}

impl<T: Scalar> PosteriorSamples<T> {
    /// Column order used by summaries and CSV export.
    pub fn parameter_names(p: usize, k: usize) -> Vec<String> {
        let mut names = Vec::with_capacity(p + k + 3);
        for j in 0..p {
            names.push(format!("β[{j}]"));
        }
        for j in 0..k {
            names.push(format!("δ[{j}]"));
        }
        names.push("σ²".into());
        names.push("σ²_η".into());
        names.push("φ".into());
        names
    }

    /// Scalar parameters of one state in the summary column order.
    pub fn flatten_state(state: &ChainState<T>) -> Vec<T> {
        let mut row = Vec::with_capacity(state.beta.len() + state.delta.len() + 3);
        row.extend(state.beta.iter().copied());
        row.extend(state.delta.iter().copied());
        row.push(state.sigma2);
        row.push(state.sigma2_eta);
        row.push(state.phi);
        row
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    /// All retained states, chain-major.
    pub fn pooled_states(&self) -> impl Iterator<Item = &ChainState<T>> {
        self.chains.iter().flatten()
    }

    pub fn summary_for(&self, name: &str) -> Option<&Summary<T>> {
        self.summaries.iter().find(|s| s.name == name).map(|s| &s.summary)
    }

    /// Pooled posterior mean of sigma2 (exact for identical draws).
    pub fn mean_sigma2(&self) -> T {
        let values: Vec<T> = self.pooled_states().map(|s| s.sigma2).collect();
        stats::mean(&values)
    }

    fn from_chains(chains: Vec<Vec<ChainState<T>>>, p: usize, k: usize) -> Self {
        let names = Self::parameter_names(p, k);
        let n_params = names.len();
        let mut pooled: Vec<Vec<T>> = vec![Vec::new(); n_params];
        for state in chains.iter().flatten() {
            for (slot, v) in pooled.iter_mut().zip(Self::flatten_state(state)) {
                slot.push(v);
            }
        }
        let summaries = names
            .into_iter()
            .zip(pooled.iter())
            .map(|(name, xs)| ParameterSummary { name, summary: stats::summarize(xs) })
            .collect();

        let n = chains
            .first()
            .and_then(|c| c.first())
            .map(|s| s.mu.len())
            .unwrap_or(0);
        let mut mean_mu = DVector::zeros(n);
        let mut count = T::zero();
        for state in chains.iter().flatten() {
            count += T::one();
            let mut delta = &state.mu - &mean_mu;
            delta /= count;
            mean_mu += delta;
        }

        let rhat = if chains.len() >= 2 && chains.iter().all(|c| c.len() >= 2) {
            Some(
                (0..n_params)
                    .map(|j| {
                        let per_chain: Vec<Vec<f64>> = chains
                            .iter()
                            .map(|c| {
                                c.iter()
                                    .map(|s| {
                                        Self::flatten_state(s)[j].to_f64().unwrap_or(f64::NAN)
                                    })
                                    .collect()
                            })
                            .collect();
                        potential_scale_reduction(&per_chain)
                    })
                    .collect(),
            )
        } else {
            None
        };

        PosteriorSamples { chains, p, k, acceptance_rate: 1.0, summaries, mean_mu, rhat }
    }
}

/// Basic (non-split) potential scale reduction over chains of equal length.
fn potential_scale_reduction(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains
        .iter()
        .map(|c| c.iter().sum::<f64>() / n)
        .collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return 1.0;
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Draw from Inverse-Gamma(shape, rate) via the Gamma reciprocal.
pub fn ig_draw<T: Scalar, R: RngCore + ?Sized>(rng: &mut R, shape: T, rate: T) -> T {
    T::one() / T::gamma_draw(rng, shape, T::one() / rate)
}

/// Posterior (shape, rate) of an inverse-gamma variance given `count`
/// Gaussian residuals with squared sum `sum_sq`.
pub fn ig_posterior<T: Scalar>(a: T, b: T, sum_sq: T, count: usize) -> (T, T) {
    (a + cvt::<T>(count as f64) * cvt::<T>(0.5), b + cvt::<T>(0.5) * sum_sq)
}

/// Owned Gibbs problem: design, response, basis matrix, and priors, with the
/// iteration-invariant Gram matrices precomputed. The hybrid model and the
/// truncated-Moran baseline are both instances.
struct GibbsCore<T> {
    x: DMatrix<T>,
    y: DVector<T>,
    b: DMatrix<T>,
    coef_prior: SpectralPrior<T>,
    priors: PriorSpec<T>,
    xtx: DMatrix<T>,
    btb: DMatrix<T>,
    /// Coefficient prior precision at phi = 1; scan divides by phi.
    p0: DMatrix<T>,
}

impl<T: Scalar> GibbsCore<T> {
    fn new(
        x: DMatrix<T>,
        y: DVector<T>,
        b: DMatrix<T>,
        coef_prior: SpectralPrior<T>,
        priors: PriorSpec<T>,
    ) -> Self {
        let xtx = x.transpose() * &x;
        let btb = b.transpose() * &b;
        let p0 = if coef_prior.r() > 0 {
            coef_prior.precision(T::one())
        } else {
            DMatrix::zeros(0, 0)
        };
        GibbsCore { x, y, b, coef_prior, priors, xtx, btb, p0 }
    }

    fn from_spec(spec: &ModelSpec<T>) -> Self {
        GibbsCore::new(
            spec.x.clone(),
            spec.y.clone(),
            spec.basis.lambda.clone(),
            spec.basis.spectral_prior(),
            spec.priors.clone(),
        )
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn p(&self) -> usize {
        self.x.ncols()
    }

    fn k(&self) -> usize {
        self.b.ncols()
    }

    fn fitted(&self, state: &ChainState<T>) -> DVector<T> {
        &self.x * &state.beta + &self.b * &state.delta
    }

    /// mu_i | rest ~ N(precision-weighted blend of y_i and the fitted mean,
    /// common variance).
    fn mu_moments(&self, state: &ChainState<T>) -> (DVector<T>, T) {
        let prec = T::one() / state.sigma2 + T::one() / state.sigma2_eta;
        let var = T::one() / prec;
        let fitted = self.fitted(state);
        let mean = DVector::from_iterator(
            self.n(),
            self.y
                .iter()
                .zip(fitted.iter())
                .map(|(&yi, &mi)| (yi / state.sigma2 + mi / state.sigma2_eta) * var),
        );
        (mean, var)
    }

    /// Information form of beta | rest.
    fn beta_information(&self, state: &ChainState<T>) -> (DMatrix<T>, DVector<T>) {
        let p = self.p();
        let mut precision = &self.xtx / state.sigma2_eta;
        let prior_prec = T::one() / self.priors.sigma2_beta;
        for j in 0..p {
            precision[(j, j)] += prior_prec;
        }
        let resid = &state.mu - &self.b * &state.delta;
        let shift = self.x.transpose() * resid / state.sigma2_eta
            + &self.priors.mu_beta * prior_prec;
        (precision, shift)
    }

    /// Information form of delta | rest.
    fn delta_information(&self, state: &ChainState<T>) -> (DMatrix<T>, DVector<T>) {
        let precision = &self.btb / state.sigma2_eta + &self.p0 / state.phi;
        let resid = &state.mu - &self.x * &state.beta;
        let shift = self.b.transpose() * resid / state.sigma2_eta;
        (precision, shift)
    }

    fn sigma2_params(&self, state: &ChainState<T>) -> (T, T) {
        let resid = &self.y - &state.mu;
        ig_posterior(self.priors.a_eps, self.priors.b_eps, resid.norm_squared(), self.n())
    }

    fn sigma2_eta_params(&self, state: &ChainState<T>) -> (T, T) {
        let resid = &state.mu - self.fitted(state);
        ig_posterior(self.priors.a_eta, self.priors.b_eta, resid.norm_squared(), self.n())
    }

    fn phi_params(&self, state: &ChainState<T>) -> (T, T) {
        let quad = self.coef_prior.quadform_inv(&state.delta);
        ig_posterior(self.priors.a_phi, self.priors.b_phi, quad, self.k())
    }

    /// One systematic scan in the fixed order mu, beta, delta, sigma2,
    /// sigma2_eta, phi.
    fn scan<R: RngCore + ?Sized>(
        &self,
        state: &mut ChainState<T>,
        rng: &mut R,
    ) -> Result<(), LinalgError> {
        let (mean, var) = self.mu_moments(state);
        let sd = var.sqrt();
        state.mu =
            DVector::from_iterator(self.n(), mean.iter().map(|&m| m + sd * T::standard_normal(rng)));

        let (precision, shift) = self.beta_information(state);
        state.beta = linalg::gaussian_from_information(&precision, &shift, rng)?;

        let (precision, shift) = self.delta_information(state);
        state.delta = linalg::gaussian_from_information(&precision, &shift, rng)?;

        let (a, b) = self.sigma2_params(state);
        state.sigma2 = ig_draw(rng, a, b);

        let (a, b) = self.sigma2_eta_params(state);
        state.sigma2_eta = ig_draw(rng, a, b);

        let (a, b) = self.phi_params(state);
        state.phi = ig_draw(rng, a, b);
        Ok(())
    }

    /// Joint draw of all unknowns from the prior.
    fn draw_prior<R: RngCore + ?Sized>(&self, rng: &mut R) -> ChainState<T> {
        let phi = ig_draw(rng, self.priors.a_phi, self.priors.b_phi);
        let sigma2 = ig_draw(rng, self.priors.a_eps, self.priors.b_eps);
        let sigma2_eta = ig_draw(rng, self.priors.a_eta, self.priors.b_eta);
        let sd_beta = self.priors.sigma2_beta.sqrt();
        let beta = DVector::from_iterator(
            self.p(),
            self.priors.mu_beta.iter().map(|&m| m + sd_beta * T::standard_normal(rng)),
        );
        // delta = Psi u with u_k ~ N(0, phi * scale_k)
        let u = DVector::from_iterator(
            self.k(),
            self.coef_prior
                .scale
                .iter()
                .map(|&s| (phi * s).sqrt() * T::standard_normal(rng)),
        );
        let delta = if self.k() > 0 { &self.coef_prior.psi * u } else { u };
        let base = &self.x * &beta + &self.b * &delta;
        let sd_eta = sigma2_eta.sqrt();
        let mu = DVector::from_iterator(
            self.n(),
            base.iter().map(|&m| m + sd_eta * T::standard_normal(rng)),
        );
        ChainState { beta, delta, mu, sigma2, sigma2_eta, phi }
    }

    /// y | mu, sigma2, one fresh observation vector.
    fn draw_y<R: RngCore + ?Sized>(&self, state: &ChainState<T>, rng: &mut R) -> DVector<T> {
        let sd = state.sigma2.sqrt();
        DVector::from_iterator(
            self.n(),
            state.mu.iter().map(|&m| m + sd * T::standard_normal(rng)),
        )
    }

    fn init_state<R: RngCore + ?Sized>(
        &self,
        strategy: InitStrategy,
        rng: &mut R,
    ) -> Result<ChainState<T>, LinalgError> {
        match strategy {
            InitStrategy::PriorDraw => Ok(self.draw_prior(rng)),
            InitStrategy::LeastSquares => {
                let beta = if self.p() > 0 {
                    let xty = self.x.transpose() * &self.y;
                    linalg::spd_solve(&self.xtx, &xty)?
                } else {
                    DVector::zeros(0)
                };
                let prior_mean = |a: T, b: T| {
                    if a > T::one() {
                        b / (a - T::one())
                    } else {
                        T::one()
                    }
                };
                Ok(ChainState {
                    beta,
                    delta: DVector::zeros(self.k()),
                    mu: self.y.clone(),
                    sigma2: prior_mean(self.priors.a_eps, self.priors.b_eps),
                    sigma2_eta: prior_mean(self.priors.a_eta, self.priors.b_eta),
                    phi: T::one(),
                })
            }
        }
    }
}

fn run_core<T: Scalar>(
    core: &GibbsCore<T>,
    cfg: &SamplerConfig,
) -> Result<PosteriorSamples<T>, SamplerError<T>> {
    cfg.validate()?;
    let mut chains = Vec::with_capacity(cfg.chains);
    for chain_idx in 0..cfg.chains {
        let mut rng = crate::Rng::seed_from_u64(cfg.seed);
        rng.set_stream(chain_idx as u64);
        let mut state = core
            .init_state(cfg.init, &mut rng)
            .map_err(|e| SamplerError::InitFailure { message: e.to_string() })?;
        state
            .validate(core.n(), core.p(), core.k())
            .map_err(|e| SamplerError::InitFailure { message: e.to_string() })?;

        let mut retained = Vec::with_capacity(cfg.retained());
        for iteration in 0..cfg.iterations {
            let previous = state.clone();
            let step = core
                .scan(&mut state, &mut rng)
                .map_err(|e| e.to_string())
                .and_then(|()| {
                    state.validate(core.n(), core.p(), core.k()).map_err(|e| e.to_string())
                });
            if let Err(message) = step {
                return Err(SamplerError::Numerical {
                    iteration,
                    message,
                    last_state: Box::new(previous),
                });
            }
            if iteration >= cfg.burnin && (iteration + 1 - cfg.burnin) % cfg.thin == 0 {
                retained.push(state.clone());
            }
        }
        chains.push(retained);
    }
    Ok(PosteriorSamples::from_chains(chains, core.p(), core.k()))
}

/// Run the Gibbs sampler for the hybrid-basis model.
pub fn run_chain<T: Scalar>(
    spec: &ModelSpec<T>,
    cfg: &SamplerConfig,
) -> Result<PosteriorSamples<T>, SamplerError<T>> {
    run_core(&GibbsCore::from_spec(spec), cfg)
}

/// Run the comparison baseline: same hierarchy, basis replaced by the first
/// q Moran eigenvectors with the matching inverted-spectrum prior. `q = 0`
/// degenerates to a pure linear model.
pub fn run_baseline_hughes_haran<T: Scalar>(
    spec: &ModelSpec<T>,
    cfg: &SamplerConfig,
    q: usize,
    policy: &JitterPolicy,
) -> Result<PosteriorSamples<T>, SamplerError<T>> {
    let (m_q, prior) = truncated_moran_basis(&spec.basis, q, policy)?;
    let core = GibbsCore::new(spec.x.clone(), spec.y.clone(), m_q, prior, spec.priors.clone());
    run_core(&core, cfg)
}

/// Independent draws from the prior (the y-free analogue of run_chain),
/// retained under the same burnin/thin bookkeeping.
pub fn run_prior_chain<T: Scalar>(
    spec: &ModelSpec<T>,
    cfg: &SamplerConfig,
) -> Result<PosteriorSamples<T>, SamplerError<T>> {
    cfg.validate()?;
    let core = GibbsCore::from_spec(spec);
    let mut chains = Vec::with_capacity(cfg.chains);
    for chain_idx in 0..cfg.chains {
        let mut rng = crate::Rng::seed_from_u64(cfg.seed);
        rng.set_stream(chain_idx as u64);
        let mut retained = Vec::with_capacity(cfg.retained());
        for iteration in 0..cfg.iterations {
            let state = core.draw_prior(&mut rng);
            if iteration >= cfg.burnin && (iteration + 1 - cfg.burnin) % cfg.thin == 0 {
                retained.push(state);
            }
        }
        chains.push(retained);
    }
    Ok(PosteriorSamples::from_chains(chains, core.p(), core.k()))
}

// Conveniences mirroring the scan's individual conditionals; they rebuild
// the (cheap) precomputed Gram matrices per call, so prefer run_chain for
// full inference and these for tests and diagnostics.

pub fn sample_mu<T: Scalar, R: RngCore + ?Sized>(
    state: &ChainState<T>,
    spec: &ModelSpec<T>,
    rng: &mut R,
) -> DVector<T> {
    let core = GibbsCore::from_spec(spec);
    let (mean, var) = core.mu_moments(state);
    let sd = var.sqrt();
    DVector::from_iterator(core.n(), mean.iter().map(|&m| m + sd * T::standard_normal(rng)))
}

pub fn sample_beta<T: Scalar, R: RngCore + ?Sized>(
    state: &ChainState<T>,
    spec: &ModelSpec<T>,
    rng: &mut R,
) -> Result<DVector<T>, LinalgError> {
    let core = GibbsCore::from_spec(spec);
    let (precision, shift) = core.beta_information(state);
    linalg::gaussian_from_information(&precision, &shift, rng)
}

pub fn sample_delta<T: Scalar, R: RngCore + ?Sized>(
    state: &ChainState<T>,
    spec: &ModelSpec<T>,
    rng: &mut R,
) -> Result<DVector<T>, LinalgError> {
    let core = GibbsCore::from_spec(spec);
    let (precision, shift) = core.delta_information(state);
    linalg::gaussian_from_information(&precision, &shift, rng)
}

pub fn sample_sigma2<T: Scalar, R: RngCore + ?Sized>(
    state: &ChainState<T>,
    spec: &ModelSpec<T>,
    rng: &mut R,
) -> T {
    let (a, b) = GibbsCore::from_spec(spec).sigma2_params(state);
    ig_draw(rng, a, b)
}

pub fn sample_sigma2_eta<T: Scalar, R: RngCore + ?Sized>(
    state: &ChainState<T>,
    spec: &ModelSpec<T>,
    rng: &mut R,
) -> T {
    let (a, b) = GibbsCore::from_spec(spec).sigma2_eta_params(state);
    ig_draw(rng, a, b)
}

pub fn sample_phi<T: Scalar, R: RngCore + ?Sized>(
    state: &ChainState<T>,
    spec: &ModelSpec<T>,
    rng: &mut R,
) -> T {
    let (a, b) = GibbsCore::from_spec(spec).phi_params(state);
    ig_draw(rng, a, b)
}

/// Conditional mean and common variance of mu | rest.
pub fn mu_conditional_moments<T: Scalar>(
    state: &ChainState<T>,
    spec: &ModelSpec<T>,
) -> (DVector<T>, T) {
    GibbsCore::from_spec(spec).mu_moments(state)
}

/// Conditional mean and covariance of beta | rest.
pub fn beta_conditional_moments<T: Scalar>(
    state: &ChainState<T>,
    spec: &ModelSpec<T>,
) -> Result<(DVector<T>, DMatrix<T>), LinalgError> {
    let core = GibbsCore::from_spec(spec);
    let (precision, shift) = core.beta_information(state);
    information_to_moments(&precision, &shift)
}

/// Conditional mean and covariance of delta | rest.
pub fn delta_conditional_moments<T: Scalar>(
    state: &ChainState<T>,
    spec: &ModelSpec<T>,
) -> Result<(DVector<T>, DMatrix<T>), LinalgError> {
    let core = GibbsCore::from_spec(spec);
    let (precision, shift) = core.delta_information(state);
    information_to_moments(&precision, &shift)
}

fn information_to_moments<T: Scalar>(
    precision: &DMatrix<T>,
    shift: &DVector<T>,
) -> Result<(DVector<T>, DMatrix<T>), LinalgError> {
    if shift.is_empty() {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let chol = precision.clone().cholesky().ok_or_else(|| LinalgError::CholeskyFailed {
        condition: linalg::condition_estimate(precision),
    })?;
    Ok((chol.solve(shift), chol.inverse()))
}

/// Posterior (shape, rate) of sigma2 | rest.
pub fn sigma2_conditional_params<T: Scalar>(state: &ChainState<T>, spec: &ModelSpec<T>) -> (T, T) {
    GibbsCore::from_spec(spec).sigma2_params(state)
}

/// Posterior (shape, rate) of sigma2_eta | rest.
pub fn sigma2_eta_conditional_params<T: Scalar>(
    state: &ChainState<T>,
    spec: &ModelSpec<T>,
) -> (T, T) {
    GibbsCore::from_spec(spec).sigma2_eta_params(state)
}

/// Posterior (shape, rate) of phi | rest.
pub fn phi_conditional_params<T: Scalar>(state: &ChainState<T>, spec: &ModelSpec<T>) -> (T, T) {
    GibbsCore::from_spec(spec).phi_params(state)
}

/// One test function's mean under the two joint-distribution simulators.
#[derive(Debug, Clone)]
pub struct GewekeStat {
    pub name: String,
    pub marginal_mean: f64,
    pub successive_mean: f64,
    /// Difference scaled by the combined Monte Carlo standard error
    /// (autocorrelation-aware on the successive side).
    pub z: f64,
}

#[derive(Debug, Clone)]
pub struct GewekeReport {
    pub stats: Vec<GewekeStat>,
    pub max_abs_z: f64,
}

/// Joint-distribution correctness check. The marginal-conditional simulator
/// draws (theta, y) independently from the prior and data model; the
/// successive-conditional simulator alternates a Gibbs scan with redrawing y.
/// If the conditionals are consistent with the joint, every test function
/// (each parameter and its square) has the same expectation under both.
pub fn geweke_compare<T: Scalar>(
    spec: &ModelSpec<T>,
    iterations: usize,
    seed: u64,
) -> Result<GewekeReport, SamplerError<T>> {
    if iterations < 100 {
        return Err(SamplerError::Config {
            message: format!("Geweke comparison needs at least 100 iterations, got {iterations}"),
        });
    }
    let mut core = GibbsCore::from_spec(spec);
    let names = PosteriorSamples::<T>::parameter_names(core.p(), core.k());
    let n_fns = names.len() * 2;

    let collect = |state: &ChainState<T>, sink: &mut Vec<Vec<f64>>| {
        for (j, v) in PosteriorSamples::<T>::flatten_state(state).into_iter().enumerate() {
            let x = v.to_f64().unwrap_or(f64::NAN);
            sink[2 * j].push(x);
            sink[2 * j + 1].push(x * x);
        }
    };

    // Marginal-conditional: iid prior draws (y plays no role).
    let mut marginal: Vec<Vec<f64>> = vec![Vec::with_capacity(iterations); n_fns];
    let mut rng = crate::Rng::seed_from_u64(seed);
    rng.set_stream(0);
    for _ in 0..iterations {
        let state = core.draw_prior(&mut rng);
        collect(&state, &mut marginal);
    }

    // Successive-conditional: Gibbs scan against freshly redrawn data.
    let mut successive: Vec<Vec<f64>> = vec![Vec::with_capacity(iterations); n_fns];
    let mut rng = crate::Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut state = core.draw_prior(&mut rng);
    core.y = core.draw_y(&state, &mut rng);
    for iteration in 0..iterations {
        core.scan(&mut state, &mut rng).map_err(|e| SamplerError::Numerical {
            iteration,
            message: e.to_string(),
            last_state: Box::new(state.clone()),
        })?;
        core.y = core.draw_y(&state, &mut rng);
        collect(&state, &mut successive);
    }

    let mut stats_out = Vec::with_capacity(n_fns);
    let mut max_abs_z = 0.0f64;
    for j in 0..n_fns {
        let name = if j % 2 == 0 {
            names[j / 2].clone()
        } else {
            format!("{}²", names[j / 2])
        };
        let m1 = marginal[j].iter().sum::<f64>() / iterations as f64;
        let m2 = successive[j].iter().sum::<f64>() / iterations as f64;
        let se1 = stats::mc_standard_error(&marginal[j]);
        let se2 = stats::mc_standard_error(&successive[j]);
        let denom = (se1 * se1 + se2 * se2).sqrt();
        let z = if denom > 0.0 { (m1 - m2) / denom } else { 0.0 };
        max_abs_z = max_abs_z.max(z.abs());
        stats_out.push(GewekeStat { name, marginal_mean: m1, successive_mean: m2, z });
    }
    Ok(GewekeReport { stats: stats_out, max_abs_z })
}
