//! Hierarchical model specification.
//!
//! The generative story, top to bottom:
//!
//! ```text
//! y | mu, sigma2           ~ N(mu, sigma2 * I)            (observation)
//! mu | beta, delta, s2_eta ~ N(X beta + Lambda delta, s2_eta * I)
//! delta | phi              ~ N(0, phi * Psi diag(Phi) Psi')
//! beta                     ~ N(mu_beta, sigma2_beta * I)
//! sigma2, s2_eta, phi      ~ Inverse-Gamma(shape, rate)
//! ```
//!
//! `Lambda`, `Psi`, `Phi` come from [`crate::basis::HybridBasis`]; the
//! inverse-gamma convention throughout is shape-rate (density proportional to
//! `x^(-a-1) exp(-b/x)`).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::basis::HybridBasis;
use crate::scalar::{cvt, Scalar};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {message}")]
    Dimension { message: String },
    #[error("{what} must be finite")]
    NonFinite { what: String },
    #[error("{what} must be strictly positive, got {value}")]
    NonPositive { what: String, value: f64 },
}

/// Prior hyperparameters. Inverse-gamma pairs are (shape, rate).
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec<T> {
    pub mu_beta: DVector<T>,
    pub sigma2_beta: T,
    pub a_eps: T,
    pub b_eps: T,
    pub a_eta: T,
    pub b_eta: T,
    pub a_phi: T,
    pub b_phi: T,
}

impl<T: Scalar> PriorSpec<T> {
    /// Defaults: flat-ish Gaussian on beta (mean 0, variance 1e10) and
    /// Inverse-Gamma(2, 1) on every variance component.
    pub fn default_for(p: usize) -> Self {
        PriorSpec {
            mu_beta: DVector::zeros(p),
            sigma2_beta: cvt(1e10),
            a_eps: cvt(2.0),
            b_eps: cvt(1.0),
            a_eta: cvt(2.0),
            b_eta: cvt(1.0),
            a_phi: cvt(2.0),
            b_phi: cvt(1.0),
        }
    }

    fn validate(&self, p: usize) -> Result<(), ModelError> {
        if self.mu_beta.len() != p {
            return Err(ModelError::Dimension {
                message: format!(
                    "mu_beta has length {} but the design has {p} columns",
                    self.mu_beta.len()
                ),
            });
        }
        let positives = [
            ("sigma2_beta", self.sigma2_beta),
            ("a_eps", self.a_eps),
            ("b_eps", self.b_eps),
            ("a_eta", self.a_eta),
            ("b_eta", self.b_eta),
            ("a_phi", self.a_phi),
            ("b_phi", self.b_phi),
        ];
        for (what, v) in positives {
            require_positive(what, v)?;
        }
        Ok(())
    }
}

/// Immutable problem definition handed to the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec<T> {
    pub x: DMatrix<T>,
    pub y: DVector<T>,
    pub basis: HybridBasis<T>,
    pub priors: PriorSpec<T>,
}

impl<T: Scalar> ModelSpec<T> {
    pub fn new(
        x: DMatrix<T>,
        y: DVector<T>,
        basis: HybridBasis<T>,
        priors: PriorSpec<T>,
    ) -> Result<Self, ModelError> {
        let n = basis.n();
        if x.nrows() != n || y.len() != n {
            return Err(ModelError::Dimension {
                message: format!(
                    "basis covers {n} units but X has {} rows and y has {}",
                    x.nrows(),
                    y.len()
                ),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { what: "y".into() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { what: "X".into() });
        }
        priors.validate(x.ncols())?;
        Ok(ModelSpec { x, y, basis, priors })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn r(&self) -> usize {
        self.basis.r()
    }
}

/// One full set of model unknowns; the Gibbs sampler's state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState<T> {
    pub beta: DVector<T>,
    pub delta: DVector<T>,
    pub mu: DVector<T>,
    pub sigma2: T,
    pub sigma2_eta: T,
    pub phi: T,
}

impl<T: Scalar> ChainState<T> {
    pub fn validate(&self, n: usize, p: usize, r: usize) -> Result<(), ModelError> {
        if self.beta.len() != p || self.delta.len() != r || self.mu.len() != n {
            return Err(ModelError::Dimension {
                message: format!(
                    "state has (beta, delta, mu) lengths ({}, {}, {}), expected ({p}, {r}, {n})",
                    self.beta.len(),
                    self.delta.len(),
                    self.mu.len()
                ),
            });
        }
        require_positive("sigma2", self.sigma2)?;
        require_positive("sigma2_eta", self.sigma2_eta)?;
        require_positive("phi", self.phi)?;
        let finite = self.beta.iter().all(|v| v.is_finite())
            && self.delta.iter().all(|v| v.is_finite())
            && self.mu.iter().all(|v| v.is_finite());
        if !finite {
            return Err(ModelError::NonFinite { what: "chain state".into() });
        }
        Ok(())
    }
}

fn require_positive<T: Scalar>(what: &str, v: T) -> Result<(), ModelError> {
    if !(v > T::zero()) || !v.is_finite() {
        return Err(ModelError::NonPositive {
            what: what.into(),
            value: v.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(())
}

/// The log joint density split into its factor terms; summing them gives the
/// full log joint. Kept separate so tests and diagnostics can localize a
/// discrepancy to one factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogJointBreakdown<T> {
    /// log N(y; mu, sigma2 I)
    pub data: T,
    /// log N(mu; X beta + Lambda delta, sigma2_eta I)
    pub process: T,
    /// log N(delta; 0, phi Psi diag(Phi) Psi')
    pub delta_prior: T,
    /// log N(beta; mu_beta, sigma2_beta I)
    pub beta_prior: T,
    /// log IG(sigma2; a_eps, b_eps)
    pub sigma2_prior: T,
    /// log IG(sigma2_eta; a_eta, b_eta)
    pub sigma2_eta_prior: T,
    /// log IG(phi; a_phi, b_phi)
    pub phi_prior: T,
}

impl<T: Scalar> LogJointBreakdown<T> {
    pub fn total(&self) -> T {
        self.data
            + self.process
            + self.delta_prior
            + self.beta_prior
            + self.sigma2_prior
            + self.sigma2_eta_prior
            + self.phi_prior
    }
}

/// Log joint density of data and unknowns under the full hierarchy,
/// including all normalizing constants.
pub fn log_joint<T: Scalar>(state: &ChainState<T>, spec: &ModelSpec<T>) -> Result<T, ModelError> {
    Ok(log_joint_breakdown(state, spec)?.total())
}

/// Factor-by-factor version of [`log_joint`].
pub fn log_joint_breakdown<T: Scalar>(
    state: &ChainState<T>,
    spec: &ModelSpec<T>,
) -> Result<LogJointBreakdown<T>, ModelError> {
    state.validate(spec.n(), spec.p(), spec.r())?;
    let basis = &spec.basis;

    let data_resid = &spec.y - &state.mu;
    let data = log_normal_iid(data_resid.norm_squared(), state.sigma2, spec.n());

    let fitted = &spec.x * &state.beta + &basis.lambda * &state.delta;
    let process_resid = &state.mu - fitted;
    let process = log_normal_iid(process_resid.norm_squared(), state.sigma2_eta, spec.n());

    // delta ~ N(0, phi Psi diag(Phi) Psi'): orthonormal Psi makes the
    // exponent a diagonal form in u = Psi' delta.
    let prior = basis.spectral_prior();
    let quad = prior.quadform_inv(&state.delta) / state.phi;
    let half = cvt::<T>(0.5);
    let delta_prior =
        -cvt::<T>(spec.r() as f64) * half * T::two_pi().ln()
            - half * prior.log_det(state.phi)
            - half * quad;

    let beta_resid = &state.beta - &spec.priors.mu_beta;
    let beta_prior = log_normal_iid(beta_resid.norm_squared(), spec.priors.sigma2_beta, spec.p());

    let sigma2_prior = log_inverse_gamma(state.sigma2, spec.priors.a_eps, spec.priors.b_eps);
    let sigma2_eta_prior = log_inverse_gamma(state.sigma2_eta, spec.priors.a_eta, spec.priors.b_eta);
    let phi_prior = log_inverse_gamma(state.phi, spec.priors.a_phi, spec.priors.b_phi);

    Ok(LogJointBreakdown {
        data,
        process,
        delta_prior,
        beta_prior,
        sigma2_prior,
        sigma2_eta_prior,
        phi_prior,
    })
}

/// Log density of k iid N(0, var) coordinates with squared norm `sum_sq`.
pub(crate) fn log_normal_iid<T: Scalar>(sum_sq: T, var: T, k: usize) -> T {
    let half = cvt::<T>(0.5);
    -cvt::<T>(k as f64) * half * (T::two_pi().ln() + var.ln()) - half * sum_sq / var
}

/// Log density of Inverse-Gamma(shape a, rate b) at x > 0.
pub(crate) fn log_inverse_gamma<T: Scalar>(x: T, a: T, b: T) -> T {
    let ln_gamma_a = cvt::<T>(statrs::function::gamma::ln_gamma(a.to_f64().unwrap_or(f64::NAN)));
    a * b.ln() - ln_gamma_a - (a + T::one()) * x.ln() - b / x
}
