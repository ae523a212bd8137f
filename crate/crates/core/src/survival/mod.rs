//! Accelerated-failure-time model of incident inter-arrival times.
//!
//! `log τ = βᵀw + y` with extreme-value noise `h(y) = exp(y - e^y)`, which
//! makes `τ | w` exponential with mean `exp(βᵀw)`. Inter-arrival times are
//! measured in hours.

mod features;
pub mod io;

use nalgebra::{DMatrix, DVector};
use rand::distributions::Open01;
use rand::Rng;

pub use features::{build_features, CountWindow, FeatureKind, FeatureSchema, FeatureVector, IncidentHistory};

use crate::domain::{Grid, Incident};
use crate::error::{Error, Result};
use crate::time::HOUR;

/// Largest |βᵀw| for which `exp` is finite and non-zero.
const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalModel {
    pub schema: FeatureSchema,
    pub beta: Vec<f64>,
}

impl SurvivalModel {
    pub fn new(schema: FeatureSchema, beta: Vec<f64>) -> Result<Self> {
        if schema.len() != beta.len() {
            return Err(Error::Schema(format!(
                "{} coefficients for {} features",
                beta.len(),
                schema.len()
            )));
        }
        if let Some(b) = beta.iter().find(|b| !b.is_finite()) {
            return Err(Error::Schema(format!("non-finite coefficient {b}")));
        }
        Ok(SurvivalModel { schema, beta })
    }

    pub fn zeros(schema: FeatureSchema) -> Self {
        let beta = vec![0.0; schema.len()];
        SurvivalModel { schema, beta }
    }

    fn check(&self, w: &FeatureVector) -> Result<()> {
        if w.len() != self.beta.len() {
            return Err(Error::Schema(format!(
                "feature vector of length {} for a model with {} coefficients",
                w.len(),
                self.beta.len()
            )));
        }
        Ok(())
    }
}

/// One inter-arrival record.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub tau_hours: f64,
    pub w: FeatureVector,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurvivalDataset {
    pub observations: Vec<Observation>,
}

impl SurvivalDataset {
    pub fn new(observations: Vec<Observation>) -> Result<Self> {
        for (i, o) in observations.iter().enumerate() {
            if !(o.tau_hours > 0.0) || !o.tau_hours.is_finite() {
                return Err(Error::Format(format!(
                    "observation {i}: tau {} must be positive",
                    o.tau_hours
                )));
            }
            if let Some(v) = o.w.values.iter().find(|v| !v.is_finite()) {
                return Err(Error::Format(format!("observation {i}: non-finite feature {v}")));
            }
        }
        Ok(SurvivalDataset { observations })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn extend(&mut self, other: SurvivalDataset) {
        self.observations.extend(other.observations);
    }

    /// Inter-arrival records from an incident log, one per pair of
    /// consecutive incidents in the same cell. Covariates are evaluated at
    /// the earlier incident, with history up to and including it.
    /// Simultaneous incidents in a cell yield no record.
    pub fn from_incidents(incidents: &[Incident], grid: &Grid, schema: &FeatureSchema) -> Self {
        let mut sorted: Vec<&Incident> = incidents.iter().collect();
        sorted.sort_by(|a, b| a.occurred_at.total_cmp(&b.occurred_at).then(a.id.cmp(&b.id)));

        let mut history = IncidentHistory::new(grid.len());
        let mut pending: Vec<Option<(f64, FeatureVector)>> = vec![None; grid.len()];
        let mut observations = Vec::new();
        for inc in sorted {
            history.record(inc.grid_id, inc.occurred_at);
            let slot = &mut pending[inc.grid_id as usize];
            if let Some((start, w)) = slot.take() {
                let tau_hours = (inc.occurred_at - start) / HOUR;
                if tau_hours > 0.0 {
                    observations.push(Observation { tau_hours, w });
                }
            }
            let w = build_features(schema, &history, grid, inc.grid_id, inc.occurred_at, inc.weather);
            *slot = Some((inc.occurred_at, w));
        }
        SurvivalDataset { observations }
    }
}

fn check_dims(beta: &[f64], data: &SurvivalDataset) -> Result<()> {
    if let Some((i, o)) = data
        .observations
        .iter()
        .enumerate()
        .find(|(_, o)| o.w.len() != beta.len())
    {
        return Err(Error::Schema(format!(
            "observation {i} has {} features, model has {}",
            o.w.len(),
            beta.len()
        )));
    }
    Ok(())
}

/// Standardized residual `z = log τ - βᵀw`.
fn residual(beta: &[f64], o: &Observation) -> f64 {
    o.tau_hours.ln() - o.w.dot(beta)
}

fn ll_at(beta: &[f64], data: &SurvivalDataset) -> f64 {
    data.observations
        .iter()
        .map(|o| {
            let z = residual(beta, o);
            z - z.exp()
        })
        .sum()
}

fn grad_at(beta: &[f64], data: &SurvivalDataset) -> Vec<f64> {
    let mut g = vec![0.0; beta.len()];
    for o in &data.observations {
        let s = residual(beta, o).exp() - 1.0;
        for (gj, wj) in g.iter_mut().zip(&o.w.values) {
            *gj += wj * s;
        }
    }
    g
}

/// `Σ (z_i - e^{z_i})`.
pub fn log_likelihood(model: &SurvivalModel, data: &SurvivalDataset) -> Result<f64> {
    check_dims(&model.beta, data)?;
    Ok(ll_at(&model.beta, data))
}

/// `∂L/∂β_j = Σ_i w_ij (e^{z_i} - 1)`.
pub fn gradient(model: &SurvivalModel, data: &SurvivalDataset) -> Result<Vec<f64>> {
    check_dims(&model.beta, data)?;
    Ok(grad_at(&model.beta, data))
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchFitOptions {
    /// Initial Levenberg damping, relative to the mean curvature.
    pub damping: f64,
    /// Stop once the gradient's sup-norm falls to this value.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BatchFitOptions {
    fn default() -> Self {
        BatchFitOptions {
            damping: 1e-3,
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: SurvivalModel,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
    pub gradient_norm: f64,
}

/// Maximum-likelihood fit by damped Newton ascent.
///
/// The log-likelihood is concave with negative Hessian `Σ e^{z_i} w_i w_iᵀ`.
/// Each step solves `(H + λ·mean(diag H)·I) δ = ∇L`; a step is accepted only
/// if the likelihood does not decrease, otherwise λ grows tenfold. Starting
/// from the origin the iterates stay in the row space of the design, so
/// collinear designs converge to the minimum-norm maximizer.
pub fn fit_batch(
    schema: &FeatureSchema,
    data: &SurvivalDataset,
    init: &[f64],
    opts: &BatchFitOptions,
) -> Result<FitOutcome> {
    if data.is_empty() {
        return Err(Error::NoObservations);
    }
    if init.len() != schema.len() {
        return Err(Error::Schema(format!(
            "initial vector has {} entries, schema has {}",
            init.len(),
            schema.len()
        )));
    }
    check_dims(init, data)?;
    let m = init.len();
    let mut beta = init.to_vec();
    let mut ll = ll_at(&beta, data);
    if !ll.is_finite() {
        return Err(Error::Divergence { iteration: 0 });
    }
    let mut lambda = opts.damping.max(1e-12);
    let mut iterations = 0;
    let mut g = grad_at(&beta, data);

    while iterations < opts.max_iter && inf_norm(&g) > opts.tol {
        iterations += 1;
        let mut h = DMatrix::<f64>::zeros(m, m);
        for o in &data.observations {
            let e = residual(&beta, o).exp();
            let w = DVector::from_column_slice(&o.w.values);
            h.syger(e, &w, &w, 1.0);
        }
        let scale = (h.trace() / m as f64).max(f64::MIN_POSITIVE);
        let rhs = DVector::from_column_slice(&g);
        let mut stalled = true;
        while lambda < 1e16 {
            let mut a = h.clone();
            for i in 0..m {
                a[(i, i)] += lambda * scale;
            }
            if let Some(chol) = a.cholesky() {
                let step = chol.solve(&rhs);
                let candidate: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + s).collect();
                let ll_new = ll_at(&candidate, data);
                if ll_new.is_finite() && ll_new >= ll {
                    beta = candidate;
                    ll = ll_new;
                    lambda = (lambda * 0.1).max(1e-12);
                    stalled = false;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if stalled {
            // no ascent step exists at machine precision
            break;
        }
        g = grad_at(&beta, data);
    }
    let gradient_norm = inf_norm(&g);
    Ok(FitOutcome {
        model: SurvivalModel {
            schema: schema.clone(),
            beta,
        },
        iterations,
        converged: gradient_norm <= opts.tol,
        log_likelihood: ll,
        gradient_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamingOptions {
    /// Gradient step size α.
    pub step: f64,
    pub max_iter: usize,
}

impl Default for StreamingOptions {
    fn default() -> Self {
        StreamingOptions {
            step: 1e-3,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamingStop {
    EmptyStream,
    /// The next step would have lowered the stream likelihood.
    LikelihoodDecrease,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct StreamingOutcome {
    pub model: SurvivalModel,
    /// Accepted gradient steps.
    pub steps: usize,
    pub stop: StreamingStop,
    pub initial_log_likelihood: f64,
    pub log_likelihood: f64,
}

/// Online update on a stream of new observations: repeated steps
/// `β ← β + α ∇L(β, stream)` until a step would lower the stream likelihood
/// (the previous iterate is kept) or `max_iter` steps are taken.
pub fn update_streaming(
    base: &SurvivalModel,
    stream: &SurvivalDataset,
    opts: &StreamingOptions,
) -> Result<StreamingOutcome> {
    if stream.is_empty() {
        return Ok(StreamingOutcome {
            model: base.clone(),
            steps: 0,
            stop: StreamingStop::EmptyStream,
            initial_log_likelihood: 0.0,
            log_likelihood: 0.0,
        });
    }
    check_dims(&base.beta, stream)?;
    let mut beta = base.beta.clone();
    let mut ll = ll_at(&beta, stream);
    let initial = ll;
    let mut stop = StreamingStop::MaxIterations;
    let mut steps = 0;
    for _ in 0..opts.max_iter {
        let g = grad_at(&beta, stream);
        let next: Vec<f64> = beta.iter().zip(&g).map(|(b, gj)| b + opts.step * gj).collect();
        let ll_next = ll_at(&next, stream);
        if !(ll_next >= ll) {
            stop = StreamingStop::LikelihoodDecrease;
            break;
        }
        beta = next;
        ll = ll_next;
        steps += 1;
    }
    Ok(StreamingOutcome {
        model: SurvivalModel {
            schema: base.schema.clone(),
            beta,
        },
        steps,
        stop,
        initial_log_likelihood: initial,
        log_likelihood: ll,
    })
}

/// Mean inter-arrival time `exp(βᵀw)`, in hours.
pub fn expected_interarrival(model: &SurvivalModel, w: &FeatureVector) -> Result<f64> {
    model.check(w)?;
    let eta = w.dot(&model.beta);
    if !eta.is_finite() || eta.abs() > MAX_EXPONENT {
        return Err(Error::RateOverflow(eta));
    }
    Ok(eta.exp())
}

/// Inverse-CDF draw: `τ = mean · (-ln u)` for `u ∈ (0, 1)`.
pub fn interarrival_from_uniform(mean_hours: f64, u: f64) -> f64 {
    mean_hours * -u.ln()
}

/// Draws an inter-arrival time in hours; always strictly positive.
pub fn sample_interarrival<R: Rng + ?Sized>(model: &SurvivalModel, w: &FeatureVector, rng: &mut R) -> Result<f64> {
    let mean = expected_interarrival(model, w)?;
    let u: f64 = rng.sample(Open01);
    Ok(interarrival_from_uniform(mean, u).max(f64::MIN_POSITIVE))
}
