//! Proportional-odds ordinal logistic regression.
//!
//! Convention: `P(Y <= j | x) = logistic(theta_j - x . beta)` with strictly increasing cutpoints,
//! so a positive coefficient shifts mass toward higher outcome levels.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::special::{logistic, logit, normal_two_sided, Z_975};

const MAX_ITERS: usize = 100;
const GRAD_TOL: f64 = 1e-8;
/// Coefficients this large mean the likelihood has no interior maximum.
const SEPARATION_BOUND: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OlrError {
    #[error(
        "need at least one observation per row of predictors ({rows} rows, {outcomes} outcomes)"
    )]
    LengthMismatch { rows: usize, outcomes: usize },
    #[error("outcome has fewer than two observed levels")]
    TooFewLevels,
    #[error("predictor `{0}` is constant")]
    DegenerateDesign(String),
    #[error("predictor `{0}` separates the outcome; maximum likelihood estimate does not exist")]
    Separation(String),
    #[error("no convergence after {iterations} iterations (gradient norm {gradient})")]
    NonConvergence { iterations: usize, gradient: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlrCoefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    /// Wald statistic, reported under the conventional "t value" heading.
    pub t_value: f64,
    pub p_value: f64,
    pub odds_ratio: f64,
    /// 95% Wald interval on the coefficient scale.
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlrFit {
    pub coefficients: Vec<OlrCoefficient>,
    /// `J - 1` increasing cutpoints for the `J` observed levels.
    pub cutpoints: Vec<f64>,
    /// Observed outcome values in level order.
    pub levels: Vec<usize>,
    pub log_likelihood: f64,
    /// Log-likelihood at the start and after every line-searched Newton step. Final polishing
    /// steps, taken once the predicted gain is below rounding, are not recorded.
    pub log_likelihood_history: Vec<f64>,
    pub iterations: usize,
}

struct Problem<'a> {
    x: &'a [Vec<f64>],
    y: Vec<usize>,
    levels: usize,
    p: usize,
}

impl Problem<'_> {
    fn thresholds(&self, params: &DVector<f64>) -> Option<Vec<f64>> {
        let theta: Vec<f64> = params.iter().take(self.levels - 1).copied().collect();
        theta.windows(2).all(|w| w[0] < w[1]).then_some(theta)
    }

    fn eta(&self, params: &DVector<f64>, row: &[f64]) -> f64 {
        let beta = params.rows(self.levels - 1, self.p);
        row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum()
    }

    /// Log-likelihood, or `None` when the cutpoints are out of order or a probability underflows.
    fn log_likelihood(&self, params: &DVector<f64>) -> Option<f64> {
        let theta = self.thresholds(params)?;
        let mut ll = 0.0;
        for (row, &j) in self.x.iter().zip(&self.y) {
            let eta = self.eta(params, row);
            let upper = if j + 1 < self.levels {
                logistic(theta[j] - eta)
            } else {
                1.0
            };
            let lower = if j > 0 {
                logistic(theta[j - 1] - eta)
            } else {
                0.0
            };
            let prob = upper - lower;
            // NaN fails too.
            if prob.is_nan() || prob <= 0.0 {
                return None;
            }
            ll += prob.ln();
        }
        ll.is_finite().then_some(ll)
    }

    fn gradient_hessian(&self, params: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let theta = self.thresholds(params).expect("ordered cutpoints");
        let dim = params.len();
        let mut g = DVector::zeros(dim);
        let mut h = DMatrix::zeros(dim, dim);
        let density = |z: f64| {
            let f = logistic(z);
            (f * (1.0 - f), f * (1.0 - f) * (1.0 - 2.0 * f))
        };
        for (row, &j) in self.x.iter().zip(&self.y) {
            let eta = self.eta(params, row);
            let has_a = j + 1 < self.levels;
            let has_b = j > 0;
            let (fa, dfa, pa) = if has_a {
                let a = theta[j] - eta;
                let (f, df) = density(a);
                (f, df, logistic(a))
            } else {
                (0.0, 0.0, 1.0)
            };
            let (fb, dfb, pb) = if has_b {
                let b = theta[j - 1] - eta;
                let (f, df) = density(b);
                (f, df, logistic(b))
            } else {
                (0.0, 0.0, 0.0)
            };
            let d = pa - pb;
            let la = fa / d;
            let lb = -fb / d;
            let laa = dfa / d - la * la;
            let lbb = -dfb / d - lb * lb;
            let lab = -la * lb;

            // Derivatives of the two linear predictors with respect to the parameters.
            let mut ca = DVector::zeros(dim);
            let mut cb = DVector::zeros(dim);
            if has_a {
                ca[j] = 1.0;
            }
            if has_b {
                cb[j - 1] = 1.0;
            }
            for (k, &v) in row.iter().enumerate() {
                let idx = self.levels - 1 + k;
                if has_a {
                    ca[idx] = -v;
                }
                if has_b {
                    cb[idx] = -v;
                }
            }
            g += &ca * la + &cb * lb;
            h += &ca * ca.transpose() * laa
                + &cb * cb.transpose() * lbb
                + (&ca * cb.transpose() + &cb * ca.transpose()) * lab;
        }
        (g, h)
    }
}

/// Fits the model by Newton–Raphson with step halving. `x` holds one row of predictor values per
/// observation (rows may be empty for an intercept-only model) and `y` the ordinal outcomes.
/// Outcome values need not be contiguous; observed values are ranked into levels.
pub fn fit_olr(x: &[Vec<f64>], y: &[usize], names: &[&str]) -> Result<OlrFit, OlrError> {
    if x.len() != y.len() || x.is_empty() {
        return Err(OlrError::LengthMismatch {
            rows: x.len(),
            outcomes: y.len(),
        });
    }
    let p = names.len();
    assert!(
        x.iter().all(|r| r.len() == p),
        "every row needs one value per predictor name"
    );

    let mut levels: Vec<usize> = y.to_vec();
    levels.sort_unstable();
    levels.dedup();
    if levels.len() < 2 {
        return Err(OlrError::TooFewLevels);
    }
    for (k, name) in names.iter().enumerate() {
        let first = x[0][k];
        if x.iter().all(|r| r[k] == first) {
            return Err(OlrError::DegenerateDesign(name.to_string()));
        }
    }
    let problem = Problem {
        x,
        y: y.iter().map(|v| levels.binary_search(v).unwrap()).collect(),
        levels: levels.len(),
        p,
    };

    // Start from the marginal cumulative proportions with zero slopes.
    let n = y.len() as f64;
    let mut params = DVector::zeros(levels.len() - 1 + p);
    let mut cumulative = 0usize;
    for j in 0..levels.len() - 1 {
        cumulative += problem.y.iter().filter(|&&v| v == j).count();
        params[j] = logit(cumulative as f64 / n);
    }

    let mut ll = problem
        .log_likelihood(&params)
        .expect("initial cutpoints are ordered");
    let mut history = vec![ll];
    let mut iterations = 0;
    loop {
        let (g, h) = problem.gradient_hessian(&params);
        let grad_norm = g.amax();
        if grad_norm < GRAD_TOL {
            break;
        }
        if iterations == MAX_ITERS {
            return Err(OlrError::NonConvergence {
                iterations,
                gradient: grad_norm,
            });
        }
        let neg_h = -&h;
        let step = match neg_h.clone().cholesky() {
            Some(c) => c.solve(&g),
            None => match neg_h.lu().solve(&g) {
                Some(s) => s,
                None => return Err(separation(&params, &problem, names)),
            },
        };

        iterations += 1;
        let gain = 0.5 * g.dot(&step);
        if gain <= 1e-11 * (1.0 + ll.abs()) {
            // The predicted improvement is below the rounding noise of the objective, so a line
            // search cannot judge the step. Newton is in its quadratic phase here; take it whole.
            params += &step;
            ll = problem
                .log_likelihood(&params)
                .ok_or(OlrError::NonConvergence {
                    iterations,
                    gradient: grad_norm,
                })?;
            continue;
        }

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let candidate = &params + &step * scale;
            if let Some(new_ll) = problem.log_likelihood(&candidate) {
                if new_ll > ll {
                    accepted = Some((candidate, new_ll));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((candidate, new_ll)) = accepted else {
            return Err(OlrError::NonConvergence {
                iterations,
                gradient: grad_norm,
            });
        };
        params = candidate;
        ll = new_ll;
        history.push(ll);
        if p > 0 && params.rows(levels.len() - 1, p).amax() > SEPARATION_BOUND {
            return Err(separation(&params, &problem, names));
        }
    }

    if p > 0 && params.rows(levels.len() - 1, p).amax() > SEPARATION_BOUND {
        return Err(separation(&params, &problem, names));
    }
    let (_, h) = problem.gradient_hessian(&params);
    let cov = (-h)
        .try_inverse()
        .ok_or_else(|| separation(&params, &problem, names))?;
    let offset = levels.len() - 1;
    let coefficients = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let estimate = params[offset + k];
            let std_error = cov[(offset + k, offset + k)].sqrt();
            let t_value = estimate / std_error;
            OlrCoefficient {
                name: name.to_string(),
                estimate,
                std_error,
                t_value,
                p_value: normal_two_sided(t_value),
                odds_ratio: estimate.exp(),
                ci_low: estimate - Z_975 * std_error,
                ci_high: estimate + Z_975 * std_error,
            }
        })
        .collect();
    Ok(OlrFit {
        coefficients,
        cutpoints: params.iter().take(offset).copied().collect(),
        levels,
        log_likelihood: ll,
        log_likelihood_history: history,
        iterations,
    })
}

fn separation(params: &DVector<f64>, problem: &Problem<'_>, names: &[&str]) -> OlrError {
    let beta = params.rows(problem.levels - 1, problem.p);
    let worst = beta.iamax();
    OlrError::Separation(
        names
            .get(worst)
            .map_or_else(|| "cutpoints".into(), |n| n.to_string()),
    )
}
