//! Hypothesis tests and effect sizes for the experiment analysis.
//!
//! Tail probabilities come from a continued-fraction evaluation of the regularized incomplete
//! beta function (see [`special`]), so no statistics crate is needed at runtime.

pub mod analysis;
mod olr;
pub mod special;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analysis::{analyze_experiment, analyze_survey, Report, SurveyResponse};
pub use olr::{fit_olr, OlrCoefficient, OlrError, OlrFit};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least two groups")]
    TooFewGroups,
    #[error("group {group} has {n} observations; at least 2 required")]
    TooFewObservations { group: usize, n: usize },
    #[error("both samples have zero variance")]
    ZeroVariance,
    #[error("likert score {0} is not on the 1..=5 grid")]
    OffGridLikert(i64),
}

/// Outcome of a test. For ANOVA `dof` is the between-groups value and `dof_within` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub dof: f64,
    pub dof_within: Option<f64>,
    pub p_value: f64,
    pub effect_size: Option<f64>,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with `n - 1` denominator.
fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

fn check_sizes(samples: &[&[f64]]) -> Result<(), StatsError> {
    match samples.iter().position(|s| s.len() < 2) {
        Some(group) => Err(StatsError::TooFewObservations {
            group,
            n: samples[group].len(),
        }),
        None => Ok(()),
    }
}

pub fn one_way_anova(groups: &[&[f64]]) -> Result<TestResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups);
    }
    check_sizes(groups)?;
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;
    let ss_between: f64 = groups
        .iter()
        .map(|g| g.len() as f64 * (mean(g) - grand).powi(2))
        .sum();
    let ss_within: f64 = groups
        .iter()
        .map(|g| {
            let m = mean(g);
            g.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
        })
        .sum();
    let df_between = (groups.len() - 1) as f64;
    let df_within = (n - groups.len()) as f64;
    if ss_within == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let f = (ss_between / df_between) / (ss_within / df_within);
    Ok(TestResult {
        statistic: f,
        dof: df_between,
        dof_within: Some(df_within),
        p_value: special::f_upper(f, df_between, df_within),
        effect_size: None,
    })
}

/// Two-sample t-test with pooled variance. Carries Cohen's d as its effect size.
pub fn pooled_t(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    check_sizes(&[a, b])?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let sp2 = pooled_variance(a, b);
    if sp2 == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let dof = na + nb - 2.0;
    let t = (mean(a) - mean(b)) / (sp2 * (1.0 / na + 1.0 / nb)).sqrt();
    Ok(TestResult {
        statistic: t,
        dof,
        dof_within: None,
        p_value: special::t_two_sided(t, dof),
        effect_size: Some((mean(a) - mean(b)) / sp2.sqrt()),
    })
}

fn pooled_variance(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    ((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / (na + nb - 2.0)
}

/// Unequal-variance t-test with Welch–Satterthwaite degrees of freedom. Carries Cohen's d as
/// its effect size when the pooled variance is nonzero.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    check_sizes(&[a, b])?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    if va == 0.0 && vb == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let t = (mean(a) - mean(b)) / (va + vb).sqrt();
    let dof = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(TestResult {
        statistic: t,
        dof,
        dof_within: None,
        p_value: special::t_two_sided(t, dof),
        effect_size: cohens_d(a, b).ok(),
    })
}

/// Standardized mean difference `(mean_a - mean_b) / s_pooled`.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    check_sizes(&[a, b])?;
    let sp2 = pooled_variance(a, b);
    if sp2 == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((mean(a) - mean(b)) / sp2.sqrt())
}

/// Three-way collapse of a five-point Likert response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LikertBin {
    Negative,
    Neutral,
    Positive,
}

impl LikertBin {
    /// 0, 1, 2 in bin order.
    pub fn level(self) -> usize {
        self as usize
    }
}

impl fmt::Display for LikertBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LikertBin::Negative => "negative",
            LikertBin::Neutral => "neutral",
            LikertBin::Positive => "positive",
        })
    }
}

/// 1-2 negative, 3 neutral, 4-5 positive.
pub fn likert_bin(score: i64) -> Result<LikertBin, StatsError> {
    match score {
        1 | 2 => Ok(LikertBin::Negative),
        3 => Ok(LikertBin::Neutral),
        4 | 5 => Ok(LikertBin::Positive),
        other => Err(StatsError::OffGridLikert(other)),
    }
}

/// Significance marker: `***` below .01, `**` below .05, `*` below .1.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}
