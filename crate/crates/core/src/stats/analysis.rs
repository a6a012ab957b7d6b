//! The experiment report: treatment ANOVAs within each cohort, pairwise Welch tests, arm means,
//! and the ordinal regression of survey satisfaction.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::olr::{fit_olr, OlrError, OlrFit};
use super::{likert_bin, one_way_anova, stars, welch_t, StatsError, TestResult};
use crate::diversity::Cohort;
use crate::experiment::{Arm, Enrollment, Metric, MetricsRecord, Treatment};
use crate::ids::UserId;

/// Survey items in column order.
pub const SURVEY_QUESTIONS: [&str; 8] = [
    "accuracy",
    "diversity",
    "novelty",
    "level_of_effort",
    "trustworthiness",
    "ease_of_use",
    "satisfaction",
    "usage_frequency",
];

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("window `{0}` has no metrics records")]
    MissingWindow(String),
    #[error("survey line {line}: {message}")]
    Survey { line: usize, message: String },
    #[error("survey regression: {0}")]
    Olr(#[from] OlrError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub user_id: UserId,
    pub arm: Arm,
    /// Likert score per question name.
    pub scores: BTreeMap<String, u8>,
    pub comment: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub window: String,
    pub arm: Arm,
    pub metric: Metric,
    pub n: usize,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaRow {
    pub window: String,
    pub cohort: Cohort,
    pub metric: Metric,
    pub result: Result<TestResult, String>,
}

/// Welch test of `a` against `b`; the effect size is Cohen's d in the same direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub window: String,
    pub metric: Metric,
    pub a: Arm,
    pub b: Arm,
    pub result: Result<TestResult, String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub means: Vec<MeanRow>,
    pub anova: Vec<AnovaRow>,
    pub pairwise: Vec<PairRow>,
    pub survey: Option<OlrFit>,
}

/// Slider counts exist only for the slider interface, so that metric is compared across
/// cohorts within it and nowhere else.
fn metric_applies(metric: Metric, treatment: Treatment) -> bool {
    metric != Metric::SliderInteractions || treatment == Treatment::BrcDs
}

fn sample(
    records: &BTreeMap<UserId, MetricsRecord>,
    enrollment: &Enrollment,
    arm: Arm,
    metric: Metric,
) -> Vec<f64> {
    records
        .iter()
        .filter(|(u, _)| enrollment.arm(**u).is_ok_and(|a| a == arm))
        .filter_map(|(_, r)| metric.value(r))
        .collect()
}

fn tested(r: Result<TestResult, StatsError>) -> Result<TestResult, String> {
    r.map_err(|e| e.to_string())
}

/// Runs the full battery over named windows (e.g. pre, during, post).
pub fn analyze_experiment(
    windows: &[(String, BTreeMap<UserId, MetricsRecord>)],
    enrollment: &Enrollment,
) -> Result<Report, AnalysisError> {
    let mut report = Report::default();
    for (name, records) in windows {
        if records.is_empty() {
            return Err(AnalysisError::MissingWindow(name.clone()));
        }
        let samples: BTreeMap<(Arm, Metric), Vec<f64>> = Arm::all()
            .flat_map(|arm| Metric::ALL.map(|m| (arm, m)))
            .map(|(arm, m)| ((arm, m), sample(records, enrollment, arm, m)))
            .collect();
        let get = |arm: Arm, m: Metric| samples[&(arm, m)].as_slice();

        for arm in Arm::all() {
            for metric in Metric::ALL {
                let xs = get(arm, metric);
                report.means.push(MeanRow {
                    window: name.clone(),
                    arm,
                    metric,
                    n: xs.len(),
                    mean: (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64),
                });
            }
        }

        for metric in Metric::ALL {
            for cohort in Cohort::ALL {
                let arm = |treatment| Arm { cohort, treatment };
                if metric != Metric::SliderInteractions {
                    let groups: Vec<&[f64]> = Treatment::ALL
                        .iter()
                        .map(|&t| get(arm(t), metric))
                        .collect();
                    report.anova.push(AnovaRow {
                        window: name.clone(),
                        cohort,
                        metric,
                        result: tested(one_way_anova(&groups)),
                    });
                    for (i, &ta) in Treatment::ALL.iter().enumerate() {
                        for &tb in &Treatment::ALL[i + 1..] {
                            // Later treatments first, so a positive t means the new interface is higher.
                            let (a, b) = (arm(tb), arm(ta));
                            report.pairwise.push(PairRow {
                                window: name.clone(),
                                metric,
                                a,
                                b,
                                result: tested(welch_t(get(a, metric), get(b, metric))),
                            });
                        }
                    }
                }
            }
            for treatment in Treatment::ALL
                .into_iter()
                .filter(|&t| metric_applies(metric, t))
            {
                let a = Arm {
                    cohort: Cohort::Diverse,
                    treatment,
                };
                let b = Arm {
                    cohort: Cohort::NonDiverse,
                    treatment,
                };
                report.pairwise.push(PairRow {
                    window: name.clone(),
                    metric,
                    a,
                    b,
                    result: tested(welch_t(get(a, metric), get(b, metric))),
                });
            }
        }
    }
    Ok(report)
}

/// Name of a regression predictor as printed in the coefficient table.
fn predictor_label(name: &str) -> String {
    let mut s = name.to_string();
    s[..1].make_ascii_uppercase();
    s
}

/// Proportional-odds regression of binned satisfaction on the interface coding, the cohort
/// coding, and the binned answers to the other questions.
pub fn analyze_survey(responses: &[SurveyResponse]) -> Result<OlrFit, AnalysisError> {
    let questions: Vec<&str> = SURVEY_QUESTIONS
        .iter()
        .copied()
        .filter(|q| *q != "satisfaction")
        .collect();
    let mut labels = vec!["Interface".to_string(), "Consumption_habit".to_string()];
    labels.extend(questions.iter().map(|q| predictor_label(q)));
    let mut x = Vec::with_capacity(responses.len());
    let mut y = Vec::with_capacity(responses.len());
    for r in responses {
        let bin = |q: &str| -> Result<usize, AnalysisError> {
            let score = r
                .scores
                .get(q)
                .copied()
                .ok_or_else(|| AnalysisError::Survey {
                    line: 0,
                    message: format!("user {} has no `{q}` answer", r.user_id),
                })?;
            likert_bin(i64::from(score))
                .map(|b| b.level())
                .map_err(|e| AnalysisError::Survey {
                    line: 0,
                    message: e.to_string(),
                })
        };
        let mut row = vec![r.arm.treatment.ordinal(), r.arm.cohort.ordinal()];
        for q in &questions {
            row.push(bin(q)? as f64);
        }
        x.push(row);
        y.push(bin("satisfaction")?);
    }
    let names: Vec<&str> = labels.iter().map(String::as_str).collect();
    Ok(fit_olr(&x, &y, &names)?)
}

/// Survey CSV: `user_id`, one column per question, optional `comment`. Arms come from the
/// enrollment; responses from unenrolled users are rejected.
pub fn read_survey(
    path: &Path,
    enrollment: &Enrollment,
) -> Result<Vec<SurveyResponse>, AnalysisError> {
    let mut r = csv::Reader::from_reader(File::open(path)?);
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let user_col = col("user_id").ok_or_else(|| AnalysisError::Survey {
        line: 1,
        message: "missing user_id column".into(),
    })?;
    let mut question_cols = Vec::new();
    for q in SURVEY_QUESTIONS {
        let c = col(q).ok_or_else(|| AnalysisError::Survey {
            line: 1,
            message: format!("missing `{q}` column"),
        })?;
        question_cols.push((q, c));
    }
    let comment_col = col("comment");
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let err = |message: String| AnalysisError::Survey { line, message };
        let user = UserId(
            rec[user_col]
                .trim()
                .parse()
                .map_err(|_| err(format!("bad user id {:?}", &rec[user_col])))?,
        );
        let arm = enrollment.arm(user).map_err(|e| err(e.to_string()))?;
        let mut scores = BTreeMap::new();
        for (q, c) in &question_cols {
            let score: i64 = rec[*c]
                .trim()
                .parse()
                .map_err(|_| err(format!("bad `{q}` score {:?}", &rec[*c])))?;
            likert_bin(score).map_err(|e| err(e.to_string()))?;
            scores.insert(q.to_string(), score as u8);
        }
        let comment = comment_col
            .map(|c| rec[c].to_string())
            .filter(|s| !s.is_empty());
        out.push(SurveyResponse {
            user_id: user,
            arm,
            scores,
            comment,
        });
    }
    Ok(out)
}

pub fn write_survey(path: &Path, responses: &[SurveyResponse]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    let mut header = vec!["user_id"];
    header.extend(SURVEY_QUESTIONS);
    header.push("comment");
    w.write_record(&header)?;
    for r in responses {
        let mut row = vec![r.user_id.to_string()];
        row.extend(
            SURVEY_QUESTIONS
                .iter()
                .map(|q| r.scores.get(*q).map_or(String::new(), u8::to_string)),
        );
        row.push(r.comment.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.6}"))
}

impl Report {
    /// Every test outcome, ANOVAs first.
    pub fn p_values(&self) -> impl Iterator<Item = f64> + '_ {
        let a = self
            .anova
            .iter()
            .filter_map(|r| r.result.as_ref().ok().map(|t| t.p_value));
        let b = self
            .pairwise
            .iter()
            .filter_map(|r| r.result.as_ref().ok().map(|t| t.p_value));
        a.chain(b)
    }

    pub fn pair(&self, window: &str, metric: Metric, a: Arm, b: Arm) -> Option<&PairRow> {
        self.pairwise.iter().find(|r| {
            r.window == window
                && r.metric == metric
                && ((r.a == a && r.b == b) || (r.a == b && r.b == a))
        })
    }

    pub fn mean(&self, window: &str, arm: Arm, metric: Metric) -> Option<f64> {
        self.means
            .iter()
            .find(|r| r.window == window && r.arm == arm && r.metric == metric)
            .and_then(|r| r.mean)
    }

    /// Writes `means.csv`, `anova.csv`, `pairwise.csv`, `summary.txt`, and `olr.csv` when a
    /// survey fit is present.
    pub fn write(&self, dir: &Path) -> Result<(), AnalysisError> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("means.csv"))?;
        w.write_record(["window", "arm", "metric", "n", "mean"])?;
        for r in &self.means {
            w.write_record([
                r.window.clone(),
                r.arm.to_string(),
                r.metric.to_string(),
                r.n.to_string(),
                fmt_opt(r.mean),
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("anova.csv"))?;
        w.write_record([
            "window",
            "cohort",
            "metric",
            "F",
            "dof_between",
            "dof_within",
            "p",
            "stars",
            "error",
        ])?;
        for r in &self.anova {
            let mut row = vec![r.window.clone(), r.cohort.to_string(), r.metric.to_string()];
            row.extend(test_columns(&r.result, false));
            w.write_record(&row)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("pairwise.csv"))?;
        w.write_record([
            "window", "metric", "a", "b", "t", "dof", "p", "cohens_d", "stars", "error",
        ])?;
        for r in &self.pairwise {
            let mut row = vec![
                r.window.clone(),
                r.metric.to_string(),
                r.a.to_string(),
                r.b.to_string(),
            ];
            row.extend(test_columns(&r.result, true));
            w.write_record(&row)?;
        }
        w.flush()?;

        if let Some(fit) = &self.survey {
            let mut w = csv::Writer::from_path(dir.join("olr.csv"))?;
            w.write_record([
                "predictor",
                "coef",
                "std_error",
                "t_value",
                "p_value",
                "odds_ratio",
                "ci_2.5",
                "ci_97.5",
            ])?;
            for c in &fit.coefficients {
                w.write_record([
                    c.name.clone(),
                    format!("{:.6}", c.estimate),
                    format!("{:.6}", c.std_error),
                    format!("{:.6}", c.t_value),
                    format!("{:.6e}", c.p_value),
                    format!("{:.6}", c.odds_ratio),
                    format!("{:.6}", c.ci_low),
                    format!("{:.6}", c.ci_high),
                ])?;
            }
            w.flush()?;
        }
        fs::write(dir.join("summary.txt"), self.summary())?;
        Ok(())
    }

    /// Plain-text rendering: the mean table per window, then every significant comparison.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let mut windows: Vec<&str> = Vec::new();
        for r in &self.means {
            if !windows.contains(&r.window.as_str()) {
                windows.push(&r.window);
            }
        }
        for window in windows {
            let _ = writeln!(out, "== {window} ==");
            let _ = write!(out, "{:<12}", "arm");
            for m in Metric::ALL {
                let _ = write!(out, " {:>18}", m.name());
            }
            out.push('\n');
            for arm in Arm::all() {
                let _ = write!(out, "{:<12}", arm.to_string());
                for m in Metric::ALL {
                    let cell = match self.mean(window, arm, m) {
                        Some(v) if metric_applies(m, arm.treatment) => format!("{v:.3}"),
                        _ => "-".to_string(),
                    };
                    let _ = write!(out, " {cell:>18}");
                }
                out.push('\n');
            }
            let _ = writeln!(out, "significant (* p<.1, ** p<.05, *** p<.01):");
            for r in self.anova.iter().filter(|r| r.window == window) {
                if let Ok(t) = &r.result {
                    if t.p_value < 0.1 {
                        let _ = writeln!(
                            out,
                            "  ANOVA {} {}: F({}, {}) = {:.3}, p = {:.4} {}",
                            r.cohort,
                            r.metric,
                            t.dof,
                            t.dof_within.unwrap_or(f64::NAN),
                            t.statistic,
                            t.p_value,
                            stars(t.p_value)
                        );
                    }
                }
            }
            for r in self.pairwise.iter().filter(|r| r.window == window) {
                if let Ok(t) = &r.result {
                    if t.p_value < 0.1 {
                        let _ = writeln!(
                            out,
                            "  {} vs {} {}: t = {:.3}, DOF = {:.3}, p = {:.4}, d = {:.3} {}",
                            r.a,
                            r.b,
                            r.metric,
                            t.statistic,
                            t.dof,
                            t.p_value,
                            t.effect_size.unwrap_or(f64::NAN),
                            stars(t.p_value)
                        );
                    }
                }
            }
            out.push('\n');
        }
        if let Some(fit) = &self.survey {
            let _ = writeln!(out, "== satisfaction (ordinal logistic regression) ==");
            for c in &fit.coefficients {
                let _ = writeln!(
                    out,
                    "  {:<18} coef {:>8.3}  se {:.3}  t {:>7.3}  p {:.2e} {}",
                    c.name,
                    c.estimate,
                    c.std_error,
                    c.t_value,
                    c.p_value,
                    stars(c.p_value)
                );
            }
            let cuts: Vec<String> = fit.cutpoints.iter().map(|c| format!("{c:.3}")).collect();
            let _ = writeln!(out, "  cutpoints {}", cuts.join(" "));
        }
        out
    }
}

fn test_columns(r: &Result<TestResult, String>, effect: bool) -> Vec<String> {
    match r {
        Ok(t) => {
            let mut cols = vec![format!("{:.6}", t.statistic), format!("{:.6}", t.dof)];
            if effect {
                cols.push(format!("{:.6e}", t.p_value));
                cols.push(fmt_opt(t.effect_size));
            } else {
                cols.push(fmt_opt(t.dof_within));
                cols.push(format!("{:.6e}", t.p_value));
            }
            cols.push(stars(t.p_value).to_string());
            cols.push(String::new());
            cols
        }
        Err(e) => {
            let mut cols = vec![String::new(); 5];
            cols.push(e.clone());
            cols
        }
    }
}
