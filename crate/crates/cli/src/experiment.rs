use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use divrec_core::experiment::{
    compute_all_metrics, read_events, simulate_survey, simulate_users, write_events, BehaviorRates,
    DateWindow, Enrollment, Rate, RateShift, SimConfig, SurveyEffects,
    DEFAULT_SESSION_TIMEOUT_SECS,
};
use divrec_core::manifest::Manifest;
use divrec_core::stats::analysis::{read_survey, write_survey, SURVEY_QUESTIONS};
use divrec_core::stats::{analyze_experiment, analyze_survey};
use divrec_core::{Arm, MetricsRecord, UserId};
use divrec_service::config::{ENROLLMENT_FILE, EVENT_LOG_FILE};
use tracing::info;

use crate::common::{
    create_dir, genome, genome_inputs, input, output, windows, write_manifest, DURING_WINDOW,
    POST_WINDOW, PRE_WINDOW,
};
use crate::failure::{Classify, Failure, StageResult};

const WINDOW_NAMES: [&str; 3] = ["pre", "during", "post"];

/// `ARM:RATE:FACTOR[@WINDOW]`, e.g. `ND-BRC_DS:logins:1.2@during`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftSpec(pub RateShift);

impl FromStr for ShiftSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (body, window) = match s.split_once('@') {
            Some((b, w)) => {
                let i = WINDOW_NAMES
                    .iter()
                    .position(|n| *n == w)
                    .ok_or_else(|| format!("unknown window {w:?}; expected pre, during or post"))?;
                (b, Some(i))
            }
            None => (s, None),
        };
        let parts: Vec<&str> = body.split(':').collect();
        let [arm, rate, factor] = parts[..] else {
            return Err(format!("{s:?} is not ARM:RATE:FACTOR[@WINDOW]"));
        };
        let factor: f64 = factor
            .parse()
            .map_err(|_| format!("bad factor {factor:?}"))?;
        if !(factor.is_finite() && factor >= 0.0) {
            return Err(format!(
                "factor must be finite and non-negative, got {factor}"
            ));
        }
        Ok(ShiftSpec(RateShift {
            arm: arm.parse::<Arm>()?,
            rate: rate.parse::<Rate>()?,
            factor,
            window,
        }))
    }
}

/// `NAME=VALUE` coefficient for the simulated satisfaction model.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectSpec(pub String, pub f64);

impl FromStr for EffectSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, value) = s
            .split_once('=')
            .ok_or_else(|| format!("{s:?} is not NAME=VALUE"))?;
        let known = ["interface", "consumption_habit"].into_iter().chain(
            SURVEY_QUESTIONS
                .iter()
                .copied()
                .filter(|q| *q != "satisfaction"),
        );
        if !known.clone().any(|k| k == name) {
            return Err(format!(
                "unknown predictor {name:?}; expected one of {}",
                known.collect::<Vec<_>>().join(", ")
            ));
        }
        let value: f64 = value
            .parse()
            .map_err(|_| format!("bad coefficient {value:?}"))?;
        Ok(EffectSpec(name.to_string(), value))
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Corpus directory; its genome gives the catalog and the rating-diversity metric.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Directory for events.jsonl, arms.csv, survey.csv, truth.json and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 300)]
    pub users_per_arm: usize,
    #[arg(long, default_value = PRE_WINDOW)]
    pub pre: DateWindow,
    #[arg(long, default_value = DURING_WINDOW)]
    pub during: DateWindow,
    #[arg(long, default_value = POST_WINDOW)]
    pub post: DateWindow,
    /// Planted effect, ARM:RATE:FACTOR[@WINDOW], e.g. ND-BRC_DS:logins:1.2@during. Rates:
    /// logins, session_minutes, page_views, ratings, wishlist, slider. Repeatable.
    #[arg(long)]
    pub shift: Vec<ShiftSpec>,
    /// Gamma shape of each user's login-rate multiplier; 0 makes users identical.
    #[arg(long, default_value_t = 3.0)]
    pub heterogeneity: f64,
    #[arg(long, default_value_t = 1)]
    pub first_user_id: u32,
    /// Satisfaction-model coefficient, NAME=VALUE (interface, consumption_habit, or a survey
    /// question). Repeatable; unset predictors have no effect.
    #[arg(long)]
    pub survey_effect: Vec<EffectSpec>,
    /// The two satisfaction cutpoints, negative|neutral and neutral|positive.
    #[arg(long, num_args = 2, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [-1.0, 1.0])]
    pub survey_cutpoints: Vec<f64>,
}

pub fn simulate(args: &SimulateArgs) -> StageResult {
    let genome = genome(&args.data_dir)?;
    let [lo, hi] = args.survey_cutpoints[..] else {
        return Err(Failure::user("--survey-cutpoints takes two values"));
    };
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(Failure::user("--survey-cutpoints must be increasing"));
    }
    if args.heterogeneity < 0.0 {
        return Err(Failure::user("--heterogeneity must be non-negative"));
    }
    let config = SimConfig {
        users_per_arm: args.users_per_arm,
        windows: vec![args.pre, args.during, args.post],
        base: BehaviorRates::default(),
        shifts: args.shift.iter().map(|s| s.0).collect(),
        heterogeneity: args.heterogeneity,
        catalog: genome.movie_ids().collect(),
        first_user_id: args.first_user_id,
    };
    let effects = SurveyEffects {
        coefficients: args
            .survey_effect
            .iter()
            .map(|e| (e.0.clone(), e.1))
            .collect(),
        cutpoints: [lo, hi],
    };
    let sim = simulate_users(&config, &genome, args.seed);
    // A separate stream, so adding survey effects never changes the interaction log.
    let survey = simulate_survey(&sim.enrollment, &effects, args.seed.wrapping_add(1));
    info!(
        users = sim.enrollment.len(),
        events = sim.events.len(),
        "simulated"
    );

    create_dir(&args.out)?;
    let events_path = args.out.join(EVENT_LOG_FILE);
    let file =
        File::create(&events_path).internal(format!("creating {}", events_path.display()))?;
    write_events(BufWriter::new(file), &sim.events).internal("writing events")?;
    sim.enrollment
        .write_csv(&args.out.join(ENROLLMENT_FILE))
        .internal("writing arms")?;
    write_survey(&args.out.join("survey.csv"), &survey).internal("writing the survey")?;
    let truth: BTreeMap<&str, &BTreeMap<UserId, MetricsRecord>> =
        WINDOW_NAMES.into_iter().zip(&sim.truth).collect();
    let text = serde_json::to_string_pretty(&truth).internal("serializing ground truth")?;
    fs::write(args.out.join("truth.json"), format!("{text}\n")).internal("writing truth.json")?;

    let mut manifest = Manifest::new("simulate")
        .seed(args.seed)
        .param("config", SimConfigRecord::of(&config))
        .param("survey", &effects);
    genome_inputs(&mut manifest, &args.data_dir)?;
    output(&mut manifest, &args.out)?;
    write_manifest(&manifest, &args.out)
}

/// The simulator config without its catalog, which the genome inputs already pin down.
#[derive(serde::Serialize)]
struct SimConfigRecord<'a> {
    users_per_arm: usize,
    windows: Vec<String>,
    base: &'a BehaviorRates,
    shifts: &'a [RateShift],
    heterogeneity: f64,
    first_user_id: u32,
}

impl<'a> SimConfigRecord<'a> {
    fn of(c: &'a SimConfig) -> Self {
        Self {
            users_per_arm: c.users_per_arm,
            windows: c.windows.iter().map(ToString::to_string).collect(),
            base: &c.base,
            shifts: &c.shifts,
            heterogeneity: c.heterogeneity,
            first_user_id: c.first_user_id,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// JSON-lines interaction log.
    #[arg(long)]
    pub events: PathBuf,
    /// Enrollment CSV (user_id,cohort,treatment).
    #[arg(long)]
    pub arms: PathBuf,
    /// Corpus directory; only the genome is read, for rating diversity.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Survey CSV: user_id, one column per question, optional comment.
    #[arg(long)]
    pub survey: Option<PathBuf>,
    #[arg(long, default_value = PRE_WINDOW)]
    pub pre: DateWindow,
    #[arg(long, default_value = DURING_WINDOW)]
    pub during: DateWindow,
    #[arg(long, default_value = POST_WINDOW)]
    pub post: DateWindow,
    #[arg(long, default_value_t = DEFAULT_SESSION_TIMEOUT_SECS)]
    pub session_timeout_secs: i64,
    /// Directory for the CSV tables, summary.txt and the manifest.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn analyze(args: &AnalyzeArgs) -> StageResult {
    let file = File::open(&args.events).user(format!("opening {}", args.events.display()))?;
    let events =
        read_events(BufReader::new(file)).user(format!("reading {}", args.events.display()))?;
    let enrollment =
        Enrollment::read_csv(&args.arms).user(format!("reading {}", args.arms.display()))?;
    let genome = genome(&args.data_dir)?;
    if args.session_timeout_secs <= 0 {
        return Err(Failure::user("--session-timeout-secs must be positive"));
    }
    let users: Vec<UserId> = enrollment.iter().map(|(u, _)| u).collect();
    let metrics: Vec<(String, BTreeMap<UserId, MetricsRecord>)> =
        windows(args.pre, args.during, args.post)
            .into_iter()
            .map(|(name, w)| {
                (
                    name.to_string(),
                    compute_all_metrics(&users, &events, w, &genome, args.session_timeout_secs),
                )
            })
            .collect();
    let mut report =
        analyze_experiment(&metrics, &enrollment).user("analyzing interaction metrics")?;

    let mut manifest = Manifest::new("analyze")
        .param(
            "windows",
            windows(args.pre, args.during, args.post).map(|(n, w)| format!("{n}={w}")),
        )
        .param("session_timeout_secs", args.session_timeout_secs);
    input(&mut manifest, &args.events)?;
    input(&mut manifest, &args.arms)?;
    genome_inputs(&mut manifest, &args.data_dir)?;
    if let Some(path) = &args.survey {
        let responses =
            read_survey(path, &enrollment).user(format!("reading {}", path.display()))?;
        report.survey = Some(analyze_survey(&responses).user("fitting the satisfaction model")?);
        input(&mut manifest, path)?;
    }

    create_dir(&args.out)?;
    report
        .write(&args.out)
        .internal(format!("writing the report to {}", args.out.display()))?;
    print!("{}", report.summary());
    output(&mut manifest, &args.out)?;
    write_manifest(&manifest, &args.out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use divrec_core::{Cohort, Treatment};

    #[test]
    fn shift_spec_parses() {
        let s: ShiftSpec = "ND-BRC_DS:logins:1.2@during".parse().unwrap();
        assert_eq!(
            s.0,
            RateShift {
                arm: Arm {
                    cohort: Cohort::NonDiverse,
                    treatment: Treatment::BrcDs
                },
                rate: Rate::Logins,
                factor: 1.2,
                window: Some(1),
            }
        );
        assert_eq!(
            "D-Control:wishlist:0.5"
                .parse::<ShiftSpec>()
                .unwrap()
                .0
                .window,
            None
        );
        for bad in [
            "ND-BRC:logins",
            "ND-BRC:logins:x",
            "ND-BRC:logins:1.2@later",
            "ND-BRC:naps:2",
            "ND-BRC:logins:-1",
        ] {
            assert!(bad.parse::<ShiftSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn effect_spec_rejects_unknown_and_outcome() {
        assert_eq!(
            "novelty=0.4".parse::<EffectSpec>().unwrap(),
            EffectSpec("novelty".into(), 0.4)
        );
        assert!("satisfaction=1".parse::<EffectSpec>().is_err());
        assert!("mood=1".parse::<EffectSpec>().is_err());
    }
}
