//! The 2x3 between-subject experiment: arm assignment, interaction logs, sessions, and the
//! per-user interaction metrics.

mod events;
mod metrics;
mod simulate;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io;
use std::path::Path;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diversity::{Cohort, CohortMember};
use crate::ids::UserId;

pub use events::{
    read_events, sessionize, write_events, EventKind, InteractionEvent, Session,
    DEFAULT_SESSION_TIMEOUT_SECS, EVENT_SCHEMA_VERSION,
};
pub use metrics::{compute_all_metrics, compute_metrics, Metric, MetricsRecord};
pub use simulate::{
    simulate_survey, simulate_users, BehaviorRates, Rate, RateShift, SimConfig, Simulation,
    SurveyEffects,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("user {0} is not enrolled in the experiment")]
    Unenrolled(UserId),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unsupported event schema version {found}")]
    SchemaVersion { line: usize, found: u32 },
    #[error("invalid date window {0:?}; expected YYYY-MM-DD..YYYY-MM-DD")]
    Window(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Recommendation interface shown to a user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Treatment {
    Control,
    #[serde(rename = "BRC")]
    Brc,
    #[serde(rename = "BRC_DS")]
    BrcDs,
}

impl Treatment {
    pub const ALL: [Treatment; 3] = [Treatment::Control, Treatment::Brc, Treatment::BrcDs];

    pub fn code(self) -> &'static str {
        match self {
            Treatment::Control => "Control",
            Treatment::Brc => "BRC",
            Treatment::BrcDs => "BRC_DS",
        }
    }

    /// Regression coding: Control 0, BRC 1, BRC+DS 2.
    pub fn ordinal(self) -> f64 {
        match self {
            Treatment::Control => 0.0,
            Treatment::Brc => 1.0,
            Treatment::BrcDs => 2.0,
        }
    }

    pub fn has_broad_carousel(self) -> bool {
        self != Treatment::Control
    }

    pub fn has_slider(self) -> bool {
        self == Treatment::BrcDs
    }

    /// Text of the information window shown after the first login.
    pub fn info_message(self) -> String {
        let detail = match self {
            Treatment::Brc => {
                "a new carousel that you can find above the top picks carousel on the home page. You may see different content than you're used to."
            }
            Treatment::BrcDs => {
                "a new page with a slider bar control that you can enter by clicking the carousel header or \"adjust\" button next to the top carousel. You will see 5 levels of diversity to toggle with."
            }
            Treatment::Control => {
                "the top-picks carousel. You may see different content than you're used to."
            }
        };
        format!("{INFO_PREFIX}{detail}")
    }
}

const INFO_PREFIX: &str =
    "Dear MovieLens user, we're experimenting with changes related to the movies we show users, particularly -- ";

impl fmt::Display for Treatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Treatment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Control" | "CT" => Ok(Treatment::Control),
            "BRC" => Ok(Treatment::Brc),
            "BRC_DS" | "BRC+DS" => Ok(Treatment::BrcDs),
            other => Err(format!("unknown treatment {other:?}")),
        }
    }
}

/// One of the six experiment cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Arm {
    pub cohort: Cohort,
    pub treatment: Treatment,
}

impl Arm {
    pub fn all() -> impl Iterator<Item = Arm> {
        Cohort::ALL.into_iter().flat_map(|cohort| {
            Treatment::ALL
                .into_iter()
                .map(move |treatment| Arm { cohort, treatment })
        })
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.cohort, self.treatment)
    }
}

/// Parses the display form, e.g. `ND-BRC_DS`.
impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (cohort, treatment) = s
            .split_once('-')
            .ok_or_else(|| format!("arm {s:?} is not of the form COHORT-TREATMENT"))?;
        Ok(Arm {
            cohort: cohort.parse()?,
            treatment: treatment.parse()?,
        })
    }
}

/// Treatment as `sha256(seed || user_id) mod 3`, both little-endian.
pub fn assign_treatment(user: UserId, seed: u64) -> Treatment {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(user.0.to_le_bytes());
    let digest = h.finalize();
    let word = u64::from_le_bytes(digest[..8].try_into().unwrap());
    Treatment::ALL[(word % 3) as usize]
}

pub fn assign_arm(user: UserId, cohort: Cohort, seed: u64) -> Arm {
    Arm {
        cohort,
        treatment: assign_treatment(user, seed),
    }
}

/// Minimum activity for enrollment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityFilter {
    pub min_logins: usize,
    pub min_ratings: usize,
}

impl Default for ActivityFilter {
    fn default() -> Self {
        Self {
            min_logins: 12,
            min_ratings: 20,
        }
    }
}

impl ActivityFilter {
    pub fn admits(&self, logins: usize, ratings: usize) -> bool {
        logins >= self.min_logins && ratings >= self.min_ratings
    }
}

/// The fixed user-to-arm map for one experiment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Enrollment {
    arms: BTreeMap<UserId, Arm>,
}

impl Enrollment {
    pub fn new(members: &[CohortMember], seed: u64) -> Self {
        Self {
            arms: members
                .iter()
                .map(|m| (m.user_id, assign_arm(m.user_id, m.cohort, seed)))
                .collect(),
        }
    }

    pub fn from_arms(arms: impl IntoIterator<Item = (UserId, Arm)>) -> Self {
        Self {
            arms: arms.into_iter().collect(),
        }
    }

    pub fn arm(&self, user: UserId) -> Result<Arm, ExperimentError> {
        self.arms
            .get(&user)
            .copied()
            .ok_or(ExperimentError::Unenrolled(user))
    }

    pub fn iter(&self) -> impl Iterator<Item = (UserId, Arm)> + '_ {
        self.arms.iter().map(|(u, a)| (*u, *a))
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn counts(&self) -> BTreeMap<Arm, usize> {
        let mut out = BTreeMap::new();
        for arm in self.arms.values() {
            *out.entry(*arm).or_default() += 1;
        }
        out
    }

    /// CSV with header `user_id,cohort,treatment`.
    pub fn write_csv(&self, path: &Path) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_writer(File::create(path)?);
        w.write_record(["user_id", "cohort", "treatment"])?;
        for (u, arm) in &self.arms {
            w.write_record([
                u.to_string(),
                arm.cohort.to_string(),
                arm.treatment.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, ExperimentError> {
        let mut r = csv::Reader::from_reader(File::open(path)?);
        let mut arms = BTreeMap::new();
        for (i, rec) in r.deserialize::<(u32, String, String)>().enumerate() {
            let line = i + 2;
            let (user, cohort, treatment) = rec?;
            let parse_err = |message: String| ExperimentError::Parse { line, message };
            let arm = Arm {
                cohort: cohort.parse().map_err(parse_err)?,
                treatment: treatment.parse().map_err(parse_err)?,
            };
            arms.insert(UserId(user), arm);
        }
        Ok(Self { arms })
    }
}

/// Half-open time range `[start, end)` in Unix seconds covering whole UTC days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    pub start: i64,
    pub end: i64,
}

impl DateWindow {
    /// Both dates inclusive.
    pub fn from_dates(first: NaiveDate, last: NaiveDate) -> Self {
        let midnight = |d: NaiveDate| d.and_time(NaiveTime::MIN).and_utc().timestamp();
        Self {
            start: midnight(first),
            end: midnight(last.succ_opt().expect("date in range")),
        }
    }

    pub fn days(&self) -> f64 {
        (self.end - self.start) as f64 / 86_400.0
    }

    pub fn contains(&self, ts: i64) -> bool {
        (self.start..self.end).contains(&ts)
    }

    /// The window right after this one spanning `days` days.
    pub fn following(&self, days: i64) -> Self {
        Self {
            start: self.end,
            end: self.end + days * 86_400,
        }
    }
}

impl FromStr for DateWindow {
    type Err = ExperimentError;

    /// `2022-11-04..2022-12-16`, end date inclusive.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ExperimentError::Window(s.to_string());
        let (a, b) = s.split_once("..").ok_or_else(err)?;
        let first = NaiveDate::parse_from_str(a.trim(), "%Y-%m-%d").map_err(|_| err())?;
        let last = NaiveDate::parse_from_str(b.trim(), "%Y-%m-%d").map_err(|_| err())?;
        if last < first {
            return Err(err());
        }
        Ok(Self::from_dates(first, last))
    }
}

impl fmt::Display for DateWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let day = |ts: i64| {
            chrono::DateTime::from_timestamp(ts, 0)
                .unwrap()
                .date_naive()
        };
        write!(f, "{}..{}", day(self.start), day(self.end - 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_is_stable() {
        for u in 0..100 {
            assert_eq!(
                assign_treatment(UserId(u), 42),
                assign_treatment(UserId(u), 42)
            );
        }
        let differs =
            (0..100).any(|u| assign_treatment(UserId(u), 1) != assign_treatment(UserId(u), 2));
        assert!(differs);
    }

    #[test]
    fn assignment_uniform() {
        // chi-square with 2 dof; critical value at p = 0.01 is 9.21
        for cohort_offset in [0u32, 100_000] {
            let mut counts = [0f64; 3];
            for u in 0..900 {
                counts[assign_treatment(UserId(u + cohort_offset), 7) as usize] += 1.0;
            }
            let chi2: f64 = counts.iter().map(|c| (c - 300.0).powi(2) / 300.0).sum();
            assert!(chi2 < 9.21, "{counts:?}");
        }
    }

    #[test]
    fn unenrolled_user_errors() {
        let e = Enrollment::from_arms([(UserId(1), assign_arm(UserId(1), Cohort::Diverse, 0))]);
        assert!(e.arm(UserId(1)).is_ok());
        assert!(matches!(
            e.arm(UserId(2)),
            Err(ExperimentError::Unenrolled(UserId(2)))
        ));
    }

    #[test]
    fn arms_csv_round_trip() {
        let members: Vec<CohortMember> = (0..30)
            .map(|u| CohortMember {
                user_id: UserId(u),
                score: f64::from(u),
                cohort: if u < 15 {
                    Cohort::NonDiverse
                } else {
                    Cohort::Diverse
                },
            })
            .collect();
        let e = Enrollment::new(&members, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("arms.csv");
        e.write_csv(&path).unwrap();
        assert_eq!(Enrollment::read_csv(&path).unwrap(), e);
        assert_eq!(e.counts().values().sum::<usize>(), 30);
    }

    #[test]
    fn arm_display_parses_back() {
        for arm in Arm::all() {
            assert_eq!(arm.to_string().parse::<Arm>().unwrap(), arm);
        }
        assert!("ND".parse::<Arm>().is_err());
        assert!("X-BRC".parse::<Arm>().is_err());
    }

    #[test]
    fn window_parsing() {
        let w: DateWindow = "2022-11-04..2022-12-16".parse().unwrap();
        assert_eq!(w.days(), 43.0);
        assert_eq!(w.to_string(), "2022-11-04..2022-12-16");
        assert!(w.contains(w.start) && !w.contains(w.end));
        assert!("2022-12-16..2022-11-04".parse::<DateWindow>().is_err());
        assert!("yesterday".parse::<DateWindow>().is_err());
    }

    #[test]
    fn info_messages() {
        assert!(Treatment::Control.info_message().ends_with(
            "the top-picks carousel. You may see different content than you're used to."
        ));
        for t in Treatment::ALL {
            assert!(t.info_message().starts_with("Dear MovieLens user"));
        }
        assert!(Treatment::BrcDs
            .info_message()
            .contains("5 levels of diversity"));
    }

    #[test]
    fn activity_filter() {
        let f = ActivityFilter::default();
        assert!(f.admits(12, 20));
        assert!(!f.admits(11, 100));
        assert!(!f.admits(100, 19));
    }
}
