//! Synthetic experiment population. Every user draws Poisson activity from the rates of their
//! arm, and the generator keeps its own tally of what it emitted so metric computation can be
//! checked against it.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::events::{EventKind, InteractionEvent, DEFAULT_SESSION_TIMEOUT_SECS};
use super::metrics::{rated_diversity, MetricsRecord};
use super::{Arm, DateWindow, Enrollment};
use crate::corpus::{Genome, Rating, RatingEvent};
use crate::ids::{MovieId, UserId};
use crate::stats::analysis::{SurveyResponse, SURVEY_QUESTIONS};
use crate::stats::special::logistic;

/// Longest generated session. Keeping it under the timeout means no session is ever split by a
/// silence.
const MAX_SESSION_SECS: i64 = 29 * 60;
const MIN_SESSION_SECS: i64 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorRates {
    pub logins_per_month: f64,
    /// Mean of the exponential session length before clamping to one to 29 minutes.
    pub session_minutes: f64,
    pub page_views_per_session: f64,
    pub ratings_per_session: f64,
    pub wishlist_per_session: f64,
    /// Only drawn for users with the slider interface.
    pub slider_per_session: f64,
    pub mean_rating: f64,
}

impl Default for BehaviorRates {
    fn default() -> Self {
        Self {
            logins_per_month: 8.0,
            session_minutes: 8.0,
            page_views_per_session: 2.0,
            ratings_per_session: 1.5,
            wishlist_per_session: 0.3,
            slider_per_session: 0.5,
            mean_rating: 3.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rate {
    Logins,
    SessionMinutes,
    PageViews,
    Ratings,
    Wishlist,
    Slider,
}

impl Rate {
    pub const ALL: [Rate; 6] = [
        Rate::Logins,
        Rate::SessionMinutes,
        Rate::PageViews,
        Rate::Ratings,
        Rate::Wishlist,
        Rate::Slider,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rate::Logins => "logins",
            Rate::SessionMinutes => "session_minutes",
            Rate::PageViews => "page_views",
            Rate::Ratings => "ratings",
            Rate::Wishlist => "wishlist",
            Rate::Slider => "slider",
        }
    }
}

impl std::str::FromStr for Rate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Rate::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown rate {s:?}"))
    }
}

/// Multiplies one rate for every user in `arm`, in one window or in all of them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateShift {
    pub arm: Arm,
    pub rate: Rate,
    pub factor: f64,
    /// Index into [`SimConfig::windows`]; `None` shifts every window.
    #[serde(default)]
    pub window: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub users_per_arm: usize,
    /// Non-overlapping windows; activity is generated independently in each.
    pub windows: Vec<DateWindow>,
    pub base: BehaviorRates,
    pub shifts: Vec<RateShift>,
    /// Gamma shape of each user's login-rate multiplier (mean 1). Zero disables heterogeneity.
    pub heterogeneity: f64,
    /// Movies users view, rate and wishlist.
    pub catalog: Vec<MovieId>,
    pub first_user_id: u32,
}

impl SimConfig {
    /// Rates for `arm` in window `window`.
    pub fn rates(&self, arm: Arm, window: usize) -> BehaviorRates {
        let mut r = self.base;
        for s in self
            .shifts
            .iter()
            .filter(|s| s.arm == arm && s.window.is_none_or(|w| w == window))
        {
            let field = match s.rate {
                Rate::Logins => &mut r.logins_per_month,
                Rate::SessionMinutes => &mut r.session_minutes,
                Rate::PageViews => &mut r.page_views_per_session,
                Rate::Ratings => &mut r.ratings_per_session,
                Rate::Wishlist => &mut r.wishlist_per_session,
                Rate::Slider => &mut r.slider_per_session,
            };
            *field *= s.factor;
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub enrollment: Enrollment,
    /// Sorted by user, then time.
    pub events: Vec<InteractionEvent>,
    pub ratings: Vec<RatingEvent>,
    /// One map per configured window.
    pub truth: Vec<BTreeMap<UserId, MetricsRecord>>,
    /// Generated `(user, start, end)` session bounds.
    pub sessions: Vec<(UserId, i64, i64)>,
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        0
    } else {
        Poisson::new(lambda).unwrap().sample(rng) as u64
    }
}

pub fn simulate_users(config: &SimConfig, genome: &Genome, seed: u64) -> Simulation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arms = Vec::new();
    let mut next = config.first_user_id;
    for arm in Arm::all() {
        for _ in 0..config.users_per_arm {
            arms.push((UserId(next), arm));
            next += 1;
        }
    }

    let mut sim = Simulation {
        enrollment: Enrollment::from_arms(arms.iter().copied()),
        events: Vec::new(),
        ratings: Vec::new(),
        truth: vec![BTreeMap::new(); config.windows.len()],
        sessions: Vec::new(),
    };
    for &(user, arm) in &arms {
        let multiplier = if config.heterogeneity > 0.0 {
            Gamma::new(config.heterogeneity, 1.0 / config.heterogeneity)
                .unwrap()
                .sample(&mut rng)
        } else {
            1.0
        };
        let mut wishlist = HashSet::new();
        for (w, window) in config.windows.iter().enumerate() {
            let rates = config.rates(arm, w);
            let record = simulate_window(
                &mut rng,
                &mut sim,
                config,
                genome,
                user,
                arm,
                &rates,
                multiplier,
                *window,
                &mut wishlist,
            );
            sim.truth[w].insert(user, record);
        }
    }
    sim
}

#[allow(clippy::too_many_arguments)]
fn simulate_window(
    rng: &mut ChaCha8Rng,
    sim: &mut Simulation,
    config: &SimConfig,
    genome: &Genome,
    user: UserId,
    arm: Arm,
    rates: &BehaviorRates,
    multiplier: f64,
    window: DateWindow,
    wishlist: &mut HashSet<MovieId>,
) -> MetricsRecord {
    let span = window.end - window.start;
    // Each session gets its own slot, long enough that consecutive sessions are always separated
    // by more than the timeout.
    let max_sessions = (span / (MAX_SESSION_SECS + DEFAULT_SESSION_TIMEOUT_SECS + 60)) as u64;
    let n = poisson(
        rng,
        rates.logins_per_month * multiplier * window.days() / 30.0,
    )
    .min(max_sessions);

    let mut total_secs = 0i64;
    let mut unique_views = 0u64;
    let mut sliders = 0u64;
    let mut wishlist_adds = 0u64;
    let mut rated: BTreeMap<MovieId, u8> = BTreeMap::new();
    let pick = |rng: &mut ChaCha8Rng| config.catalog[rng.random_range(0..config.catalog.len())];
    let rating_noise = Normal::new(0.0, 0.9).unwrap();
    let length = Exp::new(1.0 / (rates.session_minutes * 60.0).max(1.0)).unwrap();

    for s in 0..n as i64 {
        let slot_start = window.start + s * span / n as i64;
        let slot_len = (s + 1) * span / n as i64 - s * span / n as i64;
        let len = (length.sample(rng) as i64).clamp(MIN_SESSION_SECS, MAX_SESSION_SECS);
        let start =
            slot_start + rng.random_range(0..=slot_len - len - DEFAULT_SESSION_TIMEOUT_SECS - 1);
        let end = start + len;
        total_secs += len;
        sim.sessions.push((user, start, end));

        let mut kinds = Vec::new();
        if !config.catalog.is_empty() {
            let mut viewed = BTreeSet::new();
            for _ in 0..poisson(rng, rates.page_views_per_session) {
                let m = pick(rng);
                viewed.insert(m);
                kinds.push(EventKind::PageView { movie_id: m });
            }
            unique_views += viewed.len() as u64;
            for _ in 0..poisson(rng, rates.ratings_per_session) {
                let m = pick(rng);
                let halves = (2.0 * (rates.mean_rating + rating_noise.sample(rng)))
                    .round()
                    .clamp(1.0, 10.0) as u8;
                kinds.push(EventKind::Rating {
                    movie_id: m,
                    value: Rating::from_half_stars(halves).unwrap(),
                });
            }
            for _ in 0..poisson(rng, rates.wishlist_per_session) {
                let m = pick(rng);
                let added = wishlist.insert(m);
                kinds.push(EventKind::WishlistAdd { movie_id: m, added });
            }
        }
        if arm.treatment.has_slider() {
            for _ in 0..poisson(rng, rates.slider_per_session) {
                kinds.push(EventKind::SliderSet {
                    level: rng.random_range(1..=5),
                });
            }
        }

        // Distinct offsets strictly inside the session keep every in-session event ordered.
        let k = kinds.len().min((len - 1) as usize);
        let mut offsets: Vec<usize> = sample(rng, (len - 1) as usize, k).into_vec();
        offsets.sort_unstable();
        sim.events
            .push(InteractionEvent::new(user, start, EventKind::Login));
        for (kind, off) in kinds.into_iter().zip(offsets) {
            let ts = start + 1 + off as i64;
            match &kind {
                EventKind::SliderSet { .. } => sliders += 1,
                EventKind::WishlistAdd { added: true, .. } => wishlist_adds += 1,
                EventKind::Rating { movie_id, value } => {
                    rated.insert(*movie_id, value.half_stars());
                    sim.ratings.push(RatingEvent {
                        user_id: user,
                        movie_id: *movie_id,
                        rating: *value,
                        timestamp: ts,
                    });
                }
                _ => {}
            }
            sim.events.push(InteractionEvent::new(user, ts, kind));
        }
        sim.events
            .push(InteractionEvent::new(user, end, EventKind::Logout));
    }

    if n == 0 {
        return MetricsRecord::default();
    }
    let sessions = n as f64;
    let halves: u64 = rated.values().map(|&h| u64::from(h)).sum();
    MetricsRecord {
        rating_diversity: rated_diversity(rated.keys().copied(), genome),
        slider_interactions: sliders,
        page_view_freq: unique_views as f64 / sessions,
        login_frequency: n as f64 / (window.days() / 30.0),
        total_length: total_secs as f64 / 60.0,
        num_ratings: rated.len() as u64,
        wishlist_freq: wishlist_adds as f64 / sessions,
        avg_rating: (!rated.is_empty()).then(|| halves as f64 / 2.0 / rated.len() as f64),
    }
}

/// Planted coefficients for the satisfaction model, keyed by predictor name (`interface`,
/// `consumption_habit`, or a survey question).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SurveyEffects {
    pub coefficients: BTreeMap<String, f64>,
    pub cutpoints: [f64; 2],
}

/// Survey answers for every enrolled user. Non-satisfaction questions are uniform on 1..=5;
/// satisfaction follows a proportional-odds model over the binned answers and the arm coding.
pub fn simulate_survey(
    enrollment: &Enrollment,
    effects: &SurveyEffects,
    seed: u64,
) -> Vec<SurveyResponse> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coef = |name: &str| effects.coefficients.get(name).copied().unwrap_or(0.0);
    enrollment
        .iter()
        .map(|(user, arm)| {
            let mut scores = BTreeMap::new();
            let mut eta = coef("interface") * arm.treatment.ordinal()
                + coef("consumption_habit") * arm.cohort.ordinal();
            for q in SURVEY_QUESTIONS.iter().filter(|q| **q != "satisfaction") {
                let score: u8 = rng.random_range(1..=5);
                eta += coef(q) * crate::stats::likert_bin(i64::from(score)).unwrap().level() as f64;
                scores.insert(q.to_string(), score);
            }
            let u: f64 = rng.random();
            let satisfaction = if u < logistic(effects.cutpoints[0] - eta) {
                rng.random_range(1..=2)
            } else if u < logistic(effects.cutpoints[1] - eta) {
                3
            } else {
                rng.random_range(4..=5)
            };
            scores.insert("satisfaction".to_string(), satisfaction);
            SurveyResponse {
                user_id: user,
                arm,
                scores,
                comment: None,
            }
        })
        .collect()
}
