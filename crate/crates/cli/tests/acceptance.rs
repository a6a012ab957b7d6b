//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//!
//! `cargo test -p divrec-cli --test acceptance`

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use divrec_core::clustering::{kmeans, kmeans_genome, KMeansConfig};
use divrec_core::diversity::{list_diversity, split_cohorts, Cohort};
use divrec_core::experiment::{
    compute_all_metrics, read_events, simulate_users, write_events, BehaviorRates, DateWindow,
    Enrollment, Metric, Rate, RateShift, SimConfig, DEFAULT_SESSION_TIMEOUT_SECS,
};
use divrec_core::recsys::{
    FactorModel, FunkSvdConfig, ItemItemScore, ItemSimilarityModel, Observation, TrainConfig,
};
use divrec_core::rerank::{PAGES, PAGE_SIZE};
use divrec_core::stats::{analyze_experiment, cohens_d, fit_olr, one_way_anova, pooled_t, welch_t};
use divrec_core::synth::{generate, SynthConfig};
use divrec_core::{
    Algorithm, Arm, BaseModel, DiversityLevel, DiversityScore, Engine, Genome, MovieId, Treatment,
    UserId,
};
use divrec_service::{AppState, EventLog, ManualClock, MemoryLog, RatingStore, Snapshot};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};
use statrs::distribution::{ContinuousCDF, StudentsT};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        let held = $cond;
        if !held {
            return Err(format!($($msg)+));
        }
    };
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("algorithm structure", algorithm_structure),
        ("subset sizes", subset_sizes),
        ("list diversity oracle", list_diversity_oracle),
        ("diversity monotonicity", diversity_monotonicity),
        ("funk svd", funk_svd),
        ("item-item oracle", item_item_oracle),
        ("k-means", k_means),
        ("statistics oracles", statistics_oracles),
        ("pipeline identity", pipeline_identity),
        ("cohort split", cohort_split),
        ("service contract", service_contract),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .map_or("panicked".into(), |m| format!("panicked: {m}")))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<24} {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<24} {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn levels() -> impl Iterator<Item = DiversityLevel> {
    DiversityLevel::all()
}

fn engine_for(
    corpus: &SynthConfig,
    seed: u64,
    algorithm: Algorithm,
    config: &TrainConfig,
) -> (Engine, Genome) {
    let s = generate(corpus, seed);
    let mut clusters = kmeans_genome(
        &s.corpus.genome,
        &KMeansConfig {
            seed,
            ..Default::default()
        },
    )
    .unwrap();
    clusters.count_ratings(&s.corpus.ratings);
    let model = BaseModel::train(algorithm, &s.corpus.ratings, config).unwrap();
    (
        Engine::new(model, clusters, &s.corpus.ratings),
        s.corpus.genome,
    )
}

fn ten_thousand_movies() -> &'static (Engine, Genome) {
    use std::sync::OnceLock;
    static ENGINE: OnceLock<(Engine, Genome)> = OnceLock::new();
    ENGINE.get_or_init(|| {
        let corpus = SynthConfig {
            movies: 10_000,
            users: 400,
            ..Default::default()
        };
        engine_for(&corpus, 1, Algorithm::Wizard, &TrainConfig::default())
    })
}

fn algorithm_structure() -> Check {
    let (engine, _) = ten_thousand_movies();
    let k = 24;
    let mut violations = Vec::new();
    let mut slowest = Duration::ZERO;
    let mut total = Duration::ZERO;
    let mut requests = 0u32;
    let mut widened = 0u32;
    for user in (1..=100).map(UserId) {
        for level in levels() {
            let l = level.get() as usize;
            let start = Instant::now();
            let rec = engine.recommend(user, level).map_err(|e| e.to_string())?;
            let took = start.elapsed();
            slowest = slowest.max(took);
            total += took;
            requests += 1;
            widened += u32::from(rec.pool > engine.pool_size);

            let subset = engine.plan().subset(level);
            let mut note = |what: String| violations.push(format!("user {} L={l}: {what}", user.0));
            if subset.len() != (5 * l).min(k) {
                note(format!("subset has {} clusters", subset.len()));
            }
            if rec.pages.len() != PAGES {
                note(format!("{} pages", rec.pages.len()));
            }
            let all: HashSet<MovieId> = rec.pages.iter().flat_map(|p| p.movie_ids()).collect();
            if all.len() != PAGES * PAGE_SIZE {
                note(format!("{} distinct movies over the pages", all.len()));
            }
            let cap = PAGE_SIZE.div_ceil(5 * l);
            for page in &rec.pages {
                if page.slots.len() != PAGE_SIZE {
                    note(format!(
                        "page {} has {} movies",
                        page.page_index,
                        page.slots.len()
                    ));
                }
                if let Some(s) = page.slots.iter().find(|s| !subset.contains(s.cluster)) {
                    note(format!(
                        "page {} uses cluster {} outside the subset",
                        page.page_index, s.cluster
                    ));
                }
                let counts = page.cluster_counts(k);
                if let Some(max) = counts.iter().max().filter(|&&m| m > cap) {
                    note(format!(
                        "page {} has {max} movies from one cluster, cap {cap}",
                        page.page_index
                    ));
                }
                if l == 5 && counts.iter().any(|&c| c != 1) {
                    note(format!(
                        "page {} is not one movie per cluster",
                        page.page_index
                    ));
                }
            }
        }
    }
    ensure!(
        violations.is_empty(),
        "{} violations, first: {}",
        violations.len(),
        violations[0]
    );
    ensure!(
        slowest < Duration::from_millis(100),
        "slowest request {slowest:?}"
    );
    Ok(format!(
        "10000 movies, 100 users x 5 levels, 0 violations ({widened} requests drew past the first {} candidates); mean {:.1} ms, max {:.1} ms per request",
        engine.pool_size,
        total.as_secs_f64() * 1e3 / requests as f64,
        slowest.as_secs_f64() * 1e3
    ))
}

fn subset_sizes() -> Check {
    let (engine, _) = ten_thousand_movies();
    let sizes: Vec<usize> = levels().map(|l| engine.plan().subset(l).len()).collect();
    let formula: Vec<usize> = levels().map(|l| l.subset_size(24)).collect();
    ensure!(sizes == [5, 10, 15, 20, 24], "subset sizes {sizes:?}");
    ensure!(formula == sizes, "formula gives {formula:?}");
    Ok(format!("{sizes:?}; L=3 uses {}", sizes[2]))
}

/// Two-pass Pearson correlation, written out independently of the library.
fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn list_diversity_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..=50);
        let dim = 1128;
        let items: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    sum += 1.0 - pearson(&items[i], &items[j]);
                }
            }
        }
        let oracle = sum / (n * (n - 1)) as f64;
        let got = list_diversity(&items).map_err(|e| e.to_string())?.value();
        worst = worst.max(((got - oracle) / oracle).abs());
    }
    ensure!(worst < 1e-12, "max relative error {worst:e}");

    let one = vec![vec![0.1, 0.5, 0.9]];
    ensure!(
        list_diversity(&one).is_err(),
        "a single-item list must be rejected"
    );
    for n in [2, 7, 50] {
        let v: Vec<f64> = (0..1128).map(|_| rng.random::<f64>()).collect();
        let same = vec![v; n];
        let d = list_diversity(&same).map_err(|e| e.to_string())?;
        ensure!(d.value() == 0.0, "{n} identical items give {}", d.value());
    }
    Ok(format!(
        "1000 lists, max relative error {worst:.1e}; |R|=1 rejected; identical lists give 0"
    ))
}

fn diversity_monotonicity() -> Check {
    let corpus = SynthConfig {
        movies: 2000,
        users: 120,
        ..Default::default()
    };
    let mut bad = Vec::new();
    let mut means = vec![0.0; 5];
    let seeds = 20;
    for seed in 0..seeds {
        let (engine, genome) =
            engine_for(&corpus, seed, Algorithm::Warrior, &TrainConfig::default());
        let per_level: Vec<f64> = levels()
            .map(|level| {
                let scores: Vec<f64> = (1..=30)
                    .map(|u| {
                        let (page, _) = engine.page(UserId(u), level, 1).unwrap();
                        let vectors: Vec<&[f64]> = page
                            .movie_ids()
                            .map(|m| genome.get(m).unwrap().relevance.as_slice())
                            .collect();
                        list_diversity(&vectors).unwrap().value()
                    })
                    .collect();
                scores.iter().sum::<f64>() / scores.len() as f64
            })
            .collect();
        for (m, d) in means.iter_mut().zip(&per_level) {
            *m += d / seeds as f64;
        }
        if per_level.windows(2).any(|w| w[1] < w[0]) {
            bad.push(format!("seed {seed}: {per_level:.4?}"));
        }
    }
    ensure!(
        bad.is_empty(),
        "{} of {seeds} seeds decrease, e.g. {}",
        bad.len(),
        bad[0]
    );
    Ok(format!(
        "{seeds} seeds, 30 users each, non-decreasing; mean page-1 diversity by level {means:.4?}"
    ))
}

fn rank_three(seed: u64) -> (Vec<Observation>, Vec<Observation>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factor = Normal::new(0.0, 0.6).unwrap();
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut draw = |n: usize| -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| {
                [
                    factor.sample(&mut rng),
                    factor.sample(&mut rng),
                    factor.sample(&mut rng),
                ]
            })
            .collect()
    };
    let (u, v) = (draw(100), draw(200));
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, ui) in u.iter().enumerate() {
        for (j, vj) in v.iter().enumerate() {
            let truth = 3.0 + (0..3).map(|k| ui[k] * vj[k]).sum::<f64>();
            let o = Observation {
                user_id: UserId(i as u32 + 1),
                movie_id: MovieId(j as u32 + 1),
                value: truth + noise.sample(&mut rng),
            };
            if rng.random::<f64>() < 0.2 {
                test.push(o);
            } else {
                train.push(o);
            }
        }
    }
    (train, test)
}

fn funk_svd() -> Check {
    let (train, test) = rank_three(1);
    let config = FunkSvdConfig {
        seed: 9,
        ..Default::default()
    };
    let start = Instant::now();
    let model = FactorModel::train(&train, &config).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let sq: f64 = test
        .iter()
        .map(|o| (model.predict(o.user_id, o.movie_id).unwrap() - o.value).powi(2))
        .sum();
    let rmse = (sq / test.len() as f64).sqrt();
    let again = FactorModel::train(&train, &config).map_err(|e| e.to_string())?;
    let identical =
        serde_json::to_string(&model).unwrap() == serde_json::to_string(&again).unwrap();
    ensure!(rmse <= 0.15, "held-out RMSE {rmse:.4}");
    ensure!(identical, "re-run under the same seed differs");
    ensure!(took < Duration::from_secs(60), "training took {took:?}");
    Ok(format!(
        "held-out RMSE {rmse:.4} on {} ratings; re-run identical; trained in {:.2} s",
        test.len(),
        took.as_secs_f64()
    ))
}

fn item_item_oracle() -> Check {
    // Four users by four movies; user 1 has not rated movie 4 and user 4 has not rated movie 3.
    let table: [[Option<f64>; 4]; 4] = [
        [Some(5.0), Some(3.0), Some(4.0), None],
        [Some(3.0), Some(1.0), Some(2.0), Some(3.0)],
        [Some(4.0), Some(3.0), Some(4.0), Some(5.0)],
        [Some(3.0), Some(3.0), None, Some(4.0)],
    ];
    let obs: Vec<Observation> = table
        .iter()
        .enumerate()
        .flat_map(|(u, row)| {
            row.iter().enumerate().filter_map(move |(m, r)| {
                r.map(|value| Observation {
                    user_id: UserId(u as u32 + 1),
                    movie_id: MovieId(m as u32 + 1),
                    value,
                })
            })
        })
        .collect();
    let model = ItemSimilarityModel::train(&obs, 20);

    let mean: Vec<f64> = table
        .iter()
        .map(|row| {
            let r: Vec<f64> = row.iter().flatten().copied().collect();
            r.iter().sum::<f64>() / r.len() as f64
        })
        .collect();
    let sim = |a: usize, b: usize| -> Option<f64> {
        let (mut dot, mut sa, mut sb) = (0.0, 0.0, 0.0);
        let mut co = false;
        for (u, row) in table.iter().enumerate() {
            if let (Some(x), Some(y)) = (row[a], row[b]) {
                co = true;
                dot += (x - mean[u]) * (y - mean[u]);
                sa += (x - mean[u]).powi(2);
                sb += (y - mean[u]).powi(2);
            }
        }
        (co && sa * sb > 0.0).then(|| dot / (sa * sb).sqrt())
    };
    let mut worst = 0.0f64;
    let mut neighborhood = 0;
    for u in 0..4 {
        for m in 0..4 {
            let (mut num, mut den) = (0.0, 0.0);
            for j in (0..4).filter(|&j| j != m) {
                if let (Some(s), Some(r)) = (sim(m, j), table[u][j]) {
                    if s > 0.0 {
                        num += s * (r - mean[u]);
                        den += s;
                    }
                }
            }
            let oracle = if den > 0.0 {
                mean[u] + num / den
            } else {
                mean[u]
            };
            let got = match model.predict(UserId(u as u32 + 1), MovieId(m as u32 + 1)) {
                Some(ItemItemScore::Neighborhood(p)) => {
                    neighborhood += 1;
                    ensure!(
                        den > 0.0,
                        "user {} movie {}: model used neighbors, oracle has none",
                        u + 1,
                        m + 1
                    );
                    p
                }
                Some(ItemItemScore::UserMean(p)) => {
                    ensure!(
                        den == 0.0,
                        "user {} movie {}: model fell back to the mean",
                        u + 1,
                        m + 1
                    );
                    p
                }
                None => return Err(format!("user {} unknown", u + 1)),
            };
            worst = worst.max((got - oracle).abs());
        }
        for a in 0..4 {
            for b in (0..4).filter(|&b| b != a) {
                let got = model.similarity(MovieId(a as u32 + 1), MovieId(b as u32 + 1));
                match (got, sim(a, b)) {
                    (Some(x), Some(y)) => worst = worst.max((x - y).abs()),
                    (None, None) => {}
                    (x, y) => {
                        return Err(format!(
                            "similarity {}-{}: model {x:?}, oracle {y:?}",
                            a + 1,
                            b + 1
                        ))
                    }
                }
            }
        }
    }
    ensure!(worst < 1e-9, "max abs error {worst:e}");
    Ok(format!(
        "16 predictions ({neighborhood} from neighbors) and all similarities within {worst:.1e}"
    ))
}

fn k_means() -> Check {
    let dim = 8;
    let mut seeds_checked = 0;
    let mut worst_ratio = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let unit = Normal::new(0.0, 1.0).unwrap();
        let centers: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..dim).map(|_| 6.0 * unit.sample(&mut rng)).collect())
            .collect();
        let mut points = Vec::new();
        let mut planted = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..200 {
                points.push(
                    center
                        .iter()
                        .map(|x| x + unit.sample(&mut rng))
                        .collect::<Vec<f64>>(),
                );
                planted.push(c);
            }
        }
        let ids: Vec<(MovieId, &[f64])> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (MovieId(i as u32 + 1), p.as_slice()))
            .collect();
        let model = kmeans(
            &ids,
            &KMeansConfig {
                k: 3,
                max_iters: 300,
                seed,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;

        let h = &model.objective_history;
        ensure!(!h.is_empty(), "no objective history");
        if let Some(w) = h.windows(2).find(|w| w[1] > w[0]) {
            return Err(format!(
                "seed {seed}: objective rose from {} to {}",
                w[0], w[1]
            ));
        }
        let sizes = model.sizes();
        ensure!(
            sizes.len() == 3 && sizes.iter().all(|&s| s > 0),
            "seed {seed}: cluster sizes {sizes:?}"
        );

        let sse = |labels: &dyn Fn(usize) -> usize, k: usize| -> f64 {
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (i, p) in points.iter().enumerate() {
                counts[labels(i)] += 1;
                for (s, x) in sums[labels(i)].iter_mut().zip(p) {
                    *s += x;
                }
            }
            points
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let c = labels(i);
                    p.iter()
                        .zip(&sums[c])
                        .map(|(x, s)| (x - s / counts[c] as f64).powi(2))
                        .sum::<f64>()
                })
                .sum()
        };
        let planted_sse = sse(&|i| planted[i], 3);
        let fitted_sse = sse(&|i| model.assignment[&MovieId(i as u32 + 1)].index(), 3);
        let ratio = fitted_sse / planted_sse;
        worst_ratio = worst_ratio.max(ratio);
        ensure!(
            ratio <= 1.01,
            "seed {seed}: objective {fitted_sse:.3} vs planted {planted_sse:.3}"
        );
        seeds_checked += 1;
    }
    Ok(format!(
        "{seeds_checked} seeds: objective never rose, 3 nonempty clusters, worst fitted/planted objective {worst_ratio:.4}"
    ))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn statistics_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(0.0, 1.0).unwrap();

    let mut worst_f = 0.0f64;
    for _ in 0..50 {
        let (na, nb) = (rng.random_range(2..40), rng.random_range(2..40));
        let shift = rng.random::<f64>();
        let a: Vec<f64> = (0..na).map(|_| normal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..nb).map(|_| normal.sample(&mut rng) + shift).collect();
        let f = one_way_anova(&[&a, &b])
            .map_err(|e| e.to_string())?
            .statistic;
        let t = pooled_t(&a, &b).map_err(|e| e.to_string())?.statistic;
        worst_f = worst_f.max((f - t * t).abs() / f.max(1.0));
    }
    ensure!(worst_f < 1e-9, "F vs t^2 error {worst_f:e}");

    let fixtures: [(&[f64], &[f64]); 3] = [
        (
            &[19.1, 21.4, 18.7, 22.0, 20.3, 17.9],
            &[23.2, 25.1, 21.8, 26.4, 24.0, 22.7, 27.3, 20.9],
        ),
        (
            &[3.0, 4.0, 5.0, 4.0, 3.0],
            &[1.0, 9.0, 2.0, 8.0, 3.0, 7.0, 5.0],
        ),
        (
            &[0.12, 0.31, 0.27, 0.05, 0.44, 0.19, 0.38, 0.22, 0.30],
            &[0.29, 0.41, 0.35, 0.50, 0.33],
        ),
    ];
    let mut worst_w = 0.0f64;
    let mut worst_d = 0.0f64;
    for (a, b) in fixtures {
        let m = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        let v =
            |x: &[f64]| x.iter().map(|y| (y - m(x)).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let (sa, sb) = (v(a) / na, v(b) / nb);
        let t = (m(a) - m(b)) / (sa + sb).sqrt();
        let dof = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
        let p = 2.0 * StudentsT::new(0.0, 1.0, dof).unwrap().cdf(-t.abs());
        let w = welch_t(a, b).map_err(|e| e.to_string())?;
        for (got, want) in [(w.statistic, t), (w.dof, dof), (w.p_value, p)] {
            worst_w = worst_w.max((got - want).abs());
        }
        let pooled = (((na - 1.0) * v(a) + (nb - 1.0) * v(b)) / (na + nb - 2.0)).sqrt();
        let d = cohens_d(a, b).map_err(|e| e.to_string())?;
        worst_d = worst_d.max((d - (m(a) - m(b)) / pooled).abs());
    }
    ensure!(worst_w < 1e-6, "Welch error {worst_w:e}");
    ensure!(worst_d < 1e-9, "Cohen's d error {worst_d:e}");

    let mut estimates = Vec::new();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let cut = [-1.0, 1.0];
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for _ in 0..2000 {
            let xi: f64 = normal.sample(&mut rng);
            let u: f64 = rng.random_range(1e-12..1.0);
            let latent = xi + (u / (1.0 - u)).ln();
            y.push(cut.iter().filter(|&&c| latent > c).count());
            x.push(vec![xi]);
        }
        let fit = fit_olr(&x, &y, &["x"]).map_err(|e| e.to_string())?;
        let beta = fit.coefficients[0].estimate;
        ensure!(close(beta, 1.0, 0.15), "seed {seed}: beta {beta:.4}");
        let h = &fit.log_likelihood_history;
        ensure!(
            h.windows(2).all(|w| w[1] >= w[0]),
            "seed {seed}: log-likelihood fell: {h:?}"
        );
        estimates.push(beta);
    }
    Ok(format!(
        "F=t^2 within {worst_f:.1e}; Welch within {worst_w:.1e}; d within {worst_d:.1e}; OLR beta {estimates:.3?}, log-likelihood monotone"
    ))
}

fn windows() -> Vec<DateWindow> {
    [
        "2022-10-04..2022-11-03",
        "2022-11-04..2022-12-16",
        "2022-12-17..2023-03-17",
    ]
    .iter()
    .map(|w| w.parse().unwrap())
    .collect()
}

const WINDOW_NAMES: [&str; 3] = ["pre", "during", "post"];

fn sim_config(genome: &Genome, shifts: Vec<RateShift>) -> SimConfig {
    SimConfig {
        users_per_arm: 300,
        windows: windows(),
        base: BehaviorRates::default(),
        shifts,
        heterogeneity: 3.0,
        catalog: genome.movie_ids().collect(),
        first_user_id: 1,
    }
}

fn analyze(
    events: &[divrec_core::InteractionEvent],
    enrollment: &Enrollment,
    genome: &Genome,
) -> (
    Vec<BTreeMap<UserId, divrec_core::MetricsRecord>>,
    divrec_core::stats::Report,
) {
    let users: Vec<UserId> = enrollment.iter().map(|(u, _)| u).collect();
    let metrics: Vec<_> = windows()
        .into_iter()
        .map(|w| compute_all_metrics(&users, events, w, genome, DEFAULT_SESSION_TIMEOUT_SECS))
        .collect();
    let named: Vec<(String, _)> = WINDOW_NAMES
        .iter()
        .map(|n| n.to_string())
        .zip(metrics.iter().cloned())
        .collect();
    let report = analyze_experiment(&named, enrollment).unwrap();
    (metrics, report)
}

fn pipeline_identity() -> Check {
    let genome = generate(
        &SynthConfig {
            movies: 400,
            users: 10,
            dim: 32,
            ..Default::default()
        },
        2,
    )
    .corpus
    .genome;
    let nd = |t| Arm {
        cohort: Cohort::NonDiverse,
        treatment: t,
    };
    let shift = RateShift {
        arm: nd(Treatment::BrcDs),
        rate: Rate::Logins,
        factor: 1.2,
        window: Some(1),
    };

    // Identity and power on one planted run, read back from its serialized log.
    let sim = simulate_users(&sim_config(&genome, vec![shift]), &genome, 2024);
    let mut bytes = Vec::new();
    write_events(&mut bytes, &sim.events).unwrap();
    let events = read_events(bytes.as_slice()).unwrap();
    let (metrics, report) = analyze(&events, &sim.enrollment, &genome);
    let mut mismatched = 0;
    let mut compared = 0;
    for (w, (got, truth)) in metrics.iter().zip(&sim.truth).enumerate() {
        ensure!(
            got.len() == truth.len(),
            "window {w}: {} records vs {}",
            got.len(),
            truth.len()
        );
        for (user, record) in truth {
            compared += 1;
            if got.get(user) != Some(record) {
                mismatched += 1;
            }
        }
    }
    ensure!(
        mismatched == 0,
        "{mismatched} of {compared} records differ from ground truth"
    );
    let planted = report
        .pair(
            "during",
            Metric::LoginFrequency,
            nd(Treatment::BrcDs),
            nd(Treatment::Control),
        )
        .and_then(|r| r.result.as_ref().ok())
        .ok_or("no during-window login comparison")?
        .p_value;
    ensure!(
        planted < 0.05,
        "planted +20% login shift not flagged: p = {planted:.4}"
    );
    let power_seeds = 20;
    let flagged = (0..power_seeds)
        .filter(|s| {
            let sim = simulate_users(&sim_config(&genome, vec![shift]), &genome, 20_000 + s);
            let (_, report) = analyze(&sim.events, &sim.enrollment, &genome);
            report
                .pair(
                    "during",
                    Metric::LoginFrequency,
                    nd(Treatment::BrcDs),
                    nd(Treatment::Control),
                )
                .and_then(|r| r.result.as_ref().ok())
                .is_some_and(|t| t.p_value < 0.05)
        })
        .count();

    // Null calibration.
    let seeds = 50;
    let mut rates = Vec::new();
    for seed in 0..seeds {
        let sim = simulate_users(&sim_config(&genome, Vec::new()), &genome, 10_000 + seed);
        let (_, report) = analyze(&sim.events, &sim.enrollment, &genome);
        let p: Vec<f64> = report.p_values().collect();
        rates.push(p.iter().filter(|&&p| p < 0.1).count() as f64 / p.len() as f64);
    }
    let mean_rate = rates.iter().sum::<f64>() / rates.len() as f64;
    let detail = format!(
        "{compared} records identical; planted shift p = {planted:.2e} (flagged in {flagged}/{power_seeds} further seeds); null flag rate at p<.1 over {seeds} seeds {mean_rate:.4} (seed range {:.3}..{:.3})",
        rates.iter().cloned().fold(f64::INFINITY, f64::min),
        rates.iter().cloned().fold(0.0, f64::max)
    );
    ensure!(mean_rate <= 0.10, "{detail}");
    Ok(detail)
}

fn cohort_split() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let trials = 2000;
    for trial in 0..trials {
        let n = rng.random_range(0..300usize);
        // Coarse scores force ties in about half the trials.
        let coarse = trial % 2 == 0;
        let mut ids: Vec<u32> = (1..=3 * n as u32).collect();
        ids.shuffle(&mut rng);
        let scores: Vec<(UserId, DiversityScore)> = ids[..n]
            .iter()
            .map(|&u| {
                let s: f64 = rng.random();
                (
                    UserId(u),
                    DiversityScore(if coarse { (s * 10.0).round() / 10.0 } else { s }),
                )
            })
            .collect();
        let split = split_cohorts(&scores);
        let (d, nd) = (split.size(Cohort::Diverse), split.size(Cohort::NonDiverse));
        ensure!(
            d + nd == n && d.abs_diff(nd) <= 1,
            "trial {trial}: |D| = {d}, |ND| = {nd}"
        );
        let max_nd = split
            .cohort(Cohort::NonDiverse)
            .map(|m| m.score)
            .fold(f64::NEG_INFINITY, f64::max);
        let min_d = split
            .cohort(Cohort::Diverse)
            .map(|m| m.score)
            .fold(f64::INFINITY, f64::min);
        ensure!(
            max_nd <= min_d,
            "trial {trial}: max ND {max_nd} > min D {min_d}"
        );
        let users: BTreeSet<UserId> = split.members.iter().map(|m| m.user_id).collect();
        ensure!(
            users.len() == n,
            "trial {trial}: members lost or duplicated"
        );
    }
    Ok(format!("{trials} random user sets (sizes 0..300, half with tied scores): sizes differ by <= 1, max ND <= min D"))
}

struct Client {
    addr: SocketAddr,
}

impl Client {
    fn call(&self, method: &str, path: &str, body: Option<Value>) -> (u16, Value) {
        let body = body.map(|b| b.to_string()).unwrap_or_default();
        let mut stream = TcpStream::connect(self.addr).unwrap();
        stream
            .set_read_timeout(Some(Duration::from_secs(30)))
            .unwrap();
        write!(
            stream,
            "{method} {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        let mut raw = String::new();
        stream.read_to_string(&mut raw).unwrap();
        let (head, payload) = raw.split_once("\r\n\r\n").unwrap_or((&raw, ""));
        let status = head
            .split_whitespace()
            .nth(1)
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        (status, serde_json::from_str(payload).unwrap_or(Value::Null))
    }

    fn get(&self, path: &str) -> (u16, Value) {
        self.call("GET", path, None)
    }

    fn post(&self, path: &str, body: Value) -> (u16, Value) {
        self.call("POST", path, Some(body))
    }

    fn login(&self, user: u32) -> Result<(String, Value), String> {
        let (status, body) = self.post("/session", json!({ "user_id": user }));
        ensure!(status == 200, "login of user {user}: {status} {body}");
        Ok((body["token"].as_str().unwrap().to_string(), body))
    }
}

fn clusters(items: &Value) -> Vec<u64> {
    items.as_array().map_or(Vec::new(), |a| {
        a.iter().filter_map(|i| i["cluster"].as_u64()).collect()
    })
}

fn service_contract() -> Check {
    let s = generate(
        &SynthConfig {
            movies: 800,
            users: 40,
            dim: 48,
            ..Default::default()
        },
        6,
    );
    let mut cluster_model = kmeans_genome(
        &s.corpus.genome,
        &KMeansConfig {
            seed: 6,
            ..Default::default()
        },
    )
    .unwrap();
    cluster_model.count_ratings(&s.corpus.ratings);
    let model = BaseModel::train(
        Algorithm::Warrior,
        &s.corpus.ratings,
        &TrainConfig::default(),
    )
    .unwrap();
    let engine = Engine::new(model, cluster_model, &s.corpus.ratings).with_pool_size(400);
    let arm_of_user: Vec<(UserId, Arm)> = (1..=12)
        .map(|u| (UserId(u), Arm::all().nth((u as usize - 1) % 6).unwrap()))
        .collect();
    let snapshot = Snapshot::new(
        engine,
        Enrollment::from_arms(arm_of_user.iter().copied()),
        s.corpus.movies,
    );
    let (log, lines): (EventLog, MemoryLog) = EventLog::memory();
    let clock = Arc::new(ManualClock::new(1_700_000_000));
    let state = Arc::new(AppState::new(
        snapshot,
        log,
        RatingStore::in_memory(),
        clock,
        Some(3),
    ));

    let runtime = tokio::runtime::Runtime::new().unwrap();
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .unwrap();
    let addr = listener.local_addr().unwrap();
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = runtime.spawn(divrec_service::serve(state, listener, async {
        let _ = stopped.await;
    }));
    let client = Client { addr };
    let result = contract_script(&client, &arm_of_user, &lines);
    let _ = stop.send(());
    runtime
        .block_on(server)
        .unwrap()
        .map_err(|e| e.to_string())?;
    result
}

fn contract_script(c: &Client, arms: &[(UserId, Arm)], log: &MemoryLog) -> Check {
    let mut mutating = 0usize;
    let mut logged = |expect_line: bool, log: &MemoryLog| -> Result<(), String> {
        mutating += usize::from(expect_line);
        ensure!(
            log.line_count() == mutating,
            "log has {} lines, expected {mutating}",
            log.line_count()
        );
        Ok(())
    };

    // Arm gating, and a fresh session's level, for every arm.
    for &(user, arm) in &arms[..6] {
        let (token, session) = c.login(user.0)?;
        logged(true, log)?;
        ensure!(
            session["level"] == 3,
            "{arm}: new session level {}",
            session["level"]
        );
        let (status, home) = c.get(&format!("/home?token={token}"));
        ensure!(status == 200, "{arm}: /home {status}");
        logged(false, log)?;
        ensure!(
            home["top_picks"]["items"].as_array().map(Vec::len) == Some(24),
            "{arm}: top picks"
        );
        let (broad_status, broad) = c.get(&format!("/broad?token={token}&page=1"));
        logged(false, log)?;
        let (level_status, _) = c.post("/level", json!({ "token": token, "level": 2 }));
        logged(level_status == 200, log)?;
        let (click_status, _) = c.post(
            "/event",
            json!({ "token": token, "kind": "carousel_click" }),
        );
        logged(click_status == 200, log)?;
        let has_carousel = home.get("broad").is_some_and(|b| !b.is_null());
        let expected = match arm.treatment {
            Treatment::Control => (false, 403, 403, 403, None),
            Treatment::Brc => (true, 200, 403, 200, Some(5)),
            Treatment::BrcDs => (true, 200, 200, 200, Some(3)),
        };
        let actual = (
            has_carousel,
            broad_status,
            level_status,
            click_status,
            broad["level"].as_u64(),
        );
        ensure!(
            actual == expected,
            "{arm}: (carousel, /broad, /level, click, level) = {actual:?}, want {expected:?}"
        );
        if arm.treatment == Treatment::Brc {
            let distinct: HashSet<u64> = clusters(&broad["items"]).into_iter().collect();
            ensure!(
                distinct.len() == 24,
                "BRC carousel covers {} clusters",
                distinct.len()
            );
            ensure!(
                home["broad"]["adjustable"] == false,
                "BRC carousel is adjustable"
            );
        }
    }

    // Slider: refresh on set, reset on the next session.
    let user = arms
        .iter()
        .find(|(_, a)| a.treatment == Treatment::BrcDs)
        .unwrap()
        .0;
    let (token, _) = c.login(user.0)?;
    logged(true, log)?;
    let (_, at3) = c.get(&format!("/broad?token={token}"));
    for level in [5, 1, 4] {
        let (status, page) = c.post("/level", json!({ "token": token, "level": level }));
        ensure!(status == 200, "/level {level}: {status} {page}");
        logged(true, log)?;
        ensure!(
            page["level"] == level && page["page_index"] == 1,
            "/level {level} returned {page}"
        );
        let (_, fetched) = c.get(&format!("/broad?token={token}"));
        ensure!(
            fetched["items"] == page["items"],
            "/broad disagrees with the page /level returned"
        );
        let distinct = clusters(&page["items"])
            .into_iter()
            .collect::<HashSet<_>>()
            .len();
        ensure!(
            distinct <= (5 * level as usize).min(24),
            "level {level} page spans {distinct} clusters"
        );
        if level == 5 {
            ensure!(
                page["items"] != at3["items"],
                "level 5 page equals the level 3 page"
            );
        }
    }
    let (status, _) = c.post("/level", json!({ "token": token, "level": 6 }));
    ensure!(status == 400, "level 6 accepted with {status}");
    logged(false, log)?;
    let (second, session) = c.login(user.0)?;
    logged(true, log)?;
    ensure!(
        session["level"] == 3,
        "second session starts at level {}",
        session["level"]
    );
    let (_, home) = c.get(&format!("/home?token={second}"));
    ensure!(
        home["broad"]["level"] == 3,
        "second session carousel at level {}",
        home["broad"]["level"]
    );

    // Remaining mutating calls, each one line; failures and reads none.
    let calls = [
        ("/ack", json!({ "token": second }), 200),
        (
            "/rating",
            json!({ "token": second, "movie_id": 5, "value": 4.5 }),
            200,
        ),
        (
            "/rating",
            json!({ "token": second, "movie_id": 5, "value": 4.3 }),
            400,
        ),
        ("/wishlist", json!({ "token": second, "movie_id": 5 }), 200),
        ("/wishlist", json!({ "token": second, "movie_id": 5 }), 200),
        (
            "/event",
            json!({ "token": second, "kind": "page_view", "movie_id": 5 }),
            200,
        ),
        (
            "/rating",
            json!({ "token": token, "movie_id": 6, "value": 3.0 }),
            401,
        ),
        ("/logout", json!({ "token": second }), 200),
        ("/logout", json!({ "token": second }), 401),
    ];
    for (path, body, want) in calls {
        let (status, resp) = c.post(path, body);
        ensure!(status == want, "{path}: {status} {resp}, want {want}");
        logged(status == 200, log)?;
    }
    Ok(format!(
        "over TCP: gating exact for 6 arms, level 3 per session, /level refreshes pages, {mutating} mutating calls = {} log lines",
        log.line_count()
    ))
}
