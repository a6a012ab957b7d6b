use std::fs;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveTime};
use divrec_core::corpus::{
    load_genome, load_ratings, GENOME_SCORES_FILE, GENOME_TAGS_FILE, RATINGS_FILE,
};
use divrec_core::experiment::DateWindow;
use divrec_core::manifest::Manifest;
use divrec_core::{Genome, Ratings};
use tracing::warn;

use crate::failure::{Classify, StageResult};

/// Window defaults: the month before the live experiment, its six weeks, and three months after.
pub const PRE_WINDOW: &str = "2022-10-04..2022-11-03";
pub const DURING_WINDOW: &str = "2022-11-04..2022-12-16";
pub const POST_WINDOW: &str = "2022-12-17..2023-03-17";

pub fn ratings(data_dir: &Path, since: Option<NaiveDate>) -> StageResult<Ratings> {
    let path = data_dir.join(RATINGS_FILE);
    let ratings =
        Ratings::from_events(load_ratings(&path).user(format!("loading {}", path.display()))?);
    Ok(match since {
        Some(d) => ratings.since(start_of_day(d)),
        None => ratings,
    })
}

pub fn genome(data_dir: &Path) -> StageResult<Genome> {
    let load = load_genome(
        &data_dir.join(GENOME_SCORES_FILE),
        &data_dir.join(GENOME_TAGS_FILE),
    )
    .user(format!(
        "loading the tag genome from {}",
        data_dir.display()
    ))?;
    if !load.fills.is_empty() {
        warn!(
            movies = load.fills.len(),
            "genome rows missing for some tags; filled with 0.0"
        );
    }
    Ok(load.genome)
}

pub fn genome_inputs(manifest: &mut Manifest, data_dir: &Path) -> StageResult {
    for f in [GENOME_SCORES_FILE, GENOME_TAGS_FILE] {
        input(manifest, &data_dir.join(f))?;
    }
    Ok(())
}

/// Midnight UTC at the start of `d`, so `--since` includes the whole day.
pub fn start_of_day(d: NaiveDate) -> i64 {
    d.and_time(NaiveTime::MIN).and_utc().timestamp()
}

pub fn create_dir(dir: &Path) -> StageResult {
    fs::create_dir_all(dir).internal(format!("creating {}", dir.display()))
}

/// Directory that holds `file`, for manifests written beside single-file outputs.
pub fn dir_of(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn input(manifest: &mut Manifest, path: &Path) -> StageResult {
    manifest
        .input(path)
        .user(format!("hashing {}", path.display()))
}

pub fn output(manifest: &mut Manifest, path: &Path) -> StageResult {
    manifest
        .output(path)
        .internal(format!("hashing {}", path.display()))
}

pub fn write_manifest(manifest: &Manifest, dir: &Path) -> StageResult {
    manifest.write(dir).internal(format!(
        "writing {} in {}",
        manifest.file_name(),
        dir.display()
    ))
}

pub fn windows(
    pre: DateWindow,
    during: DateWindow,
    post: DateWindow,
) -> [(&'static str, DateWindow); 3] {
    [("pre", pre), ("during", during), ("post", post)]
}
