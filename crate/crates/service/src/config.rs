//! Service configuration, resolved from layers. Later layers win:
//! built-in defaults, then the TOML file, then `DIVREC_*` environment variables, then
//! command-line flags.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use divrec_core::experiment::DEFAULT_SESSION_TIMEOUT_SECS;
use divrec_core::rerank::DEFAULT_POOL_SIZE;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Artifact names inside the model directory.
pub const MODEL_FILE: &str = "model.json";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const COHORTS_FILE: &str = "cohorts.csv";
pub const ENROLLMENT_FILE: &str = "arms.csv";
/// Default event log name inside the data directory.
pub const EVENT_LOG_FILE: &str = "events.jsonl";

pub const ENV_PREFIX: &str = "DIVREC_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Toml {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("environment variable {var}={value:?}: {message}")]
    Env {
        var: String,
        value: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub model_dir: PathBuf,
    /// Seeds the session-token generator; `None` draws from the OS.
    pub seed: Option<u64>,
    /// Used to assign arms when the model directory has cohorts but no enrollment file.
    pub arm_seed: u64,
    pub session_timeout_secs: i64,
    pub pool_size: usize,
    pub host: IpAddr,
    pub port: u16,
    /// Defaults to `events.jsonl` in the data directory.
    pub event_log: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            model_dir: PathBuf::from("model"),
            seed: None,
            arm_seed: 0,
            session_timeout_secs: DEFAULT_SESSION_TIMEOUT_SECS,
            pool_size: DEFAULT_POOL_SIZE,
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8080,
            event_log: None,
        }
    }
}

impl ServiceConfig {
    /// Applies `layers` over the defaults, lowest precedence first.
    pub fn resolve<'a>(layers: impl IntoIterator<Item = &'a ConfigLayer>) -> Self {
        let mut c = Self::default();
        for l in layers {
            macro_rules! take {
                ($($f:ident),*) => { $( if let Some(v) = &l.$f { c.$f = v.clone(); } )* };
            }
            take!(
                data_dir,
                model_dir,
                arm_seed,
                session_timeout_secs,
                pool_size,
                host,
                port
            );
            if l.seed.is_some() {
                c.seed = l.seed;
            }
            if l.event_log.is_some() {
                c.event_log = l.event_log.clone();
            }
        }
        c
    }

    pub fn event_log_path(&self) -> PathBuf {
        self.event_log
            .clone()
            .unwrap_or_else(|| self.data_dir.join(EVENT_LOG_FILE))
    }

    pub fn addr(&self) -> SocketAddr {
        SocketAddr::new(self.host, self.port)
    }
}

/// One source of settings; unset fields defer to lower layers.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub data_dir: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub arm_seed: Option<u64>,
    pub session_timeout_secs: Option<i64>,
    pub pool_size: Option<usize>,
    pub host: Option<IpAddr>,
    pub port: Option<u16>,
    pub event_log: Option<PathBuf>,
}

impl ConfigLayer {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Toml {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads `DIVREC_<FIELD>` variables, e.g. `DIVREC_POOL_SIZE`. Unrelated variables are
    /// ignored; `DIVREC_CONFIG` names the file and is not a setting.
    pub fn from_env(vars: impl IntoIterator<Item = (String, String)>) -> Result<Self, ConfigError> {
        let mut l = Self::default();
        for (var, value) in vars {
            let Some(key) = var.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            fn parse<T: std::str::FromStr>(var: &str, value: &str) -> Result<T, ConfigError>
            where
                T::Err: std::fmt::Display,
            {
                value.trim().parse().map_err(|e: T::Err| ConfigError::Env {
                    var: var.to_string(),
                    value: value.to_string(),
                    message: e.to_string(),
                })
            }
            match key {
                "DATA_DIR" => l.data_dir = Some(value.into()),
                "MODEL_DIR" => l.model_dir = Some(value.into()),
                "SEED" => l.seed = Some(parse(&var, &value)?),
                "ARM_SEED" => l.arm_seed = Some(parse(&var, &value)?),
                "SESSION_TIMEOUT_SECS" => l.session_timeout_secs = Some(parse(&var, &value)?),
                "POOL_SIZE" => l.pool_size = Some(parse(&var, &value)?),
                "HOST" => l.host = Some(parse(&var, &value)?),
                "PORT" => l.port = Some(parse(&var, &value)?),
                "EVENT_LOG" => l.event_log = Some(value.into()),
                _ => {}
            }
        }
        Ok(l)
    }
}
