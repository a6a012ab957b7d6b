use std::fmt::Display;
use std::process::ExitCode;

/// Why a stage stopped. User errors (bad flags, missing or malformed inputs) exit 1; anything
/// else exits 2.
#[derive(Debug)]
pub enum Failure {
    User(anyhow::Error),
    Internal(anyhow::Error),
}

impl Failure {
    pub fn user(msg: impl Display) -> Self {
        Failure::User(anyhow::anyhow!("{msg}"))
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            Failure::User(_) => ExitCode::from(1),
            Failure::Internal(_) => ExitCode::from(2),
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::User(e) | Failure::Internal(e) => e,
        }
    }
}

pub type StageResult<T = ()> = Result<T, Failure>;

/// Tags a fallible call with its failure class and a description of what was being attempted.
pub trait Classify<T> {
    fn user(self, doing: impl Display) -> StageResult<T>;
    fn internal(self, doing: impl Display) -> StageResult<T>;
}

impl<T, E> Classify<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn user(self, doing: impl Display) -> StageResult<T> {
        self.map_err(|e| Failure::User(e.into().context(doing.to_string())))
    }

    fn internal(self, doing: impl Display) -> StageResult<T> {
        self.map_err(|e| Failure::Internal(e.into().context(doing.to_string())))
    }
}

/// Joins the error chain with ": ", dropping causes the previous message already quotes (many
/// library errors embed their source in their own text).
pub fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if last.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
        last = text;
    }
    out
}
