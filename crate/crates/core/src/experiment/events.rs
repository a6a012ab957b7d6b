use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{ExperimentError, Treatment};
use crate::corpus::Rating;
use crate::ids::{MovieId, UserId};

pub const EVENT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SESSION_TIMEOUT_SECS: i64 = 30 * 60;

/// One line of the interaction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub v: u32,
    pub user_id: UserId,
    /// Unix seconds.
    pub timestamp: i64,
    /// Opaque session token from the service, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Login,
    Logout,
    InfoAck,
    PageView {
        movie_id: MovieId,
    },
    SliderSet {
        level: u8,
    },
    Rating {
        movie_id: MovieId,
        value: Rating,
    },
    /// `added` is false when the movie was already on the wishlist.
    WishlistAdd {
        movie_id: MovieId,
        added: bool,
    },
    CarouselClick {
        treatment: Treatment,
    },
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::Login => 0,
            EventKind::InfoAck => 1,
            EventKind::PageView { .. } => 2,
            EventKind::SliderSet { .. } => 3,
            EventKind::Rating { .. } => 4,
            EventKind::WishlistAdd { .. } => 5,
            EventKind::CarouselClick { .. } => 6,
            EventKind::Logout => 7,
        }
    }

    fn payload(&self) -> (u32, u32) {
        match self {
            EventKind::PageView { movie_id } => (movie_id.0, 0),
            EventKind::SliderSet { level } => (u32::from(*level), 0),
            EventKind::Rating { movie_id, value } => (movie_id.0, u32::from(value.half_stars())),
            EventKind::WishlistAdd { movie_id, added } => (movie_id.0, u32::from(*added)),
            EventKind::CarouselClick { treatment } => (*treatment as u32, 0),
            _ => (0, 0),
        }
    }
}

impl InteractionEvent {
    pub fn new(user_id: UserId, timestamp: i64, kind: EventKind) -> Self {
        Self {
            v: EVENT_SCHEMA_VERSION,
            user_id,
            timestamp,
            token: None,
            kind,
        }
    }

    /// Total order used before sessionizing, so results never depend on log line order. A login
    /// sorts before anything else at the same second.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        (
            self.user_id,
            self.timestamp,
            self.kind.rank(),
            self.kind.payload(),
            &self.token,
        )
            .cmp(&(
                other.user_id,
                other.timestamp,
                other.kind.rank(),
                other.kind.payload(),
                &other.token,
            ))
    }
}

pub fn write_events<W: Write>(mut w: W, events: &[InteractionEvent]) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Reads JSON lines, skipping blank lines. Errors carry the 1-based line number.
pub fn read_events<R: BufRead>(r: R) -> Result<Vec<InteractionEvent>, ExperimentError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| ExperimentError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let v = value.get("v").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if v != EVENT_SCHEMA_VERSION {
            return Err(ExperimentError::SchemaVersion {
                line: line_no,
                found: v,
            });
        }
        let event = serde_json::from_value(value).map_err(|e| ExperimentError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(event);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub user_id: UserId,
    pub start: i64,
    pub end: i64,
    pub events: Vec<InteractionEvent>,
}

impl Session {
    pub fn duration_secs(&self) -> i64 {
        self.end - self.start
    }
}

/// Splits each user's events into sessions. A session starts at every login and after any
/// silence of at least `timeout_secs`. Output is ordered by user, then start time.
pub fn sessionize(events: &[InteractionEvent], timeout_secs: i64) -> Vec<Session> {
    let mut by_user: BTreeMap<UserId, Vec<&InteractionEvent>> = BTreeMap::new();
    for e in events {
        by_user.entry(e.user_id).or_default().push(e);
    }
    let mut sessions = Vec::new();
    for (user, mut evs) in by_user {
        evs.sort_by(|a, b| a.canonical_cmp(b));
        let mut current: Option<Session> = None;
        for e in evs {
            let split = match &current {
                None => true,
                Some(s) => e.kind == EventKind::Login || e.timestamp - s.end >= timeout_secs,
            };
            if split {
                sessions.extend(current.take());
                current = Some(Session {
                    user_id: user,
                    start: e.timestamp,
                    end: e.timestamp,
                    events: Vec::new(),
                });
            }
            let s = current.as_mut().unwrap();
            s.end = e.timestamp;
            s.events.push(e.clone());
        }
        sessions.extend(current);
    }
    sessions
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(ts: i64, kind: EventKind) -> InteractionEvent {
        InteractionEvent::new(UserId(1), ts, kind)
    }

    #[test]
    fn five_minutes_is_one_session() {
        let s = sessionize(&[ev(0, EventKind::Login), ev(300, EventKind::Logout)], 1800);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].duration_secs(), 300);
    }

    #[test]
    fn thirty_one_minutes_is_two_sessions() {
        let s = sessionize(
            &[
                ev(
                    0,
                    EventKind::PageView {
                        movie_id: MovieId(1),
                    },
                ),
                ev(
                    31 * 60,
                    EventKind::PageView {
                        movie_id: MovieId(2),
                    },
                ),
            ],
            1800,
        );
        assert_eq!(s.len(), 2);
        let exactly = sessionize(
            &[ev(0, EventKind::Login), ev(1800, EventKind::Logout)],
            1800,
        );
        assert_eq!(exactly.len(), 2);
    }

    #[test]
    fn login_starts_session() {
        let s = sessionize(&[ev(0, EventKind::Login), ev(60, EventKind::Login)], 1800);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn every_event_in_one_session() {
        let events: Vec<_> = (0..50)
            .map(|i| {
                ev(
                    i * 700,
                    if i % 7 == 0 {
                        EventKind::Login
                    } else {
                        EventKind::SliderSet { level: 3 }
                    },
                )
            })
            .collect();
        let s = sessionize(&events, 1800);
        assert_eq!(s.iter().map(|s| s.events.len()).sum::<usize>(), 50);
        for sess in &s {
            assert!(sess.end >= sess.start);
            for w in sess.events.windows(2) {
                assert!(w[1].timestamp - w[0].timestamp < 1800);
            }
        }
    }

    #[test]
    fn json_lines_round_trip() {
        let events = vec![
            ev(1, EventKind::Login),
            ev(
                2,
                EventKind::Rating {
                    movie_id: MovieId(5),
                    value: Rating::from_stars(4.5).unwrap(),
                },
            ),
            ev(
                3,
                EventKind::WishlistAdd {
                    movie_id: MovieId(5),
                    added: false,
                },
            ),
            ev(
                4,
                EventKind::CarouselClick {
                    treatment: Treatment::BrcDs,
                },
            ),
        ];
        let mut buf = Vec::new();
        write_events(&mut buf, &events).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().contains(r#""kind":"login""#));
        assert_eq!(read_events(&buf[..]).unwrap(), events);
    }

    #[test]
    fn bad_lines_are_addressed() {
        let input = "{\"v\":1,\"user_id\":1,\"timestamp\":0,\"kind\":\"login\"}\nnot json\n";
        assert!(matches!(
            read_events(input.as_bytes()),
            Err(ExperimentError::Parse { line: 2, .. })
        ));
        let old = "{\"v\":0,\"user_id\":1,\"timestamp\":0,\"kind\":\"login\"}\n";
        assert!(matches!(
            read_events(old.as_bytes()),
            Err(ExperimentError::SchemaVersion { line: 1, found: 0 })
        ));
    }
}
