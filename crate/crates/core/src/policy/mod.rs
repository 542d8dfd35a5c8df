//! Decision makers that map the current world to a joint action.

mod baseline;

use std::fmt;
use std::path::PathBuf;

pub use baseline::{baseline_queries, baseline_step, least_loaded_dispatch, BaselineController, BaselineKind};

use crate::env::{JointAction, World};
use crate::error::{Error, Result};

/// Produces a joint action for the current slot.
///
/// A controller sees the whole world object so that same-slot query
/// responses can be obtained, but decentralized controllers only read each
/// dispatcher's own knowledge and query answers.
pub trait Controller {
    fn act(&mut self, world: &World) -> Result<JointAction>;
}

/// Where a MAPPO policy comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum MappoSource {
    Checkpoint(PathBuf),
    /// Train a fresh policy for the configuration before evaluating it.
    Train,
}

/// Policy selector: `never | random:<p> | always | mappo:<checkpoint> | mappo:train`.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Baseline(BaselineKind),
    Mappo(MappoSource),
}

impl PolicySpec {
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Baseline(BaselineKind::NeverQuery) => write!(f, "never"),
            PolicySpec::Baseline(BaselineKind::AlwaysQuery) => write!(f, "always"),
            PolicySpec::Baseline(BaselineKind::RandomQuery(p)) => write!(f, "random:{p}"),
            PolicySpec::Mappo(MappoSource::Train) => write!(f, "mappo:train"),
            PolicySpec::Mappo(MappoSource::Checkpoint(p)) => write!(f, "mappo:{}", p.display()),
        }
    }
}

impl std::str::FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let spec = match (head, arg) {
            ("never", None) => PolicySpec::Baseline(BaselineKind::NeverQuery),
            ("always", None) => PolicySpec::Baseline(BaselineKind::AlwaysQuery),
            ("random", None) => PolicySpec::Baseline(BaselineKind::RandomQuery(0.5)),
            ("random", Some(p)) => {
                let p: f64 = p
                    .parse()
                    .map_err(|_| Error::config(format!("bad random query probability `{p}`")))?;
                let kind = BaselineKind::RandomQuery(p);
                kind.validate()?;
                PolicySpec::Baseline(kind)
            }
            ("mappo", Some("train")) => PolicySpec::Mappo(MappoSource::Train),
            ("mappo", Some(path)) if !path.is_empty() => {
                PolicySpec::Mappo(MappoSource::Checkpoint(PathBuf::from(path)))
            }
            _ => {
                return Err(Error::config(format!(
                    "unknown policy `{s}` (expected never | random:<p> | always | mappo:<checkpoint> | mappo:train)"
                )))
            }
        };
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_policy_specs() {
        assert_eq!(
            "never".parse::<PolicySpec>().unwrap(),
            PolicySpec::Baseline(BaselineKind::NeverQuery)
        );
        assert_eq!(
            "random:0.25".parse::<PolicySpec>().unwrap(),
            PolicySpec::Baseline(BaselineKind::RandomQuery(0.25))
        );
        assert_eq!(
            "mappo:runs/ckpt.json".parse::<PolicySpec>().unwrap(),
            PolicySpec::Mappo(MappoSource::Checkpoint("runs/ckpt.json".into()))
        );
        assert_eq!(
            "mappo:train".parse::<PolicySpec>().unwrap(),
            PolicySpec::Mappo(MappoSource::Train)
        );
        assert!("random:2".parse::<PolicySpec>().is_err());
        assert!("sometimes".parse::<PolicySpec>().is_err());
        assert!("mappo:".parse::<PolicySpec>().is_err());
    }

    #[test]
    fn labels_round_trip() {
        for s in ["never", "always", "random:0.5", "mappo:train", "mappo:a/b.json"] {
            assert_eq!(s.parse::<PolicySpec>().unwrap().label(), s);
        }
    }
}
