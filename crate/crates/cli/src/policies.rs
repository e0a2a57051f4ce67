//! Policy specs accepted on the command line.

use simeval_core::eval::{HttpPolicy, Policy, ReplayPolicy, ScriptedPolicy, Skill, ZeroPolicy};
use simeval_core::scene::ComposedScene;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

/// `zero`, `scripted:<skill>`, `replay:<actions.csv>` or an `http(s)://` endpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Zero,
    Scripted(String),
    Replay(PathBuf),
    Http(String),
}

impl FromStr for PolicySpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "zero" {
            return Ok(Self::Zero);
        }
        if let Some(name) = s.strip_prefix("scripted:") {
            if Skill::named(name).is_none() {
                return Err(format!("unknown scripted skill `{name}`; known: {}", Skill::NAMES.join(", ")));
            }
            return Ok(Self::Scripted(name.to_string()));
        }
        if let Some(path) = s.strip_prefix("replay:") {
            return Ok(Self::Replay(PathBuf::from(path)));
        }
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(Self::Http(s.to_string()));
        }
        Err(format!("unrecognized policy `{s}`: expected zero, scripted:<skill>, replay:<file> or an http URL"))
    }
}

impl std::fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Zero => f.write_str("zero"),
            Self::Scripted(n) => write!(f, "scripted:{n}"),
            Self::Replay(p) => write!(f, "replay:{}", p.display()),
            Self::Http(u) => f.write_str(u),
        }
    }
}

impl PolicySpec {
    /// Builds the policy. Scripted policies read their items and destination
    /// from the scene's rubric.
    pub fn build(&self, scene: &ComposedScene, timeout: Duration) -> anyhow::Result<Box<dyn Policy>> {
        Ok(match self {
            Self::Zero => Box::new(ZeroPolicy),
            Self::Scripted(name) => {
                let skill = Skill::named(name).expect("checked when parsed");
                Box::new(ScriptedPolicy::for_rubric(self.to_string(), skill, scene, 0)?)
            }
            Self::Replay(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
                Box::new(ReplayPolicy::from_csv(self.to_string(), &text, 5)?)
            }
            Self::Http(url) => Box::new(HttpPolicy::new(url, timeout)?),
        })
    }
}
