//! Server and client pipelines.
//!
//! The server runs the reference model, mirrors the client in a
//! [`MobileStateTracker`] and emits one message per step. The client turns
//! each message into a published state. Both sides are plain state machines
//! ([`Server`], [`Client`]) so the same logic runs under the virtual-time
//! harness ([`run_pair`]) and over real transports ([`server_run`],
//! [`client_run`]).

mod client;
mod cost;
mod harness;
mod server;

use std::fmt;
use std::str::FromStr;

pub use client::{Client, ClientMode, Outcome, Prepared};
pub use cost::CostModel;
pub use harness::{client_run, run_pair, server_run, ClientRun, ServerRun, StepRecord};
pub use server::{Decision, DecisionContext, DecisionHook, MobileStateTracker, ReferenceRunner, Server, ServerStep};

use crate::enkf::{Localization, Mt19937, DEFAULT_MEMBERS};
use crate::error::{Error, Result};
use crate::grid::{make_grid, GridLevel, StateVector};
use crate::protocol::{Init, StrategyTag};
use crate::quality::{Norm, QualitySpec};
use crate::solvers::HeatProblem;

pub const DEFAULT_COMBINED_THRESHOLD: f64 = 0.20;

/// Diffusivity of the default session. Much slower diffusion than the
/// solver default, so the surrogate keeps drifting from the reference over
/// the whole run instead of only during the first few steps.
pub const DEFAULT_SESSION_ALPHA: f64 = 0.01;

/// Covariance taper used by both sides of every filtering session. It is a
/// property of the protocol, not of a session, so it is not sent in the
/// handshake.
pub const LOCALIZATION: Localization = Localization::GaspariCohn { half_width: 2.0 };

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    SimpleStream,
    AdvancedStream,
    FullUpdate,
    PartialUpdate,
    /// Partial updates up to `threshold` times the point count, full
    /// updates beyond.
    Combined { threshold: f64 },
}

impl Strategy {
    pub const ALL_DEFAULT: [Strategy; 5] = [
        Strategy::SimpleStream,
        Strategy::AdvancedStream,
        Strategy::FullUpdate,
        Strategy::PartialUpdate,
        Strategy::Combined {
            threshold: DEFAULT_COMBINED_THRESHOLD,
        },
    ];

    pub fn tag(&self) -> StrategyTag {
        match self {
            Strategy::SimpleStream => StrategyTag::SimpleStream,
            Strategy::AdvancedStream => StrategyTag::AdvancedStream,
            Strategy::FullUpdate => StrategyTag::FullUpdate,
            Strategy::PartialUpdate => StrategyTag::PartialUpdate,
            Strategy::Combined { .. } => StrategyTag::Combined,
        }
    }

    pub fn is_stream(&self) -> bool {
        matches!(self, Strategy::SimpleStream | Strategy::AdvancedStream)
    }

    pub fn uses_filter(&self) -> bool {
        self.tag().uses_filter()
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::SimpleStream => "simple_stream",
            Strategy::AdvancedStream => "advanced_stream",
            Strategy::FullUpdate => "full_update",
            Strategy::PartialUpdate => "partial_update",
            Strategy::Combined { .. } => "combined",
        }
    }

    fn validate(&self) -> Result<()> {
        if let Strategy::Combined { threshold } = self {
            if !(0.0..=1.0).contains(threshold) {
                return Err(Error::config(format!("combined threshold {threshold} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Combined { threshold } if *threshold != DEFAULT_COMBINED_THRESHOLD => {
                write!(f, "combined:{threshold}")
            }
            _ => f.write_str(self.name()),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// Accepts the snake_case names; `combined:<fraction>` sets the threshold.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let strategy = match s {
            "simple_stream" => Strategy::SimpleStream,
            "advanced_stream" => Strategy::AdvancedStream,
            "full_update" => Strategy::FullUpdate,
            "partial_update" => Strategy::PartialUpdate,
            "combined" => Strategy::Combined {
                threshold: DEFAULT_COMBINED_THRESHOLD,
            },
            _ => match s.strip_prefix("combined:") {
                Some(t) => Strategy::Combined {
                    threshold: t
                        .parse()
                        .map_err(|_| Error::config(format!("bad combined threshold in {s:?}")))?,
                },
                None => return Err(Error::config(format!("unknown strategy {s:?}"))),
            },
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

/// Everything both nodes must agree on for one session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub problem: HeatProblem,
    pub surrogate_level: u32,
    pub reference_level: u32,
    pub quality: QualitySpec,
    pub strategy: Strategy,
    pub n_e: usize,
    /// Member perturbation; `None` means `q_max / 2` (or 0 for an infinite bound).
    pub sigma: Option<f64>,
    pub basic_seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            problem: HeatProblem {
                alpha: DEFAULT_SESSION_ALPHA,
                ..HeatProblem::default()
            },
            surrogate_level: 5,
            reference_level: 6,
            quality: QualitySpec::max_norm(2f64.powi(-7)),
            strategy: Strategy::PartialUpdate,
            n_e: DEFAULT_MEMBERS,
            sigma: None,
            basic_seed: 1,
        }
    }
}

impl SessionConfig {
    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(if self.quality.q_max.is_finite() {
            self.quality.q_max / 2.0
        } else {
            0.0
        })
    }

    pub fn surrogate_grid(&self) -> Result<GridLevel> {
        make_grid(self.surrogate_level)
    }

    pub fn reference_grid(&self) -> Result<GridLevel> {
        make_grid(self.reference_level)
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        self.strategy.validate()?;
        let s = self.surrogate_grid()?;
        self.reference_grid()?;
        if self.reference_level < self.surrogate_level {
            return Err(Error::config(format!(
                "reference level {} is coarser than surrogate level {}",
                self.reference_level, self.surrogate_level
            )));
        }
        if self.problem.n_t > u32::MAX as usize {
            return Err(Error::config("too many time steps"));
        }
        if self.strategy.uses_filter() && !(2..=u16::MAX as usize).contains(&self.n_e) {
            return Err(Error::config(format!("n_e must lie in [2, 65535], got {}", self.n_e)));
        }
        let sigma = self.sigma();
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!("sigma must be finite and non-negative, got {sigma}")));
        }
        if !self.strategy.is_stream() {
            // The surrogate must be runnable.
            crate::solvers::Stepper::surrogate(s, &self.problem)?;
        }
        Ok(())
    }

    /// Handshake message carrying `initial` (surrogate grid).
    pub fn init_message(&self, initial: &StateVector) -> Result<Init> {
        Ok(Init {
            surrogate_level: u8::try_from(self.surrogate_level).map_err(|_| Error::config("level too large"))?,
            reference_level: u8::try_from(self.reference_level).map_err(|_| Error::config("level too large"))?,
            n_t: self.problem.n_t as u32,
            dt: self.problem.dt,
            alpha: self.problem.alpha,
            q_max: self.quality.q_max,
            sigma: self.sigma(),
            norm: self.quality.norm,
            n_e: self.n_e.min(u16::MAX as usize) as u16,
            basic_seed: self.basic_seed,
            strategy: self.strategy.tag(),
            initial_state: initial.values().to_vec(),
        })
    }
}

/// Uniform `[0, 1)` values at interior points, zero on the boundary.
pub fn random_initial_state(level: GridLevel, seed: u64) -> StateVector {
    let mut mt = Mt19937::from_u64(seed);
    let mut s = StateVector::zeros(level);
    for i in level.interior_indices().collect::<Vec<_>>() {
        s[i] = mt.next_f64();
    }
    s
}

/// Parses a norm name: `max` or `euclidean`.
pub fn parse_norm(s: &str) -> Result<Norm> {
    match s.trim() {
        "max" => Ok(Norm::Max),
        "euclidean" | "l2" => Ok(Norm::Euclidean),
        other => Err(Error::config(format!("unknown norm {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL_DEFAULT {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!(
            "combined:0.35".parse::<Strategy>().unwrap(),
            Strategy::Combined { threshold: 0.35 }
        );
        assert!("combined:1.5".parse::<Strategy>().is_err());
        assert!("teleport".parse::<Strategy>().is_err());
    }

    #[test]
    fn initial_state_has_zero_boundary() {
        let g = make_grid(4).unwrap();
        let s = random_initial_state(g, 9);
        for i in 0..g.n_points() {
            if g.is_boundary(i) {
                assert_eq!(s[i], 0.0);
            } else {
                assert!((0.0..1.0).contains(&s[i]));
            }
        }
        assert!(s.bit_eq(&random_initial_state(g, 9)));
        assert!(!s.bit_eq(&random_initial_state(g, 10)));
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = SessionConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.sigma(), 2f64.powi(-8));
        let bad = SessionConfig {
            surrogate_level: 7,
            reference_level: 6,
            ..SessionConfig::default()
        };
        assert!(bad.validate().is_err());
        let unstable = SessionConfig {
            surrogate_level: 7,
            reference_level: 7,
            problem: HeatProblem::default(),
            ..SessionConfig::default()
        };
        assert!(matches!(unstable.validate(), Err(Error::Config(_))));
    }
}
