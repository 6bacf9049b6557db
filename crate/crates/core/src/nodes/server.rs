use crate::enkf::{self, Ensemble, Analyzer, PartialObservation, PerturbationSpec, SeedPolicy};
use crate::error::{Error, Result};
use crate::grid::{Restriction, StateVector};
use crate::protocol::{Init, Message};
use crate::quality::{select_violation_points, ViolationReport};
use crate::solvers::Stepper;

use super::{SessionConfig, Strategy};

/// Steps the reference model, emitting one state per surrogate step.
#[derive(Debug, Clone)]
pub struct ReferenceRunner {
    stepper: Stepper,
    substeps: usize,
    state: StateVector,
}

impl ReferenceRunner {
    pub fn new(cfg: &SessionConfig, initial: StateVector) -> Result<Self> {
        let grid = cfg.reference_grid()?;
        initial.check_same_grid(&StateVector::zeros(grid))?;
        Ok(Self {
            stepper: Stepper::reference(grid, &cfg.problem)?,
            substeps: cfg.problem.n_ref,
            state: initial,
        })
    }

    pub fn state(&self) -> &StateVector {
        &self.state
    }

    pub fn flops_per_state(&self) -> u64 {
        self.stepper.flops_per_step() * self.substeps as u64
    }

    pub fn advance(&mut self) -> Result<StateVector> {
        self.state = self.stepper.advance(&self.state, self.substeps)?;
        Ok(self.state.clone())
    }
}

/// The server's mirror of what the client holds.
#[derive(Debug, Clone)]
pub struct MobileStateTracker {
    pub state: StateVector,
    pub ensemble: Option<Ensemble>,
    pub step: u32,
}

/// Forced decision for one step.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Certify,
    Full,
    /// Partial update at these surrogate-grid indices (strictly increasing).
    Partial(Vec<usize>),
}

/// What a [`DecisionHook`] may look at.
#[derive(Debug)]
pub struct DecisionContext<'a> {
    pub step: u32,
    pub strategy: Strategy,
    pub candidate: &'a StateVector,
    pub target: &'a StateVector,
    pub quality: f64,
}

/// Overrides the server's update decision, e.g. to inject synthetic updates.
pub trait DecisionHook: Send {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Option<Decision>;
}

#[derive(Debug, Clone)]
pub struct ServerStep {
    pub message: Message,
    /// Tracked client state after this step.
    pub tracked: StateVector,
    /// Restricted reference state of this step.
    pub target: StateVector,
    /// Quality of the client's unassisted result (0 for streams).
    pub candidate_quality: f64,
    pub report: Option<ViolationReport>,
    /// Points whose unassisted error exceeds `q_max` (0 when certified).
    pub raw_violations: usize,
    /// A synthetic decision replaced the quality-driven one.
    pub forced: bool,
    /// Decision work in flops, excluding the reference model.
    pub decision_flops: u64,
    pub reference_flops: u64,
}

/// Server state machine.
pub struct Server {
    cfg: SessionConfig,
    surrogate: Option<Stepper>,
    restriction: Restriction,
    reference: ReferenceRunner,
    tracker: MobileStateTracker,
    seeds: SeedPolicy,
    pert: PerturbationSpec,
    hook: Option<Box<dyn DecisionHook>>,
}

impl Server {
    /// Builds the server from the reference-grid initial state.
    pub fn new(cfg: SessionConfig, reference_initial: StateVector) -> Result<Self> {
        cfg.validate()?;
        let s_grid = cfg.surrogate_grid()?;
        let r_grid = cfg.reference_grid()?;
        let restriction = Restriction::injection(r_grid, s_grid)?;
        let initial = restriction.apply(&reference_initial)?;
        let surrogate = if cfg.strategy.is_stream() {
            None
        } else {
            Some(Stepper::surrogate(s_grid, &cfg.problem)?)
        };
        let seeds = SeedPolicy::new(cfg.basic_seed);
        let pert = PerturbationSpec::new(cfg.sigma())?;
        let ensemble = if cfg.strategy.uses_filter() {
            Some(enkf::generate_members(&initial, cfg.n_e, seeds, 0, pert)?)
        } else {
            None
        };
        Ok(Self {
            reference: ReferenceRunner::new(&cfg, reference_initial)?,
            cfg,
            surrogate,
            restriction,
            tracker: MobileStateTracker {
                state: initial,
                ensemble,
                step: 0,
            },
            seeds,
            pert,
            hook: None,
        })
    }

    pub fn with_hook(mut self, hook: Box<dyn DecisionHook>) -> Self {
        self.hook = Some(hook);
        self
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn tracker(&self) -> &MobileStateTracker {
        &self.tracker
    }

    pub fn init(&self) -> Result<Init> {
        self.cfg.init_message(&self.tracker.state)
    }

    pub fn is_done(&self) -> bool {
        self.tracker.step as usize >= self.cfg.problem.n_t
    }

    /// A copy of the reference runner in its current state, for running the
    /// reference model on another thread and feeding [`Server::step_with`].
    pub fn reference_runner(&self) -> ReferenceRunner {
        self.reference.clone()
    }

    /// Advances the own reference runner and produces the next message.
    pub fn step(&mut self) -> Result<ServerStep> {
        let reference = self.reference.advance()?;
        let mut out = self.step_with(&reference)?;
        out.reference_flops = self.reference.flops_per_state();
        Ok(out)
    }

    /// Produces the next message given the reference state of that step.
    pub fn step_with(&mut self, reference: &StateVector) -> Result<ServerStep> {
        if self.is_done() {
            return Err(Error::config("session already finished"));
        }
        let step = self.tracker.step + 1;
        let target = self.restriction.apply(reference)?;
        let n = target.len();
        let norm = self.cfg.quality.norm;
        let q_max = self.cfg.quality.q_max;

        let mut out = ServerStep {
            message: Message::Certify { step },
            tracked: target.clone(),
            target: target.clone(),
            candidate_quality: 0.0,
            report: None,
            raw_violations: 0,
            forced: false,
            decision_flops: 0,
            reference_flops: 0,
        };

        match self.cfg.strategy {
            Strategy::SimpleStream => {
                out.message = Message::StreamState {
                    step,
                    state: reference.values().to_vec(),
                };
            }
            Strategy::AdvancedStream => {
                out.message = Message::StreamState {
                    step,
                    state: target.values().to_vec(),
                };
            }
            Strategy::FullUpdate => {
                let stepper = self.surrogate.as_ref().expect("surrogate present");
                let candidate = stepper.step(&self.tracker.state)?;
                out.decision_flops += stepper.flops_per_step() + 2 * n as u64;
                let q = norm.distance(candidate.values(), target.values());
                out.candidate_quality = q;
                if q > q_max {
                    out.raw_violations = count_raw_violations(&candidate, &target, q_max);
                }
                let mut decision = if q <= q_max { Decision::Certify } else { Decision::Full };
                if let Some(forced) = self.consult_hook(step, &candidate, &target, q) {
                    out.forced = true;
                    decision = match forced {
                        Decision::Partial(_) => Decision::Full,
                        d => d,
                    };
                }
                if decision == Decision::Certify {
                    out.tracked = candidate;
                } else {
                    out.message = Message::FullUpdate {
                        step,
                        state: target.values().to_vec(),
                    };
                }
            }
            Strategy::PartialUpdate | Strategy::Combined { .. } => {
                self.filter_step(step, &target, &mut out)?;
            }
        }

        self.tracker.state = out.tracked.clone();
        self.tracker.step = step;
        if let Some(e) = &self.tracker.ensemble {
            debug_assert_eq!(e.step(), step);
        }
        Ok(out)
    }

    fn consult_hook(
        &mut self,
        step: u32,
        candidate: &StateVector,
        target: &StateVector,
        quality: f64,
    ) -> Option<Decision> {
        let strategy = self.cfg.strategy;
        self.hook.as_mut().and_then(|h| {
            h.decide(&DecisionContext {
                step,
                strategy,
                candidate,
                target,
                quality,
            })
        })
    }

    fn filter_step(&mut self, step: u32, target: &StateVector, out: &mut ServerStep) -> Result<()> {
        let stepper = self.surrogate.clone().expect("surrogate present");
        let ensemble = self.tracker.ensemble.as_ref().expect("ensemble present");
        let n = target.len();
        let n_e = ensemble.len();
        let forecast = enkf::forecast(ensemble, |s| stepper.step(s))?;
        let candidate = forecast.mean();
        out.decision_flops += n_e as u64 * (stepper.flops_per_step() + n as u64) + 2 * n as u64;
        let q = self.cfg.quality.norm.distance(candidate.values(), target.values());
        out.candidate_quality = q;
        if q > self.cfg.quality.q_max {
            out.raw_violations = count_raw_violations(&candidate, target, self.cfg.quality.q_max);
        }

        let forced = self.consult_hook(step, &candidate, target, q);
        out.forced = forced.is_some();
        let (decision, mut analyzed) = match forced {
            Some(d) => (d, None),
            None => self.decide_from_quality(step, &candidate, target, &forecast, out)?,
        };

        match decision {
            Decision::Certify => {
                out.tracked = candidate;
                self.tracker.ensemble = Some(forecast);
            }
            Decision::Full => {
                out.message = Message::FullUpdate {
                    step,
                    state: target.values().to_vec(),
                };
                out.tracked = target.clone();
                self.tracker.ensemble = Some(enkf::generate_members(target, n_e, self.seeds, step, self.pert)?);
                out.decision_flops += enkf::generation_flops(n, n_e);
            }
            Decision::Partial(positions) => {
                let obs = PartialObservation::sample(target, &positions)?;
                let analyzed = match analyzed.take() {
                    Some(e) => e,
                    None => {
                        let analyzer = Analyzer::new(&forecast, super::LOCALIZATION)?;
                        let e = analyzer.analyze(&obs)?;
                        out.decision_flops += analyzer.work();
                        e
                    }
                };
                out.tracked = analyzed.mean();
                out.message = Message::PartialUpdate {
                    step,
                    pairs: obs.pairs().map(|(p, v)| (p as u32, v)).collect(),
                };
                self.tracker.ensemble = Some(analyzed);
            }
        }
        Ok(())
    }

    /// Quality-driven choice for the filtering strategies.
    fn decide_from_quality(
        &self,
        step: u32,
        candidate: &StateVector,
        target: &StateVector,
        forecast: &Ensemble,
        out: &mut ServerStep,
    ) -> Result<(Decision, Option<Ensemble>)> {
        let n = target.len();
        let n_e = forecast.len();
        let max_points = match self.cfg.strategy {
            Strategy::Combined { threshold } => (threshold * n as f64).floor() as usize,
            _ => n,
        }
        .min(n_e - 1);
        if out.candidate_quality <= self.cfg.quality.q_max {
            return Ok((Decision::Certify, None));
        }
        if max_points == 0 {
            return Ok((Decision::Full, None));
        }
        let analyzer = Analyzer::new(forecast, super::LOCALIZATION)?;
        let mut checks = 0u64;
        let mut report = select_violation_points(candidate, target, &self.cfg.quality, step, max_points, |obs| {
            checks += 1;
            analyzer.analyze_mean(obs)
        })?;
        let mut decision = (Decision::Full, None);
        if report.resolved && report.points.len() <= max_points {
            // The search ran on the cheap mean; confirm on the state the
            // client will actually publish.
            let obs = report.observation(n)?;
            let analyzed = analyzer.analyze(&obs)?;
            let published = analyzed.mean();
            checks += 1;
            out.decision_flops += (n * n_e) as u64;
            report.analyzed_q = self.cfg.quality.norm.distance(published.values(), target.values());
            report.resolved = report.analyzed_q <= self.cfg.quality.q_max;
            if report.resolved {
                decision = (Decision::Partial(obs.positions().to_vec()), Some(analyzed));
            }
        }
        out.decision_flops += analyzer.work() + checks * 2 * n as u64;
        out.report = Some(report);
        Ok(decision)
    }
}


fn count_raw_violations(candidate: &StateVector, target: &StateVector, q_max: f64) -> usize {
    candidate
        .values()
        .iter()
        .zip(target.values())
        .filter(|(a, b)| (*a - *b).abs() > q_max)
        .count()
}
