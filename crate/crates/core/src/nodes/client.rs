use crate::enkf::{self, Ensemble, PartialObservation, PerturbationSpec, SeedPolicy};
use crate::error::{Error, Result};
use crate::grid::{make_grid, restrict, GridLevel, StateVector};
use crate::protocol::{Init, Message, MessageKind, StrategyTag};
use crate::quality::QualitySpec;
use crate::solvers::{HeatProblem, Stepper};

/// When the client runs its surrogate step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClientMode {
    /// Start the next step in the background right after publishing.
    Optimistic,
    /// Compute only once the server's message asks for it.
    Pessimistic,
}

impl std::str::FromStr for ClientMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "optimistic" => Ok(ClientMode::Optimistic),
            "pessimistic" => Ok(ClientMode::Pessimistic),
            other => Err(Error::config(format!("unknown client mode {other:?}"))),
        }
    }
}

/// Result of the local surrogate computation for the next step.
#[derive(Debug, Clone)]
pub enum Prepared {
    State(StateVector),
    Ensemble(Ensemble),
}

/// What handling one message produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub step: u32,
    pub kind: MessageKind,
    pub published: StateVector,
    /// The local forecast was needed for this step.
    pub used_forecast: bool,
    /// Work after the message arrived and before publishing, excluding the
    /// forecast.
    pub integrate_flops: u64,
    /// Work after publishing (ensemble regeneration).
    pub followup_flops: u64,
}

/// Client state machine, built from the handshake.
#[derive(Debug, Clone)]
pub struct Client {
    strategy: StrategyTag,
    grid: GridLevel,
    reference_grid: GridLevel,
    surrogate: Option<Stepper>,
    state: StateVector,
    ensemble: Option<Ensemble>,
    step: u32,
    n_t: u32,
    n_e: usize,
    seeds: SeedPolicy,
    pert: PerturbationSpec,
    quality: QualitySpec,
}

impl Client {
    pub fn from_init(init: &Init) -> Result<Self> {
        let grid = make_grid(init.surrogate_level as u32)?;
        let reference_grid = make_grid(init.reference_level as u32)?;
        if init.reference_level < init.surrogate_level {
            return Err(Error::protocol("reference grid coarser than surrogate grid"));
        }
        let state = StateVector::new(grid, init.initial_state.clone())
            .map_err(|e| Error::protocol(format!("initial state: {e}")))?;
        let problem = HeatProblem {
            alpha: init.alpha,
            dt: init.dt,
            n_t: init.n_t as usize,
            n_ref: 1,
        };
        let streaming = matches!(init.strategy, StrategyTag::SimpleStream | StrategyTag::AdvancedStream);
        let surrogate = if streaming {
            None
        } else {
            Some(Stepper::surrogate(grid, &problem)?)
        };
        let seeds = SeedPolicy::new(init.basic_seed);
        let pert = PerturbationSpec::new(init.sigma)?;
        let n_e = init.n_e as usize;
        let ensemble = if init.strategy.uses_filter() {
            Some(enkf::generate_members(&state, n_e, seeds, 0, pert)?)
        } else {
            None
        };
        Ok(Self {
            strategy: init.strategy,
            grid,
            reference_grid,
            surrogate,
            state,
            ensemble,
            step: 0,
            n_t: init.n_t,
            n_e,
            seeds,
            pert,
            quality: QualitySpec::new(init.norm, init.q_max)?,
        })
    }

    pub fn state(&self) -> &StateVector {
        &self.state
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.n_t
    }

    pub fn quality_spec(&self) -> &QualitySpec {
        &self.quality
    }

    /// Whether certifications and partial updates are possible at all.
    pub fn computes_locally(&self) -> bool {
        self.surrogate.is_some()
    }

    /// Flops of [`Client::prepare`].
    pub fn forecast_flops(&self) -> u64 {
        match (&self.surrogate, &self.ensemble) {
            (Some(s), Some(e)) => e.len() as u64 * (s.flops_per_step() + self.grid.n_points() as u64),
            (Some(s), None) => s.flops_per_step(),
            _ => 0,
        }
    }

    /// Runs the surrogate for the next step without committing anything.
    pub fn prepare(&self) -> Result<Prepared> {
        let stepper = self
            .surrogate
            .as_ref()
            .ok_or_else(|| Error::config("stream clients do not compute"))?;
        match &self.ensemble {
            Some(e) => Ok(Prepared::Ensemble(enkf::forecast(e, |s| stepper.step(s))?)),
            None => Ok(Prepared::State(stepper.step(&self.state)?)),
        }
    }

    fn state_from_wire(&self, grid: GridLevel, values: Vec<f64>) -> Result<StateVector> {
        StateVector::new(grid, values).map_err(|e| Error::protocol(format!("state payload: {e}")))
    }

    /// Integrates one message. `prepared` is the speculative result of
    /// [`Client::prepare`], if it was computed already.
    pub fn apply(&mut self, msg: Message, prepared: Option<Prepared>) -> Result<Outcome> {
        let step = msg.step();
        if matches!(msg, Message::Init(_)) {
            return Err(Error::protocol("second handshake in one session"));
        }
        if step != self.step + 1 || step > self.n_t {
            return Err(Error::protocol(format!(
                "expected step {}, got {step}",
                self.step + 1
            )));
        }
        let kind = msg.kind();
        let streaming = !self.computes_locally();
        let allowed = match kind {
            MessageKind::StreamState => streaming,
            MessageKind::Certify | MessageKind::FullUpdate => !streaming,
            MessageKind::PartialUpdate => self.strategy.uses_filter(),
            MessageKind::Init => false,
        };
        if !allowed {
            return Err(Error::protocol(format!(
                "{} is not valid under strategy {:?}",
                kind.name(),
                self.strategy
            )));
        }

        let n = self.grid.n_points();
        let mut outcome = Outcome {
            step,
            kind,
            published: self.state.clone(),
            used_forecast: false,
            integrate_flops: 0,
            followup_flops: 0,
        };
        match msg {
            Message::StreamState { state, .. } => {
                let published = if self.strategy == StrategyTag::SimpleStream {
                    restrict(&self.state_from_wire(self.reference_grid, state)?, self.grid)?
                } else {
                    self.state_from_wire(self.grid, state)?
                };
                outcome.published = published;
            }
            Message::Certify { .. } => {
                outcome.used_forecast = true;
                match self.take_prepared(prepared)? {
                    Prepared::State(s) => outcome.published = s,
                    Prepared::Ensemble(e) => {
                        outcome.published = e.mean();
                        self.ensemble = Some(e);
                    }
                }
            }
            Message::FullUpdate { state, .. } => {
                let s = self.state_from_wire(self.grid, state)?;
                if self.ensemble.is_some() {
                    self.ensemble = Some(enkf::generate_members(&s, self.n_e, self.seeds, step, self.pert)?);
                    outcome.followup_flops = enkf::generation_flops(n, self.n_e);
                }
                outcome.published = s;
            }
            Message::PartialUpdate { pairs, .. } => {
                outcome.used_forecast = true;
                let obs = PartialObservation::new(pairs.into_iter().map(|(p, v)| (p as usize, v)).collect(), n)?;
                let Prepared::Ensemble(forecast) = self.take_prepared(prepared)? else {
                    return Err(Error::protocol("partial update without an ensemble"));
                };
                let analyzer = enkf::Analyzer::new(&forecast, super::LOCALIZATION)?;
                let analyzed = analyzer.analyze(&obs)?;
                outcome.integrate_flops = analyzer.work() + (n * self.n_e) as u64;
                outcome.published = analyzed.mean();
                self.ensemble = Some(analyzed);
            }
            Message::Init(_) => unreachable!("rejected above"),
        }
        self.state = outcome.published.clone();
        self.step = step;
        Ok(outcome)
    }

    fn take_prepared(&self, prepared: Option<Prepared>) -> Result<Prepared> {
        match prepared {
            Some(p) => Ok(p),
            None => self.prepare(),
        }
    }
}
