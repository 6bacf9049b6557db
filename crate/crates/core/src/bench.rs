//! Benchmark scenarios: parameter sweeps over all strategies, synthetic
//! update injection, CSV output and the violation study.
//!
//! A scenario file is TOML; see `docs/config.md` for the schema and
//! `docs/csv.md` for the columns written by [`emit_csv`].

use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enkf::rng::mix64;
use crate::enkf::{Mt19937, SeedPolicy};
use crate::error::{Error, Result};
use crate::grid::{make_grid, GridLevel};
use crate::nodes::{
    parse_norm, random_initial_state, run_pair, ClientMode, CostModel, Decision, DecisionContext, DecisionHook,
    Server, SessionConfig, Strategy, DEFAULT_SESSION_ALPHA,
};
use crate::protocol::MessageKind;
use crate::quality::{quality_against, QualitySpec};
use crate::solvers::HeatProblem;
use crate::transport::{ChannelConfig, DEFAULT_BUCKET_BYTES};

pub const MIN_REPETITIONS: usize = 3;

/// The parameter a scenario varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    QMax,
    Rate,
    UpdateProbability,
    UpdateSizeFraction,
    SurrogateLevel,
}

impl SweepVar {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVar::QMax => "q_max",
            SweepVar::Rate => "rate",
            SweepVar::UpdateProbability => "update_probability",
            SweepVar::UpdateSizeFraction => "update_size_fraction",
            SweepVar::SurrogateLevel => "surrogate_level",
        }
    }
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How update decisions are made during a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticUpdatePolicy {
    /// Quality-driven decisions.
    Real,
    /// A full update with probability `p` per step, otherwise a certification.
    Bernoulli { p: f64 },
    /// A partial update of `k` uniformly drawn interior points with
    /// probability `p` per step, otherwise a certification.
    FixedSize { p: f64, k: usize },
}

impl SyntheticUpdatePolicy {
    pub fn validate(&self, level: GridLevel) -> Result<()> {
        let p = match *self {
            SyntheticUpdatePolicy::Real => return Ok(()),
            SyntheticUpdatePolicy::Bernoulli { p } => p,
            SyntheticUpdatePolicy::FixedSize { p, k } => {
                if k == 0 || k > level.n_interior() {
                    return Err(Error::config(format!(
                        "fixed update size {k} outside [1, {}]",
                        level.n_interior()
                    )));
                }
                p
            }
        };
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config(format!("update probability {p} outside [0, 1]")));
        }
        Ok(())
    }
}

/// Decision hook drawing synthetic updates from its own Mersenne Twister.
///
/// One uniform draw decides whether a step updates; a [`SyntheticUpdatePolicy::FixedSize`]
/// update then draws its points by a partial Fisher–Yates shuffle of the
/// interior indices. Every strategy consults the hook once per step, so runs
/// with the same seed see the same update pattern.
#[derive(Debug)]
pub struct SyntheticHook {
    policy: SyntheticUpdatePolicy,
    rng: Mt19937,
    interior: Vec<usize>,
}

impl DecisionHook for SyntheticHook {
    fn decide(&mut self, _ctx: &DecisionContext<'_>) -> Option<Decision> {
        match self.policy {
            SyntheticUpdatePolicy::Real => None,
            SyntheticUpdatePolicy::Bernoulli { p } => Some(if self.rng.next_f64() < p {
                Decision::Full
            } else {
                Decision::Certify
            }),
            SyntheticUpdatePolicy::FixedSize { p, k } => {
                if self.rng.next_f64() >= p {
                    return Some(Decision::Certify);
                }
                let len = self.interior.len();
                for i in 0..k {
                    let j = i + self.rng.below(len - i);
                    self.interior.swap(i, j);
                }
                let mut points = self.interior[..k].to_vec();
                points.sort_unstable();
                Some(Decision::Partial(points))
            }
        }
    }
}

/// Builds the hook for `policy` on the surrogate grid; `None` for real decisions.
pub fn inject_synthetic(
    policy: SyntheticUpdatePolicy,
    level: GridLevel,
    seed: u64,
) -> Result<Option<Box<dyn DecisionHook>>> {
    policy.validate(level)?;
    if policy == SyntheticUpdatePolicy::Real {
        return Ok(None);
    }
    Ok(Some(Box::new(SyntheticHook {
        policy,
        rng: Mt19937::from_u64(seed),
        interior: level.interior_indices().collect(),
    })))
}

/// A validated benchmark scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    /// Session settings shared by every run; the strategy field is replaced per run.
    pub session: SessionConfig,
    pub strategies: Vec<Strategy>,
    pub sweep: SweepVar,
    pub values: Vec<f64>,
    pub repetitions: usize,
    pub seed: u64,
    pub channel: ChannelConfig,
    pub cost: CostModel,
    pub mode: ClientMode,
    /// Policy for sweeps that do not set one themselves.
    pub synthetic: SyntheticUpdatePolicy,
    /// Update probability of fixed-size updates in an `update_size_fraction` sweep.
    pub update_probability: f64,
}

impl Scenario {
    /// Default scenario sweeping `sweep` over typical values.
    pub fn default_for(sweep: SweepVar) -> Self {
        let values = match sweep {
            SweepVar::QMax => (5..=9).map(|e| 2f64.powi(-e)).collect(),
            SweepVar::Rate => vec![5e4, 1e5, 2.5e5, 5e5, 1e6, 2e6, 5e6, 1e7],
            SweepVar::UpdateProbability => vec![0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0],
            SweepVar::UpdateSizeFraction => (1..=10).map(|i| i as f64 / 10.0).collect(),
            SweepVar::SurrogateLevel => vec![3.0, 4.0, 5.0, 6.0],
        };
        let strategies = match sweep {
            SweepVar::QMax => vec![Strategy::FullUpdate, Strategy::PartialUpdate],
            _ => Strategy::ALL_DEFAULT[..4].to_vec(),
        };
        Self {
            name: sweep.name().to_string(),
            session: SessionConfig::default(),
            strategies,
            sweep,
            values,
            repetitions: 10,
            seed: 1,
            channel: ChannelConfig::default(),
            cost: CostModel::default(),
            mode: ClientMode::Optimistic,
            synthetic: SyntheticUpdatePolicy::Real,
            update_probability: 0.5,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::config(format!("scenario file: {e}")))?;
        file.into_scenario()
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("sweep values must not be empty"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("sweep values must be finite"));
        }
        if self.repetitions < MIN_REPETITIONS {
            return Err(Error::config(format!(
                "at least {MIN_REPETITIONS} repetitions are needed for a median, got {}",
                self.repetitions
            )));
        }
        if self.strategies.is_empty() {
            return Err(Error::config("no strategies selected"));
        }
        if !(0.0..=1.0).contains(&self.update_probability) {
            return Err(Error::config("update probability outside [0, 1]"));
        }
        self.channel.validate()?;
        self.cost.validate()?;
        self.synthetic.validate(self.session.surrogate_grid()?)
    }

    /// Session, channel and policy of one run.
    fn configure(&self, value: f64, strategy: Strategy) -> Result<(SessionConfig, ChannelConfig, SyntheticUpdatePolicy)> {
        let mut session = self.session.clone();
        session.strategy = strategy;
        let mut channel = self.channel;
        let mut policy = self.synthetic;
        match self.sweep {
            SweepVar::QMax => session.quality = QualitySpec::new(session.quality.norm, value)?,
            SweepVar::Rate => channel.rate_bits_per_s = value,
            SweepVar::UpdateProbability => policy = SyntheticUpdatePolicy::Bernoulli { p: value },
            SweepVar::UpdateSizeFraction => {
                let interior = session.surrogate_grid()?.n_interior();
                let k = (value * interior as f64).round() as usize;
                policy = SyntheticUpdatePolicy::FixedSize {
                    p: self.update_probability,
                    k,
                };
            }
            SweepVar::SurrogateLevel => {
                if value.fract() != 0.0 || value < 0.0 {
                    return Err(Error::config(format!("surrogate level {value} is not a level")));
                }
                session.surrogate_level = value as u32;
            }
        }
        session.validate()?;
        channel.validate()?;
        policy.validate(session.surrogate_grid()?)?;
        Ok((session, channel, policy))
    }
}

/// Seeds of repetition `rep`: initial state, ensemble basic seed and
/// synthetic injection. Independent of the strategy.
fn repetition_seeds(seed: u64, sweep_index: usize, rep: usize) -> (u64, u64, u64) {
    let policy = SeedPolicy::new(seed);
    let base = policy.derive(rep as u64);
    (base, mix64(base ^ 0x5eed), mix64(base ^ ((sweep_index as u64) << 32 | 0x1d)))
}

/// One CSV record. Median rows have `rep = "median"`; failed runs keep
/// their identifying columns, leave the measurements empty and fill `error`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub run_id: String,
    pub strategy: String,
    pub sweep_var: String,
    pub sweep_value: f64,
    pub rep: String,
    pub total_latency_s: Option<f64>,
    pub bytes_sent: Option<u64>,
    pub n_certify: Option<u64>,
    pub n_full: Option<u64>,
    pub n_partial: Option<u64>,
    pub mean_violation_fraction: Option<f64>,
    #[serde(rename = "Q_A")]
    pub q_a: Option<f64>,
    pub q_max: f64,
    pub error: String,
}

impl Row {
    pub fn is_median(&self) -> bool {
        self.rep == "median"
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_empty()
    }
}

/// Measurements of one successful run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub total_latency_s: f64,
    pub bytes_sent: u64,
    pub n_certify: u64,
    pub n_full: u64,
    pub n_partial: u64,
    /// Mean over violating steps of the fraction of points whose unassisted
    /// error exceeds `q_max`; `None` for streams.
    pub mean_violation_fraction: Option<f64>,
    pub q_a: f64,
}

/// Runs one session under virtual time and measures it.
pub fn run_once(
    session: &SessionConfig,
    channel: ChannelConfig,
    cost: &CostModel,
    mode: ClientMode,
    policy: SyntheticUpdatePolicy,
    initial_seed: u64,
    injection_seed: u64,
) -> Result<RunMetrics> {
    let s_grid = session.surrogate_grid()?;
    let initial = random_initial_state(session.reference_grid()?, initial_seed);
    let hook = inject_synthetic(policy, s_grid, injection_seed)?;
    let (client, server) = run_pair(session, initial, channel, mode, cost, hook)?;
    let mut q_a = 0.0f64;
    for (a, t) in client.approx_chain.iter().zip(&server.target_chain) {
        q_a = q_a.max(quality_against(a, t, session.quality.norm)?);
    }
    let count = |k: MessageKind| client.kinds.iter().filter(|&&x| x == k).count() as u64;
    let mean_violation_fraction = (!session.strategy.is_stream()).then(|| {
        let n = s_grid.n_points() as f64;
        let violating: Vec<f64> = server
            .steps
            .iter()
            .filter(|r| r.candidate_quality > session.quality.q_max)
            .map(|r| r.raw_violations as f64 / n)
            .collect();
        if violating.is_empty() {
            0.0
        } else {
            violating.iter().sum::<f64>() / violating.len() as f64
        }
    });
    Ok(RunMetrics {
        total_latency_s: client.total_latency,
        bytes_sent: server.stats.bytes_sent,
        n_certify: count(MessageKind::Certify),
        n_full: count(MessageKind::FullUpdate),
        n_partial: count(MessageKind::PartialUpdate),
        mean_violation_fraction,
        q_a,
    })
}

/// Runs every (sweep value, strategy, repetition) of `scenario` and appends
/// one median row per (sweep value, strategy). Runs execute in parallel;
/// the row order is fixed.
pub fn run_scenario(scenario: &Scenario) -> Result<Vec<Row>> {
    scenario.validate()?;
    let mut jobs = Vec::new();
    for (vi, &value) in scenario.values.iter().enumerate() {
        for &strategy in &scenario.strategies {
            for rep in 0..scenario.repetitions {
                jobs.push((vi, value, strategy, rep));
            }
        }
    }
    let rows: Vec<Row> = jobs
        .par_iter()
        .map(|&(vi, value, strategy, rep)| {
            let run_id = format!("{}-{vi}-{strategy}-{rep}", scenario.name);
            let mut row = Row {
                run_id,
                strategy: strategy.to_string(),
                sweep_var: scenario.sweep.name().to_string(),
                sweep_value: value,
                rep: rep.to_string(),
                total_latency_s: None,
                bytes_sent: None,
                n_certify: None,
                n_full: None,
                n_partial: None,
                mean_violation_fraction: None,
                q_a: None,
                q_max: scenario.session.quality.q_max,
                error: String::new(),
            };
            let outcome = scenario.configure(value, strategy).and_then(|(session, channel, policy)| {
                row.q_max = session.quality.q_max;
                let (initial, basic, injection) = repetition_seeds(scenario.seed, vi, rep);
                let session = SessionConfig {
                    basic_seed: basic,
                    ..session
                };
                run_once(&session, channel, &scenario.cost, scenario.mode, policy, initial, injection)
            });
            match outcome {
                Ok(m) => {
                    row.total_latency_s = Some(m.total_latency_s);
                    row.bytes_sent = Some(m.bytes_sent);
                    row.n_certify = Some(m.n_certify);
                    row.n_full = Some(m.n_full);
                    row.n_partial = Some(m.n_partial);
                    row.mean_violation_fraction = m.mean_violation_fraction;
                    row.q_a = Some(m.q_a);
                }
                Err(e) => row.error = e.to_string(),
            }
            row
        })
        .collect();

    let mut out = rows.clone();
    for (vi, &value) in scenario.values.iter().enumerate() {
        for &strategy in &scenario.strategies {
            let group: Vec<&Row> = rows
                .iter()
                .filter(|r| r.sweep_value == value && r.strategy == strategy.to_string() && r.is_ok())
                .collect();
            out.push(median_row(&group, scenario, vi, value, strategy));
        }
    }
    Ok(out)
}

fn median_row(group: &[&Row], scenario: &Scenario, vi: usize, value: f64, strategy: Strategy) -> Row {
    let med = |f: &dyn Fn(&Row) -> Option<f64>| {
        let v: Vec<f64> = group.iter().filter_map(|r| f(r)).collect();
        (!v.is_empty()).then(|| median(&v))
    };
    let med_u = |f: &dyn Fn(&Row) -> Option<u64>| med(&|r| f(r).map(|x| x as f64)).map(|x| x.round() as u64);
    Row {
        run_id: format!("{}-{vi}-{strategy}-median", scenario.name),
        strategy: strategy.to_string(),
        sweep_var: scenario.sweep.name().to_string(),
        sweep_value: value,
        rep: "median".into(),
        total_latency_s: med(&|r| r.total_latency_s),
        bytes_sent: med_u(&|r| r.bytes_sent),
        n_certify: med_u(&|r| r.n_certify),
        n_full: med_u(&|r| r.n_full),
        n_partial: med_u(&|r| r.n_partial),
        mean_violation_fraction: med(&|r| r.mean_violation_fraction),
        q_a: med(&|r| r.q_a),
        q_max: group.first().map_or(scenario.session.quality.q_max, |r| r.q_max),
        error: if group.is_empty() {
            "no successful repetitions".into()
        } else {
            String::new()
        },
    }
}

/// Median; the mean of the two middle values for even lengths.
///
/// # Panics
/// On an empty slice.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

pub fn write_csv<W: Write, R: Serialize>(rows: &[R], header: &[&str], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const ROW_COLUMNS: [&str; 14] = [
    "run_id",
    "strategy",
    "sweep_var",
    "sweep_value",
    "rep",
    "total_latency_s",
    "bytes_sent",
    "n_certify",
    "n_full",
    "n_partial",
    "mean_violation_fraction",
    "Q_A",
    "q_max",
    "error",
];

/// Writes rows with a header; an empty slice gives a header-only file.
pub fn emit_csv(rows: &[Row], path: &Path) -> Result<()> {
    write_csv(rows, &ROW_COLUMNS, File::create(path)?)
}

/// Per (sweep value, strategy) medians from the median rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub sweep_var: String,
    pub sweep_value: f64,
    pub strategy: String,
    pub median_latency_s: Option<f64>,
    pub median_bytes: Option<u64>,
    /// Median SimpleStream latency over this strategy's median latency.
    pub speedup_vs_simple_stream: Option<f64>,
}

pub const SUMMARY_COLUMNS: [&str; 6] = [
    "sweep_var",
    "sweep_value",
    "strategy",
    "median_latency_s",
    "median_bytes",
    "speedup_vs_simple_stream",
];

pub fn summarize(rows: &[Row]) -> Vec<SummaryRow> {
    let medians: Vec<&Row> = rows.iter().filter(|r| r.is_median()).collect();
    medians
        .iter()
        .map(|r| {
            let baseline = medians
                .iter()
                .find(|b| b.sweep_value == r.sweep_value && b.strategy == Strategy::SimpleStream.name())
                .and_then(|b| b.total_latency_s);
            SummaryRow {
                sweep_var: r.sweep_var.clone(),
                sweep_value: r.sweep_value,
                strategy: r.strategy.clone(),
                median_latency_s: r.total_latency_s,
                median_bytes: r.bytes_sent,
                speedup_vs_simple_stream: baseline.zip(r.total_latency_s).map(|(b, l)| b / l),
            }
        })
        .collect()
}

pub fn emit_summary(rows: &[Row], path: &Path) -> Result<()> {
    write_csv(&summarize(rows), &SUMMARY_COLUMNS, File::create(path)?)
}

/// Fixed-width text rendering of [`summarize`].
pub fn format_summary(rows: &[Row]) -> String {
    let mut s = format!(
        "{:<22} {:>12} {:<18} {:>12} {:>12} {:>9}\n",
        "sweep_var", "value", "strategy", "latency_s", "bytes", "speedup"
    );
    let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
    for r in summarize(rows) {
        s.push_str(&format!(
            "{:<22} {:>12} {:<18} {:>12} {:>12} {:>9}\n",
            r.sweep_var,
            format!("{}", r.sweep_value),
            r.strategy,
            opt(r.median_latency_s, 4),
            r.median_bytes.map_or("-".to_string(), |b| b.to_string()),
            opt(r.speedup_vs_simple_stream, 2),
        ));
    }
    s
}

/// Settings of the violation study.
#[derive(Debug, Clone)]
pub struct ViolationStudy {
    pub session: SessionConfig,
    pub q_values: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for ViolationStudy {
    fn default() -> Self {
        Self {
            session: SessionConfig {
                strategy: Strategy::FullUpdate,
                ..SessionConfig::default()
            },
            q_values: (5..=9).map(|e| 2f64.powi(-e)).collect(),
            seeds: (0..10).collect(),
        }
    }
}

/// Violation statistics of one full-update run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationRow {
    pub q_max: f64,
    /// Seed, or `median` for the per-`q_max` median row.
    pub seed: String,
    /// Fraction of steps whose surrogate result violates the bound.
    pub violation_state_ratio: f64,
    /// Mean over violating steps of the fraction of points that violate the
    /// bound on their own.
    pub violation_point_fraction: f64,
}

pub const VIOLATION_COLUMNS: [&str; 4] = ["q_max", "seed", "violation_state_ratio", "violation_point_fraction"];

/// Runs the full-update server for every (q_max, seed) and records how many
/// states and points violate the bound. The full-update server resets to
/// the reference after every violation, so each step measures one
/// surrogate step from a state the client actually held.
pub fn run_violation_study(study: &ViolationStudy) -> Result<Vec<ViolationRow>> {
    if study.session.strategy != Strategy::FullUpdate {
        return Err(Error::config("the violation study runs the full-update strategy"));
    }
    let mut jobs = Vec::new();
    for &q in &study.q_values {
        for &seed in &study.seeds {
            jobs.push((q, seed));
        }
    }
    let rows = jobs
        .par_iter()
        .map(|&(q, seed)| -> Result<ViolationRow> {
            let session = SessionConfig {
                quality: QualitySpec::new(study.session.quality.norm, q)?,
                basic_seed: seed,
                ..study.session.clone()
            };
            let n = session.surrogate_grid()?.n_points() as f64;
            let mut server = Server::new(session.clone(), random_initial_state(session.reference_grid()?, seed))?;
            let (mut states, mut fraction_sum) = (0usize, 0.0);
            while !server.is_done() {
                let out = server.step()?;
                if out.candidate_quality > q {
                    states += 1;
                    fraction_sum += out.raw_violations as f64 / n;
                }
            }
            Ok(ViolationRow {
                q_max: q,
                seed: seed.to_string(),
                violation_state_ratio: states as f64 / session.problem.n_t as f64,
                violation_point_fraction: if states == 0 { 0.0 } else { fraction_sum / states as f64 },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = rows.clone();
    for &q in &study.q_values {
        let group: Vec<&ViolationRow> = rows.iter().filter(|r| r.q_max == q).collect();
        out.push(ViolationRow {
            q_max: q,
            seed: "median".into(),
            violation_state_ratio: median(&group.iter().map(|r| r.violation_state_ratio).collect::<Vec<_>>()),
            violation_point_fraction: median(&group.iter().map(|r| r.violation_point_fraction).collect::<Vec<_>>()),
        });
    }
    Ok(out)
}

/// On-disk scenario layout. Every field has a default, so an empty file is
/// the default rate sweep.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    strategies: Option<Vec<String>>,
    repetitions: Option<usize>,
    seed: Option<u64>,
    mode: Option<String>,
    #[serde(default)]
    sweep: SweepFile,
    #[serde(default)]
    session: SessionFile,
    #[serde(default)]
    channel: ChannelFile,
    #[serde(default)]
    cost: CostFile,
    #[serde(default)]
    synthetic: SyntheticFile,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SweepFile {
    variable: SweepVar,
    values: Option<Vec<f64>>,
}

impl Default for SweepFile {
    fn default() -> Self {
        Self {
            variable: SweepVar::Rate,
            values: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionFile {
    alpha: Option<f64>,
    dt: Option<f64>,
    n_t: Option<usize>,
    n_ref: Option<usize>,
    surrogate_level: Option<u32>,
    reference_level: Option<u32>,
    q_max: Option<f64>,
    norm: Option<String>,
    n_e: Option<usize>,
    sigma: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelFile {
    rate_bits_per_s: Option<f64>,
    latency_s: Option<f64>,
    bucket_bytes: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostFile {
    server_flops_per_s: Option<f64>,
    server_codec_bytes_per_s: Option<f64>,
    client_slowdown: Option<f64>,
    send_queue_depth: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SyntheticFile {
    /// `real`, `bernoulli` or `fixed_size`.
    policy: Option<String>,
    probability: Option<f64>,
    fraction: Option<f64>,
}

impl ScenarioFile {
    fn into_scenario(self) -> Result<Scenario> {
        let mut sc = Scenario::default_for(self.sweep.variable);
        if let Some(name) = self.name {
            sc.name = name;
        }
        if let Some(values) = self.sweep.values {
            sc.values = values;
        }
        if let Some(list) = self.strategies {
            sc.strategies = list.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        }
        sc.repetitions = self.repetitions.unwrap_or(sc.repetitions);
        sc.seed = self.seed.unwrap_or(sc.seed);
        if let Some(m) = self.mode {
            sc.mode = m.parse()?;
        }

        let s = self.session;
        let defaults = HeatProblem::default();
        sc.session.problem = HeatProblem {
            alpha: s.alpha.unwrap_or(DEFAULT_SESSION_ALPHA),
            dt: s.dt.unwrap_or(defaults.dt),
            n_t: s.n_t.unwrap_or(defaults.n_t),
            n_ref: s.n_ref.unwrap_or(defaults.n_ref),
        };
        sc.session.surrogate_level = s.surrogate_level.unwrap_or(sc.session.surrogate_level);
        sc.session.reference_level = s.reference_level.unwrap_or(sc.session.reference_level);
        let norm = match s.norm {
            Some(n) => parse_norm(&n)?,
            None => sc.session.quality.norm,
        };
        sc.session.quality = QualitySpec::new(norm, s.q_max.unwrap_or(sc.session.quality.q_max))?;
        sc.session.n_e = s.n_e.unwrap_or(sc.session.n_e);
        sc.session.sigma = s.sigma;

        let c = self.channel;
        sc.channel = ChannelConfig {
            rate_bits_per_s: c.rate_bits_per_s.unwrap_or(sc.channel.rate_bits_per_s),
            latency_s: c.latency_s.unwrap_or(sc.channel.latency_s),
            bucket_bytes: c.bucket_bytes.unwrap_or(DEFAULT_BUCKET_BYTES),
        };
        let k = self.cost;
        sc.cost = CostModel {
            server_flops_per_s: k.server_flops_per_s.unwrap_or(sc.cost.server_flops_per_s),
            server_codec_bytes_per_s: k.server_codec_bytes_per_s.unwrap_or(sc.cost.server_codec_bytes_per_s),
            client_slowdown: k.client_slowdown.unwrap_or(sc.cost.client_slowdown),
            send_queue_depth: k.send_queue_depth.unwrap_or(sc.cost.send_queue_depth),
        };

        let y = self.synthetic;
        let p = y.probability.unwrap_or(0.5);
        sc.update_probability = p;
        sc.synthetic = match y.policy.as_deref().unwrap_or("real") {
            "real" => SyntheticUpdatePolicy::Real,
            "bernoulli" => SyntheticUpdatePolicy::Bernoulli { p },
            "fixed_size" => {
                let interior = make_grid(sc.session.surrogate_level)?.n_interior();
                let fraction = y.fraction.ok_or_else(|| Error::config("fixed_size needs a fraction"))?;
                SyntheticUpdatePolicy::FixedSize {
                    p,
                    k: (fraction * interior as f64).round() as usize,
                }
            }
            other => return Err(Error::config(format!("unknown synthetic policy {other:?}"))),
        };
        sc.validate()?;
        Ok(sc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_two_is_their_mean() {
        assert_eq!(median(&[1.0, 3.0]), 2.0);
        assert_eq!(median(&[5.0, 1.0, 3.0]), 3.0);
    }

    #[test]
    fn empty_rows_give_header_only() {
        let mut buf = Vec::new();
        write_csv::<_, Row>(&[], &ROW_COLUMNS, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), ROW_COLUMNS.join(",") + "\n");
    }

    #[test]
    fn empty_file_is_default_rate_sweep() {
        let sc = Scenario::from_toml("").unwrap();
        assert_eq!(sc.sweep, SweepVar::Rate);
        assert_eq!(sc.repetitions, 10);
        assert_eq!(sc.session, SessionConfig::default());
    }

    #[test]
    fn sweep_table_without_variable_is_rate() {
        let sc = Scenario::from_toml("[sweep]\nvalues = [2e6]\n").unwrap();
        assert_eq!(sc.sweep, SweepVar::Rate);
        assert_eq!(sc.values, vec![2e6]);
    }

    #[test]
    fn file_fields_override_defaults() {
        let sc = Scenario::from_toml(
            r#"
            name = "sizes"
            strategies = ["advanced_stream", "partial_update"]
            repetitions = 3
            [sweep]
            variable = "update_size_fraction"
            values = [0.1, 0.5]
            [session]
            q_max = 0.01
            [channel]
            rate_bits_per_s = 2e6
            [synthetic]
            probability = 0.25
            "#,
        )
        .unwrap();
        assert_eq!(sc.name, "sizes");
        assert_eq!(sc.strategies, vec![Strategy::AdvancedStream, Strategy::PartialUpdate]);
        assert_eq!(sc.values, vec![0.1, 0.5]);
        assert_eq!(sc.session.quality.q_max, 0.01);
        assert_eq!(sc.channel.rate_bits_per_s, 2e6);
        assert_eq!(sc.update_probability, 0.25);
    }

    #[test]
    fn bad_files_are_rejected() {
        assert!(Scenario::from_toml("repetitions = 2").is_err());
        assert!(Scenario::from_toml("bogus = 1").is_err());
        assert!(Scenario::from_toml("[sweep]\nvariable = \"q_max\"\nvalues = []").is_err());
        assert!(Scenario::from_toml("[synthetic]\npolicy = \"fixed_size\"").is_err());
    }

    #[test]
    fn fixed_size_hook_draws_distinct_sorted_points() {
        let g = make_grid(3).unwrap();
        let mut hook = inject_synthetic(SyntheticUpdatePolicy::FixedSize { p: 1.0, k: 10 }, g, 4)
            .unwrap()
            .unwrap();
        let s = crate::grid::StateVector::zeros(g);
        let ctx = DecisionContext {
            step: 1,
            strategy: Strategy::PartialUpdate,
            candidate: &s,
            target: &s,
            quality: 0.0,
        };
        let Some(Decision::Partial(points)) = hook.decide(&ctx) else {
            panic!("expected a partial update");
        };
        assert_eq!(points.len(), 10);
        assert!(points.windows(2).all(|w| w[0] < w[1]));
        assert!(points.iter().all(|&p| !g.is_boundary(p)));
    }

    #[test]
    fn bernoulli_extremes() {
        let g = make_grid(3).unwrap();
        let s = crate::grid::StateVector::zeros(g);
        let ctx = DecisionContext {
            step: 1,
            strategy: Strategy::FullUpdate,
            candidate: &s,
            target: &s,
            quality: 0.0,
        };
        for (p, want) in [(0.0, Decision::Certify), (1.0, Decision::Full)] {
            let mut hook = inject_synthetic(SyntheticUpdatePolicy::Bernoulli { p }, g, 1).unwrap().unwrap();
            assert!((0..50).all(|_| hook.decide(&ctx) == Some(want.clone())));
        }
        assert!(inject_synthetic(SyntheticUpdatePolicy::Real, g, 1).unwrap().is_none());
    }
}
