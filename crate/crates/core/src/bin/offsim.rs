use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use offsim::bench::{self, Scenario, ViolationStudy};
use offsim::enkf::DEFAULT_MEMBERS;
use offsim::nodes::{
    client_run, parse_norm, random_initial_state, server_run, ClientMode, SessionConfig, Strategy,
    DEFAULT_SESSION_ALPHA,
};
use offsim::protocol::MessageKind;
use offsim::quality::QualitySpec;
use offsim::solvers::HeatProblem;
use offsim::transport::{ChannelConfig, ShapedSink, TcpSink, TcpSource};
use offsim::{Error, Result};

#[derive(Parser)]
#[command(name = "offsim", version, about = "Surrogate-model offloading simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmarks under virtual time.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Serve sessions over TCP, one client at a time.
    Serve {
        #[arg(long, value_name = "ADDR")]
        tcp: String,
        #[command(flatten)]
        session: SessionArgs,
        /// Shape the outgoing stream to this rate (bit/s) in real time.
        #[arg(long)]
        rate: Option<f64>,
        /// One-way latency (s) of the shaped link.
        #[arg(long, default_value_t = 0.05, requires = "rate")]
        latency: f64,
        /// Exit after the first session.
        #[arg(long)]
        once: bool,
    },
    /// Connect to a server and run one session.
    Client {
        #[arg(long, value_name = "ADDR")]
        tcp: String,
        /// `optimistic` or `pessimistic`.
        #[arg(long, default_value = "optimistic")]
        mode: ClientMode,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run a scenario file and write the per-run CSV.
    Run {
        config: PathBuf,
        /// CSV output path.
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
        /// Also write per-(value, strategy) medians to this CSV.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Violation state ratio and point fraction of full-update sessions.
    Violations {
        /// Number of seeds, starting at 0.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value = "violations.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SESSION_ALPHA)]
        alpha: f64,
    },
}

#[derive(Args)]
struct SessionArgs {
    /// simple_stream, advanced_stream, full_update, partial_update or combined[:fraction].
    #[arg(long, default_value = "partial_update")]
    strategy: Strategy,
    #[arg(long, default_value_t = 2f64.powi(-7))]
    q_max: f64,
    /// `max` or `l2`.
    #[arg(long, default_value = "max")]
    norm: String,
    #[arg(long, default_value_t = 5)]
    surrogate_level: u32,
    #[arg(long, default_value_t = 6)]
    reference_level: u32,
    #[arg(long, default_value_t = DEFAULT_SESSION_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 100)]
    n_t: usize,
    #[arg(long, default_value_t = DEFAULT_MEMBERS)]
    n_e: usize,
    /// Seed of the initial state and of the ensemble.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SessionArgs {
    fn config(&self) -> Result<SessionConfig> {
        let cfg = SessionConfig {
            problem: HeatProblem {
                alpha: self.alpha,
                n_t: self.n_t,
                ..HeatProblem::default()
            },
            surrogate_level: self.surrogate_level,
            reference_level: self.reference_level,
            quality: QualitySpec::new(parse_norm(&self.norm)?, self.q_max)?,
            strategy: self.strategy,
            n_e: self.n_e,
            sigma: None,
            basic_seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn bench_run(config: PathBuf, out: PathBuf, summary: Option<PathBuf>) -> Result<()> {
    let scenario = Scenario::load(&config)?;
    let rows = bench::run_scenario(&scenario)?;
    bench::emit_csv(&rows, &out)?;
    if let Some(path) = summary {
        bench::emit_summary(&rows, &path)?;
    }
    print!("{}", bench::format_summary(&rows));
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        eprintln!("{failed} rows carry errors; see the error column of {}", out.display());
    }
    Ok(())
}

fn bench_violations(seeds: u64, out: PathBuf, alpha: f64) -> Result<()> {
    let mut study = ViolationStudy::default();
    study.session.problem.alpha = alpha;
    study.seeds = (0..seeds).collect();
    let rows = bench::run_violation_study(&study)?;
    bench::write_csv(&rows, &bench::VIOLATION_COLUMNS, std::fs::File::create(&out)?)?;
    println!("{:>10} {:>12} {:>12}", "q_max", "state_ratio", "point_frac");
    for r in rows.iter().filter(|r| r.seed == "median") {
        println!(
            "{:>10} {:>12.4} {:>12.4}",
            format!("2^{}", r.q_max.log2().round()),
            r.violation_state_ratio,
            r.violation_point_fraction
        );
    }
    Ok(())
}

fn serve(addr: &str, session: &SessionArgs, channel: Option<ChannelConfig>, once: bool) -> Result<()> {
    let cfg = session.config()?;
    let listener = TcpListener::bind(addr)?;
    eprintln!("listening on {} ({})", listener.local_addr()?, cfg.strategy);
    for stream in listener.incoming() {
        let stream = stream?;
        let peer = stream.peer_addr()?;
        let initial = random_initial_state(cfg.reference_grid()?, session.seed);
        let sink = TcpSink::new(stream)?;
        let result = match channel {
            Some(ch) => server_run(&cfg, initial, ShapedSink::new(sink, ch)?, None),
            None => server_run(&cfg, initial, sink, None),
        };
        match result {
            Ok(run) => eprintln!(
                "{peer}: {} steps, {} bytes, {:.3} s",
                run.steps.len(),
                run.stats.bytes_sent,
                run.finished_at
            ),
            Err(e) => eprintln!("{peer}: {e}"),
        }
        if once {
            break;
        }
    }
    Ok(())
}

fn client(addr: &str, mode: ClientMode) -> Result<()> {
    let mut source = TcpSource::new(TcpStream::connect(addr)?);
    let run = client_run(&mut source, mode)?;
    let count = |k| run.kinds.iter().filter(|&&x| x == k).count();
    println!(
        "steps {}  certify {}  full {}  partial {}  stream {}  latency {:.3} s",
        run.kinds.len(),
        count(MessageKind::Certify),
        count(MessageKind::FullUpdate),
        count(MessageKind::PartialUpdate),
        count(MessageKind::StreamState),
        run.total_latency
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench(BenchCommand::Run { config, out, summary }) => bench_run(config, out, summary),
        Command::Bench(BenchCommand::Violations { seeds, out, alpha }) => bench_violations(seeds, out, alpha),
        Command::Serve {
            tcp,
            session,
            rate,
            latency,
            once,
        } => rate
            .map(|r| ChannelConfig::new(r, latency))
            .transpose()
            .and_then(|ch| serve(&tcp, &session, ch, once)),
        Command::Client { tcp, mode } => client(&tcp, mode),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("offsim: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                _ => 1,
            })
        }
    }
}
