use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ptsa::campaign::ErrorReport;
use ptsa::{run_campaign, CampaignSpec, Command, LimitStateKind};
use ptsa_core::sensitivity::CompensationMode;

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Mode {
    FailuresOnly,
    AllSamples,
}

/// Probabilistic transient stability assessment with subset simulation.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,

    /// Grid case JSON (bundled 9-bus case by default).
    #[arg(long)]
    case: Option<PathBuf>,
    /// Input model JSON (bundled load and wind model by default).
    #[arg(long)]
    uncertainty: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LimitStateKind::PowerSystem)]
    limit_state: LimitStateKind,
    /// Reliability index of the linear-beta limit state.
    #[arg(long)]
    beta: Option<f64>,
    /// Margin returned by the constant limit state.
    #[arg(long, allow_negative_numbers = true)]
    constant: Option<f64>,

    #[arg(long)]
    p0: Option<f64>,
    #[arg(long)]
    n_bat: Option<usize>,
    #[arg(long)]
    proposal_spread: Option<f64>,
    #[arg(long)]
    max_levels: Option<usize>,
    /// Samples per direct Monte Carlo run.
    #[arg(long)]
    n: Option<usize>,
    /// Repeated runs.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,

    /// Fault clearing time in cycles.
    #[arg(long)]
    fct_cycles: Option<f64>,
    /// Clearing-time search resolution in cycles.
    #[arg(long)]
    resolution: Option<f64>,
    /// Clearing-time search cap in cycles.
    #[arg(long)]
    cap: Option<f64>,
    /// Integration step in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Post-clearing horizon in seconds.
    #[arg(long)]
    horizon: Option<f64>,
    /// Angle separation that counts as loss of synchronism, in degrees.
    #[arg(long)]
    angle_threshold: Option<f64>,

    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Sample store to analyse (sensitivity, compensate).
    #[arg(long)]
    store: Option<PathBuf>,
    /// Run inside the store to analyse.
    #[arg(long)]
    run_id: Option<u64>,
    /// Keep every sample of repeated runs in store.jsonl.
    #[arg(long, conflicts_with = "no_store")]
    store_samples: bool,
    /// Skip writing store.jsonl.
    #[arg(long)]
    no_store: bool,

    #[arg(long)]
    intervals_1d: Option<usize>,
    #[arg(long)]
    intervals_2d: Option<usize>,

    /// Input to clamp (0-based, repeatable); every Gaussian input by default.
    #[arg(long = "input")]
    inputs: Vec<usize>,
    /// Clamp floor in standard deviations below the mean.
    #[arg(long)]
    clamp_sigmas: Option<f64>,
    /// Compensation mode (repeatable); both by default.
    #[arg(long = "mode", value_enum)]
    modes: Vec<Mode>,

    /// Physical input values of the trajectory scenario, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    x: Option<Vec<f64>>,
    /// Fault duration of the trajectory in cycles.
    #[arg(long)]
    clearing_cycles: Option<f64>,
}

impl Cli {
    fn spec(self) -> CampaignSpec {
        let d = CampaignSpec::new(self.command, self.out);
        CampaignSpec {
            case: self.case,
            uncertainty: self.uncertainty,
            limit_state: self.limit_state,
            beta: self.beta.unwrap_or(d.beta),
            constant: self.constant.unwrap_or(d.constant),
            p0: self.p0.unwrap_or(d.p0),
            n_bat: self.n_bat.unwrap_or(d.n_bat),
            proposal_spread: self.proposal_spread.unwrap_or(d.proposal_spread),
            max_levels: self.max_levels.unwrap_or(d.max_levels),
            n: self.n.unwrap_or(d.n),
            runs: self.runs.unwrap_or(d.runs),
            seed: self.seed.unwrap_or(d.seed),
            fct_cycles: self.fct_cycles,
            resolution_cycles: self.resolution,
            cap_cycles: self.cap,
            time_step: self.dt,
            horizon: self.horizon,
            angle_threshold_deg: self.angle_threshold,
            parallel: self.parallel,
            store: self.store,
            run_id: self.run_id,
            store_samples: if self.no_store {
                Some(false)
            } else if self.store_samples {
                Some(true)
            } else {
                None
            },
            intervals_1d: self.intervals_1d,
            intervals_2d: self.intervals_2d,
            inputs: self.inputs,
            clamp_sigmas: self.clamp_sigmas.unwrap_or(d.clamp_sigmas),
            modes: self
                .modes
                .into_iter()
                .map(|m| match m {
                    Mode::FailuresOnly => CompensationMode::FailuresOnly,
                    Mode::AllSamples => CompensationMode::AllSamples,
                })
                .collect(),
            x: self.x,
            clearing_cycles: self.clearing_cycles,
            ..d
        }
    }
}

fn main() -> ExitCode {
    let spec = Cli::parse().spec();
    match run_campaign(&spec) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            // A closed pipe is not a failed campaign.
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = serde_json::to_string_pretty(&ErrorReport::new(&e)).expect("report serializes");
            eprintln!("{report}");
            if std::fs::create_dir_all(&spec.out).is_ok() {
                let _ = std::fs::write(spec.out.join("error.json"), format!("{report}\n"));
            }
            ExitCode::FAILURE
        }
    }
}
