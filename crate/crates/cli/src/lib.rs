//! Command layer behind the `scf` binary: simulate AES power traces, attack
//! them with CPA, and run protected-vs-unprotected evaluation sweeps.

use std::fs::{self, File};
use std::io::BufWriter;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use scf_core::bank::{VariantBank, DEFAULT_LADDER};
use scf_core::campaign::{generate_campaign, read_plaintexts, Campaign, PlaintextSource};
use scf_core::cpa::{recover_key, AttackOptions, Window};
use scf_core::eval::{run_sweep, write_comparison_csv, write_outcomes_csv, write_summary_csv, SweepGrid, TrialSetup};
use scf_core::leakage::{Defense, LeakageConfig, LeakageModel, OpsLayout, Reselect};
use scf_core::metrics::key_error_map;
use scf_core::store::TraceReader;
use scf_core::Key128;

#[derive(Parser)]
#[command(name = "scf", version, about = "AES-128 side-channel simulation, CPA attack and evaluation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a trace file from one key.
    Simulate(SimulateArgs),
    /// Recover the key from a trace file.
    Attack(AttackArgs),
    /// Run seeded attack trials over a grid of defenses and trace counts.
    Evaluate(EvaluateArgs),
    /// Print a trace file's header.
    Info(InfoArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum DefenseArg {
    None,
    Swapper,
}

impl From<DefenseArg> for Defense {
    fn from(d: DefenseArg) -> Defense {
        match d {
            DefenseArg::None => Defense::None,
            DefenseArg::Swapper => Defense::Swapper,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ReselectArg {
    PerTrace,
    PerOp,
}

impl From<ReselectArg> for Reselect {
    fn from(r: ReselectArg) -> Reselect {
        match r {
            ReselectArg::PerTrace => Reselect::PerTrace,
            ReselectArg::PerOp => Reselect::PerOp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum BankShape {
    /// Every operation shares the same variants.
    Ladder,
    /// Each operation's alternates coincide with other operations' natives.
    Staggered,
}

/// Leakage and countermeasure flags shared by `simulate` and `evaluate`.
#[derive(Args, Clone, Debug, Serialize)]
struct LeakageArgs {
    /// Gaussian noise standard deviation, in Hamming-weight units.
    #[arg(long, default_value_t = 2.0)]
    noise: f64,
    /// `hw`, or `hd:XX` for Hamming distance from the hex byte XX.
    #[arg(long, default_value = "hw")]
    model: String,
    /// Variants per operation.
    #[arg(long, default_value_t = 3)]
    variants: usize,
    /// Power ladder p1 < p2 < ...; variant j spans [p_j, p_{j+2}].
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LADDER.to_vec())]
    ladder: Vec<f64>,
    #[arg(long, value_enum, default_value_t = BankShape::Ladder)]
    bank: BankShape,
    #[arg(long, value_enum, default_value_t = ReselectArg::PerTrace)]
    reselect: ReselectArg,
    #[arg(long, default_value_t = 200)]
    trace_length: usize,
    #[arg(long, default_value_t = 4)]
    samples_per_op: usize,
    /// Idle samples before the first operation.
    #[arg(long, default_value_t = 8)]
    lead: usize,
}

impl LeakageArgs {
    fn model(&self) -> Result<LeakageModel> {
        Ok(LeakageModel::from_compact(&self.model)?)
    }

    fn config(&self, defense: Defense, seed: u64, log_variants: bool) -> Result<LeakageConfig> {
        Ok(LeakageConfig {
            model: self.model()?,
            noise_sigma: self.noise,
            samples_per_op: self.samples_per_op,
            layout: OpsLayout::standard(self.trace_length, self.samples_per_op, self.lead)?,
            defense,
            reselect: self.reselect.into(),
            seed,
            log_variants,
        })
    }

    fn bank(&self) -> Result<VariantBank> {
        Ok(match self.bank {
            BankShape::Ladder => VariantBank::ladder(&self.ladder, self.variants)?,
            BankShape::Staggered => VariantBank::staggered(&self.ladder, self.variants)?,
        })
    }
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    traces: u64,
    /// 32 hex digits.
    #[arg(long)]
    key: Key128,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = DefenseArg::None)]
    defense: DefenseArg,
    /// Store the variant index chosen for every operation slot.
    #[arg(long)]
    log_variants: bool,
    /// Run these plaintext byte positions through all 256 values.
    #[arg(long, value_delimiter = ',', conflicts_with = "pt_file")]
    enumerate_pt_byte: Vec<usize>,
    /// One hex plaintext per line.
    #[arg(long)]
    pt_file: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    leakage: LeakageArgs,
}

#[derive(Args, Debug, Serialize)]
struct AttackArgs {
    file: PathBuf,
    /// Known key, to report the rank of every true byte.
    #[arg(long)]
    truth: Option<Key128>,
    /// Sample range START:END.
    #[arg(long)]
    window: Option<String>,
    #[arg(long, default_value = "hw")]
    model: String,
    /// Record partitions accumulated in parallel.
    #[arg(long)]
    jobs: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct EvaluateArgs {
    /// Trace counts, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    traces: Vec<u64>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [DefenseArg::None, DefenseArg::Swapper])]
    defenses: Vec<DefenseArg>,
    #[arg(long, default_value_t = 20)]
    trials: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model the attacker assumes.
    #[arg(long, default_value = "hw")]
    attack_model: String,
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    leakage: LeakageArgs,
}

#[derive(Args, Debug)]
struct InfoArgs {
    file: PathBuf,
    #[arg(long)]
    json: bool,
}

/// Everything a run resolved to, defaults included.
#[derive(Serialize)]
struct ResolvedSpec<'a, A: Serialize, E: Serialize> {
    command: &'static str,
    tool_version: &'static str,
    args: &'a A,
    resolved: E,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".spec.json");
    PathBuf::from(s)
}

fn set_jobs(jobs: Option<usize>) -> Result<()> {
    if let Some(j) = jobs {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    if a.traces == 0 {
        bail!("--traces must be at least 1");
    }
    let defense: Defense = a.defense.into();
    if defense == Defense::None && a.log_variants {
        bail!("--log-variants needs --defense swapper");
    }
    if let Some(&p) = a.enumerate_pt_byte.iter().find(|&&p| p >= 16) {
        bail!("--enumerate-pt-byte {p} is not a byte position (0..16)");
    }
    let config = a.leakage.config(defense, a.seed, a.log_variants)?;
    let bank = match defense {
        Defense::Swapper => Some(a.leakage.bank()?),
        Defense::None => None,
    };
    let source = if let Some(p) = &a.pt_file {
        PlaintextSource::List(read_plaintexts(p)?)
    } else if !a.enumerate_pt_byte.is_empty() {
        let positions = a.enumerate_pt_byte.iter().fold(0u16, |m, &p| m | (1 << p));
        PlaintextSource::Enumerate { positions }
    } else {
        PlaintextSource::Random
    };
    let header = generate_campaign(a.traces, &a.key, config.clone(), bank.clone(), source, &a.out)?;
    let spec = ResolvedSpec {
        command: "simulate",
        tool_version: env!("CARGO_PKG_VERSION"),
        args: a,
        resolved: serde_json::json!({
            "leakage": config,
            "bank": bank,
            "metadata": header.metadata.0,
        }),
    };
    write_json(&sidecar(&a.out), &spec)?;
    println!(
        "wrote {} traces x {} samples to {} (defense {}, seed {}, variant log {})",
        header.n_traces,
        header.n_samples,
        a.out.display(),
        defense.as_str(),
        a.seed,
        if header.has_variant_log() { "on" } else { "off" },
    );
    Ok(())
}

fn attack(a: &AttackArgs) -> Result<()> {
    set_jobs(a.jobs)?;
    let opts = AttackOptions {
        model: LeakageModel::from_compact(&a.model)?,
        window: a.window.as_deref().map(Window::parse).transpose()?,
        jobs: a.jobs.unwrap_or_else(rayon::current_num_threads),
        truth: a.truth,
    };
    let report = recover_key(&a.file, &opts).with_context(|| format!("attacking {}", a.file.display()))?;
    let json = report.to_json()? + "\n";
    match &a.out {
        Some(p) => {
            fs::write(p, &json).with_context(|| format!("writing {}", p.display()))?;
            write_json(
                &sidecar(p),
                &ResolvedSpec {
                    command: "attack",
                    tool_version: env!("CARGO_PKG_VERSION"),
                    args: a,
                    resolved: serde_json::json!({
                        "model": opts.model,
                        "window": report.window,
                        "partitions": opts.jobs,
                    }),
                },
            )?;
        }
        None => print!("{json}"),
    }
    eprintln!("recovered key {} from {} traces", report.recovered_key, report.n_traces);
    if let Some(t) = &report.true_key {
        let map = key_error_map(&report.recovered_key, t);
        let ranks = report.true_ranks().unwrap_or_default();
        eprintln!(
            "{} wrong bytes: {}  ranks {:?}",
            map.byte_diffs.len(),
            map.rendered,
            ranks
        );
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    set_jobs(a.jobs)?;
    let grid = SweepGrid {
        defenses: a.defenses.iter().map(|&d| d.into()).collect(),
        n_traces: a.traces.clone(),
        trials: a.trials,
        master_seed: a.seed,
    };
    grid.validate()?;
    let setup = TrialSetup {
        leakage: a.leakage.config(Defense::None, a.seed, false)?,
        bank: a.leakage.bank()?,
        attack_model: LeakageModel::from_compact(&a.attack_model)?,
    };
    // Fail on bad leakage settings before any trial runs.
    Campaign::new(&Key128::default(), setup.leakage.clone(), None, PlaintextSource::Random)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    info!("{} cells x {} trials", grid.cells().len(), grid.trials);
    let res = run_sweep(&setup, &grid)?;

    write_outcomes_csv(create(&a.out.join("outcomes.csv"))?, &res.outcomes)?;
    write_summary_csv(create(&a.out.join("summary.csv"))?, &res.summaries)?;
    write_comparison_csv(create(&a.out.join("comparison.csv"))?, &res.comparisons)?;
    write_json(
        &a.out.join("spec.json"),
        &ResolvedSpec {
            command: "evaluate",
            tool_version: env!("CARGO_PKG_VERSION"),
            args: a,
            resolved: serde_json::json!({ "setup": setup, "grid": grid }),
        },
    )?;

    for s in &res.summaries {
        println!(
            "{:<8} n={:<7} trials={:<3} GE={:8.3}  success={:.2}  wrong bytes={:.2}",
            s.defense.as_str(),
            s.n_traces,
            s.trials,
            s.mean_guessing_entropy,
            s.success_rate,
            s.mean_wrong_bytes
        );
    }
    for c in &res.comparisons {
        println!(
            "n={}: swapper GE higher in {}/{} pairs, success lower in {}/{}",
            c.n_traces, c.pairs_ge_greater, c.pairs, c.pairs_success_lower, c.pairs
        );
    }
    for o in res.outcomes.iter().filter(|o| o.wrong_bytes() > 0) {
        let map = key_error_map(&o.recovered, &o.truth);
        println!(
            "{:<8} n={:<7} trial {:<3} truth {}  recovered {}",
            o.defense.as_str(),
            o.n_traces,
            o.trial,
            o.truth,
            map.rendered
        );
    }
    println!("results in {}", a.out.display());
    Ok(())
}

fn info(a: &InfoArgs) -> Result<()> {
    let reader = TraceReader::open(&a.file).with_context(|| format!("reading {}", a.file.display()))?;
    let h = reader.header();
    if a.json {
        let meta: serde_json::Map<String, serde_json::Value> = h
            .metadata
            .0
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
            .collect();
        let v = serde_json::json!({
            "n_traces": h.n_traces,
            "n_samples": h.n_samples,
            "flags": h.flags,
            "variant_log": h.has_variant_log(),
            "record_len": h.record_len()?,
            "metadata": meta,
        });
        println!("{}", serde_json::to_string_pretty(&v)?);
        return Ok(());
    }
    println!("traces       {}", h.n_traces);
    println!("samples      {}", h.n_samples);
    println!("dtype        f32le");
    println!("variant log  {}", if h.has_variant_log() { "yes" } else { "no" });
    println!("record bytes {}", h.record_len()?);
    for (k, v) in &h.metadata.0 {
        println!("  {k} = {v}");
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command. Usage errors
/// exit with clap's status; operational faults exit 1.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let res = match &cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Attack(a) => attack(a),
        Cmd::Evaluate(a) => evaluate(a),
        Cmd::Info(a) => info(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
