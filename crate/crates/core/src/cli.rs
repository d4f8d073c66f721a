//! Command-line front end. [`run`] parses arguments and returns the process exit
//! code: 0 on success, 2 on usage errors, 1 on runtime errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::augment::{augment, build_srf, determine_tau, Denoiser};
use crate::error::{Error, Result};
use crate::geometry::MvVariant;
use crate::io;
use crate::prior::PriorKind;
use crate::protocol::{self, SynthConfig, Trial, DEFAULT_RANGES};
use crate::solver::{gqmu_run, Initializer, Scale, SolverConfig, UnmixResult};
use crate::tensor::Tensor3;

#[derive(Debug, Parser)]
#[command(name = "gqmu", version, about = "Underdetermined multispectral unmixing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split an MSI into a virtual hyperspectral image.
    Augment(AugmentArgs),
    /// Unmix an MSI into endmembers and abundances.
    Unmix(UnmixArgs),
    /// Run the evaluation protocol.
    #[command(subcommand)]
    Protocol(ProtocolCommand),
    /// Score estimated endmembers and abundances against references.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the virtual spectral response D.
    #[arg(long)]
    srf: PathBuf,
    /// auto, 2 or 4.
    #[arg(long, default_value = "auto")]
    tau: String,
    /// Number of sources, used by `--tau auto`.
    #[arg(long)]
    n_sources: Option<usize>,
    /// identity, gaussian or gaussian:SIGMA.
    #[arg(long, default_value = "gaussian")]
    denoiser: Denoiser,
}

/// Solver settings shared by `unmix` and `protocol`; flags override `--config`.
#[derive(Debug, Args)]
struct SolverArgs {
    /// Flat `key = value` file overriding the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// qdip or ls.
    #[arg(long)]
    prior: Option<PriorKind>,
    /// wss, nwss, center, tv or ssd.
    #[arg(long)]
    mv_variant: Option<MvVariant>,
    /// identity, gaussian or gaussian:SIGMA.
    #[arg(long)]
    denoiser: Option<Denoiser>,
    /// snpa or spa.
    #[arg(long)]
    initializer: Option<Initializer>,
    /// auto or a number.
    #[arg(long)]
    scale: Option<Scale>,
    /// auto, 2 or 4.
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    qdip_iters: Option<usize>,
    #[arg(long)]
    qdip_lr: Option<f64>,
    /// Seed for the QDIP initialization.
    #[arg(long)]
    qdip_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct UnmixArgs {
    #[arg(long)]
    msi: PathBuf,
    #[arg(long)]
    n_sources: usize,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Subcommand)]
enum ProtocolCommand {
    /// Synthetic ground truth, unmixing and baseline comparison.
    Synth(SynthArgs),
    /// Band-average user-supplied reference spectra into MSI bands and evaluate.
    Wald(WaldArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Image side length (square image).
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 4)]
    bands: usize,
    #[arg(long, default_value_t = 6)]
    sources: usize,
    /// Maximum abundance in mixed pixels, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    purity: f64,
    /// Plant one pure pixel per source.
    #[arg(long)]
    pure_pixels: bool,
    #[arg(long, default_value_t = 1e-4)]
    noise: f64,
    /// Use the denoiser residual of the clean MSI as the deviation tensor.
    #[arg(long)]
    residual_noise: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct WaldArgs {
    /// Reference endmembers, bands × sources CSV.
    #[arg(long)]
    a_ref: PathBuf,
    /// Band center wavelengths in nm, one per reference band.
    #[arg(long)]
    wavelengths: PathBuf,
    /// Reference abundances (BTF).
    #[arg(long)]
    s_ref: PathBuf,
    /// Comma-separated `lo-hi` ranges in nm.
    #[arg(long)]
    ranges: Option<String>,
    #[arg(long, default_value_t = 1e-4)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[arg(long)]
    ref_b: PathBuf,
    #[arg(long)]
    est_b: PathBuf,
    #[arg(long)]
    ref_s: PathBuf,
    #[arg(long)]
    est_s: PathBuf,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

/// A failure tagged with its exit code.
struct Failure {
    code: i32,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match error {
            Error::Config(_) | Error::UnsupportedTau(_) => 2,
            _ => 1,
        };
        Failure { code, error }
    }
}

fn usage(error: Error) -> Failure {
    Failure { code: 2, error }
}

fn parse_tau(s: &str) -> Result<Option<usize>> {
    match s.trim() {
        "auto" => Ok(None),
        "2" => Ok(Some(2)),
        "4" => Ok(Some(4)),
        other => Err(Error::Config(format!("--tau must be auto, 2 or 4, got '{other}'"))),
    }
}

fn solver_config(args: &SolverArgs, n_sources: usize) -> std::result::Result<SolverConfig, Failure> {
    let mut cfg = SolverConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(Error::Config(format!("cannot read config '{}': {e}", path.display()))))?;
        io::apply_config(&mut cfg, &text).map_err(usage)?;
    }
    cfg.n_sources = n_sources;
    if let Some(v) = args.prior {
        cfg.prior = v;
    }
    if let Some(v) = args.mv_variant {
        cfg.mv_variant = v;
    }
    if let Some(v) = &args.denoiser {
        cfg.denoiser = v.clone();
    }
    if let Some(v) = args.initializer {
        cfg.initializer = v;
    }
    if let Some(v) = args.scale {
        cfg.scale = v;
    }
    if let Some(v) = &args.tau {
        cfg.tau = parse_tau(v).map_err(usage)?;
    }
    if let Some(v) = args.qdip_iters {
        cfg.qdip.iterations = v;
    }
    if let Some(v) = args.qdip_lr {
        cfg.qdip.learning_rate = v;
    }
    if let Some(v) = args.qdip_seed {
        cfg.seed = v;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Writes every unmixing artifact into `dir`.
pub fn write_unmix_outputs(dir: &Path, res: &UnmixResult) -> Result<()> {
    create_dir(dir)?;
    io::write_csv(&dir.join("B.csv"), &res.b_star)?;
    io::write_csv(&dir.join("A.csv"), &res.a_star)?;
    io::write_btf(&dir.join("S.btf"), &res.s_star)?;
    io::write_btf(&dir.join("Y.btf"), &res.y_final)?;
    io::write_btf(&dir.join("Zh.btf"), &res.z_h)?;
    write_heatmaps(dir, "abundance", &res.s_star)?;
    io::write_atomic(&dir.join("diagnostics.csv"), io::encode_diagnostics(&res.diagnostics.iterations).as_bytes())?;
    if !res.diagnostics.qdip_losses.is_empty() {
        io::write_atomic(
            &dir.join("qdip_loss.csv"),
            io::encode_series("loss", &res.diagnostics.qdip_losses).as_bytes(),
        )?;
    }
    io::write_json(&dir.join("run.json"), &res.diagnostics)
}

/// One PGM per channel, `[0, 1]` mapped to the full 16-bit range.
fn write_heatmaps(dir: &Path, stem: &str, s: &Tensor3) -> Result<()> {
    let (l1, l2, n) = s.dims();
    for k in 0..n {
        io::write_heatmap(&dir.join(format!("{stem}_{k}.pgm")), s.band(k), l1, l2, 1.0)?;
    }
    Ok(())
}

fn cmd_augment(a: &AugmentArgs) -> std::result::Result<(), Failure> {
    let z_m = io::read_btf(&a.input)?;
    let p = z_m.channels();
    let tau = match parse_tau(&a.tau).map_err(usage)? {
        Some(t) => t,
        None => match a.n_sources {
            Some(n) => determine_tau(p, n),
            None => 2,
        },
    };
    let aug = augment(&z_m, tau, &a.denoiser)?;
    io::write_btf(&a.out, &aug.z_h)?;
    io::write_csv(&a.srf, &build_srf(p, tau))?;
    Ok(())
}

fn cmd_unmix(a: &UnmixArgs) -> std::result::Result<(), Failure> {
    let cfg = solver_config(&a.solver, a.n_sources)?;
    let z_m = io::read_btf(&a.msi)?;
    let res = gqmu_run(&z_m, &cfg)?;
    write_unmix_outputs(&a.out_dir, &res)?;
    Ok(())
}

fn write_trial(dir: &Path, trial: &Trial) -> Result<()> {
    create_dir(dir)?;
    io::write_btf(&dir.join("msi.btf"), &trial.z_m)?;
    io::write_csv(&dir.join("b_ref.csv"), &trial.truth.b_ref)?;
    io::write_btf(&dir.join("s_ref.btf"), &trial.truth.s_ref)?;
    io::write_csv(&dir.join("b_baseline.csv"), &trial.baseline_b)?;
    io::write_btf(&dir.join("s_baseline.btf"), &trial.baseline_s)?;
    write_unmix_outputs(&dir.join("method"), &trial.result)?;
    if trial.greedy {
        eprintln!("note: N > {} so permutations were matched greedily", protocol::MAX_EXHAUSTIVE);
    }
    io::write_json(&dir.join("report.json"), &trial.report)
}

fn cmd_synth(a: &SynthArgs) -> std::result::Result<(), Failure> {
    let cfg = solver_config(&a.solver, a.sources)?;
    let synth = SynthConfig {
        l1: a.size,
        l2: a.size,
        p: a.bands,
        n: a.sources,
        purity: a.purity,
        pure_pixels: a.pure_pixels,
        noise: a.noise,
        residual_noise: a.residual_noise,
        denoiser: cfg.denoiser.clone(),
        seed: a.seed,
        ..SynthConfig::default()
    };
    synth.validate().map_err(usage)?;
    let trial = protocol::run_protocol(&synth, &cfg)?;
    write_trial(&a.out_dir, &trial)?;
    Ok(())
}

fn parse_ranges(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|r| {
            let (lo, hi) = r
                .trim()
                .split_once('-')
                .ok_or_else(|| Error::Config(format!("range '{r}' is not lo-hi")))?;
            let lo: f64 = lo.trim().parse().map_err(|_| Error::Config(format!("bad range '{r}'")))?;
            let hi: f64 = hi.trim().parse().map_err(|_| Error::Config(format!("bad range '{r}'")))?;
            if lo > hi {
                return Err(Error::Config(format!("range '{r}' is reversed")));
            }
            Ok((lo, hi))
        })
        .collect()
}

fn cmd_wald(a: &WaldArgs) -> std::result::Result<(), Failure> {
    let ranges = match &a.ranges {
        Some(r) => parse_ranges(r).map_err(usage)?,
        None => DEFAULT_RANGES.to_vec(),
    };
    let a_ref = io::read_csv(&a.a_ref)?;
    let cfg = solver_config(&a.solver, a_ref.cols())?;
    let wl = io::read_vector(&a.wavelengths)?;
    let s_ref = io::read_btf(&a.s_ref)?;
    let trial = protocol::run_wald(&a_ref, &wl, &s_ref, &ranges, a.noise, a.seed, &cfg)?;
    write_trial(&a.out_dir, &trial)?;
    Ok(())
}

fn cmd_metrics(a: &MetricsArgs) -> std::result::Result<(), Failure> {
    let t0 = Instant::now();
    let rb = io::read_csv(&a.ref_b)?;
    let eb = io::read_csv(&a.est_b)?;
    let rs = io::read_btf(&a.ref_s)?;
    let es = io::read_btf(&a.est_s)?;
    let (mut report, greedy) = protocol::evaluate(&rb, &rs, &eb, &es, 0.0)?;
    report.runtime_sec = t0.elapsed().as_secs_f64();
    if greedy {
        eprintln!("note: N > {} so permutations were matched greedily", protocol::MAX_EXHAUSTIVE);
    }
    io::write_json(&a.out, &report)?;
    Ok(())
}

/// Help text of the deepest subcommand named in `args`.
fn subcommand_help(args: &[OsString]) -> String {
    let mut cmd = Cli::command();
    for a in args.iter().skip(1) {
        let Some(name) = a.to_str() else { break };
        match cmd.find_subcommand(name) {
            Some(sub) => cmd = sub.clone(),
            None => break,
        }
    }
    cmd.render_help().to_string()
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if e.kind() == ErrorKind::UnknownArgument {
                eprintln!("\nValid flags:\n{}", subcommand_help(&args));
            }
            return e.exit_code();
        }
    };
    let out = match &cli.command {
        Command::Augment(a) => cmd_augment(a),
        Command::Unmix(a) => cmd_unmix(a),
        Command::Protocol(ProtocolCommand::Synth(a)) => cmd_synth(a),
        Command::Protocol(ProtocolCommand::Wald(a)) => cmd_wald(a),
        Command::Metrics(a) => cmd_metrics(a),
    };
    match out {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.code
        }
    }
}
