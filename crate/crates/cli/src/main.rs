use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qst_core::baselines::{imle_reconstruct, ImleConfig};
use qst_core::harness::{emit_report, read_records_csv, read_records_json, run_experiment, ExperimentSpec, ReportFormat};
use qst_core::mapping::MappingStrategy;
use qst_core::measurement::{self, born_probabilities_fast, sample_frequencies, FrequencyVector, ProductPovm};
use qst_core::states::{
    depolarize, make_canonical_state, purity, random_expdecay_state, white_noise, CanonicalKind, DensityMatrix,
    DensityMatrixJson,
};
use qst_core::tomonet::{train, TrainConfig, TrainResult};
use qst_core::{Result, TomoError};

#[derive(Parser)]
#[command(name = "qst", version, about = "Neural-network quantum state tomography")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a test state as QDM1 (or JSON when the path ends in .json).
    Generate {
        #[arg(long, value_enum)]
        family: Family,
        #[arg(long)]
        qubits: usize,
        /// Target purity for `expdecay`.
        #[arg(long)]
        purity: Option<f64>,
        /// White-noise weight p in p|ψ⟩⟨ψ| + (1-p)I/d.
        #[arg(long)]
        mix: Option<f64>,
        /// Depolarizing strength λ in (1-λ)|ψ⟩⟨ψ| + λI/d.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Born probabilities of a state under the tetrahedral POVM, optionally sampled.
    Probe {
        #[arg(long)]
        state: PathBuf,
        /// Number of shots; 0 writes the exact probabilities.
        #[arg(long, default_value_t = 0)]
        shots: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; `.bin` selects the binary layout, anything else CSV.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Reconstruct a state with the neural network.
    Fit {
        #[command(flatten)]
        common: FitArgs,
        #[arg(long, default_value = "chol_h")]
        strategy: MappingStrategy,
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Reconstruct a state with iterative maximum likelihood.
    Imle {
        #[command(flatten)]
        common: FitArgs,
        #[arg(long, default_value_t = 500)]
        iters: usize,
        #[arg(long)]
        dilution: Option<f64>,
    },
    /// Run an experiment description (TOML) and write its records.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides `output_dir` from the spec file.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "csv,json")]
        format: Vec<String>,
    },
    /// Convert a records file (CSV or JSON) into csv/json/svg outputs.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "csv,json,svg")]
        format: Vec<String>,
    },
}

#[derive(clap::Args)]
struct FitArgs {
    /// Frequencies (CSV, or binary for `.bin`).
    #[arg(long)]
    freqs: PathBuf,
    /// Shot count the frequencies came from (informational, 0 for exact).
    #[arg(long, default_value_t = 0)]
    shots: u64,
    /// Reference state for fidelity tracing.
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long, default_value_t = 0.99)]
    fidelity_target: f64,
    #[arg(long, default_value_t = 10)]
    eval_every: usize,
    /// Optimization time budget in seconds.
    #[arg(long)]
    time_budget: Option<f64>,
    /// Directory for report.json and rho.qdm.
    #[arg(long, short)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Product,
    W,
    Ghzi,
    Expdecay,
    Mixed,
}

fn invalid(msg: impl Into<String>) -> TomoError {
    TomoError::InvalidArgument(msg.into())
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}

fn is_bin(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

fn read_state(path: &Path) -> Result<DensityMatrix> {
    if is_json(path) {
        let doc: DensityMatrixJson =
            serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| TomoError::Parse(e.to_string()))?;
        DensityMatrix::from_json(&doc)
    } else {
        DensityMatrix::read_qdm1(BufReader::new(File::open(path)?))
    }
}

fn write_state(rho: &DensityMatrix, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    if is_json(path) {
        let text = serde_json::to_string(&rho.to_json()).map_err(|e| TomoError::Parse(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    } else {
        rho.write_qdm1(BufWriter::new(File::create(path)?))
    }
}

fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let file = BufReader::new(File::open(path)?);
    if is_bin(path) {
        measurement::read_binary(file)
    } else {
        measurement::read_csv(file)
    }
}

fn qubits_for_outcomes(len: usize) -> Result<usize> {
    let mut n = 0;
    let mut size = 1usize;
    while size < len {
        size = size.checked_mul(4).ok_or_else(|| invalid("frequency vector too long"))?;
        n += 1;
    }
    if size != len || n == 0 {
        return Err(invalid(format!("frequency vector length {len} is not 4^N")));
    }
    Ok(n)
}

fn parse_formats(raw: &[String]) -> Result<Vec<ReportFormat>> {
    raw.iter().map(|s| s.trim().parse()).collect()
}

fn generate(family: Family, qubits: usize, purity_arg: Option<f64>, mix: Option<f64>, lambda: Option<f64>, seed: u64, out: &Path) -> Result<()> {
    let rho = match family {
        Family::Expdecay => {
            let p = purity_arg.ok_or_else(|| invalid("expdecay needs --purity"))?;
            random_expdecay_state(qubits, p, seed)?
        }
        Family::Mixed => DensityMatrix::maximally_mixed(qubits)?,
        Family::Product | Family::W | Family::Ghzi => {
            let kind = match family {
                Family::Product => CanonicalKind::Product,
                Family::W => CanonicalKind::W,
                _ => CanonicalKind::Ghzi,
            };
            let pure = make_canonical_state(kind, qubits)?;
            match (mix, lambda) {
                (Some(_), Some(_)) => return Err(invalid("--mix and --lambda are exclusive")),
                (Some(p), None) => white_noise(&pure, p)?,
                (None, Some(l)) => depolarize(&pure, l)?,
                (None, None) => DensityMatrix::from_pure(&pure),
            }
        }
    };
    write_state(&rho, out)?;
    log::info!("wrote {}-qubit state with purity {:.6} to {}", qubits, purity(&rho), out.display());
    Ok(())
}

fn probe(state: &Path, shots: u64, seed: u64, out: &Path) -> Result<()> {
    let rho = read_state(state)?;
    let povm = ProductPovm::tetrahedral(rho.qubits())?;
    let probs = born_probabilities_fast(&povm, &rho)?;
    let freqs = sample_frequencies(&probs, shots, seed);
    let file = BufWriter::new(File::create(out)?);
    if is_bin(out) {
        measurement::write_binary(freqs.values(), file)
    } else {
        measurement::write_csv(freqs.values(), file)
    }
}

struct Prepared {
    freqs: FrequencyVector,
    povm: ProductPovm,
    target: Option<DensityMatrix>,
}

fn prepare(args: &FitArgs) -> Result<Prepared> {
    let values = read_vector(&args.freqs)?;
    let qubits = qubits_for_outcomes(values.len())?;
    let povm = ProductPovm::tetrahedral(qubits)?;
    let freqs = FrequencyVector::new(values, args.shots)?;
    let target = args.target.as_deref().map(read_state).transpose()?;
    if let Some(t) = &target {
        if t.qubits() != qubits {
            return Err(invalid(format!("target has {} qubits, frequencies imply {qubits}", t.qubits())));
        }
    }
    Ok(Prepared { freqs, povm, target })
}

fn write_result(result: &TrainResult, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let text = serde_json::to_string_pretty(&result.report()).map_err(|e| TomoError::Parse(e.to_string()))?;
    fs::write(out_dir.join("report.json"), text)?;
    write_state(&result.rho, &out_dir.join("rho.qdm"))?;
    match result.final_fidelity() {
        Some(f) => println!("{}: {} iterations, fidelity {f:.6}, stop {:?}", result.method, result.iterations, result.stop),
        None => println!("{}: {} iterations, stop {:?}", result.method, result.iterations, result.stop),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { family, qubits, purity, mix, lambda, seed, out } => {
            generate(family, qubits, purity, mix, lambda, seed, &out)
        }
        Command::Probe { state, shots, seed, out } => probe(&state, shots, seed, &out),
        Command::Fit { common, strategy, iters, seed } => {
            let p = prepare(&common)?;
            let mut cfg = TrainConfig::new(p.povm.qubits(), strategy);
            cfg.max_iterations = iters;
            cfg.fidelity_target = common.fidelity_target;
            cfg.eval_every = common.eval_every;
            cfg.time_budget = common.time_budget;
            cfg.seed = seed;
            let result = train(&p.freqs, &p.povm, p.target.as_ref(), &cfg)?;
            write_result(&result, &common.out_dir)
        }
        Command::Imle { common, iters, dilution } => {
            let p = prepare(&common)?;
            let cfg = ImleConfig {
                max_iterations: iters,
                fidelity_target: common.fidelity_target,
                eval_every: common.eval_every,
                time_budget: common.time_budget,
                dilution,
                ..ImleConfig::default()
            };
            let result = imle_reconstruct(&p.freqs, &p.povm, p.target.as_ref(), &cfg)?;
            write_result(&result, &common.out_dir)
        }
        Command::Bench { spec, out_dir, format } => {
            let formats = parse_formats(&format)?;
            let mut spec = ExperimentSpec::load(&spec)?;
            if out_dir.is_some() {
                spec.output_dir = out_dir;
            }
            let dir = spec.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
            let run = run_experiment(&spec)?;
            let failed = run.records.iter().filter(|r| r.error.is_some()).count();
            for path in emit_report(&run.records, &formats, &dir)? {
                println!("{}", path.display());
            }
            if failed > 0 {
                log::warn!("{failed} of {} rows failed", run.records.len());
            }
            Ok(())
        }
        Command::Report { records, out_dir, format } => {
            let formats = parse_formats(&format)?;
            let text = fs::read_to_string(&records)?;
            let rows = if is_json(&records) { read_records_json(&text)? } else { read_records_csv(&text)? };
            for path in emit_report(&rows, &formats, &out_dir)? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                TomoError::ResourceGuard(_) => 3,
                TomoError::InvalidArgument(_) | TomoError::Parse(_) | TomoError::Io(_) | TomoError::DegenerateInput(_) => 2,
                TomoError::Numeric(_) => 1,
            };
            ExitCode::from(code)
        }
    }
}
