use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tlz::analytics::tlz_probability;
use tlz::model::DriveParams;
use tlz::noise::{
    alpha_grid, dephased_probability_with, robustness_interval, robustness_setup, widest_interval,
    Channel, DephasingModel, RobustnessMethod,
};
use tlz::propagator::propagate_sweep;
use tlz::pulse::{synthesize_drive, waveform_csv, WaveformColumns};
use tlz::scan::{
    csv_string, locus_csv, pt_locus, run_scan, svg_string, with_jobs, Axis, Param, PtMethod,
    ScanConfig, ScanSpec, Spacing,
};
use tlz::TlzError;

#[derive(Parser)]
#[command(name = "tlz", version, about = "Twisted Landau-Zener sweep simulator")]
struct Cli {
    /// key=value config file supplying defaults for every command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Omit the wall-time line so identical inputs give identical files.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Exit with status 1 when any point failed or a limit was violated.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Svg,
}

/// Model parameters; unset values come from --config or the defaults.
#[derive(Args, Clone, Default)]
struct ModelArgs {
    /// Gap m, Hz.
    #[arg(long)]
    m: Option<f64>,
    /// Slope ν, Hz².
    #[arg(long)]
    nu: Option<f64>,
    /// Curvature κ∥, s.
    #[arg(long, allow_hyphen_values = true)]
    kappa: Option<f64>,
    /// Sweep speed F.
    #[arg(long = "F", allow_hyphen_values = true)]
    speed: Option<f64>,
    /// Pinned sweep duration, s.
    #[arg(long = "T")]
    duration: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one sweep and print P with diagnostics.
    Sweep(ModelArgs),
    /// Run a 1D or 2D parameter scan.
    Scan {
        /// Override a config key, e.g. --set axis1.count=21 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// PT speed as a function of κ∥.
    PtLocus {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, allow_hyphen_values = true)]
        kappa_lo: f64,
        #[arg(long, allow_hyphen_values = true)]
        kappa_hi: f64,
        #[arg(long, default_value_t = 21)]
        count: usize,
        #[arg(long, default_value = "analytic")]
        method: String,
    },
    /// Synthesize the rotating-frame waveform and check hardware limits.
    Pulse {
        #[command(flatten)]
        model: ModelArgs,
        /// Samples per second.
        #[arg(long, default_value_t = 1e9)]
        rate: f64,
        /// Export I/Q columns instead of amplitude and phase.
        #[arg(long)]
        iq: bool,
    },
    /// Amplitude-error robustness interval.
    Robustness {
        /// Dimensionless twist m·κ∥ (TLZ method).
        #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
        m_kappa: f64,
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
        /// tlz or rabi.
        #[arg(long, default_value = "tlz")]
        method: String,
        #[arg(long, default_value = "drive")]
        channel: String,
        #[arg(long, default_value_t = 0.5)]
        alpha_lo: f64,
        #[arg(long, default_value_t = 4.0)]
        alpha_hi: f64,
        #[arg(long, default_value_t = 71)]
        alpha_count: usize,
    },
    /// Line-broadened probability under quasi-static dephasing.
    Dephase {
        #[command(flatten)]
        model: ModelArgs,
        /// Gaussian FWHM, Hz.
        #[arg(long)]
        fwhm: Option<f64>,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        span: Option<f64>,
    },
}

/// Command failure: `Usage` maps to exit status 2, `Partial` to 1.
enum Failure {
    Usage(TlzError),
    Partial(String),
}

impl From<TlzError> for Failure {
    fn from(e: TlzError) -> Self {
        Failure::Usage(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_jobs(cli.jobs, || run(&cli)).map_err(Failure::Usage).and_then(|r| r) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Partial(msg)) => {
            eprintln!("tlz: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("tlz: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ScanConfig, TlzError> {
    match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|source| TlzError::Io { path: path.clone(), source })?;
            ScanConfig::parse(&text)
        }
        None => Ok(ScanConfig::default()),
    }
}

fn params(cli: &Cli, model: &ModelArgs) -> Result<(ScanSpec, DriveParams), TlzError> {
    let spec = load_config(cli)?.to_spec()?;
    let b = spec.base;
    let p = DriveParams {
        m: model.m.unwrap_or(b.m),
        nu: model.nu.unwrap_or(b.nu),
        kappa: model.kappa.unwrap_or(b.kappa),
        speed: model.speed.unwrap_or(b.speed),
        duration: model.duration.or(b.duration),
        limits: b.limits,
    };
    p.validate()?;
    Ok((spec, p))
}

fn emit(cli: &Cli, text: &str) -> Result<(), TlzError> {
    match &cli.out {
        Some(path) => write(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), TlzError> {
    std::fs::write(path, text).map_err(|source| TlzError::Io { path: path.to_path_buf(), source })
}

fn csv_only(cli: &Cli, command: &str) -> Result<(), TlzError> {
    if cli.format == Format::Svg {
        return Err(TlzError::InvalidScan(format!("{command} has no SVG output")));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Sweep(model) => {
            csv_only(cli, "sweep")?;
            let (spec, p) = params(cli, model)?;
            let r = propagate_sweep(&p, &spec.options)?;
            let analytic = tlz_probability(p.m, p.nu, p.kappa, p.speed)?;
            let mut out = String::new();
            let _ = writeln!(out, "P={:.16e}", r.p);
            let _ = writeln!(out, "P_tlz={:.16e}", analytic.value);
            let _ = writeln!(out, "T_s={:.16e}", p.resolved_duration()?);
            let _ = writeln!(out, "norm_drift={:.3e}", r.norm_drift);
            let _ = writeln!(out, "n_steps={}", r.n_steps);
            emit(cli, &out)?;
        }
        Command::Scan { set } => {
            let mut cfg = load_config(cli)?;
            for kv in set {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| TlzError::InvalidScan(format!("--set expects KEY=VALUE, got {kv:?}")))?;
                cfg.set(k.trim(), v.trim())?;
            }
            let spec = cfg.to_spec()?;
            let result = run_scan(&spec)?;
            let text = match cli.format {
                Format::Csv => csv_string(&result, cli.deterministic),
                Format::Svg => svg_string(&result)?,
            };
            emit(cli, &text)?;
            let failed = result.failures();
            if cli.strict && failed > 0 {
                return Err(Failure::Partial(format!("{failed} of {} points failed", result.points.len())));
            }
        }
        Command::PtLocus { model, kappa_lo, kappa_hi, count, method } => {
            csv_only(cli, "pt-locus")?;
            let (_, p) = params(cli, model)?;
            let method: PtMethod = method.parse()?;
            let axis = Axis { param: Param::Kappa, lo: *kappa_lo, hi: *kappa_hi, count: *count, spacing: Spacing::Linear };
            axis.validate()?;
            let points = pt_locus(&p, &axis.values(), method);
            emit(cli, &locus_csv(&points, method, &p))?;
            let failed = points.iter().filter(|x| x.result.is_err()).count();
            if cli.strict && failed > 0 {
                return Err(Failure::Partial(format!("{failed} of {} κ values failed", points.len())));
            }
        }
        Command::Pulse { model, rate, iq } => {
            csv_only(cli, "pulse")?;
            let (_, p) = params(cli, model)?;
            let prog = synthesize_drive(&p, *rate)?;
            let columns = if *iq { WaveformColumns::Iq } else { WaveformColumns::Polar };
            emit(cli, &waveform_csv(&prog, columns))?;
            let a = prog.prep;
            eprintln!(
                "prep: theta_i={:.6} phi_i={:.6} theta_f={:.6} phi_f={:.6} ({} ns pulses)",
                a.theta_i,
                a.phi_i,
                a.theta_f,
                a.phi_f,
                prog.prep_duration * 1e9
            );
            for c in &prog.constraint_report {
                let verdict = if c.pass { "ok" } else { "VIOLATED" };
                eprintln!("{}: max {:.6e} limit {:.6e} {verdict}", c.name, c.observed_max, c.limit);
            }
            if cli.strict && !prog.passes_constraints() {
                return Err(Failure::Partial("hardware limits violated".into()));
            }
        }
        Command::Robustness { m_kappa, threshold, method, channel, alpha_lo, alpha_hi, alpha_count } => {
            csv_only(cli, "robustness")?;
            let method = match method.as_str() {
                "rabi" => RobustnessMethod::Rabi,
                "tlz" => {
                    let channel: Channel = channel.parse()?;
                    RobustnessMethod::tlz(robustness_setup(*m_kappa)?, channel)
                }
                other => return Err(TlzError::InvalidScan(format!("unknown method {other:?} (tlz|rabi)")).into()),
            };
            let grid = alpha_grid(*alpha_lo, *alpha_hi, *alpha_count);
            let around_one = robustness_interval(&method, *threshold, &grid)?;
            let widest = widest_interval(&method, *threshold, &grid)?;
            let mut out = String::new();
            if let RobustnessMethod::Tlz { params, .. } = method {
                let _ = writeln!(out, "# m={:e} nu={:e} kappa={:e} F={:e} T={:e}", params.m, params.nu, params.kappa, params.speed, params.duration.unwrap_or(f64::NAN));
            }
            let _ = writeln!(out, "# threshold={threshold}");
            for (name, iv) in [("interval", around_one), ("widest", widest)] {
                match iv {
                    Some(iv) => {
                        let _ = writeln!(out, "# {name}=[{:.4}, {:.4}]", iv.alpha_lo, iv.alpha_hi);
                    }
                    None => {
                        let _ = writeln!(out, "# {name}=none");
                    }
                }
            }
            out.push_str("alpha,P\n");
            for a in &grid {
                let _ = writeln!(out, "{:.16e},{:.16e}", a, method.probability(*a)?);
            }
            emit(cli, &out)?;
        }
        Command::Dephase { model, fwhm, nodes, span } => {
            csv_only(cli, "dephase")?;
            let (spec, p) = params(cli, model)?;
            let d = spec.dephasing;
            let line = DephasingModel {
                fwhm: fwhm.unwrap_or(d.fwhm),
                n_nodes: nodes.unwrap_or(d.n_nodes),
                span_sigmas: span.unwrap_or(d.span_sigmas),
            };
            let lw = dephased_probability_with(&p, &line, &spec.options)?;
            emit(cli, &format!("P_lw={lw:.16e}\nfwhm_Hz={:e}\nn_nodes={}\n", line.fwhm, line.n_nodes))?;
        }
    }
    Ok(())
}
