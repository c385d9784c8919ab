use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use pcswitch::config::RunConfig;
use pcswitch::io::{read_text, write_table, GridFile, IoError, Report};
use pcswitch::modulation::CarrierSweep;
use pcswitch::pipeline::{self, PipelineError, StepAnalysis};

#[derive(Parser)]
#[command(name = "pcswitch", version, about = "rf-SQUID bridge switch simulator and analysis")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridFormat {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Trap (or bias) each C-axis point and sweep I_Z; writes grid.csv.
    SimulateGrid {
        #[arg(long, value_enum, default_value = "csv")]
        format: GridFormat,
    },
    /// Step grouping, failure rate and φ0/I_stp series from a grid file.
    AnalyzeSteps {
        /// Grid file (CSV or JSON); defaults to <out>/grid.csv.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Long-term drift simulation and shift tracking.
    Monitor,
    /// On/off contrast over the frequency grid.
    SweepFreq,
    /// 1 dB compression point.
    Compression,
    /// Sideband spectra under sinusoidal actuation.
    Modulate,
    /// Actuation efficiency ζ(f_m) from carrier sweeps.
    FitZeta {
        /// JSON list of carrier sweeps; synthetic sweeps are used if absent.
        #[arg(long)]
        sweeps: Option<PathBuf>,
    },
    /// Print the effective configuration and its hash.
    ShowConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(g) = e.guidance() {
                eprintln!("hint: {g}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    hash: String,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn report<T: Serialize>(&self, command: &str, name: &str, data: T) -> Result<PathBuf, PipelineError> {
        let path = self.path(name);
        Report::new(command, &self.hash, self.cfg.seed, data).write(&path)?;
        Ok(path)
    }

    fn meta(&self, command: &str) -> serde_json::Value {
        json!({
            "command": command,
            "software_version": pcswitch::io::SOFTWARE_VERSION,
            "config_hash": self.hash,
            "seed": self.cfg.seed,
        })
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.threads {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let out = cli
        .out
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Ctx {
        hash: cfg.hash(),
        cfg,
        out,
    };
    match cli.command {
        Command::SimulateGrid { format } => simulate_grid(&ctx, format),
        Command::AnalyzeSteps { grid } => analyze_steps(&ctx, grid),
        Command::Monitor => monitor(&ctx),
        Command::SweepFreq => sweep_freq(&ctx),
        Command::Compression => compression(&ctx),
        Command::Modulate => modulate(&ctx),
        Command::FitZeta { sweeps } => fit_zeta(&ctx, sweeps),
        Command::ShowConfig => {
            let text = toml::to_string(&ctx.cfg).expect("config serializes");
            println!("# config_hash = \"{}\"\n{text}", ctx.hash);
            Ok(())
        }
    }
}

fn done(path: &Path) {
    println!("wrote {}", path.display());
}

fn simulate_grid(ctx: &Ctx, format: GridFormat) -> Result<(), PipelineError> {
    let grid = pipeline::simulate_grid(&ctx.cfg)?;
    let flagged = grid.flagged.iter().filter(|f| **f).count();
    let file = GridFile::new(grid, &ctx.hash);
    let path = match format {
        GridFormat::Csv => {
            let p = ctx.path("grid.csv");
            file.write_csv(&p)?;
            p
        }
        GridFormat::Json => {
            let p = ctx.path("grid.json");
            file.write_json(&p)?;
            p
        }
    };
    println!(
        "grid {} x {} (i_z x {}), {flagged} flagged cells",
        file.grid.rows(),
        file.grid.cols(),
        file.header.axes[1].name
    );
    done(&path);
    Ok(())
}

#[derive(Serialize)]
struct AnalyzeOutput<'a> {
    grid_path: String,
    grid_config_hash: &'a str,
    #[serde(flatten)]
    analysis: &'a StepAnalysis,
}

fn analyze_steps(ctx: &Ctx, grid: Option<PathBuf>) -> Result<(), PipelineError> {
    let grid_path = grid.unwrap_or_else(|| ctx.path("grid.csv"));
    let file = GridFile::read(&grid_path)?;
    let bridge = ctx.cfg.bridge_params();
    let analysis = pipeline::analyze_grid(&file.grid, &ctx.cfg.analysis, Some(&bridge))?;
    let r = &analysis.report;
    println!(
        "threshold {:.6}, {} steps, failure rate {:.4} ({} outliers)",
        r.threshold,
        r.groups.len(),
        r.failure_rate,
        r.outlier_indices.len()
    );
    if let Some(t) = &analysis.truth {
        println!("ground truth: flux-label agreement {:.4}", t.flux_agreement);
    }
    let rows: Vec<Vec<f64>> = analysis
        .inductance
        .iter()
        .map(|p| {
            vec![
                p.c_center,
                p.i_stp,
                p.from_step.h_over_2e,
                p.from_step.hbar_over_2e,
                p.analytic.unwrap_or(f64::NAN),
            ]
        })
        .collect();
    let table = ctx.path("inductance.csv");
    write_table(
        &table,
        &ctx.meta("analyze-steps"),
        &["c_center_A", "i_stp_A", "h_over_2e_per_istp_H", "hbar_over_2e_per_istp_H", "analytic_H"],
        &rows,
    )?;
    let out = AnalyzeOutput {
        grid_path: grid_path.display().to_string(),
        grid_config_hash: &file.header.config_hash,
        analysis: &analysis,
    };
    done(&ctx.report("analyze-steps", "steps.json", out)?);
    done(&table);
    Ok(())
}

fn monitor(ctx: &Ctx) -> Result<(), PipelineError> {
    let run = pipeline::run_monitor(&ctx.cfg)?;
    let rec = &run.record;
    for j in &rec.jumps {
        println!(
            "jump at epoch {} (t = {} h): {:+.3} quanta{}",
            j.epoch,
            j.time,
            j.quanta,
            if j.multi_quanta { " [multi]" } else { "" }
        );
    }
    let rows: Vec<Vec<f64>> = (0..rec.timestamps.len())
        .map(|k| vec![rec.timestamps[k], rec.delta_phi_ext[k], rec.delta_i_z[k], rec.chi_max[k]])
        .collect();
    let table = ctx.path("monitor.csv");
    write_table(
        &table,
        &ctx.meta("monitor"),
        &["time_h", "delta_phi_ext_rad", "delta_i_z_A", "chi_max"],
        &rows,
    )?;
    done(&ctx.report("monitor", "monitor.json", &run)?);
    done(&table);
    Ok(())
}

fn sweep_freq(ctx: &Ctx) -> Result<(), PipelineError> {
    let run = pipeline::sweep_freq(&ctx.cfg)?;
    let c = &run.contrast;
    println!(
        "contrast > {} dB over {:.4} GHz ({:.4}-{:.4} GHz)",
        ctx.cfg.contrast.options.threshold_db,
        c.bandwidth_hz / 1e9,
        c.band.0 / 1e9,
        c.band.1 / 1e9
    );
    let rows: Vec<Vec<f64>> = (0..c.freqs.len())
        .map(|k| vec![c.freqs[k], c.contrast_db[k], c.clipped[k] as u8 as f64])
        .collect();
    let table = ctx.path("contrast.csv");
    write_table(&table, &ctx.meta("sweep-freq"), &["freq_Hz", "contrast_dB", "clipped"], &rows)?;
    done(&ctx.report("sweep-freq", "contrast.json", &run)?);
    done(&table);
    Ok(())
}

fn compression(ctx: &Ctx) -> Result<(), PipelineError> {
    let run = pipeline::compression(&ctx.cfg)?;
    let r = &run.report;
    println!("P1dB {:.2} dBm ({:.3e} W)", r.p1db_dbm, r.p1db_watts);
    done(&ctx.report("compression", "compression.json", &run)?);
    Ok(())
}

fn modulate(ctx: &Ctx) -> Result<(), PipelineError> {
    let run = pipeline::modulate(&ctx.cfg)?;
    for l in &run.lines {
        let first = l.sidebands.iter().find(|s| s.order == 1).map(|s| s.gain_db);
        println!(
            "f_m {:.3e} Hz: zeta {:.4}, carrier {:.2} dB, first order {:.2} dB",
            l.f_m,
            l.zeta,
            l.feedthrough_db,
            first.unwrap_or(f64::NAN)
        );
    }
    done(&ctx.report("modulate", "modulation.json", &run)?);
    Ok(())
}

fn fit_zeta(ctx: &Ctx, sweeps: Option<PathBuf>) -> Result<(), PipelineError> {
    let measured = match sweeps {
        Some(p) => {
            let text = read_text(&p)?;
            let s: Vec<CarrierSweep> = serde_json::from_str(&text).map_err(IoError::from)?;
            Some(s)
        }
        None => None,
    };
    let run = pipeline::run_fit_zeta(&ctx.cfg, measured)?;
    for (f, z) in run.fit.f_m_grid.iter().zip(&run.fit.zeta) {
        println!("f_m {f:.3e} Hz: zeta {z:.5}");
    }
    if let Some(e) = run.max_relative_error {
        println!("max relative error vs injected profile {e:.2e}");
    }
    done(&ctx.report("fit-zeta", "zeta.json", &run)?);
    Ok(())
}
