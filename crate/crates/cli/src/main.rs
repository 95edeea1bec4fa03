//! `tgp`: simulate scenes, fit transport GP models, export velocities, run the
//! block-matching baseline and score estimates.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use tgp_core::dmw::{dmw_field, read_frames, DmwConfig};
use tgp_core::estimation::{fit, FitConfig, Normalization};
use tgp_core::flow::checkpoint;
use tgp_core::kv::{fmt_f64, write_atomic};
use tgp_core::scenes::{read_observations, rms, rmse, sample_scene, truth_field, unit_lattice, write_observations, SceneSpec};
use tgp_core::velocity::{velocity_field, VelocityField};

#[derive(Parser)]
#[command(name = "tgp", version, about = "Velocity fields from space-time data with transport Gaussian processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic scene and its true velocity field.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        /// Observation file; the truth goes to `<stem>.truth.csv` beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a flow and covariance to observations.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path; the report goes to `<stem>.report.txt` beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a fitted flow's velocity on a lattice of the unit square.
    Velocity {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated times in [0, 1].
        #[arg(long, value_parser = parse_times)]
        times: Times,
        /// Lattice size as `RxC`.
        #[arg(long, value_parser = parse_grid)]
        grid: (usize, usize),
        #[arg(long)]
        out: PathBuf,
    },
    /// Block-matching motion vectors from an image sequence.
    Dmw {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// RMS of both fields and the RMSE between them.
    Metrics {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
}

#[derive(Clone, Debug)]
struct Times(Vec<f64>);

fn parse_times(s: &str) -> Result<Times, String> {
    let times = s
        .split(',')
        .map(|p| {
            let p = p.trim();
            match p.parse::<f64>() {
                Ok(t) if (0.0..=1.0).contains(&t) => Ok(t),
                Ok(t) => Err(format!("time {t} outside [0, 1]")),
                Err(_) => Err(format!("invalid time {p:?}")),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Times(times))
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let bad = || format!("expected RxC with positive sizes, got {s:?}");
    let (r, c) = s.split_once(['x', 'X', '×']).ok_or_else(bad)?;
    let r: usize = r.trim().parse().map_err(|_| bad())?;
    let c: usize = c.trim().parse().map_err(|_| bad())?;
    if r == 0 || c == 0 {
        return Err(bad());
    }
    Ok((r, c))
}

/// `dir/name.csv` → `dir/name.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 4 } else { 3 })
        }
    }
}

fn run(command: Command) -> tgp_core::Result<()> {
    match command {
        Command::Simulate { spec, out } => simulate(&spec, &out),
        Command::Fit { data, config, out } => fit_cmd(&data, &config, &out),
        Command::Velocity {
            checkpoint,
            times,
            grid,
            out,
        } => velocity(&checkpoint, &times.0, grid, &out),
        Command::Dmw { frames, config, out } => dmw(&frames, &config, &out),
        Command::Metrics { est, truth } => metrics(&est, &truth),
    }
}

fn simulate(spec_path: &Path, out: &Path) -> tgp_core::Result<()> {
    let spec = SceneSpec::read(spec_path)?;
    let data = sample_scene(&spec)?;
    let truth = truth_field(&spec)?;
    let truth_path = sibling(out, "truth.csv");
    write_observations(out, &data)?;
    truth.write(&truth_path)?;
    println!("wrote {} observations to {}", data.len(), out.display());
    println!("wrote truth velocity to {}", truth_path.display());
    Ok(())
}

fn fit_cmd(data_path: &Path, config_path: &Path, out: &Path) -> tgp_core::Result<()> {
    let raw = read_observations(data_path)?;
    let config = FitConfig::read(config_path)?;
    config.validate()?;
    let (data, map) = if raw.is_normalized() {
        (raw, Normalization::identity())
    } else {
        let (d, m) = raw.normalize()?;
        println!(
            "normalized: t' = (t - {}) / {}, x1' = (x1 - {}) / {}, x2' = (x2 - {}) / {}",
            m.t_offset, m.t_scale, m.x_offset[0], m.x_scale[0], m.x_offset[1], m.x_scale[1]
        );
        (d, m)
    };
    let started = Instant::now();
    let result = fit(&data, &config)?;
    let p = &result.params;
    let mut report = String::from("# fit report\n");
    for (k, v) in [("sigma2", p.sigma2), ("l0", p.l0), ("l1", p.l1), ("l2", p.l2), ("tau2", p.tau2)] {
        let _ = writeln!(report, "{k} = {}", fmt_f64(v));
    }
    let _ = writeln!(report, "nu = {}", p.nu);
    let _ = writeln!(report, "iterations = {}", config.iterations);
    let _ = writeln!(report, "t_offset = {}", fmt_f64(map.t_offset));
    let _ = writeln!(report, "t_scale = {}", fmt_f64(map.t_scale));
    for a in 0..2 {
        let _ = writeln!(report, "x{}_offset = {}", a + 1, fmt_f64(map.x_offset[a]));
        let _ = writeln!(report, "x{}_scale = {}", a + 1, fmt_f64(map.x_scale[a]));
    }
    let trace: Vec<String> = result.nll_trace.iter().map(|v| fmt_f64(*v)).collect();
    let _ = writeln!(report, "nll_trace = {}", trace.join(" "));
    let report_path = sibling(out, "report.txt");
    checkpoint::write(out, &result.net, Some(p))?;
    write_atomic(&report_path, &report)?;
    println!("{:>12} {:>12} {:>12} {:>12} {:>12}", "sigma2", "l0", "l1", "l2", "tau2");
    println!(
        "{:>12} {:>12} {:>12} {:>12} {:>12}",
        sig6(p.sigma2),
        sig6(p.l0),
        sig6(p.l1),
        sig6(p.l2),
        sig6(p.tau2)
    );
    if let Some(last) = result.nll_trace.last() {
        println!("final objective {}", sig6(*last));
    }
    println!("wallclock {:.2} s (total {:.2} s)", result.wallclock, started.elapsed().as_secs_f64());
    println!("wrote {} and {}", out.display(), report_path.display());
    Ok(())
}

fn velocity(ckpt: &Path, times: &[f64], grid: (usize, usize), out: &Path) -> tgp_core::Result<()> {
    let (net, _) = checkpoint::read(ckpt)?;
    let field = velocity_field(&net, times, &unit_lattice(grid.0, grid.1), 1.0)?;
    field.write(out)?;
    println!("wrote {} velocity samples to {}", field.len(), out.display());
    Ok(())
}

fn dmw(frames_path: &Path, config_path: &Path, out: &Path) -> tgp_core::Result<()> {
    let config = DmwConfig::read(config_path)?;
    config.validate()?;
    let frames = read_frames(frames_path, config.pixel_size)?;
    let result = dmw_field(&frames, &config)?;
    result.field.write(out)?;
    println!(
        "{} vectors from {} sites, {} skipped",
        result.field.len(),
        result.sites,
        result.skipped
    );
    Ok(())
}

fn metrics(est_path: &Path, truth_path: &Path) -> tgp_core::Result<()> {
    let est = VelocityField::read(est_path)?;
    let truth = VelocityField::read(truth_path)?;
    let err = rmse(&est, &truth)?;
    let rms_truth = rms(&truth)?;
    let rms_est = rms(&est)?;
    println!("RMS(truth) {}", sig6(rms_truth));
    println!("RMS(est)   {}", sig6(rms_est));
    println!("RMSE       {}", sig6(err));
    Ok(())
}

/// Six significant digits, `%g` style.
fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-5..6).contains(&exp) {
        return format!("{v:.5e}");
    }
    let decimals = (5 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
