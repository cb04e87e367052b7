use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use wmforge::harness::{ablate, synth_image, AblationParameter, ExperimentConfig, ExperimentReport, Lab, Scenario};
use wmforge::image_io::{read_image, write_image};
use wmforge::rng::RngStream;
use wmforge::watermark::WatermarkMessage;
use wmforge::Image;

#[derive(Parser)]
#[command(name = "wmforge", version, about = "Desk-scale watermark forgery laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (flat JSON); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for report.json, table.csv and images.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for per-image loops.
    #[arg(long)]
    jobs: Option<usize>,
    /// Saved network to use instead of training one.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Also write images/*.pgm.
    #[arg(long)]
    dump_images: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic images.
    Synth {
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed a message into images with the config's scheme.
    Embed {
        #[command(flatten)]
        common: Common,
        /// Bit string such as 0110...; random from the seed when omitted.
        #[arg(long)]
        message: Option<String>,
        images: Vec<PathBuf>,
    },
    Train(Common),
    Attack(Common),
    Baseline(Common),
    Robustness(Common),
    Defense {
        #[command(flatten)]
        common: Common,
        /// Overrides the config's pool size.
        #[arg(long)]
        pool_k: Option<usize>,
    },
    Detectability(Common),
    /// Sweep a refinement parameter on one trained network.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// `L` or `lambda`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Print the effective configuration as JSON.
    Config(Common),
    /// Print a stored report and check its aggregates.
    Report {
        path: PathBuf,
    },
}

fn load_config(common: &Common, scenario: Scenario) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("config: reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    cfg.scenario = scenario;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = Some(o.clone());
    }
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    if let Some(n) = &common.network {
        cfg.network = Some(n.clone());
    }
    cfg.dump_images |= common.dump_images;
    cfg.validate().context("config")?;
    Ok(cfg)
}

fn print_report(r: &ExperimentReport) {
    print!("{}", r.table_csv());
    if let Some(t) = &r.training {
        println!(
            "training: {} iterations, loss {:.4} -> {:.4}",
            t.iterations, t.head_loss, t.tail_loss
        );
    }
    if let Some(roc) = &r.roc {
        println!("roc auc {:.4} (genuine pre-distorted: {:.4})", roc.auc, roc.auc_predistorted);
    }
    println!(
        "config {} | c = {} of K = {} | {:.1} s",
        r.config_hash, r.policy.c, r.policy.k, r.wall_time_s
    );
}

fn run_scenario(common: &Common, scenario: Scenario, pool_k: Option<usize>) -> Result<()> {
    let mut cfg = load_config(common, scenario)?;
    if let Some(k) = pool_k {
        cfg.pool_k = k;
        cfg.validate().context("config")?;
    }
    let report = wmforge::harness::run(&cfg).with_context(|| format!("{} failed", scenario.name()))?;
    print_report(&report);
    Ok(())
}

fn cmd_synth(n: usize, size: usize, seed: u64, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).context("synth: creating output directory")?;
    let stream = RngStream::new(seed).child("synth");
    for i in 0..n {
        let x = synth_image(size, 1, &stream.index(i as u64)).context("synth")?;
        write_image(&x, out.join(format!("synth_{i:04}.pgm"))).context("synth: writing")?;
    }
    println!("wrote {n} images to {}", out.display());
    Ok(())
}

fn cmd_embed(common: &Common, message: Option<&str>, images: &[PathBuf]) -> Result<()> {
    if images.is_empty() {
        bail!("embed: no input images given");
    }
    let cfg = load_config(common, Scenario::Attack)?;
    let scheme = cfg.scheme.build().context("embed: scheme")?;
    let m = match message {
        Some(s) => s.parse::<WatermarkMessage>().context("embed: parsing message")?,
        None => WatermarkMessage::random(scheme.bits(), &RngStream::new(cfg.seed).child("cli-message"))?,
    };
    let out = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)?;
    println!("message {m}");
    for p in images {
        let x: Image = read_image(p).with_context(|| format!("embed: reading {}", p.display()))?;
        let y = scheme.embed(&x, &m).context("embed")?;
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into());
        let ext = if y.channels() == 3 { "ppm" } else { "pgm" };
        let dest = out.join(format!("{name}_wm.{ext}"));
        write_image(&y, &dest).context("embed: writing")?;
        let acc = scheme.accuracy(&read_image::<f64>(&dest)?, &m)?;
        println!(
            "{} -> {} (bit accuracy after 8-bit write {acc:.4})",
            p.display(),
            dest.display()
        );
    }
    Ok(())
}

fn cmd_ablate(common: &Common, param: &str, values: &[f64]) -> Result<()> {
    let parameter: AblationParameter = param.parse().context("ablate")?;
    let cfg = load_config(common, Scenario::Attack)?;
    let out = cfg.output_dir.clone();
    let lab = Lab::new(cfg).context("ablate")?;
    let net = lab.network().context("ablate")?;
    let curve = ablate(&lab, &net, parameter, values).context("ablate")?;
    let csv = curve.to_csv();
    print!("{csv}");
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join(format!("ablation_{param}.csv")), csv)?;
    }
    Ok(())
}

fn cmd_report(path: &Path) -> Result<()> {
    let path = if path.is_dir() {
        path.join("report.json")
    } else {
        path.to_path_buf()
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("report: reading {}", path.display()))?;
    let report = ExperimentReport::from_json(&text).context("report: parsing")?;
    print_report(&report);
    if !report.aggregates_consistent() {
        bail!("report: aggregates do not match the per-image records");
    }
    println!("aggregates consistent with {} records", report.records.len());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { n, size, seed, out } => cmd_synth(n, size, seed, &out),
        Command::Embed { common, message, images } => cmd_embed(&common, message.as_deref(), &images),
        Command::Train(c) => run_scenario(&c, Scenario::Train, None),
        Command::Attack(c) => run_scenario(&c, Scenario::Attack, None),
        Command::Baseline(c) => run_scenario(&c, Scenario::Baseline, None),
        Command::Robustness(c) => run_scenario(&c, Scenario::Robustness, None),
        Command::Defense { common, pool_k } => run_scenario(&common, Scenario::Defense, pool_k),
        Command::Detectability(c) => run_scenario(&c, Scenario::Detectability, None),
        Command::Ablate { common, param, values } => cmd_ablate(&common, &param, &values),
        Command::Config(c) => {
            println!("{}", load_config(&c, Scenario::Attack)?.to_json());
            Ok(())
        }
        Command::Report { path } => cmd_report(&path),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
