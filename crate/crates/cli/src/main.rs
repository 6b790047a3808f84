//! `topoforge` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;

use topoforge::active_learning::{solve_setting, Provenance, Strategy};
use topoforge::config::ExperimentConfig;
use topoforge::experiment::{ground_truth, read_dataset_dir, run_experiment};
use topoforge::fem::FeaCounter;
use topoforge::generator::GeneratorParams;
use topoforge::io::{write_pgm, SolveRecord};
use topoforge::kkt::deviation;
use topoforge::metrics::{evaluate_model, measure_latency, GroundTruth};
use topoforge::setting::ProblemSetting;
use topoforge::Error;

#[derive(Parser)]
#[command(name = "topoforge", version, about = "Topology generators trained by KKT-residual active learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem setting and write its record (and a PGM image).
    Solve {
        #[command(flatten)]
        common: Common,
        /// Comma-separated setting parameters: `angle` or `i,j,angle`.
        /// Drawn from the seed when omitted.
        #[arg(long)]
        setting: Option<String>,
    },
    /// KKT deviation score of a design (from a record or a model).
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        setting: Option<String>,
        /// Score the design stored in this record.
        #[arg(long, conflicts_with = "model")]
        record: Option<PathBuf>,
        /// Score the design generated by this model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train a generator with one or more strategies.
    Run {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long)]
        seeds: Option<u64>,
        /// Comma-separated subset of static,heuristic,theory,random.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long, value_enum)]
        weighted_loss: Option<OnOff>,
        /// Reference-design cache; defaults to `<out>/cache`.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Evaluate a model against reference designs.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Directory of reference records; built (and cached) from the config when omitted.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Generate one design with a trained model.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        setting: String,
    },
    /// Render the design stored in a record as a PGM image.
    ExportPgm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        record: PathBuf,
    },
}

fn load_config(common: &Common) -> topoforge::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn parse_setting(cfg: &ExperimentConfig, text: &str) -> topoforge::Result<ProblemSetting> {
    let params = text
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::InvalidParameter(format!("bad setting value `{t}`"))))
        .collect::<topoforge::Result<Vec<f64>>>()?;
    cfg.load_case()?.setting_from_params(&cfg.mesh()?, &params)
}

fn setting_or_sample(cfg: &ExperimentConfig, text: Option<&str>) -> topoforge::Result<ProblemSetting> {
    match text {
        Some(t) => parse_setting(cfg, t),
        None => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
            Ok(cfg.load_case()?.sample(&cfg.mesh()?, &mut rng))
        }
    }
}

fn fmt_params(p: &[f64]) -> String {
    p.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
}

fn density_image(cfg: &ExperimentConfig, x: &[f64], path: &Path) -> topoforge::Result<()> {
    let problem = cfg.problem()?;
    let state = problem.density(x, cfg.density.beta_target)?;
    write_pgm(path, &state.rho, cfg.nx, cfg.ny)
}

fn parse_strategies(text: &str) -> topoforge::Result<Vec<Strategy>> {
    text.split(',')
        .map(|t| Strategy::parse(t.trim()).ok_or_else(|| Error::InvalidParameter(format!("unknown strategy `{t}`"))))
        .collect()
}

fn run(cli: Cli) -> topoforge::Result<()> {
    match cli.command {
        Command::Solve { common, setting } => {
            let cfg = load_config(&common)?;
            cfg.validate()?;
            let problem = cfg.problem()?;
            let s = setting_or_sample(&cfg, setting.as_deref())?;
            let t = Instant::now();
            let rec = solve_setting(&problem, &s, &cfg.al, None, Provenance::Static)?.to_solve_record();
            std::fs::create_dir_all(&common.out)?;
            rec.save(&common.out.join("record.tdto"))?;
            density_image(&cfg, &rec.x, &common.out.join("design.pgm"))?;
            println!(
                "setting {} f* {:.6} fea {} time {:.2}s",
                fmt_params(&s.params()),
                rec.f,
                rec.fea_count,
                t.elapsed().as_secs_f64()
            );
        }
        Command::Score { common, setting, record, model } => {
            let cfg = load_config(&common)?;
            cfg.validate()?;
            let problem = cfg.problem()?;
            let (s, x) = match (record, model) {
                (Some(path), _) => {
                    let rec = SolveRecord::load(&path)?;
                    let s = match setting {
                        Some(t) => parse_setting(&cfg, &t)?,
                        None => cfg.load_case()?.setting_from_params(problem.mesh(), &rec.setting)?,
                    };
                    (s, rec.x)
                }
                (None, Some(path)) => {
                    let m = GeneratorParams::load(&path)?;
                    let s = setting_or_sample(&cfg, setting.as_deref())?;
                    let x = m.forward(&s.encode(problem.mesh()))?;
                    (s, x)
                }
                (None, None) => {
                    return Err(Error::InvalidParameter("score needs --record or --model".into()));
                }
            };
            let load = s.realize(problem.mesh())?;
            let sc = deviation(&problem, &x, &load, &cfg.kkt, &FeaCounter::new())?;
            println!(
                "setting {} d {:.6e} grad_norm_sq {:.6e} g0 {:.6e} g1 {:.6e} mu0 {:.6e} mu1 {:.6e} fea {}",
                fmt_params(&s.params()),
                sc.d,
                sc.grad_norm_sq,
                sc.g0,
                sc.g1,
                sc.multipliers.mu0,
                sc.multipliers.mu1,
                sc.fea_cost
            );
        }
        Command::Run { common, seeds, strategy, weighted_loss, cache } => {
            let mut cfg = load_config(&common)?;
            if let Some(k) = seeds {
                cfg.seeds = k;
            }
            if let Some(w) = weighted_loss {
                cfg.weighted_loss = matches!(w, OnOff::On);
            }
            let strategies = match strategy {
                Some(t) => parse_strategies(&t)?,
                None => vec![cfg.strategy],
            };
            let seed_list: Vec<u64> = (0..cfg.seeds.max(1)).map(|k| cfg.seed + k).collect();
            let cache = cache.unwrap_or_else(|| common.out.join("cache"));
            std::fs::create_dir_all(&common.out)?;
            cfg.save(&common.out.join("config.ini"))?;
            let runs = run_experiment(&cfg, &strategies, &seed_list, &common.out, Some(&cache))?;
            println!("{:<10} {:>5} {:>12} {:>12} {:>8} {:>6} {:>8}", "strategy", "seed", "median_gap", "mean_gap", "fail", "data", "fea");
            for r in &runs {
                println!(
                    "{:<10} {:>5} {:>12.4} {:>12.4} {:>8.4} {:>6} {:>8}",
                    r.strategy.name(),
                    r.seed,
                    r.metrics.median_gap,
                    r.metrics.mean_gap,
                    r.metrics.failure_rate,
                    r.dataset_size,
                    r.total_fea
                );
            }
            println!("summary written to {}", common.out.join("summary.csv").display());
        }
        Command::Eval { common, model, truth, cache } => {
            let cfg = load_config(&common)?;
            cfg.validate()?;
            let problem = cfg.problem()?;
            let m = GeneratorParams::load(&model)?;
            let gt = match truth {
                Some(dir) => GroundTruth::from_records(&problem, &cfg.load_case()?, read_dataset_dir(&dir)?)?,
                None => ground_truth(&cfg, &problem, Some(&cache.unwrap_or_else(|| common.out.join("cache"))))?,
            };
            let r = evaluate_model(&problem, &m, &gt)?;
            if r.skipped > 0 {
                log::warn!("{} test points without reference design skipped", r.skipped);
            }
            println!("test points      {}", r.gaps.len());
            println!("skipped          {}", r.skipped);
            println!("test sum         {:.6}", r.test_sum);
            println!("median gap       {:.6}", r.median_gap);
            println!("mean gap         {:.6}", r.mean_gap);
            println!("failure rate     {:.6}", r.failure_rate);
            println!("g0 violation     {:.6e} (reference {:.6e})", r.g0_violation_generated, r.g0_violation_truth);
            println!("g1 violation     {:.6e} (reference {:.6e})", r.g1_violation_generated, r.g1_violation_truth);
        }
        Command::Generate { common, model, setting } => {
            let cfg = load_config(&common)?;
            let m = GeneratorParams::load(&model)?;
            let mesh = cfg.mesh()?;
            let case = cfg.load_case()?;
            let s = parse_setting(&cfg, &setting)?;
            if !s.in_support(&case) {
                log::warn!("setting {} lies outside the training support; extrapolating", fmt_params(&s.params()));
                eprintln!("warning: setting outside the training support");
            }
            let input = s.encode(&mesh);
            let x = m.forward(&input)?;
            if x.len() != mesh.n_elements() {
                return Err(Error::DimensionMismatch { expected: mesh.n_elements(), actual: x.len() });
            }
            let lat = measure_latency(&m, &input, 10, 100)?;
            std::fs::create_dir_all(&common.out)?;
            density_image(&cfg, &x, &common.out.join("generated.pgm"))?;
            println!("latency median {:.3e}s min {:.3e}s max {:.3e}s", lat.median_s, lat.min_s, lat.max_s);
        }
        Command::ExportPgm { common, record } => {
            let cfg = load_config(&common)?;
            let rec = SolveRecord::load(&record)?;
            let path = if common.out.extension().is_some_and(|e| e == "pgm") {
                common.out.clone()
            } else {
                std::fs::create_dir_all(&common.out)?;
                common.out.join("design.pgm")
            };
            density_image(&cfg, &rec.x, &path)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = std::env::var("TOPOFORGE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size worker pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
