mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Config, TopologyKind};
use netmee::exposure::cell_counts;
use netmee::io;
use netmee::{
    confidence_interval, estimate, mer_table, run_mc, Error, ErrorKind, ExposureLabel,
    MomentProblem, Result,
};

#[derive(Parser, Debug)]
#[command(
    name = "netmee",
    version,
    about = "Marginal exposure effects under network interference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a Monte Carlo experiment and write mc_summary.csv.
    Simulate(SimulateArgs),
    /// Estimate the model on node and edge tables and write estimates.csv.
    Estimate(EstimateArgs),
    /// Evaluate marginal exposure responses from a prior estimation run.
    Effects(EffectsArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// HAC bandwidth constant.
    #[arg(long = "hac-c")]
    hac_c: Option<f64>,
    /// Floor offset on the average degree in the bandwidth.
    #[arg(long = "hac-eps")]
    hac_eps: Option<f64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum)]
    topology: Option<TopologyKind>,
    /// Expected degree of the random geometric graph.
    #[arg(long)]
    kappa: Option<f64>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    /// Nodes CSV with header id,y,d,x1..xk,z1..zm.
    #[arg(long)]
    nodes: PathBuf,
    /// Edges CSV with header src,dst.
    #[arg(long)]
    edges: PathBuf,
}

#[derive(Args, Debug)]
struct EffectsArgs {
    #[command(flatten)]
    common: Common,
    /// Directory holding estimates.csv and covariance.csv.
    #[arg(long)]
    from: PathBuf,
    /// Covariate point, intercept first (comma separated).
    #[arg(long, value_delimiter = ',')]
    x: Option<Vec<f64>>,
    /// Heterogeneity quantiles (comma separated).
    #[arg(long = "p-grid", value_delimiter = ',')]
    p_grid: Option<Vec<f64>>,
}

fn resolve(common: &Common) -> Result<Config> {
    let mut cfg = Config::load(common.config.as_deref())?;
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(c) = common.hac_c {
        cfg.hac.c = c;
    }
    if let Some(e) = common.hac_eps {
        cfg.hac.epsilon = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", dir.display()),
        ))
    })
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = resolve(&args.common)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = args.reps {
        cfg.simulate.reps = r;
    }
    if let Some(n) = args.n {
        cfg.simulate.n = n;
    }
    if let Some(t) = args.topology {
        cfg.simulate.topology = t;
    }
    if let Some(k) = args.kappa {
        cfg.simulate.kappa = k;
    }
    let sim = cfg.sim_config()?;
    out_dir(&cfg.out)?;
    let resolved = toml::to_string(&cfg).map_err(|e| Error::InvalidInput(e.to_string()))?;
    fs::write(cfg.out.join("config.toml"), &resolved)?;
    println!("{resolved}");

    let summary = run_mc(&sim)?;
    io::write_mc_summary(&cfg.out.join("mc_summary.csv"), &summary)?;
    println!(
        "{} replications ({} failed, {} with HAC repair)",
        summary.reps, summary.failures, summary.psd_repairs
    );
    println!(
        "{:<16} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "name", "truth", "bias", "sd", "rmse", "coverage"
    );
    for r in &summary.rows {
        let sd = r.sd.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<16} {:>9.4} {:>9.4} {:>9} {:>9.4} {:>9.3}",
            r.name, r.truth, r.bias, sd, r.rmse, r.coverage
        );
    }
    Ok(())
}

fn estimate_cmd(args: EstimateArgs) -> Result<()> {
    let cfg = resolve(&args.common)?;
    let ing = io::ingest(&args.nodes, &args.edges)?;
    let counts = cell_counts(&ing.data.labels);
    let count_text: Vec<String> = ExposureLabel::ALL
        .iter()
        .map(|t| format!("{t}: {}", counts[t.index()]))
        .collect();
    log::info!(
        "{} nodes, {} edges; cell counts {}",
        ing.data.len(),
        ing.graph.edge_count(),
        count_text.join(", ")
    );

    let problem = MomentProblem::new(&ing.graph, &ing.data)?;
    for t in ExposureLabel::ALL {
        if !problem.layout.present[t.index()] {
            log::warn!("cell {t} has too few observations and is not estimated");
        }
    }
    let res = estimate(&problem, &cfg.hac, &cfg.gmm.to_config())?;

    out_dir(&cfg.out)?;
    io::write_estimates(&cfg.out.join("estimates.csv"), &res, cfg.level)?;
    io::write_covariance(
        &cfg.out.join("covariance.csv"),
        &res.names,
        &res.covariance(),
    )?;
    let diagnostics = vec![
        format!("nodes = {}", res.n),
        format!("edges = {}", ing.graph.edge_count()),
        format!("average_degree = {}", ing.graph.average_degree()),
        format!("cell_counts = \"{}\"", count_text.join(", ")),
        format!("bandwidth = {}", res.bandwidth),
        format!("equilibrium_iterations = {}", res.equilibrium_iterations),
        format!("equilibrium_residual = {}", res.equilibrium_residual),
        format!("clipped_propensities = {}", res.clipped),
        format!("converged = {}", res.converged),
        format!("objective = {}", res.objective),
        format!("hac_repaired = {}", res.psd_repaired),
    ];
    io::write_report(&cfg.out.join("diagnostics.txt"), &diagnostics)?;

    let ci = confidence_interval(&res, cfg.level);
    println!(
        "{:<16} {:>12} {:>12} {:>12} {:>12}",
        "param", "estimate", "std_error", "ci_lower", "ci_upper"
    );
    for j in 0..res.names.len() {
        println!(
            "{:<16} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            res.names[j], res.estimates[j], res.std_err[j], ci[j].0, ci[j].1
        );
    }
    for line in &diagnostics {
        println!("{line}");
    }
    Ok(())
}

fn effects(args: EffectsArgs) -> Result<()> {
    let mut cfg = resolve(&args.common)?;
    if args.common.out.is_none() && args.common.config.is_none() {
        cfg.out = args.from.clone();
    }
    let x = args.x.unwrap_or(cfg.effects.x);
    let grid = args.p_grid.unwrap_or(cfg.effects.p_grid);
    let inputs = io::read_effect_inputs(
        &args.from.join("estimates.csv"),
        &args.from.join("covariance.csv"),
    )?;
    let rows = mer_table(&inputs, &x, &grid, cfg.level)?;
    out_dir(&cfg.out)?;
    io::write_mer(&cfg.out.join("mer.csv"), &rows)?;
    println!(
        "{:<8} {:>6} {:>12} {:>12}",
        "cell", "p", "estimate", "std_error"
    );
    for r in &rows {
        println!(
            "{:<8} {:>6} {:>12.6} {:>12.6}",
            r.label.to_string(),
            r.p,
            r.estimate,
            r.std_err
        );
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("NETMEE_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().ok().filter(|&t| t > 0).ok_or_else(|| {
        Error::InvalidInput(format!(
            "NETMEE_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidInput(e.to_string()))
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Validation => 2,
        ErrorKind::Convergence | ErrorKind::Numeric => 3,
        ErrorKind::Io => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate_cmd(a),
        Command::Effects(a) => effects(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
