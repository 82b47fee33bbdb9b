//! Command-line front end: simulation grids, estimation on data files, rate
//! fits, diagnostics and loading post-processing.
//!
//! Every command writes delimited tables plus `manifest.json` into `--out`.
//! Exit codes: 0 success, 2 usage, 3 data, 4 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tensor_factor::dgp::{gen_series, DgpSpec};
use tensor_factor::diagnostics::{loss_projection, theory_report, ReportSource};
use tensor_factor::estimators::{select_ranks, Method, ModelSpec};
use tensor_factor::experiment::{
    read_table, run_experiment, summarize, write_table, ExperimentGrid, SummaryRow,
};
use tensor_factor::io::{load_matrix, load_series, save_matrix, save_series, SeriesFormat};
use tensor_factor::postprocess::{
    display_integers, normalize_columns, varimax, DisplayMode, VarimaxOptions,
};
use tensor_factor::ratefit::{emit_rate_surface, fit_rate_model, RateRecord};
use tensor_factor::spectral::projection_onto;
use tensor_factor::{estimate, Error, Matrix, TensorSeries};

#[derive(Parser)]
#[command(
    name = "tensor-factor",
    version,
    about = "Factor loading estimation for tensor time series"
)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo grid from a TOML config.
    Simulate(SimulateArgs),
    /// Generate one series from a TOML model spec, with its true loadings.
    Generate(GenerateArgs),
    /// Estimate loading spaces from a series file.
    Estimate(EstimateArgs),
    /// Choose per-mode ranks from the singular value ladders.
    SelectRanks(SelectArgs),
    /// Fit the two-term rate model to a summary table.
    Ratefit(RatefitArgs),
    /// Signal-strength diagnostics of a series.
    Report(ReportArgs),
    /// Varimax rotation and display of a saved loading matrix.
    Rotate(RotateArgs),
}

#[derive(Args)]
struct Output {
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct Input {
    /// Series file; `.csv` is long CSV, anything else dense binary.
    #[arg(long)]
    input: PathBuf,
    /// Override the format implied by the extension (long-csv or dense-binary).
    #[arg(long)]
    format: Option<SeriesFormat>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run cells beyond the desk-scale limits on slice size and length.
    #[arg(long)]
    force: bool,
    /// Output directory; defaults to `output` in the config, then `.`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Series file name inside `--out`; its extension picks the format.
    #[arg(long, default_value = "series.csv")]
    name: String,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    input: Input,
    /// Ranks per mode, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    ranks: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    h0: usize,
    #[arg(long, default_value = "tipup")]
    method: Method,
    /// Use the iterated version of the method.
    #[arg(long)]
    iterate: bool,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    iter_tol: f64,
    /// Accept lag windows beyond T/4.
    #[arg(long)]
    allow_long_lag: bool,
    /// Subtract the time mean of every entry first.
    #[arg(long)]
    demean: bool,
    /// True loading matrices, one per mode, to score the estimate against.
    #[arg(long, value_delimiter = ',')]
    truth: Vec<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, default_value_t = 1)]
    h0: usize,
    #[arg(long, default_value = "tipup")]
    method: Method,
    #[arg(long)]
    demean: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct RatefitArgs {
    /// Summary table written by `simulate`.
    #[arg(long)]
    summary: PathBuf,
    /// Methods to fit (default: every TOPUP/TIPUP method in the table).
    #[arg(long, value_delimiter = ',')]
    method: Vec<Method>,
    /// Mode whose losses are fitted (1-based).
    #[arg(long, default_value_t = 1)]
    mode: usize,
    /// Lag window whose losses are fitted.
    #[arg(long, default_value_t = 1)]
    h0: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, value_delimiter = ',', required = true)]
    ranks: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    h0: usize,
    /// The input is the noiseless signal rather than observed data.
    #[arg(long)]
    signal: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct RotateArgs {
    /// Headerless loading matrix CSV.
    #[arg(long)]
    loadings: PathBuf,
    /// Row-normalize before rotating.
    #[arg(long)]
    kaiser: bool,
    /// Skip the varimax rotation.
    #[arg(long)]
    no_rotate: bool,
    /// Divide every column by its sum after rotating.
    #[arg(long)]
    normalize: bool,
    /// Multiply the (normalized) loadings by this factor.
    #[arg(long, conflicts_with = "percent")]
    scale: Option<f64>,
    /// Truncate the scaled loadings toward zero (needs --scale).
    #[arg(long, requires = "scale")]
    truncate: bool,
    /// Column percentages rounded to integers.
    #[arg(long)]
    percent: bool,
    #[command(flatten)]
    output: Output,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

#[derive(Serialize)]
struct Manifest<C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: C,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
    threads: usize,
    dense_binary_version: u32,
    wall_time_secs: f64,
}

struct Run {
    command: &'static str,
    out: PathBuf,
    started: Instant,
    outputs: Vec<String>,
}

impl Run {
    fn new(command: &'static str, out: &Path) -> std::result::Result<Self, Failure> {
        fs::create_dir_all(out)?;
        Ok(Run {
            command,
            out: out.to_path_buf(),
            started: Instant::now(),
            outputs: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn table<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Outcome {
        let file = fs::File::create(self.path(name))?;
        write_table(std::io::BufWriter::new(file), rows)?;
        Ok(())
    }

    fn finish<C: Serialize>(
        mut self,
        config: C,
        seed: Option<u64>,
        inputs: Vec<PathBuf>,
    ) -> Outcome {
        let path = self.path("manifest.json");
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config,
            seed,
            inputs,
            outputs: self.outputs,
            threads: rayon::current_num_threads(),
            dense_binary_version: 1,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
        };
        let text =
            serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

fn load_input(input: &Input, demean: bool) -> std::result::Result<TensorSeries, Failure> {
    let format = input
        .format
        .unwrap_or_else(|| SeriesFormat::from_path(&input.input));
    let loaded = load_series(&input.input, format)?;
    if loaded.missing() > 0 {
        log::warn!("{} unobserved cells treated as zero", loaded.missing());
    }
    Ok(if demean {
        loaded.series.demeaned()
    } else {
        loaded.series
    })
}

fn simulate(args: SimulateArgs) -> Outcome {
    let grid = ExperimentGrid::load(&args.config)?;
    let big = grid.oversized();
    if !big.is_empty() && !args.force {
        return Err(Failure::Usage(format!(
            "{} cells exceed the desk-scale limits (first: T = {}, dims {:?}); pass --force to run them",
            big.len(),
            big[0].len,
            big[0].dims
        )));
    }
    let out = args
        .out
        .clone()
        .or_else(|| grid.output.clone())
        .unwrap_or_else(|| ".".into());
    let mut run = Run::new("simulate", &out)?;
    let rows = run_experiment(&grid)?;
    let failed = rows.iter().filter(|r| r.loss.is_none()).count();
    if failed > 0 {
        log::warn!("{failed} fits failed; see the error column of replicates.csv");
    }
    run.table("replicates.csv", &rows)?;
    run.table("summary.csv", &summarize(&rows))?;
    let seed = grid.seed;
    run.finish(grid, Some(seed), vec![args.config])
}

fn generate(args: GenerateArgs) -> Outcome {
    let text = fs::read_to_string(&args.config)?;
    let spec: DgpSpec = toml::from_str(&text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let mut run = Run::new("generate", &args.output.out)?;
    let (x, truth) = gen_series(&spec)?;
    let series_path = run.path(&args.name);
    save_series(&series_path, &x, SeriesFormat::from_path(&series_path))?;
    for (k, a) in truth.loadings.iter().enumerate() {
        save_matrix(&run.path(&format!("truth_mode{}.csv", k + 1)), a)?;
    }
    let seed = spec.seed;
    run.finish(spec, Some(seed), vec![args.config])
}

#[derive(Serialize)]
struct LadderRow {
    mode: usize,
    index: usize,
    value: f64,
}

#[derive(Serialize)]
struct LossRow {
    mode: usize,
    loss: f64,
}

#[derive(Serialize)]
struct EstimateConfig {
    ranks: Vec<usize>,
    h0: usize,
    method: Method,
    max_iter: usize,
    iter_tol: f64,
    demean: bool,
    allow_long_lag: bool,
    iterations_used: usize,
}

fn estimate_cmd(args: EstimateArgs) -> Outcome {
    let method = if args.iterate {
        if args.method.base() == Method::Up {
            return Err(Failure::Usage(
                "--iterate has no effect on up; drop one of them".into(),
            ));
        }
        args.method.iterative()
    } else {
        args.method
    };
    if !args.truth.is_empty() && args.truth.len() != args.ranks.len() {
        return Err(Failure::Usage(format!(
            "{} truth files for {} modes",
            args.truth.len(),
            args.ranks.len()
        )));
    }
    let x = load_input(&args.input, args.demean)?;
    let mut run = Run::new("estimate", &args.output.out)?;
    let mut spec = ModelSpec::new(args.ranks.clone(), args.h0, method)
        .with_iterations(args.max_iter, args.iter_tol);
    if args.allow_long_lag {
        spec = spec.allowing_long_lag();
    }
    let est = estimate(&x, &spec)?;
    let mut ladder = Vec::new();
    for (k, basis) in est.bases.iter().enumerate() {
        save_matrix(&run.path(&format!("loadings_mode{}.csv", k + 1)), basis)?;
        ladder.extend(
            est.singular_ladders[k]
                .iter()
                .enumerate()
                .map(|(i, &value)| LadderRow {
                    mode: k + 1,
                    index: i + 1,
                    value,
                }),
        );
    }
    run.table("ladder.csv", &ladder)?;
    let mut inputs = vec![args.input.input.clone()];
    if !args.truth.is_empty() {
        let mut losses = Vec::new();
        for (k, path) in args.truth.iter().enumerate() {
            let a = load_matrix(path)?;
            let loss = loss_projection(&est.projections[k], &projection_onto(&a))?;
            println!("mode {} loss {loss:.3e}", k + 1);
            losses.push(LossRow { mode: k + 1, loss });
        }
        run.table("loss.csv", &losses)?;
        inputs.extend(args.truth.iter().cloned());
    }
    let config = EstimateConfig {
        ranks: args.ranks,
        h0: args.h0,
        method,
        max_iter: args.max_iter,
        iter_tol: args.iter_tol,
        demean: args.demean,
        allow_long_lag: args.allow_long_lag,
        iterations_used: est.iterations_used,
    };
    run.finish(config, None, inputs)
}

#[derive(Serialize)]
struct RankRow {
    mode: usize,
    rank: usize,
    flag: tensor_factor::estimators::RankFlag,
    ratio: f64,
}

fn select_cmd(args: SelectArgs) -> Outcome {
    let x = load_input(&args.input, args.demean)?;
    let mut run = Run::new("select-ranks", &args.output.out)?;
    let sel = select_ranks(&x, args.h0, args.method)?;
    let rows: Vec<RankRow> = (0..sel.ranks.len())
        .map(|k| RankRow {
            mode: k + 1,
            rank: sel.ranks[k],
            flag: sel.flags[k],
            ratio: sel.ratios[k],
        })
        .collect();
    for r in &rows {
        println!("mode {} rank {} ({:?})", r.mode, r.rank, r.flag);
    }
    run.table("ranks.csv", &rows)?;
    #[derive(Serialize)]
    struct Config {
        h0: usize,
        method: Method,
        demean: bool,
    }
    let config = Config {
        h0: args.h0,
        method: args.method,
        demean: args.demean,
    };
    run.finish(config, None, vec![args.input.input])
}

#[derive(Serialize)]
struct CoefficientRow {
    method: Method,
    c1: f64,
    c2: f64,
    c3: f64,
    c4: f64,
    c5: f64,
    c6: f64,
    c7: f64,
    c8: f64,
    c9: f64,
    c10: f64,
    residual_sse: f64,
    converged: bool,
    start_index: usize,
    split_identified: bool,
    records: usize,
}

#[derive(Serialize)]
struct SurfaceRow {
    method: Method,
    x: f64,
    y: f64,
    z: f64,
    count: usize,
}

fn ratefit_cmd(args: RatefitArgs) -> Outcome {
    let rows: Vec<SummaryRow> = read_table(fs::File::open(&args.summary)?)?;
    let mut methods = args.method.clone();
    if methods.is_empty() {
        for r in &rows {
            if r.method.base() != Method::Up && !methods.contains(&r.method) {
                methods.push(r.method);
            }
        }
    }
    if let Some(m) = methods.iter().find(|m| m.base() == Method::Up) {
        return Err(Failure::Usage(format!("no rate model for {m}")));
    }
    let mut run = Run::new("ratefit", &args.output.out)?;
    let mut coefs = Vec::new();
    let mut surface = Vec::new();
    for &m in &methods {
        let records = rate_records(&rows, m, args.mode, args.h0)?;
        let fit = fit_rate_model(&records, m)?;
        if !fit.converged {
            log::warn!(
                "{m}: rate fit stopped with gradient norm {:.2e}",
                fit.gradient_norm
            );
        }
        let c = fit.coefficients;
        coefs.push(CoefficientRow {
            method: m,
            c1: c[0],
            c2: c[1],
            c3: c[2],
            c4: c[3],
            c5: c[4],
            c6: c[5],
            c7: c[6],
            c8: c[7],
            c9: c[8],
            c10: c[9],
            residual_sse: fit.residual_sse,
            converged: fit.converged,
            start_index: fit.start_index,
            split_identified: fit.split_identified,
            records: records.len(),
        });
        for p in emit_rate_surface(&records, m)? {
            surface.push(SurfaceRow {
                method: m,
                x: p.x,
                y: p.y,
                z: p.z,
                count: p.count,
            });
        }
    }
    run.table("coefficients.csv", &coefs)?;
    run.table("surface.csv", &surface)?;
    #[derive(Serialize)]
    struct Config {
        methods: Vec<Method>,
        mode: usize,
        h0: usize,
    }
    let config = Config {
        methods,
        mode: args.mode,
        h0: args.h0,
    };
    run.finish(config, None, vec![args.summary])
}

/// Mean losses of one method, mode and lag window as rate records.
fn rate_records(
    rows: &[SummaryRow],
    method: Method,
    mode: usize,
    h0: usize,
) -> Result<Vec<RateRecord>, Error> {
    let mut out = Vec::new();
    for r in rows
        .iter()
        .filter(|r| r.method == method && r.mode == mode && r.h0 == h0)
    {
        let dims: Vec<f64> = r
            .dims
            .split('x')
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("dims {:?}: {e}", r.dims)))?;
        if dims.len() != 2 {
            return Err(Error::FitData(format!(
                "rate model needs matrix cells, got dims {}",
                r.dims
            )));
        }
        out.push(RateRecord {
            d1: dims[0],
            d2: dims[1],
            lambda: r.lambda,
            len: r.len as f64,
            mean_loss: r.mean,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct ReportRow {
    mode: usize,
    theta_star_norm: f64,
    theta_op_norm: f64,
    theta_trace: f64,
    lambda: f64,
    lambda_star: f64,
    tau: String,
    tau_star: String,
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn report_cmd(args: ReportArgs) -> Outcome {
    let x = load_input(&args.input, false)?;
    let mut run = Run::new("report", &args.output.out)?;
    let source = if args.signal {
        ReportSource::Signal
    } else {
        ReportSource::Empirical
    };
    let rep = theory_report(&x, &args.ranks, args.h0, source)?;
    let rows: Vec<ReportRow> = rep
        .modes
        .iter()
        .enumerate()
        .map(|(k, m)| ReportRow {
            mode: k + 1,
            theta_star_norm: m.theta_star_norm,
            theta_op_norm: m.theta_op_norm,
            theta_trace: m.theta_trace,
            lambda: m.lambda,
            lambda_star: m.lambda_star,
            tau: join(&m.tau),
            tau_star: join(&m.tau_star),
        })
        .collect();
    run.table("report.csv", &rows)?;
    #[derive(Serialize)]
    struct Autocov {
        h: usize,
        value: f64,
    }
    let ac: Vec<Autocov> = rep
        .signal_autocov
        .iter()
        .enumerate()
        .map(|(h, &value)| Autocov { h, value })
        .collect();
    run.table("autocov.csv", &ac)?;
    #[derive(Serialize)]
    struct Config {
        ranks: Vec<usize>,
        h0: usize,
        source: ReportSource,
    }
    let config = Config {
        ranks: args.ranks,
        h0: args.h0,
        source,
    };
    run.finish(config, None, vec![args.input.input])
}

fn write_int_csv(path: &Path, rows: &[Vec<i64>]) -> Outcome {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(Error::from)?;
    for row in rows {
        w.serialize(row).map_err(Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn rotate_cmd(args: RotateArgs) -> Outcome {
    let l = load_matrix(&args.loadings)?;
    let mut run = Run::new("rotate", &args.output.out)?;
    let opts = VarimaxOptions {
        kaiser: args.kaiser,
        ..VarimaxOptions::default()
    };
    let (mut m, rotation, sweeps) = if args.no_rotate {
        (l.clone(), Matrix::identity(l.ncols(), l.ncols()), 0)
    } else {
        let v = varimax(&l, &opts)?;
        if !v.converged {
            log::warn!("varimax stopped after {} sweeps", v.sweeps);
        }
        (v.loadings, v.rotation, v.sweeps)
    };
    save_matrix(&run.path("rotation.csv"), &rotation)?;
    if args.normalize {
        let (n, flagged) = normalize_columns(&m);
        for (j, f) in flagged.iter().enumerate() {
            if *f {
                log::warn!("column {} sums to zero and was left as is", j + 1);
            }
        }
        m = n;
    }
    save_matrix(&run.path("rotated.csv"), &m)?;
    let display = match (args.scale, args.truncate, args.percent) {
        (Some(s), true, _) => Some(DisplayMode::Scaled(s)),
        (Some(s), false, _) => {
            save_matrix(&run.path("scaled.csv"), &(&m * s))?;
            None
        }
        (None, _, true) => Some(DisplayMode::Percent),
        _ => None,
    };
    if let Some(mode) = display {
        let (rows, _) = display_integers(&m, mode);
        for row in &rows {
            println!(
                "{}",
                row.iter().map(|v| format!("{v:>4}")).collect::<String>()
            );
        }
        let path = run.path("display.csv");
        write_int_csv(&path, &rows)?;
    }
    #[derive(Serialize)]
    struct Config {
        rotate: bool,
        kaiser: bool,
        tol: f64,
        max_sweeps: usize,
        sweeps: usize,
        normalize: bool,
        display: Option<DisplayMode>,
        scale: Option<f64>,
    }
    let config = Config {
        rotate: !args.no_rotate,
        kaiser: args.kaiser,
        tol: opts.tol,
        max_sweeps: opts.max_sweeps,
        sweeps,
        normalize: args.normalize,
        display,
        scale: args.scale,
    };
    run.finish(config, None, vec![args.loadings])
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Generate(a) => generate(a),
        Command::Estimate(a) => estimate_cmd(a),
        Command::SelectRanks(a) => select_cmd(a),
        Command::Ratefit(a) => ratefit_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::Rotate(a) => rotate_cmd(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
