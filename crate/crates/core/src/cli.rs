//! Command-line front end: argument parsing, CSV/JSON formats and the four commands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bands::{confidence_bands, ScbConfig};
use crate::design::Dataset;
use crate::error::GacmError;
use crate::family::Family;
use crate::select::{select_model, PathPoint, SelectConfig, SelectionResult};
use crate::simlab::{gen_example1_with, run_benchmark, BandSupport, BenchConfig, ExampleConfig, TruthSpec};

#[derive(Debug, Parser)]
#[command(name = "gacm", version, about = "Sparse additive coefficient models with bootstrap confidence bands")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "GACM_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a logistic interaction dataset.
    Simulate(SimulateArgs),
    /// Select interaction columns by group lasso then adaptive group lasso.
    Select(SelectArgs),
    /// Two-step estimates and simultaneous confidence bands for selected columns.
    Scb(ScbArgs),
    /// Replicated selection and coverage benchmark.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with the command's configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub common: Common,
    /// Input CSV with columns y, x1..xd, t1..tp.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub family: Option<Family>,
}

#[derive(Debug, Args)]
pub struct ScbArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Selection report (default: OUT/selection.json).
    #[arg(long)]
    pub selection: Option<PathBuf>,
    #[arg(long)]
    pub family: Option<Family>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Bootstrap replications B.
    #[arg(long)]
    pub boot: Option<usize>,
    /// Grid size L (bands use L + 1 points).
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub boot: Option<usize>,
    #[arg(long)]
    pub grid: Option<usize>,
    /// Skip the two-step fits and bands.
    #[arg(long)]
    pub no_bands: bool,
    /// Skip the per-column screening baseline.
    #[arg(long)]
    pub no_screening: bool,
    /// Build bands on the true signal columns instead of the selected ones.
    #[arg(long)]
    pub truth_support: bool,
}

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Schema(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Fit(#[from] GacmError),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Fit(GacmError::Input(_) | GacmError::DegenerateCovariate { .. }) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// What produced an output file; embedded verbatim in every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub data: Option<String>,
    pub config: Value,
}

impl RunConfig {
    fn new<T: Serialize>(command: &str, seed: u64, data: Option<&Path>, config: &T) -> Result<Self, CliError> {
        Ok(Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            data: data.map(|p| p.display().to_string()),
            config: serde_json::to_value(config).map_err(|e| CliError::Other(e.to_string()))?,
        })
    }

    fn header_line(&self) -> String {
        format!("# {}", serde_json::to_string(self).expect("run config serializes"))
    }
}

fn load_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", p.display())))
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Other(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn finish_csv(path: &Path, w: csv::Writer<BufWriter<File>>) -> Result<(), CliError> {
    w.into_inner()
        .map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })?
        .flush()
        .map_err(io_err(path))
}

fn csv_writer(path: &Path, run: &RunConfig) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    let mut f = create(path)?;
    writeln!(f, "{}", run.header_line()).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(f))
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Read a `y, x1..xd, t1..tp` CSV; lines starting with `#` are ignored.
pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Schema(format!("{}: unreadable header: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.first().map(String::as_str) != Some("y") {
        return Err(CliError::Schema(format!(
            "first column must be `y`, found `{}`",
            header.first().map_or("", |s| s.as_str())
        )));
    }
    let (mut d, mut p) = (0, 0);
    for name in &header[1..] {
        if p == 0 && *name == format!("x{}", d + 1) {
            d += 1;
        } else if *name == format!("t{}", p + 1) {
            p += 1;
        } else {
            return Err(CliError::Schema(format!(
                "unexpected column `{name}`; expected `x{}` or `t{}`",
                d + 1,
                p + 1
            )));
        }
    }
    if d == 0 || p == 0 {
        return Err(CliError::Schema("need at least one `x` and one `t` column".into()));
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Schema(format!("row {}: {e}", row + 1)))?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                CliError::Schema(format!("column `{}` row {}: invalid value `{field}`", header[j], row + 1))
            })?;
            cols[j].push(v);
        }
    }
    let mut it = cols.into_iter();
    let y = it.next().expect("y column");
    let x: Vec<Vec<f64>> = it.by_ref().take(d).collect();
    let t: Vec<Vec<f64>> = it.collect();
    Ok(Dataset::from_raw(y, x, t, header[1..=d].to_vec(), header[d + 1..].to_vec())?)
}

fn write_dataset(path: &Path, ds: &Dataset, run: &RunConfig) -> Result<(), CliError> {
    let mut w = csv_writer(path, run)?;
    let mut head = vec!["y".to_string()];
    head.extend(ds.x_names().iter().cloned());
    head.extend(ds.t_names().iter().cloned());
    w.write_record(&head).map_err(csv_err(path))?;
    let mut row = Vec::with_capacity(head.len());
    for i in 0..ds.n() {
        row.clear();
        row.push(ds.y()[i].to_string());
        row.extend((0..ds.d()).map(|k| ds.x_col(k)[i].to_string()));
        row.extend((0..ds.p()).map(|l| ds.t_col(l)[i].to_string()));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    finish_csv(path, w)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TruthFile {
    pub run: RunConfig,
    pub truth: TruthSpec,
}

pub fn read_truth(path: &Path) -> Result<TruthFile, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mut cfg: ExampleConfig = load_config(args.common.config.as_deref())?;
    cfg.n = args.n.unwrap_or(cfg.n);
    cfg.p = args.p.unwrap_or(cfg.p);
    let seed = args.common.seed;
    let (ds, truth) = gen_example1_with(&cfg, seed)?;
    let run = RunConfig::new("simulate", seed, None, &cfg)?;
    prepare_out(&args.common.out)?;
    write_dataset(&args.common.out.join("data.csv"), &ds, &run)?;
    write_json(&args.common.out.join("truth.json"), &TruthFile { run, truth })
}

/// One path point as reported in `selection.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub lambda: f64,
    pub ebic: f64,
    pub loss: f64,
    pub s_star: usize,
    pub converged: bool,
    pub selected: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub choice: Option<usize>,
    pub path: Vec<PathSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub run: RunConfig,
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub n_interior: usize,
    /// Selected interaction columns by name.
    pub selected: Vec<String>,
    pub empty: bool,
    pub stage1: StageReport,
    /// Adaptive weights; `null` marks an excluded column.
    pub weights: Vec<Option<f64>>,
    pub stage2: StageReport,
}

fn stage_report(ds: &Dataset, res: &SelectionResult, path: &[PathPoint], choice: Option<usize>) -> StageReport {
    StageReport {
        choice,
        path: path
            .iter()
            .map(|pt| PathSummary {
                lambda: pt.lambda,
                ebic: pt.ebic,
                loss: pt.loss,
                s_star: pt.s_star,
                converged: pt.report.converged,
                selected: pt.selected.iter().map(|&g| ds.t_names()[res.design.groups[g]].clone()).collect(),
            })
            .collect(),
    }
}

pub fn cmd_select(args: &SelectArgs) -> Result<(), CliError> {
    let mut cfg: SelectConfig = load_config(args.common.config.as_deref())?;
    if let Some(f) = args.family {
        cfg.family = f;
    }
    cfg.validate()?;
    let ds = read_dataset(&args.data)?;
    let res = select_model(&ds, &cfg)?;
    let run = RunConfig::new("select", args.common.seed, Some(&args.data), &cfg)?;
    let report = SelectionReport {
        n: ds.n(),
        d: ds.d(),
        p: ds.p(),
        n_interior: res.n_interior,
        selected: res.selected.iter().map(|&l| ds.t_names()[l].clone()).collect(),
        empty: res.empty,
        stage1: stage_report(&ds, &res, &res.stage1_path, Some(res.stage1_choice)),
        weights: res.weights.iter().map(|w| w.is_finite().then_some(*w)).collect(),
        stage2: stage_report(&ds, &res, &res.stage2_path, res.stage2_choice),
        run,
    };
    prepare_out(&args.common.out)?;
    write_json(&args.common.out.join("selection.json"), &report)
}

pub fn read_selection(path: &Path) -> Result<SelectionReport, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
struct BandRow {
    grid: f64,
    center: f64,
    sd: f64,
    lower: f64,
    upper: f64,
    smoothed_center: f64,
    smoothed_sd: f64,
    smoothed_lower: f64,
    smoothed_upper: f64,
}

#[derive(Debug, Serialize)]
struct ScbCurveSummary {
    column: String,
    covariate: String,
    file: String,
    n_interior: usize,
    threshold: f64,
}

#[derive(Debug, Serialize)]
struct ScbSummary {
    run: RunConfig,
    selection: String,
    boot_requested: usize,
    boot_failed: usize,
    curves: Vec<ScbCurveSummary>,
}

pub fn cmd_scb(args: &ScbArgs) -> Result<(), CliError> {
    let mut cfg: ScbConfig = load_config(args.common.config.as_deref())?;
    if let Some(f) = args.family {
        cfg.twostep.family = f;
    }
    cfg.alpha = args.alpha.unwrap_or(cfg.alpha);
    cfg.boot = args.boot.unwrap_or(cfg.boot);
    cfg.grid = args.grid.unwrap_or(cfg.grid);
    let sel_path = args.selection.clone().unwrap_or_else(|| args.common.out.join("selection.json"));
    let report = read_selection(&sel_path)?;
    let ds = read_dataset(&args.data)?;
    let mut selected = Vec::with_capacity(report.selected.len());
    for name in &report.selected {
        let l = ds
            .t_names()
            .iter()
            .position(|t| t == name)
            .ok_or_else(|| CliError::Schema(format!("selected column `{name}` is not in the data")))?;
        selected.push(l);
    }
    if selected.is_empty() {
        return Err(CliError::Fit(GacmError::NothingSelected));
    }
    let seed = args.common.seed;
    let res = confidence_bands(&ds, &selected, &cfg, seed)?;
    let run = RunConfig::new("scb", seed, Some(&args.data), &cfg)?;
    prepare_out(&args.common.out)?;
    let mut curves = Vec::with_capacity(res.curves.len());
    for cb in &res.curves {
        let name = format!("band_{}_{}.csv", cb.group + 1, cb.k + 1);
        let path = args.common.out.join(&name);
        let scale = ds.rescale_params()[cb.k];
        let mut w = csv_writer(&path, &run)?;
        let (u, s) = (&cb.unsmoothed, &cb.smoothed);
        for j in 0..res.grid.len() {
            w.serialize(BandRow {
                grid: scale.inverse(res.grid[j]),
                center: u.center[j],
                sd: u.sd[j],
                lower: u.lower[j],
                upper: u.upper[j],
                smoothed_center: s.center[j],
                smoothed_sd: s.sd[j],
                smoothed_lower: s.lower[j],
                smoothed_upper: s.upper[j],
            })
            .map_err(csv_err(&path))?;
        }
        finish_csv(&path, w)?;
        curves.push(ScbCurveSummary {
            column: ds.t_names()[cb.group].clone(),
            covariate: ds.x_names()[cb.k].clone(),
            file: name,
            n_interior: cb.n_interior,
            threshold: u.threshold,
        });
    }
    let summary = ScbSummary {
        run,
        selection: sel_path.display().to_string(),
        boot_requested: res.boot_requested,
        boot_failed: res.boot_failed,
        curves,
    };
    write_json(&args.common.out.join("scb.json"), &summary)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BenchFile {
    pub run: RunConfig,
    pub result: crate::simlab::BenchResult,
}

pub fn cmd_bench(args: &BenchArgs) -> Result<(), CliError> {
    let mut cfg: BenchConfig = load_config(args.common.config.as_deref())?;
    cfg.seed = args.common.seed;
    cfg.reps = args.reps.unwrap_or(cfg.reps);
    cfg.example.n = args.n.unwrap_or(cfg.example.n);
    cfg.example.p = args.p.unwrap_or(cfg.example.p);
    cfg.scb.alpha = args.alpha.unwrap_or(cfg.scb.alpha);
    cfg.scb.boot = args.boot.unwrap_or(cfg.scb.boot);
    cfg.scb.grid = args.grid.unwrap_or(cfg.scb.grid);
    cfg.bands &= !args.no_bands;
    cfg.screening &= !args.no_screening;
    if args.truth_support {
        cfg.band_support = BandSupport::Truth;
    }
    let result = run_benchmark(&cfg)?;
    let run = RunConfig::new("bench", cfg.seed, None, &cfg)?;
    let out = &args.common.out;
    prepare_out(out)?;
    for (name, rows) in [("table1.csv", 1), ("table2.csv", 2)] {
        let path = out.join(name);
        let mut w = csv_writer(&path, &run)?;
        if rows == 1 {
            for r in &result.table1 {
                w.serialize(r).map_err(csv_err(&path))?;
            }
        } else {
            for r in &result.table2 {
                w.serialize(r).map_err(csv_err(&path))?;
            }
        }
        finish_csv(&path, w)?;
    }
    write_json(&out.join("bench.json"), &BenchFile { run, result })
}

/// Run a parsed command line inside a pool of the requested size.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Schema("--threads must be >= 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| CliError::Other(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Select(a) => cmd_select(a),
        Command::Scb(a) => cmd_scb(a),
        Command::Bench(a) => cmd_bench(a),
    })
}
