use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use tcvae::metrics::{gaussian_mmd, signature_mmd, sliced_aw1, sliced_w1, stylized_stats, Bandwidth, MetricReport, SlicedAwConfig};
use tcvae::path_data::{self, load_series_csv, log_returns, read_paths_csv, write_paths_csv};
use tcvae::simulators::{simulate_bs, simulate_heston, simulate_pdv4};
use tcvae::tcvae::{conditional_windows, extend_path, history_csv, train, TcVae, TrainData, TrainState};
use tcvae::PathSet;

use crate::checkpoint;
use crate::config::{Config, DataFormat, METRICS, SIMULATORS};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "tcvae", version, about = "Simulate, train, generate and evaluate financial path models")]
pub struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate paths from a market model into a wide CSV.
    Simulate(SimulateArgs),
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Sample paths from a checkpoint.
    Generate(GenerateArgs),
    /// Extend a price history with conditionally generated blocks.
    Extend(ExtendArgs),
    /// Distances between two path files.
    Evaluate(EvaluateArgs),
    /// Return statistics of a price series.
    Stylized(StylizedArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// bs | heston | pdv4
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub n_paths: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Simulator name or CSV file; overrides `data.source`.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Condition value for a conditional model.
    #[arg(long)]
    pub cond: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ExtendArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV with the price history.
    #[arg(long)]
    pub history: PathBuf,
    #[arg(long)]
    pub column: Option<String>,
    /// Use only the last `tail` prices of the history.
    #[arg(long)]
    pub tail: Option<usize>,
    #[arg(long)]
    pub blocks: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub fake: PathBuf,
    /// Comma-separated subset of swd,mmd,sigmmd,saw.
    #[arg(long)]
    pub metrics: Option<String>,
    #[arg(long)]
    pub sw_projections: Option<usize>,
    #[arg(long)]
    pub sig_level: Option<usize>,
    #[arg(long)]
    pub saw_len: Option<usize>,
    #[arg(long)]
    pub saw_slices: Option<usize>,
    #[arg(long)]
    pub saw_samples: Option<usize>,
    #[arg(long)]
    pub saw_clusters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report prefix; `.json` and `.csv` are appended.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct StylizedArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub column: Option<String>,
    #[arg(long)]
    pub max_lag: Option<usize>,
    /// Report prefix; `.json` and `.csv` are appended.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&mut cfg, a),
        Command::Train(a) => cmd_train(&mut cfg, a),
        Command::Generate(a) => cmd_generate(&mut cfg, a),
        Command::Extend(a) => cmd_extend(&mut cfg, a),
        Command::Evaluate(a) => cmd_evaluate(&mut cfg, a),
        Command::Stylized(a) => cmd_stylized(&mut cfg, a),
    }
}

fn out_path(cfg: &Config, flag: Option<PathBuf>, default: &str) -> CliResult<PathBuf> {
    let p = flag.unwrap_or_else(|| cfg.out_dir.join(default));
    if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(p)
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn envelope(command: &str, cfg: &Config, args: &impl Serialize, report: serde_json::Value) -> serde_json::Value {
    json!({ "command": command, "config": cfg, "args": args, "report": report })
}

fn require_file(p: &Path) -> CliResult<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("input file `{}` does not exist", p.display())))
    }
}

pub fn simulate(cfg: &Config, model: &str, n_paths: usize, seed: u64) -> CliResult<PathSet> {
    let s = &cfg.simulate;
    Ok(match model {
        "bs" => simulate_bs(&s.bs, n_paths, seed)?,
        "heston" => simulate_heston(&s.heston, n_paths, seed)?,
        "pdv4" => simulate_pdv4(&s.pdv4, n_paths, seed)?,
        other => {
            return Err(CliError::Usage(format!("unknown simulator `{other}` (expected one of {})", SIMULATORS.join(", "))))
        }
    })
}

fn cmd_simulate(cfg: &mut Config, a: SimulateArgs) -> CliResult<()> {
    if let Some(m) = &a.model {
        cfg.simulate.model = m.clone();
    }
    if let Some(n) = a.n_paths {
        cfg.simulate.n_paths = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let paths = simulate(cfg, &cfg.simulate.model, cfg.simulate.n_paths, cfg.seed)?;
    let out = out_path(cfg, a.out.clone(), "paths.csv")?;
    write_paths_csv(&paths, &out)?;
    let report = json!({ "n_paths": paths.n_paths, "n_steps": paths.n_steps, "dim": paths.dim, "dt": paths.dt });
    write_json(&out.with_extension("json"), &envelope("simulate", cfg, &a, report))
}

/// Training paths and optional conditions as described by `cfg.data`.
pub fn training_data(cfg: &Config) -> CliResult<(PathSet, Option<Vec<Vec<f64>>>)> {
    let d = &cfg.data;
    let scheme = d.normalization.into();
    if cfg.data_is_simulated() {
        let mut raw = simulate(cfg, &d.source, d.n_paths, cfg.seed)?;
        if raw.dim > cfg.model.d {
            raw = raw.channel(0);
        }
        return Ok((path_data::normalize(&raw, scheme)?, None));
    }
    let src = Path::new(&d.source);
    match d.format {
        DataFormat::Paths => {
            if cfg.model.cond_dim > 0 {
                return Err(CliError::Usage("a conditional model needs `data.format = \"series\"`".into()));
            }
            Ok((path_data::normalize(&read_paths_csv(src, d.dt)?, scheme)?, None))
        }
        DataFormat::Series => {
            let (series, _) = load_series_csv(src, &d.column)?;
            let window = d.window.unwrap_or(cfg.model.t_len);
            if cfg.model.cond_dim > 0 {
                let (paths, conds) = conditional_windows(&series, window, &d.condition, d.condition.truncation, d.dt)?;
                Ok((paths, Some(conds)))
            } else {
                let w = path_data::make_windows(&series, window, d.stride, d.dt)?;
                Ok((path_data::normalize(&w, scheme)?, None))
            }
        }
    }
}

fn cmd_train(cfg: &mut Config, a: TrainArgs) -> CliResult<()> {
    if let Some(src) = &a.data {
        cfg.data.source = src.clone();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let (paths, conds) = training_data(cfg)?;
    if paths.n_steps != cfg.model.t_len || paths.dim != cfg.model.d {
        return Err(CliError::Usage(format!(
            "data paths are {}x{} (T x d), config model expects {}x{}",
            paths.n_steps, paths.dim, cfg.model.t_len, cfg.model.d
        )));
    }
    let tcfg = cfg.train_config();
    let (mut model, mut state) = match &a.resume {
        Some(dir) => {
            let (m, st, _) = checkpoint::load(dir)?;
            if m.cfg != cfg.model_config() {
                return Err(CliError::Usage("checkpoint model differs from the config model section".into()));
            }
            let st = st.ok_or_else(|| CliError::Usage("checkpoint has no training state to resume".into()))?;
            (m, st)
        }
        None => {
            let m = TcVae::new(cfg.model_config(), cfg.train_seed())?;
            let st = TrainState::new(&m, &tcfg);
            (m, st)
        }
    };
    let out = out_path(cfg, a.out.clone(), "checkpoint")?;
    fs::create_dir_all(&out)?;
    let data = TrainData { paths: &paths, conds: conds.as_deref() };
    if let Err(e) = train(&mut model, data, &tcfg, &mut state) {
        let err: CliError = e.into();
        if matches!(err, CliError::Numerical(_)) {
            let diag = json!({ "error": err.to_string(), "history": state.history, "config": cfg });
            write_json(&out.join("diagnostics.json"), &diag)?;
            fs::write(out.join("loss_history.csv"), history_csv(&state.history))?;
        }
        return Err(err);
    }
    let echo = json!({ "config": cfg, "args": &a });
    checkpoint::save(&out, &model, Some(&state), echo)?;
    fs::write(out.join("loss_history.csv"), history_csv(&state.history))?;
    Ok(())
}

fn cmd_generate(cfg: &mut Config, a: GenerateArgs) -> CliResult<()> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let (model, _, manifest) = checkpoint::load(&a.checkpoint)?;
    let dt = cfg.data.dt;
    let paths = match (model.is_conditional(), a.cond) {
        (true, Some(c)) => model.generate_conditional(&[c], a.n, cfg.seed, dt)?,
        (false, None) => model.generate(a.n, cfg.seed, dt)?,
        (true, None) => return Err(CliError::Usage("conditional checkpoint needs --cond".into())),
        (false, Some(_)) => return Err(CliError::Usage("--cond given for an unconditional checkpoint".into())),
    };
    let out = out_path(cfg, a.out.clone(), "generated.csv")?;
    write_paths_csv(&paths, &out)?;
    let report = json!({ "n_paths": paths.n_paths, "n_steps": paths.n_steps, "dim": paths.dim, "checkpoint_history_digest": manifest.history_digest });
    write_json(&out.with_extension("json"), &envelope("generate", cfg, &a, report))
}

fn cmd_extend(cfg: &mut Config, a: ExtendArgs) -> CliResult<()> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(c) = &a.column {
        cfg.data.column = c.clone();
    }
    require_file(&a.history)?;
    let (model, _, _) = checkpoint::load(&a.checkpoint)?;
    let (series, _) = load_series_csv(&a.history, &cfg.data.column)?;
    let start = a.tail.map_or(0, |t| series.len().saturating_sub(t));
    let history = &series[start..];
    let path = extend_path(&model, history, a.blocks, cfg.seed, &cfg.data.condition, cfg.data.dt)?;
    let out = out_path(cfg, a.out.clone(), "extended.csv")?;
    let mut csv = String::from("t,price\n");
    for (t, p) in path.iter().enumerate() {
        csv.push_str(&format!("{t},{p:e}\n"));
    }
    fs::write(&out, csv)?;
    let report = json!({ "history_len": history.len(), "extended_len": path.len() });
    write_json(&out.with_extension("json"), &envelope("extend", cfg, &a, report))
}

fn parse_metrics(s: &str) -> CliResult<Vec<String>> {
    let list: Vec<String> = s.split(',').map(|m| m.trim().to_string()).filter(|m| !m.is_empty()).collect();
    if let Some(bad) = list.iter().find(|m| !METRICS.contains(&m.as_str())) {
        return Err(CliError::Usage(format!("unknown metric `{bad}` (expected a subset of {})", METRICS.join(","))));
    }
    if list.is_empty() {
        return Err(CliError::Usage("empty metric list".into()));
    }
    Ok(list)
}

/// Runs the configured metric battery on two path sets.
pub fn evaluate(cfg: &Config, real: &PathSet, fake: &PathSet) -> CliResult<MetricReport> {
    let e = &cfg.eval;
    let mut r = MetricReport::default();
    for m in &e.metrics {
        match m.as_str() {
            "swd" => {
                r.scalar("swd", sliced_w1(real, fake, e.sw_projections, cfg.seed)?);
                r.echo("sw_projections", e.sw_projections);
            }
            "mmd" => {
                let bw = e.mmd_bandwidth.map_or(Bandwidth::Median, Bandwidth::Fixed);
                r.scalar("mmd", gaussian_mmd(real, fake, bw)?);
                r.echo("mmd_bandwidth", e.mmd_bandwidth.map_or("median".to_string(), |h| h.to_string()));
            }
            "sigmmd" => {
                r.scalar("sigmmd", signature_mmd(real, fake, e.sig_level)?);
                r.echo("sig_level", e.sig_level);
            }
            "saw" => {
                let sc = SlicedAwConfig {
                    n_len: e.saw_len,
                    n_slice: e.saw_slices,
                    n_sample: e.saw_samples,
                    clusters_per_time: e.saw_clusters,
                };
                let (mean, std) = sliced_aw1(real, fake, &sc, cfg.seed)?;
                r.scalar("saw", mean);
                r.scalar("saw_std", std);
                r.echo("saw_len", e.saw_len);
                r.echo("saw_slices", e.saw_slices);
                r.echo("saw_samples", e.saw_samples);
                r.echo("saw_clusters", e.saw_clusters.map_or("sqrt_n".to_string(), |k| k.to_string()));
            }
            other => return Err(CliError::Usage(format!("unknown metric `{other}`"))),
        }
    }
    r.echo("seed", cfg.seed);
    if !r.all_finite() {
        return Err(CliError::Numerical("metric evaluation produced non-finite values".into()));
    }
    Ok(r)
}

fn cmd_evaluate(cfg: &mut Config, a: EvaluateArgs) -> CliResult<()> {
    let e = &mut cfg.eval;
    if let Some(m) = &a.metrics {
        e.metrics = parse_metrics(m)?;
    }
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { e.$field = v; } )* };
    }
    set!(sw_projections, sig_level, saw_len, saw_slices, saw_samples);
    if a.saw_clusters.is_some() {
        e.saw_clusters = a.saw_clusters;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    require_file(&a.real)?;
    require_file(&a.fake)?;
    let real = read_paths_csv(&a.real, cfg.data.dt)?;
    let fake = read_paths_csv(&a.fake, cfg.data.dt)?;
    let report = evaluate(cfg, &real, &fake)?;
    let prefix = out_path(cfg, a.out.clone(), "evaluate")?;
    let mut csv = String::from("metric,value\n");
    for (k, v) in &report.scalars {
        csv.push_str(&format!("{k},{v:e}\n"));
    }
    fs::write(with_suffix(&prefix, "csv"), csv)?;
    write_json(&with_suffix(&prefix, "json"), &envelope("evaluate", cfg, &a, serde_json::to_value(&report)?))
}

fn cmd_stylized(cfg: &mut Config, a: StylizedArgs) -> CliResult<()> {
    if let Some(c) = &a.column {
        cfg.data.column = c.clone();
    }
    if let Some(l) = a.max_lag {
        cfg.eval.max_lag = l;
    }
    require_file(&a.input)?;
    let (series, _) = load_series_csv(&a.input, &cfg.data.column)?;
    if series.iter().any(|p| !(*p > 0.0)) {
        return Err(CliError::Usage("prices must be positive to take log returns".into()));
    }
    let st = stylized_stats(&log_returns(&series), cfg.eval.max_lag)?;
    let prefix = out_path(cfg, a.out.clone(), "stylized")?;
    let mut csv = String::from("lag,acf_r,acf_r2,acf_abs\n");
    for k in 0..st.acf_r.len() {
        csv.push_str(&format!("{},{:e},{:e},{:e}\n", k + 1, st.acf_r[k], st.acf_r2[k], st.acf_abs[k]));
    }
    fs::write(with_suffix(&prefix, "csv"), csv)?;
    write_json(&with_suffix(&prefix, "json"), &envelope("stylized", cfg, &a, serde_json::to_value(&st)?))
}
