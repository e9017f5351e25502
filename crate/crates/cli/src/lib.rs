//! `fcp` command implementations.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use fcp_core::compress::{dequantize, prune_global, quantize_model, KMeansOptions};
use fcp_core::cost::{CostReport, RunSummary, TimingSample};
use fcp_core::data::synth_dataset;
use fcp_core::rng::{derive_seed, Purpose};
use fcp_core::sim::{run_training, RunHistory, HISTORY_CSV_HEADER};
use fcp_core::wire::{deserialize, serialize, size_report, PayloadHeader};
use fcp_core::ModelWeights;

use config::{RunConfig, ScenarioSpec};

/// Name of the normalized config written next to simulation outputs.
pub const SAVED_CONFIG: &str = "config.conf";
pub const BASELINE_CSV: &str = "baseline.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("config field {field}: {msg}")]
    Field { field: &'static str, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: fcp_core::Error },
    #[error("{path}: line {line}: {msg}")]
    Csv { path: PathBuf, line: usize, msg: String },
    #[error("{0}")]
    Core(#[from] fcp_core::Error),
}

impl CliError {
    /// Short machine-readable category used in the error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config { .. } | CliError::Field { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::Format { .. } | CliError::Csv { .. } => "format",
            CliError::Core(fcp_core::Error::NonFiniteLoss { .. }) => "runtime",
            CliError::Core(_) => "invalid",
        }
    }

    /// 1 for runtime failures, 2 for invalid input.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Core(fcp_core::Error::NonFiniteLoss { .. }) => 1,
            _ => 2,
        }
    }

    /// `error: <kind>: <message>` on one line.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error: {}: {}", self.kind(), msg)
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "fcp", version, about = "Prune, quantize and Huffman-code model updates; simulate federated training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compress an FCPW model file into an FCPM payload.
    Compress {
        input: PathBuf,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        /// Local sample count recorded in the payload header.
        #[arg(long, default_value_t = 1)]
        n_s: u64,
    },
    /// Decode an FCPM payload back into a dense FCPW model.
    Decompress {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the baseline and every (gamma, k) cell of a config.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "fcp-results")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Replaces the config's scenarios: name,down_mbps,up_mbps (repeatable).
        #[arg(long, value_parser = ScenarioSpec::parse)]
        scenario: Vec<ScenarioSpec>,
    },
    /// Recompute cost reports from a finished simulation directory.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Config to use instead of the one saved in the directory.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = ScenarioSpec::parse)]
        scenario: Vec<ScenarioSpec>,
    },
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| CliError::Io { path: path.into(), source })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|source| CliError::Io { path: path.into(), source })
}

/// Runs a parsed command; returns what it printed to stdout.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Compress { input, gamma, k, out, n_s } => compress(&input, gamma, k, n_s, &out),
        Command::Decompress { input, out } => decompress(&input, &out),
        Command::Simulate { config, out, seed, scenario } => {
            let mut c = match config {
                Some(p) => RunConfig::parse(&read_text(&p)?)?,
                None => RunConfig::default(),
            };
            if let Some(s) = seed {
                c.seed = s;
            }
            if !scenario.is_empty() {
                c.scenarios = scenario;
                c.validate()?;
            }
            simulate(&c, &out)
        }
        Command::Report { out, config, scenario } => {
            let path = config.unwrap_or_else(|| out.join(SAVED_CONFIG));
            let mut c = RunConfig::parse(&read_text(&path)?)?;
            if !scenario.is_empty() {
                c.scenarios = scenario;
                c.validate()?;
            }
            report(&c, &out)
        }
    }
}

pub fn compress(input: &Path, gamma: f64, k: usize, n_s: u64, out: &Path) -> Result<String> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(CliError::Usage(format!("--gamma {gamma} not in [0, 1)")));
    }
    if k == 0 || k > u16::MAX as usize {
        return Err(CliError::Usage(format!("--k {k} not in [1, 65535]")));
    }
    let model = ModelWeights::from_bytes(&read(input)?).map_err(|source| CliError::Format { path: input.into(), source })?;
    let prune = prune_global(&model, gamma)?;
    let layers = quantize_model(&model, &prune, k, &KMeansOptions::default())?;
    let bytes = serialize(&layers, &PayloadHeader { gamma: gamma as f32, k: k as u32, n_s })?;
    let r = size_report(&layers, 32)?;
    write(out, &bytes)?;
    log::info!("wrote {} bytes to {}", bytes.len(), out.display());
    let mut s = String::new();
    let _ = writeln!(s, "parameters  {}", r.num_params);
    let _ = writeln!(s, "kept        {}", r.total_kept());
    let _ = writeln!(s, "B0          {} bits", r.b0);
    let _ = writeln!(s, "B_pq        {:.0} bits", r.b_pq);
    let _ = writeln!(s, "B_pqh       {} bits", r.b_pqh);
    let _ = writeln!(s, "file        {} bits ({} header)", bytes.len() * 8, r.header_bits);
    let _ = writeln!(s, "H_comm      {:.6}", r.h_comm);
    Ok(s)
}

pub fn decompress(input: &Path, out: &Path) -> Result<String> {
    let decoded = deserialize(&read(input)?).map_err(|source| CliError::Format { path: input.into(), source })?;
    let model = dequantize(&decoded.layers)?;
    write(out, model.to_bytes())?;
    Ok(format!(
        "decoded {} layers, {} parameters (gamma {}, k {}, n_s {})\n",
        model.num_layers(),
        model.num_params(),
        decoded.header.gamma,
        decoded.header.k,
        decoded.header.n_s
    ))
}

/// File name for one grid cell's history.
pub fn run_file(gamma: f64, k: usize) -> String {
    format!("run_g{gamma}_k{k}.csv")
}

fn grid_table(c: &RunConfig, cell: impl Fn(usize, usize) -> String) -> String {
    let mut s = String::from("k\\gamma");
    for g in &c.gammas {
        let _ = write!(s, ",{g}");
    }
    s.push('\n');
    for (ki, k) in c.ks.iter().enumerate() {
        let _ = write!(s, "{k}");
        for gi in 0..c.gammas.len() {
            let _ = write!(s, ",{}", cell(ki, gi));
        }
        s.push('\n');
    }
    s
}

fn summary_of(h: &RunHistory) -> RunSummary {
    RunSummary {
        accuracy: h.rounds.iter().map(|r| r.accuracy).collect(),
        upstream_bits: h.rounds.iter().map(|r| r.total_upstream_bits()).collect(),
        clients: h.rounds.iter().map(|r| r.selected.len() as u64).collect(),
        timings: h.rounds.iter().map(|r| r.timing).collect(),
    }
}

fn cost_outputs(c: &RunConfig, base: &RunSummary, cells: &[RunSummary], out: &Path) -> Result<String> {
    let scenarios = c.scenarios.iter().map(ScenarioSpec::to_scenario).collect::<Result<Vec<_>>>()?;
    let mut csv = format!("{}\n", CostReport::CSV_HEADER);
    let mut text = String::new();
    let mut i = 0;
    for k in &c.ks {
        for g in &c.gammas {
            let r = CostReport::from_summaries(format!("g{g}_k{k}"), &cells[i], base, &scenarios, c.down_multiplicity)?;
            for row in r.csv_rows() {
                csv.push_str(&row);
                csv.push('\n');
            }
            text.push_str(&r.to_text());
            i += 1;
        }
    }
    write(&out.join("cost_report.csv"), &csv)?;
    write(&out.join("cost_report.txt"), &text)?;
    Ok(text)
}

pub fn simulate(c: &RunConfig, out: &Path) -> Result<String> {
    c.validate()?;
    fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.into(), source })?;
    write(&out.join(SAVED_CONFIG), c.print())?;
    let data = synth_dataset(c.samples, c.features, c.classes, derive_seed(c.seed, Purpose::Data, 0))?;

    log::info!("baseline run");
    let base = run_training(&c.fl_config(c.gammas[0], c.ks[0], false), &data)?;
    write(&out.join(BASELINE_CSV), base.to_csv())?;
    let base_bits: u64 = base.rounds.iter().map(|r| r.total_upstream_bits()).sum();

    let mut cells = Vec::new();
    for &k in &c.ks {
        for &g in &c.gammas {
            log::info!("run gamma={g} k={k}");
            let h = run_training(&c.fl_config(g, k, true), &data)?;
            write(&out.join(run_file(g, k)), h.to_csv())?;
            cells.push(h);
        }
    }
    let n_g = c.gammas.len();
    let accuracy = grid_table(c, |ki, gi| cells[ki * n_g + gi].final_accuracy().to_string());
    let ratio = grid_table(c, |ki, gi| {
        let bits: u64 = cells[ki * n_g + gi].rounds.iter().map(|r| r.total_upstream_bits()).sum();
        (bits as f64 / base_bits as f64).to_string()
    });
    write(&out.join("accuracy_table.csv"), &accuracy)?;
    write(&out.join("ratio_table.csv"), &ratio)?;

    let summaries: Vec<RunSummary> = cells.iter().map(summary_of).collect();
    let costs = cost_outputs(c, &summary_of(&base), &summaries, out)?;
    Ok(format!(
        "baseline final accuracy {}\n\nfinal accuracy (k rows, gamma columns)\n{accuracy}\nH_comm (k rows, gamma columns)\n{ratio}\n{costs}",
        base.final_accuracy()
    ))
}

/// Reads a history CSV back into the series a cost report needs.
pub fn read_history_csv(path: &Path, clients_per_round: u64) -> Result<RunSummary> {
    let text = read_text(path)?;
    let bad = |line: usize, msg: String| CliError::Csv { path: path.into(), line, msg };
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers().map_err(|e| bad(1, e.to_string()))?.iter().map(String::from).collect();
    if header.join(",") != HISTORY_CSV_HEADER {
        return Err(bad(1, format!("unexpected header {:?}", header.join(","))));
    }
    let mut s = RunSummary::default();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| bad(line, e.to_string()))?;
        let f = |j: usize| rec[j].parse::<f64>().map_err(|_| bad(line, format!("column {} is not a number", header[j])));
        s.accuracy.push(f(1)?);
        s.upstream_bits.push(rec[2].parse().map_err(|_| bad(line, "total_upstream_bits is not an integer".into()))?);
        s.clients.push(clients_per_round);
        s.timings.push(TimingSample { t_train: f(5)?, t_compress: f(6)?, t_decompress: f(7)?, t_select: f(8)?, t_aggregate: f(9)? });
    }
    if s.accuracy.is_empty() {
        return Err(bad(2, "no rounds".into()));
    }
    Ok(s)
}

pub fn report(c: &RunConfig, out: &Path) -> Result<String> {
    let per_round = c.fl_config(c.gammas[0], c.ks[0], true).clients_per_round() as u64;
    let base = read_history_csv(&out.join(BASELINE_CSV), per_round)?;
    let mut cells = Vec::new();
    for &k in &c.ks {
        for &g in &c.gammas {
            cells.push(read_history_csv(&out.join(run_file(g, k)), per_round)?);
        }
    }
    cost_outputs(c, &base, &cells, out)
}
