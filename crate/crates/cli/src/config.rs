//! Experiment config: flat `key = value` lines, `#` comments, and repeated
//! `gamma`, `k` and `scenario` keys for the sweep.

use std::fmt::Write as _;

use fcp_core::compress::{KMeansOptions, DEFAULT_MAX_ITER};
use fcp_core::cost::BandwidthScenario;
use fcp_core::nn::TrainHyper;
use fcp_core::sim::{FLConfig, TimingMode};

use crate::CliError;

/// A bandwidth scenario as written in the config, in Mbps.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub down_mbps: f64,
    pub up_mbps: f64,
}

impl ScenarioSpec {
    pub fn to_scenario(&self) -> Result<BandwidthScenario, CliError> {
        BandwidthScenario::from_mbps(self.name.clone(), self.down_mbps, self.up_mbps).map_err(CliError::from)
    }

    /// `name,down_mbps,up_mbps`
    pub fn parse(text: &str) -> Result<Self, String> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        let [name, down, up] = parts[..] else {
            return Err(format!("expected name,down_mbps,up_mbps, got {text:?}"));
        };
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(format!("scenario name {name:?} must be non-empty without spaces"));
        }
        let rate = |s: &str| s.parse::<f64>().map_err(|_| format!("bad rate {s:?}"));
        let spec = Self { name: name.to_string(), down_mbps: rate(down)?, up_mbps: rate(up)? };
        if !(spec.down_mbps > 0.0 && spec.up_mbps > 0.0 && spec.down_mbps.is_finite() && spec.up_mbps.is_finite()) {
            return Err("rates must be positive".into());
        }
        Ok(spec)
    }

    pub fn defaults() -> Vec<Self> {
        vec![
            Self { name: "ble-2m".into(), down_mbps: 2.0, up_mbps: 2.0 },
            Self { name: "lte-cat3".into(), down_mbps: 100.0, up_mbps: 50.0 },
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub samples: usize,
    pub features: usize,
    pub classes: usize,
    pub clients: usize,
    pub fraction: f64,
    pub rounds: usize,
    pub alpha: f64,
    pub test_fraction: f64,
    pub hidden: Vec<usize>,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub momentum: f32,
    pub kmeans_max_iter: usize,
    /// `None` picks the per-layer default.
    pub kmeans_tol: Option<f64>,
    pub timing: TimingMode,
    pub seed: u64,
    pub gammas: Vec<f64>,
    pub ks: Vec<usize>,
    pub scenarios: Vec<ScenarioSpec>,
    pub down_multiplicity: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            samples: 2000,
            features: 20,
            classes: 2,
            clients: 10,
            fraction: 0.4,
            rounds: 30,
            alpha: 100.0,
            test_fraction: 0.2,
            hidden: vec![32],
            learning_rate: 0.01,
            batch_size: 16,
            local_epochs: 1,
            momentum: 0.9,
            kmeans_max_iter: DEFAULT_MAX_ITER,
            kmeans_tol: None,
            timing: TimingMode::OpCount,
            seed: 11,
            gammas: vec![0.5],
            ks: vec![32],
            scenarios: ScenarioSpec::defaults(),
            down_multiplicity: 1.0,
        }
    }
}

fn timing_name(t: TimingMode) -> &'static str {
    match t {
        TimingMode::OpCount => "opcount",
        TimingMode::WallClock => "wallclock",
    }
}

impl RunConfig {
    /// Parses config text. Sweep keys and `scenario` accumulate; when a file
    /// names any of them, the defaults for that key are dropped.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut c = RunConfig::default();
        let (mut gammas, mut ks, mut scenarios) = (Vec::new(), Vec::new(), Vec::new());
        let mut seen_scenario = false;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| CliError::Config { line: line_no, msg };
            let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
                v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
            }
            let set = || -> Result<(), String> { Ok(()) };
            let r: Result<(), String> = match key {
                "samples" => num(key, value).map(|v| c.samples = v),
                "features" => num(key, value).map(|v| c.features = v),
                "classes" => num(key, value).map(|v| c.classes = v),
                "clients" => num(key, value).map(|v| c.clients = v),
                "fraction" => num(key, value).map(|v| c.fraction = v),
                "rounds" => num(key, value).map(|v| c.rounds = v),
                "alpha" => num(key, value).map(|v| c.alpha = v),
                "test_fraction" => num(key, value).map(|v| c.test_fraction = v),
                "hidden" => {
                    if value.is_empty() {
                        c.hidden = Vec::new();
                        set()
                    } else {
                        value.split(',').map(|s| num(key, s.trim())).collect::<Result<Vec<usize>, _>>().map(|v| c.hidden = v)
                    }
                }
                "learning_rate" => num(key, value).map(|v| c.learning_rate = v),
                "batch_size" => num(key, value).map(|v| c.batch_size = v),
                "local_epochs" => num(key, value).map(|v| c.local_epochs = v),
                "momentum" => num(key, value).map(|v| c.momentum = v),
                "kmeans_max_iter" => num(key, value).map(|v| c.kmeans_max_iter = v),
                "kmeans_tol" => {
                    if value == "auto" {
                        c.kmeans_tol = None;
                        set()
                    } else {
                        num(key, value).map(|v| c.kmeans_tol = Some(v))
                    }
                }
                "timing" => match value {
                    "opcount" => {
                        c.timing = TimingMode::OpCount;
                        set()
                    }
                    "wallclock" => {
                        c.timing = TimingMode::WallClock;
                        set()
                    }
                    _ => Err(format!("timing: expected opcount or wallclock, got {value:?}")),
                },
                "seed" => num(key, value).map(|v| c.seed = v),
                "gamma" => num(key, value).map(|v| gammas.push(v)),
                "k" => num(key, value).map(|v| ks.push(v)),
                "scenario" => {
                    seen_scenario = true;
                    if value == "none" {
                        set()
                    } else {
                        ScenarioSpec::parse(value).map(|s| scenarios.push(s))
                    }
                }
                "down_multiplicity" => num(key, value).map(|v| c.down_multiplicity = v),
                _ => Err(format!("unknown key {key:?}")),
            };
            r.map_err(bad)?;
        }
        if !gammas.is_empty() {
            c.gammas = gammas;
        }
        if !ks.is_empty() {
            c.ks = ks;
        }
        if seen_scenario {
            c.scenarios = scenarios;
        }
        c.validate()?;
        Ok(c)
    }

    /// Canonical text form; `parse(print())` gives back the same config.
    pub fn print(&self) -> String {
        let mut o = String::new();
        let hidden: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        let _ = writeln!(o, "# dataset");
        let _ = writeln!(o, "samples = {}", self.samples);
        let _ = writeln!(o, "features = {}", self.features);
        let _ = writeln!(o, "classes = {}", self.classes);
        let _ = writeln!(o, "# federation");
        let _ = writeln!(o, "clients = {}", self.clients);
        let _ = writeln!(o, "fraction = {}", self.fraction);
        let _ = writeln!(o, "rounds = {}", self.rounds);
        let _ = writeln!(o, "alpha = {}", self.alpha);
        let _ = writeln!(o, "test_fraction = {}", self.test_fraction);
        let _ = writeln!(o, "# model and local training");
        let _ = writeln!(o, "hidden = {}", hidden.join(","));
        let _ = writeln!(o, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(o, "batch_size = {}", self.batch_size);
        let _ = writeln!(o, "local_epochs = {}", self.local_epochs);
        let _ = writeln!(o, "momentum = {}", self.momentum);
        let _ = writeln!(o, "# quantization");
        let _ = writeln!(o, "kmeans_max_iter = {}", self.kmeans_max_iter);
        match self.kmeans_tol {
            Some(t) => writeln!(o, "kmeans_tol = {t}"),
            None => writeln!(o, "kmeans_tol = auto"),
        }
        .ok();
        let _ = writeln!(o, "timing = {}", timing_name(self.timing));
        let _ = writeln!(o, "seed = {}", self.seed);
        let _ = writeln!(o, "# sweep");
        for g in &self.gammas {
            let _ = writeln!(o, "gamma = {g}");
        }
        for k in &self.ks {
            let _ = writeln!(o, "k = {k}");
        }
        let _ = writeln!(o, "# cost model (Mbps)");
        if self.scenarios.is_empty() {
            let _ = writeln!(o, "scenario = none");
        }
        for s in &self.scenarios {
            let _ = writeln!(o, "scenario = {},{},{}", s.name, s.down_mbps, s.up_mbps);
        }
        let _ = writeln!(o, "down_multiplicity = {}", self.down_multiplicity);
        o
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let field = |name: &'static str, msg: String| Err(CliError::Field { field: name, msg });
        if self.gammas.is_empty() || self.ks.is_empty() {
            return field("gamma", "sweep grids must be non-empty".into());
        }
        if let Some(g) = self.gammas.iter().find(|g| !(0.0..1.0).contains(*g)) {
            return field("gamma", format!("{g} not in [0, 1)"));
        }
        if let Some(k) = self.ks.iter().find(|&&k| k == 0 || k > u16::MAX as usize) {
            return field("k", format!("{k} not in [1, 65535]"));
        }
        if self.samples == 0 || self.features == 0 || self.classes < 2 {
            return field("samples", "need samples ≥ 1, features ≥ 1 and classes ≥ 2".into());
        }
        if !(self.down_multiplicity > 0.0 && self.down_multiplicity.is_finite()) {
            return field("down_multiplicity", format!("{} must be positive", self.down_multiplicity));
        }
        let mut names: Vec<&str> = self.scenarios.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return field("scenario", "scenario names must be unique".into());
        }
        self.fl_config(self.gammas[0], self.ks[0], true).validate().map_err(|e| CliError::Field { field: "config", msg: e.to_string() })
    }

    pub fn fl_config(&self, gamma: f64, k: usize, compression_enabled: bool) -> FLConfig {
        FLConfig {
            num_clients: self.clients,
            selection_fraction: self.fraction,
            rounds: self.rounds,
            gamma,
            k,
            hyper: TrainHyper {
                learning_rate: self.learning_rate,
                batch_size: self.batch_size,
                local_epochs: self.local_epochs,
                momentum: self.momentum,
                seed: 0,
            },
            alpha: self.alpha,
            hidden_dims: self.hidden.clone(),
            test_fraction: self.test_fraction,
            compression_enabled,
            kmeans: KMeansOptions { max_iter: self.kmeans_max_iter, tol: self.kmeans_tol },
            timing: self.timing,
            seed: self.seed,
        }
    }
}
