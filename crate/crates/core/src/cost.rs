//! Efficiency metrics: time-overhead ratios, the 63 % convergence round, and
//! the whole-training time ratio under a bandwidth scenario.
//!
//! Times are seconds and sizes are bits throughout; unit conversion happens
//! only in [`bits_from_model_size`] and the scenario constructors.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::sim::RunHistory;

/// Fraction of the final accuracy that defines the convergence round.
pub const TAU_FRACTION: f64 = 0.63;
/// Rounds-to-finish multiplier applied to τ in the training-time estimate.
pub const TAU_ROUNDS_FACTOR: f64 = 5.0;

/// Per-round wall or modeled times, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TimingSample {
    pub t_train: f64,
    pub t_compress: f64,
    pub t_decompress: f64,
    pub t_select: f64,
    pub t_aggregate: f64,
}

impl TimingSample {
    pub fn validate(&self) -> Result<()> {
        let all = [self.t_train, self.t_compress, self.t_decompress, self.t_select, self.t_aggregate];
        if all.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::InvalidArgument(format!("timings must be finite and ≥ 0: {self:?}")));
        }
        Ok(())
    }

    /// t_select + t_train + t_compress + t_decompress + t_aggregate.
    pub fn t_compute(&self) -> f64 {
        self.t_select + self.t_train + self.t_compress + self.t_decompress + self.t_aggregate
    }

    /// Component-wise mean of several samples.
    pub fn mean(samples: &[TimingSample]) -> TimingSample {
        let n = samples.len().max(1) as f64;
        let sum = samples.iter().fold(TimingSample::default(), |a, s| TimingSample {
            t_train: a.t_train + s.t_train,
            t_compress: a.t_compress + s.t_compress,
            t_decompress: a.t_decompress + s.t_decompress,
            t_select: a.t_select + s.t_select,
            t_aggregate: a.t_aggregate + s.t_aggregate,
        });
        TimingSample {
            t_train: sum.t_train / n,
            t_compress: sum.t_compress / n,
            t_decompress: sum.t_decompress / n,
            t_select: sum.t_select / n,
            t_aggregate: sum.t_aggregate / n,
        }
    }
}

fn ratio(num: f64, den: f64, what: &str) -> Result<f64> {
    if !(den > 0.0) {
        return Err(Error::InvalidArgument(format!("{what}: denominator must be positive, got {den}")));
    }
    Ok(num / den)
}

/// (t_train + t_compress) / t_train.
pub fn h_client(s: &TimingSample) -> Result<f64> {
    s.validate()?;
    ratio(s.t_train + s.t_compress, s.t_train, "h_client")
}

/// (t_select + t_aggregate + t_decompress) / (t_select + t_aggregate).
pub fn h_server(s: &TimingSample) -> Result<f64> {
    s.validate()?;
    ratio(s.t_select + s.t_aggregate + s.t_decompress, s.t_select + s.t_aggregate, "h_server")
}

/// t_compute / (t_select + t_train + t_aggregate).
pub fn h_compute(s: &TimingSample) -> Result<f64> {
    s.validate()?;
    ratio(s.t_compute(), s.t_select + s.t_train + s.t_aggregate, "h_compute")
}

/// Convergence round: first 1-based round reaching 63 % of the last round's accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tau {
    pub round: usize,
    /// Set when only the last round qualifies, i.e. the run may be too short.
    pub only_final_round: bool,
}

pub fn tau(accuracy_history: &[f64]) -> Result<Tau> {
    let last = *accuracy_history
        .last()
        .ok_or_else(|| Error::InvalidArgument("accuracy history is empty".into()))?;
    let threshold = TAU_FRACTION * last;
    let round = accuracy_history.iter().position(|&a| a >= threshold).expect("last entry qualifies") + 1;
    let only_final_round = round == accuracy_history.len() && accuracy_history.len() > 1;
    if only_final_round {
        log::warn!("accuracy first reaches {TAU_FRACTION} of final only in the last round; τ may be underestimated");
    }
    Ok(Tau { round, only_final_round })
}

/// Link rates for one deployment scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthScenario {
    pub name: String,
    pub download_bits_per_second: f64,
    pub upload_bits_per_second: f64,
}

impl BandwidthScenario {
    pub fn new(name: impl Into<String>, download_bits_per_second: f64, upload_bits_per_second: f64) -> Result<Self> {
        let s = Self { name: name.into(), download_bits_per_second, upload_bits_per_second };
        s.validate()?;
        Ok(s)
    }

    /// Rates in megabits per second (10⁶ bit/s).
    pub fn from_mbps(name: impl Into<String>, down_mbps: f64, up_mbps: f64) -> Result<Self> {
        Self::new(name, down_mbps * 1e6, up_mbps * 1e6)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |r: f64| r.is_finite() && r > 0.0;
        if !ok(self.download_bits_per_second) || !ok(self.upload_bits_per_second) {
            return Err(Error::InvalidArgument(format!("scenario {:?}: rates must be positive", self.name)));
        }
        Ok(())
    }

    /// 2 Mbit/s both ways (low-energy short-range radio).
    pub fn low_energy_radio() -> Self {
        Self::from_mbps("ble-2m", 2.0, 2.0).expect("valid rates")
    }

    /// 100 Mbit/s down, 50 Mbit/s up (early LTE).
    pub fn lte_cat3() -> Self {
        Self::from_mbps("lte-cat3", 100.0, 50.0).expect("valid rates")
    }
}

/// Inputs to the whole-training time ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoInputs {
    pub tau_fcp: usize,
    pub tau_baseline: usize,
    /// Per-round compute times of the compressed run.
    pub sample: TimingSample,
    pub h_compute: f64,
    pub h_comm: f64,
    /// Compressed upstream bits per round.
    pub payload_bits_up: f64,
    /// Uncompressed downstream bits per round.
    pub model_bits_down: f64,
    /// How many downstream transfers a round serializes on the link.
    pub down_multiplicity: f64,
}

/// ρ together with the per-round terms that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoBreakdown {
    pub rho: f64,
    pub t_compute: f64,
    pub t_comm_down: f64,
    pub t_comm_up: f64,
    /// 5·τ_fcp·(t_compute + t_down + t_up).
    pub t_fcp: f64,
    /// 5·τ_base·(t_compute/H_compute + t_down + t_up/H_comm).
    pub t_baseline: f64,
}

pub fn rho_fcp(inputs: &RhoInputs, scenario: &BandwidthScenario) -> Result<RhoBreakdown> {
    scenario.validate()?;
    inputs.sample.validate()?;
    let RhoInputs { tau_fcp, tau_baseline, h_compute, h_comm, payload_bits_up, model_bits_down, down_multiplicity, .. } =
        *inputs;
    let positive = |v: f64| v.is_finite() && v > 0.0;
    if tau_fcp == 0 || tau_baseline == 0 {
        return Err(Error::InvalidArgument("τ values must be ≥ 1".into()));
    }
    if !positive(h_compute) || !positive(h_comm) || !positive(down_multiplicity) {
        return Err(Error::InvalidArgument("H ratios and down multiplicity must be positive".into()));
    }
    if !(payload_bits_up >= 0.0 && model_bits_down >= 0.0) {
        return Err(Error::InvalidArgument("bit counts must be non-negative".into()));
    }
    let t_compute = inputs.sample.t_compute();
    let t_comm_up = payload_bits_up / scenario.upload_bits_per_second;
    let t_comm_down = down_multiplicity * model_bits_down / scenario.download_bits_per_second;
    let t_fcp = TAU_ROUNDS_FACTOR * tau_fcp as f64 * (t_compute + t_comm_down + t_comm_up);
    let t_baseline = TAU_ROUNDS_FACTOR * tau_baseline as f64 * (t_compute / h_compute + t_comm_down + t_comm_up / h_comm);
    let rho = ratio(t_fcp, t_baseline, "rho_fcp")?;
    Ok(RhoBreakdown { rho, t_compute, t_comm_down, t_comm_up, t_fcp, t_baseline })
}

/// Kilobyte convention for model sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SizeUnit {
    /// 1 kB = 1000 bytes.
    #[default]
    Decimal,
    /// 1 kB = 1024 bytes.
    Binary,
}

pub fn bits_from_model_size(kilobytes: f64, unit: SizeUnit) -> Result<f64> {
    if !(kilobytes > 0.0 && kilobytes.is_finite()) {
        return Err(Error::InvalidArgument(format!("model size {kilobytes} kB must be positive")));
    }
    let bytes_per_kb = match unit {
        SizeUnit::Decimal => 1000.0,
        SizeUnit::Binary => 1024.0,
    };
    Ok(kilobytes * bytes_per_kb * 8.0)
}

/// ρ for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioCost {
    pub scenario: BandwidthScenario,
    pub breakdown: RhoBreakdown,
}

/// All efficiency metrics of a compressed run against its uncompressed baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub label: String,
    pub h_comm: f64,
    pub h_client: f64,
    pub h_server: f64,
    pub h_compute: f64,
    pub tau_fcp: Tau,
    pub tau_baseline: Tau,
    pub mean_timing: TimingSample,
    pub payload_bits_up: f64,
    pub model_bits_down: f64,
    pub scenarios: Vec<ScenarioCost>,
}

impl CostReport {
    /// Compares a compressed run with a compression-disabled one.
    ///
    /// H_comm is total upstream bits over baseline upstream bits; the H_* time
    /// ratios use the compressed run's mean per-round timings.
    pub fn from_histories(
        label: impl Into<String>,
        fcp: &RunHistory,
        baseline: &RunHistory,
        scenarios: &[BandwidthScenario],
        down_multiplicity: f64,
    ) -> Result<Self> {
        let summary = |h: &RunHistory| RunSummary {
            accuracy: h.rounds.iter().map(|r| r.accuracy).collect(),
            upstream_bits: h.rounds.iter().map(|r| r.total_upstream_bits()).collect(),
            clients: h.rounds.iter().map(|r| r.selected.len() as u64).collect(),
            timings: h.rounds.iter().map(|r| r.timing).collect(),
        };
        Self::from_summaries(label, &summary(fcp), &summary(baseline), scenarios, down_multiplicity)
    }

    pub fn from_summaries(
        label: impl Into<String>,
        fcp: &RunSummary,
        baseline: &RunSummary,
        scenarios: &[BandwidthScenario],
        down_multiplicity: f64,
    ) -> Result<Self> {
        let fcp_bits: u64 = fcp.upstream_bits.iter().sum();
        let base_bits: u64 = baseline.upstream_bits.iter().sum();
        let fcp_uploads: u64 = fcp.clients.iter().sum();
        let base_uploads: u64 = baseline.clients.iter().sum();
        if base_bits == 0 || fcp_uploads == 0 || base_uploads == 0 {
            return Err(Error::InvalidArgument("runs carry no upstream traffic".into()));
        }
        let payload_bits_up = fcp_bits as f64 / fcp_uploads as f64;
        let model_bits_down = base_bits as f64 / base_uploads as f64;
        let h_comm = payload_bits_up / model_bits_down;
        let mean_timing = TimingSample::mean(&fcp.timings);
        let h_compute_v = h_compute(&mean_timing)?;
        let tau_fcp = tau(&fcp.accuracy)?;
        let tau_baseline = tau(&baseline.accuracy)?;
        let scenarios = scenarios
            .iter()
            .map(|s| {
                let inputs = RhoInputs {
                    tau_fcp: tau_fcp.round,
                    tau_baseline: tau_baseline.round,
                    sample: mean_timing,
                    h_compute: h_compute_v,
                    h_comm,
                    payload_bits_up,
                    model_bits_down,
                    down_multiplicity,
                };
                Ok(ScenarioCost { scenario: s.clone(), breakdown: rho_fcp(&inputs, s)? })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            label: label.into(),
            h_comm,
            h_client: h_client(&mean_timing)?,
            h_server: h_server(&mean_timing)?,
            h_compute: h_compute_v,
            tau_fcp,
            tau_baseline,
            mean_timing,
            payload_bits_up,
            model_bits_down,
            scenarios,
        })
    }

    pub const CSV_HEADER: &'static str =
        "label,h_comm,h_client,h_server,h_compute,tau_fcp,tau_baseline,scenario,t_compute,t_comm_down,t_comm_up,rho_fcp";

    /// One CSV row per scenario (or one row with empty scenario columns).
    pub fn csv_rows(&self) -> Vec<String> {
        let head = format!(
            "{},{},{},{},{},{},{}",
            self.label, self.h_comm, self.h_client, self.h_server, self.h_compute, self.tau_fcp.round, self.tau_baseline.round
        );
        if self.scenarios.is_empty() {
            return vec![format!("{head},,,,,")];
        }
        self.scenarios
            .iter()
            .map(|s| {
                let b = &s.breakdown;
                format!("{head},{},{},{},{},{}", s.scenario.name, b.t_compute, b.t_comm_down, b.t_comm_up, b.rho)
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[{}]", self.label);
        let _ = writeln!(out, "  H_comm     {:.4}", self.h_comm);
        let _ = writeln!(out, "  H_client   {:.4}", self.h_client);
        let _ = writeln!(out, "  H_server   {:.4}", self.h_server);
        let _ = writeln!(out, "  H_compute  {:.4}", self.h_compute);
        let flag = |t: &Tau| if t.only_final_round { " (reached only in last round)" } else { "" };
        let _ = writeln!(out, "  tau        {}{} vs baseline {}{}", self.tau_fcp.round, flag(&self.tau_fcp), self.tau_baseline.round, flag(&self.tau_baseline));
        let _ = writeln!(out, "  upload     {:.0} bits/client (raw {:.0})", self.payload_bits_up, self.model_bits_down);
        for s in &self.scenarios {
            let b = &s.breakdown;
            let _ = writeln!(
                out,
                "  rho[{}]  {:.4}  (t_compute {:.4}s, t_down {:.4}s, t_up {:.4}s)",
                s.scenario.name, b.rho, b.t_compute, b.t_comm_down, b.t_comm_up
            );
        }
        out
    }
}

/// Per-round series needed for a cost report.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSummary {
    pub accuracy: Vec<f64>,
    pub upstream_bits: Vec<u64>,
    pub clients: Vec<u64>,
    pub timings: Vec<TimingSample>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t_train: f64, t_compress: f64, t_decompress: f64, t_select: f64, t_aggregate: f64) -> TimingSample {
        TimingSample { t_train, t_compress, t_decompress, t_select, t_aggregate }
    }

    #[test]
    fn h_client_examples() {
        assert_eq!(h_client(&sample(3.0, 0.0, 1.0, 1.0, 1.0)).unwrap(), 1.0);
        assert_eq!(h_client(&sample(10.0, 1.0, 0.0, 0.0, 0.0)).unwrap(), 1.1);
        assert!(h_client(&sample(0.0, 1.0, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn h_server_examples() {
        assert_eq!(h_server(&sample(1.0, 1.0, 0.0, 0.2, 0.3)).unwrap(), 1.0);
        assert!((h_server(&sample(1.0, 0.0, 23.2, 0.1, 0.1)).unwrap() - 117.0).abs() < 1e-12);
        assert!(h_server(&sample(1.0, 0.0, 1.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn h_compute_examples() {
        assert_eq!(h_compute(&sample(2.0, 0.0, 0.0, 0.5, 0.5)).unwrap(), 1.0);
        // compress + decompress = 0.4 · (select + train + aggregate)
        assert_eq!(h_compute(&sample(4.0, 1.25, 0.75, 0.5, 0.5)).unwrap(), 1.4);
        assert!(h_compute(&sample(0.0, 1.0, 1.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn tau_examples() {
        assert_eq!(tau(&[0.10, 0.40, 0.60, 0.70, 0.72]).unwrap(), Tau { round: 3, only_final_round: false });
        assert_eq!(tau(&[0.9, 0.9, 0.9]).unwrap().round, 1);
        assert_eq!(tau(&[0.5]).unwrap(), Tau { round: 1, only_final_round: false });
        assert_eq!(tau(&[0.0, 0.1, 0.2, 0.9]).unwrap(), Tau { round: 4, only_final_round: true });
        assert!(tau(&[]).is_err());
    }

    fn neutral(tau_fcp: usize, tau_baseline: usize) -> RhoInputs {
        RhoInputs {
            tau_fcp,
            tau_baseline,
            sample: sample(1.5, 0.0, 0.0, 0.25, 0.25),
            h_compute: 1.0,
            h_comm: 1.0,
            payload_bits_up: 4e6,
            model_bits_down: 4e6,
            down_multiplicity: 1.0,
        }
    }

    #[test]
    fn rho_identity_and_tau_linearity() {
        let s = BandwidthScenario::low_energy_radio();
        assert_eq!(rho_fcp(&neutral(7, 7), &s).unwrap().rho, 1.0);
        assert_eq!(rho_fcp(&neutral(14, 7), &s).unwrap().rho, 2.0);
    }

    #[test]
    fn rho_rejects_bad_inputs() {
        let s = BandwidthScenario::lte_cat3();
        assert!(rho_fcp(&neutral(0, 7), &s).is_err());
        let mut i = neutral(1, 1);
        i.h_comm = 0.0;
        assert!(rho_fcp(&i, &s).is_err());
        assert!(BandwidthScenario::new("x", 0.0, 1.0).is_err());
    }

    #[test]
    fn rho_components() {
        let s = BandwidthScenario::from_mbps("x", 2.0, 1.0).unwrap();
        let i = RhoInputs {
            tau_fcp: 3,
            tau_baseline: 2,
            sample: sample(1.0, 0.5, 0.5, 0.0, 0.0),
            h_compute: 2.0,
            h_comm: 0.25,
            payload_bits_up: 1e6,
            model_bits_down: 4e6,
            down_multiplicity: 1.0,
        };
        let b = rho_fcp(&i, &s).unwrap();
        assert_eq!(b.t_comm_up, 1.0);
        assert_eq!(b.t_comm_down, 2.0);
        assert_eq!(b.t_fcp, 5.0 * 3.0 * (2.0 + 2.0 + 1.0));
        assert_eq!(b.t_baseline, 5.0 * 2.0 * (1.0 + 2.0 + 4.0));
        assert_eq!(b.rho, 75.0 / 70.0);
    }

    #[test]
    fn model_size_conversion() {
        assert_eq!(bits_from_model_size(274.0, SizeUnit::Decimal).unwrap(), 2_192_000.0);
        assert_eq!(bits_from_model_size(3177.0, SizeUnit::Decimal).unwrap(), 25_416_000.0);
        assert_eq!(bits_from_model_size(1.0, SizeUnit::Binary).unwrap(), 8192.0);
        assert!(bits_from_model_size(0.0, SizeUnit::Decimal).is_err());
        let ratio = 3177.0 / 274.0;
        assert!(ratio > 11.0 && ratio < 11.7);
    }
}
