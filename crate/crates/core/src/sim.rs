//! Federated rounds with upstream compression and FedAvg.
//!
//! Each round selects clients, broadcasts the global model uncompressed,
//! trains every selected client locally, compresses each update (prune,
//! quantize, Huffman), decodes it on the server and averages the
//! reconstructions weighted by local sample counts.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::compress::{compression_error_energy, dequantize, prune_global, quantize_model_detailed, KMeansOptions};
use crate::cost::TimingSample;
use crate::data::{dirichlet_partition, ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::exact::{scaled_to_f64, WeightedSum};
use crate::model::ModelWeights;
use crate::nn::{evaluate, init_model, local_train_with_stats, TrainHyper};
use crate::ops;
use crate::rng::{self, derive_seed, Purpose};
use crate::wire::{deserialize, serialize, PayloadHeader};

/// Bits per uncompressed weight on the wire.
pub const RAW_BITS_PER_WEIGHT: u64 = 32;

/// Where round timings come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimingMode {
    /// Operation counts divided by a nominal throughput; reproducible.
    #[default]
    OpCount,
    /// Wall-clock measurement around each step.
    WallClock,
}

/// Federated run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct FLConfig {
    pub num_clients: usize,
    pub selection_fraction: f64,
    pub rounds: usize,
    pub gamma: f64,
    pub k: usize,
    /// `seed` is ignored; per-client training seeds derive from `seed` below.
    pub hyper: TrainHyper,
    pub alpha: f64,
    pub hidden_dims: Vec<usize>,
    pub test_fraction: f64,
    pub compression_enabled: bool,
    pub kmeans: KMeansOptions,
    pub timing: TimingMode,
    /// Root seed for split, partition, init, selection and training streams.
    pub seed: u64,
}

impl Default for FLConfig {
    fn default() -> Self {
        Self {
            num_clients: 10,
            selection_fraction: 0.4,
            rounds: 30,
            gamma: 0.5,
            k: 32,
            hyper: TrainHyper::default(),
            alpha: 100.0,
            hidden_dims: vec![16],
            test_fraction: 0.2,
            compression_enabled: true,
            kmeans: KMeansOptions::default(),
            timing: TimingMode::OpCount,
            seed: 0,
        }
    }
}

impl FLConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.num_clients == 0 {
            return bad("num_clients must be positive".into());
        }
        if !(self.selection_fraction > 0.0 && self.selection_fraction <= 1.0) {
            return bad(format!("selection fraction {} not in (0, 1]", self.selection_fraction));
        }
        if self.rounds == 0 {
            return bad("rounds must be positive".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} not in [0, 1)", self.gamma));
        }
        if self.k == 0 || self.k > u16::MAX as usize {
            return bad(format!("k {} not in [1, 65535]", self.k));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha {} must be positive", self.alpha));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!("test fraction {} not in [0, 1)", self.test_fraction));
        }
        if self.kmeans.max_iter == 0 {
            return bad("k-means max_iter must be positive".into());
        }
        self.hyper.validate()
    }

    /// |S| = max(1, round(fraction · |C|)).
    pub fn clients_per_round(&self) -> usize {
        selection_size(self.num_clients, self.selection_fraction)
    }
}

fn selection_size(total: usize, fraction: f64) -> usize {
    ((fraction * total as f64).round() as usize).clamp(1, total)
}

/// Uniform sample without replacement, deterministic per `(seed, round)`,
/// returned in ascending order.
pub fn select_clients(all: &[usize], fraction: f64, round: usize, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("selection fraction {fraction} not in (0, 1]")));
    }
    if all.is_empty() {
        return Err(Error::InvalidArgument("no clients to select from".into()));
    }
    let m = selection_size(all.len(), fraction);
    let mut pool = all.to_vec();
    let mut rng = rng::stream(seed, Purpose::Selection, round as u64);
    let (chosen, _) = pool.partial_shuffle(&mut rng, m);
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Weighted average with weights n_s / Σ n_s, computed exactly and rounded once.
pub fn fedavg(updates: &[(ModelWeights, u64)]) -> Result<ModelWeights> {
    let first = &updates.first().ok_or_else(|| Error::InvalidArgument("fedavg needs at least one update".into()))?.0;
    let mut sum = WeightedSum::zeros_like(first);
    for (m, n_s) in updates {
        if *n_s == 0 {
            return Err(Error::InvalidArgument("client sample count must be ≥ 1".into()));
        }
        sum.add(m, *n_s)?;
    }
    sum.to_model(sum.total_weight())
}

/// The two sides of the aggregation identity
/// `Σ (n_s/n) w̃_s = Σ (n_s/n) w_s + Σ (n_s/n) ε_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationPaths {
    /// fedavg of reconstructed updates.
    pub reconstructed: ModelWeights,
    /// fedavg of raw updates.
    pub raw: ModelWeights,
    /// Σ (n_s/n) ε_s per parameter.
    pub aggregate_error: Vec<f64>,
    /// Exact Σ n_s w̃_s − Σ n_s w_s equals exact Σ n_s ε_s.
    pub exact_identity_holds: bool,
    /// Rounding (Σ n_s w_s + Σ n_s ε_s)/n reproduces fedavg(reconstructed) bit for bit.
    pub rounded_identity_holds: bool,
}

/// Aggregates raw and reconstructed updates along both paths.
pub fn aggregation_paths(raw: &[(ModelWeights, u64)], reconstructed: &[ModelWeights]) -> Result<AggregationPaths> {
    if raw.len() != reconstructed.len() || raw.is_empty() {
        return Err(Error::InvalidArgument("need one reconstruction per raw update".into()));
    }
    let template = &raw[0].0;
    let mut raw_sum = WeightedSum::zeros_like(template);
    let mut rec_sum = WeightedSum::zeros_like(template);
    let mut err_sum = WeightedSum::zeros_like(template);
    for ((w, n_s), w_rec) in raw.iter().zip(reconstructed) {
        raw_sum.add(w, *n_s)?;
        rec_sum.add(w_rec, *n_s)?;
        err_sum.add_difference(w_rec, w, *n_s)?;
    }
    let n = raw_sum.total_weight();
    let exact_identity_holds = rec_sum.minus(&raw_sum)? == err_sum.sums();

    let combined: Vec<_> = raw_sum.sums().iter().zip(err_sum.sums()).map(|(a, b)| a + b).collect();
    let via_errors = scaled_to_f64(&combined, n)?;
    let reconstructed_avg = rec_sum.to_model(n)?;
    let rounded_identity_holds = reconstructed_avg
        .flat_values()
        .zip(&via_errors)
        .all(|(a, &b)| a.to_bits() == (b as f32).to_bits());

    Ok(AggregationPaths {
        reconstructed: reconstructed_avg,
        raw: raw_sum.to_model(n)?,
        aggregate_error: err_sum.to_f64(n)?,
        exact_identity_holds,
        rounded_identity_holds,
    })
}

/// Everything one round records.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    pub selected: Vec<usize>,
    /// Held-out accuracy of the aggregated model.
    pub accuracy: f64,
    /// Upstream bits sent by each selected client, in `selected` order.
    pub payload_bits: Vec<u64>,
    /// Downstream bits per selected client: the uncompressed model.
    pub downstream_bits: u64,
    /// ‖ε_s‖² per selected client.
    pub eps_energy: Vec<f64>,
    /// ‖Σ (n_s/n) ε_s‖².
    pub aggregate_eps_energy: f64,
    /// Mean mini-batch gradient variance across selected clients.
    pub grad_variance: f64,
    /// Largest k-means iteration count over clients and layers.
    pub kmeans_iterations: usize,
    pub timing: TimingSample,
}

impl RoundRecord {
    pub fn total_upstream_bits(&self) -> u64 {
        self.payload_bits.iter().sum()
    }

    pub fn mean_eps_energy(&self) -> f64 {
        self.eps_energy.iter().sum::<f64>() / self.eps_energy.len().max(1) as f64
    }

    pub fn max_eps_energy(&self) -> f64 {
        self.eps_energy.iter().copied().fold(0.0, f64::max)
    }
}

/// Client data plus the held-out evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct Federation {
    pub shards: Vec<ClientShard>,
    pub test: Dataset,
}

impl Federation {
    /// Holds out the test split, then partitions the rest across clients.
    pub fn build(config: &FLConfig, dataset: &Dataset) -> Result<Self> {
        let (train, test) = dataset.split(config.test_fraction, derive_seed(config.seed, Purpose::Split, 0))?;
        let shards = dirichlet_partition(&train, config.num_clients, config.alpha, derive_seed(config.seed, Purpose::Partition, 0))?;
        Ok(Self { shards, test })
    }
}

struct ClientResult {
    raw: ModelWeights,
    n_s: u64,
    upload: Upload,
    grad_variance: f64,
    kmeans_iterations: usize,
    t_train: f64,
    t_compress: f64,
}

enum Upload {
    Payload(Vec<u8>),
    Raw,
}

struct Clock {
    mode: TimingMode,
    start: Instant,
}

impl Clock {
    fn start(mode: TimingMode) -> Self {
        Self { mode, start: Instant::now() }
    }

    /// Wall seconds since start, or the modeled time for `ops`.
    fn stop(&self, ops: u64) -> f64 {
        match self.mode {
            TimingMode::WallClock => self.start.elapsed().as_secs_f64(),
            TimingMode::OpCount => ops::seconds(ops),
        }
    }
}

fn client_step(global: &ModelWeights, shard: &ClientShard, config: &FLConfig, round: usize) -> Result<ClientResult> {
    let hyper = TrainHyper {
        seed: derive_seed(config.seed, Purpose::Training, ((round as u64) << 32) | shard.client_id as u64),
        ..config.hyper
    };
    let n_params = global.num_params() as u64;
    let clock = Clock::start(config.timing);
    let trained = local_train_with_stats(global, shard, &hyper)?;
    let t_train = clock.stop(ops::train(trained.samples_processed, n_params));

    let clock = Clock::start(config.timing);
    let (upload, kmeans_iterations, compress_ops) = if config.compression_enabled {
        let prune = prune_global(&trained.model, config.gamma)?;
        let quantized = quantize_model_detailed(&trained.model, &prune, config.k, &config.kmeans)?;
        let (layers, stats): (Vec<_>, Vec<_>) = quantized.into_iter().unzip();
        let header = PayloadHeader { gamma: config.gamma as f32, k: config.k as u32, n_s: shard.n_s() as u64 };
        let bytes = serialize(&layers, &header)?;
        let op_count = ops::compress(n_params, &layers, &stats);
        (Upload::Payload(bytes), stats.iter().map(|s| s.iterations).max().unwrap_or(0), op_count)
    } else {
        (Upload::Raw, 0, 0)
    };
    let t_compress = clock.stop(compress_ops);

    Ok(ClientResult {
        raw: trained.model,
        n_s: shard.n_s() as u64,
        upload,
        grad_variance: trained.grad_variance,
        kmeans_iterations,
        t_train,
        t_compress,
    })
}

/// Runs one round from `global`. The returned record's accuracy is measured on
/// `federation.test`.
pub fn run_round(global: &ModelWeights, federation: &Federation, config: &FLConfig, round: usize) -> Result<(ModelWeights, RoundRecord)> {
    config.validate()?;
    let n_params = global.num_params() as u64;
    let raw_bits = n_params * RAW_BITS_PER_WEIGHT;
    let all: Vec<usize> = federation.shards.iter().map(|s| s.client_id).collect();

    let clock = Clock::start(config.timing);
    let selected = select_clients(&all, config.selection_fraction, round, config.seed)?;
    let t_select = clock.stop(ops::select(all.len() as u64));

    // Broadcast is the uncompressed global model; clients work on shared read-only state.
    let results = selected
        .par_iter()
        .map(|&id| {
            let shard = federation.shards.iter().find(|s| s.client_id == id).expect("selected from shard ids");
            client_step(global, shard, config, round)
        })
        .collect::<Result<Vec<_>>>()?;

    // Server: decode every upload, then aggregate.
    let clock = Clock::start(config.timing);
    let mut reconstructed = Vec::with_capacity(results.len());
    let mut payload_bits = Vec::with_capacity(results.len());
    let mut decompress_ops = 0u64;
    for r in &results {
        match &r.upload {
            Upload::Payload(bytes) => {
                let decoded = deserialize(bytes)?;
                decompress_ops += ops::decompress(n_params, &decoded.layers);
                let dense = dequantize(&decoded.layers)?;
                dense.check_same_structure(&r.raw)?;
                payload_bits.push(bytes.len() as u64 * 8);
                reconstructed.push(dense);
            }
            Upload::Raw => {
                payload_bits.push(raw_bits);
                reconstructed.push(r.raw.clone());
            }
        }
    }
    let t_decompress = clock.stop(decompress_ops);

    let clock = Clock::start(config.timing);
    let weighted: Vec<(ModelWeights, u64)> = reconstructed.iter().cloned().zip(results.iter().map(|r| r.n_s)).collect();
    let new_global = fedavg(&weighted)?;
    let t_aggregate = clock.stop(ops::aggregate(results.len() as u64, n_params));

    let eps_energy = results
        .iter()
        .zip(&reconstructed)
        .map(|(r, rec)| compression_error_energy(&r.raw, rec))
        .collect::<Result<Vec<_>>>()?;
    let mut err_sum = WeightedSum::zeros_like(global);
    for (r, rec) in results.iter().zip(&reconstructed) {
        err_sum.add_difference(rec, &r.raw, r.n_s)?;
    }
    let n_total: u64 = results.iter().map(|r| r.n_s).sum();
    let aggregate_eps_energy = err_sum.to_f64(n_total)?.iter().map(|e| e * e).sum();

    let accuracy = evaluate(&new_global, &federation.test)?;
    let count = results.len() as f64;
    let record = RoundRecord {
        round,
        selected,
        accuracy,
        payload_bits,
        downstream_bits: raw_bits,
        eps_energy,
        aggregate_eps_energy,
        grad_variance: results.iter().map(|r| r.grad_variance).sum::<f64>() / count,
        kmeans_iterations: results.iter().map(|r| r.kmeans_iterations).max().unwrap_or(0),
        timing: TimingSample {
            t_train: results.iter().map(|r| r.t_train).sum::<f64>() / count,
            t_compress: results.iter().map(|r| r.t_compress).sum::<f64>() / count,
            t_decompress,
            t_select,
            t_aggregate,
        },
    };
    Ok((new_global, record))
}

/// A complete run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory {
    pub config: FLConfig,
    pub rounds: Vec<RoundRecord>,
    pub final_model: ModelWeights,
}

pub const HISTORY_CSV_HEADER: &str =
    "round,accuracy,total_upstream_bits,mean_eps_energy,aggregate_eps_energy,t_train,t_compress,t_decompress,t_select,t_aggregate";

impl RunHistory {
    pub fn accuracies(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.accuracy).collect()
    }

    pub fn final_accuracy(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.accuracy)
    }

    /// One line per round under [`HISTORY_CSV_HEADER`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_CSV_HEADER);
        out.push('\n');
        for r in &self.rounds {
            let t = &r.timing;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.round,
                r.accuracy,
                r.total_upstream_bits(),
                r.mean_eps_energy(),
                r.aggregate_eps_energy,
                t.t_train,
                t.t_compress,
                t.t_decompress,
                t.t_select,
                t.t_aggregate
            );
        }
        out
    }
}

/// Runs `config.rounds` rounds from a freshly initialized model.
pub fn run_training(config: &FLConfig, dataset: &Dataset) -> Result<RunHistory> {
    config.validate()?;
    let federation = Federation::build(config, dataset)?;
    let mut global = init_model(
        dataset.feature_dim(),
        &config.hidden_dims,
        dataset.num_classes(),
        derive_seed(config.seed, Purpose::Init, 0),
    )?;
    let mut rounds = Vec::with_capacity(config.rounds);
    for round in 1..=config.rounds {
        let (next, record) = run_round(&global, &federation, config, round)?;
        log::debug!("round {round}: accuracy {:.4}, upstream {} bits", record.accuracy, record.total_upstream_bits());
        global = next;
        rounds.push(record);
    }
    Ok(RunHistory { config: config.clone(), rounds, final_model: global })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;
    use crate::model::{LayerTensor, TensorShape};

    fn scalar(v: f32) -> ModelWeights {
        ModelWeights::new(vec![LayerTensor::new("x", TensorShape::new(vec![1]).unwrap(), vec![v]).unwrap()]).unwrap()
    }

    #[test]
    fn selection_sizes() {
        let all: Vec<usize> = (0..10).collect();
        assert_eq!(select_clients(&all, 1.0, 3, 1).unwrap(), all);
        assert_eq!(select_clients(&all, 0.4, 3, 1).unwrap().len(), 4);
        assert_eq!(select_clients(&all, 0.01, 3, 1).unwrap().len(), 1);
        assert_eq!(select_clients(&all, 0.4, 3, 1).unwrap(), select_clients(&all, 0.4, 3, 1).unwrap());
        assert!(select_clients(&all, 0.0, 3, 1).is_err());
        let distinct: std::collections::HashSet<_> = (0..20).map(|r| select_clients(&all, 0.4, r, 1).unwrap()).collect();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn fedavg_examples() {
        let w = ModelWeights::new(vec![
            LayerTensor::new("a", TensorShape::new(vec![3]).unwrap(), vec![1.0, -2.5, 0.3]).unwrap(),
        ])
        .unwrap();
        assert!(fedavg(&[(w.clone(), 5)]).unwrap().bit_eq(&w));
        let neg = ModelWeights::new(vec![
            LayerTensor::new("a", TensorShape::new(vec![3]).unwrap(), vec![-1.0, 2.5, -0.3]).unwrap(),
        ])
        .unwrap();
        assert!(fedavg(&[(w.clone(), 2), (neg, 2)]).unwrap().flat_values().all(|v| v == 0.0));
        assert_eq!(fedavg(&[(scalar(0.0), 1), (scalar(4.0), 3)]).unwrap().layers()[0].values(), &[3.0]);
        assert!(fedavg(&[(w.clone(), 1), (w.clone(), 1), (w.clone(), 7)]).unwrap().bit_eq(&w));
        assert!(fedavg(&[(w, 1), (scalar(1.0), 1)]).is_err());
        assert!(fedavg(&[]).is_err());
    }

    fn small_config() -> FLConfig {
        FLConfig {
            num_clients: 5,
            selection_fraction: 0.6,
            rounds: 3,
            gamma: 0.5,
            k: 8,
            hyper: TrainHyper { learning_rate: 0.05, batch_size: 8, local_epochs: 1, momentum: 0.0, seed: 0 },
            hidden_dims: vec![6],
            seed: 3,
            ..FLConfig::default()
        }
    }

    #[test]
    fn uncompressed_round_is_plain_fedavg() {
        let data = synth_dataset(200, 5, 2, 1).unwrap();
        let config = FLConfig { compression_enabled: false, ..small_config() };
        let fed = Federation::build(&config, &data).unwrap();
        let global = init_model(5, &[6], 2, 4).unwrap();
        let (next, rec) = run_round(&global, &fed, &config, 1).unwrap();

        let updates: Vec<_> = rec
            .selected
            .iter()
            .map(|&id| {
                let shard = &fed.shards[id];
                let (r, _) = (client_step(&global, shard, &config, 1).unwrap(), ());
                (r.raw, shard.n_s() as u64)
            })
            .collect();
        assert!(next.bit_eq(&fedavg(&updates).unwrap()));
        assert!(rec.eps_energy.iter().all(|&e| e == 0.0));
        assert!(rec.payload_bits.iter().all(|&b| b == global.num_params() as u64 * 32));
        assert_eq!(rec.downstream_bits, global.num_params() as u64 * 32);
    }

    #[test]
    fn lossless_settings_match_uncompressed_round() {
        let data = synth_dataset(200, 5, 2, 1).unwrap();
        let lossless = FLConfig { gamma: 0.0, k: 4096, ..small_config() };
        let raw = FLConfig { compression_enabled: false, ..lossless.clone() };
        let fed = Federation::build(&lossless, &data).unwrap();
        let global = init_model(5, &[6], 2, 4).unwrap();
        let (a, ra) = run_round(&global, &fed, &lossless, 2).unwrap();
        let (b, _) = run_round(&global, &fed, &raw, 2).unwrap();
        assert!(a.bit_eq(&b));
        assert_eq!(ra.aggregate_eps_energy, 0.0);
    }

    #[test]
    fn training_is_reproducible() {
        let data = synth_dataset(200, 5, 2, 1).unwrap();
        let a = run_training(&small_config(), &data).unwrap();
        let b = run_training(&small_config(), &data).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.rounds.len(), 3);
        assert_eq!(a.to_csv().lines().count(), 4);
        assert!(a.rounds.iter().all(|r| r.payload_bits.iter().all(|&b| b > 0) && r.selected.len() == 3));
    }

    #[test]
    fn single_round_run_matches_run_round() {
        let data = synth_dataset(200, 5, 2, 1).unwrap();
        let config = FLConfig { rounds: 1, ..small_config() };
        let h = run_training(&config, &data).unwrap();
        let fed = Federation::build(&config, &data).unwrap();
        let global = init_model(5, &config.hidden_dims, 2, derive_seed(config.seed, Purpose::Init, 0)).unwrap();
        let (m, rec) = run_round(&global, &fed, &config, 1).unwrap();
        assert!(h.final_model.bit_eq(&m));
        assert_eq!(h.rounds[0], rec);
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(FLConfig { selection_fraction: 0.0, ..small_config() }.validate().is_err());
        assert!(FLConfig { gamma: 1.0, ..small_config() }.validate().is_err());
        assert!(FLConfig { rounds: 0, ..small_config() }.validate().is_err());
        assert_eq!(FLConfig::default().clients_per_round(), 4);
    }
}
