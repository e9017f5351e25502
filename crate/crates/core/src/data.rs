//! Synthetic classification data and Dirichlet client partitioning.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Expected distance between two class means, in units of the per-feature noise.
const CLASS_SEPARATION: f64 = 4.0;
/// Class means are redrawn until every pair is at least this far apart.
const MIN_SEPARATION: f64 = 0.75 * CLASS_SEPARATION;

/// Row-major feature matrix with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f32>,
    feature_dim: usize,
    labels: Vec<u32>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f32>, feature_dim: usize, labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        if feature_dim == 0 || num_classes < 2 {
            return Err(Error::InvalidArgument("feature_dim must be positive and num_classes ≥ 2".into()));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} samples of dimension {feature_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::InvalidArgument(format!("label {l} outside [0, {num_classes})")));
        }
        Ok(Self { features, feature_dim, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// Samples at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset { features, feature_dim: self.feature_dim, labels, num_classes: self.num_classes }
    }

    /// Splits off a held-out set of `round(test_fraction · n)` samples chosen by
    /// `seed`. Returns `(train, test)`, both in original sample order.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::InvalidArgument(format!("test fraction {test_fraction} not in [0, 1)")));
        }
        let n_test = (test_fraction * self.len() as f64).round() as usize;
        if n_test >= self.len() {
            return Err(Error::InvalidArgument("held-out split leaves no training data".into()));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng::rng_from_seed(seed));
        let (test, train) = idx.split_at_mut(n_test);
        test.sort_unstable();
        train.sort_unstable();
        Ok((self.subset(train), self.subset(test)))
    }
}

/// One client's local data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub dataset: Dataset,
}

impl ClientShard {
    /// Local sample count n_s.
    pub fn n_s(&self) -> usize {
        self.dataset.len()
    }
}

/// Gaussian class clusters with unit per-feature noise.
///
/// Class means are random Gaussian vectors scaled so that two means are on
/// average [`CLASS_SEPARATION`] apart; labels cycle through the classes before
/// shuffling so every class gets `n / classes` samples, ±1.
pub fn synth_dataset(num_samples: usize, feature_dim: usize, num_classes: usize, seed: u64) -> Result<Dataset> {
    if num_samples == 0 || feature_dim == 0 || num_classes < 2 {
        return Err(Error::InvalidArgument(
            "synth_dataset needs num_samples > 0, feature_dim > 0 and num_classes ≥ 2".into(),
        ));
    }
    let mut rng = rng::stream(seed, Purpose::Data, 0);
    let scale = CLASS_SEPARATION / (2.0 * feature_dim as f64).sqrt();
    let means = loop {
        let means: Vec<Vec<f64>> = (0..num_classes)
            .map(|_| (0..feature_dim).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect())
            .collect();
        let well_separated = (0..num_classes).all(|a| {
            (a + 1..num_classes).all(|b| {
                let d2: f64 = means[a].iter().zip(&means[b]).map(|(x, y)| (x - y) * (x - y)).sum();
                d2.sqrt() >= MIN_SEPARATION
            })
        });
        if well_separated {
            break means;
        }
    };

    let mut labels: Vec<u32> = (0..num_samples).map(|i| (i % num_classes) as u32).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(num_samples * feature_dim);
    for &l in &labels {
        for &m in &means[l as usize] {
            let noise: f64 = rng.sample(StandardNormal);
            features.push((m + noise) as f32);
        }
    }
    Dataset::new(features, feature_dim, labels, num_classes)
}

/// Per-class Dirichlet partition over clients.
///
/// For each class, client proportions are drawn from Dirichlet(α, …, α) via
/// normalized Gamma(α, 1) draws; the class's samples are shuffled and cut at
/// the cumulative proportions. A client left with no samples takes one from
/// the currently largest shard (lowest id on ties) until none is empty.
pub fn dirichlet_partition(dataset: &Dataset, num_clients: usize, alpha: f64, seed: u64) -> Result<Vec<ClientShard>> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot partition an empty dataset".into()));
    }
    if num_clients == 0 || num_clients > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "num_clients {num_clients} must be in [1, {}]",
            dataset.len()
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let mut rng = rng::stream(seed, Purpose::Partition, 0);
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
    for class in 0..dataset.num_classes() {
        let mut members: Vec<usize> =
            (0..dataset.len()).filter(|&i| dataset.labels[i] as usize == class).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let mut draws: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            draws.iter_mut().for_each(|d| *d /= total);
        } else {
            // Every draw underflowed: give the whole class to one client.
            let pick = rng.random_range(0..num_clients);
            draws.iter_mut().enumerate().for_each(|(i, d)| *d = if i == pick { 1.0 } else { 0.0 });
        }
        let n = members.len();
        let mut cum = 0.0;
        let mut start = 0usize;
        for (client, p) in draws.iter().enumerate() {
            cum += p;
            let end = if client + 1 == num_clients { n } else { ((cum * n as f64).floor() as usize).clamp(start, n) };
            assigned[client].extend_from_slice(&members[start..end]);
            start = end;
        }
    }

    while let Some(empty) = assigned.iter().position(Vec::is_empty) {
        let largest = (0..num_clients)
            .max_by(|&a, &b| assigned[a].len().cmp(&assigned[b].len()).then(b.cmp(&a)))
            .expect("at least one client");
        let moved = assigned[largest].pop().expect("largest shard is non-empty");
        assigned[empty].push(moved);
    }

    Ok(assigned
        .into_iter()
        .enumerate()
        .map(|(client_id, mut idx)| {
            idx.sort_unstable();
            ClientShard { client_id, dataset: dataset.subset(&idx) }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class0_fraction(shard: &ClientShard) -> f64 {
        shard.dataset.labels().iter().filter(|&&l| l == 0).count() as f64 / shard.n_s() as f64
    }

    #[test]
    fn synth_is_balanced_and_deterministic() {
        let a = synth_dataset(1000, 10, 2, 7).unwrap();
        let b = synth_dataset(1000, 10, 2, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1000);
        let zeros = a.labels().iter().filter(|&&l| l == 0).count();
        assert!((499..=501).contains(&zeros));
        assert!(a.labels().iter().all(|&l| l < 2));
        assert_ne!(a, synth_dataset(1000, 10, 2, 8).unwrap());
    }

    #[test]
    fn synth_balance_with_uneven_classes() {
        let d = synth_dataset(103, 3, 4, 1).unwrap();
        for c in 0..4u32 {
            let n = d.labels().iter().filter(|&&l| l == c).count();
            assert!((25..=26).contains(&n));
        }
    }

    #[test]
    fn partition_is_complete_and_disjoint() {
        let d = synth_dataset(500, 4, 3, 3).unwrap();
        for &alpha in &[0.05, 1.0, 100.0] {
            let shards = dirichlet_partition(&d, 17, alpha, 11).unwrap();
            assert_eq!(shards.len(), 17);
            assert!(shards.iter().all(|s| s.n_s() >= 1));
            assert_eq!(shards.iter().map(ClientShard::n_s).sum::<usize>(), 500);
        }
    }

    #[test]
    fn single_client_gets_everything() {
        let d = synth_dataset(50, 3, 2, 2).unwrap();
        let shards = dirichlet_partition(&d, 1, 1.0, 0).unwrap();
        assert_eq!(shards[0].dataset, d);
    }

    #[test]
    fn too_many_clients_rejected() {
        let d = synth_dataset(5, 3, 2, 2).unwrap();
        assert!(dirichlet_partition(&d, 6, 1.0, 0).is_err());
        assert_eq!(dirichlet_partition(&d, 5, 0.01, 0).unwrap().len(), 5);
    }

    #[test]
    fn alpha_controls_heterogeneity() {
        let d = synth_dataset(1000, 4, 2, 5).unwrap();
        let mut any_skewed = false;
        for seed in 0..20 {
            for s in dirichlet_partition(&d, 10, 100.0, seed).unwrap() {
                let f = class0_fraction(&s);
                assert!((0.35..=0.65).contains(&f), "seed {seed}: {f}");
            }
            any_skewed |= dirichlet_partition(&d, 10, 1.0, seed)
                .unwrap()
                .iter()
                .any(|s| !(0.25..=0.75).contains(&class0_fraction(s)));
        }
        assert!(any_skewed);
    }

    #[test]
    fn split_holds_out_twenty_percent() {
        let d = synth_dataset(101, 3, 2, 9).unwrap();
        let (train, test) = d.split(0.2, 4).unwrap();
        assert_eq!(test.len(), 20);
        assert_eq!(train.len(), 81);
        assert_eq!(d.split(0.2, 4).unwrap(), (train, test));
    }
}
