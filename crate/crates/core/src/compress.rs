//! Lossy stage: global magnitude pruning and per-layer k-means codebook
//! quantization.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{LayerTensor, ModelWeights, TensorShape};

pub const DEFAULT_MAX_ITER: usize = 50;
/// Lloyd stops once no centroid moves more than this fraction of the value range.
pub const DEFAULT_REL_TOL: f64 = 1e-6;

/// Outcome of global magnitude pruning.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneResult {
    pub gamma: f64,
    /// Smallest surviving magnitude λ.
    pub threshold: f32,
    /// Sorted flat indices of surviving weights, per layer.
    pub kept_per_layer: Vec<Vec<usize>>,
    pub pruned_count: usize,
}

impl PruneResult {
    pub fn kept_count(&self) -> usize {
        self.kept_per_layer.iter().map(Vec::len).sum()
    }
}

/// Number of weights pruned at rate `gamma` out of `n`: `floor(gamma · n)`.
pub fn pruned_count_for(gamma: f64, n: usize) -> usize {
    ((gamma * n as f64).floor() as usize).min(n)
}

/// Prunes exactly `floor(γ·N)` weights: the smallest under the order
/// `(|w|, layer index, flat index)`.
pub fn prune_global(model: &ModelWeights, gamma: f64) -> Result<PruneResult> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("pruning rate {gamma} not in [0, 1)")));
    }
    let n = model.num_params();
    // |w| bit patterns order the same way as the magnitudes themselves.
    let mut keys: Vec<(u32, u32, u32)> = Vec::with_capacity(n);
    for (li, layer) in model.layers().iter().enumerate() {
        for (i, v) in layer.values().iter().enumerate() {
            keys.push((v.abs().to_bits(), li as u32, i as u32));
        }
    }
    let pruned_count = pruned_count_for(gamma, n);
    let threshold_key = if pruned_count == 0 {
        *keys.iter().min().expect("model is non-empty")
    } else {
        *keys.select_nth_unstable(pruned_count).1
    };

    let mut kept_per_layer: Vec<Vec<usize>> = model.layers().iter().map(|l| Vec::with_capacity(l.len())).collect();
    for (li, layer) in model.layers().iter().enumerate() {
        for (i, v) in layer.values().iter().enumerate() {
            if (v.abs().to_bits(), li as u32, i as u32) >= threshold_key {
                kept_per_layer[li].push(i);
            }
        }
    }
    Ok(PruneResult { gamma, threshold: f32::from_bits(threshold_key.0), kept_per_layer, pruned_count })
}

/// Result of 1-D k-means.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// Strictly increasing; every centroid owns at least one value.
    pub centroids: Vec<f32>,
    pub assignments: Vec<u32>,
    /// Within-cluster sum of squares against the final `f32` centroids.
    pub wcss: f64,
    /// Lloyd iterations run (the I of the complexity model).
    pub iterations: usize,
    /// Objective after each assignment step, against that step's centroids.
    pub wcss_history: Vec<f64>,
}

impl KMeans {
    pub fn k_effective(&self) -> usize {
        self.centroids.len()
    }
}

/// Nearest-centroid lookup over possibly unsorted, possibly repeated centroids.
/// Equal distances go to the lower centroid index.
struct Nearest {
    sorted: Vec<(f64, usize)>,
}

impl Nearest {
    fn new(centroids: &[f64]) -> Self {
        let mut sorted: Vec<(f64, usize)> = centroids.iter().copied().zip(0..).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        sorted.dedup_by(|later, earlier| later.0 == earlier.0);
        Self { sorted }
    }

    fn find(&self, v: f64) -> usize {
        let i = self.sorted.partition_point(|&(c, _)| c < v);
        match (i.checked_sub(1).map(|j| self.sorted[j]), self.sorted.get(i).copied()) {
            (Some((lc, li)), Some((rc, ri))) => {
                let (dl, dr) = (v - lc, rc - v);
                if dl < dr || (dl == dr && li < ri) {
                    li
                } else {
                    ri
                }
            }
            (Some((_, li)), None) => li,
            (None, Some((_, ri))) => ri,
            (None, None) => unreachable!("at least one centroid"),
        }
    }
}

fn wcss_of(values: &[f64], centroids: &[f64], assignments: &[u32]) -> f64 {
    values
        .iter()
        .zip(assignments)
        .map(|(v, &a)| {
            let d = v - centroids[a as usize];
            d * d
        })
        .sum()
}

/// Linear centroid seeds: evenly spaced from min to max, or the mean when k = 1.
pub fn linear_init(values: &[f32], k: usize) -> Vec<f64> {
    let (min, max) = min_max(values);
    if k == 1 {
        return vec![values.iter().map(|&v| f64::from(v)).sum::<f64>() / values.len() as f64];
    }
    let step = (max - min) / (k - 1) as f64;
    (0..k).map(|j| if j + 1 == k { max } else { min + j as f64 * step }).collect()
}

fn min_max(values: &[f32]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(f64::from(v)), hi.max(f64::from(v)))
    })
}

/// Absolute Lloyd tolerance used when none is given.
pub fn default_tol(values: &[f32]) -> f64 {
    let (min, max) = min_max(values);
    DEFAULT_REL_TOL * (max - min)
}

/// 1-D k-means with linear initialization, or one centroid per distinct value
/// when there are at most `k` of them.
pub fn kmeans_1d(values: &[f32], k: usize, max_iter: usize, tol: f64) -> Result<KMeans> {
    if values.is_empty() || k == 0 || max_iter == 0 {
        return Err(Error::InvalidArgument("kmeans_1d needs values, k ≥ 1 and max_iter ≥ 1".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("kmeans_1d values must be finite".into()));
    }
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be ≥ 0")));
    }
    let mut distinct: Vec<f32> = values.to_vec();
    distinct.sort_by(f32::total_cmp);
    distinct.dedup_by(|a, b| a == b);
    if distinct.len() <= k {
        // Every value gets its own centroid; linear seeds could merge close values.
        return Ok(lloyd(values, distinct.iter().map(|&v| f64::from(v)).collect(), max_iter, tol));
    }
    Ok(lloyd(values, linear_init(values, k), max_iter, tol))
}

/// Lloyd iterations from the given seeds, then cleanup: centroids are rounded
/// to `f32`, sorted and deduplicated, values are reassigned to the nearest
/// rounded centroid, and centroids left without values are dropped.
pub fn lloyd(values: &[f32], init: Vec<f64>, max_iter: usize, tol: f64) -> KMeans {
    let xs: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
    let mut centroids = init;
    let k = centroids.len();
    let mut assignments = vec![0u32; xs.len()];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter {
        let nearest = Nearest::new(&centroids);
        for (a, &v) in assignments.iter_mut().zip(&xs) {
            *a = nearest.find(v) as u32;
        }
        history.push(wcss_of(&xs, &centroids, &assignments));

        // -0.0 start keeps an all-negative-zero cluster at -0.0.
        let mut sums = vec![-0.0f64; k];
        let mut counts = vec![0usize; k];
        for (&a, &v) in assignments.iter().zip(&xs) {
            sums[a as usize] += v;
            counts[a as usize] += 1;
        }
        let mut shift = 0.0f64;
        for j in 0..k {
            if counts[j] > 0 {
                let m = sums[j] / counts[j] as f64;
                shift = shift.max((m - centroids[j]).abs());
                centroids[j] = m;
            }
        }
        iterations += 1;
        if shift <= tol {
            break;
        }
    }

    let mut used = vec![false; k];
    assignments.iter().for_each(|&a| used[a as usize] = true);
    let mut rounded: Vec<f32> = (0..k).filter(|&j| used[j]).map(|j| centroids[j] as f32).collect();
    rounded.sort_by(f32::total_cmp);
    rounded.dedup();
    let wide: Vec<f64> = rounded.iter().map(|&c| f64::from(c)).collect();
    let nearest = Nearest::new(&wide);
    let provisional: Vec<usize> = xs.iter().map(|&v| nearest.find(v)).collect();
    let mut remap = vec![u32::MAX; wide.len()];
    provisional.iter().for_each(|&j| remap[j] = 0);
    let mut final_centroids = Vec::with_capacity(wide.len());
    for (j, slot) in remap.iter_mut().enumerate() {
        if *slot == 0 {
            *slot = final_centroids.len() as u32;
            final_centroids.push(rounded[j]);
        }
    }
    let assignments: Vec<u32> = provisional.iter().map(|&j| remap[j]).collect();
    let final_wide: Vec<f64> = final_centroids.iter().map(|&c| f64::from(c)).collect();
    let wcss = wcss_of(&xs, &final_wide, &assignments);

    KMeans { centroids: final_centroids, assignments, wcss, iterations, wcss_history: history }
}

/// Per-layer centroid table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Codebook {
    pub centroids: Vec<f32>,
}

impl Codebook {
    pub fn k_effective(&self) -> usize {
        self.centroids.len()
    }
}

/// Sparse, quantized form of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub layer_name: String,
    pub original_shape: TensorShape,
    pub codebook: Codebook,
    /// Strictly increasing flat indices of the surviving weights.
    pub positions: Vec<usize>,
    /// Centroid index for each position.
    pub assignments: Vec<u32>,
}

impl QuantizedLayer {
    pub fn kept_count(&self) -> usize {
        self.positions.len()
    }

    /// Checks the structural invariants that serialization and dequantization rely on.
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::Inconsistent { layer: self.layer_name.clone(), reason });
        if self.positions.len() != self.assignments.len() {
            return bad(format!("{} positions but {} assignments", self.positions.len(), self.assignments.len()));
        }
        let n = self.original_shape.numel();
        if let Some(w) = self.positions.windows(2).find(|w| w[0] >= w[1]) {
            return bad(format!("positions not strictly increasing at {} → {}", w[0], w[1]));
        }
        if let Some(&p) = self.positions.last() {
            if p >= n {
                return bad(format!("position {p} out of range for {n} elements"));
            }
        }
        let k = self.codebook.k_effective() as u32;
        if let Some(&a) = self.assignments.iter().find(|&&a| a >= k) {
            return bad(format!("assignment {a} outside codebook of {k} centroids"));
        }
        if self.codebook.centroids.iter().any(|c| !c.is_finite()) {
            return bad("non-finite centroid".into());
        }
        if self.codebook.centroids.windows(2).any(|w| w[0] >= w[1]) {
            return bad("centroids not strictly increasing".into());
        }
        if self.positions.is_empty() != self.codebook.centroids.is_empty() {
            return bad("codebook must be empty exactly when no weights are kept".into());
        }
        Ok(())
    }
}

/// Lloyd settings for [`quantize_model`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Absolute tolerance; `None` uses [`default_tol`] per layer.
    pub tol: Option<f64>,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { max_iter: DEFAULT_MAX_ITER, tol: None }
    }
}

/// Per-layer k-means bookkeeping kept alongside the quantized layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerQuantStats {
    pub wcss: f64,
    pub iterations: usize,
}

/// Layer-wise quantization of the surviving weights into at most `k` clusters.
pub fn quantize_model(model: &ModelWeights, prune: &PruneResult, k: usize, opts: &KMeansOptions) -> Result<Vec<QuantizedLayer>> {
    Ok(quantize_model_detailed(model, prune, k, opts)?.into_iter().map(|(l, _)| l).collect())
}

pub fn quantize_model_detailed(
    model: &ModelWeights,
    prune: &PruneResult,
    k: usize,
    opts: &KMeansOptions,
) -> Result<Vec<(QuantizedLayer, LayerQuantStats)>> {
    if k == 0 || opts.max_iter == 0 {
        return Err(Error::InvalidArgument("k and max_iter must be positive".into()));
    }
    if prune.kept_per_layer.len() != model.num_layers() {
        return Err(Error::ShapeMismatch("prune result does not match model layer count".into()));
    }
    model
        .layers()
        .par_iter()
        .zip(prune.kept_per_layer.par_iter())
        .map(|(layer, kept)| quantize_layer(layer, kept, k, opts))
        .collect()
}

fn quantize_layer(layer: &LayerTensor, kept: &[usize], k: usize, opts: &KMeansOptions) -> Result<(QuantizedLayer, LayerQuantStats)> {
    if kept.iter().any(|&p| p >= layer.len()) {
        return Err(Error::ShapeMismatch(format!("prune index out of range for layer {:?}", layer.name())));
    }
    let values: Vec<f32> = kept.iter().map(|&p| layer.values()[p]).collect();
    let (codebook, assignments, stats) = if values.is_empty() {
        (Codebook::default(), Vec::new(), LayerQuantStats::default())
    } else {
        let tol = opts.tol.unwrap_or_else(|| default_tol(&values));
        let km = kmeans_1d(&values, k, opts.max_iter, tol)?;
        let stats = LayerQuantStats { wcss: km.wcss, iterations: km.iterations };
        (Codebook { centroids: km.centroids }, km.assignments, stats)
    };
    Ok((
        QuantizedLayer {
            layer_name: layer.name().to_string(),
            original_shape: layer.shape().clone(),
            codebook,
            positions: kept.to_vec(),
            assignments,
        },
        stats,
    ))
}

/// Dense reconstruction: centroid values at kept positions, `0.0` elsewhere.
pub fn dequantize(layers: &[QuantizedLayer]) -> Result<ModelWeights> {
    let dense = layers
        .iter()
        .map(|q| {
            q.validate()?;
            let mut t = LayerTensor::zeros(q.layer_name.clone(), q.original_shape.clone());
            let vals = t.values_mut();
            for (&p, &a) in q.positions.iter().zip(&q.assignments) {
                vals[p] = q.codebook.centroids[a as usize];
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    ModelWeights::new(dense)
}

/// Squared error energy Σ (w − w̃)² between two models of identical structure.
pub fn compression_error_energy(original: &ModelWeights, reconstructed: &ModelWeights) -> Result<f64> {
    original.check_same_structure(reconstructed)?;
    Ok(original
        .flat_values()
        .zip(reconstructed.flat_values())
        .map(|(a, b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum())
}
