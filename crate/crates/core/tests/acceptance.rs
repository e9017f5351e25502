//! End-to-end acceptance suite. Runs every criterion, prints one line each and
//! exits non-zero if any fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use fcp_core::compress::{dequantize, kmeans_1d, prune_global, quantize_model, KMeansOptions, DEFAULT_MAX_ITER};
use fcp_core::cost::{
    bits_from_model_size, h_client, h_compute, h_server, rho_fcp, tau, BandwidthScenario, RhoInputs, SizeUnit,
    TimingSample,
};
use fcp_core::data::synth_dataset;
use fcp_core::huffman::{encoded_bits, entropy, HuffmanTable, SymbolFreq};
use fcp_core::nn::TrainHyper;
use fcp_core::sim::{aggregation_paths, run_training, FLConfig, RunHistory};
use fcp_core::wire::{deserialize, serialize, size_report, PayloadHeader, HEADER_BITS};
use fcp_core::{LayerTensor, ModelWeights, TensorShape};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_model(rng: &mut ChaCha8Rng) -> ModelWeights {
    let total = 10f64.powf(rng.random_range(1.0..5.0)).round() as usize;
    let n_layers = rng.random_range(1..=6usize).min(total);
    let mut cuts: Vec<usize> = (0..n_layers - 1).map(|_| rng.random_range(1..total)).collect();
    cuts.sort_unstable();
    cuts.dedup();
    cuts.push(total);
    let scale = 10f64.powf(rng.random_range(-3.0..0.5));
    let gridded = rng.random_bool(0.1);
    let normal = Normal::new(0.0, scale).unwrap();
    let mut prev = 0;
    let mut layers = Vec::new();
    for (i, &c) in cuts.iter().enumerate() {
        let n = c - prev;
        prev = c;
        let dims = match (2..=n).find(|d| n % d == 0 && rng.random_bool(0.5)) {
            Some(d) if d < n => vec![d, n / d],
            _ => vec![n],
        };
        let values = (0..n)
            .map(|_| {
                let v: f64 = normal.sample(rng);
                if gridded {
                    ((v / scale * 4.0).round() * scale / 4.0) as f32
                } else {
                    v as f32
                }
            })
            .collect();
        layers.push(LayerTensor::new(format!("layer{i}"), TensorShape::new(dims).unwrap(), values).unwrap());
    }
    ModelWeights::new(layers).unwrap()
}

const GAMMAS_1: [f64; 5] = [0.0, 0.3, 0.5, 0.9, 0.95];
const KS_1: [usize; 3] = [4, 32, 256];

/// Criteria 1 and 2 share the same 200 × 15 cases.
fn codec_cases() -> (Outcome, Outcome) {
    let models: Vec<ModelWeights> = (0..200u64).map(|i| random_model(&mut ChaCha8Rng::seed_from_u64(1000 + i))).collect();
    let results: Vec<(Result<(), String>, Result<(), String>)> = models
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, m)| {
            GAMMAS_1.iter().flat_map(move |&g| KS_1.iter().map(move |&k| (i, m, g, k)))
        })
        .map(|(i, m, g, k)| {
            let tag = format!("model {i}, gamma {g}, k {k}");
            let prune = prune_global(m, g).unwrap();
            let layers = quantize_model(m, &prune, k, &KMeansOptions::default()).unwrap();
            let direct = dequantize(&layers).unwrap();
            let bytes = serialize(&layers, &PayloadHeader { gamma: g as f32, k: k as u32, n_s: 1 }).unwrap();
            let lossless = match deserialize(&bytes) {
                Ok(d) => {
                    let via_wire = dequantize(&d.layers).unwrap();
                    check(d.layers == layers && via_wire.bit_eq(&direct), format!("{tag}: round-trip differs"))
                }
                Err(e) => Err(format!("{tag}: {e}")),
            };
            let report = size_report(&layers, 32).unwrap();
            let measured = bytes.len() as u64 * 8 - HEADER_BITS;
            let identity = check(
                report.b_pqh == measured,
                format!("{tag}: B_pqh {} vs measured {measured}", report.b_pqh),
            );
            (lossless, identity)
        })
        .collect();
    let n = results.len();
    let first_err = |sel: fn(&(Result<(), String>, Result<(), String>)) -> &Result<(), String>| {
        results.iter().map(sel).find_map(|r| r.clone().err())
    };
    let c1 = match first_err(|r| &r.0) {
        None => Ok(format!("{n} cases bit-exact")),
        Some(e) => Err(e),
    };
    let c2 = match first_err(|r| &r.1) {
        None => Ok(format!("{n} cases, B_pqh = 8·bytes − {HEADER_BITS}")),
        Some(e) => Err(e),
    };
    (c1, c2)
}

/// Smallest Σ countᵢ·lenᵢ over length vectors with Kraft sum ≤ 1.
fn exhaustive_min_cost(counts_desc: &[u64]) -> u64 {
    let n = counts_desc.len();
    if n == 1 {
        return counts_desc[0];
    }
    // An optimal assignment pairs descending counts with non-decreasing lengths,
    // and no optimal code needs a length above n − 1.
    fn rec(counts: &[u64], i: usize, min_len: u32, max_len: u32, kraft: f64, cost: u64, best: &mut u64) {
        let left = (counts.len() - i) as f64;
        if kraft + left * (-(max_len as f64)).exp2() > 1.0 {
            return;
        }
        if i == counts.len() {
            *best = (*best).min(cost);
            return;
        }
        for l in min_len..=max_len {
            rec(counts, i + 1, l, max_len, kraft + (-(l as f64)).exp2(), cost + counts[i] * l as u64, best);
        }
    }
    let mut best = u64::MAX;
    rec(counts_desc, 0, 1, n as u32 - 1, 0.0, 0, &mut best);
    best
}

fn huffman_oracle() -> Outcome {
    let mut multisets = Vec::new();
    fn gen(cur: &mut Vec<u64>, max_count: u64, out: &mut Vec<Vec<u64>>) {
        if !cur.is_empty() {
            out.push(cur.clone());
        }
        if cur.len() == 8 {
            return;
        }
        for c in (1..=max_count).rev() {
            cur.push(c);
            gen(cur, c, out);
            cur.pop();
        }
    }
    gen(&mut Vec::new(), 8, &mut multisets);
    let failures: Vec<String> = multisets
        .par_iter()
        .filter_map(|counts| {
            let freqs: Vec<SymbolFreq> =
                counts.iter().enumerate().map(|(s, &c)| SymbolFreq { symbol: s as u64, count: c }).collect();
            let table = HuffmanTable::build(&freqs).ok()?;
            let bits = encoded_bits(&table, &freqs).ok()?;
            let best = exhaustive_min_cost(counts);
            if bits != best {
                return Some(format!("{counts:?}: huffman {bits} bits vs optimum {best}"));
            }
            let total: u64 = counts.iter().sum();
            let avg = bits as f64 / total as f64;
            let h = entropy(&freqs);
            let upper_ok = if counts.len() == 1 { avg == 1.0 } else { avg < h + 1.0 };
            if !(h <= avg + 1e-12 && upper_ok) {
                return Some(format!("{counts:?}: entropy sandwich fails, H={h}, avg={avg}"));
            }
            None
        })
        .collect();
    match failures.first() {
        None => Ok(format!("{} multisets optimal, sandwich holds (single symbol: avg = 1)", multisets.len())),
        Some(e) => Err(e.clone()),
    }
}

fn exhaustive_wcss(xs: &[f64], k: usize) -> f64 {
    let n = xs.len();
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    loop {
        let mut sums = vec![0.0; k];
        let mut cnt = vec![0usize; k];
        for (&l, &x) in labels.iter().zip(xs) {
            sums[l] += x;
            cnt[l] += 1;
        }
        let w: f64 = labels
            .iter()
            .zip(xs)
            .map(|(&l, &x)| {
                let m = sums[l] / cnt[l] as f64;
                (x - m) * (x - m)
            })
            .sum();
        best = best.min(w);
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

fn kmeans_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut near_opt = 0;
    let mut monotone = 0;
    let mut first_bad = None;
    const CASES: usize = 500;
    for case in 0..CASES {
        let n = rng.random_range(1..=8usize);
        let k = rng.random_range(1..=3usize);
        let values: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let xs: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
        let km = kmeans_1d(&values, k, DEFAULT_MAX_ITER, 0.0).unwrap();
        let opt = exhaustive_wcss(&xs, k);
        if km.wcss <= opt * 1.0000001 + 1e-15 {
            near_opt += 1;
        }
        // Allow only evaluation rounding between successive objective values.
        if km.wcss_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-300) {
            monotone += 1;
        } else if first_bad.is_none() {
            first_bad = Some(format!("case {case}: history {:?}", km.wcss_history));
        }
    }
    let frac = near_opt as f64 / CASES as f64;
    let msg = format!("{near_opt}/{CASES} within 1e-7 of optimum, {monotone}/{CASES} monotone");
    check(frac >= 0.95, format!("{msg}: optimality rate below 95%"))?;
    check(monotone == CASES, format!("{msg}: {}", first_bad.unwrap_or_default()))?;
    Ok(msg)
}

/// Gaussian-initialized MLP with 779,868 weights.
fn model_780k() -> ModelWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(780);
    let mut layer = |name: &str, dims: Vec<usize>, fan_in: usize| {
        let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).unwrap();
        let n: usize = dims.iter().product();
        let values = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
        LayerTensor::new(name, TensorShape::new(dims).unwrap(), values).unwrap()
    };
    let layers = vec![
        layer("fc0.weight", vec![3000, 250], 3000),
        layer("fc0.bias", vec![250], 3000),
        layer("fc1.weight", vec![250, 118], 250),
        layer("fc1.bias", vec![118], 250),
    ];
    ModelWeights::new(layers).unwrap()
}

const GAMMAS_5: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95];
const KS_5: [usize; 7] = [4, 8, 16, 32, 64, 128, 256];

fn compression_sweep(model: &ModelWeights) -> Outcome {
    let cells: Vec<(usize, usize)> = (0..KS_5.len()).flat_map(|ki| (0..GAMMAS_5.len()).map(move |gi| (ki, gi))).collect();
    let ratios: Vec<f64> = cells
        .par_iter()
        .map(|&(ki, gi)| {
            let prune = prune_global(model, GAMMAS_5[gi]).unwrap();
            let layers = quantize_model(model, &prune, KS_5[ki], &KMeansOptions::default()).unwrap();
            size_report(&layers, 32).unwrap().h_comm
        })
        .collect();
    let at = |ki: usize, gi: usize| ratios[ki * GAMMAS_5.len() + gi];
    let anchor = at(3, 4);
    for ki in 0..KS_5.len() {
        let row: Vec<String> = (0..GAMMAS_5.len()).map(|gi| format!("{:.3}", at(ki, gi))).collect();
        println!("    k={:<3} {}", KS_5[ki], row.join(" "));
    }
    check((0.06..=0.12).contains(&anchor), format!("H_comm(0.5, 32) = {anchor:.4} outside [0.06, 0.12]"))?;
    for ki in 0..KS_5.len() {
        for gi in 1..GAMMAS_5.len() {
            check(
                at(ki, gi) < at(ki, gi - 1),
                format!("not decreasing in gamma at k={}, gamma={}", KS_5[ki], GAMMAS_5[gi]),
            )?;
        }
    }
    for gi in 0..GAMMAS_5.len() {
        for ki in 1..KS_5.len() {
            check(
                at(ki - 1, gi) < at(ki, gi),
                format!("not decreasing as k shrinks at gamma={}, k={}", GAMMAS_5[gi], KS_5[ki]),
            )?;
        }
    }
    Ok(format!("H_comm(0.5, 32) = {anchor:.4}; 7×10 grid monotone in gamma and in k"))
}

fn size_anchor(model: &ModelWeights) -> Outcome {
    let prune = prune_global(model, 0.5).unwrap();
    let layers = quantize_model(model, &prune, 32, &KMeansOptions::default()).unwrap();
    let bytes = serialize(&layers, &PayloadHeader { gamma: 0.5, k: 32, n_s: 1 }).unwrap();
    let raw = model.num_params() as u64 * 32;
    let payload = bytes.len() as u64 * 8;
    let factor = raw as f64 / payload as f64;
    check(payload * 9 <= raw, format!("reduction only {factor:.2}x"))?;
    Ok(format!("{} bytes vs {} raw bytes, {factor:.2}x", bytes.len(), raw / 8))
}

fn aggregation_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for round in 0..50 {
        let template = random_model(&mut rng);
        let clients = rng.random_range(1..=8usize);
        let gamma = [0.0, 0.3, 0.5, 0.9][rng.random_range(0..4)];
        let k = [1, 4, 32][rng.random_range(0..3)];
        let mut raw = Vec::new();
        let mut rec = Vec::new();
        for _ in 0..clients {
            let noise = Normal::new(0.0, 0.1).unwrap();
            let layers = template
                .layers()
                .iter()
                .map(|l| {
                    let v = l.values().iter().map(|&x| x + noise.sample(&mut rng) as f32).collect();
                    LayerTensor::new(l.name(), l.shape().clone(), v).unwrap()
                })
                .collect();
            let m = ModelWeights::new(layers).unwrap();
            let q = quantize_model(&m, &prune_global(&m, gamma).unwrap(), k, &KMeansOptions::default()).unwrap();
            let bytes = serialize(&q, &PayloadHeader { gamma: gamma as f32, k: k as u32, n_s: 1 }).unwrap();
            rec.push(dequantize(&deserialize(&bytes).unwrap().layers).unwrap());
            raw.push((m, rng.random_range(1..=500u64)));
        }
        let paths = aggregation_paths(&raw, &rec).map_err(|e| e.to_string())?;
        check(paths.exact_identity_holds, format!("round {round}: exact identity fails"))?;
        check(paths.rounded_identity_holds, format!("round {round}: rounded identity fails"))?;
    }
    Ok("50 rounds exact".into())
}

fn desk_config(gamma: f64, k: usize, compression_enabled: bool) -> FLConfig {
    FLConfig {
        num_clients: 10,
        selection_fraction: 0.4,
        rounds: 30,
        gamma,
        k,
        hyper: TrainHyper { learning_rate: 0.01, batch_size: 16, local_epochs: 1, momentum: 0.9, seed: 0 },
        alpha: 100.0,
        hidden_dims: vec![32],
        compression_enabled,
        seed: 11,
        ..FLConfig::default()
    }
}

fn desk_runs() -> Vec<RunHistory> {
    let data = synth_dataset(2000, 20, 2, 7).unwrap();
    [(0.5, 32, false), (0.5, 32, true), (0.95, 4, true)]
        .par_iter()
        .map(|&(g, k, on)| run_training(&desk_config(g, k, on), &data).unwrap())
        .collect()
}

/// Final accuracies of the reference run: baseline, (0.5, 32), (0.95, 4).
const FROZEN_FINAL: [f64; 3] = [0.99, 0.9925, 0.4725];
/// One held-out sample out of 400.
const FROZEN_TOL: f64 = 1.0 / 400.0;

fn accuracy_trend(runs: &[RunHistory]) -> Outcome {
    let [base, mid, harsh] = [runs[0].final_accuracy(), runs[1].final_accuracy(), runs[2].final_accuracy()];
    let msg = format!("baseline {base:.4}, (0.5,32) {mid:.4}, (0.95,4) {harsh:.4}");
    check((mid - base).abs() <= 0.05, format!("{msg}: (0.5,32) more than 5 points from baseline"))?;
    check(harsh < mid, format!("{msg}: (0.95,4) not worse than (0.5,32)"))?;
    for (got, want) in [base, mid, harsh].iter().zip(FROZEN_FINAL) {
        check((got - want).abs() <= FROZEN_TOL, format!("{msg}: drifted from frozen {FROZEN_FINAL:?}"))?;
    }
    Ok(msg)
}

fn cost_formulas() -> Outcome {
    let s = |t_train, t_compress, t_decompress, t_select, t_aggregate| TimingSample {
        t_train,
        t_compress,
        t_decompress,
        t_select,
        t_aggregate,
    };
    let e = |r: fcp_core::Result<f64>| r.map_err(|e| e.to_string());
    check(e(h_client(&s(3.0, 0.0, 1.0, 1.0, 1.0)))? == 1.0, "h_client identity")?;
    check(e(h_client(&s(10.0, 1.0, 0.0, 0.0, 0.0)))? == 1.1, "h_client 1.1")?;
    check(e(h_client(&s(10.0, 2.0, 0.0, 0.0, 0.0)))? > 1.1, "h_client monotone")?;
    check(e(h_server(&s(1.0, 1.0, 0.0, 0.2, 0.3)))? == 1.0, "h_server identity")?;
    let hs = e(h_server(&s(1.0, 0.0, 23.2, 0.1, 0.1)))?;
    check((hs - 117.0).abs() < 1e-12, format!("h_server 117 got {hs}"))?;
    check(e(h_compute(&s(2.0, 0.0, 0.0, 0.5, 0.5)))? == 1.0, "h_compute identity")?;
    check(e(h_compute(&s(4.0, 1.25, 0.75, 0.5, 0.5)))? == 1.4, "h_compute 1.4")?;
    let t = tau(&[0.10, 0.40, 0.60, 0.70, 0.72]).map_err(|e| e.to_string())?;
    check(t.round == 3, "tau example")?;
    check(tau(&[0.9, 0.9, 0.9]).map_err(|e| e.to_string())?.round == 1, "tau at round 1")?;
    let inputs = |tau_fcp| RhoInputs {
        tau_fcp,
        tau_baseline: 12,
        sample: s(1.5, 0.0, 0.0, 0.25, 0.25),
        h_compute: 1.0,
        h_comm: 1.0,
        payload_bits_up: 25_416_000.0,
        model_bits_down: 25_416_000.0,
        down_multiplicity: 1.0,
    };
    for sc in [BandwidthScenario::low_energy_radio(), BandwidthScenario::lte_cat3()] {
        let one = rho_fcp(&inputs(12), &sc).map_err(|e| e.to_string())?.rho;
        check(one == 1.0, format!("rho identity {one} on {}", sc.name))?;
        let two = rho_fcp(&inputs(24), &sc).map_err(|e| e.to_string())?.rho;
        check(two == 2.0, format!("rho linearity {two} on {}", sc.name))?;
    }
    check(bits_from_model_size(274.0, SizeUnit::Decimal).map_err(|e| e.to_string())? == 2_192_000.0, "274 kB")?;
    check(bits_from_model_size(3177.0, SizeUnit::Decimal).map_err(|e| e.to_string())? == 25_416_000.0, "3177 kB")?;
    Ok("all substitution examples exact; published rho anchors informational only".into())
}

fn determinism(first: &[RunHistory]) -> Outcome {
    let second = desk_runs();
    for (a, b) in first.iter().zip(&second) {
        check(a.to_csv() == b.to_csv(), "CSV differs between executions")?;
        check(a.final_model.bit_eq(&b.final_model), "final model differs between executions")?;
    }
    Ok(format!("{} runs byte-identical", first.len()))
}

fn report(id: usize, name: &str, start: Instant, out: Outcome, failed: &mut usize) {
    let secs = start.elapsed().as_secs_f64();
    match out {
        Ok(msg) => println!("criterion {id:>2} PASS  {name} ({secs:.1}s): {msg}"),
        Err(msg) => {
            *failed += 1;
            println!("criterion {id:>2} FAIL  {name} ({secs:.1}s): {msg}");
        }
    }
}

fn main() {
    let mut failed = 0;

    let t = Instant::now();
    let (c1, c2) = codec_cases();
    report(1, "lossless codec round-trip", t, c1, &mut failed);
    report(2, "size formula equals bitstream", t, c2, &mut failed);

    let t = Instant::now();
    report(3, "huffman optimality oracle", t, huffman_oracle(), &mut failed);

    let t = Instant::now();
    report(4, "k-means oracle", t, kmeans_oracle(), &mut failed);

    let model = model_780k();
    let t = Instant::now();
    report(5, "compression ratio sweep", t, compression_sweep(&model), &mut failed);
    let t = Instant::now();
    report(6, "model size reduction", t, size_anchor(&model), &mut failed);

    let t = Instant::now();
    report(7, "two-path aggregation identity", t, aggregation_identity(), &mut failed);

    let t = Instant::now();
    let runs = desk_runs();
    report(8, "desk-scale accuracy trend", t, accuracy_trend(&runs), &mut failed);

    let t = Instant::now();
    report(9, "cost-model formulas", t, cost_formulas(), &mut failed);

    let t = Instant::now();
    report(10, "determinism", t, determinism(&runs), &mut failed);

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
