//! Exact weighted sums of `f32` tensors.
//!
//! Every finite `f32` is an integer multiple of 2⁻¹⁴⁹, so scaling by 2¹⁴⁹
//! turns weighted sums into big-integer sums with no rounding at all. The
//! result is rounded once, when converted back to a float, which makes
//! aggregation independent of client order and lets
//! `Σ a·w̃ − Σ a·w = Σ a·(w̃ − w)` hold bit for bit.

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::model::{LayerTensor, ModelWeights};

/// log₂ of the scale that maps every finite `f32` to an integer.
const SCALE_EXP: i32 = 149;

/// `v · 2¹⁴⁹` as an exact integer.
pub fn scaled(v: f32) -> BigInt {
    let bits = v.to_bits();
    let exp = ((bits >> 23) & 0xff) as i32;
    let frac = bits & 0x7f_ffff;
    let (mantissa, shift) = if exp == 0 { (frac, 0) } else { (frac | 0x80_0000, exp - 1) };
    debug_assert!(exp != 0xff, "finite values only");
    let m = BigInt::from(mantissa) << shift as usize;
    if bits >> 31 == 1 {
        -m
    } else {
        m
    }
}

/// Per-parameter exact sum Σ_s n_s · w_s, shaped like a model.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSum {
    template: ModelWeights,
    sums: Vec<BigInt>,
    total_weight: u64,
}

impl WeightedSum {
    pub fn zeros_like(template: &ModelWeights) -> Self {
        Self { template: template.clone(), sums: vec![BigInt::zero(); template.num_params()], total_weight: 0 }
    }

    /// Adds `weight · model`.
    pub fn add(&mut self, model: &ModelWeights, weight: u64) -> Result<()> {
        self.template.check_same_structure(model)?;
        let w = BigInt::from(weight);
        for (acc, v) in self.sums.iter_mut().zip(model.flat_values()) {
            *acc += scaled(v) * &w;
        }
        self.total_weight += weight;
        Ok(())
    }

    /// Adds `weight · (a − b)` without counting toward the total weight.
    pub fn add_difference(&mut self, a: &ModelWeights, b: &ModelWeights, weight: u64) -> Result<()> {
        self.template.check_same_structure(a)?;
        self.template.check_same_structure(b)?;
        let w = BigInt::from(weight);
        for ((acc, x), y) in self.sums.iter_mut().zip(a.flat_values()).zip(b.flat_values()) {
            *acc += (scaled(x) - scaled(y)) * &w;
        }
        Ok(())
    }

    pub fn total_weight(&self) -> u64 {
        self.total_weight
    }

    pub fn sums(&self) -> &[BigInt] {
        &self.sums
    }

    /// Element-wise `self − other` over the same structure.
    pub fn minus(&self, other: &WeightedSum) -> Result<Vec<BigInt>> {
        self.template.check_same_structure(&other.template)?;
        Ok(self.sums.iter().zip(&other.sums).map(|(a, b)| a - b).collect())
    }

    /// Divides every entry by `divisor` and rounds to `f64`.
    pub fn to_f64(&self, divisor: u64) -> Result<Vec<f64>> {
        scaled_to_f64(&self.sums, divisor)
    }

    /// Divides by `divisor` and rounds into a model with the template's shapes.
    pub fn to_model(&self, divisor: u64) -> Result<ModelWeights> {
        let values = self.to_f64(divisor)?;
        let mut it = values.into_iter();
        let layers = self
            .template
            .layers()
            .iter()
            .map(|l| {
                let vals: Vec<f32> = it.by_ref().take(l.len()).map(|v| v as f32).collect();
                LayerTensor::new(l.name(), l.shape().clone(), vals)
            })
            .collect::<Result<Vec<_>>>()?;
        ModelWeights::new(layers)
    }
}

/// `sums[i] / (divisor · 2¹⁴⁹)` rounded to `f64`.
pub fn scaled_to_f64(sums: &[BigInt], divisor: u64) -> Result<Vec<f64>> {
    if divisor == 0 {
        return Err(Error::InvalidArgument("divisor must be positive".into()));
    }
    let unscale = (-f64::from(SCALE_EXP)).exp2();
    let d = divisor as f64;
    sums.iter()
        .map(|s| {
            s.to_f64()
                .filter(|v| v.is_finite())
                .map(|v| v / d * unscale)
                .ok_or_else(|| Error::InvalidArgument("weighted sum overflows f64".into()))
        })
        .collect()
}
