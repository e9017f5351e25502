//! `FCPM` upstream payload: byte layout, decoding and size accounting.
//!
//! Layout, all multi-byte integers little-endian, streams MSB-first and
//! zero-padded to a byte boundary:
//!
//! ```text
//! "FCPM" | version u16 | layer_count u32 | gamma f32 | k u32 | n_s u64
//! per layer:
//!   name_len u16 | name | rank u8 | dims u32 × rank | kept_count u64
//!   k_eff u16 | k_eff × (centroid f32, code_len u8)
//!   M u32     | M × (delta varint, code_len u8)
//!   value_bits u64 | value bytes | index_bits u64 | index bytes
//! ```
//!
//! Value symbols are centroid indices; index symbols are position gaps. Both
//! code tables are canonical, so only code lengths travel; distinct gaps are
//! listed in ascending order.

use crate::bits::BitStream;
use crate::compress::{Codebook, QuantizedLayer};
use crate::delta::{delta_decode, delta_encode};
use crate::error::{Error, Result};
use crate::huffman::{frequencies, HuffmanTable, SymbolFreq};
use crate::io::{put_varint, varint_len, Reader};

pub const PAYLOAD_MAGIC: &[u8; 4] = b"FCPM";
pub const PAYLOAD_VERSION: u16 = 1;
/// Bits in the fixed global header: magic, version, layer count, γ, k, n_s.
pub const HEADER_BITS: u64 = 8 * (4 + 2 + 4 + 4 + 4 + 8);
/// Bits per transmitted centroid value.
pub const CENTROID_BITS: u64 = 32;
/// Bits per transmitted code length.
pub const CODE_LEN_BITS: u64 = 8;

/// Fields carried in the payload header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayloadHeader {
    pub gamma: f32,
    pub k: u32,
    pub n_s: u64,
}

/// A fully decoded payload.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPayload {
    pub header: PayloadHeader,
    pub layers: Vec<QuantizedLayer>,
}

/// Entropy-coding plan for one layer, shared by the serializer and the size
/// accounting.
struct LayerPlan {
    value_freqs: Vec<SymbolFreq>,
    value_table: Option<HuffmanTable>,
    deltas: Vec<u64>,
    index_freqs: Vec<SymbolFreq>,
    index_table: Option<HuffmanTable>,
}

fn plan_layer(q: &QuantizedLayer) -> Result<LayerPlan> {
    q.validate()?;
    if q.codebook.k_effective() > u16::MAX as usize {
        return Err(Error::Inconsistent {
            layer: q.layer_name.clone(),
            reason: format!("{} centroids exceed the u16 codebook size field", q.codebook.k_effective()),
        });
    }
    let symbols: Vec<u64> = q.assignments.iter().map(|&a| u64::from(a)).collect();
    let value_freqs = frequencies(&symbols);
    if value_freqs.len() != q.codebook.k_effective() {
        return Err(Error::Inconsistent {
            layer: q.layer_name.clone(),
            reason: "every centroid must be assigned at least once".into(),
        });
    }
    let deltas = delta_encode(&q.positions)?;
    let index_freqs = frequencies(&deltas);
    let table = |f: &[SymbolFreq]| if f.is_empty() { Ok(None) } else { HuffmanTable::build(f).map(Some) };
    Ok(LayerPlan {
        value_table: table(&value_freqs)?,
        value_freqs,
        index_table: table(&index_freqs)?,
        index_freqs,
        deltas,
    })
}

fn padding(bits: u64) -> u64 {
    bits.div_ceil(8) * 8 - bits
}

fn put_layer_prefix(out: &mut Vec<u8>, q: &QuantizedLayer) -> Result<()> {
    let name_len = u16::try_from(q.layer_name.len())
        .map_err(|_| Error::Inconsistent { layer: q.layer_name.clone(), reason: "name longer than 65535 bytes".into() })?;
    out.extend_from_slice(&name_len.to_le_bytes());
    out.extend_from_slice(q.layer_name.as_bytes());
    let dims = q.original_shape.dims();
    out.push(u8::try_from(dims.len()).map_err(|_| Error::Inconsistent {
        layer: q.layer_name.clone(),
        reason: "rank exceeds 255".into(),
    })?);
    for &d in dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::Inconsistent { layer: q.layer_name.clone(), reason: "dimension exceeds u32".into() })?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(())
}

fn put_stream(out: &mut Vec<u8>, s: &BitStream) {
    out.extend_from_slice(&s.bit_length().to_le_bytes());
    out.extend_from_slice(s.bytes());
}

/// Encodes quantized layers into an `FCPM` payload.
pub fn serialize(layers: &[QuantizedLayer], header: &PayloadHeader) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(PAYLOAD_MAGIC);
    out.extend_from_slice(&PAYLOAD_VERSION.to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    out.extend_from_slice(&header.gamma.to_le_bytes());
    out.extend_from_slice(&header.k.to_le_bytes());
    out.extend_from_slice(&header.n_s.to_le_bytes());

    for q in layers {
        let plan = plan_layer(q)?;
        put_layer_prefix(&mut out, q)?;
        out.extend_from_slice(&(q.kept_count() as u64).to_le_bytes());

        out.extend_from_slice(&(q.codebook.k_effective() as u16).to_le_bytes());
        for (j, c) in q.codebook.centroids.iter().enumerate() {
            out.extend_from_slice(&c.to_le_bytes());
            let len = plan.value_table.as_ref().and_then(|t| t.code_length(j as u64)).expect("every centroid coded");
            out.push(len);
        }

        out.extend_from_slice(&(plan.index_freqs.len() as u32).to_le_bytes());
        for f in &plan.index_freqs {
            put_varint(&mut out, f.symbol);
            out.push(plan.index_table.as_ref().and_then(|t| t.code_length(f.symbol)).expect("every delta coded"));
        }

        let symbols: Vec<u64> = q.assignments.iter().map(|&a| u64::from(a)).collect();
        let value_stream = match &plan.value_table {
            Some(t) => t.encode(&symbols)?,
            None => BitStream::default(),
        };
        let index_stream = match &plan.index_table {
            Some(t) => t.encode(&plan.deltas)?,
            None => BitStream::default(),
        };
        put_stream(&mut out, &value_stream);
        put_stream(&mut out, &index_stream);
    }
    Ok(out)
}

fn read_stream(r: &mut Reader<'_>, what: &'static str) -> Result<(BitStream, usize)> {
    let at = r.offset();
    let bits = r.u64(what)?;
    let nbytes = usize::try_from(bits.div_ceil(8)).map_err(|_| Error::Malformed {
        offset: at,
        reason: format!("{what} length {bits} too large"),
    })?;
    let raw = r.bytes(nbytes, what)?;
    let stream = BitStream::from_parts(raw.to_vec(), bits)
        .map_err(|e| Error::Malformed { offset: at, reason: format!("{what}: {e}") })?;
    Ok((stream, at))
}

/// Decodes an `FCPM` payload. Every failure carries the byte offset of the
/// field at fault.
pub fn deserialize(bytes: &[u8]) -> Result<DecodedPayload> {
    let mut r = Reader::new(bytes);
    r.expect_magic(PAYLOAD_MAGIC, "FCPM")?;
    let at = r.offset();
    let version = r.u16("version")?;
    if version != PAYLOAD_VERSION {
        return Err(Error::UnsupportedVersion { offset: at, version });
    }
    let layer_count = r.u32("layer count")? as usize;
    let header = PayloadHeader { gamma: r.f32("gamma")?, k: r.u32("k")?, n_s: r.u64("n_s")? };

    let mut layers = Vec::with_capacity(layer_count.min(1024));
    for _ in 0..layer_count {
        let layer_at = r.offset();
        let name = r.name()?;
        let (shape, _) = r.shape()?;
        let malformed = |offset: usize, reason: String| Error::Malformed { offset, reason: format!("layer {name:?}: {reason}") };

        let at = r.offset();
        let kept = r.u64("kept count")?;
        if kept > shape.numel() as u64 {
            return Err(malformed(at, format!("{kept} kept weights in a tensor of {}", shape.numel())));
        }
        let kept = kept as usize;

        let at = r.offset();
        let k_eff = r.u16("codebook size")? as usize;
        if (k_eff == 0) != (kept == 0) {
            return Err(malformed(at, "codebook must be empty exactly when nothing is kept".into()));
        }
        let mut centroids = Vec::with_capacity(k_eff);
        let mut value_lengths = Vec::with_capacity(k_eff);
        for j in 0..k_eff {
            centroids.push(r.f32("centroid")?);
            value_lengths.push((j as u64, r.u8("code length")?));
        }
        if centroids.iter().any(|c| !c.is_finite()) || centroids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(malformed(at, "centroids must be finite and strictly increasing".into()));
        }

        let at_m = r.offset();
        let m = r.u32("distinct delta count")? as usize;
        if (m == 0) != (kept == 0) || m > kept {
            return Err(malformed(at_m, format!("{m} distinct deltas for {kept} kept weights")));
        }
        let mut index_lengths = Vec::with_capacity(m);
        for _ in 0..m {
            let d = r.varint("delta")?;
            if index_lengths.last().is_some_and(|&(prev, _)| d <= prev) {
                return Err(malformed(at_m, "distinct deltas must be strictly increasing".into()));
            }
            index_lengths.push((d, r.u8("code length")?));
        }

        let (value_stream, value_at) = read_stream(&mut r, "value stream")?;
        let (index_stream, index_at) = read_stream(&mut r, "index stream")?;

        let (assignments, positions) = if kept == 0 {
            if value_stream.bit_length() != 0 || index_stream.bit_length() != 0 {
                return Err(malformed(value_at, "streams must be empty when nothing is kept".into()));
            }
            (Vec::new(), Vec::new())
        } else {
            let value_table =
                HuffmanTable::from_lengths(&value_lengths).map_err(|e| malformed(at, format!("value codebook: {e}")))?;
            let index_table =
                HuffmanTable::from_lengths(&index_lengths).map_err(|e| malformed(at_m, format!("index codebook: {e}")))?;
            let symbols = decode_exact(&value_table, &value_stream, kept).map_err(|e| malformed(value_at, e))?;
            let deltas = decode_exact(&index_table, &index_stream, kept).map_err(|e| malformed(index_at, e))?;
            if deltas.iter().skip(1).any(|&d| d == 0) {
                return Err(malformed(index_at, "zero gap between positions".into()));
            }
            let total = deltas.iter().try_fold(0u64, |acc, &d| acc.checked_add(d));
            if total.is_none_or(|t| t >= shape.numel() as u64) {
                return Err(malformed(index_at, "positions exceed the tensor".into()));
            }
            let positions = delta_decode(&deltas);
            let assignments: Vec<u32> = symbols.iter().map(|&s| s as u32).collect();
            let mut used = vec![false; k_eff];
            assignments.iter().for_each(|&a| used[a as usize] = true);
            if used.iter().any(|u| !u) {
                return Err(malformed(value_at, "codebook holds an unused centroid".into()));
            }
            (assignments, positions)
        };

        let q = QuantizedLayer {
            layer_name: name.clone(),
            original_shape: shape,
            codebook: Codebook { centroids },
            positions,
            assignments,
        };
        q.validate().map_err(|e| Error::Malformed { offset: layer_at, reason: e.to_string() })?;
        layers.push(q);
    }
    if r.remaining() != 0 {
        return Err(Error::Malformed { offset: r.offset(), reason: "trailing bytes after last layer".into() });
    }
    Ok(DecodedPayload { header, layers })
}

/// Decodes `count` symbols and requires the stream to end exactly there.
fn decode_exact(table: &HuffmanTable, stream: &BitStream, count: usize) -> std::result::Result<Vec<u64>, String> {
    let symbols = table.decode(stream, count).map_err(|e| e.to_string())?;
    let used: u64 = symbols.iter().map(|&s| u64::from(table.code_length(s).expect("decoded symbol"))).sum();
    if used != stream.bit_length() {
        return Err(format!("{count} symbols use {used} bits but the stream holds {}", stream.bit_length()));
    }
    Ok(symbols)
}

/// Bit accounting for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSize {
    pub name: String,
    pub numel: u64,
    pub kept: u64,
    pub k_effective: u64,
    /// Distinct gaps M.
    pub distinct_deltas: u64,
    /// Σ ℓ(w) over kept weights.
    pub value_bits: u64,
    /// Σ ℓ(Δ(w)) over kept weights.
    pub index_bits: u64,
    /// k_eff · (centroid bits + code-length field bits).
    pub value_codebook_bits: u64,
    /// Σ varint bits of the distinct gaps + M · code-length field bits.
    pub index_codebook_bits: u64,
    /// Name, shape, count fields and stream padding.
    pub framing_bits: u64,
    /// Σ_j ℓ(c_j), the summed code lengths of the centroid table.
    pub value_code_length_sum: u64,
    /// Σ_r ℓ(Δ_r), the summed code lengths of the gap table.
    pub index_code_length_sum: u64,
    /// Varint bits spent on the distinct gaps alone.
    pub delta_varint_bits: u64,
    /// Bits of the largest gap written in fixed width.
    pub delta_fixed_width: u64,
    pub value_freqs: Vec<SymbolFreq>,
    pub index_freqs: Vec<SymbolFreq>,
}

impl LayerSize {
    pub fn payload_bits(&self) -> u64 {
        self.value_bits + self.index_bits
    }

    pub fn codebook_bits(&self) -> u64 {
        self.value_codebook_bits + self.index_codebook_bits
    }

    pub fn total_bits(&self) -> u64 {
        self.payload_bits() + self.codebook_bits() + self.framing_bits
    }
}

/// Compression-ratio terms evaluated from symbol frequencies and code lengths,
/// each already divided by N·b.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioTerms {
    /// (1−γ)/b · [Σ p(c_j)ℓ(c_j) + Σ p(Δ_r)ℓ(Δ_r)], with per-layer kept counts.
    pub payload: f64,
    /// Centroid values: Σ k_eff · 32 / (N·b).
    pub centroids: f64,
    /// Centroid code-length fields.
    pub centroid_lengths: f64,
    /// Distinct gap values: Σ M · b_Δ / (N·b), b_Δ the varint cost.
    pub delta_values: f64,
    /// Gap code-length fields.
    pub delta_lengths: f64,
    /// Layer framing and stream padding.
    pub framing: f64,
}

impl RatioTerms {
    pub fn total(&self) -> f64 {
        self.payload + self.centroids + self.centroid_lengths + self.delta_values + self.delta_lengths + self.framing
    }
}

/// Transmission-size summary for one payload.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeReport {
    /// Bits per uncompressed weight.
    pub b: u64,
    pub num_params: u64,
    /// N · b.
    pub b0: u64,
    /// Σ kept_ℓ · log₂ k_eff,ℓ: fixed-width prune+quantize cost.
    pub b_pq: f64,
    /// Everything after the fixed header: streams, codebooks and framing.
    pub b_pqh: u64,
    pub header_bits: u64,
    /// B_pqh / B₀.
    pub h_comm: f64,
    /// Numerator of the ratio rebuilt term by term from the frequency tables.
    pub closed_form_bits: u64,
    pub terms: RatioTerms,
    /// Ratio with summed code lengths for the tables, fixed-width gaps and no framing.
    pub h_comm_fixed_width: f64,
    pub layers: Vec<LayerSize>,
}

impl SizeReport {
    pub fn payload_bits(&self) -> u64 {
        self.layers.iter().map(LayerSize::payload_bits).sum()
    }

    pub fn codebook_bits(&self) -> u64 {
        self.layers.iter().map(LayerSize::codebook_bits).sum()
    }

    pub fn framing_bits(&self) -> u64 {
        self.layers.iter().map(|l| l.framing_bits).sum()
    }

    /// Total serialized size in bits, header included.
    pub fn serialized_bits(&self) -> u64 {
        self.header_bits + self.b_pqh
    }

    pub fn total_kept(&self) -> u64 {
        self.layers.iter().map(|l| l.kept).sum()
    }
}

fn layer_size(q: &QuantizedLayer) -> Result<LayerSize> {
    let plan = plan_layer(q)?;
    let bits_for = |freqs: &[SymbolFreq], table: &Option<HuffmanTable>| -> u64 {
        table.as_ref().map_or(0, |t| freqs.iter().map(|f| f.count * u64::from(t.code_length(f.symbol).unwrap())).sum())
    };
    let length_sum = |table: &Option<HuffmanTable>| -> u64 {
        table.as_ref().map_or(0, |t| t.entries().iter().map(|e| u64::from(e.length)).sum())
    };
    let value_bits = bits_for(&plan.value_freqs, &plan.value_table);
    let index_bits = bits_for(&plan.index_freqs, &plan.index_table);
    let k_eff = q.codebook.k_effective() as u64;
    let m = plan.index_freqs.len() as u64;
    let delta_varint_bits: u64 = plan.index_freqs.iter().map(|f| 8 * varint_len(f.symbol) as u64).sum();
    let max_delta = plan.index_freqs.last().map_or(0, |f| f.symbol);
    let dims = q.original_shape.dims().len() as u64;
    let framing_bits = 16 + 8 * q.layer_name.len() as u64 // name
        + 8 + 32 * dims // shape
        + 64 // kept count
        + 16 // k_eff
        + 32 // M
        + 64 + padding(value_bits)
        + 64 + padding(index_bits);
    Ok(LayerSize {
        name: q.layer_name.clone(),
        numel: q.original_shape.numel() as u64,
        kept: q.kept_count() as u64,
        k_effective: k_eff,
        distinct_deltas: m,
        value_bits,
        index_bits,
        value_codebook_bits: k_eff * (CENTROID_BITS + CODE_LEN_BITS),
        index_codebook_bits: delta_varint_bits + m * CODE_LEN_BITS,
        framing_bits,
        value_code_length_sum: length_sum(&plan.value_table),
        index_code_length_sum: length_sum(&plan.index_table),
        delta_varint_bits,
        delta_fixed_width: u64::from(64 - max_delta.leading_zeros()).max(1),
        value_freqs: plan.value_freqs,
        index_freqs: plan.index_freqs,
    })
}

/// Size accounting computed from the code tables, without serializing.
pub fn size_report(layers: &[QuantizedLayer], b: u64) -> Result<SizeReport> {
    if b == 0 {
        return Err(Error::InvalidArgument("bits per weight must be positive".into()));
    }
    let sizes = layers.iter().map(layer_size).collect::<Result<Vec<_>>>()?;
    let num_params: u64 = sizes.iter().map(|l| l.numel).sum();
    if num_params == 0 {
        return Err(Error::InvalidArgument("payload has no parameters".into()));
    }
    let b0 = num_params * b;
    let b_pq: f64 = sizes
        .iter()
        .filter(|l| l.k_effective > 0)
        .map(|l| l.kept as f64 * (l.k_effective as f64).log2())
        .sum();
    let b_pqh: u64 = sizes.iter().map(LayerSize::total_bits).sum();

    // Rebuild the numerator from the empirical distributions: kept·p·ℓ = count·ℓ.
    let nb = b0 as f64;
    let mut payload_num = 0u64;
    let mut payload_term = 0.0;
    let (mut centroid_num, mut centroid_len_num, mut delta_val_num, mut delta_len_num, mut framing_num) = (0, 0, 0, 0, 0);
    let mut fixed_width_num = 0u64;
    for l in &sizes {
        let kept = l.kept as f64;
        let expected_len = |freqs: &[SymbolFreq], lens: &dyn Fn(u64) -> u64| -> (u64, f64) {
            let bits: u64 = freqs.iter().map(|f| f.count * lens(f.symbol)).sum();
            let avg: f64 = freqs.iter().map(|f| (f.count as f64 / kept) * lens(f.symbol) as f64).sum();
            (bits, avg)
        };
        let table_of = |freqs: &[SymbolFreq]| -> Option<HuffmanTable> {
            (!freqs.is_empty()).then(|| HuffmanTable::build(freqs).expect("frequencies from a valid layer"))
        };
        let (vt, it) = (table_of(&l.value_freqs), table_of(&l.index_freqs));
        let vlen = |s: u64| u64::from(vt.as_ref().unwrap().code_length(s).unwrap());
        let ilen = |s: u64| u64::from(it.as_ref().unwrap().code_length(s).unwrap());
        if l.kept > 0 {
            let (vb, vavg) = expected_len(&l.value_freqs, &vlen);
            let (ib, iavg) = expected_len(&l.index_freqs, &ilen);
            payload_num += vb + ib;
            payload_term += kept / nb * (vavg + iavg);
        }
        centroid_num += l.k_effective * CENTROID_BITS;
        centroid_len_num += l.k_effective * CODE_LEN_BITS;
        delta_val_num += l.delta_varint_bits;
        delta_len_num += l.distinct_deltas * CODE_LEN_BITS;
        framing_num += l.framing_bits;
        fixed_width_num += l.value_bits
            + l.index_bits
            + l.k_effective * CENTROID_BITS
            + l.value_code_length_sum
            + if l.distinct_deltas > 0 { l.distinct_deltas * l.delta_fixed_width } else { 0 }
            + l.index_code_length_sum;
    }
    let closed_form_bits = payload_num + centroid_num + centroid_len_num + delta_val_num + delta_len_num + framing_num;
    let terms = RatioTerms {
        payload: payload_term,
        centroids: centroid_num as f64 / nb,
        centroid_lengths: centroid_len_num as f64 / nb,
        delta_values: delta_val_num as f64 / nb,
        delta_lengths: delta_len_num as f64 / nb,
        framing: framing_num as f64 / nb,
    };

    Ok(SizeReport {
        b,
        num_params,
        b0,
        b_pq,
        b_pqh,
        header_bits: HEADER_BITS,
        h_comm: b_pqh as f64 / nb,
        closed_form_bits,
        terms,
        h_comm_fixed_width: fixed_width_num as f64 / nb,
        layers: sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TensorShape;

    fn layer(name: &str, n: usize, centroids: Vec<f32>, positions: Vec<usize>, assignments: Vec<u32>) -> QuantizedLayer {
        QuantizedLayer {
            layer_name: name.into(),
            original_shape: TensorShape::new(vec![n]).unwrap(),
            codebook: Codebook { centroids },
            positions,
            assignments,
        }
    }

    fn header() -> PayloadHeader {
        PayloadHeader { gamma: 0.5, k: 4, n_s: 12 }
    }

    #[test]
    fn round_trip_small() {
        let layers = vec![
            layer("a", 10, vec![-1.0, 0.5, 2.0], vec![0, 3, 4, 9], vec![0, 1, 1, 2]),
            layer("b", 3, vec![], vec![], vec![]),
            layer("c", 2, vec![7.0], vec![1], vec![0]),
        ];
        let bytes = serialize(&layers, &header()).unwrap();
        let back = deserialize(&bytes).unwrap();
        assert_eq!(back.layers, layers);
        assert_eq!(back.header, header());
        assert_eq!(bytes, serialize(&layers, &header()).unwrap());
    }

    #[test]
    fn empty_layer_payload_is_parseable() {
        let layers = vec![layer("e", 4, vec![], vec![], vec![])];
        let bytes = serialize(&layers, &header()).unwrap();
        let back = deserialize(&bytes).unwrap();
        assert_eq!(back.layers, layers);
        let r = size_report(&layers, 32).unwrap();
        assert_eq!(r.b_pqh, bytes.len() as u64 * 8 - HEADER_BITS);
        assert_eq!(r.payload_bits(), 0);
    }

    #[test]
    fn size_matches_bytes() {
        let layers = vec![layer("a", 10, vec![-1.0, 0.5, 2.0], vec![0, 3, 4, 9], vec![0, 1, 1, 2])];
        let bytes = serialize(&layers, &header()).unwrap();
        let r = size_report(&layers, 32).unwrap();
        assert_eq!(r.serialized_bits(), bytes.len() as u64 * 8);
        assert_eq!(r.closed_form_bits, r.b_pqh);
        assert_eq!(r.b0, 320);
        assert_eq!(r.h_comm, r.b_pqh as f64 / 320.0);
        assert!((r.terms.total() - r.h_comm).abs() < 1e-12);
        assert_eq!(r.b_pq, 4.0 * 3f64.log2());
    }

    #[test]
    fn bad_magic_and_version() {
        let layers = vec![layer("a", 2, vec![1.0], vec![0], vec![0])];
        let mut bytes = serialize(&layers, &header()).unwrap();
        bytes[1] = b'x';
        assert_eq!(deserialize(&bytes).unwrap_err(), Error::BadMagic { offset: 0, expected: "FCPM" });
        bytes[1] = b'C';
        bytes[4] = 2;
        assert_eq!(deserialize(&bytes).unwrap_err(), Error::UnsupportedVersion { offset: 4, version: 2 });
    }

    #[test]
    fn truncation_is_detected_everywhere() {
        let layers = vec![layer("a", 10, vec![-1.0, 0.5, 2.0], vec![0, 3, 4, 9], vec![0, 1, 1, 2])];
        let bytes = serialize(&layers, &header()).unwrap();
        for cut in 0..bytes.len() {
            assert!(deserialize(&bytes[..cut]).is_err(), "prefix of {cut} bytes accepted");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(deserialize(&extra), Err(Error::Malformed { .. })));
    }

    #[test]
    fn unused_centroid_rejected_on_serialize() {
        let l = layer("a", 4, vec![1.0, 2.0], vec![0, 1], vec![0, 0]);
        assert!(matches!(serialize(&[l], &header()), Err(Error::Inconsistent { .. })));
    }
}
