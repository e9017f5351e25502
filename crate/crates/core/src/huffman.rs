//! Canonical Huffman codes.
//!
//! Code lengths come from the usual greedy merge, with ties settled by
//! `(total count, smallest symbol in the subtree)`. Codewords are then handed
//! out in `(length, symbol)` order, so a table is fully described by its
//! lengths and can be rebuilt from them on the receiving side.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use crate::bits::{BitStream, BitWriter};
use crate::error::{Error, Result};

/// Longest codeword the 64-bit code registers can hold.
pub const MAX_CODE_LEN: u8 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymbolFreq {
    pub symbol: u64,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodeEntry {
    pub symbol: u64,
    pub length: u8,
    pub codeword: u64,
}

/// Canonical prefix code, entries sorted by `(length, symbol)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanTable {
    entries: Vec<CodeEntry>,
    index: HashMap<u64, usize>,
    /// `first_code[l]`, `first_entry[l]`, `count[l]` for canonical decoding.
    first_code: Vec<u64>,
    first_entry: Vec<usize>,
    count_at: Vec<usize>,
}

/// Counts occurrences of each symbol, sorted by symbol.
pub fn frequencies(symbols: &[u64]) -> Vec<SymbolFreq> {
    let mut sorted = symbols.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<SymbolFreq> = Vec::new();
    for s in sorted {
        match out.last_mut() {
            Some(f) if f.symbol == s => f.count += 1,
            _ => out.push(SymbolFreq { symbol: s, count: 1 }),
        }
    }
    out
}

/// Optimal code lengths for `freqs` (same order as the input).
pub fn code_lengths(freqs: &[SymbolFreq]) -> Result<Vec<u8>> {
    if freqs.is_empty() {
        return Err(Error::InvalidArgument("cannot build a code for an empty alphabet".into()));
    }
    if freqs.iter().any(|f| f.count == 0) {
        return Err(Error::InvalidArgument("symbol counts must be positive".into()));
    }
    let mut symbols: Vec<u64> = freqs.iter().map(|f| f.symbol).collect();
    symbols.sort_unstable();
    if symbols.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("duplicate symbol in frequency list".into()));
    }
    if freqs.len() == 1 {
        return Ok(vec![1]);
    }

    // Node ids: leaves 0..n, internal nodes appended. parent[] gives depth.
    let n = freqs.len();
    let mut parent: Vec<usize> = vec![usize::MAX; n];
    let mut heap: BinaryHeap<Reverse<(u64, u64, usize)>> =
        freqs.iter().enumerate().map(|(i, f)| Reverse((f.count, f.symbol, i))).collect();
    while heap.len() > 1 {
        let Reverse((c1, s1, a)) = heap.pop().expect("len > 1");
        let Reverse((c2, s2, b)) = heap.pop().expect("len > 1");
        let id = parent.len();
        parent.push(usize::MAX);
        parent[a] = id;
        parent[b] = id;
        heap.push(Reverse((c1 + c2, s1.min(s2), id)));
    }
    let mut depth = vec![0u32; parent.len()];
    for id in (0..parent.len()).rev() {
        if parent[id] != usize::MAX {
            depth[id] = depth[parent[id]] + 1;
        }
    }
    depth[..n]
        .iter()
        .map(|&d| {
            u8::try_from(d)
                .ok()
                .filter(|&l| l <= MAX_CODE_LEN)
                .ok_or_else(|| Error::InvalidCodeLengths(format!("code length {d} exceeds {MAX_CODE_LEN}")))
        })
        .collect()
}

impl HuffmanTable {
    /// Builds the optimal canonical table for the given frequencies.
    pub fn build(freqs: &[SymbolFreq]) -> Result<Self> {
        let lengths = code_lengths(freqs)?;
        Self::from_lengths(&freqs.iter().map(|f| f.symbol).zip(lengths).collect::<Vec<_>>())
    }

    /// Rebuilds the canonical table from `(symbol, length)` pairs.
    ///
    /// A single symbol must have length 1; two or more must satisfy Kraft with
    /// equality, so every bit pattern decodes.
    pub fn from_lengths(pairs: &[(u64, u8)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidCodeLengths("empty table".into()));
        }
        if pairs.iter().any(|&(_, l)| l == 0 || l > MAX_CODE_LEN) {
            return Err(Error::InvalidCodeLengths(format!("lengths must be in 1..={MAX_CODE_LEN}")));
        }
        let mut sorted: Vec<(u8, u64)> = pairs.iter().map(|&(s, l)| (l, s)).collect();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0].1 == w[1].1) || {
            let mut syms: Vec<u64> = pairs.iter().map(|p| p.0).collect();
            syms.sort_unstable();
            syms.windows(2).any(|w| w[0] == w[1])
        } {
            return Err(Error::InvalidCodeLengths("duplicate symbol".into()));
        }
        if sorted.len() == 1 {
            if sorted[0].0 != 1 {
                return Err(Error::InvalidCodeLengths("a lone symbol must have length 1".into()));
            }
        } else {
            // Kraft sum scaled by 2^64 must be exactly 2^64.
            let kraft: u128 = sorted.iter().map(|&(l, _)| 1u128 << (64 - l)).sum();
            if kraft != 1u128 << 64 {
                return Err(Error::InvalidCodeLengths("lengths do not form a complete prefix code".into()));
            }
        }

        let max_len = sorted.last().expect("non-empty").0 as usize;
        let mut entries = Vec::with_capacity(sorted.len());
        let mut first_code = vec![0u64; max_len + 1];
        let mut first_entry = vec![0usize; max_len + 1];
        let mut count_at = vec![0usize; max_len + 1];
        let mut code: u64 = 0;
        let mut prev_len = sorted[0].0;
        for (i, &(len, symbol)) in sorted.iter().enumerate() {
            if i > 0 {
                code = (code + 1) << (len - prev_len);
            } else {
                code = 0;
            }
            if count_at[len as usize] == 0 {
                first_code[len as usize] = code;
                first_entry[len as usize] = i;
            }
            count_at[len as usize] += 1;
            entries.push(CodeEntry { symbol, length: len, codeword: code });
            prev_len = len;
        }
        let index = entries.iter().enumerate().map(|(i, e)| (e.symbol, i)).collect();
        Ok(Self { entries, index, first_code, first_entry, count_at })
    }

    pub fn entries(&self) -> &[CodeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, symbol: u64) -> Option<&CodeEntry> {
        self.index.get(&symbol).map(|&i| &self.entries[i])
    }

    pub fn code_length(&self, symbol: u64) -> Option<u8> {
        self.get(symbol).map(|e| e.length)
    }

    /// Σ 2^(−ℓ) over all entries.
    pub fn kraft_sum(&self) -> f64 {
        self.entries.iter().map(|e| (-(f64::from(e.length))).exp2()).sum()
    }

    /// Concatenated codewords for `symbols`.
    pub fn encode(&self, symbols: &[u64]) -> Result<BitStream> {
        let mut w = BitWriter::new();
        for &s in symbols {
            let e = self.get(s).ok_or(Error::UnknownSymbol(s))?;
            w.write(e.codeword, e.length);
        }
        Ok(w.finish())
    }

    /// Decodes exactly `count` symbols; bits after them are ignored.
    pub fn decode(&self, stream: &BitStream, count: usize) -> Result<Vec<u64>> {
        let mut out = Vec::with_capacity(count);
        let mut r = stream.reader();
        let max_len = self.first_code.len() - 1;
        for _ in 0..count {
            let start = r.position();
            let mut code = 0u64;
            let mut decoded = None;
            for len in 1..=max_len {
                code = (code << 1) | u64::from(r.read_bit()?);
                let n = self.count_at[len];
                if n > 0 && code >= self.first_code[len] && code - self.first_code[len] < n as u64 {
                    decoded = Some(self.entries[self.first_entry[len] + (code - self.first_code[len]) as usize].symbol);
                    break;
                }
            }
            out.push(decoded.ok_or(Error::InvalidCode { bit_offset: start })?);
        }
        Ok(out)
    }
}

/// Total encoded bits Σ count·ℓ for the given frequencies under `table`.
pub fn encoded_bits(table: &HuffmanTable, freqs: &[SymbolFreq]) -> Result<u64> {
    freqs
        .iter()
        .map(|f| table.code_length(f.symbol).map(|l| f.count * u64::from(l)).ok_or(Error::UnknownSymbol(f.symbol)))
        .sum()
}

/// Shannon entropy of the empirical distribution, in bits per symbol.
pub fn entropy(freqs: &[SymbolFreq]) -> f64 {
    let total: f64 = freqs.iter().map(|f| f.count as f64).sum();
    freqs
        .iter()
        .map(|f| {
            let p = f.count as f64 / total;
            -p * p.log2()
        })
        .sum()
}
