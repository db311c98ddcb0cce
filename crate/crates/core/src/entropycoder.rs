//! Static-model range coder and fixed-length mixed-radix packing.
//!
//! The coder is the carry-propagating byte-oriented scheme popularised by
//! LZMA: a 64-bit `low` holding a possible carry, a 32-bit `range`, a delayed
//! cache byte and a count of pending `0xFF` bytes. Frequencies sum to
//! `TOTAL = 2^16`.
//!
//! Stream layout for `n` renormalisation shifts is exactly `n + 4` bytes: the
//! leading byte LZMA always writes as zero is omitted, and the flush pushes
//! out the four remaining bytes of `low`. A decoder primes itself with four
//! bytes and consumes one per shift, so it reads every byte and no more.

use num_bigint::BigUint;

use crate::error::{invalid, AtcError, Result};

pub const TOTAL_BITS: u32 = 16;
pub const TOTAL: u32 = 1 << TOTAL_BITS;
const TOP: u32 = 1 << 24;

/// Cumulative frequency table over `M` symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolModel {
    cum: Vec<u32>,
}

impl SymbolModel {
    /// Quantises probabilities to integer frequencies summing to [`TOTAL`].
    ///
    /// Every symbol receives one count up front. The remaining
    /// `TOTAL − M` counts are split in proportion to `p` by largest
    /// remainder, ties going to the lower index.
    pub fn from_probabilities(p: &[f64]) -> Result<Self> {
        let m = p.len();
        if m == 0 || m > TOTAL as usize {
            return invalid(format!("alphabet size {m} outside 1..={TOTAL}"));
        }
        if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return invalid("probabilities must be finite and non-negative");
        }
        let sum: f64 = p.iter().sum();
        if !(sum > 0.0) {
            return invalid("probabilities sum to zero");
        }
        let spare = (TOTAL as usize - m) as f64;
        let mut freq = Vec::with_capacity(m);
        let mut rema = Vec::with_capacity(m);
        let mut used = 0u64;
        for &x in p {
            let share = x / sum * spare;
            let base = share.floor();
            freq.push(1 + base as u32);
            rema.push(share - base);
            used += base as u64;
        }
        let mut left = (TOTAL as u64 - m as u64).saturating_sub(used) as usize;
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| rema[b].total_cmp(&rema[a]).then(a.cmp(&b)));
        let mut i = 0;
        while left > 0 {
            freq[order[i % m]] += 1;
            left -= 1;
            i += 1;
        }
        Self::from_frequencies(&freq)
    }

    /// Exact frequencies; each must be ≥ 1 and they must sum to [`TOTAL`].
    pub fn from_frequencies(freq: &[u32]) -> Result<Self> {
        if freq.is_empty() || freq.contains(&0) {
            return invalid("every symbol needs frequency ≥ 1");
        }
        let mut cum = Vec::with_capacity(freq.len() + 1);
        cum.push(0u32);
        let mut acc = 0u64;
        for &f in freq {
            acc += f as u64;
            if acc > TOTAL as u64 {
                return invalid("frequencies exceed TOTAL");
            }
            cum.push(acc as u32);
        }
        if acc != TOTAL as u64 {
            return invalid(format!("frequencies sum to {acc}, expected {TOTAL}"));
        }
        Ok(Self { cum })
    }

    pub fn uniform(m: usize) -> Result<Self> {
        Self::from_probabilities(&vec![1.0; m])
    }

    pub fn cardinality(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn freq(&self, s: usize) -> u32 {
        self.cum[s + 1] - self.cum[s]
    }

    pub fn frequencies(&self) -> Vec<u32> {
        self.cum.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn cum_freq(&self) -> &[u32] {
        &self.cum
    }

    /// `−log2(freq/TOTAL)`; zero for a single-symbol alphabet.
    pub fn ideal_bits(&self, s: usize) -> f64 {
        if self.cardinality() == 1 {
            return 0.0;
        }
        TOTAL_BITS as f64 - (self.freq(s) as f64).log2()
    }

    fn lookup(&self, v: u32) -> usize {
        self.cum.partition_point(|&c| c <= v) - 1
    }
}

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    primed: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u32::MAX, cache: 0, pending: 1, primed: false, out: Vec::new() }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            while self.pending > 0 {
                if self.primed {
                    self.out.push(byte.wrapping_add(carry));
                } else {
                    self.primed = true;
                }
                byte = 0xFF;
                self.pending -= 1;
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Codes `s` under `model`. Single-symbol alphabets cost nothing and are
    /// skipped.
    pub fn encode(&mut self, s: usize, model: &SymbolModel) -> Result<()> {
        let m = model.cardinality();
        if s >= m {
            return invalid(format!("symbol {s} outside alphabet of size {m}"));
        }
        if m == 1 {
            return Ok(());
        }
        let r = self.range >> TOTAL_BITS;
        self.low += r as u64 * model.cum[s] as u64;
        self.range = r * model.freq(s);
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
        Ok(())
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(AtcError::CorruptStream(format!("range-coded payload of {} bytes is shorter than the 4-byte flush", bytes.len())));
        }
        let code = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
        Ok(Self { code, range: u32::MAX, bytes, pos: 4 })
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| AtcError::CorruptStream("range-coded payload truncated".into()))?;
        self.pos += 1;
        Ok(b)
    }

    pub fn decode(&mut self, model: &SymbolModel) -> Result<usize> {
        if model.cardinality() == 1 {
            return Ok(0);
        }
        let r = self.range >> TOTAL_BITS;
        let v = self.code / r;
        if v >= TOTAL {
            return Err(AtcError::CorruptStream("code value outside the coding interval".into()));
        }
        let s = model.lookup(v);
        self.code -= r * model.cum[s];
        self.range = r * model.freq(s);
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(s)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    /// Fails unless every input byte was consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(AtcError::CorruptStream(format!(
                "{} trailing bytes after the range-coded payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn ac_encode(symbols: &[(usize, &SymbolModel)]) -> Result<Vec<u8>> {
    let mut enc = RangeEncoder::new();
    for &(s, m) in symbols {
        enc.encode(s, m)?;
    }
    Ok(enc.finish())
}

pub fn ac_decode(bytes: &[u8], models: &[&SymbolModel]) -> Result<Vec<usize>> {
    let mut dec = RangeDecoder::new(bytes)?;
    let out = models.iter().map(|m| dec.decode(m)).collect::<Result<Vec<_>>>()?;
    dec.finish()?;
    Ok(out)
}

/// `⌈log2 n⌉` for `n ≥ 1`, exact.
fn ceil_log2(n: &BigUint) -> u64 {
    if *n <= BigUint::from(1u32) {
        0
    } else {
        (n - 1u32).bits()
    }
}

fn product(levels: &[u32]) -> BigUint {
    levels.iter().fold(BigUint::from(1u32), |acc, &l| acc * l)
}

/// `⌈log2 K⌉ + ⌈log2 Π L_n⌉`
pub fn flc_bits(levels: &[u32], k: usize) -> u64 {
    ceil_log2(&BigUint::from(k.max(1))) + ceil_log2(&product(levels))
}

/// Packs a mode index and per-coefficient indices into `⌈flc_bits/8⌉`
/// little-endian bytes. The low `⌈log2 K⌉` bits carry the mode; the rest is
/// the mixed-radix number `j_0 + L_0(j_1 + L_1(j_2 + …))`.
pub fn flc_pack(mode: usize, k: usize, indices: &[u32], levels: &[u32]) -> Result<Vec<u8>> {
    if mode >= k || indices.len() != levels.len() {
        return invalid("mode or index vector does not fit the code layout");
    }
    let mut acc = BigUint::from(0u32);
    for (&j, &l) in indices.iter().zip(levels).rev() {
        if j >= l {
            return invalid(format!("index {j} outside {l} levels"));
        }
        acc = acc * l + j;
    }
    let kbits = ceil_log2(&BigUint::from(k));
    let value = (acc << kbits) | BigUint::from(mode);
    let nbytes = flc_bits(levels, k).div_ceil(8) as usize;
    let mut bytes = value.to_bytes_le();
    if bytes == [0] {
        bytes.clear();
    }
    bytes.resize(nbytes, 0);
    Ok(bytes)
}

/// Recovers the mode index from an FLC segment.
pub fn flc_mode(bytes: &[u8], k: usize) -> Result<usize> {
    let kbits = ceil_log2(&BigUint::from(k.max(1)));
    let value = BigUint::from_bytes_le(bytes);
    let mask = (BigUint::from(1u32) << kbits) - 1u32;
    let mode = (value & mask).iter_u64_digits().next().unwrap_or(0) as usize;
    if mode >= k {
        return Err(AtcError::CorruptStream(format!("mode {mode} outside K = {k}")));
    }
    Ok(mode)
}

/// Inverse of [`flc_pack`] once the level row for the decoded mode is known.
pub fn flc_unpack(bytes: &[u8], k: usize, levels: &[u32]) -> Result<(usize, Vec<u32>)> {
    let expected = flc_bits(levels, k).div_ceil(8) as usize;
    if bytes.len() != expected {
        return Err(AtcError::CorruptStream(format!("FLC segment has {} bytes, expected {expected}", bytes.len())));
    }
    let mode = flc_mode(bytes, k)?;
    let kbits = ceil_log2(&BigUint::from(k));
    let mut rest = BigUint::from_bytes_le(bytes) >> kbits;
    let mut out = Vec::with_capacity(levels.len());
    for &l in levels {
        let lb = BigUint::from(l);
        let digit = &rest % &lb;
        out.push(digit.iter_u32_digits().next().unwrap_or(0));
        rest /= lb;
    }
    if rest != BigUint::from(0u32) {
        return Err(AtcError::CorruptStream("FLC value exceeds the mixed-radix range".into()));
    }
    Ok((mode, out))
}
