//! Static-model arithmetic coder with 32-bit precision.
//!
//! The frequency model is fixed for a whole stream and is transmitted out of
//! band (see [`FrequencyModel::to_header_bytes`]). Encoding the same symbols
//! under the same model always yields the same bytes.

const CODE_BITS: u32 = 32;
const TOP: u64 = (1 << CODE_BITS) - 1;
const HALF: u64 = 1 << (CODE_BITS - 1);
const QUARTER: u64 = 1 << (CODE_BITS - 2);

/// Largest total count the coder accepts.
pub const MAX_TOTAL: u64 = QUARTER;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CoderError {
    #[error("symbol {0} has zero probability under the model")]
    UnknownSymbol(u32),
    #[error("frequency model is empty")]
    EmptyModel,
    #[error("truncated or corrupt header")]
    BadHeader,
}

/// Symbol counts over the alphabet `0..len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyModel {
    counts: Vec<u32>,
    cumulative: Vec<u64>,
}

impl FrequencyModel {
    /// Counts taken as given; zero-count symbols cannot be encoded.
    pub fn from_counts(counts: Vec<u32>) -> Result<Self, CoderError> {
        let counts = rescale(counts);
        let mut cumulative = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0u64;
        cumulative.push(0);
        for &c in &counts {
            acc += u64::from(c);
            cumulative.push(acc);
        }
        if acc == 0 {
            return Err(CoderError::EmptyModel);
        }
        Ok(FrequencyModel { counts, cumulative })
    }

    /// Observed counts plus one for every symbol of the alphabet, so any
    /// symbol below `alphabet` can be coded.
    pub fn from_symbols(symbols: &[u32], alphabet: usize) -> Self {
        let alphabet = alphabet.max(symbols.iter().map(|&s| s as usize + 1).max().unwrap_or(0)).max(1);
        let mut counts = vec![1u32; alphabet];
        for &s in symbols {
            counts[s as usize] = counts[s as usize].saturating_add(1);
        }
        Self::from_counts(counts).expect("smoothed model is never empty")
    }

    pub fn alphabet_size(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        *self.cumulative.last().expect("cumulative has len + 1 entries")
    }

    /// Model entropy in bits per symbol.
    pub fn entropy_bits(&self) -> f64 {
        let total = self.total() as f64;
        self.counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = f64::from(c) / total;
                -p * p.log2()
            })
            .sum()
    }

    fn range_of(&self, symbol: u32) -> Result<(u64, u64), CoderError> {
        let s = symbol as usize;
        if s >= self.counts.len() || self.counts[s] == 0 {
            return Err(CoderError::UnknownSymbol(symbol));
        }
        Ok((self.cumulative[s], self.cumulative[s + 1]))
    }

    fn symbol_at(&self, target: u64) -> usize {
        // Last index whose cumulative start is <= target, skipping empty cells.
        self.cumulative.partition_point(|&c| c <= target) - 1
    }

    /// Fixed header: alphabet size then each count, all u32 little-endian.
    pub fn to_header_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 * (self.counts.len() + 1));
        out.extend_from_slice(&(self.counts.len() as u32).to_le_bytes());
        for &c in &self.counts {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    /// Parses a header, returning the model and the number of bytes read.
    pub fn from_header_bytes(bytes: &[u8]) -> Result<(Self, usize), CoderError> {
        let read_u32 = |at: usize| -> Result<u32, CoderError> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .ok_or(CoderError::BadHeader)
        };
        let len = read_u32(0)? as usize;
        let counts = (0..len).map(|i| read_u32(4 + 4 * i)).collect::<Result<Vec<_>, _>>()?;
        Ok((Self::from_counts(counts)?, 4 * (len + 1)))
    }
}

/// Scales counts down until their sum fits the coder, keeping nonzero
/// counts nonzero.
fn rescale(mut counts: Vec<u32>) -> Vec<u32> {
    while counts.iter().map(|&c| u64::from(c)).sum::<u64>() > MAX_TOTAL {
        for c in &mut counts {
            if *c > 0 {
                *c = (*c / 2).max(1);
            }
        }
    }
    counts
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    nbits: u64,
}

impl BitWriter {
    fn push(&mut self, bit: bool) {
        if self.nbits.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.last_mut().expect("byte pushed above");
            *last |= 0x80 >> (self.nbits % 8);
        }
        self.nbits += 1;
    }

    fn push_with_pending(&mut self, bit: bool, pending: &mut u64) {
        self.push(bit);
        for _ in 0..*pending {
            self.push(!bit);
        }
        *pending = 0;
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl BitReader<'_> {
    fn next(&mut self) -> u64 {
        let byte = self.bytes.get((self.pos / 8) as usize).copied().unwrap_or(0);
        let bit = (byte >> (7 - self.pos % 8)) & 1;
        self.pos += 1;
        u64::from(bit)
    }
}

/// Encodes `symbols`. An empty input gives an empty payload.
pub fn encode(symbols: &[u32], model: &FrequencyModel) -> Result<Vec<u8>, CoderError> {
    if symbols.is_empty() {
        return Ok(Vec::new());
    }
    let total = model.total();
    let mut out = BitWriter::default();
    let (mut low, mut high, mut pending) = (0u64, TOP, 0u64);
    for &symbol in symbols {
        let (lo, hi) = model.range_of(symbol)?;
        let range = high - low + 1;
        high = low + range * hi / total - 1;
        low += range * lo / total;
        loop {
            if high < HALF {
                out.push_with_pending(false, &mut pending);
            } else if low >= HALF {
                out.push_with_pending(true, &mut pending);
                low -= HALF;
                high -= HALF;
            } else if low >= QUARTER && high < 3 * QUARTER {
                pending += 1;
                low -= QUARTER;
                high -= QUARTER;
            } else {
                break;
            }
            low <<= 1;
            high = (high << 1) | 1;
        }
    }
    pending += 1;
    out.push_with_pending(low >= QUARTER, &mut pending);
    Ok(out.bytes)
}

/// Decodes exactly `n` symbols from `payload`.
pub fn decode(payload: &[u8], model: &FrequencyModel, n: usize) -> Vec<u32> {
    if n == 0 {
        return Vec::new();
    }
    let total = model.total();
    let mut input = BitReader { bytes: payload, pos: 0 };
    let mut value = 0u64;
    for _ in 0..CODE_BITS {
        value = (value << 1) | input.next();
    }
    let (mut low, mut high) = (0u64, TOP);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let range = high - low + 1;
        let target = ((value - low + 1) * total - 1) / range;
        let s = model.symbol_at(target);
        let (lo, hi) = (model.cumulative[s], model.cumulative[s + 1]);
        out.push(s as u32);
        high = low + range * hi / total - 1;
        low += range * lo / total;
        loop {
            if high < HALF {
            } else if low >= HALF {
                low -= HALF;
                high -= HALF;
                value -= HALF;
            } else if low >= QUARTER && high < 3 * QUARTER {
                low -= QUARTER;
                high -= QUARTER;
                value -= QUARTER;
            } else {
                break;
            }
            low <<= 1;
            high = (high << 1) | 1;
            value = (value << 1) | input.next();
        }
    }
    out
}

/// Self-contained stream: model header, symbol count (u32 LE), payload.
pub fn compress(symbols: &[u32], alphabet: usize) -> Vec<u8> {
    let model = FrequencyModel::from_symbols(symbols, alphabet);
    let mut out = model.to_header_bytes();
    out.extend_from_slice(&(symbols.len() as u32).to_le_bytes());
    out.extend(encode(symbols, &model).expect("smoothed model covers every symbol"));
    out
}

pub fn decompress(bytes: &[u8]) -> Result<Vec<u32>, CoderError> {
    let (model, used) = FrequencyModel::from_header_bytes(bytes)?;
    let n = bytes
        .get(used..used + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
        .ok_or(CoderError::BadHeader)?;
    Ok(decode(&bytes[used + 4..], &model, n))
}
