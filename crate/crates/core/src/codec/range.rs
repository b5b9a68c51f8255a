//! Adaptive order-0 range coder over `i32` symbols.
//!
//! The alphabet is discovered on the fly: an escape symbol announces a value
//! not yet in the model, whose zigzag code is then sent as an Exp-Golomb
//! string of equiprobable bits. Every known symbol carries a count of one
//! plus its occurrences; counts are halved when the total reaches
//! [`MAX_TOTAL`].
//!
//! Stream layout: `u32 n` | range-coded payload | `u32 crc32(n ‖ payload)`.

use crate::error::{Error, Result};

pub const MAX_TOTAL: u32 = 1 << 16;
const TOP: u32 = 1 << 24;
const ESCAPE_COUNT: u32 = 1;

struct Model {
    values: Vec<i32>,
    counts: Vec<u32>,
    total: u32,
}

impl Model {
    fn new() -> Self {
        Self { values: Vec::new(), counts: Vec::new(), total: ESCAPE_COUNT }
    }

    fn find(&self, v: i32) -> Option<(usize, u32)> {
        let mut cum = 0;
        for (k, (&s, &c)) in self.values.iter().zip(&self.counts).enumerate() {
            if s == v {
                return Some((k, cum));
            }
            cum += c;
        }
        None
    }

    fn escape_cum(&self) -> u32 {
        self.total - ESCAPE_COUNT
    }

    /// Symbol slot containing cumulative frequency `f`; `None` is the escape.
    fn lookup(&self, f: u32) -> Option<(usize, u32)> {
        let mut cum = 0;
        for (k, &c) in self.counts.iter().enumerate() {
            if f < cum + c {
                return Some((k, cum));
            }
            cum += c;
        }
        None
    }

    fn bump(&mut self, k: usize) {
        self.counts[k] += 1;
        self.total += 1;
        self.rescale();
    }

    fn insert(&mut self, v: i32) {
        // Laplace prior of one plus the occurrence just coded.
        self.values.push(v);
        self.counts.push(2);
        self.total += 2;
        self.rescale();
    }

    fn rescale(&mut self) {
        if self.total >= MAX_TOTAL {
            let mut t = ESCAPE_COUNT;
            for c in &mut self.counts {
                *c = (*c).div_ceil(2);
                t += *c;
            }
            self.total = t;
        }
    }
}

struct Encoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Encoder {
    fn new() -> Self {
        Self { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new() }
    }

    fn encode(&mut self, cum: u32, freq: u32, total: u32) {
        let r = self.range / total;
        self.low += u64::from(r) * u64::from(cum);
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn encode_bit(&mut self, bit: u32) {
        self.encode(bit, 1, 2);
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low >= 1 << 32 {
            let carry = (self.low >> 32) as u8;
            let mut c = self.cache;
            loop {
                self.out.push(c.wrapping_add(carry));
                c = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        // The first emitted byte is always the initial zero cache.
        self.out.remove(0);
        self.out
    }
}

struct Decoder<'a> {
    code: u32,
    range: u32,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn new(data: &'a [u8]) -> Self {
        let mut d = Self { code: 0, range: u32::MAX, data, pos: 0 };
        for _ in 0..4 {
            d.code = (d.code << 8) | u32::from(d.next_byte());
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.data.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    fn freq(&mut self, total: u32) -> (u32, u32) {
        let r = self.range / total;
        ((self.code / r).min(total - 1), r)
    }

    fn consume(&mut self, r: u32, cum: u32, freq: u32) {
        self.code -= r * cum;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | u32::from(self.next_byte());
        }
    }

    fn decode_bit(&mut self) -> u32 {
        let (f, r) = self.freq(2);
        self.consume(r, f, 1);
        f
    }
}

fn zigzag(v: i32) -> u32 {
    ((v << 1) ^ (v >> 31)) as u32
}

fn unzigzag(z: u32) -> i32 {
    ((z >> 1) as i32) ^ -((z & 1) as i32)
}

fn encode_value(enc: &mut Encoder, v: i32) {
    let z = u64::from(zigzag(v)) + 1;
    let bits = 64 - z.leading_zeros();
    for _ in 1..bits {
        enc.encode_bit(0);
    }
    for k in (0..bits).rev() {
        enc.encode_bit(((z >> k) & 1) as u32);
    }
}

fn decode_value(dec: &mut Decoder) -> Result<i32> {
    let mut zeros = 0;
    while dec.decode_bit() == 0 {
        zeros += 1;
        if zeros > 32 {
            return Err(Error::Decode("malformed escape value".into()));
        }
    }
    let mut z: u64 = 1;
    for _ in 0..zeros {
        z = (z << 1) | u64::from(dec.decode_bit());
    }
    u32::try_from(z - 1)
        .map(unzigzag)
        .map_err(|_| Error::Decode("escape value out of range".into()))
}

/// Encodes `symbols` into a self-checking byte stream.
pub fn entropy_encode(symbols: &[i32]) -> Vec<u8> {
    let n = u32::try_from(symbols.len()).expect("symbol count fits u32");
    let mut bytes = n.to_le_bytes().to_vec();
    if !symbols.is_empty() {
        let mut model = Model::new();
        let mut enc = Encoder::new();
        for &s in symbols {
            match model.find(s) {
                Some((k, cum)) => {
                    enc.encode(cum, model.counts[k], model.total);
                    model.bump(k);
                }
                None => {
                    enc.encode(model.escape_cum(), ESCAPE_COUNT, model.total);
                    encode_value(&mut enc, s);
                    model.insert(s);
                }
            }
        }
        bytes.extend(enc.finish());
    }
    let crc = crc32fast::hash(&bytes);
    bytes.extend(crc.to_le_bytes());
    bytes
}

/// Decodes exactly `n` symbols, verifying the length field and checksum.
pub fn entropy_decode(bytes: &[u8], n: usize) -> Result<Vec<i32>> {
    if bytes.len() < 8 {
        return Err(Error::Decode("entropy stream shorter than its framing".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let crc = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != crc {
        return Err(Error::Decode("entropy stream checksum mismatch".into()));
    }
    let declared = u32::from_le_bytes(body[..4].try_into().expect("4 bytes")) as usize;
    if declared != n {
        return Err(Error::Decode(format!("entropy stream holds {declared} symbols, expected {n}")));
    }
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return Ok(out);
    }
    let mut model = Model::new();
    let mut dec = Decoder::new(&body[4..]);
    for _ in 0..n {
        let (f, r) = dec.freq(model.total);
        match model.lookup(f) {
            Some((k, cum)) => {
                dec.consume(r, cum, model.counts[k]);
                out.push(model.values[k]);
                model.bump(k);
            }
            None => {
                dec.consume(r, model.escape_cum(), ESCAPE_COUNT);
                let v = decode_value(&mut dec)?;
                if model.find(v).is_some() {
                    return Err(Error::Decode("escape announced a known symbol".into()));
                }
                out.push(v);
                model.insert(v);
            }
        }
    }
    Ok(out)
}

/// Empirical order-0 entropy of `symbols`, in bits per symbol.
pub fn empirical_entropy(symbols: &[i32]) -> f64 {
    if symbols.is_empty() {
        return 0.0;
    }
    let mut counts = std::collections::HashMap::new();
    for &s in symbols {
        *counts.entry(s).or_insert(0usize) += 1;
    }
    let n = symbols.len() as f64;
    counts.values().map(|&c| {
        let p = c as f64 / n;
        -p * p.log2()
    }).sum()
}
