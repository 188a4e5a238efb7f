//! Golomb position coding of sparse updates.
//!
//! The distance between successive nonzero positions of a sparse update is
//! roughly geometric with success probability `p` (the sparsity), so each
//! distance `d >= 1` is written as a Golomb code with modulus `2^b*`:
//! `q = (d - 1) >> b*` ones, a terminating zero, then the `b*` low bits of
//! `d - 1`. The first distance is measured from a virtual position `-1`.
//! Bits are packed MSB-first.
//!
//! Three framings are provided:
//!
//! * the **wire** framing metered by the simulator. Model length and `b*`
//!   are session parameters known to both ends, so a ternary message is
//!   `gamma(k + 1) | mu: f32 | positions | k sign bits`;
//! * the self-describing **STC1** file format used by the `codec` tool;
//! * a **sparse-float** framing for sparse updates whose values are not
//!   ternary: `gamma(k + 1) | b*: u8 | positions | k f32 values`.

use std::f64::consts::LN_2;

use crate::compress::{SparseTernaryUpdate, SparseUpdate};
use crate::error::{Error, Result};

/// Append-only bit buffer, MSB-first within each byte.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BitStream {
    bytes: Vec<u8>,
    len: usize,
}

impl BitStream {
    pub fn new() -> Self {
        Self::default()
    }

    /// Wraps `bytes`, of which only the first `len` bits are meaningful.
    pub fn from_bytes(bytes: Vec<u8>, len: usize) -> Result<Self> {
        if len > bytes.len() * 8 {
            return Err(Error::decode("bit length exceeds buffer"));
        }
        Ok(BitStream { bytes, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn push_bit(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.len() - 1;
            self.bytes[last] |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, width: u32) {
        for shift in (0..width).rev() {
            self.push_bit((value >> shift) & 1 == 1);
        }
    }

    pub fn push_unary(&mut self, q: u64) {
        for _ in 0..q {
            self.push_bit(true);
        }
        self.push_bit(false);
    }

    /// Elias-gamma code of `n >= 1`.
    pub fn push_gamma(&mut self, n: u64) {
        debug_assert!(n >= 1);
        let width = 64 - n.leading_zeros();
        for _ in 1..width {
            self.push_bit(false);
        }
        self.push_bits(n, width);
    }

    pub fn extend(&mut self, other: &BitStream) {
        let mut r = other.reader();
        while let Ok(b) = r.read_bit() {
            self.push_bit(b);
        }
    }

    pub fn reader(&self) -> BitReader<'_> {
        BitReader {
            bytes: &self.bytes,
            len: self.len,
            pos: 0,
        }
    }

    pub fn bit(&self, i: usize) -> Option<bool> {
        (i < self.len).then(|| self.bytes[i / 8] & (0x80 >> (i % 8)) != 0)
    }
}

/// Cursor over a bit buffer; reads past the end fail.
#[derive(Clone, Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    len: usize,
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn over_bytes(bytes: &'a [u8]) -> Self {
        BitReader {
            bytes,
            len: bytes.len() * 8,
            pos: 0,
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.len - self.pos
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        if self.pos >= self.len {
            return Err(Error::decode("unexpected end of bit stream"));
        }
        let bit = self.bytes[self.pos / 8] & (0x80 >> (self.pos % 8)) != 0;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, width: u32) -> Result<u64> {
        let mut v = 0u64;
        for _ in 0..width {
            v = (v << 1) | u64::from(self.read_bit()?);
        }
        Ok(v)
    }

    pub fn read_unary(&mut self) -> Result<u64> {
        let mut q = 0;
        while self.read_bit()? {
            q += 1;
        }
        Ok(q)
    }

    pub fn read_gamma(&mut self) -> Result<u64> {
        let mut zeros = 0u32;
        while !self.read_bit()? {
            zeros += 1;
            if zeros > 63 {
                return Err(Error::decode("gamma code too long"));
            }
        }
        let rest = self.read_bits(zeros)?;
        Ok((1u64 << zeros) | rest)
    }

    pub fn read_f32(&mut self) -> Result<f32> {
        Ok(f32::from_bits(self.read_bits(32)? as u32))
    }
}

fn check_open_unit(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::argument(format!("sparsity {p} outside (0, 1)")))
    }
}

/// Golomb bit width `b* = 1 + floor(log2(ln(phi - 1) / ln(1 - p)))`,
/// clamped to at least 1.
pub fn golomb_param(p: f64) -> Result<u8> {
    check_open_unit(p)?;
    let phi = (5f64.sqrt() + 1.0) / 2.0;
    let ratio = (phi - 1.0).ln() / (1.0 - p).ln();
    let b = 1.0 + ratio.log2().floor();
    Ok(b.clamp(1.0, 62.0) as u8)
}

/// Golomb width for a sparse update with `count` nonzeros out of `len`,
/// using the empirical density as the sparsity.
pub fn golomb_param_for_density(count: usize, len: usize) -> u8 {
    if count == 0 || count >= len {
        return 1;
    }
    golomb_param(count as f64 / len as f64).unwrap_or(1)
}

/// Mean position bits per nonzero, `b* + 1 / (1 - (1 - p)^(2^b*))`.
pub fn expected_position_bits(p: f64) -> Result<f64> {
    let b = golomb_param(p)?;
    Ok(f64::from(b) + 1.0 / (1.0 - (1.0 - p).powf(2f64.powi(i32::from(b)))))
}

fn binary_entropy(p: f64) -> f64 {
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln()) / LN_2
}

/// Bits per parameter of a sparse update with 32-bit values.
pub fn entropy_sparse(p: f64) -> Result<f64> {
    check_open_unit(p)?;
    Ok(binary_entropy(p) + 32.0 * p)
}

/// Bits per parameter of a sparse ternary update.
pub fn entropy_stc(p: f64) -> Result<f64> {
    check_open_unit(p)?;
    Ok(binary_entropy(p) + p)
}

/// Bits per parameter spent beyond the ternary entropy at density `p`, for a
/// message of `bits` covering `len` parameters.
pub fn encoding_inefficiency(bits: usize, len: usize, p: f64) -> Result<f64> {
    if len == 0 {
        return Err(Error::argument("no parameters"));
    }
    Ok(bits as f64 / len as f64 - entropy_stc(p)?)
}

/// Golomb-codes the gaps between strictly increasing `positions`.
pub fn encode_positions(positions: &[usize], bstar: u8) -> BitStream {
    let mut out = BitStream::new();
    write_positions(&mut out, positions, bstar);
    out
}

fn write_positions(out: &mut BitStream, positions: &[usize], bstar: u8) {
    let modulus_bits = u32::from(bstar);
    let mut prev: i64 = -1;
    for &pos in positions {
        let d = (pos as i64 - prev) as u64;
        debug_assert!(d >= 1);
        out.push_unary((d - 1) >> modulus_bits);
        out.push_bits(d - 1, modulus_bits);
        prev = pos as i64;
    }
}

/// Reads exactly `count` Golomb-coded positions, each below `len`.
fn read_positions(r: &mut BitReader<'_>, count: usize, bstar: u8, len: usize) -> Result<Vec<usize>> {
    let modulus_bits = u32::from(bstar);
    let mut positions = Vec::with_capacity(count);
    let mut next: u64 = 0;
    for _ in 0..count {
        let q = r.read_unary()?;
        let rem = r.read_bits(modulus_bits)?;
        let pos = q
            .checked_shl(modulus_bits)
            .filter(|v| v >> modulus_bits == q)
            .and_then(|v| v.checked_add(rem))
            .and_then(|v| v.checked_add(next))
            .ok_or_else(|| Error::decode("position overflow"))?;
        if pos >= len as u64 {
            return Err(Error::decode(format!("decoded position {pos} >= length {len}")));
        }
        positions.push(pos as usize);
        next = pos + 1;
    }
    Ok(positions)
}

/// Decodes a position stream until it is exhausted.
pub fn decode_positions(stream: &BitStream, bstar: u8, len: usize) -> Result<Vec<usize>> {
    let mut r = stream.reader();
    let mut positions = Vec::new();
    let mut next = 0usize;
    while r.remaining() > 0 {
        let q = r.read_unary()?;
        let rem = r.read_bits(u32::from(bstar))?;
        let gap = q
            .checked_shl(u32::from(bstar))
            .filter(|v| v >> bstar == q)
            .and_then(|v| v.checked_add(rem))
            .ok_or_else(|| Error::decode("position overflow"))?;
        let pos = (next as u64)
            .checked_add(gap)
            .filter(|&p| p < len as u64)
            .ok_or_else(|| Error::decode(format!("decoded position beyond length {len}")))?;
        positions.push(pos as usize);
        next = pos as usize + 1;
    }
    Ok(positions)
}

/// A Golomb-coded sparse ternary update.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedUpdate {
    pub len: u32,
    pub count: u32,
    pub mu: f32,
    pub bstar: u8,
    pub positions: BitStream,
    /// One bit per position, set for `-mu`.
    pub signs: BitStream,
}

/// Fixed part of the wire header: `mu` as an `f32`.
pub const WIRE_MU_BITS: usize = 32;

/// Length of the Elias-gamma code of `n >= 1`.
pub fn gamma_len(n: u64) -> usize {
    2 * (63 - n.leading_zeros() as usize) + 1
}

impl EncodedUpdate {
    pub fn header_bits(&self) -> usize {
        gamma_len(u64::from(self.count) + 1) + WIRE_MU_BITS
    }

    /// Serialized wire length in bits.
    pub fn total_bits(&self) -> usize {
        self.header_bits() + self.positions.len() + self.count as usize
    }

    pub fn to_wire(&self) -> BitStream {
        let mut out = BitStream::new();
        out.push_gamma(u64::from(self.count) + 1);
        out.push_bits(u64::from(self.mu.to_bits()), 32);
        out.extend(&self.positions);
        out.extend(&self.signs);
        out
    }

    /// Parses one wire message from `r`; `len` and `bstar` are session parameters.
    pub fn read_wire(r: &mut BitReader<'_>, len: usize, bstar: u8) -> Result<Self> {
        let count = r.read_gamma()? - 1;
        if count > len as u64 {
            return Err(Error::decode(format!("{count} positions in a tensor of length {len}")));
        }
        let count = count as usize;
        let mu = r.read_f32()?;
        let start = r.position();
        let positions = read_positions(r, count, bstar, len)?;
        let pos_bits = r.position() - start;
        let mut signs = BitStream::new();
        for _ in 0..count {
            signs.push_bit(r.read_bit()?);
        }
        Ok(EncodedUpdate {
            len: len as u32,
            count: count as u32,
            mu,
            bstar,
            positions: reencode_span(&positions, bstar, pos_bits)?,
            signs,
        })
    }

    pub fn from_wire(stream: &BitStream, len: usize, bstar: u8) -> Result<Self> {
        let mut r = stream.reader();
        let e = Self::read_wire(&mut r, len, bstar)?;
        if r.remaining() != 0 {
            return Err(Error::decode("trailing bits after wire message"));
        }
        Ok(e)
    }

    /// Self-describing `STC1` byte layout.
    pub fn to_file_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + (self.positions.len() + self.signs.len()) / 8 + 1);
        out.extend_from_slice(b"STC1");
        out.extend(self.len.to_be_bytes());
        out.extend(self.count.to_be_bytes());
        out.extend(self.mu.to_bits().to_be_bytes());
        out.push(self.bstar);
        let mut body = self.positions.clone();
        body.extend(&self.signs);
        out.extend_from_slice(body.as_bytes());
        out
    }

    pub fn from_file_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 17 {
            return Err(Error::decode("STC1 header truncated"));
        }
        if &bytes[..4] != b"STC1" {
            return Err(Error::decode("missing STC1 magic"));
        }
        let be = |o: usize| u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let len = be(4);
        let count = be(8);
        let mu = f32::from_bits(be(12));
        let bstar = bytes[16];
        if bstar == 0 || bstar > 62 {
            return Err(Error::decode(format!("invalid Golomb width {bstar}")));
        }
        if count > len {
            return Err(Error::decode("more positions than tensor entries"));
        }
        let body = &bytes[17..];
        let mut r = BitReader::over_bytes(body);
        let positions = read_positions(&mut r, count as usize, bstar, len as usize)?;
        let pos_bits = r.position();
        let mut signs = BitStream::new();
        for _ in 0..count {
            signs.push_bit(r.read_bit()?);
        }
        if r.remaining() >= 8 {
            return Err(Error::decode("trailing bytes after STC1 payload"));
        }
        while r.remaining() > 0 {
            if r.read_bit()? {
                return Err(Error::decode("nonzero padding"));
            }
        }
        Ok(EncodedUpdate {
            len,
            count,
            mu,
            bstar,
            positions: reencode_span(&positions, bstar, pos_bits)?,
            signs,
        })
    }
}

fn reencode_span(positions: &[usize], bstar: u8, expected_bits: usize) -> Result<BitStream> {
    let s = encode_positions(positions, bstar);
    if s.len() != expected_bits {
        return Err(Error::decode("non-canonical position stream"));
    }
    Ok(s)
}

/// Encodes `u` with the Golomb width derived from the sparsity `p`.
pub fn golomb_encode(u: &SparseTernaryUpdate, p: f64) -> Result<EncodedUpdate> {
    let bstar = golomb_param(p)?;
    Ok(golomb_encode_with(u, bstar))
}

pub fn golomb_encode_with(u: &SparseTernaryUpdate, bstar: u8) -> EncodedUpdate {
    let mut signs = BitStream::new();
    for &neg in u.negative() {
        signs.push_bit(neg);
    }
    EncodedUpdate {
        len: u.len() as u32,
        count: u.count() as u32,
        mu: u.mu(),
        bstar,
        positions: encode_positions(u.positions(), bstar),
        signs,
    }
}

pub fn golomb_decode(e: &EncodedUpdate) -> Result<SparseTernaryUpdate> {
    let positions = decode_positions(&e.positions, e.bstar, e.len as usize)?;
    if positions.len() != e.count as usize {
        return Err(Error::decode(format!(
            "position stream holds {} entries, header says {}",
            positions.len(),
            e.count
        )));
    }
    if e.signs.len() != positions.len() {
        return Err(Error::decode("sign bit count mismatch"));
    }
    let negative = (0..e.signs.len()).map(|i| e.signs.bit(i) == Some(true)).collect();
    SparseTernaryUpdate::new(e.len as usize, positions, negative, e.mu)
        .map_err(|err| Error::decode(err.to_string()))
}

/// Serialized wire length of an encoded ternary update, header included.
pub fn measure_bits(e: &EncodedUpdate) -> usize {
    e.total_bits()
}

/// Golomb-coded positions with one `f32` per nonzero.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSparse {
    pub len: u32,
    pub count: u32,
    pub bstar: u8,
    pub positions: BitStream,
    pub values: Vec<f32>,
}

impl EncodedSparse {
    pub fn header_bits(&self) -> usize {
        gamma_len(u64::from(self.count) + 1) + 8
    }

    pub fn total_bits(&self) -> usize {
        self.header_bits() + self.positions.len() + 32 * self.values.len()
    }

    pub fn to_wire(&self) -> BitStream {
        let mut out = BitStream::new();
        out.push_gamma(u64::from(self.count) + 1);
        out.push_bits(u64::from(self.bstar), 8);
        out.extend(&self.positions);
        for v in &self.values {
            out.push_bits(u64::from(v.to_bits()), 32);
        }
        out
    }

    pub fn read_wire(r: &mut BitReader<'_>, len: usize) -> Result<Self> {
        let count = r.read_gamma()? - 1;
        if count > len as u64 {
            return Err(Error::decode(format!("{count} positions in a tensor of length {len}")));
        }
        let bstar = r.read_bits(8)? as u8;
        if bstar == 0 || bstar > 62 {
            return Err(Error::decode(format!("invalid Golomb width {bstar}")));
        }
        let start = r.position();
        let positions = read_positions(r, count as usize, bstar, len)?;
        let pos_bits = r.position() - start;
        let values = (0..count).map(|_| r.read_f32()).collect::<Result<Vec<_>>>()?;
        Ok(EncodedSparse {
            len: len as u32,
            count: count as u32,
            bstar,
            positions: reencode_span(&positions, bstar, pos_bits)?,
            values,
        })
    }
}

/// Encodes a float-valued sparse update at its own density.
pub fn encode_sparse(u: &SparseUpdate) -> EncodedSparse {
    let bstar = golomb_param_for_density(u.count(), u.len());
    EncodedSparse {
        len: u.len() as u32,
        count: u.count() as u32,
        bstar,
        positions: encode_positions(u.positions(), bstar),
        values: u.values().to_vec(),
    }
}

pub fn decode_sparse(e: &EncodedSparse) -> Result<SparseUpdate> {
    let positions = decode_positions(&e.positions, e.bstar, e.len as usize)?;
    if positions.len() != e.count as usize || e.values.len() != positions.len() {
        return Err(Error::decode("sparse payload count mismatch"));
    }
    SparseUpdate::new(e.len as usize, positions, e.values.clone())
        .map_err(|err| Error::decode(err.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::{stc_compress, Densify};
    use crate::tensor::FlatTensor;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bits(s: &BitStream) -> String {
        (0..s.len()).map(|i| if s.bit(i).unwrap() { '1' } else { '0' }).collect()
    }

    fn ternary(len: usize, positions: &[usize], neg: &[bool], mu: f32) -> SparseTernaryUpdate {
        SparseTernaryUpdate::new(len, positions.to_vec(), neg.to_vec(), mu).unwrap()
    }

    #[test]
    fn golomb_width_examples() {
        // ln(0.618)/ln(0.99) = 47.88 -> log2 5.58 -> 6
        assert_eq!(golomb_param(0.01).unwrap(), 6);
        // ln(0.618)/ln(0.9975) = 192.2 -> log2 7.59 -> 8
        assert_eq!(golomb_param(0.0025).unwrap(), 8);
        // formula gives 0 at p = 0.5; clamped
        assert_eq!(golomb_param(0.5).unwrap(), 1);
        assert!(golomb_param(0.0).is_err());
        assert!(golomb_param(1.0).is_err());
    }

    #[test]
    fn single_position_at_zero() {
        let e = golomb_encode_with(&ternary(10, &[0], &[false], 1.0), 6);
        assert_eq!(bits(&e.positions), "0000000");
    }

    #[test]
    fn consecutive_positions_width_one() {
        let u = ternary(5, &[0, 1, 2], &[false, true, false], 0.5);
        let e = golomb_encode_with(&u, 1);
        assert_eq!(bits(&e.positions), "000000");
        assert_eq!(bits(&e.signs), "010");
        assert_eq!(golomb_decode(&e).unwrap(), u);
    }

    #[test]
    fn quotient_is_unary() {
        // d = 11, b* = 2: q = 2, r = 2
        let e = golomb_encode_with(&ternary(20, &[10], &[true], 1.0), 2);
        assert_eq!(bits(&e.positions), "11010");
    }

    #[test]
    fn empty_update() {
        let e = golomb_encode(&SparseTernaryUpdate::empty(7), 0.1).unwrap();
        assert!(e.positions.is_empty());
        assert_eq!(e.count, 0);
        assert_eq!(measure_bits(&e), e.header_bits());
        assert_eq!(golomb_decode(&e).unwrap(), SparseTernaryUpdate::empty(7));
    }

    #[test]
    fn unterminated_stream_is_rejected() {
        let mut s = BitStream::new();
        for _ in 0..12 {
            s.push_bit(true);
        }
        assert!(matches!(decode_positions(&s, 3, 1000), Err(Error::Decode(_))));
        let e = EncodedUpdate {
            len: 1000,
            count: 1,
            mu: 1.0,
            bstar: 3,
            positions: s,
            signs: BitStream::new(),
        };
        assert!(golomb_decode(&e).is_err());
    }

    #[test]
    fn position_beyond_length_is_rejected() {
        let e = golomb_encode_with(&ternary(100, &[90], &[false], 1.0), 4);
        let mut shorter = e.clone();
        shorter.len = 50;
        assert!(matches!(golomb_decode(&shorter), Err(Error::Decode(_))));
    }

    #[test]
    fn gamma_codes() {
        for n in [1u64, 2, 3, 4, 19, 20, 255, 256, 1 << 40] {
            let mut s = BitStream::new();
            s.push_gamma(n);
            assert_eq!(s.len(), gamma_len(n));
            assert_eq!(s.reader().read_gamma().unwrap(), n);
        }
        let mut s = BitStream::new();
        s.push_gamma(5);
        assert_eq!(bits(&s), "00101");
    }

    #[test]
    fn wire_and_file_roundtrip() {
        let u = ternary(300, &[3, 4, 150, 299], &[true, false, false, true], 0.75);
        let e = golomb_encode(&u, 0.02).unwrap();
        let wire = e.to_wire();
        assert_eq!(wire.len(), e.total_bits());
        assert_eq!(EncodedUpdate::from_wire(&wire, 300, e.bstar).unwrap(), e);
        let file = e.to_file_bytes();
        assert_eq!(&file[..4], b"STC1");
        assert_eq!(&file[4..8], &300u32.to_be_bytes());
        assert_eq!(EncodedUpdate::from_file_bytes(&file).unwrap(), e);
        assert!(EncodedUpdate::from_file_bytes(&file[..file.len() - 1]).is_err());
        assert!(EncodedUpdate::from_file_bytes(&file[..10]).is_err());
        let mut longer = file.clone();
        longer.push(0);
        assert!(EncodedUpdate::from_file_bytes(&longer).is_err());
    }

    #[test]
    fn entropy_values() {
        let ratio = entropy_sparse(0.01).unwrap() / entropy_stc(0.01).unwrap();
        assert!((ratio - 4.414).abs() < 0.005, "{ratio}");
        assert!((entropy_sparse(0.5).unwrap() - 17.0).abs() < 1e-12);
        assert!(entropy_sparse(1e-12).unwrap() < 1e-9);
        assert!(entropy_stc(1e-12).unwrap() < 1e-9);
        assert!(entropy_stc(1.0).is_err());
    }

    #[test]
    fn inefficiency_of_golomb_messages() {
        let p = 0.01;
        let len = 200_000;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = FlatTensor::from((0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>());
        let e = golomb_encode(&stc_compress(&x, p).unwrap(), p).unwrap();
        let eta = encoding_inefficiency(e.total_bits(), len, p).unwrap();
        // positions are uniform here, so gaps are close to geometric
        let predicted = p * (expected_position_bits(p).unwrap() + 1.0) - entropy_stc(p).unwrap();
        assert!(eta > 0.0 && (eta - predicted).abs() < 0.002, "{eta} vs {predicted}");
        assert!(encoding_inefficiency(10, 0, p).is_err());
    }

    #[test]
    fn expected_position_bits_values() {
        let v = expected_position_bits(0.0025).unwrap();
        assert!((v - (8.0 + 1.0 / (1.0 - 0.9975f64.powi(256)))).abs() < 1e-12);
        assert!((v - 10.11).abs() < 0.01);
        assert!((expected_position_bits(0.01).unwrap() - 8.108).abs() < 0.001);
    }

    /// Geometric gaps on {1, 2, ...} by inversion.
    fn geometric_gap(rng: &mut ChaCha8Rng, p: f64) -> u64 {
        let u: f64 = rng.random::<f64>();
        1 + ((1.0 - u).ln() / (1.0 - p).ln()).floor() as u64
    }

    #[test]
    fn expected_bits_match_monte_carlo_at_width_one() {
        let p = 0.3;
        assert_eq!(golomb_param(p).unwrap(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let total: u64 = (0..n)
            .map(|_| ((geometric_gap(&mut rng, p) - 1) >> 1) + 2)
            .sum();
        let measured = total as f64 / n as f64;
        let expected = expected_position_bits(p).unwrap();
        assert!((measured - expected).abs() / expected < 0.02, "{measured} vs {expected}");
    }

    #[test]
    fn measured_bits_at_one_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let len = 10_000;
        let mut bits_total = 0usize;
        let mut nonzeros = 0usize;
        for _ in 0..10_000 {
            let t = FlatTensor::from((0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>());
            let u = stc_compress(&t, 0.01).unwrap();
            let e = golomb_encode(&u, 0.01).unwrap();
            bits_total += e.positions.len();
            nonzeros += u.count();
        }
        let measured = bits_total as f64 / nonzeros as f64;
        let expected = expected_position_bits(0.01).unwrap();
        assert!((measured - expected).abs() / expected < 0.05, "{measured} vs {expected}");
    }

    #[test]
    fn logreg_sized_update_compresses_beyond_900x() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = FlatTensor::from((0..7850).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>());
        let e = golomb_encode(&stc_compress(&t, 1.0 / 400.0).unwrap(), 1.0 / 400.0).unwrap();
        assert!(measure_bits(&e) as f64 <= 7850.0 * 32.0 / 900.0, "{}", measure_bits(&e));
    }

    #[test]
    fn sparse_float_roundtrip() {
        let u = SparseUpdate::new(50, vec![0, 7, 49], vec![1.5, -0.25, 3.0]).unwrap();
        let e = encode_sparse(&u);
        assert_eq!(decode_sparse(&e).unwrap(), u);
        let wire = e.to_wire();
        assert_eq!(wire.len(), e.total_bits());
        let back = EncodedSparse::read_wire(&mut wire.reader(), 50).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn summed_sparse_updates_stay_within_linear_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let len = 20_000;
        for tau in [2usize, 3, 5, 10] {
            let mut sum = FlatTensor::zeros(len);
            let mut single_bits = 0usize;
            for _ in 0..tau {
                let t = FlatTensor::from((0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>());
                let s = crate::compress::top_k_sparse(&t, 0.01).unwrap();
                single_bits += encode_sparse(&s).total_bits();
                sum.add_assign(&s.densify()).unwrap();
            }
            let mean = single_bits as f64 / tau as f64;
            let summed = encode_sparse(&SparseUpdate::from_dense(&sum)).total_bits() as f64;
            assert!(summed <= tau as f64 * mean * 1.05, "tau {tau}: {summed} vs {mean}");
        }
    }

    fn arb_update() -> impl Strategy<Value = (SparseTernaryUpdate, f64)> {
        (1usize..=10_000, 0.001f64..0.5, any::<u64>()).prop_map(|(len, p, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = FlatTensor::from((0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>());
            (stc_compress(&t, p).unwrap(), p)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn decode_inverts_encode((u, p) in arb_update()) {
            let e = golomb_encode(&u, p).unwrap();
            prop_assert_eq!(&golomb_decode(&e).unwrap(), &u);
            let wire = e.to_wire();
            prop_assert_eq!(&EncodedUpdate::from_wire(&wire, u.len(), e.bstar).unwrap(), &e);
            prop_assert_eq!(&EncodedUpdate::from_file_bytes(&e.to_file_bytes()).unwrap(), &e);
        }

        #[test]
        fn adding_positions_never_shrinks_encoding(
            len in 2usize..5000,
            seed in any::<u64>(),
            bstar in 1u8..12,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = rng.random_range(1..=len / 2);
            let mut all: Vec<usize> = (0..len).collect();
            crate::model::shuffle(&mut all, &mut rng);
            let mut small = all[..k].to_vec();
            small.sort_unstable();
            let mut big = all[..2 * k].to_vec();
            big.sort_unstable();
            let eu = |pos: &[usize]| golomb_encode_with(
                &SparseTernaryUpdate::new(len, pos.to_vec(), vec![false; pos.len()], 1.0).unwrap(), bstar);
            prop_assert!(eu(&big).total_bits() >= eu(&small).total_bits());
        }
    }
}
