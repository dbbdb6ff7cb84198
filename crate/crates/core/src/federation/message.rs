//! Wire messages and their binary frames.
//!
//! A frame is `"FTF1"`, a one-byte message type, a little-endian `u32`
//! payload length, then the payload. All integers and reals are
//! little-endian; matrices are `u32 rows, u32 cols` followed by row-major
//! `f64`s; polynomials are `u64 modulus, u32 len` followed by `u64` residues.
//!
//! No variant can carry tensor entries, and factor-carrying variants hold a
//! [`FeatureMode`], which cannot be the patient mode.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use crate::align::{RegionLabel, SetPolynomial};
use crate::error::{Error, Result};
use crate::tensor::FactorMatrix;

pub const MAGIC: [u8; 4] = *b"FTF1";
pub const HEADER_LEN: usize = 9;
/// Largest accepted payload, 1 GiB.
pub const MAX_PAYLOAD: usize = 1 << 30;

/// A tensor mode other than the patient mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureMode(u16);

impl FeatureMode {
    pub fn new(mode: usize) -> Result<Self> {
        match u16::try_from(mode) {
            Ok(m) if m > 0 => Ok(Self(m)),
            _ => Err(Error::Protocol(format!("mode {mode} cannot be sent over the wire"))),
        }
    }

    pub fn get(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignStatus {
    Ok,
    /// Region sizes disagreed; every party re-encodes with fresh randomness.
    Retry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0,
    AlignPoly = 1,
    AlignPairwiseSums = 2,
    AlignRegionSizes = 3,
    AlignGlobalSizes = 4,
    LocalFeatureFactor = 5,
    GlobalFeatureFactor = 6,
    MultiplierH = 7,
    RoundComplete = 8,
    Converged = 9,
    Abort = 10,
}

impl MsgType {
    fn from_byte(b: u8) -> Option<Self> {
        use MsgType::*;
        Some(match b {
            0 => Hello,
            1 => AlignPoly,
            2 => AlignPairwiseSums,
            3 => AlignRegionSizes,
            4 => AlignGlobalSizes,
            5 => LocalFeatureFactor,
            6 => GlobalFeatureFactor,
            7 => MultiplierH,
            8 => RoundComplete,
            9 => Converged,
            10 => Abort,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Participants send their id; the coordinator answers with `None`.
    Hello { hospital: Option<u16> },
    AlignPoly {
        attempt: u32,
        mode: FeatureMode,
        poly: SetPolynomial,
    },
    /// `f_k + f_j` for every other hospital `j`.
    AlignPairwiseSums {
        attempt: u32,
        mode: FeatureMode,
        sums: Vec<(u16, SetPolynomial)>,
    },
    AlignRegionSizes {
        attempt: u32,
        mode: FeatureMode,
        sizes: BTreeMap<RegionLabel, u32>,
    },
    AlignGlobalSizes {
        attempt: u32,
        mode: FeatureMode,
        status: AlignStatus,
        sizes: BTreeMap<RegionLabel, u32>,
    },
    LocalFeatureFactor {
        round: u32,
        mode: FeatureMode,
        factor: FactorMatrix,
    },
    GlobalFeatureFactor {
        round: u32,
        mode: FeatureMode,
        factor: FactorMatrix,
    },
    MultiplierH {
        round: u32,
        mode: FeatureMode,
        multiplier: FactorMatrix,
    },
    /// End-of-round report: local squared error, cell count and compute time.
    RoundComplete {
        round: u32,
        loss: f64,
        cells: f64,
        compute_seconds: f64,
    },
    Converged { round: u32, stop: bool },
    Abort { reason: String },
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Hello { .. } => MsgType::Hello,
            Message::AlignPoly { .. } => MsgType::AlignPoly,
            Message::AlignPairwiseSums { .. } => MsgType::AlignPairwiseSums,
            Message::AlignRegionSizes { .. } => MsgType::AlignRegionSizes,
            Message::AlignGlobalSizes { .. } => MsgType::AlignGlobalSizes,
            Message::LocalFeatureFactor { .. } => MsgType::LocalFeatureFactor,
            Message::GlobalFeatureFactor { .. } => MsgType::GlobalFeatureFactor,
            Message::MultiplierH { .. } => MsgType::MultiplierH,
            Message::RoundComplete { .. } => MsgType::RoundComplete,
            Message::Converged { .. } => MsgType::Converged,
            Message::Abort { .. } => MsgType::Abort,
        }
    }

    /// Short human-readable tag for protocol errors.
    pub fn describe(&self) -> String {
        format!("{:?}", self.msg_type())
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) -> Result<()> {
        let n = u32::try_from(n).map_err(|_| Error::Protocol(format!("length {n} does not fit in u32")))?;
        self.u32(n);
        Ok(())
    }
    fn matrix(&mut self, m: &FactorMatrix) -> Result<()> {
        self.len(m.rows())?;
        self.len(m.rank())?;
        for &v in m.as_slice() {
            self.f64(v);
        }
        Ok(())
    }
    fn poly(&mut self, p: &SetPolynomial) -> Result<()> {
        self.u64(p.modulus());
        self.len(p.coeffs().len())?;
        for &c in p.coeffs() {
            self.u64(c);
        }
        Ok(())
    }
    fn sizes(&mut self, sizes: &BTreeMap<RegionLabel, u32>) -> Result<()> {
        self.len(sizes.len())?;
        for (label, &count) in sizes {
            self.u32(label.mask());
            self.u32(count);
        }
        Ok(())
    }
}

/// Serializes `m` into one frame.
pub fn encode_frame(m: &Message) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    match m {
        Message::Hello { hospital } => {
            if let Some(id) = hospital {
                w.u16(*id);
            }
        }
        Message::AlignPoly { attempt, mode, poly } => {
            w.u32(*attempt);
            w.u16(mode.0);
            w.poly(poly)?;
        }
        Message::AlignPairwiseSums { attempt, mode, sums } => {
            w.u32(*attempt);
            w.u16(mode.0);
            w.len(sums.len())?;
            for (other, poly) in sums {
                w.u16(*other);
                w.poly(poly)?;
            }
        }
        Message::AlignRegionSizes { attempt, mode, sizes } => {
            w.u32(*attempt);
            w.u16(mode.0);
            w.sizes(sizes)?;
        }
        Message::AlignGlobalSizes {
            attempt,
            mode,
            status,
            sizes,
        } => {
            w.u32(*attempt);
            w.u16(mode.0);
            w.u8(match status {
                AlignStatus::Ok => 0,
                AlignStatus::Retry => 1,
            });
            w.sizes(sizes)?;
        }
        Message::LocalFeatureFactor { round, mode, factor }
        | Message::GlobalFeatureFactor { round, mode, factor }
        | Message::MultiplierH {
            round,
            mode,
            multiplier: factor,
        } => {
            w.u32(*round);
            w.u16(mode.0);
            w.matrix(factor)?;
        }
        Message::RoundComplete {
            round,
            loss,
            cells,
            compute_seconds,
        } => {
            w.u32(*round);
            w.f64(*loss);
            w.f64(*cells);
            w.f64(*compute_seconds);
        }
        Message::Converged { round, stop } => {
            w.u32(*round);
            w.u8(u8::from(*stop));
        }
        Message::Abort { reason } => {
            w.len(reason.len())?;
            w.0.extend_from_slice(reason.as_bytes());
        }
    }
    let payload = w.0;
    if payload.len() > MAX_PAYLOAD {
        return Err(Error::Protocol(format!("payload of {} bytes exceeds the limit", payload.len())));
    }
    let mut frame = Vec::with_capacity(HEADER_LEN + payload.len());
    frame.extend_from_slice(&MAGIC);
    frame.push(m.msg_type() as u8);
    frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    frame.extend_from_slice(&payload);
    Ok(frame)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Decode {
            offset: self.pos,
            reason: reason.into(),
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated: need {n} bytes, {} left", self.buf.len() - self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    /// A count of items of `item_size` bytes each, checked against what is left.
    fn count(&mut self, item_size: usize) -> Result<usize> {
        let at = self.pos;
        let n = self.u32()? as usize;
        if n.saturating_mul(item_size) > self.buf.len() - self.pos {
            return Err(Error::Decode {
                offset: at,
                reason: format!("count {n} overruns the payload"),
            });
        }
        Ok(n)
    }
    fn mode(&mut self) -> Result<FeatureMode> {
        let at = self.pos;
        match self.u16()? {
            0 => Err(Error::Decode {
                offset: at,
                reason: "patient mode is never transmitted".into(),
            }),
            m => Ok(FeatureMode(m)),
        }
    }
    fn matrix(&mut self) -> Result<FactorMatrix> {
        let at = self.pos;
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.saturating_mul(8) <= self.buf.len() - self.pos)
            .ok_or_else(|| Error::Decode {
                offset: at,
                reason: format!("{rows}x{cols} matrix overruns the payload"),
            })?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        FactorMatrix::from_vec(rows, cols, data).map_err(|e| Error::Decode {
            offset: at,
            reason: e.to_string(),
        })
    }
    fn poly(&mut self) -> Result<SetPolynomial> {
        let at = self.pos;
        let modulus = self.u64()?;
        let n = self.count(8)?;
        let coeffs = (0..n).map(|_| self.u64()).collect::<Result<Vec<_>>>()?;
        SetPolynomial::new(modulus, coeffs).map_err(|e| Error::Decode {
            offset: at,
            reason: e.to_string(),
        })
    }
    fn sizes(&mut self) -> Result<BTreeMap<RegionLabel, u32>> {
        let n = self.count(8)?;
        let mut out = BTreeMap::new();
        for _ in 0..n {
            let at = self.pos;
            let label = RegionLabel::new(self.u32()?).map_err(|e| Error::Decode {
                offset: at,
                reason: e.to_string(),
            })?;
            let count = self.u32()?;
            if out.insert(label, count).is_some() {
                return Err(Error::Decode {
                    offset: at,
                    reason: format!("region {} listed twice", label.mask()),
                });
            }
        }
        Ok(out)
    }
}

/// Parses and validates a frame header; returns the message type and payload length.
pub fn decode_header(header: &[u8]) -> Result<(MsgType, usize)> {
    if header.len() < HEADER_LEN {
        return Err(Error::Decode {
            offset: header.len(),
            reason: format!("truncated header: {} of {HEADER_LEN} bytes", header.len()),
        });
    }
    if header[..4] != MAGIC {
        return Err(Error::Decode {
            offset: 0,
            reason: format!("bad magic {:02x?}", &header[..4]),
        });
    }
    let ty = MsgType::from_byte(header[4]).ok_or_else(|| Error::Decode {
        offset: 4,
        reason: format!("unknown message type {}", header[4]),
    })?;
    let len = u32::from_le_bytes(header[5..9].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(Error::Decode {
            offset: 5,
            reason: format!("payload length {len} exceeds the limit"),
        });
    }
    Ok((ty, len))
}

/// Parses exactly one frame; trailing bytes are an error.
pub fn decode_frame(bytes: &[u8]) -> Result<Message> {
    let (ty, len) = decode_header(bytes)?;
    if bytes.len() - HEADER_LEN != len {
        return Err(Error::Decode {
            offset: bytes.len().min(HEADER_LEN + len),
            reason: format!(
                "payload length {len} but {} bytes follow the header",
                bytes.len() - HEADER_LEN
            ),
        });
    }
    let mut r = Reader {
        buf: bytes,
        pos: HEADER_LEN,
    };
    let msg = match ty {
        MsgType::Hello => match len {
            0 => Message::Hello { hospital: None },
            2 => Message::Hello {
                hospital: Some(r.u16()?),
            },
            _ => return Err(r.err(format!("hello payload of {len} bytes"))),
        },
        MsgType::AlignPoly => Message::AlignPoly {
            attempt: r.u32()?,
            mode: r.mode()?,
            poly: r.poly()?,
        },
        MsgType::AlignPairwiseSums => {
            let attempt = r.u32()?;
            let mode = r.mode()?;
            let n = r.count(14)?;
            let sums = (0..n)
                .map(|_| Ok((r.u16()?, r.poly()?)))
                .collect::<Result<Vec<_>>>()?;
            Message::AlignPairwiseSums { attempt, mode, sums }
        }
        MsgType::AlignRegionSizes => Message::AlignRegionSizes {
            attempt: r.u32()?,
            mode: r.mode()?,
            sizes: r.sizes()?,
        },
        MsgType::AlignGlobalSizes => {
            let attempt = r.u32()?;
            let mode = r.mode()?;
            let at = r.pos;
            let status = match r.u8()? {
                0 => AlignStatus::Ok,
                1 => AlignStatus::Retry,
                s => {
                    return Err(Error::Decode {
                        offset: at,
                        reason: format!("unknown alignment status {s}"),
                    })
                }
            };
            Message::AlignGlobalSizes {
                attempt,
                mode,
                status,
                sizes: r.sizes()?,
            }
        }
        MsgType::LocalFeatureFactor => Message::LocalFeatureFactor {
            round: r.u32()?,
            mode: r.mode()?,
            factor: r.matrix()?,
        },
        MsgType::GlobalFeatureFactor => Message::GlobalFeatureFactor {
            round: r.u32()?,
            mode: r.mode()?,
            factor: r.matrix()?,
        },
        MsgType::MultiplierH => Message::MultiplierH {
            round: r.u32()?,
            mode: r.mode()?,
            multiplier: r.matrix()?,
        },
        MsgType::RoundComplete => Message::RoundComplete {
            round: r.u32()?,
            loss: r.f64()?,
            cells: r.f64()?,
            compute_seconds: r.f64()?,
        },
        MsgType::Converged => {
            let round = r.u32()?;
            let at = r.pos;
            let stop = match r.u8()? {
                0 => false,
                1 => true,
                b => {
                    return Err(Error::Decode {
                        offset: at,
                        reason: format!("bad stop flag {b}"),
                    })
                }
            };
            Message::Converged { round, stop }
        }
        MsgType::Abort => {
            let n = r.count(1)?;
            let at = r.pos;
            let bytes = r.take(n)?;
            let reason = String::from_utf8(bytes.to_vec()).map_err(|_| Error::Decode {
                offset: at,
                reason: "abort reason is not UTF-8".into(),
            })?;
            Message::Abort { reason }
        }
    };
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(msg)
}

/// Reads one whole frame from a byte stream.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<Vec<u8>> {
    let mut frame = vec![0u8; HEADER_LEN];
    reader.read_exact(&mut frame)?;
    let (_, len) = decode_header(&frame)?;
    frame.resize(HEADER_LEN + len, 0);
    reader.read_exact(&mut frame[HEADER_LEN..])?;
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hello_sizes() {
        assert_eq!(encode_frame(&Message::Hello { hospital: None }).unwrap().len(), 9);
        let f = encode_frame(&Message::Hello { hospital: Some(3) }).unwrap();
        assert_eq!(f.len(), 11);
        assert_eq!(decode_frame(&f).unwrap(), Message::Hello { hospital: Some(3) });
    }

    #[test]
    fn global_factor_round_trip() {
        let m = Message::GlobalFeatureFactor {
            round: 4,
            mode: FeatureMode::new(2).unwrap(),
            factor: FactorMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, -6.0]]).unwrap(),
        };
        let f = encode_frame(&m).unwrap();
        assert_eq!(f.len(), 9 + 4 + 2 + 8 + 6 * 8);
        assert_eq!(decode_frame(&f).unwrap(), m);
    }

    #[test]
    fn patient_mode_cannot_be_built_or_decoded() {
        assert!(FeatureMode::new(0).is_err());
        let m = Message::MultiplierH {
            round: 0,
            mode: FeatureMode::new(1).unwrap(),
            multiplier: FactorMatrix::zeros(1, 1),
        };
        let mut f = encode_frame(&m).unwrap();
        f[13] = 0;
        f[14] = 0;
        assert!(matches!(decode_frame(&f), Err(Error::Decode { offset: 13, .. })));
    }

    #[test]
    fn header_errors_name_offsets() {
        let f = encode_frame(&Message::Converged { round: 1, stop: true }).unwrap();
        let mut bad = f.clone();
        bad[0] = b'X';
        assert!(matches!(decode_frame(&bad), Err(Error::Decode { offset: 0, .. })));
        assert!(matches!(decode_frame(&f[..5]), Err(Error::Decode { offset: 5, .. })));
        assert!(matches!(decode_frame(&f[..f.len() - 1]), Err(Error::Decode { .. })));
        let mut huge = f.clone();
        huge[5..9].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_frame(&huge), Err(Error::Decode { offset: 5, .. })));
    }

    #[test]
    fn oversized_matrix_dims_are_rejected() {
        let m = Message::LocalFeatureFactor {
            round: 0,
            mode: FeatureMode::new(1).unwrap(),
            factor: FactorMatrix::zeros(2, 2),
        };
        let mut f = encode_frame(&m).unwrap();
        f[15..19].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_frame(&f), Err(Error::Decode { offset: 15, .. })));
    }
}
