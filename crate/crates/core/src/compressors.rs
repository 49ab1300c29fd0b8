//! Uplink compressors and the `CompressedUpdate` message.
//!
//! Serialized message layout (all integers little-endian):
//!
//! ```text
//! u8   kind tag
//! u32  dim
//! ...  kind-specific body
//!   exact / stochastic / dp sign : packed signs, ceil(dim/8) bytes
//!   input-scaled / error-feedback : f64 scale, packed signs
//!   quantizer                     : f64 norm, u32 s, packed signs,
//!                                   dim level indices of ceil(log2(s+1)) bits each
//!   identity                      : dim x f64
//! ```
//!
//! Packed signs follow the bit layout documented in [`crate::codec`].

use rand::Rng;
use rand_distr::Distribution;

use crate::codec::{self, BitReader, BitWriter};
use crate::error::{invalid, Error, Result};
use crate::noise_math::{NoiseSpec, ZIndex, ZSampler};

/// `Sign(x) = +1` for `x >= 0`, `-1` otherwise.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CompressorKind {
    ExactSign,
    StochasticSign(NoiseSpec),
    /// Uniform noise scaled by the input's l2 norm; the norm rides along as the decode scale.
    InputScaledSign,
    UnbiasedQuantizer {
        levels: u32,
    },
    /// l1-scaled sign with a per-client residual memory.
    ErrorFeedbackSign,
    Identity,
}

impl CompressorKind {
    pub fn tag(&self) -> UpdateKind {
        match self {
            CompressorKind::ExactSign => UpdateKind::ExactSign,
            CompressorKind::StochasticSign(_) => UpdateKind::StochasticSign,
            CompressorKind::InputScaledSign => UpdateKind::InputScaledSign,
            CompressorKind::UnbiasedQuantizer { .. } => UpdateKind::UnbiasedQuantizer,
            CompressorKind::ErrorFeedbackSign => UpdateKind::ErrorFeedbackSign,
            CompressorKind::Identity => UpdateKind::Identity,
        }
    }

    pub fn noise(&self) -> Option<NoiseSpec> {
        match self {
            CompressorKind::StochasticSign(spec) => Some(*spec),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CompressorKind::UnbiasedQuantizer { levels: 0 } => {
                Err(invalid("levels", "quantizer needs at least one level"))
            }
            CompressorKind::StochasticSign(spec) => NoiseSpec::new(spec.z, spec.sigma).map(|_| ()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum UpdateKind {
    ExactSign = 0,
    StochasticSign = 1,
    InputScaledSign = 2,
    UnbiasedQuantizer = 3,
    ErrorFeedbackSign = 4,
    Identity = 5,
    DpSign = 6,
}

impl UpdateKind {
    fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => UpdateKind::ExactSign,
            1 => UpdateKind::StochasticSign,
            2 => UpdateKind::InputScaledSign,
            3 => UpdateKind::UnbiasedQuantizer,
            4 => UpdateKind::ErrorFeedbackSign,
            5 => UpdateKind::Identity,
            6 => UpdateKind::DpSign,
            other => return Err(Error::Codec(format!("unknown kind tag {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Signs(Vec<u8>),
    ScaledSigns {
        scale: f64,
        signs: Vec<u8>,
    },
    Quantized {
        norm: f64,
        levels: u32,
        signs: Vec<u8>,
        indices: Vec<u32>,
    },
    Dense(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedUpdate {
    dim: usize,
    kind: UpdateKind,
    payload: Payload,
}

fn level_width(levels: u32) -> u32 {
    // ceil(log2(s + 1))
    u32::BITS - levels.leading_zeros()
}

impl CompressedUpdate {
    pub(crate) fn signs_only(kind: UpdateKind, signs: &[f64]) -> Self {
        Self {
            dim: signs.len(),
            kind,
            payload: Payload::Signs(codec::pack_bits(signs)),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> UpdateKind {
        self.kind
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    /// The transmitted `±1` pattern, for every kind that carries one.
    pub fn signs(&self) -> Option<Vec<f64>> {
        match &self.payload {
            Payload::Signs(bits)
            | Payload::ScaledSigns { signs: bits, .. }
            | Payload::Quantized { signs: bits, .. } => {
                Some(codec::unpack_bits(bits, self.dim).expect("payload length checked at construction"))
            }
            Payload::Dense(_) => None,
        }
    }

    /// The vector the server adds into its aggregate.
    pub fn decode(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.decode_into(&mut out);
        out
    }

    pub fn decode_into(&self, out: &mut [f64]) {
        assert_eq!(out.len(), self.dim, "decode buffer has the wrong dimension");
        match &self.payload {
            Payload::Signs(bits) => {
                for (o, s) in out.iter_mut().zip(unpack(bits, self.dim)) {
                    *o = s;
                }
            }
            Payload::ScaledSigns { scale, signs } => {
                for (o, s) in out.iter_mut().zip(unpack(signs, self.dim)) {
                    *o = scale * s;
                }
            }
            Payload::Quantized {
                norm,
                levels,
                signs,
                indices,
            } => {
                let s = *levels as f64;
                for ((o, sg), l) in out.iter_mut().zip(unpack(signs, self.dim)).zip(indices) {
                    *o = norm * sg * (*l as f64 / s);
                }
            }
            Payload::Dense(v) => out.copy_from_slice(v),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + codec::packed_len(self.dim));
        out.push(self.kind as u8);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        match &self.payload {
            Payload::Signs(bits) => out.extend_from_slice(bits),
            Payload::ScaledSigns { scale, signs } => {
                out.extend_from_slice(&scale.to_le_bytes());
                out.extend_from_slice(signs);
            }
            Payload::Quantized {
                norm,
                levels,
                signs,
                indices,
            } => {
                out.extend_from_slice(&norm.to_le_bytes());
                out.extend_from_slice(&levels.to_le_bytes());
                out.extend_from_slice(signs);
                let width = level_width(*levels);
                let mut w = BitWriter::default();
                for l in indices {
                    w.push(*l, width);
                }
                out.extend_from_slice(&w.finish());
            }
            Payload::Dense(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let kind = UpdateKind::from_tag(cur.take(1)?[0])?;
        let dim = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
        let sign_len = codec::packed_len(dim);
        let payload = match kind {
            UpdateKind::ExactSign | UpdateKind::StochasticSign | UpdateKind::DpSign => {
                Payload::Signs(cur.take(sign_len)?.to_vec())
            }
            UpdateKind::InputScaledSign | UpdateKind::ErrorFeedbackSign => {
                let scale = cur.f64()?;
                Payload::ScaledSigns {
                    scale,
                    signs: cur.take(sign_len)?.to_vec(),
                }
            }
            UpdateKind::UnbiasedQuantizer => {
                let norm = cur.f64()?;
                let levels = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
                if levels == 0 {
                    return Err(Error::Codec("quantizer message with zero levels".into()));
                }
                let signs = cur.take(sign_len)?.to_vec();
                let width = level_width(levels);
                let body = cur.take((dim * width as usize).div_ceil(8))?;
                let mut r = BitReader::new(body);
                let indices = (0..dim).map(|_| r.read(width)).collect::<Result<Vec<_>>>()?;
                if indices.iter().any(|l| *l > levels) {
                    return Err(Error::Codec("level index exceeds level count".into()));
                }
                Payload::Quantized {
                    norm,
                    levels,
                    signs,
                    indices,
                }
            }
            UpdateKind::Identity => Payload::Dense((0..dim).map(|_| cur.f64()).collect::<Result<_>>()?),
        };
        if cur.pos != bytes.len() {
            return Err(Error::Codec(format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        Ok(Self { dim, kind, payload })
    }
}

fn unpack(bits: &[u8], dim: usize) -> impl Iterator<Item = f64> + '_ {
    (0..dim).map(move |j| if bits[j / 8] >> (j % 8) & 1 == 1 { 1.0 } else { -1.0 })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Codec("message truncated".into()))?;
        self.pos = end;
        Ok(s)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Per-client error-feedback memory.
#[derive(Debug, Clone, PartialEq)]
pub struct EfState {
    residual: Vec<f64>,
}

impl EfState {
    pub fn new(dim: usize) -> Self {
        Self {
            residual: vec![0.0; dim],
        }
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }
}

/// Compresses `v`. `ef` must be supplied exactly when `kind` is error feedback.
pub fn compress<R: Rng + ?Sized>(
    kind: &CompressorKind,
    v: &[f64],
    rng: &mut R,
    ef: Option<&mut EfState>,
) -> Result<CompressedUpdate> {
    kind.validate()?;
    if v.is_empty() {
        return Err(invalid("v", "cannot compress an empty vector"));
    }
    if matches!(kind, CompressorKind::ErrorFeedbackSign) != ef.is_some() {
        return Err(invalid(
            "ef",
            "error-feedback state is required for, and only for, the error-feedback compressor",
        ));
    }
    let dim = v.len();
    let update = match kind {
        CompressorKind::ExactSign => {
            let signs: Vec<f64> = v.iter().map(|x| sign(*x)).collect();
            CompressedUpdate::signs_only(UpdateKind::ExactSign, &signs)
        }
        CompressorKind::StochasticSign(spec) => {
            CompressedUpdate::signs_only(UpdateKind::StochasticSign, &stochastic_signs(*spec, v, rng))
        }
        CompressorKind::InputScaledSign => {
            let norm = l2_norm(v);
            let noise = ZSampler::new(ZIndex::Infinity);
            let signs: Vec<f64> = v.iter().map(|x| sign(x + norm * noise.sample(rng))).collect();
            CompressedUpdate {
                dim,
                kind: UpdateKind::InputScaledSign,
                payload: Payload::ScaledSigns {
                    scale: norm,
                    signs: codec::pack_bits(&signs),
                },
            }
        }
        CompressorKind::UnbiasedQuantizer { levels } => quantize(*levels, v, rng)?,
        CompressorKind::ErrorFeedbackSign => {
            let ef = ef.expect("checked above");
            if ef.residual.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: ef.residual.len(),
                    actual: dim,
                });
            }
            let corrected: Vec<f64> = v.iter().zip(&ef.residual).map(|(a, e)| a + e).collect();
            let scale = corrected.iter().map(|x| x.abs()).sum::<f64>() / dim as f64;
            let signs: Vec<f64> = corrected.iter().map(|x| sign(*x)).collect();
            for ((e, p), s) in ef.residual.iter_mut().zip(&corrected).zip(&signs) {
                *e = p - scale * s;
            }
            CompressedUpdate {
                dim,
                kind: UpdateKind::ErrorFeedbackSign,
                payload: Payload::ScaledSigns {
                    scale,
                    signs: codec::pack_bits(&signs),
                },
            }
        }
        CompressorKind::Identity => CompressedUpdate {
            dim,
            kind: UpdateKind::Identity,
            payload: Payload::Dense(v.to_vec()),
        },
    };
    Ok(update)
}

/// `Sign(v + sigma xi)` with fresh i.i.d. `xi_z` per coordinate, drawn in coordinate order.
pub(crate) fn stochastic_signs<R: Rng + ?Sized>(spec: NoiseSpec, v: &[f64], rng: &mut R) -> Vec<f64> {
    if spec.is_noiseless() {
        return v.iter().map(|x| sign(*x)).collect();
    }
    let noise = ZSampler::new(spec.z);
    v.iter().map(|x| sign(x + spec.sigma * noise.sample(rng))).collect()
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Unbiased `s`-level stochastic quantizer.
pub fn quantize<R: Rng + ?Sized>(levels: u32, v: &[f64], rng: &mut R) -> Result<CompressedUpdate> {
    quantize_with(levels, v, || rng.random::<f64>())
}

/// [`quantize`] with an explicit source of `U[0, 1)` draws, one per coordinate.
///
/// Coordinate `i` rounds up to level `l + 1` when its draw is below
/// `|v_i| / ||v|| * s - l`.
pub fn quantize_with(levels: u32, v: &[f64], mut uniform: impl FnMut() -> f64) -> Result<CompressedUpdate> {
    if levels == 0 {
        return Err(invalid("levels", "quantizer needs at least one level"));
    }
    let dim = v.len();
    let norm = l2_norm(v);
    let signs: Vec<f64> = v.iter().map(|x| sign(*x)).collect();
    let indices = if norm == 0.0 {
        vec![0; dim]
    } else {
        let s = levels as f64;
        v.iter()
            .map(|x| {
                let r = x.abs() / norm * s;
                // r == s only when a single coordinate carries the whole norm.
                let l = (r.floor() as u32).min(levels - 1);
                let up = uniform() < r - l as f64;
                l + up as u32
            })
            .collect()
    };
    Ok(CompressedUpdate {
        dim,
        kind: UpdateKind::UnbiasedQuantizer,
        payload: Payload::Quantized {
            norm,
            levels,
            signs: codec::pack_bits(&signs),
            indices,
        },
    })
}

/// Uplink cost of one message, in bits.
pub fn uplink_bits(kind: &CompressorKind, dim: usize) -> u64 {
    let d = dim as u64;
    match kind {
        CompressorKind::ExactSign | CompressorKind::StochasticSign(_) => d,
        CompressorKind::InputScaledSign | CompressorKind::ErrorFeedbackSign => d + 32,
        CompressorKind::UnbiasedQuantizer { levels } => level_width(*levels) as u64 * d + 32,
        CompressorKind::Identity => 32 * d,
    }
}
