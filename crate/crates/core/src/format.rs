//! Binary model files.
//!
//! Quantized models (`XAIC`), all integers little-endian:
//!
//! ```text
//! magic      b"XAIC"
//! version    u16
//! input_dim  u32
//! classes    u32
//! n_layers   u32
//! per layer:
//!   width    u32
//!   bits     [u8; width]
//!   scales   [f32; width]
//!   biases   [f32; width]
//!   codes    per neuron: fan_in two's-complement codes of `bits` bits,
//!            packed LSB-first, padded to the next byte boundary
//! ```
//!
//! Full-precision networks (`XAIN`): magic, version u16, input_dim u32,
//! n_layers u32, then per layer the width u32, the `fan_in × width` weight
//! matrix in row-major order and the biases, all as f64.

use ndarray::{Array1, Array2};

use crate::compress::{code_limit, QuantizedLayer, QuantizedModel, MAX_BITS, MIN_BITS};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, DenseNet};

pub const QUANT_MAGIC: [u8; 4] = *b"XAIC";
pub const NET_MAGIC: [u8; 4] = *b"XAIN";
pub const FORMAT_VERSION: u16 = 1;

struct BitWriter<'a> {
    out: &'a mut Vec<u8>,
    acc: u64,
    filled: u32,
}

impl<'a> BitWriter<'a> {
    fn new(out: &'a mut Vec<u8>) -> Self {
        Self { out, acc: 0, filled: 0 }
    }

    fn push(&mut self, value: u32, bits: u32) {
        self.acc |= ((value as u64) & ((1u64 << bits) - 1)) << self.filled;
        self.filled += bits;
        while self.filled >= 8 {
            self.out.push(self.acc as u8);
            self.acc >>= 8;
            self.filled -= 8;
        }
    }

    /// Flushes a partial byte, zero-padded.
    fn align(&mut self) {
        if self.filled > 0 {
            self.out.push(self.acc as u8);
            self.acc = 0;
            self.filled = 0;
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                offset: self.pos,
                needed: n - (self.buf.len() - self.pos),
            }),
        }
    }

    /// Fails early when `n` bytes are not available, before anything sized
    /// by untrusted counts gets allocated.
    fn require(&self, n: u64) -> Result<()> {
        let left = (self.buf.len() - self.pos) as u64;
        if n > left {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: usize::try_from(n - left).unwrap_or(usize::MAX),
            });
        }
        Ok(())
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::Malformed(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )))
        }
    }
}

fn check_header(r: &mut Reader<'_>, magic: [u8; 4]) -> Result<()> {
    let found = &r.buf[..r.buf.len().min(4)];
    if found != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found: found.to_vec(),
        });
    }
    r.pos = 4;
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    Ok(())
}

fn dim(value: u32, what: &str) -> Result<usize> {
    if value == 0 {
        Err(Error::Malformed(format!("{what} is zero")))
    } else {
        Ok(value as usize)
    }
}

pub fn serialize_quantized(model: &QuantizedModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&QUANT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(model.classes as u32).to_le_bytes());
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for layer in &model.layers {
        out.extend_from_slice(&(layer.width() as u32).to_le_bytes());
        out.extend_from_slice(&layer.bits);
        for s in &layer.scales {
            out.extend_from_slice(&s.to_le_bytes());
        }
        for b in &layer.biases {
            out.extend_from_slice(&b.to_le_bytes());
        }
        let mut w = BitWriter::new(&mut out);
        for (j, &bits) in layer.bits.iter().enumerate() {
            for &c in layer.group(j) {
                w.push(c as u32, bits as u32);
            }
            w.align();
        }
    }
    out
}

fn sign_extend(raw: u64, bits: u32) -> i64 {
    let shift = 64 - bits;
    ((raw << shift) as i64) >> shift
}

pub fn deserialize_quantized(bytes: &[u8]) -> Result<QuantizedModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    check_header(&mut r, QUANT_MAGIC)?;
    let input_dim = dim(r.u32()?, "input_dim")?;
    let classes = dim(r.u32()?, "class count")?;
    let n_layers = dim(r.u32()?, "layer count")?;
    // Each layer needs at least its width field plus one neuron.
    r.require(n_layers as u64 * 13)?;
    let mut layers = Vec::with_capacity(n_layers);
    let mut fan_in = input_dim;
    for l in 0..n_layers {
        let width = dim(r.u32()?, "layer width")?;
        r.require(width as u64 * 9)?;
        let bits = r.take(width)?.to_vec();
        if let Some((j, &b)) = bits.iter().enumerate().find(|(_, b)| !(MIN_BITS..=MAX_BITS).contains(b)) {
            return Err(Error::Malformed(format!("layer {l} neuron {j}: bit-width {b}")));
        }
        let scales = (0..width).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let biases = (0..width).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let packed: u64 = bits.iter().map(|&b| (fan_in as u64 * b as u64).div_ceil(8)).sum();
        r.require(packed)?;
        let mut codes = Vec::with_capacity(width * fan_in);
        for (j, &b) in bits.iter().enumerate() {
            let group = r.take((fan_in * b as usize).div_ceil(8))?;
            let limit = code_limit(b) as i64;
            let (mut acc, mut filled, mut next) = (0u64, 0u32, 0usize);
            for _ in 0..fan_in {
                while filled < b as u32 {
                    acc |= (group[next] as u64) << filled;
                    next += 1;
                    filled += 8;
                }
                let code = sign_extend(acc & ((1u64 << b) - 1), b as u32);
                acc >>= b;
                filled -= b as u32;
                if code.abs() > limit {
                    return Err(Error::CodeOutOfRange {
                        layer: l,
                        neuron: j,
                        code,
                        bits: b,
                    });
                }
                codes.push(code as i32);
            }
            if acc != 0 {
                return Err(Error::Malformed(format!("layer {l} neuron {j}: non-zero padding bits")));
            }
        }
        layers.push(QuantizedLayer {
            fan_in,
            bits,
            scales,
            biases,
            codes,
        });
        fan_in = width;
    }
    r.finish()?;
    let model = QuantizedModel {
        input_dim,
        classes,
        layers,
    };
    model.validate()?;
    Ok(model)
}

pub fn serialize_net(net: &DenseNet) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + 8 * (net.param_count() + net.layers().len()));
    out.extend_from_slice(&NET_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(net.input_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        out.extend_from_slice(&(layer.fan_out() as u32).to_le_bytes());
        for w in layer.weights.iter() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for b in layer.biases.iter() {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    out
}

pub fn deserialize_net(bytes: &[u8]) -> Result<DenseNet> {
    let mut r = Reader { buf: bytes, pos: 0 };
    check_header(&mut r, NET_MAGIC)?;
    let input_dim = dim(r.u32()?, "input_dim")?;
    let n_layers = dim(r.u32()?, "layer count")?;
    r.require(n_layers as u64 * 4)?;
    let mut layers = Vec::with_capacity(n_layers);
    let mut fan_in = input_dim;
    for l in 0..n_layers {
        let width = dim(r.u32()?, "layer width")?;
        r.require(8 * (fan_in as u64 + 1) * width as u64)?;
        let weights = (0..fan_in * width).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let biases = (0..width).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        layers.push(DenseLayer {
            weights: Array2::from_shape_vec((fan_in, width), weights).expect("sized above"),
            biases: Array1::from(biases),
            activation: if l + 1 == n_layers {
                Activation::Identity
            } else {
                Activation::Relu
            },
        });
        fan_in = width;
    }
    r.finish()?;
    DenseNet::new(layers).map_err(|e| Error::Malformed(e.to_string()))
}

/// Either kind of model file, told apart by magic.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelArtifact {
    Full(DenseNet),
    Quantized(QuantizedModel),
}

impl ModelArtifact {
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            ModelArtifact::Full(net) => serialize_net(net),
            ModelArtifact::Quantized(q) => serialize_quantized(q),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(&NET_MAGIC) {
            deserialize_net(bytes).map(ModelArtifact::Full)
        } else {
            deserialize_quantized(bytes).map(ModelArtifact::Quantized)
        }
    }

    /// Network used for inference (dequantized for quantized models).
    pub fn network(&self) -> Result<DenseNet> {
        match self {
            ModelArtifact::Full(net) => Ok(net.clone()),
            ModelArtifact::Quantized(q) => q.dequantize(),
        }
    }

    pub fn size(&self) -> crate::compress::SizeBreakdown {
        match self {
            ModelArtifact::Full(net) => crate::compress::model_size_bytes(net),
            ModelArtifact::Quantized(q) => crate::compress::model_size_bytes(q),
        }
    }
}
