//! Binary checkpoint container.
//!
//! Layout (little-endian): magic, version, precision tag, network config,
//! trainer counters, Adam state, then every layer as
//! `path, kernel shape, kernel, bias shape, bias, moments`, and a trailing
//! FNV-1a 64 checksum of everything before it. Floats are stored at the
//! model's precision.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Adam, AdamConfig, LayerMoments, TrainState};
use crate::error::{Error, Result};
use crate::losses::TaskWeights;
use crate::network::{ConvLayer, ModelParams, NetConfig};
use crate::scalar::{Precision, Scalar};
use crate::tensor::TensorGrid;

pub const MAGIC: &[u8; 8] = b"CSEGCKPT";
pub const VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn precision_tag(p: Precision) -> u8 {
    match p {
        Precision::F32 => 32,
        Precision::F64 => 64,
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn floats<T: Scalar>(&mut self, v: &[T]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|x| x.write_le(&mut self.0));
    }
    fn tensor<T: Scalar>(&mut self, t: &TensorGrid<T>) {
        self.u32(t.shape().len());
        t.shape().iter().for_each(|&d| self.u32(d));
        self.floats(t.values());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn floats<T: Scalar>(&mut self) -> Result<Vec<T>> {
        let n = self.u64()? as usize;
        let width = T::PRECISION.bytes();
        let raw = self.take(n.checked_mul(width).ok_or_else(|| Error::Corrupt("length overflow".into()))?)?;
        Ok(raw.chunks_exact(width).map(T::read_le).collect())
    }
    fn tensor<T: Scalar>(&mut self) -> Result<TensorGrid<T>> {
        let rank = self.u32()?;
        if rank > 8 {
            return Err(Error::Corrupt(format!("implausible tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let values = self.floats()?;
        TensorGrid::new(shape, values).map_err(|e| Error::Corrupt(e.to_string()))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Corrupt("layer path is not UTF-8".into()))
    }
}

/// Serializes the full training state.
pub fn encode<T: Scalar>(state: &TrainState<T>) -> Vec<u8> {
    let mut w = Writer(MAGIC.to_vec());
    w.u32(VERSION as usize);
    w.0.push(precision_tag(T::PRECISION));
    let c = state.params.config();
    w.u32(c.depth);
    w.u32(c.base_channels);
    w.u32(c.input_size);
    w.u64(state.epoch as u64);
    w.u64(state.step as u64);
    w.f64(state.weights.lambda());
    w.f64(state.learning_rate);
    let a = &state.optimizer;
    w.f64(a.config.beta1);
    w.f64(a.config.beta2);
    w.f64(a.config.eps);
    w.u64(a.t);
    w.u32(state.params.layers().len());
    for (path, layer) in state.params.layers() {
        w.u32(path.len());
        w.0.extend_from_slice(path.as_bytes());
        w.tensor(&layer.kernel);
        w.tensor(&layer.bias);
        let m = &a.moments[path];
        w.floats(&m.m_kernel);
        w.floats(&m.v_kernel);
        w.floats(&m.m_bias);
        w.floats(&m.v_bias);
    }
    let sum = fnv1a(&w.0);
    w.u64(sum);
    w.0
}

fn read_header(r: &mut Reader) -> Result<NetConfig> {
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Corrupt("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let precision = match r.u8()? {
        32 => Precision::F32,
        64 => Precision::F64,
        t => return Err(Error::Corrupt(format!("unknown precision tag {t}"))),
    };
    Ok(NetConfig { depth: r.u32()?, base_channels: r.u32()?, input_size: r.u32()?, precision })
}

fn verify_checksum(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::Corrupt("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }
    Ok(body)
}

/// Decodes a checkpoint; `expected`, when given, must equal the stored config.
pub fn decode<T: Scalar>(bytes: &[u8], expected: Option<&NetConfig>) -> Result<TrainState<T>> {
    let mut header = Reader { bytes, pos: 0 };
    let config = read_header(&mut header)?;
    let body = verify_checksum(bytes)?;
    if let Some(exp) = expected {
        if *exp != config {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint holds depth {} / base {} / input {} / {}, expected depth {} / base {} / input {} / {}",
                config.depth,
                config.base_channels,
                config.input_size,
                config.precision,
                exp.depth,
                exp.base_channels,
                exp.input_size,
                exp.precision
            )));
        }
    }
    if config.precision != T::PRECISION {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint stores {} values, requested {}",
            config.precision,
            T::PRECISION
        )));
    }
    config.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
    let mut r = Reader { bytes: body, pos: header.pos };
    let epoch = r.u64()? as usize;
    let step = r.u64()? as usize;
    let lambda = r.f64()?;
    let learning_rate = r.f64()?;
    let adam_config = AdamConfig { beta1: r.f64()?, beta2: r.f64()?, eps: r.f64()? };
    let t = r.u64()?;
    let n = r.u32()?;
    let mut layers = BTreeMap::new();
    let mut moments = BTreeMap::new();
    for _ in 0..n {
        let path = r.string()?;
        let kernel = r.tensor()?;
        let bias = r.tensor()?;
        let m = LayerMoments { m_kernel: r.floats()?, v_kernel: r.floats()?, m_bias: r.floats()?, v_bias: r.floats()? };
        if m.m_kernel.len() != kernel.len()
            || m.v_kernel.len() != kernel.len()
            || m.m_bias.len() != bias.len()
            || m.v_bias.len() != bias.len()
        {
            return Err(Error::Corrupt(format!("optimizer state of `{path}` does not match its shape")));
        }
        moments.insert(path.clone(), m);
        layers.insert(path, ConvLayer { kernel, bias });
    }
    if r.pos != body.len() {
        return Err(Error::Corrupt("trailing bytes after layers".into()));
    }
    let params = ModelParams::from_layers(config, layers)?;
    let weights = TaskWeights::new(lambda);
    Ok(TrainState {
        params,
        optimizer: Adam { config: adam_config, t, moments },
        weights,
        epoch,
        step,
        learning_rate,
    })
}

/// Writes atomically: a sibling temp file is renamed over `path`.
pub fn save_checkpoint<T: Scalar>(state: &TrainState<T>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(state))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path, expected: Option<&NetConfig>) -> Result<TrainState<T>> {
    decode(&std::fs::read(path)?, expected)
}

/// Reads only the stored network config (including precision).
pub fn peek_config(path: &Path) -> Result<NetConfig> {
    let bytes = std::fs::read(path)?;
    read_header(&mut Reader { bytes: &bytes, pos: 0 })
}
