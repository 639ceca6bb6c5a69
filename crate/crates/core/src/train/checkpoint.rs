//! Binary checkpoint format.
//!
//! Layout (little endian): magic `TJCK`, u32 version, length-prefixed UTF-8
//! spec JSON, config JSON and config fingerprint, u64 epoch, shuffle RNG
//! state (32-byte seed, u64 stream, u128 word position), parameter table,
//! Adam state, trailing CRC-32 of everything before it. Strings and tensors
//! are prefixed by u32/u64 lengths; reals are f32 except the Adam
//! hyperparameters (f64).

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::models::{ModelSpec, ParamStore};
use crate::ndmath::{AdamState, NdArray};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"TJCK";

/// Position of the shuffling generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::from_seed(self.seed);
        r.set_stream(self.stream);
        r.set_word_pos(self.word_pos);
        r
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ParamStore<f32>,
    pub optimizer: AdamState<f32>,
    /// Completed epochs.
    pub epoch: u64,
    pub rng: RngState,
    pub config_fingerprint: String,
    /// Resolved training configuration as JSON.
    pub config_json: String,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn reals(&mut self, v: &[f32]) {
        self.u64(v.len() as u64);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

/// Serialize to bytes.
pub fn save_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.str(&serde_json::to_string(&ck.spec).expect("spec serializes"));
    w.str(&ck.config_json);
    w.str(&ck.config_fingerprint);
    w.u64(ck.epoch);
    w.0.extend_from_slice(&ck.rng.seed);
    w.u64(ck.rng.stream);
    w.0.extend_from_slice(&ck.rng.word_pos.to_le_bytes());

    let entries = ck.params.entries();
    w.u32(entries.len() as u32);
    for e in entries {
        w.str(&e.name);
        w.0.push(e.trainable as u8);
        w.u32(e.value.shape().len() as u32);
        for &d in e.value.shape() {
            w.u64(d as u64);
        }
        w.reals(e.value.data());
    }

    let o = &ck.optimizer;
    w.u64(o.t);
    for h in [o.beta1, o.beta2, o.eps] {
        w.0.extend_from_slice(&h.to_le_bytes());
    }
    w.u32(o.m.len() as u32);
    for (m, v) in o.m.iter().zip(&o.v) {
        w.reals(m);
        w.reals(v);
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corrupt { offset: self.pos, reason: format!("truncated while reading {what}") });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn arr<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.arr(what)?))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.arr(what)?))
    }
    fn len(&mut self, what: &str, elem: usize) -> Result<usize> {
        let at = self.pos;
        let n = self.u64(what)? as usize;
        if n.checked_mul(elem).is_none_or(|b| b > self.buf.len() - self.pos) {
            return Err(Error::Corrupt { offset: at, reason: format!("{what} length {n} exceeds remaining data") });
        }
        Ok(n)
    }
    fn str(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Corrupt { offset: at, reason: format!("{what} is not UTF-8") })
    }
    fn reals(&mut self, what: &str) -> Result<Vec<f32>> {
        let n = self.len(what, 4)?;
        let b = self.take(n * 4, what)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn corrupt(&self, at: usize, reason: impl Into<String>) -> Error {
        Error::Corrupt { offset: at, reason: reason.into() }
    }
}

/// Parse bytes written by [`save_checkpoint`].
pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.corrupt(0, "not a checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version { found: version, expected: FORMAT_VERSION });
    }
    if bytes.len() < 12 {
        return Err(r.corrupt(bytes.len(), "truncated before checksum"));
    }
    let body = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body..].try_into().unwrap());
    let mut r = Reader { buf: &bytes[..body], pos: 8 };

    let at = r.pos;
    let spec_json = r.str("model spec")?;
    let config_json = r.str("config")?;
    let config_fingerprint = r.str("fingerprint")?;
    let epoch = r.u64("epoch")?;
    let rng = RngState {
        seed: r.arr("rng seed")?,
        stream: r.u64("rng stream")?,
        word_pos: u128::from_le_bytes(r.arr("rng position")?),
    };

    let count = r.u32("parameter count")?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let at = r.pos;
        let name = r.str("parameter name")?;
        let trainable = match r.take(1, "trainable flag")?[0] {
            0 => false,
            1 => true,
            f => return Err(r.corrupt(r.pos - 1, format!("bad trainable flag {f}"))),
        };
        let ndim = r.u32("rank")? as usize;
        if ndim > 8 {
            return Err(r.corrupt(r.pos - 4, format!("rank {ndim} is implausible")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64("dimension")? as usize);
        }
        let data_at = r.pos;
        let data = r.reals("parameter data")?;
        if shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)) != Some(data.len()) {
            return Err(r.corrupt(data_at, format!("shape {shape:?} does not match {} values", data.len())));
        }
        let value = NdArray::from_vec(&shape, data).map_err(|e| r.corrupt(data_at, e.to_string()))?;
        params.insert(&name, value, trainable).map_err(|e| r.corrupt(at, e.to_string()))?;
    }

    let t = r.u64("adam step")?;
    let mut hyper = [0.0f64; 3];
    for h in &mut hyper {
        *h = f64::from_le_bytes(r.arr("adam hyperparameter")?);
    }
    let n = r.u32("adam buffers")? as usize;
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for _ in 0..n {
        m.push(r.reals("adam first moment")?);
        v.push(r.reals("adam second moment")?);
    }
    if r.pos != body {
        return Err(r.corrupt(r.pos, format!("{} unexpected trailing bytes", body - r.pos)));
    }
    if crc32fast::hash(&bytes[..body]) != stored {
        return Err(r.corrupt(body, "checksum mismatch"));
    }
    let spec: ModelSpec =
        serde_json::from_str(&spec_json).map_err(|e| Error::Corrupt { offset: at, reason: format!("model spec: {e}") })?;
    let optimizer = AdamState { m, v, t, beta1: hyper[0], beta2: hyper[1], eps: hyper[2] };
    Ok(Checkpoint { spec, params, optimizer, epoch, rng, config_fingerprint, config_json })
}

pub fn write_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&save_checkpoint(ck)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| Error::io(path, e))?;
    load_checkpoint(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_model;

    fn sample() -> Checkpoint {
        let spec = ModelSpec {
            embed_dim: 4,
            channels: Some(vec![(1, 2), (2, 2), (2, 2), (2, 2), (2, 2), (2, 2), (2, 1)]),
            ..ModelSpec::conv2d(3)
        };
        let (params, _) = build_model::<f32>(&spec, 3).unwrap();
        let mut optimizer = AdamState::new(params.trainable_ids().into_iter().map(|id| params.get(id).len()));
        optimizer.t = 7;
        optimizer.m[0][0] = -1.5e-3;
        let rng = ChaCha8Rng::seed_from_u64(9);
        Checkpoint {
            spec,
            params,
            optimizer,
            epoch: 4,
            rng: RngState::capture(&rng),
            config_fingerprint: "abc".into(),
            config_json: "{}".into(),
        }
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let ck = sample();
        let bytes = save_checkpoint(&ck);
        let back = load_checkpoint(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(save_checkpoint(&back), bytes);
    }

    #[test]
    fn every_single_byte_flip_is_detected() {
        let bytes = save_checkpoint(&sample());
        for i in 8..bytes.len() {
            let mut b = bytes.clone();
            b[i] ^= 0x10;
            assert!(matches!(load_checkpoint(&b), Err(Error::Corrupt { .. })), "flip at {i}");
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = save_checkpoint(&sample());
        for cut in [0, 3, 10, 40, bytes.len() / 2, bytes.len() - 1] {
            match load_checkpoint(&bytes[..cut]) {
                Err(Error::Corrupt { offset, .. }) => assert!(offset <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn newer_version_is_rejected_explicitly() {
        let mut bytes = save_checkpoint(&sample());
        bytes[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        assert!(matches!(load_checkpoint(&bytes), Err(Error::Version { found, expected: FORMAT_VERSION }) if found == FORMAT_VERSION + 1));
    }

    #[test]
    fn rng_state_resumes_stream() {
        use rand::Rng;
        let mut a = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..13 {
            a.random::<u32>();
        }
        let mut b = RngState::capture(&a).restore();
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }
}
