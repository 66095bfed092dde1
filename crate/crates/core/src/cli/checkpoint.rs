//! Binary checkpoints: little-endian, length-prefixed, raw `f64` values.
//!
//! ```text
//! magic "CFLOWCK1"
//! fingerprint      str
//! steps            u64
//! words            u32 count, then str each
//! tensors          u32 count, then per tensor: name str, u32 rank, u64 dims, f64 values
//! optimizer flag   u8; when 1, first then second moments for every tensor in order
//! ```
//!
//! `str` is a `u32` byte length followed by UTF-8 bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::diffmath::{Adam, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::knowledge::WordVocab;
use crate::model::{ConceptFlow, ModelConfig};

const MAGIC: &[u8; 8] = b"CFLOWCK1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub steps: u64,
    pub words: Vec<String>,
    pub store: ParamStore,
    /// Adam moments aligned with `store`.
    pub moments: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

impl Checkpoint {
    pub fn capture(model: &ConceptFlow, optimizer: Option<&Adam>) -> Self {
        let moments = optimizer.and_then(|o| {
            let (m, v) = o.moments();
            (!m.is_empty()).then(|| (m.to_vec(), v.to_vec()))
        });
        Self {
            fingerprint: model.config.fingerprint(),
            steps: optimizer.map_or(0, Adam::steps),
            words: model.words.items().to_vec(),
            store: model.store.clone(),
            moments,
        }
    }

    /// Rebuilds the model after checking the fingerprint against `config`.
    pub fn into_model(self, config: ModelConfig) -> Result<ConceptFlow> {
        let expected = config.fingerprint();
        if expected != self.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected,
                found: self.fingerprint,
            });
        }
        let words = WordVocab::from_items(&self.words)
            .ok_or_else(|| Error::Checkpoint("word list lacks the reserved tokens".into()))?;
        ConceptFlow::from_store(config, words, self.store)
    }

    pub fn optimizer(&self, lr: f64) -> Adam {
        match &self.moments {
            Some((m, v)) => Adam::resume(lr, self.steps, m.clone(), v.clone()),
            None => Adam::new(lr),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_str(&mut out, &self.fingerprint);
        out.extend_from_slice(&self.steps.to_le_bytes());
        out.extend_from_slice(&(self.words.len() as u32).to_le_bytes());
        for w in &self.words {
            put_str(&mut out, w);
        }
        out.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        for (_, name, t) in self.store.iter() {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            put_f64s(&mut out, t.data());
        }
        match &self.moments {
            Some((m, v)) => {
                out.push(1);
                for x in m.iter().chain(v) {
                    put_f64s(&mut out, x);
                }
            }
            None => out.push(0),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let fingerprint = r.string()?;
        let steps = r.u64()?;
        let words = (0..r.u32()?).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let mut store = ParamStore::new();
        let mut sizes = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let shape = (0..r.u32()?).map(|_| Ok(r.u64()? as usize)).collect::<Result<Vec<_>>>()?;
            let len = shape.iter().product();
            let data = r.f64s(len)?;
            sizes.push(len);
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            store.add(name, t);
        }
        let moments = match r.take(1)?[0] {
            0 => None,
            1 => {
                let m = sizes.iter().map(|&n| r.f64s(n)).collect::<Result<Vec<_>>>()?;
                let v = sizes.iter().map(|&n| r.f64s(n)).collect::<Result<Vec<_>>>()?;
                Some((m, v))
            }
            f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            fingerprint,
            steps,
            words,
            store,
            moments,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
