//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "FEDCKPT\0" | version u32 | spec-json (u64 len + bytes)
//! entry count u64
//!   group str | layer str | kind u8 | trainable u8 | tensor count u32
//!     key "layer/tensor" str | ndim u32 | dims u64* | f64 payload
//! section count u64
//!   name str | bytes (u64 len + bytes)
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8.

use std::collections::BTreeMap;
use std::path::Path;

use super::model::{LayerKind, LayerParams, Model, ModelSpec};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"FEDCKPT\0";

pub const GROUP_REPRESENTATION: &str = "rep";
pub const GROUP_HEAD: &str = "head";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub group: String,
    pub layer: LayerParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub entries: Vec<CheckpointEntry>,
    pub sections: BTreeMap<String, Vec<u8>>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
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
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflow".into()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
    fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.len()?;
        Ok(self.take(n)?.to_vec())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.bytes(&serde_json::to_vec(&self.spec)?);
        w.u64(self.entries.len() as u64);
        for e in &self.entries {
            w.str(&e.group);
            w.str(&e.layer.name);
            w.u8(match e.layer.kind() {
                LayerKind::BatchNorm => 1,
                LayerKind::Other => 0,
            });
            w.u8(u8::from(e.layer.trainable));
            w.u32(e.layer.tensors.len() as u32);
            for (tname, t) in &e.layer.tensors {
                w.str(&format!("{}/{tname}", e.layer.name));
                w.u32(t.shape().len() as u32);
                for &d in t.shape() {
                    w.u64(d as u64);
                }
                for v in t.data() {
                    w.0.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        w.u64(self.sections.len() as u64);
        for (name, body) in &self.sections {
            w.str(name);
            w.bytes(body);
        }
        Ok(w.0)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let spec: ModelSpec = serde_json::from_slice(&r.bytes()?)?;
        let n_entries = r.len()?;
        let mut entries = Vec::with_capacity(n_entries.min(1 << 16));
        for _ in 0..n_entries {
            let group = r.str()?;
            let name = r.str()?;
            let kind = match r.u8()? {
                0 => LayerKind::Other,
                1 => LayerKind::BatchNorm,
                k => return Err(Error::Checkpoint(format!("unknown layer kind {k}"))),
            };
            let trainable = r.u8()? != 0;
            let n_tensors = r.u32()?;
            let mut tensors = BTreeMap::new();
            for _ in 0..n_tensors {
                let key = r.str()?;
                let tname = key
                    .strip_prefix(&format!("{name}/"))
                    .ok_or_else(|| Error::Checkpoint(format!("key `{key}` outside `{name}`")))?
                    .to_string();
                let ndim = r.u32()? as usize;
                let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
                let count: usize = shape.iter().product();
                let raw = r.take(
                    count
                        .checked_mul(8)
                        .ok_or_else(|| Error::Checkpoint("tensor size overflow".into()))?,
                )?;
                let data = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                tensors.insert(tname, Tensor::new(shape, data)?);
            }
            let layer = LayerParams::from_parts(name, kind, tensors, trainable)?;
            entries.push(CheckpointEntry { group, layer });
        }
        let n_sections = r.len()?;
        let mut sections = BTreeMap::new();
        for _ in 0..n_sections {
            let name = r.str()?;
            sections.insert(name, r.bytes()?);
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            spec,
            entries,
            sections,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }

    pub fn group(&self, group: &str) -> Vec<LayerParams> {
        self.entries
            .iter()
            .filter(|e| e.group == group)
            .map(|e| e.layer.clone())
            .collect()
    }
}

impl Model {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let entries = self
            .representation
            .iter()
            .map(|l| (GROUP_REPRESENTATION, l))
            .chain(self.heads.iter().map(|l| (GROUP_HEAD, l)))
            .map(|(g, l)| CheckpointEntry {
                group: g.to_string(),
                layer: l.clone(),
            })
            .collect();
        Checkpoint {
            spec: self.spec.clone(),
            entries,
            sections: BTreeMap::new(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Model> {
        Model::from_parts(
            ckpt.spec.clone(),
            ckpt.group(GROUP_REPRESENTATION),
            ckpt.group(GROUP_HEAD),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::init_model;
    use crate::numerics::RngStream;

    #[test]
    fn model_round_trip_is_bit_exact() {
        let spec = ModelSpec::new(5, vec![6, 4], vec!["a".into(), "b".into()]);
        let mut m = init_model(&spec, &mut RngStream::new(11)).unwrap();
        m.representation[1].tensor_mut("running_mean").data_mut()[0] = -0.0;
        m.representation[1].tensor_mut("running_var").data_mut()[1] = 1e-300;
        let bytes = m.to_checkpoint().to_bytes().unwrap();
        let back = Model::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.to_checkpoint().to_bytes().unwrap(), bytes);
        for (a, b) in m.layers().zip(back.layers()) {
            for (ta, tb) in a.tensors.values().zip(b.tensors.values()) {
                let ba: Vec<u64> = ta.data().iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u64> = tb.data().iter().map(|v| v.to_bits()).collect();
                assert_eq!(ba, bb);
            }
        }
        assert_eq!(back.spec, m.spec);
    }

    #[test]
    fn corrupt_input_rejected() {
        let spec = ModelSpec::new(2, vec![2], vec!["a".into()]);
        let m = init_model(&spec, &mut RngStream::new(1)).unwrap();
        let mut bytes = m.to_checkpoint().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }

    #[test]
    fn version_mismatch_rejected() {
        let spec = ModelSpec::new(2, vec![], vec!["a".into()]);
        let m = init_model(&spec, &mut RngStream::new(1)).unwrap();
        let mut bytes = m.to_checkpoint().to_bytes().unwrap();
        bytes[8] = 99;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Checkpoint(_))
        ));
    }
}
