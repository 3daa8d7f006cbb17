//! Self-describing binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "MFCK" | version u32 | fingerprint [u8;32]
//! | metadata count u32 | { key len u32, key, value len u32, value }*
//! | tensor count u32 | { name len u32, name, precision u8,
//!                        rank u32, dims u64*, payload len u64, payload }*
//! ```
//!
//! Payloads are raw little-endian element bytes, so save→load round-trips
//! are byte-exact. The fingerprint is the SHA-256 of the target graph's
//! canonical text and must match on load unless forced.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{GraphSpec, ParamStore};
use crate::tensor::{Precision, Scalar, Tensor};

pub const MAGIC: [u8; 4] = *b"MFCK";
pub const FORMAT_VERSION: u32 = 1;

/// One named tensor: precision tag, shape, and raw little-endian payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorRecord {
    pub name: String,
    pub precision: Precision,
    pub shape: Vec<usize>,
    pub payload: Vec<u8>,
}

impl TensorRecord {
    pub fn from_tensor<T: Scalar>(name: &str, tensor: &Tensor<T>) -> Self {
        let mut payload = Vec::with_capacity(tensor.len() * T::PRECISION.byte_size());
        match T::PRECISION {
            Precision::Single => {
                for &v in tensor.data() {
                    payload.extend_from_slice(&(Scalar::to_f64(v) as f32).to_le_bytes());
                }
            }
            Precision::Double => {
                for &v in tensor.data() {
                    payload.extend_from_slice(&Scalar::to_f64(v).to_le_bytes());
                }
            }
        }
        TensorRecord {
            name: name.to_string(),
            precision: T::PRECISION,
            shape: tensor.shape().to_vec(),
            payload,
        }
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    /// Decodes the payload to `f64` values (lossless from either
    /// precision).
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match self.precision {
            Precision::Single => self
                .payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
            Precision::Double => self
                .payload
                .chunks_exact(8)
                .map(|c| {
                    f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])
                })
                .collect(),
        }
    }

    /// Re-encodes `values` at this record's precision under a new name.
    pub fn from_f64_values(
        name: &str,
        precision: Precision,
        shape: &[usize],
        values: &[f64],
    ) -> Self {
        let mut payload = Vec::with_capacity(values.len() * precision.byte_size());
        match precision {
            Precision::Single => {
                for &v in values {
                    payload.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            Precision::Double => {
                for &v in values {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        TensorRecord {
            name: name.to_string(),
            precision,
            shape: shape.to_vec(),
            payload,
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let values = self.to_f64_vec();
        let data: Vec<T> = values.into_iter().map(T::from_f64).collect();
        Tensor::from_vec(&self.shape, data)
    }

    fn validate(&self) -> Result<()> {
        let expect = self.element_count() * self.precision.byte_size();
        if self.payload.len() != expect {
            return Err(Error::Corrupt(format!(
                "tensor {:?}: payload of {} bytes for shape {:?} ({expect} expected)",
                self.name,
                self.payload.len(),
                self.shape
            )));
        }
        Ok(())
    }
}

/// Named tensor collection with metadata; the unit of serialization and
/// of 2D→3D inflation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    pub version: u32,
    pub fingerprint: [u8; 32],
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<TensorRecord>,
}

/// SHA-256 over the graph's canonical text.
pub fn graph_fingerprint(graph: &GraphSpec) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(graph.canonical_text().as_bytes());
    hasher.finalize().into()
}

impl Checkpoint {
    /// Captures a store (parameters and running statistics, sorted by
    /// name) against its graph.
    pub fn from_store<T: Scalar>(store: &ParamStore<T>, graph: &GraphSpec) -> Result<Self> {
        store.validate_against(graph)?;
        let tensors = store
            .all_tensors()
            .into_iter()
            .map(|(name, t)| TensorRecord::from_tensor(name, t))
            .collect();
        Ok(Checkpoint {
            version: FORMAT_VERSION,
            fingerprint: graph_fingerprint(graph),
            metadata: BTreeMap::new(),
            tensors,
        })
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Materializes a typed store, checking the fingerprint (unless
    /// `force`) and that the tensor set matches the graph exactly.
    pub fn to_store<T: Scalar>(&self, graph: &GraphSpec, force: bool) -> Result<ParamStore<T>> {
        if !force && self.fingerprint != graph_fingerprint(graph) {
            return Err(Error::structure(format!(
                "checkpoint fingerprint does not match graph with output {:?} (pass force to override)",
                graph.output()
            )));
        }
        let mut store = ParamStore::empty();
        let mut used = vec![false; self.tensors.len()];
        for info in graph.params() {
            let idx = self
                .tensors
                .iter()
                .position(|t| t.name == info.name)
                .ok_or_else(|| {
                    Error::structure(format!(
                        "checkpoint is missing parameter {:?} (layer {:?})",
                        info.name, info.layer
                    ))
                })?;
            used[idx] = true;
            let rec = &self.tensors[idx];
            if rec.shape != info.shape {
                return Err(Error::structure(format!(
                    "parameter {:?} has shape {:?} in the checkpoint, graph expects {:?}",
                    info.name, rec.shape, info.shape
                )));
            }
            let tensor = rec.to_tensor::<T>()?;
            if info.role.is_learnable() {
                store.insert_param(&info.name, tensor);
            } else {
                store.insert_running(&info.name, tensor);
            }
        }
        if let Some(idx) = used.iter().position(|&u| !u) {
            return Err(Error::structure(format!(
                "checkpoint tensor {:?} has no place in the graph",
                self.tensors[idx].name
            )));
        }
        Ok(store)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&self.version.to_le_bytes());
        buf.extend_from_slice(&self.fingerprint);
        buf.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            write_str(&mut buf, k);
            write_str(&mut buf, v);
        }
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for rec in &self.tensors {
            rec.validate()?;
            write_str(&mut buf, &rec.name);
            buf.push(match rec.precision {
                Precision::Single => 0,
                Precision::Double => 1,
            });
            buf.extend_from_slice(&(rec.shape.len() as u32).to_le_bytes());
            for &d in &rec.shape {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            buf.extend_from_slice(&(rec.payload.len() as u64).to_le_bytes());
            buf.extend_from_slice(&rec.payload);
        }
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Corrupt("bad magic bytes (not an MFCK file)".into()));
        }
        let version = r.u32()?;
        if version > FORMAT_VERSION {
            return Err(Error::Corrupt(format!(
                "checkpoint version {version} is newer than supported {FORMAT_VERSION}"
            )));
        }
        let mut fingerprint = [0u8; 32];
        fingerprint.copy_from_slice(r.take(32)?);
        let mut metadata = BTreeMap::new();
        let meta_count = r.u32()?;
        for _ in 0..meta_count {
            let k = r.string()?;
            let v = r.string()?;
            metadata.insert(k, v);
        }
        let tensor_count = r.u32()?;
        let mut tensors = Vec::with_capacity(tensor_count as usize);
        for _ in 0..tensor_count {
            let name = r.string()?;
            let precision = match r.u8()? {
                0 => Precision::Single,
                1 => Precision::Double,
                other => {
                    return Err(Error::Corrupt(format!(
                        "tensor {name:?}: unknown precision tag {other}"
                    )))
                }
            };
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(Error::Corrupt(format!(
                    "tensor {name:?}: implausible rank {rank}"
                )));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let payload_len = r.u64()? as usize;
            let payload = r.take(payload_len)?.to_vec();
            let rec = TensorRecord {
                name,
                precision,
                shape,
                payload,
            };
            rec.validate()?;
            tensors.push(rec);
        }
        if r.pos != bytes.len() {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            version,
            fingerprint,
            metadata,
            tensors,
        })
    }
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Corrupt(format!(
                "file truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 1 << 20 {
            return Err(Error::Corrupt(format!("implausible string length {len}")));
        }
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Corrupt("string field is not UTF-8".into()))
    }
}

/// Saves a store against its graph; byte-exact round-trip guaranteed.
pub fn save_checkpoint<T: Scalar>(
    store: &ParamStore<T>,
    graph: &GraphSpec,
    path: &Path,
) -> Result<()> {
    Checkpoint::from_store(store, graph)?.write_to(path)
}

/// Loads a store, verifying the fingerprint against `graph`.
pub fn load_checkpoint<T: Scalar>(path: &Path, graph: &GraphSpec) -> Result<ParamStore<T>> {
    Checkpoint::read_from(path)?.to_store(graph, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{init_params, GraphBuilder, INPUT};
    use crate::tensor::ConvSpec;

    fn small_graph() -> GraphSpec {
        let mut g = GraphBuilder::new(&[2, 4, 4]);
        let c = g.conv("c", INPUT, ConvSpec::new(2, 3, &[3, 3]), false).unwrap();
        let b = g.batch_norm("b", &c).unwrap();
        let p = g.global_avg_pool("gap", &b).unwrap();
        let f = g.linear("fc", &p, 2, true).unwrap();
        g.finish(&f).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let graph = small_graph();
        let store = init_params::<f64>(&graph, 77);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        save_checkpoint(&store, &graph, &path).unwrap();
        let loaded: ParamStore<f64> = load_checkpoint(&path, &graph).unwrap();
        for (name, t) in store.all_tensors() {
            let other = loaded.param(name).or_else(|_| loaded.running(name)).unwrap();
            assert_eq!(t.data(), other.data(), "{name}");
        }
        // and the file itself is reproduced byte-for-byte
        let path2 = dir.path().join("b.ckpt");
        save_checkpoint(&loaded, &graph, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn empty_metadata_round_trips() {
        let graph = small_graph();
        let ckpt = Checkpoint::from_store(&init_params::<f32>(&graph, 1), &graph).unwrap();
        assert!(ckpt.metadata.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ckpt.write_to(&path).unwrap();
        let back = Checkpoint::read_from(&path).unwrap();
        assert!(back.metadata.is_empty());
        assert_eq!(back, ckpt);
    }

    #[test]
    fn truncation_is_a_clean_error() {
        let graph = small_graph();
        let ckpt = Checkpoint::from_store(&init_params::<f64>(&graph, 5), &graph).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("full.ckpt");
        ckpt.write_to(&path).unwrap();
        let full = fs::read(&path).unwrap();
        for cut in [0, 1, 3, 7, 36, 41, 100, full.len() - 1] {
            let err = Checkpoint::from_bytes(&full[..cut]).unwrap_err();
            assert!(matches!(err, Error::Corrupt(_)), "cut at {cut}: {err}");
        }
    }

    #[test]
    fn fingerprint_mismatch_names_the_graph() {
        let graph = small_graph();
        let store = init_params::<f64>(&graph, 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fp.ckpt");
        save_checkpoint(&store, &graph, &path).unwrap();

        let mut g = GraphBuilder::new(&[2, 4, 4]);
        let c = g.conv("c", INPUT, ConvSpec::new(2, 3, &[3, 3]), false).unwrap();
        let b = g.batch_norm("b", &c).unwrap();
        let b2 = g.batch_norm("extra", &b).unwrap();
        let p = g.global_avg_pool("gap", &b2).unwrap();
        let f = g.linear("fc", &p, 2, true).unwrap();
        let other = g.finish(&f).unwrap();

        let err = load_checkpoint::<f64>(&path, &other).unwrap_err();
        assert!(matches!(err, Error::Structure(_)));
        // forcing past the fingerprint still fails on the missing tensor
        let ckpt = Checkpoint::read_from(&path).unwrap();
        let err = ckpt.to_store::<f64>(&other, true).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
    }

    #[test]
    fn newer_version_is_rejected() {
        let graph = small_graph();
        let mut ckpt = Checkpoint::from_store(&init_params::<f64>(&graph, 2), &graph).unwrap();
        ckpt.version = FORMAT_VERSION + 1;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ckpt");
        ckpt.write_to(&path).unwrap();
        let err = Checkpoint::read_from(&path).unwrap_err();
        assert!(err.to_string().contains("newer"), "{err}");
    }
}
