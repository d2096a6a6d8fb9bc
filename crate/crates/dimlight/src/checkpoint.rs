//! Versioned binary container for parameters, queues and statistics.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "DIMLCKPT" | version u32 | manifest_len u64 | manifest (JSON)
//! block_count u32 | blocks... | crc32 u32 of everything before it
//! block: name_len u32 | name | ndim u32 | dims u64 * ndim | values f64 * prod(dims)
//! ```
//!
//! Block names are namespaced: `encoder.q.*`, `encoder.k.*`, `irn.*`,
//! `queue.keys`, `stats.mean`, `stats.std`.

use std::fs;
use std::path::Path;

use dimlight_core::encoder::{EncoderParams, EncoderTopology, NegativeQueue, SpectrumStats, STREAM_DEPTH};
use dimlight_core::irn::{IrnParams, IrnTopology};
use dimlight_core::model::Enhancer;
use dimlight_core::params::Parameters;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DIMLCKPT";
pub const VERSION: u32 = 1;

pub const NS_QUERY: &str = "encoder.q";
pub const NS_KEY: &str = "encoder.k";
pub const NS_IRN: &str = "irn";
pub const QUEUE_BLOCK: &str = "queue.keys";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderTopologyRecord {
    pub channels: [usize; STREAM_DEPTH],
    pub strides: [usize; STREAM_DEPTH],
    pub hidden: usize,
    pub embed_dim: usize,
}

impl From<EncoderTopology> for EncoderTopologyRecord {
    fn from(t: EncoderTopology) -> Self {
        Self {
            channels: t.channels,
            strides: t.strides,
            hidden: t.hidden,
            embed_dim: t.embed_dim,
        }
    }
}

impl From<EncoderTopologyRecord> for EncoderTopology {
    fn from(t: EncoderTopologyRecord) -> Self {
        Self {
            channels: t.channels,
            strides: t.strides,
            hidden: t.hidden,
            embed_dim: t.embed_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueRecord {
    pub capacity: usize,
    pub cursor: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub encoder_topology: EncoderTopologyRecord,
    pub embed_dim: usize,
    /// Feature width of the reconstruction network, absent for encoder-only files.
    pub irn_channels: Option<usize>,
    pub patch_size: usize,
    pub epoch: usize,
    pub step: usize,
    pub seed: u64,
    pub variant: Option<String>,
    pub queue: Option<QueueRecord>,
    pub val_psnr: Option<f64>,
}

impl Manifest {
    pub fn new(topology: EncoderTopology, patch_size: usize, seed: u64) -> Self {
        Self {
            encoder_topology: topology.into(),
            embed_dim: topology.embed_dim,
            irn_channels: None,
            patch_size,
            epoch: 0,
            step: 0,
            seed,
            variant: None,
            queue: None,
            val_psnr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub blocks: Vec<Block>,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Attach `path` to errors raised while interpreting an already-parsed file.
pub fn relocate(e: Error, path: &Path) -> Error {
    match e {
        Error::Checkpoint { reason, .. } => corrupt(path, reason),
        other => other,
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

impl Checkpoint {
    pub fn new(manifest: Manifest) -> Self {
        Self {
            manifest,
            blocks: Vec::new(),
        }
    }

    /// Append every parameter block of `params` under `namespace`.
    pub fn add_params<P: Parameters>(&mut self, namespace: &str, params: &P) {
        for p in params.param_refs() {
            self.blocks.push(Block {
                name: format!("{namespace}.{}", p.name),
                shape: p.shape,
                values: p.values.to_vec(),
            });
        }
    }

    pub fn add_block(&mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) {
        self.blocks.push(Block {
            name: name.to_string(),
            shape,
            values,
        });
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn has_namespace(&self, namespace: &str) -> bool {
        let prefix = format!("{namespace}.");
        self.blocks.iter().any(|b| b.name.starts_with(&prefix))
    }

    /// Overwrite `params` from the blocks under `namespace`; names and shapes must match.
    pub fn load_params<P: Parameters>(&self, namespace: &str, params: &mut P) -> Result<()> {
        for p in params.param_muts() {
            let name = format!("{namespace}.{}", p.name);
            let b = self.block(&name).ok_or_else(|| corrupt(Path::new(""), format!("missing block {name}")))?;
            if b.shape != p.shape || b.values.len() != p.values.len() {
                return Err(corrupt(
                    Path::new(""),
                    format!("block {name} has shape {:?}, expected {:?}", b.shape, p.shape),
                ));
            }
            p.values.copy_from_slice(&b.values);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for b in &self.blocks {
            out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
            for &d in &b.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &b.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parse and verify; `path` is used only in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 8 + 4 + 4 || &bytes[..8] != MAGIC {
            return Err(corrupt(path, "not a checkpoint file"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(corrupt(path, "checksum mismatch"));
        }
        let mut r = Reader { bytes: body, pos: 8 };
        let short = || corrupt(path, "truncated");
        let version = r.u32().ok_or_else(short)?;
        if version != VERSION {
            return Err(corrupt(path, format!("unsupported version {version}")));
        }
        let mlen = r.u64().ok_or_else(short)? as usize;
        let manifest: Manifest = serde_json::from_slice(r.take(mlen).ok_or_else(short)?)
            .map_err(|e| corrupt(path, format!("manifest: {e}")))?;
        let count = r.u32().ok_or_else(short)? as usize;
        let mut blocks = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let nlen = r.u32().ok_or_else(short)? as usize;
            let name = std::str::from_utf8(r.take(nlen).ok_or_else(short)?)
                .map_err(|_| corrupt(path, "block name is not UTF-8"))?
                .to_string();
            let ndim = r.u32().ok_or_else(short)? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(r.u64().ok_or_else(short)? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| corrupt(path, "block size overflows"))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(short)?).ok_or_else(short)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            blocks.push(Block { name, shape, values });
        }
        if r.pos != body.len() {
            return Err(corrupt(path, "trailing bytes"));
        }
        Ok(Self { manifest, blocks })
    }

    /// Write atomically via a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn encoder_topology(&self) -> EncoderTopology {
        self.manifest.encoder_topology.into()
    }

    pub fn add_stats(&mut self, stats: &SpectrumStats) {
        self.add_block("stats.mean", vec![stats.mean.len()], stats.mean.clone());
        self.add_block("stats.std", vec![stats.std.len()], stats.std.clone());
    }

    pub fn stats(&self) -> Result<SpectrumStats> {
        let get = |n: &str| {
            self.block(n)
                .map(|b| b.values.clone())
                .ok_or_else(|| corrupt(Path::new(""), format!("missing block {n}")))
        };
        Ok(SpectrumStats {
            mean: get("stats.mean")?,
            std: get("stats.std")?,
        })
    }

    /// Encoder stored under `namespace`, with the shared spectrum statistics.
    pub fn encoder(&self, namespace: &str) -> Result<EncoderParams> {
        let mut enc = EncoderParams::zeros(self.encoder_topology());
        self.load_params(namespace, &mut enc)?;
        enc.stats = self.stats()?;
        Ok(enc)
    }

    pub fn add_queue(&mut self, queue: &NegativeQueue) {
        self.manifest.queue = Some(QueueRecord {
            capacity: queue.capacity(),
            cursor: queue.cursor(),
            len: queue.len(),
        });
        self.add_block(QUEUE_BLOCK, vec![queue.capacity(), queue.dim()], queue.raw().to_vec());
    }

    pub fn queue(&self) -> Result<NegativeQueue> {
        let rec = self
            .manifest
            .queue
            .ok_or_else(|| corrupt(Path::new(""), "no queue recorded"))?;
        let b = self
            .block(QUEUE_BLOCK)
            .ok_or_else(|| corrupt(Path::new(""), "missing queue block"))?;
        let dim = b.shape.get(1).copied().unwrap_or(0);
        Ok(NegativeQueue::from_parts(rec.capacity, dim, b.values.clone(), rec.cursor, rec.len)?)
    }

    pub fn irn(&self) -> Result<IrnParams> {
        let channels = self
            .manifest
            .irn_channels
            .ok_or_else(|| corrupt(Path::new(""), "no reconstruction network recorded"))?;
        let topo = IrnTopology {
            channels,
            feature_dim: self.encoder_topology().feature_dim(),
        };
        let mut irn = IrnParams::zeros(topo);
        self.load_params(NS_IRN, &mut irn)?;
        Ok(irn)
    }

    /// Query encoder plus reconstruction network.
    pub fn enhancer(&self) -> Result<Enhancer> {
        Ok(Enhancer::new(self.encoder(NS_QUERY)?, self.irn()?, self.manifest.patch_size)?)
    }

    /// Load `path` and build the enhancement model, naming the file on failure.
    pub fn load_enhancer(path: &Path) -> Result<Enhancer> {
        Self::load(path)?.enhancer().map_err(|e| relocate(e, path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> EncoderTopology {
        EncoderTopology {
            channels: [2, 2, 3, 3, 4, 4],
            strides: [2, 1, 1, 1, 1, 1],
            hidden: 4,
            embed_dim: 3,
        }
    }

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut enc = EncoderParams::init(tiny(), &mut rng);
        enc.stats = SpectrumStats {
            mean: vec![0.1, -0.2, 0.3, 0.0, 1e-300, -7.5],
            std: vec![1.0, 2.0, 3.0, 4.0, 5.0, f64::MIN_POSITIVE],
        };
        let irn = IrnParams::init(
            IrnTopology {
                channels: 3,
                feature_dim: 6,
            },
            &mut rng,
        );
        let queue = NegativeQueue::random(5, 6, &mut rng);
        let mut m = Manifest::new(tiny(), 8, 42);
        m.irn_channels = Some(3);
        let mut ck = Checkpoint::new(m);
        ck.add_params(NS_QUERY, &enc);
        ck.add_params(NS_KEY, &enc);
        ck.add_params(NS_IRN, &irn);
        ck.add_queue(&queue);
        ck.add_stats(&enc.stats);
        ck
    }

    #[test]
    fn bytes_roundtrip_bit_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("x")).unwrap();
        assert_eq!(back, ck);
        let enc = back.encoder(NS_QUERY).unwrap();
        let mut again = Checkpoint::new(back.manifest.clone());
        again.add_params(NS_QUERY, &enc);
        for (a, b) in again.blocks.iter().zip(&ck.blocks) {
            assert_eq!(a.name, b.name);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.values), bits(&b.values));
        }
        assert_eq!(back.queue().unwrap().raw(), ck.block(QUEUE_BLOCK).unwrap().values.as_slice());
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes();
        for i in [0usize, 9, 30, bytes.len() / 2, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[i] ^= 0x40;
            assert!(Checkpoint::from_bytes(&bad, Path::new("x")).is_err(), "flip at {i}");
        }
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9], Path::new("x")).is_err());
        assert!(Checkpoint::from_bytes(b"", Path::new("x")).is_err());
    }

    #[test]
    fn missing_irn_is_reported() {
        let mut ck = sample();
        ck.manifest.irn_channels = None;
        assert!(ck.irn().is_err());
        assert!(ck.encoder(NS_KEY).is_ok());
    }
}
