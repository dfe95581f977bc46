//! Versioned checkpoint container: JSON metadata followed by named f32
//! tensors, little-endian, in a fixed traversal order. Save -> load -> save
//! reproduces identical bytes.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::adam::OptimConfig;
use super::curriculum::CurriculumState;
use crate::error::{Error, Result};
use crate::nn::discriminator::DiscriminatorConfig;
use crate::nn::generator::GeneratorConfig;

const MAGIC: &[u8; 8] = b"CINPCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelMeta {
    Contour {
        gen: GeneratorConfig,
        disc: DiscriminatorConfig,
    },
    Image {
        guided: bool,
        gen: GeneratorConfig,
        disc: DiscriminatorConfig,
    },
    Joint {
        contour_gen: GeneratorConfig,
        contour_disc: DiscriminatorConfig,
        image_gen: GeneratorConfig,
        image_disc: DiscriminatorConfig,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RngState {
    pub seed_hex: String,
    /// ChaCha word position, serialized as decimal (u128).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &rand_chacha::ChaCha8Rng) -> Self {
        let seed = rng.get_seed();
        RngState {
            seed_hex: hex_encode(&seed),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<rand_chacha::ChaCha8Rng> {
        use rand::SeedableRng;
        let bytes = hex_decode(&self.seed_hex)?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Checkpoint("rng seed must be 32 bytes".into()))?;
        let mut rng = rand_chacha::ChaCha8Rng::from_seed(seed);
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint("bad rng word position".into()))?;
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hex_decode(s: &str) -> Result<Vec<u8>> {
    if s.len() % 2 != 0 {
        return Err(Error::Checkpoint("odd hex length".into()));
    }
    (0..s.len() / 2)
        .map(|i| {
            u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::Checkpoint("bad hex".into()))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CkptMeta {
    pub format_version: u32,
    pub phase: String,
    pub step: usize,
    pub adam_t_gen: usize,
    pub adam_t_disc: usize,
    pub curriculum: CurriculumState,
    pub optim: OptimConfig,
    pub rng: RngState,
    pub config_hash: String,
    pub model: ModelMeta,
    /// Phase-specific trainer configuration, for exact resume.
    pub train_cfg: serde_json::Value,
}

/// In-memory checkpoint: metadata plus named tensors in traversal order.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CkptMeta,
    pub tensors: Vec<(String, ArrayD<f32>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&ArrayD<f32>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            if nb.len() > u16::MAX as usize {
                return Err(Error::Checkpoint("tensor name too long".into()));
            }
            out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            out.extend_from_slice(nb);
            out.push(4u8); // f32
            let shape = t.shape();
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            let slice = t
                .as_slice()
                .ok_or_else(|| Error::Checkpoint("non-contiguous tensor".into()))?;
            for v in slice {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = buf;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let meta_len = read_u32(&mut r)? as usize;
        let mut meta_buf = vec![0u8; meta_len];
        r.read_exact(&mut meta_buf)?;
        let meta: CkptMeta = serde_json::from_slice(&meta_buf)?;
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let mut l2 = [0u8; 2];
            r.read_exact(&mut l2)?;
            let name_len = u16::from_le_bytes(l2) as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| Error::Checkpoint("tensor name not utf-8".into()))?;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            if tag[0] != 4 {
                return Err(Error::Checkpoint(format!(
                    "unsupported dtype tag {} for '{name}'",
                    tag[0]
                )));
            }
            let mut nd = [0u8; 1];
            r.read_exact(&mut nd)?;
            let mut dims = Vec::with_capacity(nd[0] as usize);
            for _ in 0..nd[0] {
                dims.push(read_u32(&mut r)? as usize);
            }
            let len: usize = dims.iter().product();
            let mut data = vec![0f32; len];
            for v in data.iter_mut() {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                *v = f32::from_le_bytes(b);
            }
            let arr = ArrayD::from_shape_vec(ndarray::IxDyn(&dims), data)
                .map_err(|e| Error::Checkpoint(format!("bad tensor shape: {e}")))?;
            tensors.push((name, arr));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::file_io(parent, e))?;
            }
        }
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::file_io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::file_io(path, e))?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::file_io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
