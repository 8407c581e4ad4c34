//! Checkpoint container.
//!
//! ```text
//! "STAS1"
//! u32 config length, config as UTF-8 key=value lines
//! u32 entry count
//! per entry: u32 name length, name, u8 dtype (0 = f32), u32 ndim, u64 dims
//! payloads: little-endian f32, in table order
//! ```
//!
//! Optimiser state is stored as `adam.m/<name>`, `adam.v/<name>` and a
//! one-element `adam.step`. All integers are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{AdamState, ModelConfig};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"STAS1";
const DTYPE_F32: u8 = 0;
/// Largest step count an f32 represents exactly.
const MAX_STEP: u64 = 1 << 24;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub adam: Option<AdamState>,
}

fn u32_len(n: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Format(format!("{what} too large: {n}")))
}

/// Serialises to bytes.
pub fn encode(cfg: &ModelConfig, params: &ParamStore, adam: Option<&AdamState>) -> Result<Vec<u8>> {
    let mut entries: Vec<(String, &Tensor<f32>)> = params.iter().map(|(n, t)| (n.to_string(), t)).collect();
    let step_tensor;
    if let Some(st) = adam {
        if st.m.len() != params.len() || st.v.len() != params.len() {
            return Err(Error::Format("optimiser state does not match parameters".into()));
        }
        if st.step > MAX_STEP {
            return Err(Error::Format(format!("step {} exceeds {MAX_STEP}", st.step)));
        }
        for ((name, _), m) in params.iter().zip(&st.m) {
            entries.push((format!("adam.m/{name}"), m));
        }
        for ((name, _), v) in params.iter().zip(&st.v) {
            entries.push((format!("adam.v/{name}"), v));
        }
        step_tensor = Tensor::new(&[1], vec![st.step as f32])?;
        entries.push(("adam.step".into(), &step_tensor));
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let text = cfg.to_kv_text();
    out.extend_from_slice(&u32_len(text.len(), "config")?);
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&u32_len(entries.len(), "entry count")?);
    for (name, t) in &entries {
        out.extend_from_slice(&u32_len(name.len(), "name")?);
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.extend_from_slice(&u32_len(t.ndim(), "rank")?);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, t) in &entries {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("bad magic, not a checkpoint".into()));
    }
    let mut config = ModelConfig::toy();
    config.apply_kv_text(&r.string()?)?;
    config.validate()?;
    let count = r.u32()?;
    let mut table = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = r.string()?;
        let dtype = r.take(1)?[0];
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("{name}: unsupported dtype {dtype}")));
        }
        let ndim = r.u32()?;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        table.push((name, shape));
    }
    let mut params = ParamStore::new();
    let (mut m, mut v, mut step) = (Vec::new(), Vec::new(), None);
    for (name, shape) in table {
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::Format(format!("{name}: shape overflow")))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Format(format!("{name}: {e}")))?;
        if let Some(p) = name.strip_prefix("adam.m/") {
            m.push((p.to_string(), t));
        } else if let Some(p) = name.strip_prefix("adam.v/") {
            v.push((p.to_string(), t));
        } else if name == "adam.step" {
            step = Some(t.item()? as u64);
        } else {
            params.insert(name, t).map_err(|e| Error::Format(e.to_string()))?;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let adam = match step {
        None if m.is_empty() && v.is_empty() => None,
        None => return Err(Error::Format("optimiser moments without adam.step".into())),
        Some(step) => {
            let names: Vec<&str> = params.iter().map(|(n, _)| n).collect();
            let matches = |xs: &[(String, Tensor<f32>)]| {
                xs.len() == names.len()
                    && xs.iter().zip(&names).all(|((a, t), b)| {
                        a == b && Some(t.shape()) == params.id(b).map(|id| params.get(id).shape())
                    })
            };
            if !matches(&m) || !matches(&v) {
                return Err(Error::Format("optimiser moments do not match parameters".into()));
            }
            Some(AdamState {
                m: m.into_iter().map(|(_, t)| t).collect(),
                v: v.into_iter().map(|(_, t)| t).collect(),
                step,
            })
        }
    };
    Ok(Checkpoint { config, params, adam })
}

/// Writes atomically: a temporary sibling file is renamed into place.
pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &ParamStore, adam: Option<&AdamState>) -> Result<()> {
    let bytes = encode(cfg, params, adam)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()
    };
    write().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
