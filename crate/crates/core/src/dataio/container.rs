//! Versioned binary container for named f32 tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HRES"                      4 bytes magic
//! version                     u32
//! header length, header       u32, UTF-8 bytes (TOML text)
//! per tensor, until the CRC:
//!   name length, name         u32, UTF-8 bytes
//!   rank                      u32
//!   dims                      rank × u64
//!   payload                   product(dims) × f32
//! crc                         u32, CRC-32 (IEEE) of every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;

use super::{io_err, DataError};
use crate::model::{ModelConfig, Network};
use crate::Tensor;

pub const MAGIC: &[u8; 4] = b"HRES";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: String,
    pub tensors: Vec<(String, Tensor)>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn encode(header: &str, tensors: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, header.len() as u32);
    out.extend_from_slice(header.as_bytes());
    for (name, t) in tensors {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank() as u32);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DataError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| DataError::Malformed(format!("{what} runs past the end of the data")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self, what: &str) -> Result<String, DataError> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| DataError::Malformed(format!("{what} is not UTF-8")))
    }
}

fn decode(bytes: &[u8]) -> Result<Container, DataError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(if bytes.len() < 4 {
            DataError::Checksum
        } else {
            DataError::BadMagic
        });
    }
    if bytes.len() < 16 {
        return Err(DataError::Checksum);
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().expect("4 bytes")) {
        return Err(DataError::Checksum);
    }
    let mut cur = Cursor {
        bytes: body,
        pos: 4,
    };
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(DataError::Version {
            found: version,
            supported: VERSION,
        });
    }
    let header = cur.string("header")?;
    let mut tensors = Vec::new();
    while cur.pos < body.len() {
        let name = cur.string("tensor name")?;
        let rank = cur.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(cur.u64("tensor dims")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| DataError::Malformed(format!("tensor {name} is too large")))?;
        let payload = cur.take(count, "tensor payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| DataError::Malformed(format!("tensor {name}: {e}")))?;
        tensors.push((name, t));
    }
    Ok(Container { header, tensors })
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_container(
    path: &Path,
    header: &str,
    tensors: &[(&str, &Tensor)],
) -> Result<(), DataError> {
    let bytes = encode(header, tensors);
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(&bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_container(path: &Path) -> Result<Container, DataError> {
    decode(&fs::read(path).map_err(io_err(path))?)
}

pub fn save_weights(network: &Network, path: &Path) -> Result<(), DataError> {
    let params = network.parameters();
    let named: Vec<(&str, &Tensor)> = params.iter().map(|(n, t)| (n.as_str(), *t)).collect();
    write_container(path, &network.config().to_toml(), &named)
}

fn fill(network: &mut Network, tensors: Vec<(String, Tensor)>) -> Result<(), DataError> {
    let names: Vec<String> = network.parameters().into_iter().map(|(n, _)| n).collect();
    for (name, (got_name, _)) in names.iter().zip(&tensors) {
        if name != got_name {
            return Err(DataError::TensorSet {
                tensor: got_name.clone(),
                reason: format!("found where {name} was expected"),
            });
        }
    }
    if tensors.len() > names.len() {
        return Err(DataError::TensorSet {
            tensor: tensors[names.len()].0.clone(),
            reason: "not a parameter of the configured network".into(),
        });
    }
    if tensors.len() < names.len() {
        return Err(DataError::TensorSet {
            tensor: names[tensors.len()].clone(),
            reason: "missing from the file".into(),
        });
    }
    for ((slot, name), (got_name, t)) in network
        .parameters_mut()
        .into_iter()
        .zip(&names)
        .zip(tensors)
    {
        debug_assert_eq!(*name, got_name);
        if slot.shape() != t.shape() {
            return Err(DataError::ShapeMismatch {
                tensor: got_name,
                expected: slot.shape().to_vec(),
                got: t.shape().to_vec(),
            });
        }
        *slot = t;
    }
    Ok(())
}

/// Rebuilds the network described by the file's own config echo.
pub fn load_weights(path: &Path) -> Result<Network, DataError> {
    let c = read_container(path)?;
    let cfg = ModelConfig::from_toml(&c.header)?;
    let mut net = Network::zeros(&cfg)?;
    fill(&mut net, c.tensors)?;
    Ok(net)
}

/// Loads weights into a network built from `expected`; every tensor must
/// match that configuration's shapes.
pub fn load_weights_for(path: &Path, expected: &ModelConfig) -> Result<Network, DataError> {
    let c = read_container(path)?;
    match ModelConfig::from_toml(&c.header) {
        Ok(stored) if stored != *expected => {
            warn!(
                "{}: stored model config differs from the requested one",
                path.display()
            )
        }
        Err(e) => warn!("{}: unreadable config echo: {e}", path.display()),
        _ => {}
    }
    let mut net = Network::zeros(expected)?;
    fill(&mut net, c.tensors)?;
    Ok(net)
}
