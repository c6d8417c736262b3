//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "HSNT"  version:u32  count:u32
//! count x { name_len:u32  name:utf8  rank:u32  dims:u64 x rank  values:f32 x prod(dims) }
//! crc32:u32   (IEEE, over every preceding byte)
//! ```
//!
//! Tensors are written in sorted name order: every parameter plus the
//! batch-norm running statistics as `<bn>.running_mean` / `.running_var`
//! with dims `(1, C, 1, 1)`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::Network;
use crate::tensor::Tensor4;

pub const MAGIC: &[u8; 4] = b"HSNT";
pub const FORMAT_VERSION: u32 = 1;

/// Every tensor of `net` by name, values as stored in memory.
pub fn named_tensors(net: &Network) -> Result<BTreeMap<String, Tensor4>> {
    let mut out = BTreeMap::new();
    for p in net.store.params() {
        out.insert(p.name.clone(), p.value.clone());
    }
    for (name, s) in net.store.stats() {
        let c = s.channels();
        out.insert(
            format!("{name}.running_mean"),
            Tensor4::from_vec([1, c, 1, 1], s.running_mean.clone())?,
        );
        out.insert(
            format!("{name}.running_var"),
            Tensor4::from_vec([1, c, 1, 1], s.running_var.clone())?,
        );
    }
    Ok(out)
}

pub fn encode(tensors: &BTreeMap<String, Tensor4>) -> Result<Vec<u8>> {
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let count =
        u32::try_from(tensors.len()).map_err(|_| Error::Argument("too many tensors".into()))?;
    b.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let len = u32::try_from(name.len())
            .map_err(|_| Error::Argument(format!("name too long: {name}")))?;
        b.extend_from_slice(&len.to_le_bytes());
        b.extend_from_slice(name.as_bytes());
        b.extend_from_slice(&4u32.to_le_bytes());
        for d in t.dims() {
            b.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            b.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&b);
    b.extend_from_slice(&crc.to_le_bytes());
    Ok(b)
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

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Parses a checkpoint image. The CRC is verified before anything else, so
/// a damaged file never yields partial contents.
pub fn decode(bytes: &[u8]) -> Result<BTreeMap<String, Tensor4>> {
    if bytes.len() < 16 {
        return Err(Error::Corrupt(format!(
            "{} bytes is too short for a checkpoint",
            bytes.len()
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Corrupt(format!(
            "CRC mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let mut r = Reader {
        bytes: body,
        pos: 0,
    };
    if r.take(4)? != MAGIC {
        return Err(Error::Corrupt("bad magic, not an HSNT checkpoint".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Incompatible(format!(
            "checkpoint format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let count = r.u32()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?
            .to_owned();
        let rank = r.u32()?;
        if rank != 4 {
            return Err(Error::Incompatible(format!(
                "`{name}` has rank {rank}, expected 4"
            )));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = usize::try_from(r.u64()?)
                .map_err(|_| Error::Corrupt(format!("`{name}` dims overflow")))?;
        }
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Corrupt(format!("`{name}` dims {dims:?} overflow")))?;
        let raw = r.take(n)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        if out
            .insert(name.clone(), Tensor4::from_vec(dims, data)?)
            .is_some()
        {
            return Err(Error::Corrupt(format!("duplicate tensor `{name}`")));
        }
    }
    if r.pos != body.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes",
            body.len() - r.pos
        )));
    }
    Ok(out)
}

/// Writes via a temporary file and rename so readers never see a partial
/// checkpoint.
pub fn save(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(&named_tensors(net)?)?;
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<BTreeMap<String, Tensor4>> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Replaces every tensor of `net` with the checkpoint's. The name sets and
/// every shape must match exactly; nothing is modified otherwise.
pub fn restore(net: &mut Network, tensors: &BTreeMap<String, Tensor4>) -> Result<()> {
    let expected = named_tensors(net)?;
    let missing: Vec<&String> = expected
        .keys()
        .filter(|k| !tensors.contains_key(*k))
        .collect();
    let extra: Vec<&String> = tensors
        .keys()
        .filter(|k| !expected.contains_key(*k))
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        let show = |v: &[&String]| {
            v.iter()
                .take(3)
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        };
        return Err(Error::Incompatible(format!(
            "{} missing tensor(s) [{}], {} unexpected [{}]",
            missing.len(),
            show(&missing),
            extra.len(),
            show(&extra)
        )));
    }
    for (name, t) in &expected {
        if tensors[name].dims() != t.dims() {
            return Err(Error::Incompatible(format!(
                "`{name}` has dims {:?}, network expects {:?}",
                tensors[name].dims(),
                t.dims()
            )));
        }
    }
    for p in net.store.params_mut() {
        p.value = tensors[&p.name].clone();
    }
    for (name, s) in net.store.stats_mut() {
        s.running_mean = tensors[&format!("{name}.running_mean")].data().to_vec();
        s.running_var = tensors[&format!("{name}.running_var")].data().to_vec();
    }
    Ok(())
}

pub fn load(net: &mut Network, path: impl AsRef<Path>) -> Result<()> {
    restore(net, &read(path)?)
}

/// Rounds every parameter and statistic through f32, the precision a
/// checkpoint stores.
pub fn quantize(net: &mut Network) {
    for p in net.store.params_mut() {
        p.value.quantize_f32();
    }
    for (_, s) in net.store.stats_mut() {
        for v in s.running_mean.iter_mut().chain(s.running_var.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }
}
