//! Checkpoint container: `"ILIC"`, u16 version, u32 record count, then per
//! record `u32 name length`, UTF-8 name, `u32 rank`, `rank × u32 extents`,
//! raw little-endian `f64` values. Optimizer state lives under `opt.`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::array::Array;
use super::params::{AdamMoments, ParamStore};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ILIC";
pub const CHECKPOINT_VERSION: u16 = 1;
pub const OPT_PREFIX: &str = "opt.";

pub fn write_records<W: Write>(mut w: W, records: &BTreeMap<String, Array>) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, a) in records {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(a.rank() as u32).to_le_bytes())?;
        for &d in a.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Format(format!("extent {d} exceeds u32")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(a.numel() * 8);
        for v in a.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_records<R: Read>(mut r: R) -> Result<BTreeMap<String, Array>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("file too short for a checkpoint".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let mut vb = [0u8; 2];
    r.read_exact(&mut vb).map_err(|_| Error::Format("truncated checkpoint header".into()))?;
    let version = u16::from_le_bytes(vb);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        if len > 4096 {
            return Err(Error::Format(format!("implausible record name length {len}")));
        }
        let mut nb = vec![0u8; len];
        r.read_exact(&mut nb).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
        let name = String::from_utf8(nb).map_err(|_| Error::Format("record name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("record `{name}` has implausible rank {rank}")));
        }
        let shape = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let a = Array::new(&shape, data).map_err(|e| Error::Format(format!("record `{name}`: {e}")))?;
        if out.insert(name.clone(), a).is_some() {
            return Err(Error::Format(format!("duplicate record `{name}`")));
        }
    }
    Ok(out)
}

/// Text stored as a rank-1 record of byte values.
pub fn text_record(text: &str) -> Array {
    let bytes = text.as_bytes();
    Array::new(&[bytes.len()], bytes.iter().map(|&b| b as f64).collect()).expect("rank-1 shape")
}

pub fn record_text(a: &Array) -> Result<String> {
    let bytes = a
        .data()
        .iter()
        .map(|&v| if (0.0..=255.0).contains(&v) && v.fract() == 0.0 { Ok(v as u8) } else { Err(()) })
        .collect::<std::result::Result<Vec<u8>, ()>>()
        .map_err(|_| Error::Format("text record holds non-byte values".into()))?;
    String::from_utf8(bytes).map_err(|_| Error::Format("text record is not UTF-8".into()))
}

/// Flattens parameters and optimizer state into records.
pub fn store_records(store: &ParamStore) -> BTreeMap<String, Array> {
    let mut out = BTreeMap::new();
    for (name, p) in store.iter() {
        out.insert(name.to_string(), p.value.clone());
    }
    out.insert(format!("{OPT_PREFIX}step"), Array::scalar(store.step() as f64));
    for (name, st) in store.moments() {
        let shape = store.get(name).map(|p| p.value.shape().to_vec()).unwrap_or_else(|| vec![st.m.len()]);
        out.insert(format!("{OPT_PREFIX}{name}.m"), Array::new(&shape, st.m.clone()).expect("moment shape"));
        out.insert(format!("{OPT_PREFIX}{name}.v"), Array::new(&shape, st.v.clone()).expect("moment shape"));
    }
    out
}

/// Rebuilds a store from records whose names are accepted by `is_param`.
pub fn store_from_records(records: &BTreeMap<String, Array>, is_param: impl Fn(&str) -> bool) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for (name, a) in records {
        if !name.starts_with(OPT_PREFIX) && is_param(name) {
            store.insert(name, a.clone())?;
        }
    }
    let step = records.get(&format!("{OPT_PREFIX}step")).map(|a| a.data()[0] as u64).unwrap_or(0);
    let mut moments = BTreeMap::new();
    for name in store.names() {
        let m = records.get(&format!("{OPT_PREFIX}{name}.m"));
        let v = records.get(&format!("{OPT_PREFIX}{name}.v"));
        if let (Some(m), Some(v)) = (m, v) {
            moments.insert(name.to_string(), AdamMoments { m: m.data().to_vec(), v: v.data().to_vec() });
        }
    }
    store.restore_optimizer(step, moments);
    Ok(store)
}
