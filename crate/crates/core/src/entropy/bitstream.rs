//! Byte-exact container and the image-level encoder and decoder.
//!
//! Layout, little-endian:
//!
//! | field          | type    |
//! |----------------|---------|
//! | magic `ILIC1`  | 5 bytes |
//! | version        | u16     |
//! | height, width  | u32 ×2  |
//! | b              | u8      |
//! | model id       | 8 bytes |
//! | λ index        | u8      |
//! | harmonics      | u8      |
//! | qecm flag      | u8      |
//! | ordering id    | u8      |
//! | noise seed     | u64     |
//! | z, y lengths   | u32 ×2  |
//! | z, y segments  | bytes   |
//! | CRC-32         | u32     |
//!
//! The CRC covers every preceding byte.

use super::range::{decode_symbols, encode_symbols};
use super::table::FrequencyTable;
use crate::codec::rate::{factorized_scale, Dist};
use crate::error::{Error, Result};
use crate::interleave::{Ordering, PlanarImage};
use crate::model::{Geometry, Model, PRIOR_LOC, PRIOR_LOG_SCALE};
use crate::tensor::Array;

pub const MAGIC: &[u8; 5] = b"ILIC1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 44;
const CRC_LEN: usize = 4;

/// RD weights with a one-byte code in the header.
pub const LAMBDAS: [f64; 6] = [0.0018, 0.0035, 0.0067, 0.013, 0.025, 0.0483];
pub const LAMBDA_CUSTOM: u8 = u8::MAX;

pub fn lambda_index(lambda: Option<f64>) -> u8 {
    lambda.and_then(|l| LAMBDAS.iter().position(|&v| v == l)).map_or(LAMBDA_CUSTOM, |i| i as u8)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Header {
    pub version: u16,
    pub height: u32,
    pub width: u32,
    pub b: u8,
    pub model_id: [u8; 8],
    pub lambda_index: u8,
    pub harmonics: u8,
    pub qecm: bool,
    pub ordering: u8,
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitstream {
    pub header: Header,
    pub z: Vec<u8>,
    pub y: Vec<u8>,
}

impl Bitstream {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let h = &self.header;
        let seg_len = |s: &[u8]| {
            u32::try_from(s.len()).map_err(|_| Error::InvalidArgument("segment longer than 4 GiB".into()))
        };
        let mut out = Vec::with_capacity(HEADER_LEN + self.z.len() + self.y.len() + CRC_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&h.version.to_le_bytes());
        out.extend_from_slice(&h.height.to_le_bytes());
        out.extend_from_slice(&h.width.to_le_bytes());
        out.push(h.b);
        out.extend_from_slice(&h.model_id);
        out.push(h.lambda_index);
        out.push(h.harmonics);
        out.push(u8::from(h.qecm));
        out.push(h.ordering);
        out.extend_from_slice(&h.noise_seed.to_le_bytes());
        out.extend_from_slice(&seg_len(&self.z)?.to_le_bytes());
        out.extend_from_slice(&seg_len(&self.y)?.to_le_bytes());
        debug_assert_eq!(out.len(), HEADER_LEN);
        out.extend_from_slice(&self.z);
        out.extend_from_slice(&self.y);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        if data.len() < HEADER_LEN + CRC_LEN {
            return Err(Error::Corrupt(format!("{} bytes is shorter than the header", data.len())));
        }
        if &data[..5] != MAGIC {
            return Err(Error::Corrupt("bad magic".into()));
        }
        let mut r = Reader { data, pos: 5 };
        let version = u16::from_le_bytes(r.take());
        if version != VERSION {
            return Err(Error::Corrupt(format!("unsupported version {version}")));
        }
        let height = u32::from_le_bytes(r.take());
        let width = u32::from_le_bytes(r.take());
        let [b] = r.take();
        let model_id = r.take();
        let [lambda_index, harmonics, qecm, ordering] = r.take();
        let noise_seed = u64::from_le_bytes(r.take());
        let z_len = u32::from_le_bytes(r.take()) as usize;
        let y_len = u32::from_le_bytes(r.take()) as usize;
        let expected = HEADER_LEN as u64 + z_len as u64 + y_len as u64 + CRC_LEN as u64;
        if data.len() as u64 != expected {
            return Err(Error::Corrupt(format!("stream has {} bytes, header announces {expected}", data.len())));
        }
        let body = data.len() - CRC_LEN;
        let crc = u32::from_le_bytes(data[body..].try_into().expect("four bytes"));
        if crc32fast::hash(&data[..body]) != crc {
            return Err(Error::Corrupt("checksum mismatch".into()));
        }
        if qecm > 1 {
            return Err(Error::Corrupt(format!("qecm flag {qecm}")));
        }
        let header = Header {
            version,
            height,
            width,
            b,
            model_id,
            lambda_index,
            harmonics,
            qecm: qecm == 1,
            ordering,
            noise_seed,
        };
        Ok(Self {
            header,
            z: data[HEADER_LEN..HEADER_LEN + z_len].to_vec(),
            y: data[HEADER_LEN + z_len..body].to_vec(),
        })
    }

    /// Coded size in bytes of both segments, without container overhead.
    pub fn payload_len(&self) -> usize {
        self.z.len() + self.y.len()
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let v = self.data[self.pos..self.pos + N].try_into().expect("length checked by caller");
        self.pos += N;
        v
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EncodeOptions {
    /// Seed of the decoder-side compensation noise, carried in the header.
    pub noise_seed: u64,
}

fn to_symbols(a: &Array) -> Result<Vec<i32>> {
    a.data()
        .iter()
        .map(|&v| {
            if v.fract() != 0.0 || v.abs() > i32::MAX as f64 {
                Err(Error::InvalidArgument(format!("latent value {v} is not a codable integer")))
            } else {
                Ok(v as i32)
            }
        })
        .collect()
}

/// Per-channel tables of the factorized hyper-latent prior.
pub fn hyper_tables(model: &Model) -> Result<Vec<FrequencyTable>> {
    let get = |name: &str| {
        model.params.get(name).map(|p| p.value.data().to_vec()).ok_or_else(|| Error::MissingParam(name.into()))
    };
    let loc = get(PRIOR_LOC)?;
    let log_scale = get(PRIOR_LOG_SCALE)?;
    loc.iter()
        .zip(&log_scale)
        .map(|(&l, &s)| FrequencyTable::discretized(Dist::Logistic, l, factorized_scale(s)))
        .collect()
}

/// Per-element tables of the conditional Gaussian.
pub fn latent_tables(mu: &Array, sigma: &Array) -> Result<Vec<FrequencyTable>> {
    mu.data()
        .iter()
        .zip(sigma.data())
        .map(|(&m, &s)| FrequencyTable::discretized(Dist::Gaussian, m, s))
        .collect()
}

fn z_table_iter(tables: &[FrequencyTable], geometry: Geometry) -> impl Iterator<Item = &FrequencyTable> {
    let plane = geometry.hyper.0 * geometry.hyper.1;
    tables.iter().flat_map(move |t| std::iter::repeat_n(t, plane))
}

pub fn encode_image(model: &Model, x: &PlanarImage, opts: EncodeOptions) -> Result<Bitstream> {
    let cfg = &model.cfg;
    let (height, width) = (x.height(), x.width());
    let too_big = |v: usize| u32::try_from(v).map_err(|_| Error::InvalidArgument("image too large".into()));
    let lat = model.encode_latents(x, opts.noise_seed)?;
    let z_tables = hyper_tables(model)?;
    let z = encode_symbols(&to_symbols(&lat.z)?, z_table_iter(&z_tables, lat.geometry))?;
    let y_tables = latent_tables(&lat.mu, &lat.sigma)?;
    let y = encode_symbols(&to_symbols(&lat.y)?, &y_tables)?;
    let header = Header {
        version: VERSION,
        height: too_big(height)?,
        width: too_big(width)?,
        b: cfg.b as u8,
        model_id: model.model_id(),
        lambda_index: lambda_index(model.lambda),
        harmonics: cfg.harmonics as u8,
        qecm: cfg.qecm_enabled,
        ordering: Ordering::RowMajor.id(),
        noise_seed: opts.noise_seed,
    };
    Ok(Bitstream { header, z, y })
}

pub fn decode_image(bs: &Bitstream, model: &Model) -> Result<PlanarImage> {
    let h = &bs.header;
    let cfg = &model.cfg;
    if h.model_id != model.model_id() {
        return Err(Error::Corrupt("bitstream was produced by a different model".into()));
    }
    if h.b as usize != cfg.b || h.harmonics as usize != cfg.harmonics || h.qecm != cfg.qecm_enabled {
        return Err(Error::Corrupt("header settings disagree with the model configuration".into()));
    }
    Ordering::from_id(h.ordering).map_err(|_| Error::Corrupt(format!("unknown ordering {}", h.ordering)))?;
    if h.height == 0 || h.width == 0 {
        return Err(Error::Corrupt("empty image extents".into()));
    }
    let geometry = cfg.geometry(h.height as usize, h.width as usize);
    let z_shape = [cfg.mz, geometry.hyper.0, geometry.hyper.1];
    let z_tables = hyper_tables(model)?;
    let z_sym = decode_symbols(&bs.z, z_table_iter(&z_tables, geometry))?;
    let z = Array::new(&z_shape, z_sym.into_iter().map(f64::from).collect())?;
    let params = model.entropy_params(&z, geometry, h.noise_seed)?;
    let y_tables = latent_tables(&params.mu.to_array(), &params.sigma.to_array())?;
    let y_sym = decode_symbols(&bs.y, &y_tables)?;
    let y = Array::new(params.mu.shape(), y_sym.into_iter().map(f64::from).collect())?;
    model.reconstruct(&y, geometry, h.noise_seed)
}

/// Serialized form of [`encode_image`].
pub fn compress(model: &Model, x: &PlanarImage, opts: EncodeOptions) -> Result<Vec<u8>> {
    encode_image(model, x, opts)?.to_bytes()
}

pub fn decompress(data: &[u8], model: &Model) -> Result<PlanarImage> {
    decode_image(&Bitstream::from_bytes(data)?, model)
}
