//! The full codec: interleave, feature extraction and refinement, the
//! hyperprior VAE with quantization error compensation, feature
//! enhancement and the mirrored decoder.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::codec::{self, CodecDims, GaussianParams};
use crate::error::{shape_err, Error, Result};
use crate::fenm::{self, DenseConfig};
use crate::interleave::{self, FexmFeatures, PlanarImage, SplitConfig};
use crate::qecm::{self, LaplaceParams, Sawtooth};
use crate::refine::{self, Res3dVariant};
use crate::tensor::{checkpoint, fnv1a, Array, Init, ParamStore, Scope, Tensor};

/// Architecture hyperparameters. Everything here is stored with the
/// parameters, so a checkpoint fully determines the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub b: usize,
    pub n: usize,
    pub m: usize,
    pub mz: usize,
    pub crm_per_stage: usize,
    pub frm_variant: Res3dVariant,
    /// Channels of each sub-image feature inside the refinement block.
    pub frm_channels: usize,
    pub fenm: DenseConfig,
    pub fenm_enabled: bool,
    pub qecm_enabled: bool,
    pub harmonics: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            b: 2,
            n: 32,
            m: 64,
            mz: 32,
            crm_per_stage: 1,
            frm_variant: Res3dVariant::B,
            frm_channels: 32,
            fenm: DenseConfig::default(),
            fenm_enabled: true,
            qecm_enabled: true,
            harmonics: qecm::DEFAULT_HARMONICS,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        SplitConfig::new(self.b)?;
        let sizes = [self.n, self.m, self.mz, self.frm_channels, self.fenm.growth, self.harmonics];
        if sizes.contains(&0) {
            return Err(Error::Config("model widths and harmonic count must be positive".into()));
        }
        if self.harmonics > u8::MAX as usize {
            return Err(Error::Config("harmonic count must fit in one byte".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> CodecDims {
        CodecDims { n: self.n, m: self.m, mz: self.mz, crm_per_stage: self.crm_per_stage }
    }

    /// Number of stacked features, `b² + 1`.
    pub fn stack_len(&self) -> usize {
        self.b * self.b + 1
    }

    /// Channels of the refined feature fed to the analysis transform.
    pub fn refined_channels(&self) -> usize {
        self.stack_len() * self.frm_channels
    }

    /// Images are padded to a multiple of this.
    pub fn granularity(&self) -> usize {
        8 * self.b
    }

    pub fn sawtooth(&self) -> Sawtooth {
        Sawtooth::Fourier(self.harmonics)
    }

    pub fn geometry(&self, height: usize, width: usize) -> Geometry {
        let g = self.granularity();
        let (ph, pw) = (height.div_ceil(g) * g, width.div_ceil(g) * g);
        let (sh, sw) = (ph / self.b, pw / self.b);
        let (lh, lw) = (sh / 8, sw / 8);
        Geometry {
            original: (height, width),
            padded: (ph, pw),
            sub: (sh, sw),
            latent: (lh, lw),
            hyper: (lh.div_ceil(2).div_ceil(2), lw.div_ceil(2).div_ceil(2)),
        }
    }

    /// Sets one `model.*`, `frm.*`, `fenm.*`, `qecm.*` or `split.b` key.
    /// Returns `false` for keys that do not belong to the model.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num(key: &str, v: &str) -> Result<usize> {
            v.trim().parse().map_err(|_| Error::Config(format!("`{key}` expects a nonnegative integer, got `{v}`")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v.trim() {
                "true" | "1" | "on" => Ok(true),
                "false" | "0" | "off" => Ok(false),
                _ => Err(Error::Config(format!("`{key}` expects true or false, got `{v}`"))),
            }
        }
        match key {
            "split.b" => self.b = num(key, value)?,
            "model.N" => self.n = num(key, value)?,
            "model.M" => self.m = num(key, value)?,
            "model.Mz" => self.mz = num(key, value)?,
            "model.crm_per_stage" => self.crm_per_stage = num(key, value)?,
            "frm.variant" => self.frm_variant = value.trim().parse()?,
            "frm.channels" => self.frm_channels = num(key, value)?,
            "fenm.layers" => self.fenm.layers = num(key, value)?,
            "fenm.growth" => self.fenm.growth = num(key, value)?,
            "fenm.enabled" => self.fenm_enabled = flag(key, value)?,
            "qecm.enabled" => self.qecm_enabled = flag(key, value)?,
            "qecm.harmonics" => self.harmonics = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Key/value form used in checkpoints and for the model id.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("split.b", self.b.to_string()),
            ("model.N", self.n.to_string()),
            ("model.M", self.m.to_string()),
            ("model.Mz", self.mz.to_string()),
            ("model.crm_per_stage", self.crm_per_stage.to_string()),
            ("frm.variant", self.frm_variant.name().to_string()),
            ("frm.channels", self.frm_channels.to_string()),
            ("fenm.layers", self.fenm.layers.to_string()),
            ("fenm.growth", self.fenm.growth.to_string()),
            ("fenm.enabled", self.fenm_enabled.to_string()),
            ("qecm.enabled", self.qecm_enabled.to_string()),
            ("qecm.harmonics", self.harmonics.to_string()),
        ]
    }
}

/// Extents of every intermediate for one input size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub original: (usize, usize),
    pub padded: (usize, usize),
    pub sub: (usize, usize),
    pub latent: (usize, usize),
    pub hyper: (usize, usize),
}

/// Named intermediate outputs of one forward pass, in pipeline order.
#[derive(Clone, Default)]
pub struct Stages {
    entries: Vec<(&'static str, Tensor)>,
}

impl Stages {
    fn record(&mut self, name: &'static str, t: &Tensor) {
        self.entries.push((name, t.clone()));
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    /// FNV-1a hash over the bit patterns of each stage output.
    pub fn hashes(&self) -> BTreeMap<&'static str, u64> {
        self.entries.iter().map(|(n, t)| (*n, hash_values(t.data()))).collect()
    }
}

pub fn hash_values(values: &[f64]) -> u64 {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_bits().to_le_bytes()).collect();
    fnv1a(&bytes)
}

/// Outputs of the training-path forward pass.
pub struct TrainForward {
    pub x_hat: Tensor,
    pub bits_y: Tensor,
    pub bits_z: Tensor,
    /// Encoder-side refined feature.
    pub refined: Tensor,
    /// Decoded feature after enhancement (equal to the synthesis output
    /// when enhancement is disabled).
    pub enhanced: Tensor,
    pub stages: Stages,
}

/// Rounded symbols and entropy parameters of one encoded image.
#[derive(Clone, Debug)]
pub struct Latents {
    pub geometry: Geometry,
    /// Rounded (compensated) latent, `[M, h, w]`.
    pub y: Array,
    /// Rounded (compensated) hyper-latent, `[Mz, h/4, w/4]`.
    pub z: Array,
    pub mu: Array,
    pub sigma: Array,
}

pub const PRIOR_LOC: &str = "prior.loc";
const CFG_PREFIX: &str = "cfg.";
/// Laplace location and scale of the decoder-side noise, `[y, z]`.
pub const QECM_MU: &str = "qecm.mu";
pub const QECM_B: &str = "qecm.b";
const LAMBDA_RECORD: &str = "train.lambda";
pub const PRIOR_LOG_SCALE: &str = "prior.log_scale";

/// Stream ids for the decoder-side noise of the two latents.
const Z_STREAM: u64 = 1;
const Y_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub laplace_y: LaplaceParams,
    pub laplace_z: LaplaceParams,
    /// RD weight the parameters were trained for, when known.
    pub lambda: Option<f64>,
}

impl Model {
    /// Fresh parameters, a pure function of `(cfg, seed)`.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let s = Scope::initializer(seed);
        let g = cfg.granularity();
        let dummy = Tensor::zeros(&[3, g, g]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        train_forward(&s, &cfg, &dummy, &mut rng)?;
        let mut params = s.into_store()?;
        // disabled modules still get parameters so toggling keeps checkpoints compatible
        let s = Scope::initializer(seed);
        let f = Tensor::zeros(&[cfg.refined_channels(), 1, 1]);
        fenm::fenm_forward(&s.sub("fenm"), &f, cfg.fenm)?;
        for (name, p) in s.into_store()?.iter() {
            if params.get(name).is_none() {
                params.insert(name, p.value.clone())?;
            }
        }
        Ok(Self { cfg, params, laplace_y: LaplaceParams::default(), laplace_z: LaplaceParams::default(), lambda: None })
    }

    /// First 8 bytes of SHA-256 over configuration, parameters and the
    /// decoder-side noise parameters.
    pub fn model_id(&self) -> [u8; 8] {
        let mut h = Sha256::new();
        for (k, v) in self.cfg.to_pairs() {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        for (name, p) in self.params.iter() {
            h.update(name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        for lp in [self.laplace_y, self.laplace_z] {
            h.update(lp.mu.to_le_bytes());
            h.update(lp.b.to_le_bytes());
        }
        let d = h.finalize();
        d[..8].try_into().expect("digest is 32 bytes")
    }

    /// Configuration, parameters, optimizer state, compensation noise
    /// parameters and the RD weight as checkpoint records.
    pub fn to_records(&self) -> BTreeMap<String, Array> {
        let mut rec = checkpoint::store_records(&self.params);
        for (k, v) in self.cfg.to_pairs() {
            rec.insert(format!("{CFG_PREFIX}{k}"), checkpoint::text_record(&v));
        }
        let lp = [self.laplace_y, self.laplace_z];
        rec.insert(QECM_MU.into(), Array::new(&[2], lp.iter().map(|p| p.mu).collect()).expect("two entries"));
        rec.insert(QECM_B.into(), Array::new(&[2], lp.iter().map(|p| p.b).collect()).expect("two entries"));
        if let Some(l) = self.lambda {
            rec.insert(LAMBDA_RECORD.into(), Array::scalar(l));
        }
        rec
    }

    pub fn from_records(rec: &BTreeMap<String, Array>) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (name, a) in rec.range(CFG_PREFIX.to_string()..) {
            let Some(key) = name.strip_prefix(CFG_PREFIX) else { break };
            if !cfg.set(key, &checkpoint::record_text(a)?)? {
                return Err(Error::Format(format!("unknown configuration record `{name}`")));
            }
        }
        cfg.validate()?;
        let reserved = |n: &str| n.starts_with(CFG_PREFIX) || n == QECM_MU || n == QECM_B || n == LAMBDA_RECORD;
        let params = checkpoint::store_from_records(rec, |n| !reserved(n))?;
        let expected = Model::init(cfg.clone(), 0)?;
        for (name, p) in expected.params.iter() {
            match params.get(name) {
                Some(q) if q.value.shape() == p.value.shape() => {}
                Some(q) => {
                    return Err(Error::Format(format!(
                        "parameter `{name}` has shape {:?}, the configuration needs {:?}",
                        q.value.shape(),
                        p.value.shape()
                    )))
                }
                None => return Err(Error::MissingParam(name.to_string())),
            }
        }
        if params.len() != expected.params.len() {
            return Err(Error::Format("checkpoint holds parameters the configuration does not use".into()));
        }
        let (mut laplace_y, mut laplace_z) = (LaplaceParams::default(), LaplaceParams::default());
        if let (Some(mu), Some(b)) = (rec.get(QECM_MU), rec.get(QECM_B)) {
            if mu.shape() != [2] || b.shape() != [2] {
                return Err(Error::Format("compensation noise records must hold two entries".into()));
            }
            laplace_y = LaplaceParams::new(mu.data()[0], b.data()[0])?;
            laplace_z = LaplaceParams::new(mu.data()[1], b.data()[1])?;
        }
        let lambda = rec.get(LAMBDA_RECORD).map(|a| a.data()[0]);
        Ok(Self { cfg, params, laplace_y, laplace_z, lambda })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        checkpoint::write_records(&mut w, &self.to_records())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        Self::from_records(&checkpoint::read_records(r)?)
    }

    /// Test-path encoder: rounded symbols plus the Gaussian parameters the
    /// decoder will rebuild from `z`.
    pub fn encode_latents(&self, x: &PlanarImage, noise_seed: u64) -> Result<Latents> {
        let cfg = &self.cfg;
        let geometry = cfg.geometry(x.height(), x.width());
        let padded = interleave::pad_to_multiple(x, cfg.granularity());
        let s = Scope::infer(&self.params);
        let xt = padded.to_tensor();
        let (_, y) = analyze(&s, cfg, &xt, &mut Stages::default())?;
        let z = codec::hyper_h_a(&s.sub("h_a"), &y, &cfg.dims())?;
        let compensate = |t: &Tensor| -> Result<Tensor> {
            if cfg.qecm_enabled { qecm::qc_forward(t, cfg.sawtooth()) } else { Ok(t.clone()) }
        };
        let y_sym = codec::round_tensor(&compensate(&y)?)?.to_array();
        let z_sym = codec::round_tensor(&compensate(&z)?)?.to_array();
        let params = self.entropy_params(&z_sym, geometry, noise_seed)?;
        Ok(Latents { geometry, y: y_sym, z: z_sym, mu: params.mu.to_array(), sigma: params.sigma.to_array() })
    }

    fn decompensate(&self, sym: &Array, lp: LaplaceParams, seed: u64, stream: u64) -> Array {
        if !self.cfg.qecm_enabled {
            return sym.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        qecm::iqc_test(sym, self.cfg.sawtooth(), lp, &mut rng)
    }

    /// Gaussian parameters for `y` from the decoded hyper-latent symbols.
    pub fn entropy_params(&self, z_sym: &Array, geometry: Geometry, noise_seed: u64) -> Result<GaussianParams> {
        let z_hat = self.decompensate(z_sym, self.laplace_z, noise_seed, Z_STREAM);
        let s = Scope::infer(&self.params);
        codec::hyper_h_s(&s.sub("h_s"), &Tensor::constant(z_hat), &self.cfg.dims(), geometry.latent)
    }

    /// Test-path decoder from latent symbols to the cropped image.
    pub fn reconstruct(&self, y_sym: &Array, geometry: Geometry, noise_seed: u64) -> Result<PlanarImage> {
        let y_hat = self.decompensate(y_sym, self.laplace_y, noise_seed, Y_STREAM);
        let s = Scope::infer(&self.params);
        let (_, x_hat) = synthesize(&s, &self.cfg, &Tensor::constant(y_hat), geometry.sub, &mut Stages::default())?;
        let mut img = PlanarImage::from_array(&x_hat.to_array())?;
        if geometry.padded != geometry.original {
            img = interleave::crop(&img, geometry.original.0, geometry.original.1)?;
        }
        Ok(img)
    }

    /// Continuous latent `y` of an image (used for quantization error
    /// statistics).
    pub fn latent(&self, x: &PlanarImage) -> Result<(Array, Array)> {
        let padded = interleave::pad_to_multiple(x, self.cfg.granularity());
        let s = Scope::infer(&self.params);
        let (_, y) = analyze(&s, &self.cfg, &padded.to_tensor(), &mut Stages::default())?;
        let z = codec::hyper_h_a(&s.sub("h_a"), &y, &self.cfg.dims())?;
        Ok((y.to_array(), z.to_array()))
    }
}

/// Split, feature extraction, refinement and analysis transform.
fn analyze(s: &Scope, cfg: &ModelConfig, x: &Tensor, st: &mut Stages) -> Result<(Tensor, Tensor)> {
    let subs = interleave::split_tensor(x, cfg.b)?;
    st.record("split", &Tensor::stack(&subs)?);
    let feats = interleave::fexm_forward(&s.sub("fexm"), &subs, x, cfg.b, cfg.frm_channels)?;
    let stacked = refine::stack_features(&feats.subs, &feats.global)?;
    st.record("fexm", &stacked);
    let refined = refine::arb_forward(&s.sub("frm"), &stacked, cfg.frm_variant)?;
    st.record("frm", &refined);
    let y = codec::analysis_g_a(&s.sub("g_a"), &refined, &cfg.dims())?;
    st.record("g_a", &y);
    Ok((refined, y))
}

/// Synthesis transform, enhancement, rearrangement and inverse extraction.
fn synthesize(
    s: &Scope,
    cfg: &ModelConfig,
    y_hat: &Tensor,
    sub: (usize, usize),
    st: &mut Stages,
) -> Result<(Tensor, Tensor)> {
    let f_dec = codec::synthesis_g_s(&s.sub("g_s"), y_hat, &cfg.dims(), cfg.refined_channels(), sub)?;
    st.record("g_s", &f_dec);
    let enhanced = if cfg.fenm_enabled { fenm::fenm_forward(&s.sub("fenm"), &f_dec, cfg.fenm)? } else { f_dec };
    st.record("fenm", &enhanced);
    let mut parts = refine::rearrange_inverse(&s.sub("rearrange"), &enhanced, cfg.stack_len())?;
    let global = parts.pop().expect("stack is non-empty");
    st.record("rearrange", &Tensor::stack(&parts)?);
    let x_hat = interleave::fexm_inverse(&s.sub("ifexm"), &FexmFeatures { subs: parts, global }, cfg.b)?;
    st.record("x_hat", &x_hat);
    Ok((enhanced, x_hat))
}

/// Training path on an unpadded `[3, H, W]` crop whose extents are
/// multiples of `8·b`: uniform-noise quantization and differentiable
/// compensation.
pub fn train_forward<R: Rng>(s: &Scope, cfg: &ModelConfig, x: &Tensor, rng: &mut R) -> Result<TrainForward> {
    forward_with(s, cfg, x, |t| Ok(codec::add_uniform_noise(t, rng)))
}

/// The training-path graph with a caller-chosen quantizer in place of the
/// noise op (rounding, for instance, in an inference scope).
pub fn forward_with(
    s: &Scope,
    cfg: &ModelConfig,
    x: &Tensor,
    mut quantize: impl FnMut(&Tensor) -> Result<Tensor>,
) -> Result<TrainForward> {
    let &[3, h, w] = x.shape() else {
        return Err(shape_err!("expected a [3,H,W] image, got {:?}", x.shape()));
    };
    let g = cfg.granularity();
    if h % g != 0 || w % g != 0 {
        return Err(shape_err!("training crops must be multiples of {g}, got {h}x{w}"));
    }
    let geometry = cfg.geometry(h, w);
    let dims = cfg.dims();
    let saw = cfg.sawtooth();
    let mut st = Stages::default();
    let (refined, y) = analyze(s, cfg, x, &mut st)?;

    let z = codec::hyper_h_a(&s.sub("h_a"), &y, &dims)?;
    st.record("h_a", &z);
    let z_qc = if cfg.qecm_enabled { qecm::qc_forward(&z, saw)? } else { z };
    st.record("qc_z", &z_qc);
    let z_noisy = quantize(&z_qc)?;
    st.record("noisy_z", &z_noisy);
    let loc = s.param(PRIOR_LOC, &[dims.mz], Init::Zeros)?;
    let log_scale = s.param(PRIOR_LOG_SCALE, &[dims.mz], Init::Zeros)?;
    let bits_z = codec::factorized_bits(&z_noisy, &loc, &log_scale)?;
    let z_dec = if cfg.qecm_enabled { qecm::iqc_train(&z_noisy, saw)? } else { z_noisy };
    st.record("iqc_z", &z_dec);
    let gp = codec::hyper_h_s(&s.sub("h_s"), &z_dec, &dims, geometry.latent)?;
    st.record("h_s.mu", &gp.mu);
    st.record("h_s.sigma", &gp.sigma);

    let y_qc = if cfg.qecm_enabled { qecm::qc_forward(&y, saw)? } else { y };
    st.record("qc_y", &y_qc);
    let y_noisy = quantize(&y_qc)?;
    st.record("noisy_y", &y_noisy);
    let bits_y = codec::discretized_bits(codec::Dist::Gaussian, &y_noisy, &gp.mu, &gp.sigma)?;
    let y_dec = if cfg.qecm_enabled { qecm::iqc_train(&y_noisy, saw)? } else { y_noisy };
    st.record("iqc_y", &y_dec);

    let (enhanced, x_hat) = synthesize(s, cfg, &y_dec, geometry.sub, &mut st)?;
    Ok(TrainForward { x_hat, bits_y, bits_z, refined, enhanced, stages: st })
}
