//! Lossless `b×b` interleave of an image into `b²` sub-images, and the
//! feature extraction front end built on top of it.

mod fexm;

pub use fexm::{fexm_forward, fexm_inverse, FexmFeatures};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Array, Tensor};

pub const CHANNELS: usize = 3;

/// RGB image stored channel-planar (`[3, H, W]`) with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
    original: Option<(usize, usize)>,
}

impl PlanarImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!("image extents must be positive, got {height}x{width}")));
        }
        if data.len() != CHANNELS * height * width {
            return Err(shape_err!("{}x{height}x{width} image needs {} values, got {}",
                CHANNELS, CHANNELS * height * width, data.len()));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data, original: None })
    }

    /// Builds an image from `f(channel, row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(CHANNELS * height * width);
        for c in 0..CHANNELS {
            for r in 0..height {
                for col in 0..width {
                    data.push(f(c, r, col));
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn from_array(a: &Array) -> Result<Self> {
        match *a.shape() {
            [CHANNELS, h, w] => Self::new(h, w, a.data().to_vec()),
            _ => Err(shape_err!("expected a [3,H,W] array, got {:?}", a.shape())),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Channel-planar values.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[(c * self.height + r) * self.width + col]
    }

    /// Extents before padding, if this image was padded.
    pub fn original_size(&self) -> Option<(usize, usize)> {
        self.original
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Result<Self> {
        let mut out = Self::new(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())?;
        out.original = self.original;
        Ok(out)
    }

    pub fn to_array(&self) -> Array {
        Array::new(&[CHANNELS, self.height, self.width], self.data.clone()).expect("image extents are valid")
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::constant(self.to_array())
    }
}

/// In-patch ordering of sub-images. Only row-major offsets are defined; the
/// id is written into the bitstream header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ordering {
    RowMajor,
}

impl Ordering {
    pub fn id(self) -> u8 {
        0
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Ordering::RowMajor),
            _ => Err(Error::InvalidArgument(format!("unknown sub-image ordering id {id}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitConfig {
    b: usize,
    ordering: Ordering,
}

impl SplitConfig {
    pub const MIN_B: usize = 2;
    pub const MAX_B: usize = 5;

    pub fn new(b: usize) -> Result<Self> {
        if !(Self::MIN_B..=Self::MAX_B).contains(&b) {
            return Err(Error::InvalidArgument(format!(
                "patch side b={b} unsupported (expected {}..={})", Self::MIN_B, Self::MAX_B
            )));
        }
        Ok(Self { b, ordering: Ordering::RowMajor })
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn ordering(&self) -> Ordering {
        self.ordering
    }

    pub fn count(&self) -> usize {
        self.b * self.b
    }

    /// Sub-image index of in-patch offset `(i, j)`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.b + j
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubImageSet {
    images: Vec<PlanarImage>,
    cfg: SplitConfig,
}

impl SubImageSet {
    pub fn new(images: Vec<PlanarImage>, cfg: SplitConfig) -> Result<Self> {
        if images.len() != cfg.count() {
            return Err(shape_err!("b={} needs {} sub-images, got {}", cfg.b(), cfg.count(), images.len()));
        }
        let (h, w) = (images[0].height, images[0].width);
        if images.iter().any(|s| s.height != h || s.width != w) {
            return Err(shape_err!("sub-images have inconsistent extents"));
        }
        Ok(Self { images, cfg })
    }

    pub fn images(&self) -> &[PlanarImage] {
        &self.images
    }

    pub fn config(&self) -> SplitConfig {
        self.cfg
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        self.images.iter().map(PlanarImage::to_tensor).collect()
    }
}

pub fn split(x: &PlanarImage, cfg: SplitConfig) -> Result<SubImageSet> {
    let b = cfg.b();
    if !x.height.is_multiple_of(b) || !x.width.is_multiple_of(b) {
        return Err(shape_err!("{}x{} image not divisible by b={b}; pad it first", x.height, x.width));
    }
    let (h, w) = (x.height / b, x.width / b);
    let mut images = Vec::with_capacity(cfg.count());
    for i in 0..b {
        for j in 0..b {
            images.push(PlanarImage::from_fn(h, w, |c, r, col| x.get(c, r * b + i, col * b + j))?);
        }
    }
    SubImageSet::new(images, cfg)
}

pub fn reconstruct(s: &SubImageSet) -> Result<PlanarImage> {
    let cfg = s.cfg;
    let b = cfg.b();
    let first = &s.images[0];
    if s.images.iter().any(|t| t.height != first.height || t.width != first.width) {
        return Err(shape_err!("sub-images have inconsistent extents"));
    }
    PlanarImage::from_fn(first.height * b, first.width * b, |c, r, col| {
        s.images[cfg.index(r % b, col % b)].get(c, r / b, col / b)
    })
}

/// Replicates the last row/column until both extents are multiples of `b`.
pub fn pad_to_multiple(x: &PlanarImage, b: usize) -> PlanarImage {
    let b = b.max(1);
    let h = x.height.div_ceil(b) * b;
    let w = x.width.div_ceil(b) * b;
    if h == x.height && w == x.width {
        return x.clone();
    }
    let mut out = PlanarImage::from_fn(h, w, |c, r, col| {
        x.get(c, r.min(x.height - 1), col.min(x.width - 1))
    })
    .expect("padding preserves the value range");
    out.original = Some(x.original.unwrap_or((x.height, x.width)));
    out
}

/// Undoes [`pad_to_multiple`]; images without a size record are returned as-is.
pub fn crop_to_original(x: &PlanarImage) -> PlanarImage {
    match x.original {
        Some((h, w)) => crop(x, h, w).expect("recorded size fits inside the padded image"),
        None => x.clone(),
    }
}

/// Top-left `height×width` window.
pub fn crop(x: &PlanarImage, height: usize, width: usize) -> Result<PlanarImage> {
    if height > x.height || width > x.width {
        return Err(shape_err!("cannot crop {}x{} to {height}x{width}", x.height, x.width));
    }
    PlanarImage::from_fn(height, width, |c, r, col| x.get(c, r, col))
}

/// Differentiable split of a `[C, H, W]` tensor into `b²` `[C, H/b, W/b]`
/// tensors, ordered like [`split`].
pub fn split_tensor(x: &Tensor, b: usize) -> Result<Vec<Tensor>> {
    let &[c, hh, ww] = x.shape() else {
        return Err(shape_err!("split expects [C,H,W], got {:?}", x.shape()));
    };
    if b == 0 || hh % b != 0 || ww % b != 0 {
        return Err(shape_err!("{hh}x{ww} not divisible by b={b}"));
    }
    let (h, w) = (hh / b, ww / b);
    x.reshape(&[c, h, b, w, b])?
        .permute(&[2, 4, 0, 1, 3])?
        .reshape(&[b * b, c, h, w])?
        .unstack()
}

/// Differentiable inverse of [`split_tensor`].
pub fn merge_tensors(parts: &[Tensor], b: usize) -> Result<Tensor> {
    if b == 0 || parts.len() != b * b {
        return Err(shape_err!("merge needs b²={} parts, got {}", b * b, parts.len()));
    }
    let &[c, h, w] = parts[0].shape() else {
        return Err(shape_err!("merge expects [C,H,W] parts, got {:?}", parts[0].shape()));
    };
    Tensor::stack(parts)?
        .reshape(&[b, b, c, h, w])?
        .permute(&[2, 3, 0, 4, 1])?
        .reshape(&[c, h * b, w * b])
}
