//! Coding images end to end and summarizing rate and quality.

use crate::entropy::{compress, decompress, EncodeOptions};
use crate::error::{Error, Result};
use crate::interleave::PlanarImage;
use crate::model::Model;

use super::metrics::{ms_ssim, psnr, RdPoint};

/// Rate counted over the whole serialized stream, container included.
pub fn evaluate_image(model: &Model, img: &PlanarImage, opts: EncodeOptions) -> Result<(RdPoint, Vec<u8>)> {
    let bytes = compress(model, img, opts)?;
    let rec = decompress(&bytes, model)?;
    let bpp = 8.0 * bytes.len() as f64 / (img.height() * img.width()) as f64;
    let point = RdPoint { bpp, psnr: psnr(img, &rec)?, ms_ssim: ms_ssim(img, &rec)?.value };
    Ok((point, bytes))
}

/// Mean rate and quality over a set of images.
pub fn evaluate_set(model: &Model, images: &[PlanarImage], opts: EncodeOptions) -> Result<RdPoint> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("no images to evaluate".into()));
    }
    let mut acc = RdPoint { bpp: 0.0, psnr: 0.0, ms_ssim: 0.0 };
    for img in images {
        let (p, _) = evaluate_image(model, img, opts)?;
        acc.bpp += p.bpp;
        acc.psnr += p.psnr;
        acc.ms_ssim += p.ms_ssim;
    }
    let n = images.len() as f64;
    Ok(RdPoint { bpp: acc.bpp / n, psnr: acc.psnr / n, ms_ssim: acc.ms_ssim / n })
}

/// Reads RD points from CSV with a header naming at least `bpp` and `psnr`
/// columns (`ms_ssim` optional); other columns and `#` lines are ignored.
pub fn parse_rd_csv(text: &str) -> Result<Vec<RdPoint>> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::Format("empty RD table".into()))?.split(',').collect();
    let col = |name: &str| header.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let (bpp, ps) = match (col("bpp"), col("psnr")) {
        (Some(b), Some(p)) => (b, p),
        _ => return Err(Error::Format("RD table needs `bpp` and `psnr` columns".into())),
    };
    let ms = col("ms_ssim");
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |i: usize| -> Result<f64> {
            f.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("RD table row {}: bad or missing field {}", n + 2, i + 1)))
        };
        let ms_ssim = match ms {
            Some(i) => get(i)?,
            None => f64::NAN,
        };
        out.push(RdPoint { bpp: get(bpp)?, psnr: get(ps)?, ms_ssim });
    }
    Ok(out)
}
