//! Training images and seeded crop sampling.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::image_io;
use crate::interleave::PlanarImage;

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub names: Vec<String>,
    pub images: Vec<PlanarImage>,
}

impl Dataset {
    pub fn new(images: Vec<PlanarImage>) -> Self {
        let names = (0..images.len()).map(|i| format!("image{i}")).collect();
        Self { names, images }
    }

    /// Every `.png` and `.ppm` file of a directory, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("ppm"))
            })
            .collect();
        paths.sort();
        let mut ds = Dataset::default();
        for p in paths {
            ds.images.push(image_io::read_image(&p)?);
            ds.names.push(p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        }
        if ds.images.is_empty() {
            return Err(Error::InvalidArgument(format!("no PNG or PPM images in {}", dir.display())));
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Fails unless every image holds at least one `crop × crop` window.
    pub fn check_crop(&self, crop: usize) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        for (name, img) in self.names.iter().zip(&self.images) {
            if img.height() < crop || img.width() < crop {
                return Err(Error::InvalidArgument(format!(
                    "{name} is {}x{}, smaller than the {crop}x{crop} crop",
                    img.height(),
                    img.width()
                )));
            }
        }
        Ok(())
    }

    /// A random image, a random window and a coin-flip horizontal mirror.
    pub fn sample_crop<R: Rng>(&self, rng: &mut R, crop: usize) -> Result<PlanarImage> {
        let img = &self.images[rng.random_range(0..self.images.len())];
        let top = rng.random_range(0..=img.height() - crop);
        let left = rng.random_range(0..=img.width() - crop);
        let flip = rng.random_bool(0.5);
        PlanarImage::from_fn(crop, crop, |c, r, col| {
            let col = if flip { crop - 1 - col } else { col };
            img.get(c, top + r, left + col)
        })
    }
}
