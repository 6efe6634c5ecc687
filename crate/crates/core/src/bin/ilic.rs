use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ilic_core::entropy::{compress, decompress, EncodeOptions};
use ilic_core::harness::metrics::ms_ssim;
use ilic_core::harness::{self, bd_rate, psnr, Dataset, TrainConfig};
use ilic_core::image_io::{read_image, write_image};
use ilic_core::interleave::PlanarImage;
use ilic_core::model::Model;
use ilic_core::{Error, Result};

/// Interleaved block-based learned image codec.
#[derive(Parser)]
#[command(name = "ilic", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model on a directory of PNG/PPM images.
    Train {
        /// Dataset directory.
        data: PathBuf,
        /// Output checkpoint.
        #[arg(short, long)]
        out: PathBuf,
        /// `key = value` configuration file.
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// `key=value` overrides applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Log one CSV row every this many steps.
        #[arg(long, default_value_t = 100)]
        log_every: u64,
    },
    /// Compress an image.
    Encode {
        input: PathBuf,
        #[arg(short, long)]
        model: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Seed of the decoder-side compensation noise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Decompress a bitstream to PNG (or PPM by extension).
    Decode {
        input: PathBuf,
        #[arg(short, long)]
        model: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Per-image bpp, PSNR and MS-SSIM.
    Eval {
        /// Code these images with a model.
        images: Vec<PathBuf>,
        #[arg(short, long)]
        model: Option<PathBuf>,
        /// Compare reference/decoded pairs instead of coding.
        #[arg(long, num_args = 2, value_names = ["REFERENCE", "DECODED"], action = clap::ArgAction::Append)]
        pairs: Vec<PathBuf>,
        /// Bitstreams giving the rate of each pair, in order.
        #[arg(long)]
        bitstream: Vec<PathBuf>,
    },
    /// Sweep checkpoints over an image set; optional BD-rate against an
    /// anchor RD table.
    Rd {
        #[arg(short, long = "model", required = true)]
        models: Vec<PathBuf>,
        /// Image files or directories.
        #[arg(required = true)]
        images: Vec<PathBuf>,
        #[arg(long)]
        anchor: Option<PathBuf>,
    },
    /// Quantization error histogram and Laplace fit of a model's latents.
    QerrStats {
        #[arg(short, long)]
        model: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
        /// Store the fitted parameters back into the checkpoint.
        #[arg(long)]
        update: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ilic: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_images(paths: &[PathBuf]) -> Result<Vec<(String, PlanarImage)>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let ds = Dataset::load_dir(p)?;
            out.extend(ds.names.into_iter().zip(ds.images));
        } else {
            out.push((p.display().to_string(), read_image(p)?));
        }
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn run(cli: Cli) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match cli.cmd {
        Cmd::Train { data, out: ckpt, config, overrides, log_every } => {
            let mut cfg = TrainConfig::default();
            if let Some(path) = config {
                cfg.apply_text(&fs::read_to_string(&path)?)?;
            }
            cfg.apply_overrides(&overrides)?;
            cfg.apply_env()?;
            let ds = Dataset::load_dir(&data)?;
            writeln!(out, "step,loss,bpp,mse,fe,lr,lambda_e")?;
            let every = log_every.max(1);
            let mut io_err = None;
            harness::train(&cfg, &ds, Some(&ckpt), |r| {
                if (r.step + 1) % every == 0 || r.step == 0 {
                    let line = format!("{},{},{},{},{},{},{}", r.step, r.loss, r.bpp, r.mse, r.fe, r.lr, r.lambda_e);
                    if let Err(e) = writeln!(out, "{line}") {
                        io_err.get_or_insert(e);
                    }
                }
            })?;
            if let Some(e) = io_err {
                return Err(e.into());
            }
        }
        Cmd::Encode { input, model, out: path, seed } => {
            let m = Model::load(&model)?;
            let img = read_image(&input)?;
            let bytes = compress(&m, &img, EncodeOptions { noise_seed: seed })?;
            fs::write(&path, &bytes)?;
            writeln!(out, "file,height,width,bytes,bpp")?;
            let bpp = 8.0 * bytes.len() as f64 / (img.height() * img.width()) as f64;
            writeln!(out, "{},{},{},{},{bpp}", path.display(), img.height(), img.width(), bytes.len())?;
        }
        Cmd::Decode { input, model, out: path } => {
            let m = Model::load(&model)?;
            let img = decompress(&fs::read(&input)?, &m)?;
            write_image(&path, &img)?;
            writeln!(out, "file,height,width")?;
            writeln!(out, "{},{},{}", path.display(), img.height(), img.width())?;
        }
        Cmd::Eval { images, model, pairs, bitstream } => {
            if !pairs.is_empty() {
                if !images.is_empty() || model.is_some() {
                    return Err(Error::InvalidArgument("--pairs cannot be combined with a model or images".into()));
                }
                if !bitstream.is_empty() && bitstream.len() * 2 != pairs.len() {
                    return Err(Error::InvalidArgument("give one --bitstream per pair or none".into()));
                }
                writeln!(out, "reference,decoded,bpp,psnr,ms_ssim")?;
                for (i, pair) in pairs.chunks(2).enumerate() {
                    let (a, b) = (read_image(&pair[0])?, read_image(&pair[1])?);
                    let bpp = match bitstream.get(i) {
                        Some(p) => Some(8.0 * fs::metadata(p)?.len() as f64 / (a.height() * a.width()) as f64),
                        None => None,
                    };
                    let (p, s) = (psnr(&a, &b)?, ms_ssim(&a, &b)?.value);
                    writeln!(out, "{},{},{},{p},{s}", pair[0].display(), pair[1].display(), fmt_opt(bpp))?;
                }
            } else {
                let model = model.ok_or_else(|| Error::InvalidArgument("eval needs --model or --pairs".into()))?;
                let m = Model::load(&model)?;
                writeln!(out, "image,bpp,psnr,ms_ssim")?;
                for (name, img) in load_images(&images)? {
                    let (p, _) = harness::evaluate_image(&m, &img, EncodeOptions::default())?;
                    writeln!(out, "{name},{},{},{}", p.bpp, p.psnr, p.ms_ssim)?;
                }
            }
        }
        Cmd::Rd { models, images, anchor } => {
            let imgs: Vec<PlanarImage> = load_images(&images)?.into_iter().map(|(_, i)| i).collect();
            let mut rows = Vec::new();
            for path in &models {
                let m = Model::load(path)?;
                let p = harness::evaluate_set(&m, &imgs, EncodeOptions::default())?;
                rows.push((path.clone(), m.lambda, p));
            }
            rows.sort_by(|a, b| a.1.unwrap_or(f64::NAN).total_cmp(&b.1.unwrap_or(f64::NAN)));
            writeln!(out, "kind,checkpoint,lambda,bpp,psnr,ms_ssim,bd_rate")?;
            for (path, lambda, p) in &rows {
                writeln!(out, "point,{},{},{},{},{},", path.display(), fmt_opt(*lambda), p.bpp, p.psnr, p.ms_ssim)?;
            }
            if let Some(a) = anchor {
                let anchor_pts = harness::parse_rd_csv(&fs::read_to_string(&a)?)?;
                let test: Vec<_> = rows.iter().map(|r| r.2).collect();
                let bd = bd_rate(&anchor_pts, &test)?;
                writeln!(out, "bd_rate,{},,,,,{bd}", a.display())?;
            }
        }
        Cmd::QerrStats { model, images, update } => {
            let mut m = Model::load(&model)?;
            let imgs: Vec<PlanarImage> = load_images(&images)?.into_iter().map(|(_, i)| i).collect();
            let (y, z) = harness::collect_qerr_stats(&m, &imgs)?;
            writeln!(out, "tensor,item,lo,hi,value")?;
            for (name, st) in [("y", &y), ("z", &z)] {
                for (k, mass) in st.histogram.iter().enumerate() {
                    let (lo, hi) = st.bin_edges(k);
                    writeln!(out, "{name},bin,{lo},{hi},{mass}")?;
                }
                writeln!(out, "{name},mu,,,{}", st.params.mu)?;
                writeln!(out, "{name},b,,,{}", st.params.b)?;
                writeln!(out, "{name},count,,,{}", st.count)?;
            }
            if update {
                m.laplace_y = y.params;
                m.laplace_z = z.params;
                m.save(&model)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
