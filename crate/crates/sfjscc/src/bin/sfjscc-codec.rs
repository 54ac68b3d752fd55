//! JPEG-backed codec adapter honoring the subprocess contract:
//!
//! ```text
//! sfjscc-codec encode <in.ppm> <out.bin> --rate <bpp>
//! sfjscc-codec decode <in.bin> <out.ppm>
//! ```
//!
//! The rate knob maps monotonically onto JPEG quality, which is all the
//! budget search in the baseline needs.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use image::codecs::jpeg::JpegEncoder;

#[derive(Parser)]
#[command(name = "sfjscc-codec", about = "JPEG codec adapter for the SIC baseline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compress a PPM image at roughly the requested bits per pixel.
    Encode {
        input: PathBuf,
        output: PathBuf,
        /// Target rate in bits per pixel (monotone quality knob).
        #[arg(long)]
        rate: f64,
    },
    /// Reconstruct a PPM image from a compressed file.
    Decode {
        input: PathBuf,
        output: PathBuf,
    },
}

fn quality_for(bpp: f64) -> u8 {
    // bpp in (0, 24] -> quality 1..=100, monotone
    (bpp / 24.0 * 99.0 + 1.0).clamp(1.0, 100.0) as u8
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().cmd {
        Cmd::Encode { input, output, rate } => {
            anyhow::ensure!(rate > 0.0, "rate must be positive");
            let img = image::open(&input)?.to_rgb8();
            let mut buf = Vec::new();
            JpegEncoder::new_with_quality(&mut buf, quality_for(rate)).encode(
                img.as_raw(),
                img.width(),
                img.height(),
                image::ExtendedColorType::Rgb8,
            )?;
            std::fs::write(&output, buf)?;
        }
        Cmd::Decode { input, output } => {
            let bytes = std::fs::read(&input)?;
            let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Jpeg)?
                .to_rgb8();
            img.save_with_format(&output, image::ImageFormat::Pnm)?;
        }
    }
    Ok(())
}
