use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};

use sdnp_core::{LumaImage, Matrix};

use crate::config::LUMA_WEIGHTS;
use crate::error::{CliError, CliResult};

/// Map values at or below this render as black.
pub const HEATMAP_LOW: f64 = -0.2;
/// Map values at or above this render as white.
pub const HEATMAP_HIGH: f64 = 1.0;

/// Reads an 8-bit grayscale or RGB PNG/PGM/PPM as real-valued luminance.
pub fn load_image(path: &Path) -> CliResult<LumaImage> {
    let img = ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|e| CliError::file(path, e))?
        .decode()
        .map_err(|e| CliError::file(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageRgb8(rgb) => rgb
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0;
                LUMA_WEIGHTS[0] * r as f64 + LUMA_WEIGHTS[1] * g as f64 + LUMA_WEIGHTS[2] * b as f64
            })
            .collect(),
        other => {
            return Err(CliError::file(
                path,
                format!("unsupported pixel format {:?}; expected 8-bit gray or RGB", other.color()),
            ))
        }
    };
    Matrix::new(h, w, data).map_err(|e| CliError::file(path, e))
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Writes `m` (rounded and clipped to 0..=255) as 8-bit gray. PGM files are
/// binary P5; everything else is PNG.
pub fn save_gray(path: &Path, m: &Matrix) -> CliResult<()> {
    let bytes: Vec<u8> = m.as_slice().iter().map(|&v| to_u8(v)).collect();
    let (h, w) = (m.rows() as u32, m.cols() as u32);
    let file = File::create(path).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
    let out = BufWriter::new(file);
    let is_pgm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let res = if is_pgm {
        PnmEncoder::new(out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(&bytes, w, h, ExtendedColorType::L8)
    } else {
        image::codecs::png::PngEncoder::new(out).write_image(&bytes, w, h, ExtendedColorType::L8)
    };
    res.map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

/// Affine map of `[HEATMAP_LOW, HEATMAP_HIGH]` onto `[0, 255]`, clipped.
pub fn heatmap_level(v: f64) -> u8 {
    to_u8((v - HEATMAP_LOW) / (HEATMAP_HIGH - HEATMAP_LOW) * 255.0)
}

#[cfg(test)]
fn heatmap_value(level: u8) -> f64 {
    HEATMAP_LOW + level as f64 / 255.0 * (HEATMAP_HIGH - HEATMAP_LOW)
}

pub fn save_heatmap(path: &Path, map: &Matrix) -> CliResult<()> {
    save_gray(path, &map.map(|v| heatmap_level(v) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, RgbImage};
    use proptest::prelude::*;

    #[test]
    fn gray_and_rgb_luminance() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.png");
        GrayImage::from_raw(2, 1, vec![200, 7]).unwrap().save(&g).unwrap();
        assert_eq!(load_image(&g).unwrap().as_slice(), &[200.0, 7.0]);

        let c = dir.path().join("c.png");
        RgbImage::from_raw(3, 1, vec![255, 255, 255, 255, 0, 0, 0, 0, 255]).unwrap().save(&c).unwrap();
        let z = load_image(&c).unwrap();
        assert!((z.get(0, 0) - 255.0).abs() < 1e-9);
        assert!((z.get(0, 1) - 76.245).abs() < 1e-9);
        assert!((z.get(0, 2) - 29.07).abs() < 1e-9);
    }

    #[test]
    fn pgm_round_trip_and_bad_depth() {
        let dir = tempfile::tempdir().unwrap();
        let m = Matrix::from_rows(&[&[0.0, 12.0, 255.0], &[300.0, -4.0, 127.6]]);
        let p = dir.path().join("m.pgm");
        save_gray(&p, &m).unwrap();
        assert_eq!(&std::fs::read(&p).unwrap()[..2], b"P5");
        assert_eq!(load_image(&p).unwrap().as_slice(), &[0.0, 12.0, 255.0, 255.0, 0.0, 128.0]);

        let deep = dir.path().join("deep.png");
        image::ImageBuffer::<image::Luma<u16>, _>::from_raw(1, 1, vec![1000u16]).unwrap().save(&deep).unwrap();
        let err = load_image(&deep).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("deep.png"));
    }

    #[test]
    fn heatmap_end_points() {
        assert_eq!(heatmap_level(-0.2), 0);
        assert_eq!(heatmap_level(-5.0), 0);
        assert_eq!(heatmap_level(1.0), 255);
        assert_eq!(heatmap_level(3.0), 255);
    }

    proptest! {
        #[test]
        fn heatmap_inverts_within_a_level(v in HEATMAP_LOW..=HEATMAP_HIGH) {
            let back = heatmap_value(heatmap_level(v));
            prop_assert!((back - v).abs() / (HEATMAP_HIGH - HEATMAP_LOW) <= 1.0 / 255.0);
        }
    }
}
