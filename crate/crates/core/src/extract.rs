//! Base-pattern estimation from flat-background portrait sets.
//!
//! Both protocols use two half-frame sets: "top" captures with a uniform
//! upper background and "bottom" captures with a uniform lower one. Each set
//! contributes the rows of its flat half; the halves are then stitched.
//!
//! * Natural light: box-filter residues are averaged and the stitched
//!   average is normalized to unit sample std.
//! * Stage light mono: the known background level 4 is subtracted, the
//!   stitched average is divided by the ISO gain.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::math::{box_filter, residue, sample_std};
use crate::matrix::{LumaImage, Matrix};
use crate::persist::{read_f32_matrix, sidecar_path, write_f32_matrix, write_kv, Meta};
use crate::simulate::SLM_BACKGROUND;

/// Default box size of the natural-light residue.
pub const DEFAULT_NL_KERNEL: usize = 5;

/// Gray-level std of a blurred region above which it is reported as textured.
pub const DEFAULT_FLATNESS_THRESHOLD: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtractionMode {
    NaturalLight,
    StageLightMono,
}

impl fmt::Display for ExtractionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExtractionMode::NaturalLight => "nl",
            ExtractionMode::StageLightMono => "slm",
        })
    }
}

impl FromStr for ExtractionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nl" => Ok(ExtractionMode::NaturalLight),
            "slm" => Ok(ExtractionMode::StageLightMono),
            _ => Err(Error::Parameter(format!("unknown extraction mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    UnitStd,
    GammaDivided,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::UnitStd => "unit_std",
            Normalization::GammaDivided => "gamma_divided",
        })
    }
}

impl FromStr for Normalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit_std" => Ok(Normalization::UnitStd),
            "gamma_divided" => Ok(Normalization::GammaDivided),
            _ => Err(Error::Parameter(format!("unknown normalization {s:?}"))),
        }
    }
}

/// Estimated base pattern plus the provenance needed to reuse it.
#[derive(Clone, Debug, PartialEq)]
pub struct BasePattern {
    pub data: Matrix,
    pub mode: ExtractionMode,
    pub iso: u32,
    /// Images per half used in the estimate.
    pub num_images: usize,
    pub normalization: Normalization,
    pub catalog_id: Option<String>,
    /// Free-form creation parameters, persisted as `param.<key>`.
    pub params: BTreeMap<String, String>,
}

impl BasePattern {
    /// Wraps an arbitrary matrix (e.g. a simulated ground truth) as a
    /// unit-std pattern.
    pub fn from_matrix(data: Matrix, catalog_id: Option<String>) -> Self {
        Self {
            data,
            mode: ExtractionMode::NaturalLight,
            iso: 0,
            num_images: 0,
            normalization: Normalization::UnitStd,
            catalog_id,
            params: BTreeMap::new(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.shape()
    }

    /// Writes the `f32` data to `path` and the metadata next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_f32_matrix(path, &self.data)?;
        let mut entries = vec![
            ("kind".to_string(), "base_pattern".to_string()),
            ("mode".into(), self.mode.to_string()),
            ("iso".into(), self.iso.to_string()),
            ("L".into(), self.num_images.to_string()),
            ("H".into(), self.data.rows().to_string()),
            ("W".into(), self.data.cols().to_string()),
            ("normalization".into(), self.normalization.to_string()),
            (
                "catalog_id".into(),
                self.catalog_id.clone().unwrap_or_else(|| "none".into()),
            ),
        ];
        entries.extend(self.params.iter().map(|(k, v)| (format!("param.{k}"), v.clone())));
        write_kv(&sidecar_path(path), &entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = sidecar_path(path);
        let meta = Meta::load(&meta_path)?;
        if meta.str("kind")? != "base_pattern" {
            return Err(Error::Format {
                path: meta_path.clone(),
                reason: "not a base pattern sidecar".into(),
            });
        }
        let rows: usize = meta.parse("H")?;
        let cols: usize = meta.parse("W")?;
        let catalog_id = match meta.str("catalog_id")? {
            "none" => None,
            id => Some(id.to_string()),
        };
        Ok(Self {
            data: read_f32_matrix(path, rows, cols)?,
            mode: meta.parse("mode")?,
            iso: meta.parse("iso")?,
            num_images: meta.parse("L")?,
            normalization: meta.parse("normalization")?,
            catalog_id,
            params: meta.prefixed("param"),
        })
    }
}

/// Two sets of captures with complementary flat halves, single ISO.
#[derive(Clone, Debug)]
pub struct HalfFrameSet {
    top: Vec<LumaImage>,
    bottom: Vec<LumaImage>,
    iso: u32,
}

impl HalfFrameSet {
    pub fn new(top: Vec<LumaImage>, bottom: Vec<LumaImage>, iso: u32) -> Result<Self> {
        if top.is_empty() || bottom.is_empty() {
            return Err(Error::Dimension("both half-frame sets need at least one image".into()));
        }
        let shape = top[0].shape();
        for (name, set) in [("top", &top), ("bottom", &bottom)] {
            if let Some(i) = set.iter().position(|m| m.shape() != shape) {
                return Err(Error::Dimension(format!(
                    "{name} image {i} is {}x{}, expected {}x{}",
                    set[i].rows(),
                    set[i].cols(),
                    shape.0,
                    shape.1
                )));
            }
        }
        if shape.0 < 2 {
            return Err(Error::Dimension("frames need at least two rows".into()));
        }
        Ok(Self { top, bottom, iso })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.top[0].shape()
    }

    pub fn top(&self) -> &[LumaImage] {
        &self.top
    }

    pub fn bottom(&self) -> &[LumaImage] {
        &self.bottom
    }

    pub fn iso(&self) -> u32 {
        self.iso
    }

    /// First row of the bottom half. Odd heights give the extra row to it.
    pub fn split_row(&self) -> usize {
        self.shape().0 / 2
    }

    fn len(&self) -> usize {
        self.top.len().min(self.bottom.len())
    }
}

/// Averages `f(image)` over each set and keeps the rows of its flat half.
fn stitch_average(
    set: &HalfFrameSet,
    mut f: impl FnMut(&LumaImage) -> Result<Matrix>,
) -> Result<Matrix> {
    let (rows, cols) = set.shape();
    let split = set.split_row();
    let mut acc = Matrix::zeros(rows, cols);
    for (images, r0, r1) in [(&set.top, 0, split), (&set.bottom, split, rows)] {
        let mut sum = vec![0.0; (r1 - r0) * cols];
        for img in images.iter() {
            let w = f(img)?;
            for (s, v) in sum.iter_mut().zip(&w.as_slice()[r0 * cols..r1 * cols]) {
                *s += v;
            }
        }
        let n = images.len() as f64;
        acc.as_mut_slice()[r0 * cols..r1 * cols]
            .iter_mut()
            .zip(&sum)
            .for_each(|(a, s)| *a = s / n);
    }
    Ok(acc)
}

/// Natural-light estimate: stitched mean box residue scaled to unit std.
pub fn extract_bp_nl(set: &HalfFrameSet, k: usize) -> Result<BasePattern> {
    for (half, r) in flatness_report(set, k, DEFAULT_FLATNESS_THRESHOLD)? {
        if r == Flatness::Textured {
            log::warn!("{half} background is not flat; pattern estimate may carry scene content");
        }
    }
    let mean_residue = stitch_average(set, |img| residue(img, k))?;
    let sd = sample_std(&mean_residue)?;
    if sd == 0.0 {
        return Err(Error::Degenerate("averaged residue is constant".into()));
    }
    let mut params = BTreeMap::new();
    params.insert("kernel".to_string(), k.to_string());
    Ok(BasePattern {
        data: mean_residue.scale(1.0 / sd),
        mode: ExtractionMode::NaturalLight,
        iso: set.iso,
        num_images: set.len(),
        normalization: Normalization::UnitStd,
        catalog_id: None,
        params,
    })
}

/// Stage-light estimate: stitched mean of `Z - 4`, divided by the ISO gain.
pub fn extract_bp_slm(set: &HalfFrameSet, gamma_iso: f64) -> Result<BasePattern> {
    extract_bp_slm_with_background(set, gamma_iso, SLM_BACKGROUND)
}

/// Stage-light estimate with a non-standard background level (research use).
pub fn extract_bp_slm_with_background(
    set: &HalfFrameSet,
    gamma_iso: f64,
    background: f64,
) -> Result<BasePattern> {
    if !(gamma_iso > 0.0) {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma_iso}")));
    }
    let mean = stitch_average(set, |img| Ok(img.map(|v| v - background)))?;
    let mut params = BTreeMap::new();
    params.insert("gamma".to_string(), gamma_iso.to_string());
    params.insert("background".to_string(), background.to_string());
    Ok(BasePattern {
        data: mean.scale(1.0 / gamma_iso),
        mode: ExtractionMode::StageLightMono,
        iso: set.iso,
        num_images: set.len(),
        normalization: Normalization::GammaDivided,
        catalog_id: None,
        params,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flatness {
    Flat,
    Textured,
}

/// A region is flat when its box-blurred version varies by less than
/// `threshold` gray levels (sample std).
pub fn flatness_check(region: &LumaImage, k: usize, threshold: f64) -> Result<Flatness> {
    if region.rows() < 64 || region.cols() < 64 {
        return Err(Error::Dimension(format!(
            "flatness check needs at least 64x64, got {}x{}",
            region.rows(),
            region.cols()
        )));
    }
    let sd = sample_std(&box_filter(region, k)?)?;
    Ok(if sd < threshold {
        Flatness::Flat
    } else {
        Flatness::Textured
    })
}

/// Flatness of the flat half of every image in the set.
pub fn flatness_report(
    set: &HalfFrameSet,
    k: usize,
    threshold: f64,
) -> Result<Vec<(String, Flatness)>> {
    let (rows, cols) = set.shape();
    let split = set.split_row();
    let mut out = Vec::new();
    if split < 64 || rows - split < 64 || cols < 64 {
        return Ok(out);
    }
    for (i, img) in set.top.iter().enumerate() {
        out.push((format!("top[{i}]"), flatness_check(&img.block(0, 0, split, cols)?, k, threshold)?));
    }
    for (i, img) in set.bottom.iter().enumerate() {
        out.push((
            format!("bottom[{i}]"),
            flatness_check(&img.block(split, 0, rows - split, cols)?, k, threshold)?,
        ));
    }
    Ok(out)
}
