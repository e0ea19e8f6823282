//! PRNU fingerprints and similarity scores, with and without exclusion of
//! the defocus-noise regions.

use std::fmt;
use std::path::Path;

use crate::detect::{
    best_matching_bp, mask_from_map, ncc_map, BinaryMask, BpCatalog, Orientation, DEFAULT_ALPHA,
    DEFAULT_BLOCK, DEFAULT_MAP_SMOOTHING,
};
use crate::error::{Error, Result};
use crate::math::{ncc_slices, residue, ssq};
use crate::matrix::{LumaImage, Matrix, Residue};
use crate::persist::{read_f32_matrix, sidecar_path, write_f32_matrix, write_kv, Meta};

/// Decision threshold of the plain score.
pub const DEFAULT_TAU: f64 = 60.0;
/// Decision threshold of the masked score.
pub const DEFAULT_TAU_PRIME: f64 = 160.0;

/// Source of noise residues for fingerprint work.
pub trait Denoiser {
    fn residue(&self, image: &LumaImage) -> Result<Residue>;
    fn describe(&self) -> String;
}

/// `Z - box_K(Z)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoxDenoiser {
    pub k: usize,
}

impl Default for BoxDenoiser {
    fn default() -> Self {
        Self { k: 5 }
    }
}

impl Denoiser for BoxDenoiser {
    fn residue(&self, image: &LumaImage) -> Result<Residue> {
        residue(image, self.k)
    }

    fn describe(&self) -> String {
        format!("box{}", self.k)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrnuFingerprint {
    pub data: Matrix,
    pub num_images: usize,
    pub bp_aware: bool,
    /// Mean fraction of kept pixels per contributing image.
    pub mask_coverage: f64,
    /// Pixels with no accumulated energy, set to 0.
    pub zero_pixels: usize,
}

impl PrnuFingerprint {
    pub fn shape(&self) -> (usize, usize) {
        self.data.shape()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_f32_matrix(path, &self.data)?;
        write_kv(
            &sidecar_path(path),
            &[
                ("kind".to_string(), "prnu_fingerprint".to_string()),
                ("H".into(), self.data.rows().to_string()),
                ("W".into(), self.data.cols().to_string()),
                ("L".into(), self.num_images.to_string()),
                ("bp_aware".into(), self.bp_aware.to_string()),
                ("mask_coverage".into(), format!("{:?}", self.mask_coverage)),
                ("zero_pixels".into(), self.zero_pixels.to_string()),
            ],
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = sidecar_path(path);
        let meta = Meta::load(&meta_path)?;
        if meta.str("kind")? != "prnu_fingerprint" {
            return Err(Error::Format {
                path: meta_path.clone(),
                reason: "not a fingerprint sidecar".into(),
            });
        }
        Ok(Self {
            data: read_f32_matrix(path, meta.parse("H")?, meta.parse("W")?)?,
            num_images: meta.parse("L")?,
            bp_aware: meta.parse("bp_aware")?,
            mask_coverage: meta.parse("mask_coverage")?,
            zero_pixels: meta.parse("zero_pixels")?,
        })
    }
}

fn check_images(images: &[LumaImage]) -> Result<(usize, usize)> {
    let first = images
        .first()
        .ok_or_else(|| Error::Dimension("fingerprint needs at least one image".into()))?;
    if let Some(i) = images.iter().position(|m| m.shape() != first.shape()) {
        return Err(Error::Dimension(format!(
            "image {i} is {}x{}, expected {}x{}",
            images[i].rows(),
            images[i].cols(),
            first.rows(),
            first.cols()
        )));
    }
    Ok(first.shape())
}

fn accumulate(images: &[LumaImage], masks: Option<&[BinaryMask]>, denoiser: &dyn Denoiser) -> Result<PrnuFingerprint> {
    let (rows, cols) = check_images(images)?;
    if let Some(masks) = masks {
        if masks.len() != images.len() {
            return Err(Error::Dimension(format!("{} masks for {} images", masks.len(), images.len())));
        }
        if let Some(i) = masks.iter().position(|m| m.shape() != (rows, cols)) {
            return Err(Error::Dimension(format!("mask {i} does not match the image size")));
        }
    }
    let n = rows * cols;
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    let mut coverage = 0.0;
    for (l, img) in images.iter().enumerate() {
        let w = denoiser.residue(img)?;
        let (w, y) = (w.as_slice(), img.as_slice());
        match masks {
            None => {
                for i in 0..n {
                    num[i] += w[i] * y[i];
                    den[i] += y[i] * y[i];
                }
                coverage += 1.0;
            }
            Some(masks) => {
                let m = masks[l].data.as_slice();
                for i in 0..n {
                    let (wm, ym) = (m[i] * w[i], m[i] * y[i]);
                    num[i] += wm * ym;
                    den[i] += ym * ym;
                }
                coverage += masks[l].coverage();
            }
        }
    }
    let mut zero = 0;
    let data: Vec<f64> = num
        .iter()
        .zip(&den)
        .map(|(&a, &b)| {
            if b == 0.0 {
                zero += 1;
                0.0
            } else {
                a / b
            }
        })
        .collect();
    if zero == n {
        return Err(Error::Degenerate("fingerprint support is empty: every pixel was excluded or zero".into()));
    }
    Ok(PrnuFingerprint {
        data: Matrix::new(rows, cols, data)?,
        num_images: images.len(),
        bp_aware: masks.is_some(),
        mask_coverage: coverage / images.len() as f64,
        zero_pixels: zero,
    })
}

/// Maximum-likelihood fingerprint `sum(W Y) / sum(Y^2)`.
pub fn extract_prnu(images: &[LumaImage], denoiser: &dyn Denoiser) -> Result<PrnuFingerprint> {
    accumulate(images, None, denoiser)
}

/// Fingerprint from masked residues and images; excluded pixels carry no
/// weight.
pub fn extract_prnu_bp_aware(
    images: &[LumaImage],
    masks: &[BinaryMask],
    denoiser: &dyn Denoiser,
) -> Result<PrnuFingerprint> {
    accumulate(images, Some(masks), denoiser)
}

/// Plain or masked similarity value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eta {
    pub value: f64,
    pub rho: f64,
    /// Set when the correlation was undefined; `value` is then 0.
    pub degenerate: bool,
}

fn eta_from(w: &[f64], k: &[f64], y: &[f64], mask: Option<&[f64]>, n_pixels: usize) -> Result<Eta> {
    let (wm, ky): (Vec<f64>, Vec<f64>) = match mask {
        None => (w.to_vec(), k.iter().zip(y).map(|(a, b)| a * b).collect()),
        Some(m) => (
            w.iter().zip(m).map(|(a, b)| b * a).collect(),
            k.iter().zip(y).zip(m).map(|((a, b), c)| a * (c * b)).collect(),
        ),
    };
    match ncc_slices(&wm, &ky) {
        Ok(rho) => Ok(Eta {
            value: n_pixels as f64 * ssq(rho),
            rho,
            degenerate: false,
        }),
        Err(Error::Degenerate(_)) => Ok(Eta {
            value: 0.0,
            rho: 0.0,
            degenerate: true,
        }),
        Err(e) => Err(e),
    }
}

/// `N ssq(rho(W, K Y))`.
pub fn eta(w: &Residue, k_hat: &PrnuFingerprint, y: &LumaImage) -> Result<Eta> {
    w.ensure_same_shape(&k_hat.data)?;
    w.ensure_same_shape(y)?;
    eta_from(w.as_slice(), k_hat.data.as_slice(), y.as_slice(), None, w.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    /// Same camera.
    H1,
    H0,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::H1 => "H1",
            Decision::H0 => "H0",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerificationScore {
    pub eta: f64,
    pub tau: f64,
    pub decision: Decision,
    /// Pose of the fingerprint giving `eta`.
    pub orientation: Orientation,
    pub masked: bool,
    pub degenerate: bool,
}

impl VerificationScore {
    fn new(e: Eta, tau: f64, orientation: Orientation, masked: bool) -> Self {
        Self {
            eta: e.value,
            tau,
            decision: if e.value > tau { Decision::H1 } else { Decision::H0 },
            orientation,
            masked,
            degenerate: e.degenerate,
        }
    }
}

/// `N ssq(rho(M W, K' M Z))` with `N` the full pixel count. With
/// `search_orientations` the best of the four rotations of `K'` that fit the
/// image is kept.
pub fn eta_prime(
    w: &Residue,
    k_prime: &PrnuFingerprint,
    z: &LumaImage,
    mask: &BinaryMask,
    search_orientations: bool,
    tau: f64,
) -> Result<VerificationScore> {
    w.ensure_same_shape(z)?;
    w.ensure_same_shape(&mask.data)?;
    let poses: Vec<Orientation> = if search_orientations {
        Orientation::rotations().to_vec()
    } else {
        vec![Orientation::IDENTITY]
    };
    let mut best: Option<(Eta, Orientation)> = None;
    for o in poses {
        let (kr, kc) = k_prime.data.shape();
        if o.output_shape(kr, kc) != w.shape() {
            continue;
        }
        let k = o.apply(&k_prime.data);
        let e = eta_from(w.as_slice(), k.as_slice(), z.as_slice(), Some(mask.data.as_slice()), w.len())?;
        if best.map_or(true, |(b, _)| e.value > b.value) {
            best = Some((e, o));
        }
    }
    let (e, o) = best.ok_or_else(|| Error::Dimension("fingerprint does not fit the test image in any pose".into()))?;
    Ok(VerificationScore::new(e, tau, o, true))
}

/// Plain score against a threshold.
pub fn verify_baseline(test: &LumaImage, fingerprint: &PrnuFingerprint, denoiser: &dyn Denoiser, tau: f64) -> Result<VerificationScore> {
    let w = denoiser.residue(test)?;
    let e = eta(&w, fingerprint, test)?;
    Ok(VerificationScore::new(e, tau, Orientation::IDENTITY, false))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    pub alpha: f64,
    pub tau: f64,
    pub k: usize,
    pub block: usize,
    pub smooth_k: usize,
    pub search_orientations: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            tau: DEFAULT_TAU_PRIME,
            k: 5,
            block: DEFAULT_BLOCK,
            smooth_k: DEFAULT_MAP_SMOOTHING,
            search_orientations: false,
        }
    }
}

/// Outcome of the masked pipeline with the evidence behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct Verification {
    pub score: VerificationScore,
    pub best_bp: Option<String>,
    pub bp_orientation: Orientation,
    pub bp_ncc: f64,
    pub mask: BinaryMask,
    pub degenerate_tiles: usize,
}

impl Verification {
    pub fn mask_coverage(&self) -> f64 {
        self.mask.coverage()
    }
}

/// Builds the exclusion mask of one image from its best-matching pattern.
pub fn exclusion_mask(image: &LumaImage, catalog: &BpCatalog, opts: &VerifyOptions) -> Result<(BinaryMask, String, Orientation, f64, usize)> {
    let w = residue(image, opts.k)?;
    let (id, o, ncc) = best_matching_bp(&w, catalog)?;
    let pattern = &catalog
        .get(&id)
        .and_then(|e| e.pattern.as_ref())
        .expect("matched entries carry patterns")
        .data;
    let map = ncc_map(&w, &o.apply(pattern), opts.block, opts.smooth_k)?;
    Ok((mask_from_map(&map, opts.alpha), id, o, ncc, map.degenerate_tiles))
}

/// residue, best pattern, map, mask, masked score. Without a catalog the
/// mask keeps every pixel.
pub fn verify(
    test: &LumaImage,
    fingerprint: &PrnuFingerprint,
    catalog: Option<&BpCatalog>,
    opts: &VerifyOptions,
) -> Result<Verification> {
    let w = residue(test, opts.k)?;
    let (mask, best_bp, bp_orientation, bp_ncc, degenerate_tiles) = match catalog {
        Some(cat) => {
            let (m, id, o, ncc, d) = exclusion_mask(test, cat, opts)?;
            (m, Some(id), o, ncc, d)
        }
        None => (BinaryMask::ones(test.rows(), test.cols()), None, Orientation::IDENTITY, 0.0, 0),
    };
    let score = eta_prime(&w, fingerprint, test, &mask, opts.search_orientations, opts.tau)?;
    Ok(Verification {
        score,
        best_bp,
        bp_orientation,
        bp_ncc,
        mask,
        degenerate_tiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::ncc;
    use crate::simulate::{gaussian_field, gen_prnu, render_sensor};

    /// Knows the clean image, so the residue is the exact model noise.
    struct Oracle(Matrix);

    impl Denoiser for Oracle {
        fn residue(&self, image: &LumaImage) -> Result<Residue> {
            image.sub(&self.0)
        }
        fn describe(&self) -> String {
            "oracle".into()
        }
    }

    /// Residue of the multiplicative model, `W = K Y`.
    struct KnownPrnu(Matrix);

    impl Denoiser for KnownPrnu {
        fn residue(&self, image: &LumaImage) -> Result<Residue> {
            self.0.hadamard(image)
        }
        fn describe(&self) -> String {
            "known".into()
        }
    }

    #[test]
    fn mle_is_exact_on_the_model() {
        let x = Matrix::filled(32, 32, 128.0);
        let k = gen_prnu(1, 32, 32, 0.02).unwrap().k;
        let y = x.zip_map(&k, |a, b| (1.0 + b) * a).unwrap();
        let fp = extract_prnu(&[y.clone()], &KnownPrnu(k.clone())).unwrap();
        for (a, b) in fp.data.as_slice().iter().zip(k.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        // W = Y - X = K X gives K / (1 + K), since Y carries the factor.
        let fp = extract_prnu(&[y], &Oracle(x)).unwrap();
        for (a, b) in fp.data.as_slice().iter().zip(k.as_slice()) {
            assert!((a - b / (1.0 + b)).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_field_fingerprint_recovers_prnu() {
        let x = Matrix::filled(256, 256, 128.0);
        let truth = gen_prnu(2, 256, 256, 0.02).unwrap();
        let imgs: Vec<_> = (0..50).map(|s| render_sensor(&x, &truth, 1.0, 100 + s).unwrap()).collect();
        let fp = extract_prnu(&imgs, &BoxDenoiser::default()).unwrap();
        assert!(ncc(&fp.data, &truth.k).unwrap() >= 0.9);
    }

    #[test]
    fn zero_pixels_and_empty_support() {
        let mut a = gaussian_field(3, 16, 16).map(|v| 50.0 + v);
        a.set(4, 4, 0.0);
        a.set(4, 5, 0.0);
        let mut b = a.clone();
        b.set(4, 5, 1.0);
        let fp = extract_prnu(&[a.clone(), b.clone()], &BoxDenoiser::default()).unwrap();
        assert_eq!(fp.zero_pixels, 1);
        assert_eq!(fp.data.get(4, 4), 0.0);
        let none = BinaryMask { data: Matrix::zeros(16, 16), alpha: 0.07 };
        assert!(matches!(
            extract_prnu_bp_aware(&[a, b], &[none.clone(), none], &BoxDenoiser::default()),
            Err(Error::Degenerate(_))
        ));
        assert!(extract_prnu(&[], &BoxDenoiser::default()).is_err());
    }

    #[test]
    fn all_ones_masks_reduce_to_baseline_bitwise() {
        let imgs: Vec<_> = (0..3).map(|s| gaussian_field(10 + s, 40, 40).map(|v| 90.0 + 4.0 * v)).collect();
        let ones = vec![BinaryMask::ones(40, 40); 3];
        let d = BoxDenoiser::default();
        let base = extract_prnu(&imgs, &d).unwrap();
        let masked = extract_prnu_bp_aware(&imgs, &ones, &d).unwrap();
        assert_eq!(base.data, masked.data);
        let w = d.residue(&imgs[0]).unwrap();
        let e = eta(&w, &base, &imgs[0]).unwrap();
        let ep = eta_prime(&w, &masked, &imgs[0], &ones[0], false, DEFAULT_TAU_PRIME).unwrap();
        assert_eq!(e.value.to_bits(), ep.eta.to_bits());
    }

    #[test]
    fn eta_examples() {
        let y = gaussian_field(20, 64, 64).map(|v| 100.0 + 5.0 * v);
        let k = PrnuFingerprint {
            data: gaussian_field(21, 64, 64).scale(0.01),
            num_images: 1,
            bp_aware: false,
            mask_coverage: 1.0,
            zero_pixels: 0,
        };
        let w = k.data.hadamard(&y).unwrap();
        assert!((eta(&w, &k, &y).unwrap().value - 4096.0).abs() < 1e-6);
        let scaled = PrnuFingerprint { data: k.data.scale(3.5), ..k.clone() };
        let noise = gaussian_field(22, 64, 64);
        let a = eta(&noise, &k, &y).unwrap().value;
        let b = eta(&noise, &scaled, &y).unwrap().value;
        assert!((a - b).abs() < 1e-9);
        let flat = Matrix::filled(64, 64, 1.0);
        assert!(eta(&flat, &k, &y).unwrap().degenerate);
    }

    #[test]
    fn rotation_search_never_lowers_the_score() {
        let y = gaussian_field(30, 48, 48).map(|v| 100.0 + 5.0 * v);
        let k = PrnuFingerprint {
            data: gaussian_field(31, 48, 48).scale(0.01),
            num_images: 1,
            bp_aware: true,
            mask_coverage: 1.0,
            zero_pixels: 0,
        };
        let w = k.data.rot90().hadamard(&y).unwrap();
        let ones = BinaryMask::ones(48, 48);
        let plain = eta_prime(&w, &k, &y, &ones, false, 60.0).unwrap();
        let searched = eta_prime(&w, &k, &y, &ones, true, 60.0).unwrap();
        assert!(searched.eta >= plain.eta);
        assert_eq!(searched.orientation, Orientation::new(1, false));
        assert_eq!(searched.decision, Decision::H1);
    }

    #[test]
    fn fingerprint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let fp = PrnuFingerprint {
            data: gaussian_field(40, 20, 30).scale(0.01),
            num_images: 7,
            bp_aware: true,
            mask_coverage: 0.8123456789,
            zero_pixels: 2,
        };
        let a = dir.path().join("a.f32");
        fp.save(&a).unwrap();
        let back = PrnuFingerprint::load(&a).unwrap();
        assert_eq!(back.data, fp.data.map(|v| v as f32 as f64));
        assert_eq!(back.mask_coverage, fp.mask_coverage);
        let b = dir.path().join("b.f32");
        back.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(std::fs::read(sidecar_path(&a)).unwrap(), std::fs::read(sidecar_path(&b)).unwrap());
    }
}
