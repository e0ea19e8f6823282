//! Synthetic portrait generator used as ground truth.
//!
//! Renders the portrait model: sharp regions keep the sensor output, blurred
//! regions receive the blurred luminance plus a scaled copy of a base
//! pattern and extra noise, optionally followed by 8-bit quantization.
//! Every generator is a pure function of its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math::{box_mean, reflect_index, sample_mean, sample_std};
use crate::matrix::{LumaImage, Matrix};

/// Luminance of the synthetic black background of stage-light portraits.
pub const SLM_BACKGROUND: f64 = 4.0;

const MIN_PATTERN_SIDE: usize = 64;
const MIN_DEGRADED_SIDE: usize = 32;

/// Derives an independent stream seed from a base seed and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Row-major field of i.i.d. standard normal samples.
pub fn gaussian_field(seed: u64, rows: usize, cols: usize) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::new(rows, cols, data).expect("finite gaussian field")
}

/// Rescales a matrix to sample mean 0 and sample std `target_std`.
fn standardize(m: &Matrix, target_std: f64) -> Result<Matrix> {
    let mu = sample_mean(m)?;
    let sd = sample_std(m)?;
    if sd == 0.0 {
        return Err(Error::Degenerate("cannot standardize a constant field".into()));
    }
    let centred = m.map(|v| (v - mu) / sd);
    // Second pass removes the rounding left by the first one.
    let mu2 = sample_mean(&centred)?;
    let sd2 = sample_std(&centred)?;
    Ok(centred.map(|v| (v - mu2) / sd2 * target_std))
}

/// Ground-truth base pattern: zero mean, unit sample std.
#[derive(Clone, Debug)]
pub struct GroundTruthPattern {
    pub data: Matrix,
    pub seed: u64,
    pub coloring_kernel: Option<usize>,
}

/// White Gaussian pattern, optionally colored by a small box kernel, then
/// re-centred and rescaled to unit std.
pub fn gen_pattern(
    seed: u64,
    rows: usize,
    cols: usize,
    coloring_kernel: Option<usize>,
) -> Result<GroundTruthPattern> {
    if rows < MIN_PATTERN_SIDE || cols < MIN_PATTERN_SIDE {
        return Err(Error::Dimension(format!(
            "pattern must be at least {MIN_PATTERN_SIDE}x{MIN_PATTERN_SIDE}, got {rows}x{cols}"
        )));
    }
    let mut field = gaussian_field(seed, rows, cols);
    if let Some(k) = coloring_kernel {
        if k % 2 == 0 || k == 0 {
            return Err(Error::Parameter(format!("coloring kernel must be odd, got {k}")));
        }
        field = box_mean(&field, k);
    }
    Ok(GroundTruthPattern {
        data: standardize(&field, 1.0)?,
        seed,
        coloring_kernel,
    })
}

/// Multiplicative sensor fingerprint.
#[derive(Clone, Debug)]
pub struct PrnuGroundTruth {
    pub k: Matrix,
    pub strength: f64,
}

/// Zero-mean white fingerprint with sample std `strength`.
pub fn gen_prnu(seed: u64, rows: usize, cols: usize, strength: f64) -> Result<PrnuGroundTruth> {
    if !(strength > 0.0 && strength <= 0.1) {
        return Err(Error::Parameter(format!("PRNU strength must lie in (0, 0.1], got {strength}")));
    }
    let field = gaussian_field(seed, rows, cols);
    Ok(PrnuGroundTruth {
        k: standardize(&field, strength)?,
        strength,
    })
}

/// Sensor output `(1 + K) * X + Theta` with Gaussian `Theta`; no quantization.
pub fn render_sensor(
    x: &LumaImage,
    prnu: &PrnuGroundTruth,
    theta_std: f64,
    seed: u64,
) -> Result<LumaImage> {
    if theta_std < 0.0 {
        return Err(Error::Parameter("theta std must be non-negative".into()));
    }
    let y = x.zip_map(&prnu.k, |xv, kv| (1.0 + kv) * xv)?;
    if theta_std == 0.0 {
        return Ok(y);
    }
    let theta = gaussian_field(seed, x.rows(), x.cols());
    y.zip_map(&theta, |yv, t| yv + theta_std * t)
}

/// Smooth synthetic scene: a tilted plane plus a few low-frequency cosines,
/// kept inside [20, 235].
pub fn gen_scene(seed: u64, rows: usize, cols: usize) -> LumaImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = rng.gen_range(90.0..160.0);
    let tilt_r = rng.gen_range(-40.0..40.0);
    let tilt_c = rng.gen_range(-40.0..40.0);
    let waves: Vec<(f64, f64, f64, f64)> = (0..5)
        .map(|_| {
            (
                rng.gen_range(8.0..25.0),
                rng.gen_range(0.5..4.0) * std::f64::consts::TAU / rows as f64,
                rng.gen_range(0.5..4.0) * std::f64::consts::TAU / cols as f64,
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    Matrix::from_fn(rows, cols, |i, j| {
        let u = i as f64 / rows as f64 - 0.5;
        let v = j as f64 / cols as f64 - 0.5;
        let mut val = base + tilt_r * u + tilt_c * v;
        for &(amp, fr, fc, phase) in &waves {
            val += amp * (fr * i as f64 + fc * j as f64 + phase).cos();
        }
        val.clamp(20.0, 235.0)
    })
}

/// Kernel standing in for the proprietary defocus rendering.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BlurKernel {
    /// Normalized square box of odd side.
    Box(usize),
    /// Normalized disc of the given radius.
    Disc(usize),
}

impl Default for BlurKernel {
    fn default() -> Self {
        BlurKernel::Box(9)
    }
}

impl BlurKernel {
    /// Blurs with mirror-reflected borders. Constant inputs stay exact.
    pub fn apply(&self, y: &Matrix) -> Result<Matrix> {
        match *self {
            BlurKernel::Box(k) => {
                if k % 2 == 0 {
                    return Err(Error::Parameter(format!("blur box must be odd, got {k}")));
                }
                Ok(box_mean(y, k))
            }
            BlurKernel::Disc(radius) => Ok(disc_mean(y, radius)),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            BlurKernel::Box(k) => format!("box:{k}"),
            BlurKernel::Disc(r) => format!("disc:{r}"),
        }
    }
}

fn disc_mean(y: &Matrix, radius: usize) -> Matrix {
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|di| (-r..=r).map(move |dj| (di, dj)))
        .filter(|(di, dj)| di * di + dj * dj <= r * r)
        .collect();
    let n = offsets.len() as f64;
    let (h, w) = y.shape();
    Matrix::from_fn(h, w, |i, j| {
        let c = y.get(i, j);
        let s: f64 = offsets
            .iter()
            .map(|&(di, dj)| {
                y.get(
                    reflect_index(i as isize + di, h),
                    reflect_index(j as isize + dj, w),
                ) - c
            })
            .sum();
        c + s / n
    })
}

/// Brightness-dependent scaling `g(y')` applied to the base pattern.
#[derive(Clone, Debug, PartialEq)]
pub enum GCurve {
    Constant(f64),
    /// Gaussian bump `1 + amplitude * exp(-((y - center) / width)^2)`,
    /// divided by its value at 4 so that `g(4) = 1`.
    Bump { amplitude: f64, center: f64, width: f64 },
    /// Piecewise-linear through sorted `(y, g)` knots, clamped outside.
    Knots(Vec<(f64, f64)>),
}

impl Default for GCurve {
    fn default() -> Self {
        GCurve::Bump {
            amplitude: 1.5,
            center: 110.0,
            width: 70.0,
        }
    }
}

impl GCurve {
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            GCurve::Constant(c) => *c,
            GCurve::Bump {
                amplitude,
                center,
                width,
            } => {
                let raw = |v: f64| 1.0 + amplitude * (-((v - center) / width).powi(2)).exp();
                raw(y) / raw(SLM_BACKGROUND)
            }
            GCurve::Knots(knots) => interpolate_clamped(knots, y),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            GCurve::Constant(c) => format!("constant:{c}"),
            GCurve::Bump {
                amplitude,
                center,
                width,
            } => format!("bump:{amplitude}:{center}:{width}"),
            GCurve::Knots(k) => format!("knots:{}", k.len()),
        }
    }
}

/// Linear interpolation through sorted knots, clamping outside their span.
pub(crate) fn interpolate_clamped(knots: &[(f64, f64)], x: f64) -> f64 {
    match knots {
        [] => f64::NAN,
        [only] => only.1,
        _ => {
            if x <= knots[0].0 {
                return knots[0].1;
            }
            let last = knots[knots.len() - 1];
            if x >= last.0 {
                return last.1;
            }
            let idx = knots.partition_point(|k| k.0 <= x);
            let (x0, y0) = knots[idx - 1];
            let (x1, y1) = knots[idx];
            if x1 == x0 {
                return y1;
            }
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        }
    }
}

/// Geometry of the blurred (bokeh) region.
#[derive(Clone, Debug, PartialEq)]
pub enum BlurRegion {
    None,
    Full,
    /// Upper `floor(H/2)` rows.
    TopHalf,
    /// Rows from `floor(H/2)` down.
    BottomHalf,
    /// Everything outside an axis-aligned ellipse (the subject).
    OutsideEllipse { cy: f64, cx: f64, ry: f64, rx: f64 },
    /// An axis-aligned rectangle.
    Rect { r0: usize, c0: usize, h: usize, w: usize },
}

impl BlurRegion {
    pub fn mask(&self, rows: usize, cols: usize) -> Matrix {
        let half = rows / 2;
        Matrix::from_fn(rows, cols, |i, j| {
            let inside = match *self {
                BlurRegion::None => false,
                BlurRegion::Full => true,
                BlurRegion::TopHalf => i < half,
                BlurRegion::BottomHalf => i >= half,
                BlurRegion::OutsideEllipse { cy, cx, ry, rx } => {
                    let dy = (i as f64 + 0.5 - cy) / ry;
                    let dx = (j as f64 + 0.5 - cx) / rx;
                    dy * dy + dx * dx > 1.0
                }
                BlurRegion::Rect { r0, c0, h, w } => {
                    i >= r0 && i < r0 + h && j >= c0 && j < c0 + w
                }
            };
            if inside {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn describe(&self) -> String {
        match self {
            BlurRegion::None => "none".into(),
            BlurRegion::Full => "full".into(),
            BlurRegion::TopHalf => "top_half".into(),
            BlurRegion::BottomHalf => "bottom_half".into(),
            BlurRegion::OutsideEllipse { cy, cx, ry, rx } => {
                format!("outside_ellipse:{cy}:{cx}:{ry}:{rx}")
            }
            BlurRegion::Rect { r0, c0, h, w } => format!("rect:{r0}:{c0}:{h}:{w}"),
        }
    }
}

/// Rendering parameters for one portrait.
#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub rows: usize,
    pub cols: usize,
    /// Binary mask, 1 where the bokeh is applied.
    pub blur_mask: Matrix,
    pub blur_kernel: BlurKernel,
    pub gamma_iso: f64,
    pub g_curve: GCurve,
    pub phi_std: f64,
    /// Box size coloring the extra noise; `None` keeps it white.
    pub phi_coloring: Option<usize>,
    pub quantize: bool,
    pub iso_label: u32,
}

impl SceneSpec {
    pub fn new(rows: usize, cols: usize, region: &BlurRegion, gamma_iso: f64) -> Self {
        Self {
            rows,
            cols,
            blur_mask: region.mask(rows, cols),
            blur_kernel: BlurKernel::default(),
            gamma_iso,
            g_curve: GCurve::default(),
            phi_std: 0.0,
            phi_coloring: None,
            quantize: true,
            iso_label: 100,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.blur_mask.shape() != (self.rows, self.cols) {
            return Err(Error::Dimension("blur mask shape differs from the scene".into()));
        }
        if self.blur_mask.as_slice().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data("blur mask must be binary".into()));
        }
        if !(self.gamma_iso > 0.0) {
            return Err(Error::Parameter(format!("gamma must be positive, got {}", self.gamma_iso)));
        }
        if self.phi_std < 0.0 {
            return Err(Error::Parameter("phi std must be non-negative".into()));
        }
        Ok(())
    }
}

/// Rounds half away from zero, then clips to [0, 255].
#[inline]
pub fn quantize_8bit(v: f64) -> f64 {
    v.round().clamp(0.0, 255.0)
}

fn noise_field(seed: u64, rows: usize, cols: usize, std: f64, coloring: Option<usize>) -> Result<Matrix> {
    let white = gaussian_field(seed, rows, cols);
    match coloring {
        None => Ok(white.scale(std)),
        Some(k) => standardize(&box_mean(&white, k), std),
    }
}

/// Portrait rendering: sensor pixels outside the bokeh mask, blurred
/// luminance plus `gamma * g(local) * P + Phi` inside it.
pub fn render_portrait(
    spec: &SceneSpec,
    pattern: &GroundTruthPattern,
    y: &LumaImage,
    seed: u64,
) -> Result<LumaImage> {
    spec.validate()?;
    if y.shape() != (spec.rows, spec.cols) || pattern.data.shape() != (spec.rows, spec.cols) {
        return Err(Error::Dimension("scene, pattern and sensor image shapes differ".into()));
    }
    let blurred = spec.blur_kernel.apply(y)?;
    let local = spec.blur_kernel.apply(&blurred)?;
    let phi = if spec.phi_std > 0.0 {
        Some(noise_field(seed, spec.rows, spec.cols, spec.phi_std, spec.phi_coloring)?)
    } else {
        None
    };
    let n = spec.rows * spec.cols;
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let v = if spec.blur_mask.as_slice()[idx] == 1.0 {
            let g = spec.g_curve.eval(local.as_slice()[idx]);
            let mut v = blurred.as_slice()[idx] + spec.gamma_iso * g * pattern.data.as_slice()[idx];
            if let Some(phi) = &phi {
                v += phi.as_slice()[idx];
            }
            v
        } else {
            y.as_slice()[idx]
        };
        out.push(if spec.quantize { quantize_8bit(v) } else { v });
    }
    Matrix::new(spec.rows, spec.cols, out)
}

/// Stage-light rendering parameters.
#[derive(Clone, Debug)]
pub struct SlmSpec {
    pub gamma_iso: f64,
    pub phi_std: f64,
    /// Fraction of 8x8 blocks forced to 0 after quantization. Emulates
    /// lossy compression flattening dark blocks; the blocks are picked
    /// independently of their content.
    pub zero_block_fraction: f64,
}

/// Stage-light background: `clip(round(4 + gamma * P + Phi))`.
pub fn render_slm(
    pattern: &GroundTruthPattern,
    gamma_iso: f64,
    phi_std: f64,
    seed: u64,
) -> Result<LumaImage> {
    render_slm_with(
        pattern,
        &SlmSpec {
            gamma_iso,
            phi_std,
            zero_block_fraction: 0.0,
        },
        seed,
    )
}

pub fn render_slm_with(pattern: &GroundTruthPattern, spec: &SlmSpec, seed: u64) -> Result<LumaImage> {
    if !(spec.gamma_iso > 0.0) {
        return Err(Error::Parameter(format!("gamma must be positive, got {}", spec.gamma_iso)));
    }
    if spec.phi_std < 0.0 {
        return Err(Error::Parameter("noise std must be non-negative".into()));
    }
    if !(0.0..=1.0).contains(&spec.zero_block_fraction) {
        return Err(Error::Parameter("zero block fraction must lie in [0, 1]".into()));
    }
    let (rows, cols) = pattern.data.shape();
    let mut z = pattern
        .data
        .map(|p| SLM_BACKGROUND + spec.gamma_iso * p);
    if spec.phi_std > 0.0 {
        let phi = gaussian_field(derive_seed(seed, 1), rows, cols);
        z = z.zip_map(&phi, |v, f| v + spec.phi_std * f)?;
    }
    let mut z = z.map(quantize_8bit);
    if spec.zero_block_fraction > 0.0 {
        const B: usize = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
        for bi in 0..rows.div_ceil(B) {
            for bj in 0..cols.div_ceil(B) {
                if rng.gen::<f64>() < spec.zero_block_fraction {
                    for i in bi * B..((bi + 1) * B).min(rows) {
                        for j in bj * B..((bj + 1) * B).min(cols) {
                            z.set(i, j, 0.0);
                        }
                    }
                }
            }
        }
    }
    Ok(z)
}

/// Bilinear downscale by `scale_factor` with optional 8-bit requantization.
pub fn degrade(z: &LumaImage, scale_factor: f64, requantize: bool) -> Result<LumaImage> {
    if !(scale_factor > 0.0 && scale_factor <= 1.0) {
        return Err(Error::Parameter(format!("scale factor must lie in (0, 1], got {scale_factor}")));
    }
    let (h, w) = z.shape();
    let oh = (h as f64 * scale_factor).round() as usize;
    let ow = (w as f64 * scale_factor).round() as usize;
    if oh < MIN_DEGRADED_SIDE || ow < MIN_DEGRADED_SIDE {
        return Err(Error::Dimension(format!("downscaled image {oh}x{ow} is too small")));
    }
    let resized = if oh == h && ow == w {
        z.clone()
    } else {
        resize_bilinear(z, oh, ow)
    };
    Ok(if requantize {
        resized.map(quantize_8bit)
    } else {
        resized
    })
}

/// Bilinear resampling on pixel centres with edge clamping.
pub fn resize_bilinear(z: &Matrix, rows: usize, cols: usize) -> Matrix {
    let (h, w) = z.shape();
    let sy = h as f64 / rows as f64;
    let sx = w as f64 / cols as f64;
    let coord = |o: usize, s: f64, n: usize| {
        let c = ((o as f64 + 0.5) * s - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, c - i0 as f64)
    };
    let cols_idx: Vec<_> = (0..cols).map(|j| coord(j, sx, w)).collect();
    Matrix::from_fn(rows, cols, |i, j| {
        let (r0, r1, fy) = coord(i, sy, h);
        let (c0, c1, fx) = cols_idx[j];
        let top = z.get(r0, c0) * (1.0 - fx) + z.get(r0, c1) * fx;
        let bottom = z.get(r1, c0) * (1.0 - fx) + z.get(r1, c1) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// A simulated handset: its own sensor fingerprint plus the base pattern of
/// its model/OS combination.
#[derive(Clone, Debug)]
pub struct SimDevice {
    pub prnu: PrnuGroundTruth,
    pub theta_std: f64,
    pub gamma_iso: f64,
    pub phi_std: f64,
    pub g_curve: GCurve,
    pub blur_kernel: BlurKernel,
}

impl SimDevice {
    pub fn new(seed: u64, rows: usize, cols: usize, prnu_strength: f64, gamma_iso: f64) -> Result<Self> {
        Ok(Self {
            prnu: gen_prnu(derive_seed(seed, 0x5052_4E55), rows, cols, prnu_strength)?,
            theta_std: 1.0,
            gamma_iso,
            phi_std: 1.0,
            g_curve: GCurve::default(),
            blur_kernel: BlurKernel::default(),
        })
    }

    /// Ordinary photo: sensor output of a smooth scene, quantized.
    pub fn photo(&self, seed: u64) -> Result<LumaImage> {
        let (rows, cols) = self.prnu.k.shape();
        let x = gen_scene(derive_seed(seed, 1), rows, cols);
        let y = render_sensor(&x, &self.prnu, self.theta_std, derive_seed(seed, 2))?;
        Ok(y.map(quantize_8bit))
    }

    /// Portrait whose bokeh covers `region`.
    pub fn portrait(&self, pattern: &GroundTruthPattern, region: &BlurRegion, seed: u64) -> Result<LumaImage> {
        let (rows, cols) = self.prnu.k.shape();
        let x = gen_scene(derive_seed(seed, 1), rows, cols);
        let y = render_sensor(&x, &self.prnu, self.theta_std, derive_seed(seed, 2))?;
        let spec = self.scene_spec(region);
        render_portrait(&spec, pattern, &y, derive_seed(seed, 3))
    }

    pub fn scene_spec(&self, region: &BlurRegion) -> SceneSpec {
        let (rows, cols) = self.prnu.k.shape();
        let mut spec = SceneSpec::new(rows, cols, region, self.gamma_iso);
        spec.blur_kernel = self.blur_kernel;
        spec.g_curve = self.g_curve.clone();
        spec.phi_std = self.phi_std;
        spec
    }
}

/// Random subject ellipse whose outside is blurred.
pub fn random_subject_region(seed: u64, rows: usize, cols: usize) -> BlurRegion {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (rows as f64, cols as f64);
    BlurRegion::OutsideEllipse {
        cy: h * rng.gen_range(0.45..0.65),
        cx: w * rng.gen_range(0.35..0.65),
        ry: h * rng.gen_range(0.25..0.4),
        rx: w * rng.gen_range(0.18..0.3),
    }
}
