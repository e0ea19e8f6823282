//! Scaling operators of the defocus noise: the ISO gain (from clipped
//! stage-light backgrounds) and the brightness curve `g` (from flat patches).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::math::{chi_square, kld, moving_average_curve, pmf, residue, sample_mean, sample_std, PMF_BINS};
use crate::matrix::{LumaImage, Matrix};
use crate::persist::{fmt9, read_table};
use crate::simulate::SLM_BACKGROUND;

pub const DEFAULT_GRID_STEP: f64 = 0.1;
pub const DEFAULT_MC_SAMPLES: usize = 1_000_000;
pub const DEFAULT_MC_SEED: u64 = 0x5d_4e_50;
pub const DEFAULT_SMOOTHING_WINDOW: usize = 5;
const MIN_ISO_REGION: usize = 256;

/// How the candidate pmf of `max(0, round(mu + sigma * P))` is built.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PmfModel {
    MonteCarlo { samples: usize, seed: u64 },
    /// Gaussian CDF differences per bin, tails folded into bins 0 and 255.
    Exact,
}

impl Default for PmfModel {
    fn default() -> Self {
        PmfModel::MonteCarlo {
            samples: DEFAULT_MC_SAMPLES,
            seed: DEFAULT_MC_SEED,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Objective {
    #[default]
    Kld,
    ChiSquare,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IsoGainOptions {
    pub grid_step: f64,
    /// Half width of the search window around its centre.
    pub half_width: f64,
    pub model: PmfModel,
    pub objective: Objective,
    pub exclude_zero_bin: bool,
    /// Window moves allowed when the optimum sits on the window edge.
    pub max_recenter: usize,
}

impl Default for IsoGainOptions {
    fn default() -> Self {
        Self {
            grid_step: DEFAULT_GRID_STEP,
            half_width: 1.0,
            model: PmfModel::default(),
            objective: Objective::Kld,
            exclude_zero_bin: true,
            max_recenter: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IsoGainEstimate {
    pub gamma_hat: f64,
    pub mu_p_hat: f64,
    /// Objective value at the optimum (KLD by default).
    pub kld_min: f64,
    pub mu_z_hat: f64,
    /// Objective at the sample-moment initializer.
    pub kld_initial: f64,
    pub evaluations: usize,
}

/// Sorted standard-normal draws; bins are counted by binary search.
struct McTable {
    sorted: Vec<f64>,
}

impl McTable {
    fn new(samples: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sorted: Vec<f64> = (0..samples).map(|_| StandardNormal.sample(&mut rng)).collect();
        sorted.sort_by(f64::total_cmp);
        Self { sorted }
    }

    fn count_below(&self, x: f64) -> usize {
        self.sorted.partition_point(|&v| v < x)
    }
}

fn default_mc_table() -> &'static McTable {
    static TABLE: OnceLock<McTable> = OnceLock::new();
    TABLE.get_or_init(|| McTable::new(DEFAULT_MC_SAMPLES, DEFAULT_MC_SEED))
}

enum ModelSource<'a> {
    Mc(&'a McTable),
    Exact(Normal),
}

impl ModelSource<'_> {
    /// Fraction of `mu + sigma * x` below `v`.
    fn cdf(&self, v: f64, mu: f64, sigma: f64) -> f64 {
        let x = (v - mu) / sigma;
        match self {
            ModelSource::Mc(t) => t.count_below(x) as f64 / t.sorted.len() as f64,
            ModelSource::Exact(n) => n.cdf(x),
        }
    }

    /// pmf of `clip(round(mu + sigma * X), 0, 255)`.
    fn pmf(&self, mu: f64, sigma: f64) -> Vec<f64> {
        let mut out = vec![0.0; PMF_BINS];
        let mut prev = 0.0;
        for (k, slot) in out.iter_mut().enumerate().take(PMF_BINS - 1) {
            let c = self.cdf(k as f64 + 0.5, mu, sigma);
            *slot = c - prev;
            prev = c;
        }
        out[PMF_BINS - 1] = 1.0 - prev;
        out
    }
}

/// Model pmf of the clipped, quantized Gaussian (exported for diagnostics).
pub fn clipped_gaussian_pmf(mu: f64, sigma: f64, model: PmfModel) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    let owned;
    let src = match model {
        PmfModel::Exact => ModelSource::Exact(Normal::new(0.0, 1.0).expect("standard normal")),
        PmfModel::MonteCarlo { samples, seed } if samples == DEFAULT_MC_SAMPLES && seed == DEFAULT_MC_SEED => {
            ModelSource::Mc(default_mc_table())
        }
        PmfModel::MonteCarlo { samples, seed } => {
            owned = McTable::new(samples, seed);
            ModelSource::Mc(&owned)
        }
    };
    Ok(src.pmf(mu, sigma))
}

/// Fits `max(0, round(mu_Z + sigma_Z * P))` to a stage-light background by
/// grid search and returns `gamma = sigma_Z`, `mu_P = (mu_Z - 4) / gamma`.
///
/// The window starts at +-`half_width` around the sample moments. Heavy
/// clipping shrinks the sample std well below the true gain, so when the
/// optimum lands on the window edge the window is moved there (on the same
/// lattice) and the search repeats.
pub fn estimate_iso_gain(background: &LumaImage, opts: &IsoGainOptions) -> Result<IsoGainEstimate> {
    if background.rows() < MIN_ISO_REGION || background.cols() < MIN_ISO_REGION {
        return Err(Error::Dimension(format!(
            "background region must be at least 256x256, got {}x{}",
            background.rows(),
            background.cols()
        )));
    }
    if !(opts.grid_step > 0.0) || !(opts.half_width >= opts.grid_step) {
        return Err(Error::Parameter("grid step must be positive and not exceed the half width".into()));
    }
    let h_obs = pmf(background)?;
    let m0 = sample_mean(background)?;
    let s0 = sample_std(background)?;
    if s0 == 0.0 {
        return Err(Error::Degenerate("background region is constant".into()));
    }
    if opts.exclude_zero_bin && h_obs[0] >= 1.0 {
        return Err(Error::Degenerate("background is entirely zero".into()));
    }

    let owned;
    let src = match opts.model {
        PmfModel::Exact => ModelSource::Exact(Normal::new(0.0, 1.0).expect("standard normal")),
        PmfModel::MonteCarlo { samples, seed } => {
            if samples < 1000 {
                return Err(Error::Parameter("Monte-Carlo pmf needs at least 1000 samples".into()));
            }
            if samples == DEFAULT_MC_SAMPLES && seed == DEFAULT_MC_SEED {
                ModelSource::Mc(default_mc_table())
            } else {
                owned = McTable::new(samples, seed);
                ModelSource::Mc(&owned)
            }
        }
    };

    let step = opts.grid_step;
    let n = (opts.half_width / step).round() as i64;
    let sigma_at = |j: i64| s0 + j as f64 * step;
    let mu_at = |i: i64| m0 + i as f64 * step;
    // Lattice indices with sigma below one step are excluded.
    let j_floor = ((step - s0) / step - 1e-9).ceil() as i64;

    let mut cache: HashMap<(i64, i64), f64> = HashMap::new();
    let mut eval = |i: i64, j: i64| -> Result<f64> {
        if let Some(&v) = cache.get(&(i, j)) {
            return Ok(v);
        }
        let h_model = src.pmf(mu_at(i), sigma_at(j));
        let v = match opts.objective {
            Objective::Kld => kld(&h_obs, &h_model, opts.exclude_zero_bin)?,
            Objective::ChiSquare => chi_square(&h_obs, &h_model, opts.exclude_zero_bin)?,
        };
        cache.insert((i, j), v);
        Ok(v)
    };

    let initial = eval(0, 0.max(j_floor))?;
    let (mut ci, mut cj) = (0i64, 0i64);
    let mut best = (initial, 0i64, 0.max(j_floor));
    for _ in 0..=opts.max_recenter {
        let mut local = (f64::INFINITY, 0, 0);
        for i in ci - n..=ci + n {
            for j in (cj - n).max(j_floor)..=cj + n {
                let v = eval(i, j)?;
                // Ties go to the lowest mu, then the lowest sigma.
                if v < local.0 {
                    local = (v, i, j);
                }
            }
        }
        if local.0 < best.0 || (local.0 == best.0 && (local.1, local.2) < (best.1, best.2)) {
            best = local;
        }
        let on_mu_edge = (local.1 - ci).abs() == n;
        let on_sigma_edge = local.2 - cj == n || (cj - local.2 == n && local.2 > j_floor);
        if !(on_mu_edge || on_sigma_edge) {
            break;
        }
        ci = local.1;
        cj = local.2;
    }

    let (kld_min, bi, bj) = best;
    let gamma_hat = sigma_at(bj);
    let mu_z_hat = mu_at(bi);
    Ok(IsoGainEstimate {
        gamma_hat,
        mu_p_hat: (mu_z_hat - SLM_BACKGROUND) / gamma_hat,
        kld_min,
        mu_z_hat,
        kld_initial: initial,
        evaluations: cache.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsoGainEntry {
    pub gamma_hat: f64,
    pub mu_p_hat: f64,
    pub kld_min: f64,
}

/// Per-ISO gain estimates of one device.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IsoGainTable {
    pub entries: BTreeMap<u32, IsoGainEntry>,
}

impl IsoGainTable {
    pub fn insert(&mut self, iso: u32, entry: IsoGainEntry) -> Result<()> {
        if !(entry.gamma_hat > 0.0) {
            return Err(Error::Parameter(format!("gamma for ISO {iso} must be positive")));
        }
        if self.entries.insert(iso, entry).is_some() {
            return Err(Error::Data(format!("duplicate ISO label {iso}")));
        }
        Ok(())
    }

    /// ISO pairs where the gain decreases. Logged, not rejected.
    pub fn monotonicity_violations(&self) -> Vec<(u32, u32)> {
        let v: Vec<_> = self.entries.iter().collect();
        let bad: Vec<(u32, u32)> = v
            .windows(2)
            .filter(|w| w[1].1.gamma_hat < w[0].1.gamma_hat)
            .map(|w| (*w[0].0, *w[1].0))
            .collect();
        for (a, b) in &bad {
            log::warn!("ISO gain decreases from ISO {a} to ISO {b}");
        }
        bad
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# iso gamma_hat mu_p_hat kld_min")?;
        for (iso, e) in &self.entries {
            writeln!(out, "{iso} {} {} {}", fmt9(e.gamma_hat), fmt9(e.mu_p_hat), fmt9(e.kld_min))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut table = Self::default();
        for row in read_table(path, 4)? {
            if row[0] < 0.0 || row[0].fract() != 0.0 || row[0] > u32::MAX as f64 {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    reason: format!("ISO label {} is not an unsigned integer", row[0]),
                });
            }
            table.insert(
                row[0] as u32,
                IsoGainEntry {
                    gamma_hat: row[1],
                    mu_p_hat: row[2],
                    kld_min: row[3],
                },
            )?;
        }
        Ok(table)
    }
}

/// `M` flat patches of side `B`, co-located across `T` images.
#[derive(Clone, Debug)]
pub struct PatchStack {
    /// `patches[m][t]`.
    patches: Vec<Vec<Matrix>>,
    positions: Vec<(usize, usize)>,
    b: usize,
    iso: u32,
}

impl PatchStack {
    /// Cuts the patches with top-left corners `positions` out of every image.
    pub fn from_images(images: &[LumaImage], positions: &[(usize, usize)], b: usize, iso: u32) -> Result<Self> {
        if images.is_empty() || positions.is_empty() || b == 0 {
            return Err(Error::Dimension("patch stack needs images, positions and a positive side".into()));
        }
        let shape = images[0].shape();
        if let Some(t) = images.iter().position(|m| m.shape() != shape) {
            return Err(Error::Dimension(format!("image {t} differs in size from image 0")));
        }
        for (a, &(r0, c0)) in positions.iter().enumerate() {
            for &(r1, c1) in &positions[a + 1..] {
                if r0.abs_diff(r1) < b && c0.abs_diff(c1) < b {
                    return Err(Error::Parameter(format!("patches at ({r0},{c0}) and ({r1},{c1}) overlap")));
                }
            }
        }
        let patches = positions
            .iter()
            .map(|&(r0, c0)| images.iter().map(|img| img.block(r0, c0, b, b)).collect())
            .collect::<Result<Vec<Vec<_>>>>()?;
        Ok(Self {
            patches,
            positions: positions.to_vec(),
            b,
            iso,
        })
    }

    /// Non-overlapping `b x b` grid positions covering an image.
    pub fn grid_positions(rows: usize, cols: usize, b: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..rows / b {
            for j in 0..cols / b {
                out.push((i * b, j * b));
            }
        }
        out
    }

    pub fn num_locations(&self) -> usize {
        self.patches.len()
    }

    pub fn num_images(&self) -> usize {
        self.patches[0].len()
    }

    pub fn side(&self) -> usize {
        self.b
    }

    pub fn iso(&self) -> u32 {
        self.iso
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn patch(&self, m: usize, t: usize) -> &Matrix {
        &self.patches[m][t]
    }

    /// Patch mean `z_{m,t}`.
    pub fn patch_mean(&self, m: usize, t: usize) -> f64 {
        self.patches[m][t].sum() / (self.b * self.b) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveMethod {
    Eigen,
    Ls,
}

impl fmt::Display for CurveMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurveMethod::Eigen => "eigen",
            CurveMethod::Ls => "ls",
        })
    }
}

impl FromStr for CurveMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eigen" => Ok(CurveMethod::Eigen),
            "ls" => Ok(CurveMethod::Ls),
            _ => Err(Error::Parameter(format!("unknown curve method {s:?}"))),
        }
    }
}

/// Residue used by the eigen method on flat patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchResidue {
    /// Patch minus its mean. Exact on flat patches.
    MeanRemoved,
    /// Box residue of size `K`; attenuates the pattern by `sqrt(1 - 1/K^2)`
    /// for white patterns.
    Box(usize),
}

impl Default for PatchResidue {
    fn default() -> Self {
        PatchResidue::MeanRemoved
    }
}

fn patch_residue(p: &Matrix, kind: PatchResidue) -> Result<Matrix> {
    match kind {
        PatchResidue::MeanRemoved => {
            let mu = p.sum() / p.len() as f64;
            Ok(p.map(|v| v - mu))
        }
        PatchResidue::Box(k) => residue(p, k),
    }
}

/// Per-location output of the eigen method.
#[derive(Clone, Debug)]
pub struct EigenDiagnostics {
    pub eigenvalues: Vec<f64>,
    pub noise_variance: f64,
    pub signal: f64,
}

/// Raw `(z_{m,t}, g_hat)` pairs of the eigen method, with per-location
/// eigen diagnostics.
pub fn eigen_pairs(
    stack: &PatchStack,
    gamma_iso: f64,
    residue_kind: PatchResidue,
) -> Result<(Vec<(f64, f64)>, Vec<EigenDiagnostics>)> {
    let t_count = stack.num_images();
    if t_count < 2 {
        return Err(Error::Dimension("eigen method needs at least two images".into()));
    }
    if !(gamma_iso > 0.0) {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma_iso}")));
    }
    let b2 = (stack.b * stack.b) as f64;
    let mut pairs = Vec::with_capacity(stack.num_locations() * t_count);
    let mut diags = Vec::with_capacity(stack.num_locations());
    for m in 0..stack.num_locations() {
        let w: Vec<Matrix> = (0..t_count)
            .map(|t| patch_residue(stack.patch(m, t), residue_kind))
            .collect::<Result<_>>()?;
        let mut gram = DMatrix::<f64>::zeros(t_count, t_count);
        for a in 0..t_count {
            for b in a..t_count {
                let v = w[a].dot(&w[b])? / b2;
                gram[(a, b)] = v;
                gram[(b, a)] = v;
            }
        }
        if gram.trace() <= 0.0 {
            return Err(Error::Degenerate(format!("all residues vanish at patch location {m}")));
        }
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..t_count).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let noise = lambda[1..].iter().sum::<f64>() / (t_count - 1) as f64;
        let signal = (lambda[0] - noise).max(0.0);
        let v1 = eig.eigenvectors.column(order[0]);
        for t in 0..t_count {
            pairs.push((stack.patch_mean(m, t), signal.sqrt() * v1[t].abs() / gamma_iso));
        }
        diags.push(EigenDiagnostics {
            eigenvalues: lambda,
            noise_variance: noise,
            signal,
        });
    }
    Ok((pairs, diags))
}

/// Brightness curve by eigendecomposition of per-location Gram matrices.
pub fn estimate_g_eigen(
    stack: &PatchStack,
    gamma_iso: f64,
    residue_kind: PatchResidue,
    window: usize,
) -> Result<BrightnessCurve> {
    let (pairs, _) = eigen_pairs(stack, gamma_iso, residue_kind)?;
    build_curve(&pairs, window, CurveMethod::Eigen)
}

/// Least-squares fit of `Z = y' 1 + gamma g P_hat` on one patch.
/// Returns `(g_hat, y'_hat)`.
pub fn estimate_g_ls(z: &Matrix, p_hat: &Matrix, gamma_hat: f64) -> Result<(f64, f64)> {
    z.ensure_same_shape(p_hat)?;
    if !(gamma_hat > 0.0) {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma_hat}")));
    }
    let n = z.len() as f64;
    let z_mean = z.sum() / n;
    let p_mean = p_hat.sum() / n;
    let denom = p_hat.frobenius_norm_sq() - n * p_mean * p_mean;
    if !(denom > 1e-12 * p_hat.frobenius_norm_sq().max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate("pattern block is constant".into()));
    }
    let g = (z.dot(p_hat)? - n * z_mean * p_mean) / (gamma_hat * denom);
    Ok((g, z_mean - gamma_hat * g * p_mean))
}

/// LS curve over a whole stack, with `p_hat` the full-frame pattern estimate.
pub fn estimate_g_ls_stack(
    stack: &PatchStack,
    p_hat: &Matrix,
    gamma_hat: f64,
    window: usize,
) -> Result<BrightnessCurve> {
    let mut pairs = Vec::new();
    for (m, &(r0, c0)) in stack.positions.iter().enumerate() {
        let block = p_hat.block(r0, c0, stack.b, stack.b)?;
        for t in 0..stack.num_images() {
            let (g, y) = estimate_g_ls(stack.patch(m, t), &block, gamma_hat)?;
            pairs.push((y, g));
        }
    }
    build_curve(&pairs, window, CurveMethod::Ls)
}

/// Smoothed `(y', g)` samples with clamped linear interpolation.
#[derive(Clone, Debug, PartialEq)]
pub struct BrightnessCurve {
    pub samples: Vec<(f64, f64)>,
    pub method: CurveMethod,
    pub smoothing_window: usize,
}

pub fn build_curve(pairs: &[(f64, f64)], window: usize, method: CurveMethod) -> Result<BrightnessCurve> {
    if pairs.is_empty() {
        return Err(Error::Data("no (y', g) pairs to build a curve from".into()));
    }
    if pairs.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::Data("non-finite curve sample".into()));
    }
    Ok(BrightnessCurve {
        samples: moving_average_curve(pairs, window)?,
        method,
        smoothing_window: window,
    })
}

impl BrightnessCurve {
    pub fn lookup(&self, y: f64) -> f64 {
        crate::simulate::interpolate_clamped(&self.samples, y)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.samples[0].0, self.samples[self.samples.len() - 1].0)
    }

    /// Returns the curve scaled so that `lookup(y_ref) == 1`.
    pub fn normalized_at(&self, y_ref: f64) -> Result<Self> {
        let g = self.lookup(y_ref);
        if !(g > 0.0) {
            return Err(Error::Degenerate(format!("curve is not positive at {y_ref}")));
        }
        Ok(Self {
            samples: self.samples.iter().map(|&(y, v)| (y, v / g)).collect(),
            ..self.clone()
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# method={} window={}", self.method, self.smoothing_window)?;
        writeln!(out, "# y_prime g_hat")?;
        for (y, g) in &self.samples {
            writeln!(out, "{} {}", fmt9(*y), fmt9(*g))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let header = text.lines().next().unwrap_or_default();
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut method = None;
        let mut window = None;
        for tok in header.trim_start_matches('#').split_whitespace() {
            match tok.split_once('=') {
                Some(("method", v)) => method = Some(v.parse()?),
                Some(("window", v)) => window = Some(v.parse().map_err(|_| bad("bad window"))?),
                _ => {}
            }
        }
        let samples: Vec<(f64, f64)> = read_table(path, 2)?.into_iter().map(|r| (r[0], r[1])).collect();
        if samples.is_empty() {
            return Err(bad("curve has no samples"));
        }
        Ok(Self {
            samples,
            method: method.ok_or_else(|| bad("missing method header"))?,
            smoothing_window: window.ok_or_else(|| bad("missing window header"))?,
        })
    }
}

/// `sqrt(sum (a - b)^2 / sum b^2)` over the given abscissae.
pub fn relative_rms(a: impl Fn(f64) -> f64, b: impl Fn(f64) -> f64, xs: &[f64]) -> f64 {
    let (num, den) = xs.iter().fold((0.0, 0.0), |(n, d), &x| {
        let (va, vb) = (a(x), b(x));
        (n + (va - vb) * (va - vb), d + vb * vb)
    });
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (num / den).sqrt()
}
