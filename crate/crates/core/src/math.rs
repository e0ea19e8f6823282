//! Matrix statistics and filtering primitives shared by every estimator.
//!
//! All reductions run in a fixed sequential order, so results are
//! bit-reproducible across runs.

use crate::error::{Error, Result};
use crate::matrix::{LumaImage, Matrix, Residue};

/// Number of bins of an 8-bit probability mass function.
pub const PMF_BINS: usize = 256;

/// Floor substituted for empty model bins inside the KLD logarithm.
pub const KLD_MODEL_FLOOR: f64 = 1e-12;

/// Sample mean `<A, 1>_F / N`.
pub fn sample_mean(a: &Matrix) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Dimension("sample mean of an empty matrix".into()));
    }
    Ok(a.sum() / a.len() as f64)
}

/// Sample standard deviation with the `N - 1` divisor.
pub fn sample_std(a: &Matrix) -> Result<f64> {
    if a.len() < 2 {
        return Err(Error::Dimension(format!(
            "sample std needs at least 2 elements, got {}",
            a.len()
        )));
    }
    let mu = sample_mean(a)?;
    let ss: f64 = a.as_slice().iter().map(|v| (v - mu) * (v - mu)).sum();
    Ok((ss / (a.len() - 1) as f64).sqrt())
}

/// Normalized cross-correlation of two equally shaped matrices.
///
/// Returns [`Error::Degenerate`] when either input is constant.
pub fn ncc(a: &Matrix, b: &Matrix) -> Result<f64> {
    a.ensure_same_shape(b)?;
    ncc_slices(a.as_slice(), b.as_slice())
}

pub(crate) fn ncc_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let mu_a = a.iter().sum::<f64>() / n;
    let mu_b = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut ea = 0.0;
    let mut eb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - mu_a;
        let dy = y - mu_b;
        num += dx * dy;
        ea += dx * dx;
        eb += dy * dy;
    }
    if ea == 0.0 || eb == 0.0 {
        return Err(Error::Degenerate("NCC of a constant matrix".into()));
    }
    Ok((num / (ea.sqrt() * eb.sqrt())).clamp(-1.0, 1.0))
}

/// Signed square, `sgn(x) * x^2`.
#[inline]
pub fn ssq(x: f64) -> f64 {
    x * x.abs()
}

/// Maps an arbitrary index onto `0..n` by mirror reflection with the edge
/// sample repeated (`d c b a | a b c d | d c b a`).
#[inline]
pub(crate) fn reflect_index(idx: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = idx.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn check_kernel(a: &Matrix, k: usize) -> Result<()> {
    if k < 3 || k % 2 == 0 {
        return Err(Error::Parameter(format!("box kernel size must be odd and >= 3, got {k}")));
    }
    if k > a.rows().min(a.cols()) {
        return Err(Error::Parameter(format!(
            "box kernel {k} larger than image {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    Ok(())
}

/// Convolution with a normalized `k x k` box kernel, mirror-reflected borders.
///
/// Window sums are accumulated as offsets from the centre pixel, so constant
/// regions are reproduced exactly.
pub fn box_filter(a: &LumaImage, k: usize) -> Result<LumaImage> {
    check_kernel(a, k)?;
    Ok(box_mean(a, k))
}

/// Box mean without size checks. Any odd `k >= 1` and any matrix size work
/// since reflection wraps as often as needed.
pub(crate) fn box_mean(a: &Matrix, k: usize) -> Matrix {
    debug_assert!(k % 2 == 1);
    let (h, w) = a.shape();
    let half = (k / 2) as isize;
    let src = a.as_slice();

    // Horizontal offset sums relative to each pixel of the same row.
    let mut hsum = vec![0.0; h * w];
    for i in 0..h {
        let row = &src[i * w..(i + 1) * w];
        for j in 0..w {
            let c = row[j];
            let mut s = 0.0;
            for d in -half..=half {
                s += row[reflect_index(j as isize + d, w)] - c;
            }
            hsum[i * w + j] = s;
        }
    }

    let kf = k as f64;
    let norm = kf * kf;
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let c = src[i * w + j];
            let mut s = 0.0;
            for d in -half..=half {
                let r = reflect_index(i as isize + d, h);
                s += hsum[r * w + j] + kf * (src[r * w + j] - c);
            }
            out[i * w + j] = c + s / norm;
        }
    }
    Matrix::new(h, w, out).expect("box mean keeps the shape")
}

/// High-pass residue `Z - H_K(Z)` with the box denoiser.
pub fn residue(z: &LumaImage, k: usize) -> Result<Residue> {
    let smooth = box_filter(z, k)?;
    z.sub(&smooth)
}

/// Normalized autocorrelation over lags `-max_lag..=max_lag` in both axes.
///
/// Entry `[max_lag + k][max_lag + l]` holds the correlation at lag `(k, l)`,
/// normalized by the lag-zero energy of the mean-removed input.
pub fn autocorrelation(p: &Matrix, max_lag: usize) -> Result<Matrix> {
    let (h, w) = p.shape();
    if max_lag > h.min(w) / 4 {
        return Err(Error::Parameter(format!(
            "max lag {max_lag} exceeds a quarter of {h}x{w}"
        )));
    }
    let mu = sample_mean(p)?;
    let c: Vec<f64> = p.as_slice().iter().map(|v| v - mu).collect();
    let energy: f64 = c.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::Degenerate("autocorrelation of a constant matrix".into()));
    }
    let size = 2 * max_lag + 1;
    let m = max_lag as isize;
    let mut out = Matrix::zeros(size, size);
    // Half-plane of lags; the other half follows by point reflection.
    for dk in 0..=m {
        for dl in -m..=m {
            if dk == 0 && dl < 0 {
                continue;
            }
            let value = if dk == 0 && dl == 0 {
                1.0
            } else {
                let mut s = 0.0;
                let (j0, j1) = if dl >= 0 { (0, w as isize - dl) } else { (-dl, w as isize) };
                for i in 0..(h as isize - dk) {
                    let r0 = (i as usize) * w;
                    let r1 = ((i + dk) as usize) * w;
                    for j in j0..j1 {
                        s += c[r0 + j as usize] * c[r1 + (j + dl) as usize];
                    }
                }
                s / energy
            };
            out.set((m + dk) as usize, (m + dl) as usize, value);
            out.set((m - dk) as usize, (m - dl) as usize, value);
        }
    }
    Ok(out)
}

/// Groups pairs with identical `x` by the mean of their `y`, sorts by `x`,
/// then applies a centred moving average truncated at both ends.
pub fn moving_average_curve(pairs: &[(f64, f64)], window: usize) -> Result<Vec<(f64, f64)>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Parameter(format!("smoothing window must be odd, got {window}")));
    }
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut grouped: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
    let mut i = 0;
    while i < sorted.len() {
        let x = sorted[i].0;
        let mut j = i;
        let mut sum = 0.0;
        while j < sorted.len() && sorted[j].0 == x {
            sum += sorted[j].1;
            j += 1;
        }
        grouped.push((x, sum / (j - i) as f64));
        i = j;
    }

    let half = window / 2;
    let n = grouped.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let mean = grouped[lo..=hi].iter().map(|p| p.1).sum::<f64>() / (hi - lo + 1) as f64;
            (grouped[i].0, mean)
        })
        .collect())
}

/// Empirical probability mass function of an integer-valued 8-bit matrix.
pub fn pmf(values: &Matrix) -> Result<Vec<f64>> {
    let mut counts = [0u64; PMF_BINS];
    for (idx, &v) in values.as_slice().iter().enumerate() {
        if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
            return Err(Error::Data(format!(
                "value {v} at ({}, {}) is not an 8-bit integer",
                idx / values.cols(),
                idx % values.cols()
            )));
        }
        counts[v as usize] += 1;
    }
    let n = values.len() as f64;
    Ok(counts.iter().map(|&c| c as f64 / n).collect())
}

fn check_pmf(h: &[f64], what: &str) -> Result<()> {
    if h.len() != PMF_BINS {
        return Err(Error::Dimension(format!("{what} pmf has {} bins, expected 256", h.len())));
    }
    if h.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Data(format!("{what} pmf has negative or non-finite mass")));
    }
    Ok(())
}

/// Restricts both pmfs to bins `1..=255` and renormalizes them.
fn drop_zero_bin(obs: &[f64], model: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let obs_mass: f64 = obs[1..].iter().sum();
    if obs_mass <= 0.0 {
        return Err(Error::Degenerate("all observed mass sits in the zero bin".into()));
    }
    let model_mass: f64 = model[1..].iter().sum();
    let mut o = vec![0.0; PMF_BINS];
    let mut m = vec![0.0; PMF_BINS];
    for b in 1..PMF_BINS {
        o[b] = obs[b] / obs_mass;
        m[b] = if model_mass > 0.0 { model[b] / model_mass } else { 0.0 };
    }
    Ok((o, m))
}

/// Kullback-Leibler divergence `sum h_obs log(h_obs / h_model)`.
///
/// Model bins with no mass are floored at [`KLD_MODEL_FLOOR`]. With
/// `exclude_zero_bin` both pmfs are renormalized over bins 1..=255.
pub fn kld(h_obs: &[f64], h_model: &[f64], exclude_zero_bin: bool) -> Result<f64> {
    check_pmf(h_obs, "observed")?;
    check_pmf(h_model, "model")?;
    let (o, m) = if exclude_zero_bin {
        drop_zero_bin(h_obs, h_model)?
    } else {
        (h_obs.to_vec(), h_model.to_vec())
    };
    let mut d = 0.0;
    for (&p, &q) in o.iter().zip(&m) {
        if p > 0.0 {
            d += p * (p / q.max(KLD_MODEL_FLOOR)).ln();
        }
    }
    // Rounding can leave a tiny negative residue for identical inputs.
    Ok(d.max(0.0))
}

/// Symmetric chi-square distance `sum (p - q)^2 / (p + q)`.
pub fn chi_square(h_obs: &[f64], h_model: &[f64], exclude_zero_bin: bool) -> Result<f64> {
    check_pmf(h_obs, "observed")?;
    check_pmf(h_model, "model")?;
    let (o, m) = if exclude_zero_bin {
        drop_zero_bin(h_obs, h_model)?
    } else {
        (h_obs.to_vec(), h_model.to_vec())
    };
    Ok(o.iter()
        .zip(&m)
        .filter(|(p, q)| **p + **q > 0.0)
        .map(|(p, q)| (p - q) * (p - q) / (p + q))
        .sum())
}
