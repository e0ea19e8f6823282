use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;

use sdnp_core::detect::{
    best_matching_bp, catalog_from_patterns, mask_from_map, ncc_map, BpCatalog, BpMatcher, DetectionResult, Orientation,
};
use sdnp_core::extract::{extract_bp_nl, extract_bp_slm, BasePattern, HalfFrameSet};
use sdnp_core::math::residue;
use sdnp_core::persist::{fmt9, write_kv};
use sdnp_core::prnu::{
    eta, exclusion_mask, extract_prnu as prnu_plain, extract_prnu_bp_aware, verify as prnu_verify, BoxDenoiser, Decision,
    PrnuFingerprint, VerifyOptions,
};
use sdnp_core::scaling::{
    estimate_g_eigen, estimate_g_ls_stack, estimate_iso_gain, IsoGainEntry, IsoGainOptions, IsoGainTable, PatchResidue,
    PatchStack, PmfModel,
};
use sdnp_core::simulate::{
    degrade, derive_seed, gen_pattern, gen_scene, random_subject_region, render_portrait, render_sensor, render_slm,
    resize_bilinear, BlurRegion, SimDevice,
};
use sdnp_core::{LumaImage, Matrix};

use crate::config::RunConfig;
use crate::error::{at, CliError, CliResult};
use crate::imageio::{load_image, save_gray, save_heatmap};
use crate::outputs::Outputs;
use crate::{Pipeline, SimKind};

/// Loads all images in parallel, keeping input order.
fn load_all(paths: &[PathBuf]) -> CliResult<Vec<LumaImage>> {
    paths.par_iter().map(|p| load_image(p)).collect()
}

/// Rejects images whose size differs from the first one, naming the file.
fn check_same_size(paths: &[&PathBuf], images: &[&LumaImage]) -> CliResult<()> {
    let (Some(first), Some(first_path)) = (images.first(), paths.first()) else {
        return Ok(());
    };
    for (p, z) in paths.iter().zip(images).skip(1) {
        if z.shape() != first.shape() {
            return Err(CliError::file(
                p,
                format!(
                    "image is {}x{} but {} is {}x{}",
                    z.rows(),
                    z.cols(),
                    first_path.display(),
                    first.rows(),
                    first.cols()
                ),
            ));
        }
    }
    Ok(())
}

fn load_catalog(dir: &Path) -> CliResult<BpCatalog> {
    BpCatalog::load_dir(dir).map_err(at(dir))
}

fn require_catalog(catalog: Option<&Path>, why: &str) -> CliResult<BpCatalog> {
    match catalog {
        Some(dir) => load_catalog(dir),
        None => Err(CliError::Input(format!(
            "{why} needs a catalog (--catalog or {})",
            crate::config::CATALOG_ENV
        ))),
    }
}

fn verify_options(cfg: &RunConfig, tau: f64, search_orientations: bool) -> VerifyOptions {
    VerifyOptions {
        alpha: cfg.alpha,
        tau,
        k: cfg.k,
        block: cfg.block,
        smooth_k: cfg.map_smoothing,
        search_orientations,
    }
}

pub struct SimulateArgs {
    pub kind: SimKind,
    pub out: PathBuf,
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub gamma: f64,
    pub prnu_strength: f64,
    pub theta: f64,
    pub pattern_seed: Option<u64>,
    pub device_seed: Option<u64>,
}

/// Flat at `level` on the rows selected by `flat_top`, scene elsewhere.
fn half_flat(seed: u64, rows: usize, cols: usize, level: f64, flat_top: bool) -> Matrix {
    let scene = gen_scene(seed, rows, cols);
    let half = rows / 2;
    Matrix::from_fn(rows, cols, |i, j| {
        if (i < half) == flat_top {
            level
        } else {
            scene.get(i, j)
        }
    })
}

pub fn simulate(cfg: &RunConfig, a: &SimulateArgs) -> CliResult<()> {
    let pattern_seed = a.pattern_seed.unwrap_or(cfg.seed);
    let device_seed = a.device_seed.unwrap_or(cfg.seed.wrapping_add(1));
    let pattern = gen_pattern(pattern_seed, a.rows, a.cols, None)?;
    let mut dev = SimDevice::new(device_seed, a.rows, a.cols, a.prnu_strength, a.gamma)?;
    dev.theta_std = a.theta;

    let mut out = Outputs::new();
    out.dir(&a.out)?;
    let ext = cfg.format.extension();

    let mut bp = BasePattern::from_matrix(pattern.data.clone(), Some("sim1".into()));
    bp.params.insert("seed".into(), pattern_seed.to_string());
    bp.save(&out.matrix(&a.out.join("pattern.f32")))?;
    let mut cat = BpCatalog::new();
    cat.register("sim1", bp)?;
    let cat_dir = out.dir(&a.out.join("catalog"))?;
    out.matrix(&cat_dir.join("sim1.f32"));
    out.file(&cat_dir.join("relations.txt"));
    cat.save_dir(&cat_dir)?;

    let mut names: Vec<(String, u64, BlurRegion, bool)> = Vec::new();
    for i in 0..a.count {
        let s = derive_seed(cfg.seed, 1000 + i as u64);
        match a.kind {
            SimKind::Portrait => names.push((format!("portrait_{i:03}"), s, random_subject_region(derive_seed(s, 7), a.rows, a.cols), true)),
            SimKind::Full => names.push((format!("full_{i:03}"), s, BlurRegion::Full, true)),
            SimKind::Photo => names.push((format!("photo_{i:03}"), s, BlurRegion::None, true)),
            SimKind::Slm | SimKind::Nl => {
                names.push((format!("top_{i:03}"), s, BlurRegion::TopHalf, true));
                names.push((format!("bottom_{i:03}"), derive_seed(s, 9), BlurRegion::BottomHalf, false));
            }
        }
    }
    let rendered: Vec<CliResult<LumaImage>> = names
        .par_iter()
        .enumerate()
        .map(|(n, (_, s, region, top))| -> CliResult<LumaImage> {
            Ok(match a.kind {
                SimKind::Portrait | SimKind::Full => dev.portrait(&pattern, region, *s)?,
                SimKind::Photo => dev.photo(*s)?,
                SimKind::Slm => render_slm(&pattern, a.gamma, dev.phi_std, *s)?,
                SimKind::Nl => {
                    let level = 70.0 + 4.0 * ((n / 2) % 30) as f64;
                    let x = half_flat(derive_seed(*s, 1), a.rows, a.cols, level, *top);
                    let y = render_sensor(&x, &dev.prnu, dev.theta_std, derive_seed(*s, 2))?;
                    render_portrait(&dev.scene_spec(region), &pattern, &y, derive_seed(*s, 3))?
                }
            })
        })
        .collect();

    let mut manifest = vec![
        ("kind".to_string(), format!("{:?}", a.kind).to_lowercase()),
        ("seed".into(), cfg.seed.to_string()),
        ("pattern_seed".into(), pattern_seed.to_string()),
        ("device_seed".into(), device_seed.to_string()),
        ("rows".into(), a.rows.to_string()),
        ("cols".into(), a.cols.to_string()),
        ("gamma_iso".into(), a.gamma.to_string()),
        ("prnu_strength".into(), a.prnu_strength.to_string()),
        ("theta_std".into(), a.theta.to_string()),
        ("phi_std".into(), dev.phi_std.to_string()),
        ("g_curve".into(), dev.g_curve.describe()),
        ("blur_kernel".into(), dev.blur_kernel.describe()),
        ("pattern".into(), "pattern.f32".into()),
        ("catalog".into(), "catalog".into()),
    ];
    for ((name, _, region, _), z) in names.iter().zip(rendered) {
        let file = format!("{name}.{ext}");
        save_gray(&out.file(&a.out.join(&file)), &z?)?;
        let region = if a.kind == SimKind::Slm { "stage_light".into() } else { region.describe() };
        manifest.push((format!("image.{file}"), region));
        println!("{}", a.out.join(&file).display());
    }
    write_kv(&out.file(&a.out.join("manifest.txt")), &manifest)?;
    out.commit();
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn extract_bp(
    cfg: &RunConfig,
    mode: &str,
    top: &[PathBuf],
    bottom: &[PathBuf],
    iso: u32,
    gamma: Option<f64>,
    id: Option<String>,
    out_path: &Path,
) -> CliResult<()> {
    let top_imgs = load_all(top)?;
    let bottom_imgs = load_all(bottom)?;
    let paths: Vec<&PathBuf> = top.iter().chain(bottom).collect();
    let imgs: Vec<&LumaImage> = top_imgs.iter().chain(&bottom_imgs).collect();
    check_same_size(&paths, &imgs)?;
    let set = HalfFrameSet::new(top_imgs, bottom_imgs, iso)?;
    let mut bp = if mode == "nl" {
        extract_bp_nl(&set, cfg.k)?
    } else {
        let gamma = match gamma {
            Some(g) => g,
            None => {
                let opts = IsoGainOptions {
                    grid_step: cfg.grid_step,
                    ..Default::default()
                };
                let g = estimate_iso_gain(&set.top()[0], &opts).map_err(at(&top[0]))?.gamma_hat;
                info!("estimated ISO gain {g} from {}", top[0].display());
                g
            }
        };
        extract_bp_slm(&set, gamma)?
    };
    bp.catalog_id = id;
    let mut out = Outputs::new();
    out.parent_of(out_path)?;
    bp.save(&out.matrix(out_path))?;
    out.commit();
    println!(
        "EXTRACTED out={} mode={} images={} iso={} shape={}x{}",
        out_path.display(),
        bp.mode,
        bp.num_images,
        bp.iso,
        bp.data.rows(),
        bp.data.cols()
    );
    Ok(())
}

pub fn estimate_iso(
    cfg: &RunConfig,
    images: &[PathBuf],
    exact: bool,
    keep_zero_bin: bool,
    table: Option<&Path>,
    iso: Option<u32>,
) -> CliResult<()> {
    if table.is_some() && images.len() != 1 {
        return Err(CliError::Input("--table takes exactly one image".into()));
    }
    let opts = IsoGainOptions {
        grid_step: cfg.grid_step,
        model: if exact { PmfModel::Exact } else { PmfModel::default() },
        exclude_zero_bin: !keep_zero_bin,
        ..Default::default()
    };
    let results: Vec<_> = images
        .par_iter()
        .map(|p| -> CliResult<_> { estimate_iso_gain(&load_image(p)?, &opts).map_err(at(p)) })
        .collect();
    let mut estimates = Vec::new();
    for (p, r) in images.iter().zip(results) {
        let e = r?;
        println!(
            "{} gamma={} mu={} kld={}",
            p.display(),
            fmt9(e.gamma_hat),
            fmt9(e.mu_p_hat),
            fmt9(e.kld_min)
        );
        estimates.push(e);
    }
    if let (Some(path), Some(iso)) = (table, iso) {
        let mut t = if path.exists() {
            IsoGainTable::load(path).map_err(at(path))?
        } else {
            IsoGainTable::default()
        };
        let e = &estimates[0];
        t.insert(
            iso,
            IsoGainEntry {
                gamma_hat: e.gamma_hat,
                mu_p_hat: e.mu_p_hat,
                kld_min: e.kld_min,
            },
        )
        .map_err(at(path))?;
        let existed = path.exists();
        let mut out = Outputs::new();
        if !existed {
            out.parent_of(path)?;
            out.file(path);
        }
        t.save(path)?;
        out.commit();
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_g(
    cfg: &RunConfig,
    images: &[PathBuf],
    gamma: f64,
    patch: usize,
    iso: u32,
    method: &str,
    pattern: Option<&Path>,
    out_path: &Path,
) -> CliResult<()> {
    let imgs = load_all(images)?;
    check_same_size(&images.iter().collect::<Vec<_>>(), &imgs.iter().collect::<Vec<_>>())?;
    let (rows, cols) = imgs[0].shape();
    let stack = PatchStack::from_images(&imgs, &PatchStack::grid_positions(rows, cols, patch), patch, iso)?;
    let curve = if method == "ls" {
        let path = pattern.ok_or_else(|| CliError::Input("--method ls needs --pattern".into()))?;
        let bp = BasePattern::load(path).map_err(at(path))?;
        estimate_g_ls_stack(&stack, &bp.data, gamma, cfg.window)?
    } else {
        estimate_g_eigen(&stack, gamma, PatchResidue::MeanRemoved, cfg.window)?
    };
    let mut out = Outputs::new();
    out.parent_of(out_path)?;
    out.file(out_path);
    curve.save(out_path)?;
    out.commit();
    let (lo, hi) = curve.range();
    println!(
        "CURVE out={} method={} points={} range={}..{}",
        out_path.display(),
        method,
        curve.samples.len(),
        fmt9(lo),
        fmt9(hi)
    );
    Ok(())
}

/// One matcher per image shape, built before the parallel search.
fn matchers(catalog: &BpCatalog, images: &[LumaImage]) -> CliResult<HashMap<(usize, usize), BpMatcher>> {
    let mut m = HashMap::new();
    for z in images {
        if !m.contains_key(&z.shape()) {
            m.insert(z.shape(), BpMatcher::new(catalog, z.rows(), z.cols(), &Orientation::all())?);
        }
    }
    Ok(m)
}

fn detect_scores(cfg: &RunConfig, catalog: &BpCatalog, paths: &[PathBuf], images: &[LumaImage]) -> CliResult<Vec<DetectionResult>> {
    let ms = matchers(catalog, images)?;
    paths
        .par_iter()
        .zip(images)
        .map(|(p, z)| -> CliResult<DetectionResult> {
            let w = residue(z, cfg.k).map_err(at(p))?;
            ms[&z.shape()].search(&w, cfg.beta).map_err(at(p))
        })
        .collect()
}

pub fn detect(cfg: &RunConfig, images: &[PathBuf], catalog: &Path, scores: Option<&Path>) -> CliResult<()> {
    let cat = load_catalog(catalog)?;
    let imgs = load_all(images)?;
    let results = detect_scores(cfg, &cat, images, &imgs)?;
    let mut table = String::from("# image id orientation ncc\n");
    for (p, r) in images.iter().zip(&results) {
        if r.detected {
            println!(
                "DETECTED id={} ncc={} orient={} image={}",
                r.best_id,
                fmt9(r.best_ncc),
                r.orientation,
                p.display()
            );
        } else {
            println!("NOT_DETECTED best={} ncc={} image={}", r.best_id, fmt9(r.best_ncc), p.display());
        }
        for s in &r.all_scores {
            let _ = writeln!(table, "{} {} {} {}", p.display(), s.id, s.orientation, fmt9(s.ncc));
        }
    }
    if let Some(path) = scores {
        let mut out = Outputs::new();
        out.parent_of(path)?;
        fs::write(out.file(path), table).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
        out.commit();
    }
    Ok(())
}

pub fn map(cfg: &RunConfig, image: &Path, catalog: &Path, out_path: &Path, mask_path: Option<&Path>) -> CliResult<()> {
    let cat = load_catalog(catalog)?;
    let z = load_image(image)?;
    let w = residue(&z, cfg.k).map_err(at(image))?;
    let (id, o, score) = best_matching_bp(&w, &cat).map_err(at(image))?;
    let pattern = &cat.get(&id).and_then(|e| e.pattern.as_ref()).expect("matched entries carry patterns").data;
    let m = ncc_map(&w, &o.apply(pattern), cfg.block, cfg.map_smoothing).map_err(at(image))?;
    let mask = mask_from_map(&m, cfg.alpha);
    let mut out = Outputs::new();
    out.parent_of(out_path)?;
    save_heatmap(&out.file(out_path), &m.data)?;
    if let Some(mp) = mask_path {
        out.parent_of(mp)?;
        save_gray(&out.file(mp), &mask.data.map(|v| v * 255.0))?;
    }
    out.commit();
    println!(
        "MAP id={id} orient={o} ncc={} mask_coverage={} degenerate_tiles={} out={}",
        fmt9(score),
        fmt9(mask.coverage()),
        m.degenerate_tiles,
        out_path.display()
    );
    Ok(())
}

pub fn extract_prnu(cfg: &RunConfig, images: &[PathBuf], bp_aware: bool, catalog: Option<&Path>, out_path: &Path) -> CliResult<()> {
    let imgs = load_all(images)?;
    check_same_size(&images.iter().collect::<Vec<_>>(), &imgs.iter().collect::<Vec<_>>())?;
    let d = BoxDenoiser { k: cfg.k };
    let fp = if bp_aware {
        let cat = require_catalog(catalog, "--bp-aware")?;
        let opts = verify_options(cfg, cfg.tau_prime, false);
        let masks: Vec<_> = images
            .par_iter()
            .zip(&imgs)
            .map(|(p, z)| exclusion_mask(z, &cat, &opts).map(|m| m.0).map_err(at(p)))
            .collect::<CliResult<_>>()?;
        extract_prnu_bp_aware(&imgs, &masks, &d)?
    } else {
        prnu_plain(&imgs, &d)?
    };
    let mut out = Outputs::new();
    out.parent_of(out_path)?;
    fp.save(&out.matrix(out_path))?;
    out.commit();
    println!(
        "FINGERPRINT out={} images={} bp_aware={} mask_coverage={} zero_pixels={}",
        out_path.display(),
        fp.num_images,
        fp.bp_aware,
        fmt9(fp.mask_coverage),
        fp.zero_pixels
    );
    Ok(())
}

/// Verification score of one image: `(eta or eta', decision, best id, coverage)`.
fn verification_scores(
    cfg: &RunConfig,
    paths: &[PathBuf],
    images: &[LumaImage],
    fp: &PrnuFingerprint,
    catalog: Option<&BpCatalog>,
    baseline: bool,
    search_orientations: bool,
) -> CliResult<Vec<(f64, Decision, Option<String>, f64)>> {
    paths
        .par_iter()
        .zip(images)
        .map(|(p, z)| -> CliResult<_> {
            if baseline {
                let e = eta(&residue(z, cfg.k).map_err(at(p))?, fp, z).map_err(at(p))?;
                let d = if e.value > cfg.tau { Decision::H1 } else { Decision::H0 };
                Ok((e.value, d, None, 1.0))
            } else {
                let opts = verify_options(cfg, cfg.tau_prime, search_orientations);
                let v = prnu_verify(z, fp, catalog, &opts).map_err(at(p))?;
                let cov = v.mask_coverage();
                Ok((v.score.eta, v.score.decision, v.best_bp, cov))
            }
        })
        .collect()
}

pub fn verify(
    cfg: &RunConfig,
    images: &[PathBuf],
    fingerprint: &Path,
    catalog: Option<&Path>,
    baseline: bool,
    search_orientations: bool,
) -> CliResult<()> {
    let fp = PrnuFingerprint::load(fingerprint).map_err(at(fingerprint))?;
    let cat = match (baseline, catalog) {
        (false, Some(dir)) => Some(load_catalog(dir)?),
        _ => None,
    };
    let imgs = load_all(images)?;
    let scores = verification_scores(cfg, images, &imgs, &fp, cat.as_ref(), baseline, search_orientations)?;
    for (p, (score, decision, best, cov)) in images.iter().zip(scores) {
        if baseline {
            println!("path={} eta={} tau={} decision={decision}", p.display(), fmt9(score), cfg.tau);
        } else {
            println!(
                "path={} best_bp={} mask_coverage={} eta_prime={} decision={decision}",
                p.display(),
                best.as_deref().unwrap_or("none"),
                fmt9(cov),
                fmt9(score)
            );
        }
    }
    Ok(())
}

pub struct RocArgs {
    pub positives: Vec<PathBuf>,
    pub negatives: Vec<PathBuf>,
    pub pipeline: Pipeline,
    pub catalog: Option<PathBuf>,
    pub fingerprint: Option<PathBuf>,
    pub scale_factors: Vec<f64>,
    pub partial_fpr: f64,
    pub out: Option<PathBuf>,
}

/// Catalog whose patterns are resampled to `rows x cols`.
fn resized_catalog(cat: &BpCatalog, rows: usize, cols: usize) -> CliResult<BpCatalog> {
    let patterns: Vec<(String, Matrix)> = cat
        .entries()
        .iter()
        .filter_map(|e| e.pattern.as_ref().map(|p| (e.id.clone(), resize_bilinear(&p.data, rows, cols))))
        .collect();
    let refs: Vec<(&str, Matrix)> = patterns.iter().map(|(id, m)| (id.as_str(), m.clone())).collect();
    Ok(catalog_from_patterns(&refs)?)
}

pub fn roc(cfg: &RunConfig, a: &RocArgs) -> CliResult<()> {
    let cat = match (a.pipeline, &a.catalog) {
        (Pipeline::VerifyBaseline, _) => None,
        (_, Some(dir)) => Some(load_catalog(dir)?),
        (_, None) => return Err(CliError::Input(format!("pipeline {:?} needs a catalog", a.pipeline))),
    };
    let fp = match (a.pipeline, &a.fingerprint) {
        (Pipeline::Detect, _) => None,
        (_, Some(p)) => Some(PrnuFingerprint::load(p).map_err(at(p))?),
        (_, None) => return Err(CliError::Input("verification pipelines need --fingerprint".into())),
    };
    let pos = load_all(&a.positives)?;
    let neg = load_all(&a.negatives)?;
    let mut table = String::from("# sf threshold tpr fpr\n");
    for &sf in &a.scale_factors {
        let shrink = |v: &[LumaImage]| -> CliResult<Vec<LumaImage>> {
            v.par_iter().map(|z| degrade(z, sf, true).map_err(CliError::from)).collect()
        };
        let (pos_s, neg_s) = (shrink(&pos)?, shrink(&neg)?);
        let score = |paths: &[PathBuf], imgs: &[LumaImage]| -> CliResult<Vec<f64>> {
            let (rows, cols) = imgs[0].shape();
            match a.pipeline {
                Pipeline::Detect => {
                    let c = resized_catalog(cat.as_ref().expect("checked"), rows, cols)?;
                    Ok(detect_scores(cfg, &c, paths, imgs)?.into_iter().map(|r| r.best_ncc).collect())
                }
                _ => {
                    let mut fp = fp.clone().expect("checked");
                    let mut c = cat.clone();
                    if fp.data.shape() != (rows, cols) {
                        fp.data = resize_bilinear(&fp.data, rows, cols);
                        c = c.map(|c| resized_catalog(&c, rows, cols)).transpose()?;
                    }
                    let baseline = a.pipeline == Pipeline::VerifyBaseline;
                    let s = verification_scores(cfg, paths, imgs, &fp, c.as_ref(), baseline, false)?;
                    Ok(s.into_iter().map(|t| t.0).collect())
                }
            }
        };
        let r = sdnp_core::roc::roc(&score(&a.positives, &pos_s)?, &score(&a.negatives, &neg_s)?, a.partial_fpr)?;
        println!(
            "ROC pipeline={:?} sf={sf} auc={} partial_auc={} fpr_bound={} positives={} negatives={}",
            a.pipeline,
            fmt9(r.auc),
            fmt9(r.partial_auc.1),
            r.partial_auc.0,
            pos.len(),
            neg.len()
        );
        for pt in &r.points {
            let _ = writeln!(table, "{sf} {} {} {}", fmt9(pt.threshold), fmt9(pt.tpr), fmt9(pt.fpr));
        }
    }
    if let Some(path) = &a.out {
        let mut out = Outputs::new();
        out.parent_of(path)?;
        fs::write(out.file(path), table).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
        out.commit();
    }
    Ok(())
}
