//! Base-pattern detection and localization.
//!
//! A test image is reduced to its box residue and correlated with every
//! registered pattern in all eight dihedral poses. Block-local correlation
//! maps localize the defocus noise and give the PRNU exclusion mask.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::extract::BasePattern;
use crate::math::{box_mean, ncc_slices, reflect_index, residue};
use crate::matrix::{LumaImage, Matrix, Residue};

pub const DEFAULT_BETA: f64 = 0.0072;
pub const DEFAULT_ALPHA: f64 = 0.07;
pub const DEFAULT_BLOCK: usize = 21;
pub const DEFAULT_MAP_SMOOTHING: usize = 5;
pub const DEFAULT_DETECT_KERNEL: usize = 5;

/// Element of the dihedral group of the square: `hflip` is applied first,
/// then `quarter_turns` counter-clockwise rotations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Orientation {
    pub hflip: bool,
    pub quarter_turns: u8,
}

impl Orientation {
    pub const IDENTITY: Orientation = Orientation {
        hflip: false,
        quarter_turns: 0,
    };

    pub fn new(quarter_turns: u8, hflip: bool) -> Self {
        Self {
            hflip,
            quarter_turns: quarter_turns % 4,
        }
    }

    /// The eight poses in canonical order: r0, r90, r180, r270, then the
    /// flipped ones.
    pub fn all() -> [Orientation; 8] {
        let mut out = [Orientation::IDENTITY; 8];
        for (i, o) in out.iter_mut().enumerate() {
            *o = Orientation::new((i % 4) as u8, i >= 4);
        }
        out
    }

    /// The four pure rotations.
    pub fn rotations() -> [Orientation; 4] {
        [0, 1, 2, 3].map(|r| Orientation::new(r, false))
    }

    pub fn rotation_degrees(&self) -> u32 {
        self.quarter_turns as u32 * 90
    }

    pub fn apply(&self, m: &Matrix) -> Matrix {
        let flipped;
        let base = if self.hflip {
            flipped = m.hflip();
            &flipped
        } else {
            m
        };
        match self.quarter_turns {
            0 => base.clone(),
            1 => base.rot90(),
            2 => base.rot180(),
            _ => base.rot270(),
        }
    }

    /// `self.then(other)` applies `self` first, then `other`.
    pub fn then(&self, other: &Orientation) -> Orientation {
        // F R^k = R^-k F
        let turns = if other.hflip {
            other.quarter_turns as i32 - self.quarter_turns as i32
        } else {
            other.quarter_turns as i32 + self.quarter_turns as i32
        };
        Orientation::new(turns.rem_euclid(4) as u8, self.hflip ^ other.hflip)
    }

    pub fn inverse(&self) -> Orientation {
        if self.hflip {
            *self
        } else {
            Orientation::new((4 - self.quarter_turns) % 4, false)
        }
    }

    /// Shape of an `rows x cols` matrix after this orientation.
    pub fn output_shape(&self, rows: usize, cols: usize) -> (usize, usize) {
        if self.quarter_turns % 2 == 1 {
            (cols, rows)
        } else {
            (rows, cols)
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}r{}", if self.hflip { "h" } else { "" }, self.rotation_degrees())
    }
}

impl FromStr for Orientation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (hflip, rest) = match s.strip_prefix('h') {
            Some(r) => (true, r),
            None => (false, s),
        };
        let deg: u32 = rest
            .strip_prefix('r')
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| Error::Parameter(format!("bad orientation {s:?}")))?;
        if deg % 90 != 0 || deg >= 360 {
            return Err(Error::Parameter(format!("bad orientation {s:?}")));
        }
        Ok(Orientation::new((deg / 90) as u8, hflip))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    None,
    Full,
    PartialM,
    PartialB,
    PartialC,
    PartialG,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::None => "none",
            Relation::Full => "full",
            Relation::PartialM => "partial_m",
            Relation::PartialB => "partial_b",
            Relation::PartialC => "partial_c",
            Relation::PartialG => "partial_g",
        })
    }
}

impl FromStr for Relation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Relation::None,
            "full" => Relation::Full,
            "partial_m" => Relation::PartialM,
            "partial_b" => Relation::PartialB,
            "partial_c" => Relation::PartialC,
            "partial_g" => Relation::PartialG,
            _ => return Err(Error::Parameter(format!("unknown relation {s:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResolutionClass {
    Rear12Mp,
    Rear24Mp,
    Front7Mp,
}

impl fmt::Display for ResolutionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResolutionClass::Rear12Mp => "rear_12MP",
            ResolutionClass::Rear24Mp => "rear_24MP",
            ResolutionClass::Front7Mp => "front_7MP",
        })
    }
}

impl FromStr for ResolutionClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rear_12MP" => Ok(ResolutionClass::Rear12Mp),
            "rear_24MP" => Ok(ResolutionClass::Rear24Mp),
            "front_7MP" => Ok(ResolutionClass::Front7Mp),
            _ => Err(Error::Parameter(format!("unknown resolution class {s:?}"))),
        }
    }
}

/// Model and iOS major-version range served by a catalog entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelRange {
    pub model: String,
    pub ios_min: u32,
    pub ios_max: u32,
    /// The device produces the entry's pattern mirrored left-right.
    pub hflip: bool,
}

#[derive(Clone, Debug)]
pub struct CatalogEntry {
    pub id: String,
    pub pattern: Option<BasePattern>,
    pub models: Vec<ModelRange>,
    pub resolution: ResolutionClass,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationRow {
    pub a: String,
    pub b: String,
    pub relation: Relation,
    pub hflip: bool,
}

/// Result of a model/iOS lookup.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LookupHit {
    pub id: String,
    pub hflip: bool,
}

/// Maps circled digits to plain ones so both spellings name the same entry.
pub fn normalize_id(id: &str) -> String {
    id.trim()
        .chars()
        .map(|c| match c {
            '\u{2460}'..='\u{2468}' => char::from_digit(c as u32 - 0x2460 + 1, 10).unwrap(),
            other => other,
        })
        .collect()
}

fn normalize_model(model: &str) -> String {
    let m = model.trim().to_ascii_lowercase();
    let m = m.strip_prefix("iphone").unwrap_or(&m).trim().to_string();
    m.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug, Default)]
pub struct BpCatalog {
    entries: Vec<CatalogEntry>,
    relations: Vec<RelationRow>,
}

type Table1Row = (&'static str, &'static [&'static str], u32, u32, bool);

const TABLE1_MODELS: &[Table1Row] = &[
    ("1", &["7 Plus"], 10, 10, false),
    ("2", &["7 Plus"], 11, 11, false),
    ("3", &["8 Plus", "X"], 11, 11, false),
    ("4", &["X", "XR", "XS", "XS Max"], 12, 13, false),
    ("4", &["11", "11 Pro", "11 Pro Max", "SE (2nd)"], 13, 13, false),
    ("5", &["12 Pro Max"], 14, 14, false),
    ("5", &["12", "12 Pro"], 14, 17, false),
    ("5", &["12 mini"], 14, 17, false),
    ("5", &["13", "13 mini", "13 Pro", "13 Pro Max", "SE (3rd)"], 15, 15, false),
    ("5", &["11", "11 Pro Max"], 16, 17, false),
    ("5", &["11 Pro"], 17, 17, false),
    ("6", &["X", "SE (2nd)"], 16, 16, true),
    ("6", &["13 Pro", "14 Plus", "14 Pro"], 16, 16, false),
    ("6", &["13", "14", "14 Pro Max"], 16, 17, false),
    ("6", &["13 mini", "13 Pro Max", "15 Plus"], 17, 17, false),
    ("6", &["15"], 17, 26, false),
    ("7", &["15 Pro", "15 Pro Max"], 17, 17, false),
    ("7", &["16", "16 Plus", "16 Pro", "16 Pro Max", "16e"], 18, 18, false),
    ("7", &["17", "17 Pro", "17 Pro Max", "Air"], 26, 26, false),
];

const TABLE1_RELATIONS: &[(&str, &str, Relation, bool)] = &[
    ("2", "3", Relation::PartialM, false),
    ("4", "5", Relation::PartialB, true),
    ("4", "6", Relation::PartialC, true),
    ("4", "7", Relation::PartialG, true),
    ("5", "6", Relation::PartialB, false),
    ("5", "7", Relation::PartialG, false),
    ("6", "7", Relation::PartialG, false),
];

impl BpCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Metadata of the known 12MP rear-camera patterns, without pattern
    /// data. Entry 8 is listed without models.
    pub fn table1() -> Self {
        let mut cat = Self::new();
        for id in 1..=8 {
            cat.entries.push(CatalogEntry {
                id: id.to_string(),
                pattern: None,
                models: Vec::new(),
                resolution: ResolutionClass::Rear12Mp,
            });
        }
        for &(id, models, lo, hi, flip) in TABLE1_MODELS {
            let e = cat.entries.iter_mut().find(|e| e.id == id).expect("table id");
            e.models.extend(models.iter().map(|m| ModelRange {
                model: m.to_string(),
                ios_min: lo,
                ios_max: hi,
                hflip: flip,
            }));
        }
        cat.relations = TABLE1_RELATIONS
            .iter()
            .map(|&(a, b, relation, hflip)| RelationRow {
                a: a.into(),
                b: b.into(),
                relation,
                hflip,
            })
            .collect();
        cat
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn relations(&self) -> &[RelationRow] {
        &self.relations
    }

    pub fn get(&self, id: &str) -> Option<&CatalogEntry> {
        let id = normalize_id(id);
        self.entries.iter().find(|e| e.id == id)
    }

    /// Adds an entry, or attaches the pattern to an existing metadata-only
    /// entry with the same id.
    pub fn register(&mut self, id: &str, pattern: BasePattern) -> Result<()> {
        let id = normalize_id(id);
        if id.is_empty() || id.contains(char::is_whitespace) || id.contains('/') {
            return Err(Error::Parameter(format!("invalid catalog id {id:?}")));
        }
        match self.entries.iter_mut().find(|e| e.id == id) {
            Some(e) if e.pattern.is_some() => Err(Error::Config(format!("catalog id {id} already has a pattern"))),
            Some(e) => {
                e.pattern = Some(pattern);
                Ok(())
            }
            None => {
                self.entries.push(CatalogEntry {
                    id,
                    pattern: Some(pattern),
                    models: Vec::new(),
                    resolution: ResolutionClass::Rear12Mp,
                });
                Ok(())
            }
        }
    }

    pub fn add_relation(&mut self, a: &str, b: &str, relation: Relation, hflip: bool) -> Result<()> {
        let (a, b) = (normalize_id(a), normalize_id(b));
        for id in [&a, &b] {
            if self.get(id).is_none() {
                return Err(Error::NotFound(format!("catalog id {id}")));
            }
        }
        if a == b {
            return Err(Error::Parameter("self relations are implicit".into()));
        }
        self.relations.retain(|r| !((r.a == a && r.b == b) || (r.a == b && r.b == a)));
        self.relations.push(RelationRow { a, b, relation, hflip });
        Ok(())
    }

    /// Entry id (and flip flag) serving a model under an iOS major version.
    pub fn lookup(&self, model: &str, ios_major: u32) -> Result<LookupHit> {
        let want = normalize_model(model);
        for e in &self.entries {
            for m in &e.models {
                if normalize_model(&m.model) == want && (m.ios_min..=m.ios_max).contains(&ios_major) {
                    return Ok(LookupHit {
                        id: e.id.clone(),
                        hflip: m.hflip,
                    });
                }
            }
        }
        Err(Error::NotFound(format!("no pattern for {model:?} on iOS {ios_major}")))
    }

    /// Declared relation between two entries; symmetric.
    pub fn relation_between(&self, a: &str, b: &str) -> Result<(Relation, bool)> {
        let (a, b) = (normalize_id(a), normalize_id(b));
        for id in [&a, &b] {
            if self.get(id).is_none() {
                return Err(Error::NotFound(format!("catalog id {id}")));
            }
        }
        if a == b {
            return Ok((Relation::Full, false));
        }
        Ok(self
            .relations
            .iter()
            .find(|r| (r.a == a && r.b == b) || (r.a == b && r.b == a))
            .map_or((Relation::None, false), |r| (r.relation, r.hflip)))
    }

    /// Writes `<id>.f32` + `<id>.meta` per patterned entry and
    /// `relations.txt`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for e in &self.entries {
            if let Some(p) = &e.pattern {
                let mut p = p.clone();
                p.catalog_id = Some(e.id.clone());
                p.params.insert("resolution".into(), e.resolution.to_string());
                p.save(&dir.join(format!("{}.f32", e.id)))?;
            }
        }
        let mut out = std::io::BufWriter::new(fs::File::create(dir.join("relations.txt"))?);
        writeln!(out, "# id_a id_b relation flip")?;
        for r in &self.relations {
            writeln!(out, "{} {} {} {}", r.a, r.b, r.relation, r.hflip)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Loads a catalog directory on top of the built-in metadata. Without a
    /// `relations.txt` the built-in relations are kept.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::NotFound(format!("catalog directory {}", dir.display())));
        }
        let mut cat = Self::table1();
        let mut files: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "f32"))
            .collect();
        files.sort();
        for path in files {
            let p = BasePattern::load(&path)?;
            let id = p
                .catalog_id
                .clone()
                .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .unwrap_or_default();
            let resolution = p.params.get("resolution").map(|r| r.parse()).transpose()?;
            cat.register(&id, p)?;
            if let Some(res) = resolution {
                let id = normalize_id(&id);
                cat.entries.iter_mut().find(|e| e.id == id).expect("registered").resolution = res;
            }
        }
        let rel_path = dir.join("relations.txt");
        if rel_path.exists() {
            cat.relations.clear();
            let text = fs::read_to_string(&rel_path)?;
            for (n, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let bad = |why: &str| Error::Format {
                    path: rel_path.clone(),
                    reason: format!("line {}: {why}", n + 1),
                };
                let f: Vec<&str> = line.split_whitespace().collect();
                if f.len() != 4 {
                    return Err(bad("expected 4 fields"));
                }
                let relation = f[2].parse().map_err(|_| bad("unknown relation"))?;
                let hflip = f[3].parse().map_err(|_| bad("flip must be true or false"))?;
                cat.add_relation(f[0], f[1], relation, hflip).map_err(|e| bad(&e.to_string()))?;
            }
        }
        Ok(cat)
    }
}

/// One correlation score of the search.
#[derive(Clone, Debug, PartialEq)]
pub struct Score {
    pub id: String,
    pub orientation: Orientation,
    pub ncc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionResult {
    pub detected: bool,
    pub best_id: String,
    pub best_ncc: f64,
    pub orientation: Orientation,
    pub all_scores: Vec<Score>,
}

struct Candidate {
    id: String,
    orientation: Orientation,
    /// Centered, unit-norm oriented pattern.
    unit: Vec<f64>,
}

/// Catalog patterns pre-oriented and normalized for repeated matching
/// against images of one shape.
pub struct BpMatcher {
    rows: usize,
    cols: usize,
    candidates: Vec<Candidate>,
}

fn centered_unit(m: &Matrix) -> Option<Vec<f64>> {
    let mu = m.sum() / m.len() as f64;
    let c: Vec<f64> = m.as_slice().iter().map(|v| v - mu).collect();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    (norm > 0.0).then(|| c.into_iter().map(|v| v / norm).collect())
}

impl BpMatcher {
    /// Keeps every (entry, pose) whose oriented pattern is `rows x cols`.
    pub fn new(catalog: &BpCatalog, rows: usize, cols: usize, poses: &[Orientation]) -> Result<Self> {
        let mut entries: Vec<&CatalogEntry> = catalog.entries.iter().filter(|e| e.pattern.is_some()).collect();
        if entries.is_empty() {
            return Err(Error::Config("catalog has no registered patterns".into()));
        }
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        let mut canonical = poses.to_vec();
        canonical.sort_by_key(|o| Orientation::all().iter().position(|x| x == o));
        canonical.dedup();
        let mut candidates = Vec::new();
        for e in entries {
            let p = &e.pattern.as_ref().expect("filtered").data;
            for o in &canonical {
                if o.output_shape(p.rows(), p.cols()) != (rows, cols) {
                    continue;
                }
                if let Some(unit) = centered_unit(&o.apply(p)) {
                    candidates.push(Candidate {
                        id: e.id.clone(),
                        orientation: *o,
                        unit,
                    });
                }
            }
        }
        if candidates.is_empty() {
            return Err(Error::Config(format!("no catalog pattern fits a {rows}x{cols} image")));
        }
        Ok(Self { rows, cols, candidates })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Scores a residue against every candidate; argmax ties go to the
    /// lowest id, then the canonical pose order.
    pub fn search(&self, w: &Residue, beta: f64) -> Result<DetectionResult> {
        if w.shape() != (self.rows, self.cols) {
            return Err(Error::Config(format!(
                "no catalog pattern fits a {}x{} image",
                w.rows(),
                w.cols()
            )));
        }
        let w_unit = centered_unit(w);
        let mut all = Vec::with_capacity(self.candidates.len());
        let mut best: Option<usize> = None;
        for (i, c) in self.candidates.iter().enumerate() {
            let ncc = match &w_unit {
                Some(wu) => wu.iter().zip(&c.unit).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0),
                None => 0.0,
            };
            if best.map_or(true, |b: usize| ncc > all_score(&all, b)) {
                best = Some(i);
            }
            all.push(Score {
                id: c.id.clone(),
                orientation: c.orientation,
                ncc,
            });
        }
        let b = best.expect("non-empty candidates");
        let s = &all[b];
        Ok(DetectionResult {
            detected: s.ncc > beta,
            best_id: s.id.clone(),
            best_ncc: s.ncc,
            orientation: s.orientation,
            all_scores: all.clone(),
        })
    }
}

fn all_score(all: &[Score], i: usize) -> f64 {
    all[i].ncc
}

/// Full search over the catalog in all eight poses.
pub fn detect_bp(image: &LumaImage, catalog: &BpCatalog, beta: f64, k: usize) -> Result<DetectionResult> {
    let matcher = BpMatcher::new(catalog, image.rows(), image.cols(), &Orientation::all())?;
    matcher.search(&residue(image, k)?, beta)
}

/// Argmax of the search regardless of any threshold.
pub fn best_matching_bp(w: &Residue, catalog: &BpCatalog) -> Result<(String, Orientation, f64)> {
    let r = BpMatcher::new(catalog, w.rows(), w.cols(), &Orientation::all())?.search(w, f64::INFINITY)?;
    Ok((r.best_id, r.orientation, r.best_ncc))
}

/// Block-local correlation field between a residue and a pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct NccMap {
    pub data: Matrix,
    pub block: usize,
    pub smooth_k: usize,
    /// Tiles where either input was constant; they score 0.
    pub degenerate_tiles: usize,
}

/// Per-tile NCC over non-overlapping `block x block` tiles (edge tiles
/// mirror-padded), box-smoothed on the tile grid, then expanded back to the
/// input size by tile membership.
pub fn ncc_map(w: &Residue, p_hat: &Matrix, block: usize, smooth_k: usize) -> Result<NccMap> {
    w.ensure_same_shape(p_hat)?;
    if block == 0 {
        return Err(Error::Parameter("block size must be positive".into()));
    }
    if smooth_k == 0 || smooth_k % 2 == 0 {
        return Err(Error::Parameter(format!("smoothing size must be odd, got {smooth_k}")));
    }
    let (h, wd) = w.shape();
    let (gr, gc) = (h.div_ceil(block), wd.div_ceil(block));
    let mut grid = Matrix::zeros(gr, gc);
    let mut degenerate = 0;
    let mut ta = Vec::with_capacity(block * block);
    let mut tb = Vec::with_capacity(block * block);
    for bi in 0..gr {
        for bj in 0..gc {
            ta.clear();
            tb.clear();
            for di in 0..block {
                let r = reflect_index((bi * block + di) as isize, h);
                for dj in 0..block {
                    let c = reflect_index((bj * block + dj) as isize, wd);
                    ta.push(w.get(r, c));
                    tb.push(p_hat.get(r, c));
                }
            }
            match ncc_slices(&ta, &tb) {
                Ok(v) => grid.set(bi, bj, v),
                Err(Error::Degenerate(_)) => degenerate += 1,
                Err(e) => return Err(e),
            }
        }
    }
    let smooth = box_mean(&grid, smooth_k).map(|v| v.clamp(-1.0, 1.0));
    let data = Matrix::from_fn(h, wd, |i, j| smooth.get(i / block, j / block));
    Ok(NccMap {
        data,
        block,
        smooth_k,
        degenerate_tiles: degenerate,
    })
}

/// Binary mask, 1 where the pixel is kept for PRNU work.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    pub data: Matrix,
    pub alpha: f64,
}

impl BinaryMask {
    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            data: Matrix::filled(rows, cols, 1.0),
            alpha: f64::INFINITY,
        }
    }

    /// Fraction of kept pixels.
    pub fn coverage(&self) -> f64 {
        self.data.sum() / self.data.len() as f64
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.shape()
    }

    pub fn orient(&self, o: &Orientation) -> Self {
        Self {
            data: o.apply(&self.data),
            alpha: self.alpha,
        }
    }
}

/// `M = 1` where `R <= alpha`.
pub fn mask_from_map(map: &NccMap, alpha: f64) -> BinaryMask {
    BinaryMask {
        data: map.data.map(|r| if r <= alpha { 1.0 } else { 0.0 }),
        alpha,
    }
}

/// Intersection over union of the nonzero supports of two masks.
pub fn iou(a: &Matrix, b: &Matrix) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        let (x, y) = (x != 0.0, y != 0.0);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Registers `(id, pattern)` pairs into an empty catalog (test and
/// simulation helper).
pub fn catalog_from_patterns(patterns: &[(&str, Matrix)]) -> Result<BpCatalog> {
    let mut cat = BpCatalog::new();
    for (id, p) in patterns {
        cat.register(id, BasePattern::from_matrix(p.clone(), Some(id.to_string())))?;
    }
    Ok(cat)
}

/// Per-(id, pose) table in insertion order, for reports.
pub fn scores_by_id(result: &DetectionResult) -> BTreeMap<String, Vec<(Orientation, f64)>> {
    let mut map: BTreeMap<String, Vec<(Orientation, f64)>> = BTreeMap::new();
    for s in &result.all_scores {
        map.entry(s.id.clone()).or_default().push((s.orientation, s.ncc));
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{gaussian_field, gen_pattern, BlurRegion, SimDevice};
    use proptest::prelude::*;

    #[test]
    fn dihedral_group_laws() {
        let m = Matrix::from_fn(3, 5, |i, j| (i * 5 + j) as f64);
        let all = Orientation::all();
        let images: Vec<_> = all.iter().map(|o| o.apply(&m)).collect();
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(images[i], images[j]);
            }
        }
        for a in all {
            assert_eq!(a.inverse().apply(&a.apply(&m)), m);
            for b in all {
                assert_eq!(a.then(&b).apply(&m), b.apply(&a.apply(&m)), "{a} then {b}");
                assert!(all.contains(&a.then(&b)));
            }
            assert_eq!(a.to_string().parse::<Orientation>().unwrap(), a);
        }
    }

    #[test]
    fn table_lookup_examples() {
        let cat = BpCatalog::table1();
        assert_eq!(cat.lookup("iPhone 7 Plus", 10).unwrap().id, "1");
        assert_eq!(cat.lookup("iPhone 7 Plus", 11).unwrap().id, "2");
        assert_eq!(cat.lookup("iPhone 15", 17).unwrap().id, "6");
        assert_eq!(cat.lookup("iphone 15", 26).unwrap().id, "6");
        assert_eq!(cat.lookup("X", 16).unwrap(), LookupHit { id: "6".into(), hflip: true });
        assert_eq!(cat.lookup("iPhone 12 mini", 16).unwrap().id, "5");
        assert!(matches!(cat.lookup("iPhone 7 Plus", 12), Err(Error::NotFound(_))));
    }

    #[test]
    fn relation_examples() {
        let cat = BpCatalog::table1();
        assert_eq!(cat.relation_between("4", "6").unwrap(), (Relation::PartialC, true));
        assert_eq!(cat.relation_between("\u{2465}", "\u{2463}").unwrap(), (Relation::PartialC, true));
        assert_eq!(cat.relation_between("1", "7").unwrap(), (Relation::None, false));
        assert_eq!(cat.relation_between("5", "5").unwrap(), (Relation::Full, false));
        assert!(cat.relation_between("5", "zz").is_err());
        for r in cat.relations() {
            assert_eq!(cat.relation_between(&r.a, &r.b).unwrap(), cat.relation_between(&r.b, &r.a).unwrap());
        }
    }

    fn positive(seed: u64, n: usize) -> (Matrix, LumaImage) {
        let p = gen_pattern(seed, n, n, None).unwrap();
        let dev = SimDevice::new(seed + 1, n, n, 0.01, 5.0).unwrap();
        let img = dev.portrait(&p, &BlurRegion::Full, seed + 2).unwrap();
        (p.data, img)
    }

    #[test]
    fn detects_true_pattern_in_every_pose() {
        let (p, img) = positive(40, 128);
        let q = gen_pattern(41, 128, 128, None).unwrap().data;
        let cat = catalog_from_patterns(&[("sim1", p), ("sim2", q)]).unwrap();
        let base = detect_bp(&img, &cat, DEFAULT_BETA, 5).unwrap();
        assert!(base.detected);
        assert_eq!(base.best_id, "sim1");
        assert_eq!(base.orientation, Orientation::IDENTITY);
        assert_eq!(base.all_scores.len(), 16);
        for o in Orientation::all() {
            let r = detect_bp(&o.apply(&img), &cat, DEFAULT_BETA, 5).unwrap();
            assert_eq!(r.best_id, "sim1");
            assert_eq!(r.orientation, o);
            assert!((r.best_ncc - base.best_ncc).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_is_not_detected_and_shapes_are_checked() {
        let p = gen_pattern(50, 128, 96, None).unwrap().data;
        let cat = catalog_from_patterns(&[("a", p)]).unwrap();
        let noise = gaussian_field(51, 128, 96).map(|v| 100.0 + 3.0 * v);
        let r = detect_bp(&noise, &cat, DEFAULT_BETA, 5).unwrap();
        // Non-square: only the four poses keeping the shape are searched.
        assert_eq!(r.all_scores.len(), 4);
        let best = best_matching_bp(&residue(&noise, 5).unwrap(), &cat).unwrap();
        assert_eq!(best.0, "a");
        assert!(best.2.abs() < 0.05);
        assert!(matches!(
            detect_bp(&Matrix::zeros(64, 64), &cat, DEFAULT_BETA, 5),
            Err(Error::Config(_))
        ));
        assert!(matches!(detect_bp(&noise, &BpCatalog::table1(), 0.0, 5), Err(Error::Config(_))));
    }

    #[test]
    fn map_examples() {
        let p = gaussian_field(60, 105, 126);
        let m = ncc_map(&p, &p, 21, 5).unwrap();
        assert!(m.data.as_slice().iter().all(|&v| v >= 0.999));

        // Smoothing leaks across the seam over two tiles; 40 tile columns
        // keep that leak small.
        let s = 840;
        let noise = gaussian_field(61, s, s);
        let p = gaussian_field(62, s, s);
        let half = Matrix::from_fn(s, s, |i, j| if j < s / 2 { p.get(i, j) } else { noise.get(i, j) });
        let m = ncc_map(&half, &p, 21, 5).unwrap();
        let (mut left, mut right) = (0.0, 0.0);
        for i in 0..s {
            for j in 0..s {
                if j < s / 2 { left += m.data.get(i, j) } else { right += m.data.get(i, j) }
            }
        }
        let n = (s * s / 2) as f64;
        assert!(left / n > 0.5 && (right / n).abs() < 0.05, "{} {}", left / n, right / n);
    }

    #[test]
    fn degenerate_tiles_score_zero() {
        let mut w = gaussian_field(63, 42, 42);
        w.paste(&Matrix::filled(21, 21, 3.0), 0, 0).unwrap();
        let m = ncc_map(&w, &w, 21, 1).unwrap();
        assert_eq!(m.degenerate_tiles, 1);
        assert_eq!(m.data.get(0, 0), 0.0);
        assert!((m.data.get(30, 30) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mask_examples() {
        let mk = |v: f64| NccMap {
            data: Matrix::filled(4, 4, v),
            block: 21,
            smooth_k: 5,
            degenerate_tiles: 0,
        };
        assert_eq!(mask_from_map(&mk(0.0), 0.07).coverage(), 1.0);
        assert_eq!(mask_from_map(&mk(1.0), 0.07).coverage(), 0.0);
        assert_eq!(mask_from_map(&mk(0.07), 0.07).coverage(), 1.0);
    }

    #[test]
    fn map_localizes_bokeh() {
        let n = 512;
        let p = gen_pattern(70, n, n, None).unwrap();
        let dev = SimDevice::new(71, n, n, 0.01, 5.0).unwrap();
        let region = BlurRegion::TopHalf;
        let img = dev.portrait(&p, &region, 72).unwrap();
        let map = ncc_map(&residue(&img, 5).unwrap(), &p.data, 21, 5).unwrap();
        let flagged = map.data.map(|r| if r > DEFAULT_ALPHA { 1.0 } else { 0.0 });
        let score = iou(&flagged, &region.mask(n, n)).unwrap();
        assert!(score >= 0.8, "iou {score}");
    }

    #[test]
    fn catalog_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cat = BpCatalog::table1();
        cat.register("5", BasePattern::from_matrix(gaussian_field(80, 64, 64), None)).unwrap();
        cat.register("sim1", BasePattern::from_matrix(gaussian_field(81, 64, 64), None)).unwrap();
        cat.add_relation("sim1", "5", Relation::PartialG, true).unwrap();
        cat.save_dir(dir.path()).unwrap();
        let back = BpCatalog::load_dir(dir.path()).unwrap();
        assert_eq!(back.relation_between("5", "sim1").unwrap(), (Relation::PartialG, true));
        assert_eq!(back.relation_between("4", "6").unwrap(), (Relation::PartialC, true));
        assert!(back.get("sim1").unwrap().pattern.is_some());
        assert_eq!(back.lookup("iPhone 12", 15).unwrap().id, "5");
        assert!(back.get("5").unwrap().pattern.is_some());
    }

    proptest! {
        #[test]
        fn mask_is_monotone_in_alpha(seed in 0u64..1000, a in -0.5f64..1.0, d in 0.0f64..0.5) {
            let data = gaussian_field(seed, 8, 8).map(|v| (v / 3.0).clamp(-1.0, 1.0));
            let map = NccMap { data, block: 21, smooth_k: 5, degenerate_tiles: 0 };
            let lo = mask_from_map(&map, a);
            let hi = mask_from_map(&map, a + d);
            for (x, y) in lo.data.as_slice().iter().zip(hi.data.as_slice()) {
                prop_assert!(x <= y);
            }
        }
    }
}
