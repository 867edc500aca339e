//! Synthetic AU-rendered face frames.
//!
//! Each rendered AU owns a disjoint rectangle on a coarse macro-grid. An
//! active AU paints its own texture/color pattern in that rectangle at
//! brightness intensity/5; seeded Gaussian pixel noise is added on top and
//! the result clamped to [0, 1]. Labels come from the sampled intensities
//! through the regular FACS code path.

use std::collections::BTreeMap;

use ndarray::Array3;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::images::{FrameImage, ImageStore, SYNTHETIC_SCHEME};
use crate::data::manifest::{
    DatasetManifest, FrameRecord, LabelRule, ModeledAuSet, Provenance, ProvenanceStep,
};
use crate::error::{Error, Result};
use crate::facs::{
    max_intensity, AuIntensityMap, PainCategory3, PainCategory4, AU_EYES_CLOSED, MAX_INTENSITY,
};
use crate::seeding::derive_rng;

/// AUs rendered in addition to the modeled set (PSPI constituents outside it).
pub const EXTRA_RENDERED_AUS: [u8; 3] = [7, 10, 43];

/// AU pairs whose joint activation drives labels under [`LabelRule::CoOccurrence`].
pub const CO_OCCURRENCE_PAIRS: [(u8, u8); 3] = [(4, 6), (9, 12), (25, 26)];

/// Rectangle in macro-grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Region {
    pub const fn new(row: usize, col: usize, rows: usize, cols: usize) -> Self {
        Self {
            row,
            col,
            rows,
            cols,
        }
    }

    fn overlaps(&self, other: &Region) -> bool {
        self.row < other.row + other.rows
            && other.row < self.row + self.rows
            && self.col < other.col + other.cols
            && other.col < self.col + self.cols
    }
}

/// Face-like default placement on a 6×6 grid. AU6/AU7 and AU9/AU10 sit in
/// vertically adjacent cells.
pub fn default_regions() -> BTreeMap<u8, Region> {
    BTreeMap::from([
        (2, Region::new(0, 0, 1, 2)),
        (1, Region::new(0, 2, 1, 2)),
        (4, Region::new(0, 4, 1, 2)),
        (7, Region::new(1, 0, 1, 2)),
        (43, Region::new(1, 4, 1, 2)),
        (6, Region::new(2, 0, 1, 2)),
        (9, Region::new(2, 2, 1, 2)),
        (10, Region::new(3, 2, 1, 2)),
        (12, Region::new(3, 4, 1, 2)),
        (25, Region::new(4, 2, 1, 2)),
        (26, Region::new(5, 2, 1, 2)),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderSpec {
    pub side: usize,
    pub grid: usize,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
    pub regions: BTreeMap<u8, Region>,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            side: 96,
            grid: 6,
            noise: 0.05,
            regions: default_regions(),
        }
    }
}

impl RenderSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.grid == 0 || self.side == 0 || !self.side.is_multiple_of(self.grid) {
            return bad(format!(
                "side {} must be a positive multiple of grid {}",
                self.side, self.grid
            ));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!(
                "noise amplitude {} must be finite and >= 0",
                self.noise
            ));
        }
        for (code, r) in &self.regions {
            if r.rows == 0
                || r.cols == 0
                || r.row + r.rows > self.grid
                || r.col + r.cols > self.grid
            {
                return bad(format!(
                    "region of AU{code} {r:?} lies outside the {0}x{0} grid",
                    self.grid
                ));
            }
        }
        let regions: Vec<_> = self.regions.iter().collect();
        for (i, (ca, ra)) in regions.iter().enumerate() {
            for (cb, rb) in &regions[i + 1..] {
                if ra.overlaps(rb) {
                    return bad(format!("regions of AU{ca} and AU{cb} overlap"));
                }
            }
        }
        Ok(())
    }

    /// `side=..;grid=..;noise=..;seed=..;regions=code@row,col,rows,cols/...`
    pub fn to_uri(&self, seed: u64) -> String {
        let regions: Vec<String> = self
            .regions
            .iter()
            .map(|(c, r)| format!("{c}@{},{},{},{}", r.row, r.col, r.rows, r.cols))
            .collect();
        format!(
            "{SYNTHETIC_SCHEME}side={};grid={};noise={};seed={seed};regions={}",
            self.side,
            self.grid,
            self.noise,
            regions.join("/")
        )
    }

    /// Parses the part of a synthetic URI after the scheme.
    pub fn parse_uri(spec: &str) -> Result<(Self, u64)> {
        let bad = || Error::InvalidConfig(format!("malformed synthetic image spec {spec:?}"));
        let mut fields = BTreeMap::new();
        for part in spec.split(';') {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            fields.insert(k, v);
        }
        let num = |k: &str| fields.get(k).ok_or_else(bad);
        let side = num("side")?.parse().map_err(|_| bad())?;
        let grid = num("grid")?.parse().map_err(|_| bad())?;
        let noise = num("noise")?.parse().map_err(|_| bad())?;
        let seed = num("seed")?.parse().map_err(|_| bad())?;
        let mut regions = BTreeMap::new();
        for item in num("regions")?.split('/').filter(|s| !s.is_empty()) {
            let (code, rect) = item.split_once('@').ok_or_else(bad)?;
            let v: Vec<usize> = rect
                .split(',')
                .map(|x| x.parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            if v.len() != 4 {
                return Err(bad());
            }
            regions.insert(
                code.parse().map_err(|_| bad())?,
                Region::new(v[0], v[1], v[2], v[3]),
            );
        }
        if fields.len() != 5 {
            return Err(bad());
        }
        let render = Self {
            side,
            grid,
            noise,
            regions,
        };
        render.validate()?;
        Ok((render, seed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub count: usize,
    pub seed: u64,
    /// Marginal proportions of NoPain / Mild / Obvious.
    pub mixture: Vec<f64>,
    /// Activation probability of rendered AUs that do not drive the label.
    pub background_rate: f64,
    pub subjects: usize,
    pub label_rule: LabelRule,
    pub frame_prefix: String,
    pub modeled_aus: ModeledAuSet,
    pub render: RenderSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 2000,
            seed: 7,
            mixture: vec![0.82, 0.15, 0.03],
            background_rate: 0.3,
            subjects: 25,
            label_rule: LabelRule::Pspi,
            frame_prefix: "syn".into(),
            modeled_aus: ModeledAuSet::default(),
            render: RenderSpec::default(),
        }
    }
}

impl SynthConfig {
    pub fn rendered_aus(&self) -> Vec<u8> {
        let mut v: Vec<u8> = self.modeled_aus.codes().to_vec();
        v.extend(EXTRA_RENDERED_AUS);
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        let rendered = self.rendered_aus();
        let with_regions: Vec<u8> = self.render.regions.keys().copied().collect();
        if with_regions != rendered {
            return Err(Error::InvalidConfig(format!(
                "regions cover {with_regions:?}, rendered AU set is {rendered:?}"
            )));
        }
        if self.mixture.len() != 3
            || self.mixture.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || (self.mixture.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidConfig(format!(
                "mixture {:?} must be three nonnegative proportions summing to 1",
                self.mixture
            )));
        }
        if !(0.0..=1.0).contains(&self.background_rate) {
            return Err(Error::InvalidConfig(
                "background_rate must lie in [0, 1]".into(),
            ));
        }
        if self.subjects == 0 {
            return Err(Error::InvalidConfig("subjects must be >= 1".into()));
        }
        if self.label_rule == LabelRule::CoOccurrence {
            for (a, b) in CO_OCCURRENCE_PAIRS {
                if self.modeled_aus.position(a).is_none() || self.modeled_aus.position(b).is_none()
                {
                    return Err(Error::InvalidConfig(format!(
                        "co-occurrence pair AU{a}/AU{b} is not in the modeled set"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// RGB pattern of an AU at local pixel (x, y); each channel in [0, 1], peak 1.
fn pattern(code: u8, x: usize, y: usize) -> [f32; 3] {
    let (texture, color): (u8, [f32; 3]) = match code {
        1 => (0, [1.0, 0.0, 0.0]),
        2 => (1, [0.0, 1.0, 0.0]),
        4 => (2, [0.0, 0.0, 1.0]),
        6 => (3, [1.0, 1.0, 0.0]),
        7 => (0, [0.0, 1.0, 1.0]),
        9 => (1, [1.0, 0.0, 1.0]),
        10 => (2, [1.0, 1.0, 1.0]),
        12 => (3, [1.0, 0.0, 0.0]),
        25 => (4, [0.0, 1.0, 0.0]),
        26 => (0, [1.0, 0.0, 1.0]),
        _ => (4, [1.0, 1.0, 1.0]),
    };
    let on = match texture {
        0 => true,
        1 => (y / 2).is_multiple_of(2),
        2 => (x / 2).is_multiple_of(2),
        3 => ((x / 2) + (y / 2)).is_multiple_of(2),
        _ => ((x + y) / 2).is_multiple_of(2),
    };
    if on {
        color
    } else {
        [0.0; 3]
    }
}

/// Renders one HWC frame with values in [0, 1].
pub fn render_frame(
    spec: &RenderSpec,
    seed: u64,
    frame_id: &str,
    au: &AuIntensityMap,
) -> Result<Array3<f32>> {
    let side = spec.side;
    let cell = side / spec.grid;
    let mut img = Array3::<f32>::zeros((side, side, 3));
    for (&code, region) in &spec.regions {
        let intensity = au.get(code).unwrap_or(0);
        if intensity == 0 {
            continue;
        }
        let scale = intensity as f32 / MAX_INTENSITY as f32;
        let (y0, x0) = (region.row * cell, region.col * cell);
        for y in 0..region.rows * cell {
            for x in 0..region.cols * cell {
                let rgb = pattern(code, x, y);
                for c in 0..3 {
                    img[[y0 + y, x0 + x, c]] = scale * rgb[c];
                }
            }
        }
    }
    if spec.noise > 0.0 {
        let normal =
            Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut rng = derive_rng(seed, &["noise", frame_id]);
        for v in img.iter_mut() {
            *v += normal.sample(&mut rng) as f32;
        }
    }
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(img)
}

fn sample_category<R: Rng>(rng: &mut R, mixture: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in mixture.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding at the top end; pick the last category with nonzero mass
    mixture.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

fn random_intensity<R: Rng>(rng: &mut R, code: u8) -> i64 {
    rng.random_range(1..=max_intensity(code) as i64)
}

/// Splits a pair maximum between its two AUs: one carries it, the other is at most it.
fn split_max<R: Rng>(rng: &mut R, m: i64) -> (i64, i64) {
    let other = rng.random_range(0..=m);
    if rng.random_bool(0.5) {
        (m, other)
    } else {
        (other, m)
    }
}

fn sample_pspi_aus<R: Rng>(
    rng: &mut R,
    category: usize,
    cfg: &SynthConfig,
) -> Result<AuIntensityMap> {
    let target: i64 = match category {
        0 => 0,
        1 => rng.random_range(1..=4),
        _ => rng.random_range(5..=16),
    };
    let mut combos = Vec::new();
    for brow in 0..=5 {
        for orbit in 0..=5 {
            for levator in 0..=5 {
                for eyes in 0..=1 {
                    if brow + orbit + levator + eyes == target {
                        combos.push((brow, orbit, levator, eyes));
                    }
                }
            }
        }
    }
    let &(brow, orbit, levator, eyes) = combos.choose(rng).expect("every PSPI value is reachable");
    let (au6, au7) = split_max(rng, orbit);
    let (au9, au10) = split_max(rng, levator);
    let mut aus = AuIntensityMap::from_pairs([
        (4, brow),
        (6, au6),
        (7, au7),
        (9, au9),
        (10, au10),
        (AU_EYES_CLOSED, eyes),
    ])?;
    for code in cfg.rendered_aus() {
        if aus.get(code).is_none() {
            let v = if rng.random_bool(cfg.background_rate) {
                random_intensity(rng, code)
            } else {
                0
            };
            aus.set(code, v)?;
        }
    }
    Ok(aus)
}

/// Returns the intensities and the number of fully active pairs.
fn sample_co_occurrence_aus<R: Rng>(
    rng: &mut R,
    category: usize,
    cfg: &SynthConfig,
) -> Result<(AuIntensityMap, usize)> {
    let complete = match category {
        0 => 0,
        1 => 1,
        _ => rng.random_range(2..=CO_OCCURRENCE_PAIRS.len()),
    };
    let mut order: Vec<usize> = (0..CO_OCCURRENCE_PAIRS.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut aus = AuIntensityMap::new();
    for (rank, &p) in order.iter().enumerate() {
        let (a, b) = CO_OCCURRENCE_PAIRS[p];
        if rank < complete {
            aus.set(a, random_intensity(rng, a))?;
            aus.set(b, random_intensity(rng, b))?;
        } else {
            // incomplete pair: at most one member active
            let (va, vb) = match rng.random_range(0..3) {
                0 => (0, 0),
                1 => (random_intensity(rng, a), 0),
                _ => (0, random_intensity(rng, b)),
            };
            aus.set(a, va)?;
            aus.set(b, vb)?;
        }
    }
    for code in cfg.rendered_aus() {
        if aus.get(code).is_none() {
            let v = if rng.random_bool(cfg.background_rate) {
                random_intensity(rng, code)
            } else {
                0
            };
            aus.set(code, v)?;
        }
    }
    Ok((aus, complete))
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub manifest: DatasetManifest,
    pub images: ImageStore,
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let uri = cfg.render.to_uri(cfg.seed);
    let mut records = Vec::with_capacity(cfg.count);
    let mut images = ImageStore::new();
    for i in 0..cfg.count {
        let frame_id = format!("{}{i:06}", cfg.frame_prefix);
        let subject_id = format!(
            "{}S{:02}",
            cfg.frame_prefix,
            i * cfg.subjects / cfg.count.max(1)
        );
        let mut rng = derive_rng(cfg.seed, &["labels", &frame_id]);
        let category = sample_category(&mut rng, &cfg.mixture);
        let mut record = match cfg.label_rule {
            LabelRule::Pspi => {
                let aus = sample_pspi_aus(&mut rng, category, cfg)?;
                FrameRecord::from_intensities(&frame_id, subject_id, &uri, aus, &cfg.modeled_aus)?
            }
            LabelRule::CoOccurrence => {
                let (aus, complete) = sample_co_occurrence_aus(&mut rng, category, cfg)?;
                let mut r = FrameRecord::from_intensities(
                    &frame_id,
                    subject_id,
                    &uri,
                    aus,
                    &cfg.modeled_aus,
                )?;
                r.label3 = PainCategory3::ALL[category];
                r.label4 = PainCategory4::ALL[complete];
                r
            }
        };
        let img = render_frame(&cfg.render, cfg.seed, &frame_id, &record.au)?;
        images.insert(frame_id.clone(), FrameImage::from_unit_array(&img)?);
        record.image_ref = uri.clone();
        records.push(record);
    }
    let provenance = Provenance {
        source: "synthetic".into(),
        label_rule: cfg.label_rule,
        steps: vec![ProvenanceStep::Synthesized {
            seed: cfg.seed,
            count: cfg.count,
        }],
        image_root: None,
    };
    let manifest = DatasetManifest::new(records, cfg.modeled_aus.clone(), provenance)?;
    Ok(SynthDataset { manifest, images })
}
