//! Candidate pixels, their base features and the stochastic feature source.
//!
//! A [`FeaturePool`] holds one row of base features per pixel, grouped
//! contiguously by image. Ground-truth labels are stored alongside but are only
//! reachable through an [`AnnotationOracle`], which is what the active-learning
//! loop uses to "annotate" a pixel once it has been selected.
//!
//! [`FeatureProvider`] stands in for a stochastic feature extractor: each
//! `(experiment seed, pixel, sample index)` triple maps to one reproducible
//! feature draw.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Domain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PixelRef {
    pub image_id: u32,
    pub row: u32,
    pub col: u32,
}

/// Declared extents of a pool: image count, image size and class count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolShape {
    pub n_images: usize,
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePool {
    shape: PoolShape,
    pixels: Vec<PixelRef>,
    features: Array2<f64>,
    labels: Vec<Option<u16>>,
    image_ranges: Vec<Range<usize>>,
}

impl FeaturePool {
    /// Builds a pool, checking every structural invariant.
    ///
    /// Pixels of one image must be contiguous in `pixels`; the row order is the
    /// pixel index used everywhere else.
    pub fn new(
        shape: PoolShape,
        pixels: Vec<PixelRef>,
        features: Array2<f64>,
        labels: Vec<Option<u16>>,
    ) -> Result<Self> {
        if features.ncols() == 0 {
            return Err(Error::Format("feature dimension must be positive".into()));
        }
        if shape.n_classes < 2 {
            return Err(Error::Format(format!(
                "need at least 2 classes, got {}",
                shape.n_classes
            )));
        }
        if shape.n_images == 0 || shape.height == 0 || shape.width == 0 {
            return Err(Error::Format(
                "image count and image size must be positive".into(),
            ));
        }
        if features.nrows() != pixels.len() || labels.len() != pixels.len() {
            return Err(Error::Format(format!(
                "{} pixels but {} feature rows and {} labels",
                pixels.len(),
                features.nrows(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite feature value".into()));
        }

        let mut seen = HashSet::with_capacity(pixels.len());
        for (i, p) in pixels.iter().enumerate() {
            if p.image_id as usize >= shape.n_images
                || p.row as usize >= shape.height
                || p.col as usize >= shape.width
            {
                return Err(Error::Format(format!(
                    "pixel {i} at ({}, {}, {}) lies outside {}x{}x{}",
                    p.image_id, p.row, p.col, shape.n_images, shape.height, shape.width
                )));
            }
            if !seen.insert(*p) {
                return Err(Error::Format(format!(
                    "duplicate pixel ({}, {}, {}) at row {i}",
                    p.image_id, p.row, p.col
                )));
            }
        }
        for (i, l) in labels.iter().enumerate() {
            if let Some(c) = l {
                if *c as usize >= shape.n_classes {
                    return Err(Error::Format(format!(
                        "pixel {i} has label {c} but only {} classes",
                        shape.n_classes
                    )));
                }
            }
        }

        let image_ranges = contiguous_ranges(&pixels, shape.n_images)?;
        Ok(FeaturePool {
            shape,
            pixels,
            features,
            labels,
            image_ranges,
        })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn shape(&self) -> PoolShape {
        self.shape
    }

    pub fn n_classes(&self) -> usize {
        self.shape.n_classes
    }

    pub fn n_images(&self) -> usize {
        self.shape.n_images
    }

    pub fn pixels(&self) -> &[PixelRef] {
        &self.pixels
    }

    pub fn pixel(&self, index: usize) -> PixelRef {
        self.pixels[index]
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn feature(&self, index: usize) -> ArrayView1<'_, f64> {
        self.features.row(index)
    }

    /// Pixel-index range of one image. Empty for images with no pixels.
    pub fn image_range(&self, image_id: usize) -> Range<usize> {
        self.image_ranges[image_id].clone()
    }

    pub fn image_ranges(&self) -> &[Range<usize>] {
        &self.image_ranges
    }

    pub fn annotation_oracle(&self) -> AnnotationOracle<'_> {
        AnnotationOracle {
            labels: &self.labels,
        }
    }

    /// Indices of pixels whose ground truth is known, in pool order.
    pub fn annotated_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i].is_some())
            .collect()
    }

    pub fn median_feature_norm(&self) -> f64 {
        let mut norms: Vec<f64> = self
            .features
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        median(&mut norms)
    }

    /// Writes the pool in the whitespace-separated text format read by
    /// [`read_features`].
    pub fn write_features<W: Write>(&self, mut out: W) -> Result<()> {
        let s = self.shape;
        writeln!(
            out,
            "{} {} {} {} {}",
            s.n_images,
            s.height,
            s.width,
            self.dim(),
            s.n_classes
        )?;
        for (i, p) in self.pixels.iter().enumerate() {
            let label = self.labels[i].map_or(-1, i64::from);
            write!(out, "{} {} {} {}", p.image_id, p.row, p.col, label)?;
            for v in self.features.row(i) {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn export_features(&self, path: &Path) -> Result<()> {
        self.write_features(BufWriter::new(File::create(path)?))
    }
}

fn contiguous_ranges(pixels: &[PixelRef], n_images: usize) -> Result<Vec<Range<usize>>> {
    let mut ranges: Vec<Option<Range<usize>>> = vec![None; n_images];
    let mut start = 0;
    for i in 1..=pixels.len() {
        if i == pixels.len() || pixels[i].image_id != pixels[start].image_id {
            let id = pixels[start].image_id as usize;
            if ranges[id].is_some() {
                return Err(Error::Format(format!(
                    "pixels of image {id} are not contiguous"
                )));
            }
            ranges[id] = Some(start..i);
            start = i;
        }
    }
    // Images without pixels get an empty range at the position they would occupy.
    let mut out = Vec::with_capacity(n_images);
    let mut cursor = 0;
    for r in ranges {
        match r {
            Some(r) => {
                cursor = r.end;
                out.push(r);
            }
            None => out.push(cursor..cursor),
        }
    }
    Ok(out)
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Ground-truth access for annotation and evaluation only.
#[derive(Clone, Copy, Debug)]
pub struct AnnotationOracle<'a> {
    labels: &'a [Option<u16>],
}

impl AnnotationOracle<'_> {
    /// Reveals the label of `pixel`; `None` when the pool has no ground truth for it.
    pub fn annotate(&self, pixel: usize) -> Option<u16> {
        self.labels[pixel]
    }
}

fn parse_num<T: FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::Format(format!("line {line}: cannot parse {what} from {tok:?}")))
}

/// Reads a feature file: a header `N H W D C`, then one
/// `image_id row col label f_1 .. f_D` record per pixel (`label = -1` when unknown).
pub fn read_features<R: BufRead>(input: R) -> Result<FeaturePool> {
    let mut lines = input.lines().enumerate();
    let (header_no, header) = loop {
        match lines.next() {
            Some((i, line)) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break (i + 1, line);
                }
            }
            None => return Err(Error::Format("empty feature file".into())),
        }
    };
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 5 {
        return Err(Error::Format(format!(
            "line {header_no}: header needs 5 integers `N H W D C`, found {}",
            head.len()
        )));
    }
    let n: usize = parse_num(head[0], header_no, "N")?;
    let h: usize = parse_num(head[1], header_no, "H")?;
    let w: usize = parse_num(head[2], header_no, "W")?;
    let d: usize = parse_num(head[3], header_no, "D")?;
    let c: usize = parse_num(head[4], header_no, "C")?;
    if d == 0 {
        return Err(Error::Format("header declares D = 0".into()));
    }

    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let line_no = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 4 + d {
            return Err(Error::Format(format!(
                "line {line_no}: expected {} values (4 + D = {d}), found {}",
                4 + d,
                toks.len()
            )));
        }
        pixels.push(PixelRef {
            image_id: parse_num(toks[0], line_no, "image_id")?,
            row: parse_num(toks[1], line_no, "row")?,
            col: parse_num(toks[2], line_no, "col")?,
        });
        let label: i64 = parse_num(toks[3], line_no, "label")?;
        labels.push(match label {
            -1 => None,
            l if l >= 0 && (l as usize) < c => Some(l as u16),
            l => {
                return Err(Error::Format(format!(
                    "line {line_no}: label {l} outside [0, {c}) and not -1"
                )))
            }
        });
        for t in &toks[4..] {
            values.push(parse_num::<f64>(t, line_no, "feature")?);
        }
    }
    let rows = pixels.len();
    let features = Array2::from_shape_vec((rows, d), values)
        .map_err(|e| Error::Format(format!("feature matrix: {e}")))?;
    FeaturePool::new(
        PoolShape {
            n_images: n,
            height: h,
            width: w,
            n_classes: c,
        },
        pixels,
        features,
        labels,
    )
}

pub fn import_features(path: &Path) -> Result<FeaturePool> {
    read_features(BufReader::new(File::open(path)?))
}

/// Stored feature draws for replay, keyed by `(pixel index, sample index)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplaySamples {
    dim: usize,
    samples: BTreeMap<(usize, usize), Vec<f64>>,
}

impl ReplaySamples {
    pub fn new(dim: usize) -> Self {
        ReplaySamples {
            dim,
            samples: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn insert(&mut self, pixel: usize, sample_index: usize, feature: Vec<f64>) -> Result<()> {
        if feature.len() != self.dim {
            return Err(Error::Format(format!(
                "sample ({pixel}, {sample_index}) has {} values, expected {}",
                feature.len(),
                self.dim
            )));
        }
        if self
            .samples
            .insert((pixel, sample_index), feature)
            .is_some()
        {
            return Err(Error::Format(format!(
                "duplicate sample ({pixel}, {sample_index})"
            )));
        }
        Ok(())
    }

    pub fn get(&self, pixel: usize, sample_index: usize) -> Option<&[f64]> {
        self.samples.get(&(pixel, sample_index)).map(Vec::as_slice)
    }

    pub fn stored_for(&self, pixel: usize) -> usize {
        self.samples.range((pixel, 0)..=(pixel, usize::MAX)).count()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Reads `pixel_index sample_index f_1 .. f_D` records.
    pub fn read<R: BufRead>(input: R, dim: usize) -> Result<Self> {
        let mut out = ReplaySamples::new(dim);
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.is_empty() {
                continue;
            }
            if toks.len() != 2 + dim {
                return Err(Error::Format(format!(
                    "samples line {}: expected {} values, found {}",
                    i + 1,
                    2 + dim,
                    toks.len()
                )));
            }
            let pixel = parse_num(toks[0], i + 1, "pixel_index")?;
            let sample = parse_num(toks[1], i + 1, "sample_index")?;
            let f = toks[2..]
                .iter()
                .map(|t| parse_num::<f64>(t, i + 1, "feature"))
                .collect::<Result<Vec<_>>>()?;
            out.insert(pixel, sample, f)?;
        }
        Ok(out)
    }

    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?), dim)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for ((p, s), f) in &self.samples {
            write!(out, "{p} {s}")?;
            for v in f {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Source of stochastic feature draws for a pixel.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureProvider {
    /// Every draw is the base feature.
    Deterministic,
    /// Base feature plus isotropic Gaussian noise with standard deviation `eta`.
    Gaussian { eta: f64 },
    /// Draws read back from a samples file.
    Replay(ReplaySamples),
}

/// Default noise scale as a fraction of the pool's median feature norm.
pub const DEFAULT_NOISE_FRACTION: f64 = 0.1;

impl FeatureProvider {
    pub fn gaussian(eta: f64) -> Result<Self> {
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::Config(format!(
                "noise scale must be finite and >= 0, got {eta}"
            )));
        }
        Ok(FeatureProvider::Gaussian { eta })
    }

    pub fn gaussian_default(pool: &FeaturePool) -> Self {
        FeatureProvider::Gaussian {
            eta: DEFAULT_NOISE_FRACTION * pool.median_feature_norm(),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(
            self,
            FeatureProvider::Deterministic | FeatureProvider::Gaussian { eta: 0.0 }
        )
    }

    /// One draw for `(seed, pixel, sample_index)`.
    pub fn sample(
        &self,
        pool: &FeaturePool,
        pixel: usize,
        sample_index: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        if pixel >= pool.len() {
            return Err(Error::Contract(format!(
                "pixel {pixel} outside pool of {}",
                pool.len()
            )));
        }
        let base = pool.feature(pixel);
        match self {
            FeatureProvider::Deterministic => Ok(base.to_vec()),
            FeatureProvider::Gaussian { eta } if *eta == 0.0 => Ok(base.to_vec()),
            FeatureProvider::Gaussian { eta } => {
                let mut rng = seed::rng_from(seed::stream_seed(seed, pixel, sample_index));
                Ok(base
                    .iter()
                    .map(|b| {
                        let z: f64 = rng.sample(StandardNormal);
                        b + eta * z
                    })
                    .collect())
            }
            FeatureProvider::Replay(store) => {
                if store.dim() != pool.dim() {
                    return Err(Error::Format(format!(
                        "replay samples have dimension {}, pool has {}",
                        store.dim(),
                        pool.dim()
                    )));
                }
                store
                    .get(pixel, sample_index)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::InsufficientSamples {
                        pixel,
                        requested: sample_index,
                        stored: store.stored_for(pixel),
                    })
            }
        }
    }

    /// `count` draws using sample indices `1..=count`. Index 0 is reserved for
    /// the independent draw used by entropy-augmented scores.
    pub fn sample_features(
        &self,
        pool: &FeaturePool,
        pixel: usize,
        count: usize,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        if count == 0 {
            return Err(Error::Contract("sample count must be at least 1".into()));
        }
        (1..=count)
            .map(|m| self.sample(pool, pixel, m, seed))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelGeometry {
    Voronoi,
    Stripes,
    Blobs,
}

impl FromStr for LabelGeometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "voronoi" => Ok(LabelGeometry::Voronoi),
            "stripes" => Ok(LabelGeometry::Stripes),
            "blobs" => Ok(LabelGeometry::Blobs),
            other => Err(Error::Config(format!("unknown label geometry {other:?}"))),
        }
    }
}

impl fmt::Display for LabelGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelGeometry::Voronoi => "voronoi",
            LabelGeometry::Stripes => "stripes",
            LabelGeometry::Blobs => "blobs",
        })
    }
}

/// Parameters of a synthetic segmentation task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub n_images: usize,
    pub image_side: usize,
    pub n_classes: usize,
    pub cluster_spread: f64,
    pub feature_dim: usize,
    pub label_geometry: LabelGeometry,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            n_images: 4,
            image_side: 64,
            n_classes: 4,
            cluster_spread: 1.0,
            feature_dim: 8,
            label_geometry: LabelGeometry::Voronoi,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_images == 0 || self.image_side == 0 || self.feature_dim == 0 {
            return Err(Error::Config(
                "synthetic task needs positive image count, image side and feature dimension"
                    .into(),
            ));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "synthetic task needs at least 2 classes, got {}",
                self.n_classes
            )));
        }
        if self.n_classes > u16::MAX as usize {
            return Err(Error::Config("too many classes".into()));
        }
        if !(self.cluster_spread.is_finite() && self.cluster_spread > 0.0) {
            return Err(Error::Config(format!(
                "cluster spread must be positive, got {}",
                self.cluster_spread
            )));
        }
        if self.n_images * self.image_side * self.image_side < self.n_classes {
            return Err(Error::Config(
                "fewer pixels than classes; not every class can appear".into(),
            ));
        }
        Ok(())
    }
}

/// Accepts `key=value` pairs separated by commas, e.g.
/// `images=4,side=64,classes=4,dim=8,spread=1.0,geometry=voronoi`.
impl FromStr for SyntheticTaskSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = SyntheticTaskSpec::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {part:?}")))?;
            let bad = |_| Error::Config(format!("bad value for {k}: {v:?}"));
            match k.trim() {
                "images" | "n_images" => spec.n_images = v.trim().parse().map_err(bad)?,
                "side" | "image_side" => spec.image_side = v.trim().parse().map_err(bad)?,
                "classes" | "n_classes" => spec.n_classes = v.trim().parse().map_err(bad)?,
                "dim" | "feature_dim" => spec.feature_dim = v.trim().parse().map_err(bad)?,
                "spread" | "cluster_spread" => {
                    spec.cluster_spread = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad value for {k}: {v:?}")))?
                }
                "geometry" | "label_geometry" => spec.label_geometry = v.parse()?,
                other => return Err(Error::Config(format!("unknown synthetic key {other:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Class centers sit `CENTER_SEPARATION * spread` apart (or more).
pub const CENTER_SEPARATION: f64 = 3.0;
/// Per-image appearance shift, as a multiple of the cluster spread.
pub const IMAGE_SHIFT: f64 = 0.5;

/// Per-class feature centers: class `c` lives on axis `c mod D` at distance
/// `(1 + c / D) * sep` from the origin with a seeded sign. Any two centers are
/// at least `sep` apart.
pub fn class_centers(spec: &SyntheticTaskSpec, seed: u64) -> Vec<Vec<f64>> {
    let sep = CENTER_SEPARATION * spec.cluster_spread;
    let mut rng = seed::rng(Domain::Synthetic, &[seed, 0]);
    (0..spec.n_classes)
        .map(|c| {
            let axis = c % spec.feature_dim;
            let k = (1 + c / spec.feature_dim) as f64;
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let mut v = vec![0.0; spec.feature_dim];
            v[axis] = sign * k * sep;
            v
        })
        .collect()
}

fn image_labels(spec: &SyntheticTaskSpec, rng: &mut seed::StreamRng) -> Vec<u16> {
    let side = spec.image_side;
    let c = spec.n_classes;
    let mut labels = vec![0u16; side * side];
    match spec.label_geometry {
        LabelGeometry::Voronoi => {
            let n_seeds = (c + rng.random_range(0..=c)).min(side * side);
            let mut cells: Vec<usize> = (0..side * side).collect();
            cells.shuffle(rng);
            let mut classes: Vec<u16> = (0..c as u16).collect();
            classes.shuffle(rng);
            let seeds: Vec<(usize, usize, u16)> = (0..n_seeds)
                .map(|j| {
                    let class = if j < c {
                        classes[j]
                    } else {
                        rng.random_range(0..c) as u16
                    };
                    (cells[j] / side, cells[j] % side, class)
                })
                .collect();
            for r in 0..side {
                for col in 0..side {
                    let mut best = (usize::MAX, 0u16);
                    for &(sr, sc, class) in &seeds {
                        let d = sr.abs_diff(r).pow(2) + sc.abs_diff(col).pow(2);
                        if d < best.0 {
                            best = (d, class);
                        }
                    }
                    labels[r * side + col] = best.1;
                }
            }
        }
        LabelGeometry::Stripes => {
            let horizontal = rng.random::<bool>();
            let width = (side / (c + rng.random_range(0..c))).max(1);
            let offset = rng.random_range(0..c);
            for r in 0..side {
                for col in 0..side {
                    let coord = if horizontal { r } else { col };
                    labels[r * side + col] = ((coord / width + offset) % c) as u16;
                }
            }
        }
        LabelGeometry::Blobs => {
            let background = rng.random_range(0..c);
            labels.fill(background as u16);
            let n_blobs = c + rng.random_range(0..c);
            let r_lo = (side / 8).max(1);
            let r_hi = (side / 4).max(r_lo);
            for j in 0..n_blobs {
                let class = (background + 1 + j % (c - 1)) % c;
                let cr = rng.random_range(0..side) as f64;
                let cc = rng.random_range(0..side) as f64;
                let radius = rng.random_range(r_lo..=r_hi) as f64;
                for r in 0..side {
                    for col in 0..side {
                        let d2 = (r as f64 - cr).powi(2) + (col as f64 - cc).powi(2);
                        if d2 <= radius * radius {
                            labels[r * side + col] = class as u16;
                        }
                    }
                }
            }
        }
    }
    labels
}

/// Generates a labelled synthetic pool.
///
/// Labels follow the chosen spatial geometry inside each image. A pixel's
/// feature is its class center plus a per-image shift plus isotropic noise of
/// scale `cluster_spread`. Every class appears at least once.
pub fn generate_synthetic(spec: &SyntheticTaskSpec, seed: u64) -> Result<FeaturePool> {
    spec.validate()?;
    let side = spec.image_side;
    let per_image = side * side;
    let total = spec.n_images * per_image;

    let mut labels: Vec<u16> = Vec::with_capacity(total);
    for image in 0..spec.n_images {
        let mut rng = seed::rng(Domain::Synthetic, &[seed, 1, image as u64]);
        labels.extend(image_labels(spec, &mut rng));
    }

    // Guarantee every class is present by recoloring pixels of the largest class.
    let mut counts = vec![0usize; spec.n_classes];
    for &l in &labels {
        counts[l as usize] += 1;
    }
    for missing in 0..spec.n_classes {
        if counts[missing] > 0 {
            continue;
        }
        let donor = (0..spec.n_classes)
            .max_by_key(|&c| (counts[c], usize::MAX - c))
            .unwrap();
        let pos = labels.iter().position(|&l| l as usize == donor).unwrap();
        labels[pos] = missing as u16;
        counts[donor] -= 1;
        counts[missing] += 1;
    }

    let centers = class_centers(spec, seed);
    let d = spec.feature_dim;
    let mut features = Array2::<f64>::zeros((total, d));
    let mut pixels = Vec::with_capacity(total);
    for image in 0..spec.n_images {
        let mut rng = seed::rng(Domain::Synthetic, &[seed, 2, image as u64]);
        let shift: Vec<f64> = (0..d)
            .map(|_| IMAGE_SHIFT * spec.cluster_spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        for r in 0..side {
            for col in 0..side {
                let i = image * per_image + r * side + col;
                pixels.push(PixelRef {
                    image_id: image as u32,
                    row: r as u32,
                    col: col as u32,
                });
                let center = &centers[labels[i] as usize];
                for k in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    features[[i, k]] = center[k] + shift[k] + spec.cluster_spread * z;
                }
            }
        }
    }

    FeaturePool::new(
        PoolShape {
            n_images: spec.n_images,
            height: side,
            width: side,
            n_classes: spec.n_classes,
        },
        pixels,
        features,
        labels.into_iter().map(Some).collect(),
    )
}
