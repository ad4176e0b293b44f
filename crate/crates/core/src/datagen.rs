//! Procedural landmark datasets.
//!
//! Each landmark has its own shape so the network can tell channels apart.
//! Distractors share the landmark rendering but use a separate shape and are
//! never annotated. Annotations are the true centres plus per-landmark
//! Gaussian jitter, which emulates inconsistent human labelling.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::targets::{LandmarkSet, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeTag {
    Disc,
    Ring,
    Cross,
    Square,
    Diamond,
    /// Soft Gaussian blob with no hard edge.
    Blob,
}

impl ShapeTag {
    /// Coverage in `[0, 1]` of a pixel at offset `(dr, dc)` from the centre.
    fn coverage(self, dr: f64, dc: f64, radius: f64) -> f64 {
        // one-pixel linear ramp on hard edges
        let edge = |signed: f64| (0.5 - signed).clamp(0.0, 1.0);
        match self {
            ShapeTag::Disc => edge(dr.hypot(dc) - radius),
            ShapeTag::Ring => {
                let d = dr.hypot(dc);
                edge((d - radius).abs() - 0.75)
            }
            ShapeTag::Cross => {
                let arm = radius.max(1.0);
                let horizontal = edge(dr.abs() - 0.75).min(edge(dc.abs() - arm));
                let vertical = edge(dc.abs() - 0.75).min(edge(dr.abs() - arm));
                horizontal.max(vertical)
            }
            ShapeTag::Square => edge(dr.abs().max(dc.abs()) - radius),
            ShapeTag::Diamond => edge(dr.abs() + dc.abs() - radius),
            ShapeTag::Blob => (-(dr * dr + dc * dc) / (2.0 * radius * radius)).exp(),
        }
    }

    fn extent(self, radius: f64) -> f64 {
        match self {
            ShapeTag::Blob => 3.0 * radius,
            ShapeTag::Ring => radius + 1.5,
            _ => radius + 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub shape: ShapeTag,
    pub radius: f64,
    pub intensity: f64,
    /// Annotation jitter standard deviation, pixels per axis.
    #[serde(default)]
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub landmarks: Vec<Appearance>,
    /// Inclusive range of instances per landmark.
    pub instances: (usize, usize),
    pub distractors: usize,
    pub distractor: Appearance,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    /// Minimum centre-to-centre distance between any two placed objects.
    pub min_separation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            landmarks: vec![Appearance {
                shape: ShapeTag::Cross,
                radius: 3.0,
                intensity: 1.0,
                jitter: 0.0,
            }],
            instances: (1, 1),
            distractors: 2,
            distractor: Appearance {
                shape: ShapeTag::Square,
                radius: 2.0,
                intensity: 1.0,
                jitter: 0.0,
            },
            noise: 0.1,
            min_separation: 8.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Five distinct landmarks with the given per-landmark jitter.
    pub fn mixed_difficulty(jitters: &[f64], seed: u64) -> Self {
        let shapes = [
            ShapeTag::Cross,
            ShapeTag::Disc,
            ShapeTag::Ring,
            ShapeTag::Diamond,
            ShapeTag::Blob,
        ];
        Self {
            landmarks: jitters
                .iter()
                .enumerate()
                .map(|(i, &jitter)| Appearance {
                    shape: shapes[i % shapes.len()],
                    radius: if shapes[i % shapes.len()] == ShapeTag::Blob { 1.5 } else { 3.0 },
                    intensity: 1.0,
                    jitter,
                })
                .collect(),
            distractors: 0,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(Error::invalid("synthetic resolution must be at least 16"));
        }
        if self.landmarks.is_empty() {
            return Err(Error::invalid("at least one landmark is required"));
        }
        if self.instances.0 > self.instances.1 {
            return Err(Error::invalid("instance range is inverted"));
        }
        for a in self.landmarks.iter().chain([&self.distractor]) {
            if !(a.jitter >= 0.0) || !(a.radius > 0.0) || !a.intensity.is_finite() {
                return Err(Error::invalid(format!("invalid appearance {a:?}")));
            }
        }
        if !(self.noise >= 0.0) || !(self.min_separation >= 0.0) {
            return Err(Error::invalid("noise and separation must be non-negative"));
        }
        Ok(())
    }

    pub fn is_multi_instance(&self) -> bool {
        self.instances != (1, 1)
    }
}

/// Which partition a sample belongs to; each draws from its own RNG stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Validation => 2,
            Split::Test => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `(1, H, W)` grayscale image.
    pub image: Tensor,
    pub truth: LandmarkSet,
    pub annotation: LandmarkSet,
}

fn sample_rng(seed: u64, split: Split, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split.stream() << 40) | index as u64);
    rng
}

const PLACEMENT_ATTEMPTS: usize = 2000;

/// Generates sample `index` of `split`; a pure function of its arguments.
pub fn generate_sample(cfg: &SynthConfig, split: Split, index: usize) -> Result<Sample> {
    cfg.validate()?;
    let mut rng = sample_rng(cfg.seed, split, index);
    let (h, w) = (cfg.height, cfg.width);

    let counts: Vec<usize> = cfg
        .landmarks
        .iter()
        .map(|_| rng.random_range(cfg.instances.0..=cfg.instances.1))
        .collect();
    let mut placed: Vec<(Point, &Appearance)> = Vec::new();
    let mut truth = vec![Vec::new(); cfg.landmarks.len()];
    let requests = cfg
        .landmarks
        .iter()
        .enumerate()
        .flat_map(|(l, a)| std::iter::repeat_n((Some(l), a), counts[l]))
        .chain(std::iter::repeat_n((None, &cfg.distractor), cfg.distractors));
    for (landmark, appearance) in requests {
        let margin = appearance.shape.extent(appearance.radius).min(h.min(w) as f64 / 2.0 - 1.0);
        let mut found = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let p = Point::new(
                rng.random_range(margin..(h as f64 - 1.0 - margin)),
                rng.random_range(margin..(w as f64 - 1.0 - margin)),
            );
            if placed.iter().all(|(q, _)| q.distance(&p) >= cfg.min_separation) {
                found = Some(p);
                break;
            }
        }
        let p = found.ok_or(Error::InfeasiblePlacement {
            requested: counts.iter().sum::<usize>() + cfg.distractors,
            height: h,
            width: w,
            spacing: cfg.min_separation,
        })?;
        placed.push((p, appearance));
        if let Some(l) = landmark {
            truth[l].push(p);
        }
    }

    let noise = Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let mut image = Tensor::zeros(&[1, h, w]);
    {
        let data = image.data_mut();
        for r in 0..h {
            for c in 0..w {
                let mut v: f64 = 0.0;
                for (p, a) in &placed {
                    let dr = r as f64 - p.row;
                    let dc = c as f64 - p.col;
                    if dr.abs() > a.shape.extent(a.radius) + 1.0 || dc.abs() > a.shape.extent(a.radius) + 1.0 {
                        continue;
                    }
                    v = v.max(a.intensity * a.shape.coverage(dr, dc, a.radius));
                }
                data[r * w + c] = v;
            }
        }
        if cfg.noise > 0.0 {
            for v in data.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
    }

    let mut annotation = truth.clone();
    for (l, instances) in annotation.iter_mut().enumerate() {
        let jitter = cfg.landmarks[l].jitter;
        if jitter == 0.0 {
            continue;
        }
        let normal = Normal::new(0.0, jitter).map_err(|e| Error::invalid(e.to_string()))?;
        for p in instances.iter_mut() {
            p.row = clamp_coord(p.row + normal.sample(&mut rng), h);
            p.col = clamp_coord(p.col + normal.sample(&mut rng), w);
        }
    }

    Ok(Sample {
        image,
        truth: LandmarkSet::new(truth),
        annotation: LandmarkSet::new(annotation),
    })
}

fn clamp_coord(v: f64, extent: usize) -> f64 {
    v.clamp(0.0, extent as f64 - 1.0)
}

/// `n` samples of a split.
pub fn generate_split(cfg: &SynthConfig, split: Split, n: usize) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    (0..n).map(|i| generate_sample(cfg, split, i)).collect()
}

/// Training samples; equivalent to `generate_split(cfg, Split::Train, n)`.
pub fn generate(cfg: &SynthConfig, n: usize) -> Result<Vec<Sample>> {
    generate_split(cfg, Split::Train, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkDifficulty {
    pub landmark: usize,
    pub shape: ShapeTag,
    pub radius: f64,
    pub intensity: f64,
    pub jitter: f64,
    /// 0 = easiest; landmarks with equal jitter share a rank.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyProfile {
    pub landmarks: Vec<LandmarkDifficulty>,
    /// Every landmark has the same appearance and jitter.
    pub uniform: bool,
}

impl DifficultyProfile {
    pub fn harder(&self, a: usize, b: usize) -> bool {
        self.landmarks[a].rank > self.landmarks[b].rank
    }
}

/// Summarizes each landmark's configured difficulty, ranked by annotation jitter.
pub fn difficulty_profile(cfg: &SynthConfig) -> DifficultyProfile {
    let mut levels: Vec<f64> = cfg.landmarks.iter().map(|a| a.jitter).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let landmarks = cfg
        .landmarks
        .iter()
        .enumerate()
        .map(|(landmark, a)| LandmarkDifficulty {
            landmark,
            shape: a.shape,
            radius: a.radius,
            intensity: a.intensity,
            jitter: a.jitter,
            rank: levels.iter().position(|&j| j == a.jitter).unwrap_or(0),
        })
        .collect();
    let uniform = cfg.landmarks.windows(2).all(|w| w[0] == w[1]);
    DifficultyProfile { landmarks, uniform }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: usize,
    pub file: String,
    pub truth: LandmarkSet,
    pub annotation: LandmarkSet,
}

/// JSON index written alongside the raw image blobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub dtype: String,
    pub byte_order: String,
    pub samples: Vec<IndexEntry>,
}

/// Writes `index.json` and one little-endian `f64` blob per image into `dir`.
pub fn export_dataset(samples: &[Sample], dir: &Path) -> Result<()> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("cannot export an empty dataset"))?;
    let [c, h, w] = match first.image.shape() {
        [c, h, w] => [*c, *h, *w],
        s => return Err(Error::invalid(format!("unexpected image shape {s:?}"))),
    };
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (id, s) in samples.iter().enumerate() {
        s.image.check_shape(&[c, h, w])?;
        let file = format!("images/{id:06}.f64");
        let bytes: Vec<u8> = s.image.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(IndexEntry {
            id,
            file,
            truth: s.truth.clone(),
            annotation: s.annotation.clone(),
        });
    }
    let index = DatasetIndex {
        channels: c,
        height: h,
        width: w,
        dtype: "float64".into(),
        byte_order: "little".into(),
        samples: entries,
    };
    let path = dir.join("index.json");
    fs::write(&path, serde_json::to_string_pretty(&index)?).map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let path = dir.join("index.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: DatasetIndex = serde_json::from_str(&text)?;
    let len = index.channels * index.height * index.width;
    index
        .samples
        .into_iter()
        .map(|e| {
            let path = dir.join(&e.file);
            let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
            if bytes.len() != len * 8 {
                return Err(Error::invalid(format!("{}: expected {} bytes", e.file, len * 8)));
            }
            let data = bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            Ok(Sample {
                image: Tensor::from_vec(&[index.channels, index.height, index.width], data)?,
                truth: e.truth,
                annotation: e.annotation,
            })
        })
        .collect()
}
