//! Synthetic ear-CT cases with known landmark positions.
//!
//! Each landmark is the centre of an axis-aligned anisotropic Gaussian blob with
//! its own amplitude. Cases vary by a patient-level rotation about z and
//! isotropic scale, an ear-level translation, and per-landmark jitter, on top
//! of a smooth background and additive Gaussian noise. Left ears are rendered
//! in the right-ear frame and then mirrored along x.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::landmark::{Landmark, LandmarkSet};
use crate::volume::{flip_to_right, Case, Laterality, Volume, VolumeError};

/// Template landmark positions in the right-ear frame, as fractions of dims.
const TEMPLATE: [[f64; 3]; 7] = [
    [0.30, 0.60, 0.45],
    [0.55, 0.30, 0.35],
    [0.28, 0.32, 0.62],
    [0.42, 0.22, 0.70],
    [0.55, 0.65, 0.30],
    [0.78, 0.45, 0.60],
    [0.70, 0.62, 0.45],
];

/// Shape of one structure: per-axis sigma in voxels (at 32×32×16) and peak amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub sigma: [f64; 3],
    pub amplitude: f64,
}

pub const BLOBS: [Blob; 7] = [
    Blob { sigma: [1.6, 1.6, 1.1], amplitude: 900.0 },
    Blob { sigma: [1.2, 2.0, 1.0], amplitude: 1300.0 },
    Blob { sigma: [2.0, 1.2, 1.2], amplitude: 700.0 },
    Blob { sigma: [1.3, 1.3, 0.9], amplitude: 1100.0 },
    Blob { sigma: [1.5, 1.1, 1.3], amplitude: 1500.0 },
    Blob { sigma: [1.1, 1.5, 1.0], amplitude: 1900.0 },
    Blob { sigma: [1.8, 1.4, 0.9], amplitude: 1700.0 },
];

const MIN_SEPARATION: f64 = 3.0;
const MAX_ATTEMPTS: usize = 100;
const BACKGROUND: f64 = -200.0;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("synthetic dims must be at least 16 per axis, got {0:?}")]
    DimsTooSmall([usize; 3]),
    #[error("case {case}: landmarks kept colliding after {attempts} attempts")]
    Collision { case: usize, attempts: usize },
    #[error("left fraction {0} outside [0, 1]")]
    LeftFraction(f64),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_cases: usize,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub seed: u64,
    pub left_fraction: f64,
    pub noise_sigma: f64,
}

impl SynthConfig {
    pub fn new(n_cases: usize, dims: [usize; 3], spacing: [f64; 3], seed: u64) -> Self {
        Self {
            n_cases,
            dims,
            spacing,
            seed,
            left_fraction: 0.575,
            noise_sigma: 25.0,
        }
    }
}

/// Generates `n_cases` cases with the default left/right mix and noise level.
pub fn synth_generate(n_cases: usize, dims: [usize; 3], spacing: [f64; 3], seed: u64) -> Result<Vec<Case>, SynthError> {
    synth_generate_with(&SynthConfig::new(n_cases, dims, spacing, seed))
}

/// Axis scale of sigma and motion relative to the 32×32×16 reference grid.
fn axis_scale(dims: [usize; 3]) -> [f64; 3] {
    [dims[0] as f64 / 32.0, dims[1] as f64 / 32.0, dims[2] as f64 / 16.0]
}

/// Ear-to-patient layout: `ceil(5n/8)` patients, the first `n - patients` of
/// them bilateral. Returns `(patient, laterality)` per ear in generation order.
fn layout(n: usize, left_fraction: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, Laterality)> {
    let patients = (5 * n).div_ceil(8).max(n.min(1));
    let pairs = n - patients;
    let singles = patients - pairs;
    let lefts = (left_fraction * n as f64).round() as usize;
    let single_lefts = lefts.saturating_sub(pairs).min(singles);
    let mut kinds: Vec<usize> = (0..patients).collect();
    // shuffle which patient ids are bilateral
    for i in (1..kinds.len()).rev() {
        let j = rng.random_range(0..=i);
        kinds.swap(i, j);
    }
    let mut ears = Vec::with_capacity(n);
    for (slot, &patient) in kinds.iter().enumerate() {
        if slot < pairs {
            ears.push((patient, Laterality::Right));
            ears.push((patient, Laterality::Left));
        } else if slot - pairs < single_lefts {
            ears.push((patient, Laterality::Left));
        } else {
            ears.push((patient, Laterality::Right));
        }
    }
    ears.sort_by_key(|&(p, l)| (p, l == Laterality::Left));
    ears
}

#[derive(Debug, Clone, Copy)]
struct PatientShape {
    angle: f64,
    scale: f64,
}

fn place_landmarks(
    dims: [usize; 3],
    shape: PatientShape,
    rng: &mut ChaCha8Rng,
) -> Option<LandmarkSet> {
    let sc = axis_scale(dims);
    let jitter = Normal::new(0.0, 0.5).expect("valid sigma");
    let centroid: [f64; 3] = [0, 1, 2].map(|a| TEMPLATE.iter().map(|t| t[a]).sum::<f64>() / 7.0 * dims[a] as f64);
    let shift = [
        rng.random_range(-3.0..3.0) * sc[0],
        rng.random_range(-3.0..3.0) * sc[1],
        rng.random_range(-1.5..1.5) * sc[2],
    ];
    let (sin, cos) = shape.angle.sin_cos();
    let mut coords = [[0.0; 3]; 7];
    for (c, t) in coords.iter_mut().zip(&TEMPLATE) {
        let rel = [0, 1, 2].map(|a| t[a] * dims[a] as f64 - centroid[a]);
        let rot = [cos * rel[0] - sin * rel[1], sin * rel[0] + cos * rel[1], rel[2]];
        for a in 0..3 {
            let v = centroid[a] + shape.scale * rot[a] + shift[a] + jitter.sample(rng) * sc[a];
            c[a] = v.clamp(1.0, dims[a] as f64 - 2.0);
        }
    }
    for i in 0..7 {
        for j in i + 1..7 {
            let d2: f64 = (0..3).map(|a| (coords[i][a] - coords[j][a]).powi(2)).sum();
            if d2.sqrt() < MIN_SEPARATION {
                return None;
            }
        }
    }
    Some(LandmarkSet::new(coords))
}

fn gaussian_1d(n: usize, center: f64, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = (i as f64 - center) / sigma;
            (-0.5 * t * t).exp()
        })
        .collect()
}

/// Noise-free field of one structure centred at `center`, x-fastest.
pub fn structure_field(dims: [usize; 3], landmark: Landmark, center: [f64; 3]) -> Vec<f64> {
    let blob = BLOBS[landmark.index()];
    let sc = axis_scale(dims);
    let g: Vec<Vec<f64>> = (0..3).map(|a| gaussian_1d(dims[a], center[a], blob.sigma[a] * sc[a])).collect();
    let mut out = Vec::with_capacity(dims.iter().product());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            let yz = blob.amplitude * g[1][y] * g[2][z];
            out.extend(g[0].iter().map(|gx| yz * gx));
        }
    }
    out
}

/// Noise-free render of all seven structures over the smooth background.
pub fn render_clean(dims: [usize; 3], lm: &LandmarkSet) -> Vec<f64> {
    let [w, h, d] = dims;
    let mut out = Vec::with_capacity(w * h * d);
    for z in 0..d {
        for _ in 0..h {
            for x in 0..w {
                // gentle ramp so intensity is not purely blob-driven
                let ramp = 60.0 * (x as f64 / w as f64) + 40.0 * (z as f64 / d as f64);
                out.push(BACKGROUND + ramp);
            }
        }
    }
    for (l, c) in lm.iter() {
        for (o, v) in out.iter_mut().zip(structure_field(dims, l, c)) {
            *o += v;
        }
    }
    out
}

pub fn synth_generate_with(cfg: &SynthConfig) -> Result<Vec<Case>, SynthError> {
    if cfg.dims.iter().any(|&d| d < 16) {
        return Err(SynthError::DimsTooSmall(cfg.dims));
    }
    if !(0.0..=1.0).contains(&cfg.left_fraction) {
        return Err(SynthError::LeftFraction(cfg.left_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ears = layout(cfg.n_cases, cfg.left_fraction, &mut rng);
    let n_patients = ears.iter().map(|e| e.0).max().map_or(0, |m| m + 1);
    let shapes: Vec<PatientShape> = (0..n_patients)
        .map(|_| PatientShape {
            angle: rng.random_range(-10.0f64..10.0).to_radians(),
            scale: rng.random_range(0.93..1.07),
        })
        .collect();
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("finite sigma");
    let mut cases = Vec::with_capacity(cfg.n_cases);
    for (i, &(patient, laterality)) in ears.iter().enumerate() {
        let mut case_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let lm = (0..MAX_ATTEMPTS)
            .find_map(|_| place_landmarks(cfg.dims, shapes[patient], &mut case_rng))
            .ok_or(SynthError::Collision {
                case: i,
                attempts: MAX_ATTEMPTS,
            })?;
        let data: Vec<i16> = render_clean(cfg.dims, &lm)
            .into_iter()
            .map(|v| {
                let n = if cfg.noise_sigma > 0.0 { noise.sample(&mut case_rng) } else { 0.0 };
                (v + n).round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16
            })
            .collect();
        let id = format!("case_{i:03}");
        let canonical = Volume::new(id, cfg.dims, cfg.spacing, Laterality::Left, data)?;
        let (mut volume, landmarks) = match laterality {
            Laterality::Right => (canonical, lm),
            // mirroring is an involution, so flipping the canonical render yields the left ear
            Laterality::Left => flip_to_right(&canonical, &lm)?,
        };
        volume.laterality = laterality;
        cases.push(Case {
            volume,
            landmarks,
            patient: format!("patient_{patient:03}"),
            roi_corner: None,
        });
    }
    Ok(cases)
}
