//! CT volume model, laterality normalization, ROI cropping and voxel/millimeter math.
//!
//! A volume is stored as a raw little-endian `i16` payload in x-fastest order
//! next to a JSON sidecar:
//!
//! ```text
//! {
//!   "id": "case_000",
//!   "patient": "p000",
//!   "dims": [W, H, D],
//!   "spacing": [sx, sy, sz],
//!   "laterality": "Left" | "Right",
//!   "payload": "case_000.raw",
//!   "crop_offset": [cx, cy, cz],        // optional
//!   "roi_corner": [cx, cy, cz],         // optional, preferred crop for this case
//!   "landmarks": { "RWN": [x, y, z], ... }
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::landmark::{parse_triple, Landmark, LandmarkSet};

pub const MAX_SPACING_MM: f64 = 10.0;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("invalid dimensions {0:?}: every axis must be positive")]
    InvalidDims([usize; 3]),
    #[error("invalid spacing {0:?}: every component must lie in (0, 10) mm")]
    InvalidSpacing([f64; 3]),
    #[error("data length {actual} does not match dims product {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("landmarks outside volume bounds: {}", join_names(.0))]
    InvalidAnnotation(Vec<Landmark>),
    #[error("roi corner {corner:?} + size {size:?} exceeds dims {dims:?}")]
    RoiOutOfBounds {
        corner: [usize; 3],
        size: [usize; 3],
        dims: [usize; 3],
    },
    #[error("roi excludes landmarks: {}", join_names(.0))]
    RoiExcludesLandmark(Vec<Landmark>),
    #[error("payload is {actual} bytes, expected {expected}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("missing landmark {0}")]
    MissingLandmark(String),
    #[error("unknown landmark {0}")]
    UnknownLandmark(String),
    #[error("malformed metadata: {0}")]
    MalformedMetadata(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl VolumeError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            VolumeError::InvalidDims(_) => "invalid_dims",
            VolumeError::InvalidSpacing(_) => "invalid_spacing",
            VolumeError::DataLength { .. } => "data_length",
            VolumeError::InvalidAnnotation(_) => "invalid_annotation",
            VolumeError::RoiOutOfBounds { .. } => "roi_out_of_bounds",
            VolumeError::RoiExcludesLandmark(_) => "roi_excludes_landmark",
            VolumeError::SizeMismatch { .. } => "size_mismatch",
            VolumeError::MissingLandmark(_) => "missing_landmark",
            VolumeError::UnknownLandmark(_) => "unknown_landmark",
            VolumeError::MalformedMetadata(_) => "malformed_metadata",
            VolumeError::Io { .. } => "io",
        }
    }
}

fn join_names(ls: &[Landmark]) -> String {
    ls.iter().map(|l| l.key()).collect::<Vec<_>>().join(", ")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VolumeError + '_ {
    move |source| VolumeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Laterality {
    Left,
    Right,
}

/// Anisotropic scalar grid. `data[x + W * (y + H * z)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub id: String,
    dims: [usize; 3],
    spacing: [f64; 3],
    pub laterality: Laterality,
    data: Vec<i16>,
    /// Offset of this volume's origin inside the volume it was cropped from.
    pub crop_offset: Option<[usize; 3]>,
}

impl Volume {
    pub fn new(
        id: impl Into<String>,
        dims: [usize; 3],
        spacing: [f64; 3],
        laterality: Laterality,
        data: Vec<i16>,
    ) -> Result<Self, VolumeError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(VolumeError::InvalidDims(dims));
        }
        if spacing
            .iter()
            .any(|&s| !(s > 0.0 && s < MAX_SPACING_MM))
        {
            return Err(VolumeError::InvalidSpacing(spacing));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(VolumeError::DataLength {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            id: id.into(),
            dims,
            spacing,
            laterality,
            data,
            crop_offset: None,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[i16] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> i16 {
        self.data[self.index(x, y, z)]
    }

    /// Voxel coordinate to millimeters relative to this grid's origin.
    pub fn voxel_to_mm(&self, p: [f64; 3]) -> [f64; 3] {
        [
            p[0] * self.spacing[0],
            p[1] * self.spacing[1],
            p[2] * self.spacing[2],
        ]
    }

    pub fn check_landmarks(&self, lm: &LandmarkSet) -> Result<(), VolumeError> {
        let outside = lm.outside(self.dims);
        if outside.is_empty() {
            Ok(())
        } else {
            Err(VolumeError::InvalidAnnotation(outside))
        }
    }

    /// Intensities rescaled to `[0, 1]` by the volume's own min and max,
    /// in x-fastest order. A constant volume maps to zeros.
    pub fn normalized(&self) -> Vec<f64> {
        let (lo, hi) = self
            .data
            .iter()
            .fold((i16::MAX, i16::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = f64::from(hi) - f64::from(lo);
        if range <= 0.0 {
            return vec![0.0; self.data.len()];
        }
        self.data
            .iter()
            .map(|&v| (f64::from(v) - f64::from(lo)) / range)
            .collect()
    }
}

/// Mirrors a left-ear volume along x so it resembles a right ear. Right-ear
/// inputs are returned unchanged.
pub fn flip_to_right(v: &Volume, lm: &LandmarkSet) -> Result<(Volume, LandmarkSet), VolumeError> {
    v.check_landmarks(lm)?;
    if v.laterality == Laterality::Right {
        return Ok((v.clone(), *lm));
    }
    let [w, h, d] = v.dims;
    let mut data = Vec::with_capacity(v.data.len());
    for z in 0..d {
        for y in 0..h {
            let row = &v.data[v.index(0, y, z)..v.index(0, y, z) + w];
            data.extend(row.iter().rev());
        }
    }
    let flipped = Volume {
        data,
        laterality: Laterality::Right,
        ..v.clone()
    };
    let wm1 = (w - 1) as f64;
    Ok((flipped, lm.map(|p| [wm1 - p[0], p[1], p[2]])))
}

/// Axis-aligned crop box in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoiSpec {
    pub corner: [usize; 3],
    pub size: [usize; 3],
}

impl Default for RoiSpec {
    fn default() -> Self {
        Self {
            corner: [0, 0, 0],
            size: [200, 200, 100],
        }
    }
}

impl RoiSpec {
    pub fn new(corner: [usize; 3], size: [usize; 3]) -> Self {
        Self { corner, size }
    }

    /// A box of `size` centered in `dims` (rounded toward the origin).
    /// Panics-free: callers validate with [`RoiSpec::check`].
    pub fn centered(dims: [usize; 3], size: [usize; 3]) -> Self {
        let corner = [0, 1, 2].map(|a| dims[a].saturating_sub(size[a]) / 2);
        Self { corner, size }
    }

    pub fn check(&self, dims: [usize; 3]) -> Result<(), VolumeError> {
        let fits = (0..3).all(|a| self.size[a] > 0 && self.corner[a] + self.size[a] <= dims[a]);
        if fits {
            Ok(())
        } else {
            Err(VolumeError::RoiOutOfBounds {
                corner: self.corner,
                size: self.size,
                dims,
            })
        }
    }
}

/// Crops `roi` out of `v`. Landmarks are translated by `-corner` and the corner
/// is accumulated into the result's `crop_offset`.
pub fn crop_roi(
    v: &Volume,
    lm: &LandmarkSet,
    roi: &RoiSpec,
) -> Result<(Volume, LandmarkSet), VolumeError> {
    roi.check(v.dims)?;
    let shifted = lm.map(|p| [0, 1, 2].map(|a| p[a] - roi.corner[a] as f64));
    let excluded = shifted.outside(roi.size);
    if !excluded.is_empty() {
        return Err(VolumeError::RoiExcludesLandmark(excluded));
    }
    let [cw, ch, cd] = roi.size;
    let [x0, y0, z0] = roi.corner;
    let mut data = Vec::with_capacity(cw * ch * cd);
    for z in z0..z0 + cd {
        for y in y0..y0 + ch {
            let start = v.index(x0, y, z);
            data.extend_from_slice(&v.data[start..start + cw]);
        }
    }
    let prior = v.crop_offset.unwrap_or([0, 0, 0]);
    let cropped = Volume {
        dims: roi.size,
        data,
        crop_offset: Some([0, 1, 2].map(|a| prior[a] + roi.corner[a])),
        ..v.clone()
    };
    Ok((cropped, shifted))
}

/// Maps a coordinate in a cropped volume back into its parent grid.
pub fn uncrop_point(p: [f64; 3], offset: [usize; 3]) -> [f64; 3] {
    [0, 1, 2].map(|a| p[a] + offset[a] as f64)
}

/// How a case was brought into the network's canonical frame, and the inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseTransform {
    /// Width of the original volume when it was mirrored, `None` for right ears.
    pub flip_width: Option<usize>,
    pub crop_offset: [usize; 3],
}

impl CaseTransform {
    /// Original-volume coordinate from a canonical (flipped, cropped) coordinate.
    pub fn to_original(&self, p: [f64; 3]) -> [f64; 3] {
        let q = uncrop_point(p, self.crop_offset);
        match self.flip_width {
            Some(w) => [(w - 1) as f64 - q[0], q[1], q[2]],
            None => q,
        }
    }

    pub fn landmarks_to_original(&self, lm: &LandmarkSet) -> LandmarkSet {
        lm.map(|p| self.to_original(p))
    }
}

/// Flip to right, then crop. Returns the canonical case and its inverse map.
pub fn canonicalize(
    v: &Volume,
    lm: &LandmarkSet,
    roi: &RoiSpec,
) -> Result<(Volume, LandmarkSet, CaseTransform), VolumeError> {
    let flip_width = (v.laterality == Laterality::Left).then_some(v.dims[0]);
    let (fv, flm) = flip_to_right(v, lm)?;
    // The ROI is given in the original grid; mirror it along with the data.
    let roi = match flip_width {
        Some(w) => RoiSpec {
            corner: [
                w.checked_sub(roi.corner[0] + roi.size[0]).unwrap_or(roi.corner[0]),
                roi.corner[1],
                roi.corner[2],
            ],
            size: roi.size,
        },
        None => *roi,
    };
    let (cv, clm) = crop_roi(&fv, &flm, &roi)?;
    Ok((
        cv,
        clm,
        CaseTransform {
            flip_width,
            crop_offset: roi.corner,
        },
    ))
}

/// Euclidean distance in millimeters between two voxel coordinates.
pub fn physical_distance_mm(a: [f64; 3], b: [f64; 3], spacing: [f64; 3]) -> f64 {
    let dx = spacing[0] * (a[0] - b[0]);
    let dy = spacing[1] * (a[1] - b[1]);
    let dz = spacing[2] * (a[2] - b[2]);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// A volume plus everything stored in its sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub volume: Volume,
    pub landmarks: LandmarkSet,
    pub patient: String,
    pub roi_corner: Option<[usize; 3]>,
}

fn sidecar_json(case: &Case, payload_name: &str) -> Value {
    let v = &case.volume;
    let mut m = Map::new();
    m.insert("id".into(), json!(v.id));
    m.insert("patient".into(), json!(case.patient));
    m.insert("dims".into(), json!(v.dims));
    m.insert("spacing".into(), json!(v.spacing));
    m.insert("laterality".into(), json!(v.laterality));
    m.insert("payload".into(), json!(payload_name));
    if let Some(off) = v.crop_offset {
        m.insert("crop_offset".into(), json!(off));
    }
    if let Some(c) = case.roi_corner {
        m.insert("roi_corner".into(), json!(c));
    }
    m.insert("landmarks".into(), case.landmarks.to_json());
    Value::Object(m)
}

/// Writes `<stem>.json` and `<stem>.raw` next to each other. Returns the sidecar path.
pub fn save_volume(case: &Case, dir: &Path, stem: &str) -> Result<PathBuf, VolumeError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let raw_name = format!("{stem}.raw");
    let raw_path = dir.join(&raw_name);
    let mut bytes = Vec::with_capacity(case.volume.data.len() * 2);
    for v in &case.volume.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&raw_path, bytes).map_err(io_err(&raw_path))?;
    let meta_path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&sidecar_json(case, &raw_name))
        .expect("sidecar serializes");
    fs::write(&meta_path, text).map_err(io_err(&meta_path))?;
    Ok(meta_path)
}

fn meta_field<'a>(m: &'a Map<String, Value>, key: &str) -> Result<&'a Value, VolumeError> {
    m.get(key)
        .ok_or_else(|| VolumeError::MalformedMetadata(format!("missing field `{key}`")))
}

fn usize_triple(v: &Value, key: &str) -> Result<[usize; 3], VolumeError> {
    let bad = || VolumeError::MalformedMetadata(format!("`{key}` must be three non-negative integers"));
    let arr = v.as_array().filter(|a| a.len() == 3).ok_or_else(bad)?;
    let mut out = [0usize; 3];
    for (o, x) in out.iter_mut().zip(arr) {
        *o = x.as_u64().ok_or_else(bad)? as usize;
    }
    Ok(out)
}

/// Loads a case from its JSON sidecar.
pub fn load_volume(meta_path: &Path) -> Result<Case, VolumeError> {
    let text = fs::read_to_string(meta_path).map_err(io_err(meta_path))?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| VolumeError::MalformedMetadata(e.to_string()))?;
    let m = doc
        .as_object()
        .ok_or_else(|| VolumeError::MalformedMetadata("sidecar must be an object".into()))?;

    let id = meta_field(m, "id")?
        .as_str()
        .ok_or_else(|| VolumeError::MalformedMetadata("`id` must be a string".into()))?
        .to_string();
    let patient = m
        .get("patient")
        .and_then(Value::as_str)
        .unwrap_or(&id)
        .to_string();
    let dims = usize_triple(meta_field(m, "dims")?, "dims")?;
    let spacing = parse_triple(meta_field(m, "spacing")?).ok_or_else(|| {
        VolumeError::MalformedMetadata("`spacing` must be three numbers".into())
    })?;
    let laterality: Laterality = serde_json::from_value(meta_field(m, "laterality")?.clone())
        .map_err(|_| VolumeError::MalformedMetadata("`laterality` must be Left or Right".into()))?;
    let payload = meta_field(m, "payload")?
        .as_str()
        .ok_or_else(|| VolumeError::MalformedMetadata("`payload` must be a file name".into()))?;
    let crop_offset = m
        .get("crop_offset")
        .map(|v| usize_triple(v, "crop_offset"))
        .transpose()?;
    let roi_corner = m
        .get("roi_corner")
        .map(|v| usize_triple(v, "roi_corner"))
        .transpose()?;
    let landmarks = LandmarkSet::from_json(meta_field(m, "landmarks")?)?;

    let raw_path = meta_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(payload);
    let bytes = fs::read(&raw_path).map_err(io_err(&raw_path))?;
    let expected = dims[0] * dims[1] * dims[2] * 2;
    if bytes.len() != expected {
        return Err(VolumeError::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect();
    let mut volume = Volume::new(id, dims, spacing, laterality, data)?;
    volume.crop_offset = crop_offset;
    volume.check_landmarks(&landmarks)?;
    Ok(Case {
        volume,
        landmarks,
        patient,
        roi_corner,
    })
}

/// Standalone annotation file: `{ "<case id>": { "RWN": [x, y, z], ... }, ... }`.
pub fn save_annotations(
    path: &Path,
    entries: &[(String, LandmarkSet)],
) -> Result<(), VolumeError> {
    let mut m = Map::new();
    for (id, lm) in entries {
        m.insert(id.clone(), lm.to_json());
    }
    let text = serde_json::to_string_pretty(&Value::Object(m)).expect("annotations serialize");
    fs::write(path, text).map_err(io_err(path))
}

pub fn load_annotations(path: &Path) -> Result<Vec<(String, LandmarkSet)>, VolumeError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| VolumeError::MalformedMetadata(e.to_string()))?;
    let m = doc.as_object().ok_or_else(|| {
        VolumeError::MalformedMetadata("annotation file must map case ids to landmark tables".into())
    })?;
    m.iter()
        .map(|(id, v)| Ok((id.clone(), LandmarkSet::from_json(v)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(rng: &mut ChaCha8Rng, dims: [usize; 3], lat: Laterality) -> Volume {
        let n = dims.iter().product();
        let data = (0..n).map(|_| rng.random::<i16>()).collect();
        Volume::new("t", dims, [0.3, 0.3, 0.6], lat, data).unwrap()
    }

    fn random_landmarks(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> LandmarkSet {
        let mut c = [[0.0; 3]; 7];
        for p in c.iter_mut() {
            for a in 0..3 {
                p[a] = rng.random_range(0.0..=(dims[a] - 1) as f64);
            }
        }
        LandmarkSet::new(c)
    }

    #[test]
    fn right_ear_is_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_volume(&mut rng, [6, 5, 4], Laterality::Right);
        let lm = random_landmarks(&mut rng, v.dims());
        let (fv, flm) = flip_to_right(&v, &lm).unwrap();
        assert_eq!(fv, v);
        assert_eq!(flm, lm);
    }

    #[test]
    fn left_ear_landmark_is_reflected() {
        let v = Volume::new("l", [512, 1, 1], [0.2, 0.2, 0.2], Laterality::Left, vec![0; 512]).unwrap();
        let lm = LandmarkSet::new([[10.0, 0.0, 0.0]; 7]);
        let (fv, flm) = flip_to_right(&v, &lm).unwrap();
        assert_eq!(fv.laterality, Laterality::Right);
        assert_eq!(flm.get(Landmark::Umbo)[0], 501.0);
    }

    #[test]
    fn double_flip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_volume(&mut rng, [8, 8, 8], Laterality::Left);
        let lm = random_landmarks(&mut rng, v.dims());
        let (once, lm1) = flip_to_right(&v, &lm).unwrap();
        let relabeled = Volume {
            laterality: Laterality::Left,
            ..once.clone()
        };
        let (twice, lm2) = flip_to_right(&relabeled, &lm1).unwrap();
        assert_eq!(twice.data(), v.data());
        for (a, b) in lm2.coords().iter().zip(lm.coords()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
        assert_eq!(once.get(0, 3, 5), v.get(7, 3, 5));
    }

    #[test]
    fn flip_rejects_out_of_bounds_landmark() {
        let v = Volume::new("l", [4, 4, 4], [1.0; 3], Laterality::Left, vec![0; 64]).unwrap();
        let mut lm = LandmarkSet::new([[1.0; 3]; 7]);
        lm.set(Landmark::PyramidTip, [4.5, 1.0, 1.0]);
        let err = flip_to_right(&v, &lm).unwrap_err();
        assert_eq!(err.code(), "invalid_annotation");
    }

    #[test]
    fn identity_crop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_volume(&mut rng, [7, 6, 5], Laterality::Right);
        let lm = random_landmarks(&mut rng, v.dims());
        let (cv, clm) = crop_roi(&v, &lm, &RoiSpec::new([0, 0, 0], v.dims())).unwrap();
        assert_eq!(cv.data(), v.data());
        assert_eq!(clm, lm);
        assert_eq!(cv.crop_offset, Some([0, 0, 0]));
    }

    #[test]
    fn crop_translates_landmarks() {
        let v = Volume::new("c", [100, 100, 30], [0.2; 3], Laterality::Right, vec![0; 300_000]).unwrap();
        let lm = LandmarkSet::new([[60.0, 70.0, 15.0]; 7]);
        let (cv, clm) = crop_roi(&v, &lm, &RoiSpec::new([50, 60, 10], [20, 20, 10])).unwrap();
        assert_eq!(cv.dims(), [20, 20, 10]);
        assert_eq!(clm.get(Landmark::IncusTip), [10.0, 10.0, 5.0]);
    }

    #[test]
    fn crop_names_excluded_landmarks() {
        let v = Volume::new("c", [10, 10, 10], [0.2; 3], Laterality::Right, vec![0; 1000]).unwrap();
        let mut lm = LandmarkSet::new([[5.0; 3]; 7]);
        lm.set(Landmark::CochleaApex, [1.0, 5.0, 5.0]);
        let err = crop_roi(&v, &lm, &RoiSpec::new([3, 3, 3], [5, 5, 5])).unwrap_err();
        match err {
            VolumeError::RoiExcludesLandmark(names) => assert_eq!(names, vec![Landmark::CochleaApex]),
            other => panic!("unexpected {other:?}"),
        }
        let err = crop_roi(&v, &lm, &RoiSpec::new([8, 0, 0], [5, 5, 5])).unwrap_err();
        assert_eq!(err.code(), "roi_out_of_bounds");
    }

    #[test]
    fn crop_then_map_back_restores_landmarks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let v = random_volume(&mut rng, [12, 10, 9], Laterality::Right);
            let corner = [rng.random_range(0..4), rng.random_range(0..3), rng.random_range(0..3)];
            let size = [8, 7, 6];
            let mut c = [[0.0; 3]; 7];
            for p in c.iter_mut() {
                for a in 0..3 {
                    p[a] = corner[a] as f64 + rng.random_range(0.0..=(size[a] - 1) as f64);
                }
            }
            let lm = LandmarkSet::new(c);
            let (cv, clm) = crop_roi(&v, &lm, &RoiSpec::new(corner, size)).unwrap();
            let back = clm.map(|p| uncrop_point(p, cv.crop_offset.unwrap()));
            for (a, b) in back.coords().iter().zip(lm.coords()) {
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() <= 1e-12 * b[k].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn canonicalize_inverts_for_left_ears() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_volume(&mut rng, [12, 10, 8], Laterality::Left);
        let roi = RoiSpec::new([1, 2, 1], [9, 7, 6]);
        let mut c = [[0.0; 3]; 7];
        for p in c.iter_mut() {
            *p = [rng.random_range(1.0..9.0), rng.random_range(2.0..8.0), rng.random_range(1.0..6.0)];
        }
        let lm = LandmarkSet::new(c);
        let (cv, clm, t) = canonicalize(&v, &lm, &roi).unwrap();
        assert_eq!(cv.dims(), [9, 7, 6]);
        let back = t.landmarks_to_original(&clm);
        for (a, b) in back.coords().iter().zip(lm.coords()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
        // The canonical voxel (0,0,0) is original voxel (W-1-corner_x', 2, 1) after mirroring.
        let x_orig = 12 - 1 - t.crop_offset[0];
        assert_eq!(cv.get(0, 0, 0), v.get(x_orig, 2, 1));
    }

    #[test]
    fn distance_examples() {
        let s = [0.156, 0.156, 0.100];
        assert_eq!(physical_distance_mm([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], s), 0.0);
        let d = physical_distance_mm([0.0, 0.0, 10.0], [0.0, 0.0, 0.0], s);
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn volume_invariants_enforced() {
        assert_eq!(
            Volume::new("x", [2, 2, 2], [0.1; 3], Laterality::Right, vec![0; 7]).unwrap_err().code(),
            "data_length"
        );
        assert_eq!(
            Volume::new("x", [2, 2, 2], [0.1, 0.0, 0.1], Laterality::Right, vec![0; 8]).unwrap_err().code(),
            "invalid_spacing"
        );
        assert_eq!(
            Volume::new("x", [0, 2, 2], [0.1; 3], Laterality::Right, vec![]).unwrap_err().code(),
            "invalid_dims"
        );
    }

    #[test]
    fn normalized_spans_unit_interval() {
        let v = Volume::new("n", [3, 1, 1], [1.0; 3], Laterality::Right, vec![-100, 0, 300]).unwrap();
        assert_eq!(v.normalized(), vec![0.0, 0.25, 1.0]);
        let c = Volume::new("n", [2, 1, 1], [1.0; 3], Laterality::Right, vec![5, 5]).unwrap();
        assert_eq!(c.normalized(), vec![0.0, 0.0]);
    }
}
