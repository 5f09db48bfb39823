//! The seven ear landmarks and the fixed-size set that carries their coordinates.

use std::fmt;
use std::str::FromStr;

use serde_json::{Map, Value};

use crate::volume::VolumeError;

/// Anatomical landmark, in canonical output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Landmark {
    RoundWindowNiche,
    IncusTip,
    Umbo,
    MalleusShortProcess,
    PyramidTip,
    CochleaApex,
    CochleaBase,
}

impl Landmark {
    pub const COUNT: usize = 7;

    pub const ALL: [Landmark; 7] = [
        Landmark::RoundWindowNiche,
        Landmark::IncusTip,
        Landmark::Umbo,
        Landmark::MalleusShortProcess,
        Landmark::PyramidTip,
        Landmark::CochleaApex,
        Landmark::CochleaBase,
    ];

    /// The six landmarks used for camera registration. The cochlear base is
    /// held out as a test point.
    pub const REGISTRATION: [Landmark; 6] = [
        Landmark::RoundWindowNiche,
        Landmark::IncusTip,
        Landmark::Umbo,
        Landmark::MalleusShortProcess,
        Landmark::PyramidTip,
        Landmark::CochleaApex,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Canonical key used in every file format and the HTTP API.
    pub fn key(self) -> &'static str {
        match self {
            Landmark::RoundWindowNiche => "RWN",
            Landmark::IncusTip => "INCUS_TIP",
            Landmark::Umbo => "UMBO",
            Landmark::MalleusShortProcess => "MALLEUS_SHORT",
            Landmark::PyramidTip => "PYRAMID_TIP",
            Landmark::CochleaApex => "COCHLEA_APEX",
            Landmark::CochleaBase => "COCHLEA_BASE",
        }
    }

    /// One-letter column header used in accuracy tables.
    pub fn abbrev(self) -> &'static str {
        match self {
            Landmark::RoundWindowNiche => "R",
            Landmark::IncusTip => "I",
            Landmark::Umbo => "U",
            Landmark::MalleusShortProcess => "S",
            Landmark::PyramidTip => "P",
            Landmark::CochleaApex => "A",
            Landmark::CochleaBase => "B",
        }
    }

    pub fn is_registration(self) -> bool {
        self != Landmark::CochleaBase
    }
}

impl fmt::Display for Landmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownLandmark(pub String);

impl fmt::Display for UnknownLandmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown landmark `{}`", self.0)
    }
}

impl std::error::Error for UnknownLandmark {}

impl FromStr for Landmark {
    type Err = UnknownLandmark;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Landmark::ALL
            .iter()
            .copied()
            .find(|l| l.key() == s)
            .ok_or_else(|| UnknownLandmark(s.to_string()))
    }
}

/// Continuous voxel coordinates for all seven landmarks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkSet {
    coords: [[f64; 3]; 7],
}

impl LandmarkSet {
    pub fn new(coords: [[f64; 3]; 7]) -> Self {
        Self { coords }
    }

    pub fn get(&self, l: Landmark) -> [f64; 3] {
        self.coords[l.index()]
    }

    pub fn set(&mut self, l: Landmark, p: [f64; 3]) {
        self.coords[l.index()] = p;
    }

    pub fn coords(&self) -> &[[f64; 3]; 7] {
        &self.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = (Landmark, [f64; 3])> + '_ {
        Landmark::ALL.iter().map(move |&l| (l, self.coords[l.index()]))
    }

    pub fn map(&self, mut f: impl FnMut([f64; 3]) -> [f64; 3]) -> LandmarkSet {
        let mut out = *self;
        for c in out.coords.iter_mut() {
            *c = f(*c);
        }
        out
    }

    /// Flattened `[x0, y0, z0, x1, ...]` in canonical order: the 21 regression targets.
    pub fn to_flat(&self) -> [f64; 21] {
        let mut out = [0.0; 21];
        for (i, c) in self.coords.iter().enumerate() {
            out[3 * i..3 * i + 3].copy_from_slice(c);
        }
        out
    }

    pub fn from_flat(flat: &[f64]) -> LandmarkSet {
        assert_eq!(flat.len(), 21, "landmark vector must have 21 entries");
        let mut coords = [[0.0; 3]; 7];
        for (i, c) in coords.iter_mut().enumerate() {
            c.copy_from_slice(&flat[3 * i..3 * i + 3]);
        }
        LandmarkSet { coords }
    }

    /// Landmarks lying outside `[0, dims-1]` on any axis.
    pub fn outside(&self, dims: [usize; 3]) -> Vec<Landmark> {
        self.iter()
            .filter(|(_, p)| {
                (0..3).any(|a| !(p[a] >= 0.0 && p[a] <= (dims[a] as f64 - 1.0)))
            })
            .map(|(l, _)| l)
            .collect()
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        for (l, p) in self.iter() {
            m.insert(l.key().to_string(), serde_json::json!(p));
        }
        Value::Object(m)
    }

    /// Parses a `{"RWN": [x, y, z], ...}` table. All seven keys are required
    /// and no others are accepted.
    pub fn from_json(v: &Value) -> Result<LandmarkSet, VolumeError> {
        let obj = v.as_object().ok_or_else(|| {
            VolumeError::MalformedMetadata("landmark table must be an object".into())
        })?;
        for key in obj.keys() {
            key.parse::<Landmark>()
                .map_err(|_| VolumeError::UnknownLandmark(key.clone()))?;
        }
        let mut coords = [[0.0; 3]; 7];
        for l in Landmark::ALL {
            let entry = obj
                .get(l.key())
                .ok_or_else(|| VolumeError::MissingLandmark(l.key().to_string()))?;
            coords[l.index()] = parse_triple(entry).ok_or_else(|| {
                VolumeError::MalformedMetadata(format!(
                    "landmark {} must be an array of three numbers",
                    l.key()
                ))
            })?;
        }
        Ok(LandmarkSet { coords })
    }
}

pub(crate) fn parse_triple(v: &Value) -> Option<[f64; 3]> {
    let arr = v.as_array()?;
    if arr.len() != 3 {
        return None;
    }
    let mut out = [0.0; 3];
    for (o, x) in out.iter_mut().zip(arr) {
        *o = x.as_f64()?;
    }
    Some(out)
}
