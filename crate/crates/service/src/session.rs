//! Session state and the operations behind the HTTP handlers. Everything
//! here is synchronous; the handlers serialize writers per session.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use otoar_core::volume::load_volume;
use otoar_core::{Landmark, LandmarkSet, VolumeError};
use otoar_vision::frame::{count_frames, encode_pgm, read_frame, FrameError};
use otoar_vision::overlay::{encode_ppm, overlay_primitives, render_tracked, Primitives};
use otoar_vision::registration::{dlt_resect, RegistrationError};
use otoar_vision::tracking::Tracker;
use otoar_vision::{CameraMatrix, Correspondence, Frame, OverlaySpec, TrackParams, TrackState};

use crate::error::ServiceError;
use crate::Point2;

/// Tracking states are kept for every frame index divisible by this.
pub const CHECKPOINT_INTERVAL: usize = 30;

#[derive(Debug, Clone)]
pub struct Registration {
    pub camera: CameraMatrix,
    /// Reprojection residual in pixels per pick, canonical order.
    pub residuals: Vec<(Landmark, f64)>,
    pub rms: f64,
}

#[derive(Debug, Clone)]
struct Track {
    checkpoints: BTreeMap<usize, TrackState>,
    tracker: Tracker,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub case_path: String,
    pub frames_path: String,
    pub case_id: String,
    /// All seven landmarks in CT millimetres.
    pub landmarks_mm: LandmarkSet,
    frames_dir: PathBuf,
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
    pub picks: BTreeMap<Landmark, Point2>,
    pub registration: Option<Registration>,
    track: Option<Track>,
    pub revision: u64,
    pub params: TrackParams,
    pub overlay: OverlaySpec,
}

/// A rendered overlay frame with the tracking diagnostics that produced it.
#[derive(Debug, Clone)]
pub struct OverlayFrame {
    pub ppm: Vec<u8>,
    pub state: TrackState,
    pub primitives: Primitives,
    pub revision: u64,
}

/// Joins a client-supplied relative path onto the data root, refusing
/// anything that could escape it.
pub fn resolve(root: &Path, rel: &str) -> Result<PathBuf, ServiceError> {
    let p = Path::new(rel);
    if rel.is_empty() || p.components().any(|c| !matches!(c, Component::Normal(_) | Component::CurDir)) {
        return Err(ServiceError::InvalidPath(rel.to_string()));
    }
    Ok(root.join(p))
}

fn frame_error(rel: &str, e: FrameError) -> ServiceError {
    match e {
        FrameError::NotFound(_) => ServiceError::FramesNotFound(rel.to_string()),
        FrameError::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
            ServiceError::FramesNotFound(rel.to_string())
        }
        other => ServiceError::InvalidFrames(other.to_string()),
    }
}

impl Session {
    /// Loads the case sidecar and checks the frame directory, both relative
    /// to `root`.
    pub fn create(id: String, root: &Path, case_rel: &str, frames_rel: &str) -> Result<Self, ServiceError> {
        let case_path = resolve(root, case_rel)?;
        let frames_dir = resolve(root, frames_rel)?;
        let case = load_volume(&case_path).map_err(|e| match e {
            VolumeError::Io { .. } => ServiceError::CaseNotFound(case_rel.to_string()),
            other => ServiceError::InvalidCase(other.to_string()),
        })?;
        let frame_count = count_frames(&frames_dir).map_err(|e| frame_error(frames_rel, e))?;
        if frame_count == 0 {
            return Err(ServiceError::FramesNotFound(frames_rel.to_string()));
        }
        let first = read_frame(&frames_dir, 0).map_err(|e| frame_error(frames_rel, e))?;
        let vol = &case.volume;
        Ok(Self {
            id,
            case_path: case_rel.to_string(),
            frames_path: frames_rel.to_string(),
            case_id: vol.id.clone(),
            landmarks_mm: case.landmarks.map(|p| vol.voxel_to_mm(p)),
            frames_dir,
            frame_count,
            width: first.width,
            height: first.height,
            picks: BTreeMap::new(),
            registration: None,
            track: None,
            revision: 0,
            params: TrackParams::default(),
            overlay: OverlaySpec::default(),
        })
    }

    fn bump(&mut self) {
        self.revision += 1;
    }

    /// Any change to the pick set invalidates the camera and the track.
    fn invalidate(&mut self) {
        self.registration = None;
        self.track = None;
        self.bump();
    }

    pub fn set_pick(&mut self, name: &str, uv: Point2) -> Result<usize, ServiceError> {
        let l = pickable(name)?;
        let (w, h) = ((self.width - 1) as f64, (self.height - 1) as f64);
        if !(uv[0] >= 0.0 && uv[0] <= w && uv[1] >= 0.0 && uv[1] <= h) {
            return Err(ServiceError::PickOutOfBounds {
                u: uv[0],
                v: uv[1],
                width: self.width,
                height: self.height,
            });
        }
        self.picks.insert(l, uv);
        self.invalidate();
        Ok(self.picks.len())
    }

    pub fn delete_pick(&mut self, name: &str) -> Result<usize, ServiceError> {
        let l = pickable(name)?;
        if self.picks.remove(&l).is_none() {
            return Err(ServiceError::PickNotFound(name.to_string()));
        }
        self.invalidate();
        Ok(self.picks.len())
    }

    /// Resects the camera from the current picks and restarts tracking at
    /// frame 0 with the identity homography.
    pub fn register(&mut self) -> Result<&Registration, ServiceError> {
        if self.picks.len() < Landmark::REGISTRATION.len() {
            return Err(ServiceError::InsufficientPicks(self.picks.len()));
        }
        let corrs: Vec<Correspondence> = self
            .picks
            .iter()
            .map(|(&l, &uv)| Correspondence {
                name: l.key().to_string(),
                x: self.landmarks_mm.get(l),
                uv,
            })
            .collect();
        let (camera, res) = dlt_resect(&corrs).map_err(|e| match e {
            RegistrationError::InsufficientPoints(n) => ServiceError::InsufficientPicks(n),
            other => ServiceError::Degenerate(other.to_string()),
        })?;
        let first = self.frame(0)?;
        let tracker = Tracker::new(&first, self.params).map_err(|e| ServiceError::InvalidFrames(e.to_string()))?;
        let rms = (res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64).sqrt();
        self.track = Some(Track {
            checkpoints: BTreeMap::from([(0, tracker.state.clone())]),
            tracker,
        });
        self.registration = Some(Registration {
            camera,
            residuals: self.picks.keys().copied().zip(res).collect(),
            rms,
        });
        self.bump();
        Ok(self.registration.as_ref().expect("just set"))
    }

    pub fn frame(&self, n: usize) -> Result<Frame, ServiceError> {
        if n >= self.frame_count {
            return Err(ServiceError::FrameOutOfRange { n, count: self.frame_count });
        }
        read_frame(&self.frames_dir, n).map_err(|e| frame_error(&self.frames_path, e))
    }

    pub fn raw_frame(&self, n: usize) -> Result<Vec<u8>, ServiceError> {
        Ok(encode_pgm(&self.frame(n)?))
    }

    /// Last tracked state, if registered.
    pub fn track_state(&self) -> Option<&TrackState> {
        self.track.as_ref().map(|t| &t.tracker.state)
    }

    /// Tracking state at frame `n`: advances sequentially from the current
    /// position, or replays from the nearest checkpoint at or before `n`.
    pub fn state_at(&mut self, n: usize) -> Result<TrackState, ServiceError> {
        if self.registration.is_none() {
            return Err(ServiceError::NotRegistered);
        }
        if n >= self.frame_count {
            return Err(ServiceError::FrameOutOfRange { n, count: self.frame_count });
        }
        let mut track = self.track.take().ok_or(ServiceError::NotRegistered)?;
        let result = self.advance(&mut track, n);
        self.track = Some(track);
        result
    }

    fn advance(&self, track: &mut Track, n: usize) -> Result<TrackState, ServiceError> {
        let feature_err = |e: otoar_vision::features::FeatureError| ServiceError::InvalidFrames(e.to_string());
        if n < track.tracker.state.frame {
            let (&k, state) = track.checkpoints.range(..=n).next_back().expect("frame 0 is always checkpointed");
            track.tracker = Tracker::resume(&self.frame(k)?, state.clone(), self.params).map_err(feature_err)?;
        }
        while track.tracker.state.frame < n {
            let next = self.frame(track.tracker.state.frame + 1)?;
            let state = track.tracker.step(&next).map_err(feature_err)?;
            if state.frame % CHECKPOINT_INTERVAL == 0 {
                track.checkpoints.insert(state.frame, state.clone());
            }
        }
        Ok(track.tracker.state.clone())
    }

    pub fn overlay_frame(&mut self, n: usize) -> Result<OverlayFrame, ServiceError> {
        let state = self.state_at(n)?;
        let reg = self.registration.as_ref().ok_or(ServiceError::NotRegistered)?;
        let frame = self.frame(n)?;
        let img = render_tracked(&frame, &reg.camera, &state.h, &self.landmarks_mm, &self.overlay);
        Ok(OverlayFrame {
            ppm: encode_ppm(&img),
            primitives: overlay_primitives(&reg.camera, &state.h, &self.landmarks_mm, self.width, self.height),
            state,
            revision: self.revision,
        })
    }
}

fn pickable(name: &str) -> Result<Landmark, ServiceError> {
    let l: Landmark = name.parse().map_err(|_| ServiceError::UnknownLandmark(name.to_string()))?;
    if !l.is_registration() {
        return Err(ServiceError::ReservedTestLandmark(name.to_string()));
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_cannot_escape_the_root() {
        let root = Path::new("/data");
        assert_eq!(resolve(root, "cases/a.json").unwrap(), PathBuf::from("/data/cases/a.json"));
        for bad in ["", "/etc/passwd", "../x", "a/../../x"] {
            assert!(matches!(resolve(root, bad), Err(ServiceError::InvalidPath(_))), "{bad}");
        }
    }

    #[test]
    fn pick_names_are_checked() {
        assert_eq!(pickable("RWN"), Ok(Landmark::RoundWindowNiche));
        assert_eq!(pickable("COCHLEA_BASE"), Err(ServiceError::ReservedTestLandmark("COCHLEA_BASE".into())));
        assert_eq!(pickable("rwn"), Err(ServiceError::UnknownLandmark("rwn".into())));
    }
}
