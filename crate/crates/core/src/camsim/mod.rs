//! Camera server for two simulated cameras behind one shared USB switch.

pub mod node;
pub mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use node::CameraNode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraId {
    Base,
    EndEffector,
}

impl CameraId {
    pub fn as_str(self) -> &'static str {
        match self {
            CameraId::Base => "base",
            CameraId::EndEffector => "end_effector",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldOfView {
    Wide,
    Linear,
    Narrow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorSpace {
    Rgb8,
    Gray8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureParams {
    pub width: u32,
    pub height: u32,
    pub field_of_view: FieldOfView,
    pub color_space: ColorSpace,
    pub use_light: bool,
    /// Video length in seconds.
    pub duration: f64,
    pub fps: u16,
}

impl Default for CaptureParams {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            field_of_view: FieldOfView::Wide,
            color_space: ColorSpace::Rgb8,
            use_light: false,
            duration: 2.0,
            fps: 10,
        }
    }
}

impl CaptureParams {
    fn validate(&self, video: bool) -> Result<(), CamError> {
        if self.width == 0 || self.height == 0 || self.width > 4096 || self.height > 4096 {
            return Err(CamError::InvalidParams(format!("resolution {}x{}", self.width, self.height)));
        }
        if video && !(self.duration > 0.0 && self.duration.is_finite() && self.fps > 0) {
            return Err(CamError::InvalidParams("video needs duration > 0 and fps > 0".into()));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> u32 {
        (self.duration * self.fps as f64).round() as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaKind {
    Image,
    Video,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaRecord {
    pub media_id: u64,
    pub camera: CameraId,
    pub kind: MediaKind,
    pub path: PathBuf,
    pub size: u64,
    /// Simulated seconds at which the capture started.
    pub created: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    Captured,
    Stored,
    Downloaded,
    PostProcessed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capture {
    pub record: MediaRecord,
    /// Simulated completion time of each stage.
    pub stages: Vec<(PipelineStage, f64)>,
    pub completed: f64,
}

#[derive(Debug, Error)]
pub enum CamError {
    #[error("camera {requested:?} is inactive (active: {active:?})")]
    CameraInactive {
        requested: CameraId,
        active: Option<CameraId>,
    },
    #[error("switching from {active:?} to {requested:?} is disabled")]
    SwitchingDisabled { requested: CameraId, active: CameraId },
    #[error("media storage full")]
    StorageFull,
    #[error("unknown media {0}")]
    UnknownMedia(u64),
    #[error("invalid capture parameters: {0}")]
    InvalidParams(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CamConfig {
    pub seed: u64,
    /// Multiplier applied to every simulated duration.
    pub time_scale: f64,
    /// Capture latency bounds in unscaled seconds.
    pub latency_min: f64,
    pub latency_max: f64,
    pub switch_time: f64,
    pub allow_switching: bool,
    pub end_effector_weight: f64,
    pub capacity_bytes: Option<u64>,
}

impl Default for CamConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            time_scale: 1.0,
            latency_min: 3.0,
            latency_max: 22.0,
            switch_time: 1.0,
            allow_switching: false,
            end_effector_weight: 0.7,
            capacity_bytes: None,
        }
    }
}

/// Pick a camera with probability `ee_weight` for the end effector.
pub fn weighted_pick<R: Rng + ?Sized>(rng: &mut R, ee_weight: f64) -> CameraId {
    if rng.random_bool(ee_weight.clamp(0.0, 1.0)) {
        CameraId::EndEffector
    } else {
        CameraId::Base
    }
}

pub struct CameraServer {
    cfg: CamConfig,
    root: PathBuf,
    active: Option<CameraId>,
    /// Simulated time at which the in-flight action (or a switch) finishes.
    busy_until: f64,
    next_id: u64,
    records: BTreeMap<u64, MediaRecord>,
    rng: rand_chacha::ChaCha8Rng,
    joints: [f64; 4],
}

impl CameraServer {
    pub fn new(root: impl Into<PathBuf>, cfg: CamConfig) -> Self {
        use rand::SeedableRng;
        Self {
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            root: root.into(),
            active: None,
            busy_until: 0.0,
            next_id: 1,
            records: BTreeMap::new(),
            joints: [0.0; 4],
        }
    }

    pub fn config(&self) -> &CamConfig {
        &self.cfg
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Move the media folder, e.g. after a new eMMC mount. Existing records
    /// keep their paths.
    pub fn set_root(&mut self, root: impl Into<PathBuf>) {
        self.root = root.into();
    }

    pub fn active(&self) -> Option<CameraId> {
        self.active
    }

    pub fn busy_until(&self) -> f64 {
        self.busy_until
    }

    pub fn set_joint_positions(&mut self, q: [f64; 4]) {
        self.joints = q;
    }

    pub fn pick_camera(&mut self) -> CameraId {
        weighted_pick(&mut self.rng, self.cfg.end_effector_weight)
    }

    /// Activate `id`. Returns the simulated time at which it is usable.
    pub fn select_camera(&mut self, id: CameraId, now: f64) -> Result<f64, CamError> {
        match self.active {
            Some(a) if a == id => return Ok(self.busy_until.max(now)),
            Some(a) if !self.cfg.allow_switching => {
                return Err(CamError::SwitchingDisabled { requested: id, active: a })
            }
            _ => {}
        }
        self.active = Some(id);
        self.busy_until = self.busy_until.max(now) + self.cfg.switch_time * self.cfg.time_scale;
        Ok(self.busy_until)
    }

    fn check_active(&self, camera: CameraId) -> Result<(), CamError> {
        if self.active != Some(camera) {
            return Err(CamError::CameraInactive {
                requested: camera,
                active: self.active,
            });
        }
        Ok(())
    }

    fn used_bytes(&self) -> u64 {
        self.records.values().map(|r| r.size).sum()
    }

    fn write_media(&mut self, camera: CameraId, kind: MediaKind, bytes: &[u8], created: f64) -> Result<MediaRecord, CamError> {
        if let Some(cap) = self.cfg.capacity_bytes {
            if self.used_bytes() + bytes.len() as u64 > cap {
                return Err(CamError::StorageFull);
            }
        }
        let id = self.next_id;
        let ext = match kind {
            MediaKind::Image => "jpg",
            MediaKind::Video => "vid",
        };
        let dir = self.root.join(camera.as_str());
        fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{id}.{ext}"));
        let tmp = path.with_extension(format!("{ext}.part"));
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)?;
        self.next_id += 1;
        let rec = MediaRecord {
            media_id: id,
            camera,
            kind,
            path,
            size: bytes.len() as u64,
            created,
        };
        self.records.insert(id, rec.clone());
        Ok(rec)
    }

    fn pipeline(&mut self, start: f64) -> (Vec<(PipelineStage, f64)>, f64) {
        let lat = self.rng.random_range(self.cfg.latency_min..=self.cfg.latency_max) * self.cfg.time_scale;
        let stages = [
            (PipelineStage::Captured, 0.15),
            (PipelineStage::Stored, 0.4),
            (PipelineStage::Downloaded, 0.85),
            (PipelineStage::PostProcessed, 1.0),
        ]
        .map(|(s, f)| (s, start + f * lat))
        .to_vec();
        (stages, start + lat)
    }

    pub fn take_image(&mut self, camera: CameraId, p: &CaptureParams, now: f64) -> Result<Capture, CamError> {
        self.check_active(camera)?;
        p.validate(false)?;
        let start = self.busy_until.max(now);
        let stamp = synth::Stamp {
            camera,
            media_id: self.next_id,
            frame: 0,
            time: start,
            joints: self.joints,
        };
        let bytes = synth::synth_jpeg(self.cfg.seed, p, &stamp);
        let record = self.write_media(camera, MediaKind::Image, &bytes, start)?;
        let (stages, completed) = self.pipeline(start);
        self.busy_until = completed;
        Ok(Capture { record, stages, completed })
    }

    pub fn record_video(&mut self, camera: CameraId, p: &CaptureParams, now: f64) -> Result<Capture, CamError> {
        self.check_active(camera)?;
        p.validate(true)?;
        let start = self.busy_until.max(now);
        let frames: Vec<Vec<u8>> = (0..p.frame_count())
            .map(|k| {
                let stamp = synth::Stamp {
                    camera,
                    media_id: self.next_id,
                    frame: k,
                    time: start + k as f64 / p.fps as f64 * self.cfg.time_scale,
                    joints: self.joints,
                };
                synth::synth_jpeg(self.cfg.seed, p, &stamp)
            })
            .collect();
        let bytes = synth::encode_video(p.fps, p.width, p.height, &frames);
        let record = self.write_media(camera, MediaKind::Video, &bytes, start)?;
        let (stages, done) = self.pipeline(start + p.duration * self.cfg.time_scale);
        self.busy_until = done;
        Ok(Capture {
            record,
            stages,
            completed: done,
        })
    }

    /// All records, oldest first.
    pub fn list_media(&self) -> Vec<MediaRecord> {
        let mut v: Vec<MediaRecord> = self.records.values().cloned().collect();
        v.sort_by(|a, b| a.created.total_cmp(&b.created).then(a.media_id.cmp(&b.media_id)));
        v
    }

    pub fn delete_media(&mut self, media_id: u64) -> Result<(), CamError> {
        let rec = self.records.remove(&media_id).ok_or(CamError::UnknownMedia(media_id))?;
        match fs::remove_file(&rec.path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(e.into()),
        }
    }
}
