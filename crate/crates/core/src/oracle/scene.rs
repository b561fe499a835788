use std::fmt::Write as _;

use nalgebra::{Vector2, Vector3};

use super::OracleError;
use crate::geometry::{CameraIntrinsics, Pose, Rotation3, DEFAULT_CROP_PAD, DEFAULT_CROP_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Cube,
    Cylinder,
    Blob,
}

/// What the frame-to-frame oracle reports for points hidden in the target
/// frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OccludedFlow {
    /// The geometric displacement, as if nothing were in the way.
    #[default]
    Geometric,
    /// No estimate: the pixel is invalid.
    Drop,
}

/// Degradations applied to exact oracle output.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct NoiseSpec {
    /// Gaussian flow noise per component, px.
    pub sigma_px: f64,
    /// Extra noise per degree between template and true orientation, px.
    pub sigma_per_deg: f64,
    /// Lattice spacing over which template-to-frame flow noise is correlated,
    /// px; 0 draws it independently per pixel. The per-pixel spread stays
    /// the configured sigma either way.
    pub m2f_correlation_px: f64,
    /// Fraction of flow vectors replaced by uniform targets in the crop.
    pub outlier_fraction: f64,
    /// Probability of inverting a visibility value.
    pub vis_flip_rate: f64,
    pub occluded_flow: OccludedFlow,
}

impl NoiseSpec {
    pub fn exact() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if !(self.sigma_px >= 0.0 && self.sigma_px.is_finite()) {
            return Err(OracleError::InvalidSpec("sigma must be finite and >= 0".into()));
        }
        if !(self.sigma_per_deg >= 0.0 && self.sigma_per_deg.is_finite()) {
            return Err(OracleError::InvalidSpec("sigma_per_deg must be finite and >= 0".into()));
        }
        if !(self.m2f_correlation_px >= 0.0 && self.m2f_correlation_px.is_finite()) {
            return Err(OracleError::InvalidSpec("m2f correlation must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(OracleError::InvalidSpec("outlier fraction must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.vis_flip_rate) {
            return Err(OracleError::InvalidSpec("visibility flip rate must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn is_exact(&self) -> bool {
        self.sigma_px == 0.0 && self.sigma_per_deg == 0.0 && self.outlier_fraction == 0.0 && self.vis_flip_rate == 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OccluderShape {
    /// Pixels `u` with `normal . u >= offset`.
    HalfPlane { normal: Vector2<f64>, offset: f64 },
    Disc { center: Vector2<f64>, radius: f64 },
}

impl OccluderShape {
    pub fn covers(&self, u: &Vector2<f64>) -> bool {
        match self {
            OccluderShape::HalfPlane { normal, offset } => normal.dot(u) >= *offset,
            OccluderShape::Disc { center, radius } => (u - center).norm_squared() <= radius * radius,
        }
    }

    fn shifted(&self, d: &Vector2<f64>) -> Self {
        match *self {
            OccluderShape::HalfPlane { normal, offset } => OccluderShape::HalfPlane {
                normal,
                offset: offset + normal.dot(d),
            },
            OccluderShape::Disc { center, radius } => OccluderShape::Disc { center: center + d, radius },
        }
    }
}

/// Image-space occluder in front of everything, present on frames
/// `start..end` and moving by `velocity` px per frame from `start`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OccluderSpec {
    pub shape: OccluderShape,
    pub velocity: Vector2<f64>,
    pub start: usize,
    pub end: usize,
}

impl OccluderSpec {
    pub fn at(&self, frame: usize) -> Option<OccluderShape> {
        (self.start..self.end)
            .contains(&frame)
            .then(|| self.shape.shifted(&(self.velocity * (frame - self.start) as f64)))
    }
}

/// Keyframe pose given as a rotation vector in degrees and a translation in mm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keyframe {
    pub rotvec_deg: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl Keyframe {
    pub fn new(rotvec_deg: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotvec_deg,
            translation,
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(Rotation3::exp(&self.rotvec_deg.map(f64::to_radians)), self.translation)
    }
}

/// Everything needed to generate a synthetic sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub model: ModelKind,
    pub points: usize,
    /// Cube edge, cylinder diameter or blob extent, mm.
    pub size_mm: f64,
    /// Cylinder height, mm.
    pub height_mm: f64,
    pub camera: CameraIntrinsics,
    pub keyframes: Vec<Keyframe>,
    /// Frame intervals between consecutive keyframes.
    pub steps: Vec<usize>,
    pub noise: NoiseSpec,
    pub occluder: Option<OccluderSpec>,
    pub crop_size: u32,
    pub crop_pad: f64,
    pub seed: u64,
}

pub fn default_source_camera() -> CameraIntrinsics {
    CameraIntrinsics::new(600.0, 600.0, 319.5, 239.5, 640, 480).expect("valid camera")
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            model: ModelKind::Cube,
            points: 1000,
            size_mm: 100.0,
            height_mm: 100.0,
            camera: default_source_camera(),
            keyframes: vec![Keyframe::new(Vector3::zeros(), Vector3::new(0.0, 0.0, 600.0))],
            steps: Vec::new(),
            noise: NoiseSpec::default(),
            occluder: None,
            crop_size: DEFAULT_CROP_SIZE,
            crop_pad: DEFAULT_CROP_PAD,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn frame_count(&self) -> usize {
        self.steps.iter().sum::<usize>() + 1
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let bad = |m: &str| Err(OracleError::InvalidSpec(m.to_string()));
        if self.points < 4 {
            return bad("points must be >= 4");
        }
        if !(self.size_mm > 0.0 && self.size_mm.is_finite()) || !(self.height_mm > 0.0 && self.height_mm.is_finite()) {
            return bad("sizes must be positive");
        }
        if self.keyframes.is_empty() {
            return bad("at least one keyframe is required");
        }
        if self.steps.len() + 1 != self.keyframes.len() {
            return bad("steps needs one entry per keyframe interval");
        }
        if self.steps.contains(&0) {
            return bad("steps must be >= 1");
        }
        let finite = self
            .keyframes
            .iter()
            .all(|k| k.rotvec_deg.iter().chain(k.translation.iter()).all(|v| v.is_finite()));
        if !finite {
            return bad("keyframes must be finite");
        }
        if self.crop_size < 2 || !(self.crop_pad > 0.0 && self.crop_pad.is_finite()) {
            return bad("crop size must be >= 2 and crop pad positive");
        }
        if let Some(o) = &self.occluder {
            let ok = match o.shape {
                OccluderShape::HalfPlane { normal, offset } => normal.norm() > 0.0 && offset.is_finite(),
                OccluderShape::Disc { center, radius } => radius > 0.0 && center.iter().all(|v| v.is_finite()),
            };
            if !ok || o.start >= o.end || !o.velocity.iter().all(|v| v.is_finite()) {
                return bad("invalid occluder");
            }
        }
        self.noise.validate()
    }

    /// Parses the flat `key = value` format; see `to_text`. Unknown keys and
    /// repeated scalar keys are rejected.
    pub fn parse(text: &str) -> Result<Self, OracleError> {
        let mut spec = SceneSpec {
            keyframes: Vec::new(),
            ..SceneSpec::default()
        };
        let mut seen: Vec<&str> = Vec::new();
        let mut height_set = false;
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| OracleError::Parse { line: lineno, message: m };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if key != "keyframe" {
                if seen.contains(&key) {
                    return Err(err(format!("duplicate key `{key}`")));
                }
                seen.push(key);
            }
            let nums = |n: usize| -> Result<Vec<f64>, OracleError> {
                let v: Vec<f64> = value
                    .split_whitespace()
                    .map(str::parse::<f64>)
                    .collect::<Result<_, _>>()
                    .map_err(|_| err(format!("`{key}` expects numbers")))?;
                if n > 0 && v.len() != n {
                    return Err(err(format!("`{key}` expects {n} numbers")));
                }
                Ok(v)
            };
            let uint = || value.parse::<u64>().map_err(|_| err(format!("`{key}` expects an unsigned integer")));
            match key {
                "model" => {
                    spec.model = match value {
                        "cube" => ModelKind::Cube,
                        "cylinder" => ModelKind::Cylinder,
                        "blob" => ModelKind::Blob,
                        _ => return Err(err(format!("unknown model `{value}`"))),
                    }
                }
                "points" => spec.points = uint()? as usize,
                "size" => spec.size_mm = nums(1)?[0],
                "height" => {
                    spec.height_mm = nums(1)?[0];
                    height_set = true;
                }
                "camera" => {
                    let v = nums(6)?;
                    if v[4].fract() != 0.0 || v[5].fract() != 0.0 || v[4] < 1.0 || v[5] < 1.0 {
                        return Err(err("camera size must be positive integers".into()));
                    }
                    spec.camera = CameraIntrinsics::new(v[0], v[1], v[2], v[3], v[4] as u32, v[5] as u32)
                        .map_err(|e| err(e.to_string()))?;
                }
                "keyframe" => {
                    let v = nums(6)?;
                    spec.keyframes
                        .push(Keyframe::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5])));
                }
                "steps" => {
                    spec.steps = value
                        .split_whitespace()
                        .map(str::parse::<usize>)
                        .collect::<Result<_, _>>()
                        .map_err(|_| err("`steps` expects unsigned integers".into()))?;
                }
                "sigma" => spec.noise.sigma_px = nums(1)?[0],
                "sigma_per_deg" => spec.noise.sigma_per_deg = nums(1)?[0],
                "m2f_correlation" => spec.noise.m2f_correlation_px = nums(1)?[0],
                "outliers" => spec.noise.outlier_fraction = nums(1)?[0],
                "vis_flip" => spec.noise.vis_flip_rate = nums(1)?[0],
                "occluded_flow" => {
                    spec.noise.occluded_flow = match value {
                        "geometric" => OccludedFlow::Geometric,
                        "drop" => OccludedFlow::Drop,
                        _ => return Err(err(format!("unknown occluded_flow `{value}`"))),
                    }
                }
                "occluder" => spec.occluder = Some(parse_occluder(value).map_err(err)?),
                "crop_size" => spec.crop_size = uint()? as u32,
                "crop_pad" => spec.crop_pad = nums(1)?[0],
                "seed" => spec.seed = uint()?,
                _ => return Err(err(format!("unknown key `{key}`"))),
            }
        }
        if spec.keyframes.is_empty() {
            spec.keyframes = SceneSpec::default().keyframes;
        }
        if !height_set {
            spec.height_mm = spec.size_mm;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Serializes to the format read by `parse`; `parse(to_text(s)) == s`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let model = match self.model {
            ModelKind::Cube => "cube",
            ModelKind::Cylinder => "cylinder",
            ModelKind::Blob => "blob",
        };
        let c = &self.camera;
        let _ = writeln!(s, "model = {model}");
        let _ = writeln!(s, "points = {}", self.points);
        let _ = writeln!(s, "size = {}", self.size_mm);
        let _ = writeln!(s, "height = {}", self.height_mm);
        let _ = writeln!(s, "camera = {} {} {} {} {} {}", c.fx, c.fy, c.cx, c.cy, c.width, c.height);
        for k in &self.keyframes {
            let (r, t) = (k.rotvec_deg, k.translation);
            let _ = writeln!(s, "keyframe = {} {} {} {} {} {}", r.x, r.y, r.z, t.x, t.y, t.z);
        }
        if !self.steps.is_empty() {
            let steps: Vec<String> = self.steps.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "steps = {}", steps.join(" "));
        }
        let n = &self.noise;
        let _ = writeln!(s, "sigma = {}", n.sigma_px);
        let _ = writeln!(s, "sigma_per_deg = {}", n.sigma_per_deg);
        let _ = writeln!(s, "m2f_correlation = {}", n.m2f_correlation_px);
        let _ = writeln!(s, "outliers = {}", n.outlier_fraction);
        let _ = writeln!(s, "vis_flip = {}", n.vis_flip_rate);
        let mode = match n.occluded_flow {
            OccludedFlow::Geometric => "geometric",
            OccludedFlow::Drop => "drop",
        };
        let _ = writeln!(s, "occluded_flow = {mode}");
        if let Some(o) = &self.occluder {
            let (v, a, b) = (o.velocity, o.start, o.end);
            let _ = match o.shape {
                OccluderShape::HalfPlane { normal, offset } => writeln!(
                    s,
                    "occluder = halfplane {} {} {} {} {} {a} {b}",
                    normal.x, normal.y, offset, v.x, v.y
                ),
                OccluderShape::Disc { center, radius } => writeln!(
                    s,
                    "occluder = disc {} {} {} {} {} {a} {b}",
                    center.x, center.y, radius, v.x, v.y
                ),
            };
        }
        let _ = writeln!(s, "crop_size = {}", self.crop_size);
        let _ = writeln!(s, "crop_pad = {}", self.crop_pad);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}

/// `halfplane nx ny offset vx vy start end` or `disc cx cy radius vx vy start end`.
fn parse_occluder(value: &str) -> Result<OccluderSpec, String> {
    let mut it = value.split_whitespace();
    let kind = it.next().ok_or("occluder needs a shape")?;
    let rest: Vec<&str> = it.collect();
    if rest.len() != 7 {
        return Err("occluder expects a shape and 7 values".into());
    }
    let f: Vec<f64> = rest[..5]
        .iter()
        .map(|s| s.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| "occluder expects numbers")?;
    let start: usize = rest[5].parse().map_err(|_| "occluder start must be a frame index")?;
    let end: usize = rest[6].parse().map_err(|_| "occluder end must be a frame index")?;
    let shape = match kind {
        "halfplane" => {
            let n = Vector2::new(f[0], f[1]);
            if !(n.norm() > 0.0) {
                return Err("half-plane normal must be non-zero".into());
            }
            OccluderShape::HalfPlane { normal: n, offset: f[2] }
        }
        "disc" => OccluderShape::Disc {
            center: Vector2::new(f[0], f[1]),
            radius: f[2],
        },
        _ => return Err(format!("unknown occluder shape `{kind}`")),
    };
    Ok(OccluderSpec {
        shape,
        velocity: Vector2::new(f[3], f[4]),
        start,
        end,
    })
}
