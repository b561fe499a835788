use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::{nearest_neighbor_angles, render_depth_template, sample_so3, ObjectModel, OnboardingError};
use crate::correspondence::io::{read_depth, write_depth};
use crate::correspondence::Template;
use crate::geometry::{geodesic_deg, CameraIntrinsics, Pose, Rotation3};

pub const DEFAULT_TEMPLATE_COUNT: usize = 800;
const INDEX_FILE: &str = "index.txt";

/// Pre-rendered templates over a set of orientations. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateSet {
    templates: Vec<Template>,
    angular_spacing_deg: f64,
}

impl TemplateSet {
    /// Wraps templates; the spacing is their mean nearest-neighbor angle.
    pub fn new(templates: Vec<Template>) -> Result<Self, OnboardingError> {
        if templates.is_empty() {
            return Err(OnboardingError::EmptyTemplateSet);
        }
        let rotations: Vec<Rotation3> = templates.iter().map(|t| t.pose.rotation).collect();
        let angular_spacing_deg = if rotations.len() > 1 {
            let nn = nearest_neighbor_angles(&rotations);
            nn.iter().sum::<f64>() / nn.len() as f64
        } else {
            180.0
        };
        Ok(Self {
            templates,
            angular_spacing_deg,
        })
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn angular_spacing_deg(&self) -> f64 {
        self.angular_spacing_deg
    }

    /// Index of the template whose orientation is geodesically nearest,
    /// with that angle in degrees. Ties go to the lower index.
    pub fn nearest(&self, orientation: &Rotation3) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, t) in self.templates.iter().enumerate() {
            let d = geodesic_deg(&t.pose.rotation, orientation);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// Writes `index.txt` plus one `DEP1` depth grid per template.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), OnboardingError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut index = BufWriter::new(File::create(dir.join(INDEX_FILE))?);
        writeln!(index, "TEMPLATES {} {}", self.templates.len(), self.angular_spacing_deg)?;
        for (i, t) in self.templates.iter().enumerate() {
            let name = format!("tpl_{i:05}.dep");
            let mut f = BufWriter::new(File::create(dir.join(&name))?);
            write_depth(&mut f, t.width(), t.height(), t.depth())?;
            f.flush()?;
            let c = &t.camera;
            write!(index, "{name} {} {} {} {} {} {}", c.fx, c.fy, c.cx, c.cy, c.width, c.height)?;
            for v in t.pose.rotation.to_row_major() {
                write!(index, " {v}")?;
            }
            let tr = t.pose.translation;
            writeln!(index, " {} {} {}", tr.x, tr.y, tr.z)?;
        }
        index.flush()?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, OnboardingError> {
        let dir = dir.as_ref();
        let reader = BufReader::new(File::open(dir.join(INDEX_FILE))?);
        let mut lines = reader.lines();
        let parse_err = |line: usize, message: &str| OnboardingError::Parse {
            line,
            message: message.to_string(),
        };
        let header = lines.next().ok_or_else(|| parse_err(1, "missing header"))??;
        let mut h = header.split_whitespace();
        if h.next() != Some("TEMPLATES") {
            return Err(parse_err(1, "header must start with TEMPLATES"));
        }
        let count: usize = h.next().and_then(|s| s.parse().ok()).ok_or_else(|| parse_err(1, "bad count"))?;
        let spacing: f64 = h.next().and_then(|s| s.parse().ok()).ok_or_else(|| parse_err(1, "bad spacing"))?;

        let mut templates = Vec::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line?;
            let mut f = line.split_whitespace();
            let name = f.next().ok_or_else(|| parse_err(lineno, "missing file name"))?;
            if name.contains('/') || name.contains('\\') || name.starts_with('.') {
                return Err(parse_err(lineno, "template file must be a plain name"));
            }
            let nums: Vec<f64> = f
                .map(str::parse::<f64>)
                .collect::<Result<_, _>>()
                .map_err(|_| parse_err(lineno, "bad number"))?;
            if nums.len() != 18 {
                return Err(parse_err(lineno, "expected camera (6), rotation (9) and translation (3)"));
            }
            let camera = CameraIntrinsics::new(nums[0], nums[1], nums[2], nums[3], nums[4] as u32, nums[5] as u32)?;
            let rot: [f64; 9] = nums[6..15].try_into().expect("nine entries");
            let rotation = Rotation3::from_row_major(&rot)?;
            let pose = Pose::new(rotation, Vector3::new(nums[15], nums[16], nums[17]));
            let (w, hgt, depth) = read_depth(&mut BufReader::new(File::open(dir.join(name))?))?;
            if (w, hgt) != (camera.width, camera.height) {
                return Err(parse_err(lineno, "depth grid size differs from camera"));
            }
            templates.push(Template::new(pose, camera, depth)?);
        }
        if templates.len() != count {
            return Err(parse_err(1, "template count differs from header"));
        }
        if templates.is_empty() {
            return Err(OnboardingError::EmptyTemplateSet);
        }
        Ok(Self {
            templates,
            angular_spacing_deg: spacing,
        })
    }
}

/// Renders one template per `sample_so3(n)` orientation at `distance` mm
/// (default: 2.5 diameters). Templates render in parallel; order follows the
/// sampler.
pub fn build_template_set(
    model: &ObjectModel,
    n: usize,
    cam: &CameraIntrinsics,
    distance: Option<f64>,
) -> Result<TemplateSet, OnboardingError> {
    if n == 0 {
        return Err(OnboardingError::EmptyTemplateSet);
    }
    let distance = distance.unwrap_or(super::DEFAULT_DISTANCE_FACTOR * model.diameter());
    let templates = sample_so3(n)
        .par_iter()
        .map(|r| render_depth_template(model, r, cam, distance))
        .collect::<Result<Vec<_>, _>>()?;
    TemplateSet::new(templates)
}

/// Coarse pose initialization by template retrieval.
pub trait TemplateRetriever {
    type Descriptor;

    fn retrieve(&self, descriptor: &Self::Descriptor, tset: &TemplateSet) -> usize;

    /// Apparent object size in the query relative to the template, if the
    /// descriptor carries that cue.
    fn apparent_scale(&self, _descriptor: &Self::Descriptor) -> Option<f64> {
        None
    }
}

/// Stand-in for learned retrieval: picks the template geodesically nearest
/// to a known orientation.
#[derive(Clone, Copy, Debug, Default)]
pub struct OrientationOracle;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientationQuery {
    /// Object orientation in the query camera frame.
    pub orientation: Rotation3,
    /// Query apparent size over template apparent size.
    pub apparent_scale: Option<f64>,
}

impl TemplateRetriever for OrientationOracle {
    type Descriptor = OrientationQuery;

    fn retrieve(&self, descriptor: &OrientationQuery, tset: &TemplateSet) -> usize {
        tset.nearest(&descriptor.orientation).0
    }

    fn apparent_scale(&self, descriptor: &OrientationQuery) -> Option<f64> {
        descriptor.apparent_scale
    }
}

/// Retrieved template index and its pose; the translation is divided by the
/// apparent-scale cue when one is available (bigger in the image means
/// closer).
pub fn retrieve_coarse<R: TemplateRetriever>(
    retriever: &R,
    descriptor: &R::Descriptor,
    tset: &TemplateSet,
) -> Result<(usize, Pose), OnboardingError> {
    if tset.is_empty() {
        return Err(OnboardingError::EmptyTemplateSet);
    }
    let i = retriever.retrieve(descriptor, tset);
    let mut pose = tset.templates[i].pose;
    if let Some(s) = retriever.apparent_scale(descriptor).filter(|s| *s > 0.0 && s.is_finite()) {
        pose.translation /= s;
    }
    Ok((i, pose))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::onboarding::default_template_camera;

    fn cube_model() -> ObjectModel {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 30.0;
        let pts = (0..600)
            .map(|_| {
                let axis = rng.random_range(0..3);
                let mut p = Vector3::new(rng.random_range(-h..h), rng.random_range(-h..h), rng.random_range(-h..h));
                p[axis] = if rng.random_bool(0.5) { h } else { -h };
                p
            })
            .collect();
        ObjectModel::new(pts, vec![]).unwrap()
    }

    #[test]
    fn exact_orientation_retrieves_its_template() {
        let cam = default_template_camera(64);
        let set = build_template_set(&cube_model(), 50, &cam, None).unwrap();
        for i in [0, 7, 49] {
            let q = OrientationQuery {
                orientation: set.templates()[i].pose.rotation,
                apparent_scale: None,
            };
            let (j, pose) = retrieve_coarse(&OrientationOracle, &q, &set).unwrap();
            assert_eq!(j, i);
            assert_eq!(pose, set.templates()[i].pose);
        }
        let q = OrientationQuery {
            orientation: set.templates()[3].pose.rotation,
            apparent_scale: Some(2.0),
        };
        let (_, pose) = retrieve_coarse(&OrientationOracle, &q, &set).unwrap();
        assert_eq!(pose.translation.z, set.templates()[3].pose.translation.z / 2.0);
    }

    #[test]
    fn spacing_bounds_every_nearest_neighbor() {
        let cam = default_template_camera(16);
        let set = build_template_set(&cube_model(), DEFAULT_TEMPLATE_COUNT, &cam, None).unwrap();
        let rotations: Vec<_> = set.templates().iter().map(|t| t.pose.rotation).collect();
        let worst = nearest_neighbor_angles(&rotations).into_iter().fold(0.0, f64::max);
        assert!(worst <= 1.5 * set.angular_spacing_deg(), "{worst} vs {}", set.angular_spacing_deg());
    }

    #[test]
    fn random_queries_are_within_covering_radius() {
        let rotations = sample_so3(DEFAULT_TEMPLATE_COUNT);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let q = Rotation3::from_quaternion(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let best = rotations.iter().map(|r| geodesic_deg(r, &q)).fold(f64::INFINITY, f64::min);
            assert!(best < 40.0, "{best}");
        }
    }

    #[test]
    fn persistence_round_trips() {
        let cam = default_template_camera(48);
        let set = build_template_set(&cube_model(), 6, &cam, Some(200.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        set.save(dir.path()).unwrap();
        let first = fs::read(dir.path().join(INDEX_FILE)).unwrap();
        let back = TemplateSet::load(dir.path()).unwrap();
        assert_eq!(back.len(), 6);
        assert_eq!(back.angular_spacing_deg(), set.angular_spacing_deg());
        for (a, b) in back.templates().iter().zip(set.templates()) {
            assert_eq!(a.pose, b.pose);
            assert_eq!(a.camera, b.camera);
            // Depth is stored as f32.
            for (x, y) in a.depth().iter().zip(b.depth()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
        set.save(dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join(INDEX_FILE)).unwrap(), first);
    }
}
