use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use rayon::prelude::*;

use super::{derive_seed, oracle_f2f_flow, oracle_m2f_flow, OracleError, OracleSequence, SceneSpec};
use crate::correspondence::io::{read_depth, read_flow, read_visibility, write_depth, write_flow, write_visibility};
use crate::correspondence::{FlowField, Template, VisibilityMap};
use crate::geometry::{CameraIntrinsics, CropCamera, Pose, Rotation3};
use crate::onboarding::{render_template, ObjectModel, DEFAULT_SPLAT_RADIUS};
use crate::refine::{FlowProvider, ProviderCapabilities, ProviderError};
use crate::tracking::FrameFlowProvider;

const SCENE_FILE: &str = "scene.txt";
const MODEL_FILE: &str = "model.txt";
const INDEX_FILE: &str = "recording.txt";
const TEMPLATE_STREAM: u64 = 0x74706c;

/// How templates for recorded model-to-frame flow are posed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExportOptions {
    /// Rotation offset of each template from the true pose, degrees.
    pub template_rot_deg: f64,
    /// Translation offset of each template from the true pose, mm.
    pub template_trans_mm: f64,
    pub seed: u64,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self {
            template_rot_deg: 5.0,
            template_trans_mm: 5.0,
            seed: 0,
        }
    }
}

fn frame_name(k: usize, what: &str) -> String {
    format!("frame_{k:05}.{what}")
}

fn create(path: &Path) -> Result<BufWriter<File>, OracleError> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes a sequence for replay without the oracle: the scene and model, and
/// for every frame its true pose, crop, a template rendered at an offset
/// pose with its flow and visibility into that crop, and the flow from the
/// previous frame's crop. Noise follows the scene spec.
pub fn export_sequence(seq: &OracleSequence, dir: &Path, opts: &ExportOptions) -> Result<(), OracleError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(SCENE_FILE), seq.spec.to_text())?;
    seq.model.save(dir.join(MODEL_FILE))?;
    let noise = seq.spec.noise;
    let seed = seq.spec.seed;

    let lines = seq
        .frames
        .par_iter()
        .map(|f| -> Result<String, OracleError> {
            let k = f.index;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[opts.seed, TEMPLATE_STREAM, k as u64]));
            let axis: [f64; 3] = UnitSphere.sample(&mut rng);
            let dir_t: [f64; 3] = UnitSphere.sample(&mut rng);
            let dw = Vector3::from(axis) * opts.template_rot_deg.to_radians() * rng.random_range(0.5..=1.0);
            let dt = Vector3::from(dir_t) * opts.template_trans_mm * rng.random_range(0.5..=1.0);
            let tpl_pose = f.crop.pose_to_crop(&f.gt_pose.perturbed_left(&dw, &dt));
            let tpl = render_template(&seq.model, &tpl_pose, &f.crop.intrinsics, DEFAULT_SPLAT_RADIUS)?;
            let (flow, vis) = oracle_m2f_flow(seq, &tpl, k, &f.crop, &noise, seed)?;

            let mut w = create(&dir.join(frame_name(k, "tpl.dep")))?;
            write_depth(&mut w, tpl.width(), tpl.height(), tpl.depth())?;
            w.flush()?;
            let mut w = create(&dir.join(frame_name(k, "m2f.flw")))?;
            write_flow(&mut w, &flow)?;
            w.flush()?;
            let mut w = create(&dir.join(frame_name(k, "m2f.vis")))?;
            write_visibility(&mut w, &vis)?;
            w.flush()?;
            if k > 0 {
                let prev = &seq.frames[k - 1];
                let f2f = oracle_f2f_flow(seq, k - 1, k, &prev.crop, &f.crop, &noise, seed)?;
                let mut w = create(&dir.join(frame_name(k, "f2f.flw")))?;
                write_flow(&mut w, &f2f)?;
                w.flush()?;
            }

            let c = &f.crop.intrinsics;
            let mut line = format!("FRAME {k} {} {} {} {} {} {}", c.fx, c.fy, c.cx, c.cy, c.width, c.height);
            let rs = f.crop.rotation_to_source.to_row_major();
            for p in [&f.gt_pose, &tpl_pose] {
                for v in p.rotation.to_row_major().iter().chain(p.translation.iter()) {
                    line.push_str(&format!(" {v}"));
                }
            }
            for v in rs {
                line.push_str(&format!(" {v}"));
            }
            Ok(line)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut index = create(&dir.join(INDEX_FILE))?;
    writeln!(index, "RECORDING {}", lines.len())?;
    for l in lines {
        writeln!(index, "{l}")?;
    }
    index.flush()?;
    Ok(())
}

/// Replayed model-to-frame flow. Dictates crop and template per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordedM2f {
    views: Vec<(CropCamera, Template, FlowField, VisibilityMap)>,
}

impl FlowProvider for RecordedM2f {
    fn capabilities(&self) -> ProviderCapabilities {
        ProviderCapabilities {
            concurrent: true,
            recorded: true,
        }
    }

    fn recorded_view(&self, frame_id: usize) -> Option<(CropCamera, Template)> {
        self.views.get(frame_id).map(|(c, t, _, _)| (*c, t.clone()))
    }

    fn estimate(&self, tpl: &Template, _crop: &CropCamera, frame_id: usize) -> Result<(FlowField, VisibilityMap), ProviderError> {
        let (_, rec, flow, vis) = self.views.get(frame_id).ok_or(ProviderError::MissingFrame(frame_id))?;
        if (tpl.width(), tpl.height()) != (rec.width(), rec.height()) {
            return Err(ProviderError::DimensionMismatch {
                expected: (tpl.width(), tpl.height()),
                found: (rec.width(), rec.height()),
            });
        }
        Ok((flow.clone(), vis.clone()))
    }
}

/// Replayed flow between consecutive frames' crops.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordedF2f {
    crops: Vec<CropCamera>,
    /// Entry `k` holds the flow from frame `k - 1` to frame `k`.
    flows: Vec<Option<FlowField>>,
}

impl FrameFlowProvider for RecordedF2f {
    fn capabilities(&self) -> ProviderCapabilities {
        ProviderCapabilities {
            concurrent: true,
            recorded: true,
        }
    }

    fn recorded_crop(&self, frame_id: usize) -> Option<CropCamera> {
        self.crops.get(frame_id).copied()
    }

    fn estimate_frame_flow(&self, from: usize, _crop_from: &CropCamera, to: usize, _crop_to: &CropCamera) -> Result<FlowField, ProviderError> {
        if to != from + 1 {
            return Err(ProviderError::Failed(format!("only consecutive frames are recorded, asked {from} -> {to}")));
        }
        self.flows
            .get(to)
            .and_then(|f| f.clone())
            .ok_or(ProviderError::MissingFrame(to))
    }
}

/// A loaded recording.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub spec: SceneSpec,
    pub model: ObjectModel,
    pub gt_poses: Vec<Pose>,
    pub m2f: RecordedM2f,
    pub f2f: RecordedF2f,
}

fn parse_pose(v: &[f64]) -> Result<Pose, OracleError> {
    let r: [f64; 9] = v[..9].try_into().expect("nine entries");
    Ok(Pose::new(Rotation3::from_row_major(&r)?, Vector3::new(v[9], v[10], v[11])))
}

/// Reads a directory written by `export_sequence`.
pub fn load_recording(dir: &Path) -> Result<Recording, OracleError> {
    let spec = SceneSpec::parse(&fs::read_to_string(dir.join(SCENE_FILE))?)?;
    let model = ObjectModel::load(dir.join(MODEL_FILE))?;
    let reader = BufReader::new(File::open(dir.join(INDEX_FILE))?);
    let mut lines = reader.lines();
    let err = |line: usize, message: &str| OracleError::Parse {
        line,
        message: message.to_string(),
    };
    let header = lines.next().ok_or_else(|| err(1, "missing header"))??;
    let count: usize = header
        .strip_prefix("RECORDING ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| err(1, "expected `RECORDING <frames>`"))?;

    let mut gt_poses = Vec::with_capacity(count);
    let mut views = Vec::with_capacity(count);
    let mut crops = Vec::with_capacity(count);
    let mut flows = Vec::with_capacity(count);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        let mut f = line.split_whitespace();
        if f.next() != Some("FRAME") || f.next().and_then(|s| s.parse::<usize>().ok()) != Some(i) {
            return Err(err(lineno, "expected `FRAME <index>` in order"));
        }
        let nums: Vec<f64> = f
            .map(str::parse::<f64>)
            .collect::<Result<_, _>>()
            .map_err(|_| err(lineno, "bad number"))?;
        if nums.len() != 6 + 12 + 12 + 9 {
            return Err(err(lineno, "expected crop camera (6), true pose (12), template pose (12), crop rotation (9)"));
        }
        let intrinsics = CameraIntrinsics::new(nums[0], nums[1], nums[2], nums[3], nums[4] as u32, nums[5] as u32)?;
        let gt = parse_pose(&nums[6..18])?;
        let tpl_pose = parse_pose(&nums[18..30])?;
        let rs: [f64; 9] = nums[30..39].try_into().expect("nine entries");
        let crop = CropCamera {
            intrinsics,
            rotation_to_source: Rotation3::from_row_major(&rs)?,
            source: spec.camera,
        };
        let open = |what: &str| -> Result<BufReader<File>, OracleError> { Ok(BufReader::new(File::open(dir.join(frame_name(i, what)))?)) };
        let (w, h, depth) = read_depth(&mut open("tpl.dep")?)?;
        if (w, h) != (intrinsics.width, intrinsics.height) {
            return Err(err(lineno, "template size differs from crop"));
        }
        let tpl = Template::new(tpl_pose, intrinsics, depth)?;
        let flow = read_flow(&mut open("m2f.flw")?)?;
        let vis = read_visibility(&mut open("m2f.vis")?)?;
        if flow.dims() != (w, h) || vis.dims() != (w, h) {
            return Err(err(lineno, "flow size differs from template"));
        }
        flows.push(if i > 0 { Some(read_flow(&mut open("f2f.flw")?)?) } else { None });
        gt_poses.push(gt);
        crops.push(crop);
        views.push((crop, tpl, flow, vis));
    }
    if gt_poses.len() != count {
        return Err(err(1, "frame count differs from header"));
    }
    Ok(Recording {
        spec,
        model,
        gt_poses,
        m2f: RecordedM2f { views },
        f2f: RecordedF2f { crops, flows },
    })
}
