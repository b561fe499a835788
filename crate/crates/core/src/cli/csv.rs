use std::io::{self, Read, Write};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{Pose, Rotation3};

pub const POSE_CSV_HEADER: &str = "scene_id,im_id,obj_id,score,R,t,time";
const COLUMNS: [&str; 7] = ["scene_id", "im_id", "obj_id", "score", "R", "t", "time"];

/// Largest Frobenius correction accepted when a parsed rotation is not
/// orthonormal to full precision, e.g. when written with few decimals.
const ORTHONORMALIZE_LIMIT: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One pose estimate in the BOP results layout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseRow {
    pub scene_id: u32,
    pub im_id: u32,
    pub obj_id: u32,
    pub score: f64,
    pub pose: Pose,
    /// Seconds; negative when not recorded.
    pub time: f64,
}

impl PoseRow {
    pub fn new(im_id: u32, score: f64, pose: Pose) -> Self {
        Self {
            scene_id: 0,
            im_id,
            obj_id: 1,
            score,
            pose,
            time: -1.0,
        }
    }
}

/// 17 significant digits, enough for `parse` to restore every bit.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn join(v: impl IntoIterator<Item = f64>) -> String {
    v.into_iter().map(num).collect::<Vec<_>>().join(" ")
}

pub fn write_pose_csv(w: impl Write, rows: &[PoseRow]) -> Result<(), CsvError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(COLUMNS)?;
    for r in rows {
        out.write_record([
            r.scene_id.to_string(),
            r.im_id.to_string(),
            r.obj_id.to_string(),
            num(r.score),
            join(r.pose.rotation.to_row_major()),
            join(r.pose.translation.iter().copied()),
            num(r.time),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn pose_csv_string(rows: &[PoseRow]) -> String {
    let mut buf = Vec::new();
    write_pose_csv(&mut buf, rows).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

fn parse_rotation(v: &[f64; 9]) -> Option<Rotation3> {
    if let Ok(r) = Rotation3::from_row_major(v) {
        return Some(r);
    }
    let m = Matrix3::from_row_slice(v);
    let r = Rotation3::from_matrix_orthonormalized(m).ok()?;
    ((r.matrix() - m).norm() <= ORTHONORMALIZE_LIMIT).then_some(r)
}

/// Reads rows written by `write_pose_csv` or any BOP results file.
pub fn read_pose_csv(r: impl Read) -> Result<Vec<PoseRow>, CsvError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    if reader.headers()?.iter().ne(COLUMNS) {
        return Err(CsvError::Parse {
            line: 1,
            message: format!("expected header `{POSE_CSV_HEADER}`"),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let err = |m: &str| CsvError::Parse {
            line,
            message: m.to_string(),
        };
        let id = |s: &str| s.parse::<u32>().map_err(|_| err("ids must be unsigned integers"));
        let float = |s: &str| s.parse::<f64>().map_err(|_| err("expected a number"));
        let floats = |s: &str, n: usize| -> Result<Vec<f64>, CsvError> {
            let v = s.split_whitespace().map(float).collect::<Result<Vec<_>, _>>()?;
            if v.len() == n {
                Ok(v)
            } else {
                Err(err(&format!("expected {n} numbers")))
            }
        };
        let rot: [f64; 9] = floats(&record[4], 9)?.try_into().expect("nine entries");
        let t = floats(&record[5], 3)?;
        let rotation = parse_rotation(&rot).ok_or_else(|| err("R is not a rotation"))?;
        let translation = Vector3::new(t[0], t[1], t[2]);
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(err("t must be finite"));
        }
        rows.push(PoseRow {
            scene_id: id(&record[0])?,
            im_id: id(&record[1])?,
            obj_id: id(&record[2])?,
            score: float(&record[3])?,
            pose: Pose::new(rotation, translation),
            time: float(&record[6])?,
        });
    }
    Ok(rows)
}
