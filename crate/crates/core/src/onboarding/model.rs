use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::OnboardingError;
use crate::geometry::{Pose, Rotation3};
use crate::pnp::is_planar;

/// Surface samples of a rigid object in its model frame (mm), with the
/// object's symmetry transforms. The identity is always the first symmetry.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectModel {
    points: Vec<Vector3<f64>>,
    symmetries: Vec<Pose>,
    diameter: f64,
}

impl ObjectModel {
    /// Builds a model and computes its diameter as the largest pairwise
    /// point distance.
    pub fn new(points: Vec<Vector3<f64>>, symmetries: Vec<Pose>) -> Result<Self, OnboardingError> {
        let diameter = max_pairwise_distance(&points);
        Self::with_diameter(points, symmetries, diameter)
    }

    pub fn with_diameter(points: Vec<Vector3<f64>>, symmetries: Vec<Pose>, diameter: f64) -> Result<Self, OnboardingError> {
        if points.len() < 4 {
            return Err(OnboardingError::TooFewPoints(points.len()));
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(OnboardingError::InvalidModel("non-finite point"));
        }
        if is_planar(&points) {
            return Err(OnboardingError::InvalidModel("points are coplanar"));
        }
        if !(diameter > 0.0 && diameter.is_finite()) {
            return Err(OnboardingError::InvalidModel("diameter must be positive"));
        }
        let mut syms = Vec::with_capacity(symmetries.len() + 1);
        syms.push(Pose::identity());
        for s in symmetries {
            if !s.is_finite() {
                return Err(OnboardingError::InvalidModel("non-finite symmetry"));
            }
            let (rot, trans) = s.distance_to(&Pose::identity());
            if rot > 1e-9 || trans > 1e-9 {
                syms.push(s);
            }
        }
        Ok(Self {
            points,
            symmetries: syms,
            diameter,
        })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn symmetries(&self) -> &[Pose] {
        &self.symmetries
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Axis-aligned bounds `(min, max)` of the point set.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OnboardingError> {
        read_model(BufReader::new(File::open(path)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), OnboardingError> {
        let mut w = BufWriter::new(File::create(path)?);
        write_model(&mut w, self)?;
        w.flush()?;
        Ok(())
    }
}

fn max_pairwise_distance(points: &[Vector3<f64>]) -> f64 {
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            points[i + 1..]
                .iter()
                .map(|q| (points[i] - q).norm_squared())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
        .sqrt()
}

/// Writes the `OBJPTS` text format. Floats use the shortest representation
/// that round-trips exactly.
pub fn write_model(w: &mut impl Write, model: &ObjectModel) -> io::Result<()> {
    writeln!(w, "OBJPTS {} {}", model.points.len(), model.diameter)?;
    for p in &model.points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    for s in &model.symmetries[1..] {
        let r = s.rotation.to_row_major();
        let t = s.translation;
        write!(w, "SYM")?;
        for v in r.iter().take(3) {
            write!(w, " {v}")?;
        }
        write!(w, " {}", t.x)?;
        for v in &r[3..6] {
            write!(w, " {v}")?;
        }
        write!(w, " {}", t.y)?;
        for v in &r[6..9] {
            write!(w, " {v}")?;
        }
        writeln!(w, " {}", t.z)?;
    }
    Ok(())
}

fn parse_floats(line: &str, lineno: usize, expected: usize) -> Result<Vec<f64>, OnboardingError> {
    let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
    match vals {
        Ok(v) if v.len() == expected => Ok(v),
        _ => Err(OnboardingError::Parse {
            line: lineno,
            message: format!("expected {expected} numbers"),
        }),
    }
}

/// Parses the `OBJPTS` format: a header `OBJPTS <count> <diameter_mm>`, then
/// `count` lines of `x y z`, then optional `SYM` lines of a row-major 3x4
/// `[R | t]`. Blank lines and `#` comments are ignored.
pub fn read_model(r: impl BufRead) -> Result<ObjectModel, OnboardingError> {
    let mut lines = r
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty() && !s.trim_start().starts_with('#')).unwrap_or(true));

    let (lineno, header) = lines.next().ok_or(OnboardingError::Parse {
        line: 0,
        message: "missing header".into(),
    })?;
    let header = header?;
    let mut fields = header.split_whitespace();
    let bad_header = || OnboardingError::Parse {
        line: lineno,
        message: "header must be `OBJPTS <count> <diameter_mm>`".into(),
    };
    if fields.next() != Some("OBJPTS") {
        return Err(bad_header());
    }
    let count: usize = fields.next().and_then(|s| s.parse().ok()).ok_or_else(bad_header)?;
    let diameter: f64 = fields.next().and_then(|s| s.parse().ok()).ok_or_else(bad_header)?;
    if fields.next().is_some() {
        return Err(bad_header());
    }

    let mut points = Vec::with_capacity(count);
    let mut symmetries = Vec::new();
    for (lineno, line) in lines {
        let line = line?;
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("SYM") {
            let v = parse_floats(rest, lineno, 12)?;
            let rot = Rotation3::from_row_major(&[v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]]).map_err(|_| {
                OnboardingError::Parse {
                    line: lineno,
                    message: "symmetry rotation is not orthonormal".into(),
                }
            })?;
            symmetries.push(Pose::new(rot, Vector3::new(v[3], v[7], v[11])));
        } else {
            if !symmetries.is_empty() {
                return Err(OnboardingError::Parse {
                    line: lineno,
                    message: "point after SYM lines".into(),
                });
            }
            let v = parse_floats(line, lineno, 3)?;
            points.push(Vector3::new(v[0], v[1], v[2]));
        }
    }
    if points.len() != count {
        return Err(OnboardingError::Parse {
            line: 0,
            message: format!("header declares {count} points, found {}", points.len()),
        });
    }
    ObjectModel::with_diameter(points, symmetries, diameter)
}
