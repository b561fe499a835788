use nalgebra::Vector2;

use super::CorrespondenceError;

/// Dense per-pixel 2D displacement field over a crop or template grid.
/// Invalid pixels always carry a zero vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: u32,
    height: u32,
    vectors: Vec<Vector2<f64>>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn new(width: u32, height: u32, vectors: Vec<Vector2<f64>>, valid: Vec<bool>) -> Result<Self, CorrespondenceError> {
        let n = width as usize * height as usize;
        if vectors.len() != n || valid.len() != n {
            return Err(CorrespondenceError::DimensionMismatch {
                expected: (width, height),
                found: (vectors.len().min(valid.len()) as u32, 1),
            });
        }
        let mut field = Self {
            width,
            height,
            vectors,
            valid,
        };
        for (v, ok) in field.vectors.iter_mut().zip(&field.valid) {
            if !*ok || !v.iter().all(|c| c.is_finite()) {
                *v = Vector2::zeros();
            }
        }
        for i in 0..n {
            if !field.vectors[i].iter().all(|c| c.is_finite()) {
                field.valid[i] = false;
            }
        }
        Ok(field)
    }

    /// Every pixel valid with zero displacement.
    pub fn zeros(width: u32, height: u32) -> Self {
        Self::constant(width, height, Vector2::zeros())
    }

    pub fn constant(width: u32, height: u32, v: Vector2<f64>) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            vectors: vec![v; n],
            valid: vec![true; n],
        }
    }

    /// Every pixel invalid.
    pub fn invalid(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            vectors: vec![Vector2::zeros(); n],
            valid: vec![false; n],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn vectors(&self) -> &[Vector2<f64>] {
        &self.vectors
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, x: u32, y: u32) -> Option<Vector2<f64>> {
        let i = self.index(x, y)?;
        self.valid[i].then_some(self.vectors[i])
    }

    pub fn set(&mut self, x: u32, y: u32, v: Option<Vector2<f64>>) {
        if let Some(i) = self.index(x, y) {
            match v {
                Some(v) if v.iter().all(|c| c.is_finite()) => {
                    self.vectors[i] = v;
                    self.valid[i] = true;
                }
                _ => {
                    self.vectors[i] = Vector2::zeros();
                    self.valid[i] = false;
                }
            }
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Bilinear lookup at a sub-pixel location. Returns `None` unless all
    /// four neighbouring pixels are valid.
    pub fn sample_bilinear(&self, u: &Vector2<f64>) -> Option<Vector2<f64>> {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(u.x >= 0.0 && u.y >= 0.0 && u.x <= w - 1.0 && u.y <= h - 1.0) {
            return None;
        }
        let x0 = (u.x.floor() as u32).min(self.width - 1);
        let y0 = (u.y.floor() as u32).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = if x1 == x0 { 0.0 } else { u.x - x0 as f64 };
        let fy = if y1 == y0 { 0.0 } else { u.y - y0 as f64 };
        let v00 = self.get(x0, y0)?;
        let v10 = self.get(x1, y0)?;
        let v01 = self.get(x0, y1)?;
        let v11 = self.get(x1, y1)?;
        // Nested lerps reproduce constant fields exactly.
        let top = v00 + (v10 - v00) * fx;
        let bottom = v01 + (v11 - v01) * fx;
        Some(top + (bottom - top) * fy)
    }

    fn index(&self, x: u32, y: u32) -> Option<usize> {
        (x < self.width && y < self.height).then(|| y as usize * self.width as usize + x as usize)
    }
}

/// Per-pixel likelihood in `[0, 1]` that a pixel's correspondent is visible.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl VisibilityMap {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self, CorrespondenceError> {
        if values.len() != width as usize * height as usize {
            return Err(CorrespondenceError::DimensionMismatch {
                expected: (width, height),
                found: (values.len() as u32, 1),
            });
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CorrespondenceError::ValueOutOfRange(*bad));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value.clamp(0.0, 1.0); width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        let w = self.width as usize;
        self.values[y as usize * w + x as usize] = v.clamp(0.0, 1.0);
    }
}
