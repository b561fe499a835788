use super::OracleError;
use crate::correspondence::{FlowField, VisibilityMap};

/// Predicted visibilities are clamped to `[BCE_EPS, 1 - BCE_EPS]`.
pub const BCE_EPS: f64 = 1e-7;

/// Mask-averaged loss and its two parts; `total = bce + flow`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub bce: f64,
    pub flow: f64,
}

/// Refiner training loss over the template pixels selected by `mask`
/// (row-major, template size): binary cross-entropy between predicted and
/// true visibility plus the L1 flow error weighted by the true visibility.
/// Flow vectors are compared as stored, valid or not.
pub fn refiner_loss(
    pred_flow: &FlowField,
    pred_vis: &VisibilityMap,
    gt_flow: &FlowField,
    gt_vis: &VisibilityMap,
    mask: &[bool],
) -> Result<LossTerms, OracleError> {
    let expected = pred_flow.dims();
    for found in [pred_vis.dims(), gt_flow.dims(), gt_vis.dims()] {
        if found != expected {
            return Err(OracleError::DimensionMismatch { expected, found });
        }
    }
    if mask.len() != expected.0 as usize * expected.1 as usize {
        return Err(OracleError::DimensionMismatch {
            expected,
            found: (mask.len() as u32, 1),
        });
    }
    let (pf, gf) = (pred_flow.vectors(), gt_flow.vectors());
    let (pv, gv) = (pred_vis.values(), gt_vis.values());
    let (mut bce, mut flow, mut n) = (0.0, 0.0, 0usize);
    for i in (0..mask.len()).filter(|&i| mask[i]) {
        let p = pv[i].clamp(BCE_EPS, 1.0 - BCE_EPS);
        let g = gv[i];
        bce -= g * p.ln() + (1.0 - g) * (1.0 - p).ln();
        if g > 0.0 {
            let d = pf[i] - gf[i];
            flow += g * (d.x.abs() + d.y.abs());
        }
        n += 1;
    }
    if n == 0 {
        return Err(OracleError::EmptyMask);
    }
    let (bce, flow) = (bce / n as f64, flow / n as f64);
    Ok(LossTerms {
        total: bce + flow,
        bce,
        flow,
    })
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector2;

    use super::*;

    fn vis_pattern(w: u32, h: u32) -> VisibilityMap {
        let v = (0..w * h).map(|i| if i % 3 == 0 { 0.0 } else { 1.0 }).collect();
        VisibilityMap::new(w, h, v).unwrap()
    }

    #[test]
    fn exact_prediction_sits_at_the_clamp_floor() {
        let gt_flow = FlowField::constant(6, 5, Vector2::new(2.0, -1.0));
        let gt_vis = vis_pattern(6, 5);
        let mask = vec![true; 30];
        let l = refiner_loss(&gt_flow, &gt_vis, &gt_flow, &gt_vis, &mask).unwrap();
        let floor = -(1.0 - BCE_EPS).ln();
        assert_eq!(l.flow, 0.0);
        assert!(l.bce <= floor + 1e-18, "{}", l.bce);
    }

    #[test]
    fn unit_offset_costs_two_per_visible_pixel() {
        let gt_flow = FlowField::zeros(6, 5);
        let pred = FlowField::constant(6, 5, Vector2::new(1.0, 1.0));
        let gt_vis = vis_pattern(6, 5);
        let mask = vec![true; 30];
        let l = refiner_loss(&pred, &gt_vis, &gt_flow, &gt_vis, &mask).unwrap();
        let visible = gt_vis.values().iter().filter(|v| **v == 1.0).count() as f64 / 30.0;
        assert!((l.flow - 2.0 * visible).abs() < 1e-12);
    }

    #[test]
    fn invisible_ground_truth_ignores_flow() {
        let pred = FlowField::constant(4, 4, Vector2::new(40.0, -7.0));
        let gt_vis = VisibilityMap::filled(4, 4, 0.0);
        let l = refiner_loss(&pred, &gt_vis, &FlowField::zeros(4, 4), &gt_vis, &[true; 16]).unwrap();
        assert_eq!(l.flow, 0.0);
    }

    #[test]
    fn shape_and_mask_errors() {
        let a = FlowField::zeros(4, 4);
        let v = VisibilityMap::filled(4, 4, 0.5);
        let b = FlowField::zeros(4, 3);
        assert!(matches!(refiner_loss(&a, &v, &b, &v, &[true; 16]), Err(OracleError::DimensionMismatch { .. })));
        assert!(matches!(refiner_loss(&a, &v, &a, &v, &[true; 15]), Err(OracleError::DimensionMismatch { .. })));
        assert!(matches!(refiner_loss(&a, &v, &a, &v, &[false; 16]), Err(OracleError::EmptyMask)));
    }
}
