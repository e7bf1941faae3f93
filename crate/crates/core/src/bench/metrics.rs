use super::BenchError;
use crate::scene::Mask;

fn check(pred: &Mask, gt: &Mask) -> Result<(), BenchError> {
    if pred.same_shape(gt) {
        Ok(())
    } else {
        Err(BenchError::DimensionMismatch(format!(
            "view {}: prediction is {}x{}, ground truth is {}x{}",
            gt.view_id, pred.width, pred.height, gt.width, gt.height
        )))
    }
}

/// Intersection over union; two empty masks agree perfectly.
pub fn iou(pred: &Mask, gt: &Mask) -> Result<f64, BenchError> {
    check(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, g) in pred.bits.iter().zip(&gt.bits) {
        inter += usize::from(*p && *g);
        union += usize::from(*p || *g);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Fraction of pixels on which the masks agree.
pub fn pixel_accuracy(pred: &Mask, gt: &Mask) -> Result<f64, BenchError> {
    check(pred, gt)?;
    let agree = pred.bits.iter().zip(&gt.bits).filter(|(p, g)| p == g).count();
    Ok(agree as f64 / gt.bits.len().max(1) as f64)
}

/// Mean IoU and mean pixel accuracy over paired views.
pub fn miou_macc(pred: &[Mask], gt: &[Mask]) -> Result<(f64, f64), BenchError> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(BenchError::DimensionMismatch(format!(
            "{} predicted masks for {} ground-truth masks",
            pred.len(),
            gt.len()
        )));
    }
    let (mut si, mut sa) = (0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        si += iou(p, g)?;
        sa += pixel_accuracy(p, g)?;
    }
    let n = gt.len() as f64;
    Ok((si / n, sa / n))
}
