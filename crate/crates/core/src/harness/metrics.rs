use serde::{Deserialize, Serialize};

use crate::error::{EtaError, Result};
use crate::geometry::{angle_diff, rect_iou, GraspRect};

pub const IOU_THRESHOLD: f64 = 0.25;
pub const ANGLE_THRESHOLD_DEG: f64 = 30.0;

/// Rectangle-metric verdict against the best-matching ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessJudgment {
    pub iou: f64,
    pub angle_deg: f64,
    pub success: bool,
}

impl SuccessJudgment {
    pub fn from_measures(iou: f64, angle_deg: f64) -> Self {
        Self {
            iou,
            angle_deg,
            success: iou > IOU_THRESHOLD && angle_deg < ANGLE_THRESHOLD_DEG,
        }
    }
}

/// Successful when some ground truth overlaps by more than 0.25 IoU with an
/// orientation gap under 30 degrees. Reports the successful match with the
/// largest IoU, or failing that the ground truth with the largest IoU.
pub fn judge(pred: &GraspRect, gts: &[GraspRect]) -> Result<SuccessJudgment> {
    let mut best: Option<SuccessJudgment> = None;
    for gt in gts {
        let iou = match rect_iou(pred, gt) {
            Ok(v) => v,
            Err(EtaError::DegenerateRectangles) => 0.0,
            Err(e) => return Err(e),
        };
        let angle = angle_diff(pred.phi, gt.phi)?.to_degrees();
        let j = SuccessJudgment::from_measures(iou, angle);
        let better = match best {
            None => true,
            Some(b) => (j.success, j.iou) > (b.success, b.iou),
        };
        if better {
            best = Some(j);
        }
    }
    best.ok_or(EtaError::EmptyDataset)
}

/// Execution efficiency, `100 / SG` percent.
pub fn ee(steps: usize) -> Result<f64> {
    if steps == 0 {
        return Err(EtaError::InvalidStepCount);
    }
    Ok(100.0 / steps as f64)
}
