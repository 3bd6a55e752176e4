//! Segmentation metrics: DICE, IoU, Hausdorff distances and binary
//! confusion rates, plus whole-batch evaluation.

mod evaluate;
mod hausdorff;
mod mask;
mod overlap;

pub use evaluate::{argmax_labels, evaluate, write_eval_csv, CaseMetrics, MetricsReport};
pub use hausdorff::{hd100, hd95, nearest_rank, squared_distance_map};
pub use mask::LabelMask;
pub use overlap::{acc_sen_sp, dice_score, iou_score, AccSenSp, OverlapCounts};
