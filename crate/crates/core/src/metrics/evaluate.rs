use std::io::Write;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::hausdorff::hd95;
use super::mask::LabelMask;
use super::overlap::{acc_sen_sp, AccSenSp, OverlapCounts};

/// Per-class logits to labels: channel argmax with ties going to the lowest
/// class; a single channel is thresholded at logit 0.
pub fn argmax_labels<T: Scalar>(logits: &Tensor<T>) -> Vec<LabelMask> {
    let s = logits.shape();
    let (c, plane) = (s.c(), s.plane());
    (0..s.n())
        .map(|n| {
            let base = n * c * plane;
            let data = (0..plane)
                .map(|i| {
                    if c == 1 {
                        return (logits.data()[base + i] > T::zero()) as u8;
                    }
                    let mut best = 0;
                    let mut best_v = logits.data()[base + i];
                    for k in 1..c {
                        let v = logits.data()[base + k * plane + i];
                        if v > best_v {
                            best = k;
                            best_v = v;
                        }
                    }
                    best as u8
                })
                .collect();
            LabelMask {
                h: s.h(),
                w: s.w(),
                data,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseMetrics {
    pub dice: Vec<f64>,
    pub iou: Vec<f64>,
    /// `None` where the class is absent from truth or prediction.
    pub hd95: Vec<Option<f64>>,
    pub rates: AccSenSp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub classes: usize,
    pub cases: Vec<CaseMetrics>,
    pub per_class_dice: Vec<f64>,
    pub per_class_iou: Vec<f64>,
    pub per_class_hd95: Vec<Option<f64>>,
    /// Foreground mean DICE (background excluded).
    pub mean_dice: f64,
    /// Foreground mean IoU (background excluded).
    pub miou: f64,
    pub mean_hd95: Option<f64>,
    pub acc: Option<f64>,
    pub sen: Option<f64>,
    pub sp: Option<f64>,
}

fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.into_iter().flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

impl MetricsReport {
    pub const CONVENTIONS: &'static str =
        "argmax ties -> lowest class; means exclude background and undefined entries; \
HD95 = nearest-rank 95th percentile per directed set, max of both, per case then averaged; \
Acc/Sen/Sp treat any non-zero label as foreground";

    fn foreground(&self) -> std::ops::Range<usize> {
        if self.classes > 1 {
            1..self.classes
        } else {
            0..self.classes
        }
    }
}

/// Scores predicted logits `(n, c, h, w)` against `truth`. A single logit
/// channel is treated as a binary task with two classes.
pub fn evaluate<T: Scalar>(logits: &Tensor<T>, truth: &[LabelMask]) -> Result<MetricsReport> {
    let s = logits.shape();
    if truth.len() != s.n() {
        return Err(Error::InvalidArgument(format!(
            "{} truth masks for a batch of {}",
            truth.len(),
            s.n()
        )));
    }
    let classes = s.c().max(2);
    let preds = argmax_labels(logits);
    let mut cases = Vec::with_capacity(truth.len());
    for (y, p) in truth.iter().zip(&preds) {
        if (y.h, y.w) != (p.h, p.w) {
            return Err(Error::InvalidArgument(format!(
                "truth mask {}x{} vs prediction {}x{}",
                y.h, y.w, p.h, p.w
            )));
        }
        y.check_classes(classes)?;
        cases.push(score_case(y, p, classes));
    }
    Ok(summarize(cases, classes))
}

fn score_case(y: &LabelMask, p: &LabelMask, classes: usize) -> CaseMetrics {
    let mut m = CaseMetrics {
        dice: Vec::with_capacity(classes),
        iou: Vec::with_capacity(classes),
        hd95: Vec::with_capacity(classes),
        rates: acc_sen_sp(y, p),
    };
    for class in 0..classes as u8 {
        let counts = OverlapCounts::of(y, p, class);
        m.dice.push(counts.dice());
        m.iou.push(counts.iou());
        m.hd95.push(hd95(y, p, class));
    }
    m
}

fn summarize(cases: Vec<CaseMetrics>, classes: usize) -> MetricsReport {
    let n = cases.len().max(1) as f64;
    let per_class_dice: Vec<f64> = (0..classes)
        .map(|k| cases.iter().map(|c| c.dice[k]).sum::<f64>() / n)
        .collect();
    let per_class_iou: Vec<f64> = (0..classes)
        .map(|k| cases.iter().map(|c| c.iou[k]).sum::<f64>() / n)
        .collect();
    let per_class_hd95: Vec<Option<f64>> = (0..classes)
        .map(|k| mean_defined(cases.iter().map(|c| c.hd95[k])))
        .collect();
    let mut report = MetricsReport {
        classes,
        per_class_dice,
        per_class_iou,
        per_class_hd95,
        mean_dice: 0.0,
        miou: 0.0,
        mean_hd95: None,
        acc: mean_defined(cases.iter().map(|c| c.rates.acc)),
        sen: mean_defined(cases.iter().map(|c| c.rates.sen)),
        sp: mean_defined(cases.iter().map(|c| c.rates.sp)),
        cases,
    };
    let fg = report.foreground();
    let k = fg.len() as f64;
    report.mean_dice = report.per_class_dice[fg.clone()].iter().sum::<f64>() / k;
    report.miou = report.per_class_iou[fg.clone()].iter().sum::<f64>() / k;
    report.mean_hd95 = mean_defined(report.per_class_hd95[fg].iter().copied());
    report
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"))
}

/// CSV `sample,class,dice,iou,hd95`, one row per sample and class, then a
/// `mean,foreground,...` summary row.
pub fn write_eval_csv<W: Write>(report: &MetricsReport, mut out: W) -> Result<()> {
    writeln!(out, "sample,class,dice,iou,hd95")?;
    for (i, case) in report.cases.iter().enumerate() {
        for k in 0..report.classes {
            writeln!(
                out,
                "{i},{k},{:.6},{:.6},{}",
                case.dice[k],
                case.iou[k],
                opt(case.hd95[k])
            )?;
        }
    }
    writeln!(
        out,
        "mean,foreground,{:.6},{:.6},{}",
        report.mean_dice,
        report.miou,
        opt(report.mean_hd95)
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn one_hot_logits(masks: &[LabelMask], classes: usize) -> Tensor<f64> {
        let (h, w) = (masks[0].h, masks[0].w);
        Tensor::from_fn(Shape::new(masks.len(), classes, h, w), |[n, c, r, col]| {
            if masks[n].get(r, col) as usize == c {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn perfect_prediction() {
        let mut y = LabelMask::zeros(6, 6);
        y.set(1, 1, 1);
        y.set(4, 4, 2);
        let r = evaluate(&one_hot_logits(&[y.clone()], 3), &[y]).unwrap();
        assert_eq!(r.mean_dice, 100.0);
        assert_eq!(r.miou, 100.0);
        assert_eq!(r.mean_hd95, Some(0.0));
    }

    #[test]
    fn uniform_logits_pick_background() {
        let mut y = LabelMask::zeros(4, 4);
        y.set(0, 0, 1);
        let logits = Tensor::<f64>::zeros(Shape::new(1, 2, 4, 4));
        assert_eq!(argmax_labels(&logits)[0], LabelMask::zeros(4, 4));
        let r = evaluate(&logits, &[y]).unwrap();
        assert_eq!(r.mean_dice, 0.0);
        assert_eq!(r.per_class_hd95[1], None);
    }

    #[test]
    fn hand_fixture_two_classes() {
        // truth: left half foreground; prediction: left three columns
        let y = LabelMask::new(4, 4, (0..16).map(|i| (i % 4 < 2) as u8).collect()).unwrap();
        let p = LabelMask::new(4, 4, (0..16).map(|i| (i % 4 < 3) as u8).collect()).unwrap();
        let r = evaluate(&one_hot_logits(&[p], 2), &[y]).unwrap();
        // fg: |Y|=8, |P|=12, overlap 8 -> dice 80, iou 66.67
        assert!((r.per_class_dice[1] - 80.0).abs() < 1e-12);
        assert!((r.per_class_iou[1] - 200.0 / 3.0).abs() < 1e-12);
        // bg: |Y|=8, |P|=4, overlap 4 -> dice 66.67
        assert!((r.per_class_dice[0] - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.mean_dice, r.per_class_dice[1]);
        assert_eq!(r.per_class_hd95[1], Some(1.0));
        assert_eq!(r.sen, Some(100.0));
        assert_eq!(r.sp, Some(50.0));
        assert_eq!(r.acc, Some(75.0));
    }

    #[test]
    fn binary_single_channel() {
        let y = LabelMask::new(1, 2, vec![1, 0]).unwrap();
        let logits = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![2.0, -1.0]).unwrap();
        let r = evaluate(&logits, &[y]).unwrap();
        assert_eq!(r.classes, 2);
        assert_eq!(r.mean_dice, 100.0);
    }

    #[test]
    fn csv_layout() {
        let y = LabelMask::new(1, 2, vec![1, 0]).unwrap();
        let logits = Tensor::from_vec(Shape::new(1, 2, 1, 2), vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let r = evaluate(&logits, &[y]).unwrap();
        let mut buf = Vec::new();
        write_eval_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sample,class,dice,iou,hd95");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("mean,foreground,100.000000"));
    }
}
