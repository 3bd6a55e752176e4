use super::mask::LabelMask;

/// Pixel counts of one class: |Y|, |Ŷ| and |Y ∩ Ŷ|.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OverlapCounts {
    pub truth: u64,
    pub pred: u64,
    pub both: u64,
}

impl OverlapCounts {
    pub fn of(truth: &LabelMask, pred: &LabelMask, class: u8) -> Self {
        assert_eq!((truth.h, truth.w), (pred.h, pred.w), "mask shapes differ");
        let mut c = OverlapCounts::default();
        for (&y, &p) in truth.data.iter().zip(&pred.data) {
            let (y, p) = (y == class, p == class);
            c.truth += y as u64;
            c.pred += p as u64;
            c.both += (y && p) as u64;
        }
        c
    }

    pub fn union(&self) -> u64 {
        self.truth + self.pred - self.both
    }

    /// DICE in percent; 100 when both sets are empty.
    pub fn dice(&self) -> f64 {
        let denom = self.truth + self.pred;
        if denom == 0 {
            return 100.0;
        }
        2.0 * self.both as f64 / denom as f64 * 100.0
    }

    /// IoU in percent; 100 when both sets are empty.
    pub fn iou(&self) -> f64 {
        let u = self.union();
        if u == 0 {
            return 100.0;
        }
        self.both as f64 / u as f64 * 100.0
    }
}

pub fn dice_score(truth: &LabelMask, pred: &LabelMask, class: u8) -> f64 {
    OverlapCounts::of(truth, pred, class).dice()
}

pub fn iou_score(truth: &LabelMask, pred: &LabelMask, class: u8) -> f64 {
    OverlapCounts::of(truth, pred, class).iou()
}

/// Binary confusion-matrix rates in percent, foreground = any non-zero label.
/// `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccSenSp {
    pub acc: Option<f64>,
    pub sen: Option<f64>,
    pub sp: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64 * 100.0)
}

pub fn acc_sen_sp(truth: &LabelMask, pred: &LabelMask) -> AccSenSp {
    assert_eq!((truth.h, truth.w), (pred.h, pred.w), "mask shapes differ");
    let (mut tp, mut tn, mut fp, mut fneg) = (0u64, 0u64, 0u64, 0u64);
    for (&y, &p) in truth.data.iter().zip(&pred.data) {
        match (y != 0, p != 0) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
            (true, false) => fneg += 1,
        }
    }
    AccSenSp {
        acc: ratio(tp + tn, tp + tn + fp + fneg),
        sen: ratio(tp, tp + fneg),
        sp: ratio(tn, tn + fp),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(h: usize, w: usize, on: &[usize]) -> LabelMask {
        let mut m = LabelMask::zeros(h, w);
        for &i in on {
            m.data[i] = 1;
        }
        m
    }

    #[test]
    fn dice_examples() {
        let a = mask(4, 4, &[0, 1, 2, 3]);
        assert_eq!(dice_score(&a, &a, 1), 100.0);
        let b = mask(4, 4, &[8, 9]);
        assert_eq!(dice_score(&a, &b, 1), 0.0);
        let c = mask(4, 4, &[2, 3, 4, 5]);
        assert_eq!(dice_score(&a, &c, 1), 50.0);
        let e = LabelMask::zeros(4, 4);
        assert_eq!(dice_score(&e, &e, 1), 100.0);
        assert_eq!(dice_score(&e, &a, 1), 0.0);
    }

    #[test]
    fn iou_examples() {
        let a = mask(4, 4, &[0, 1, 2, 3]);
        let c = mask(4, 4, &[2, 3, 4, 5]);
        assert!((iou_score(&a, &c, 1) - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn confusion_rates() {
        let truth = mask(2, 2, &[0, 1]);
        let perfect = acc_sen_sp(&truth, &truth);
        assert_eq!(
            (perfect.acc, perfect.sen, perfect.sp),
            (Some(100.0), Some(100.0), Some(100.0))
        );
        let r = acc_sen_sp(&truth, &LabelMask::zeros(2, 2));
        assert_eq!((r.acc, r.sen, r.sp), (Some(50.0), Some(0.0), Some(100.0)));
        let none = acc_sen_sp(&LabelMask::zeros(2, 2), &LabelMask::zeros(2, 2));
        assert_eq!(none.sen, None);
    }

    proptest! {
        #[test]
        fn symmetric_and_consistent(a in proptest::collection::vec(0u8..3, 36), b in proptest::collection::vec(0u8..3, 36)) {
            let a = LabelMask::new(6, 6, a).unwrap();
            let b = LabelMask::new(6, 6, b).unwrap();
            for class in 0..3 {
                prop_assert_eq!(dice_score(&a, &b, class), dice_score(&b, &a, class));
                let d = dice_score(&a, &b, class) / 100.0;
                let j = iou_score(&a, &b, class) / 100.0;
                prop_assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-9);
            }
            prop_assert_eq!(acc_sen_sp(&a, &b).acc, acc_sen_sp(&b, &a).acc);
        }
    }
}
