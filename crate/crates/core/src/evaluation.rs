//! Agreement between a predicted change mask and the truth.

use crate::error::{Error, Result};
use crate::raster::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Per-pixel counts with change as the positive class.
pub fn confusion(pred: &Mask, truth: &Mask) -> Result<ConfusionCounts> {
    if (pred.width(), pred.height()) != (truth.width(), truth.height()) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.values().iter().zip(truth.values()) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub overall_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub kappa: f64,
    /// Some ratio had a zero denominator and was set by convention.
    pub degenerate: bool,
}

fn ratio(num: f64, den: f64, degenerate: &mut bool) -> f64 {
    if den == 0.0 {
        *degenerate = true;
        0.0
    } else {
        num / den
    }
}

/// Zero denominators give 0 and set `degenerate`; chance agreement of 1
/// gives kappa 1 on perfect agreement and 0 otherwise.
pub fn metrics(c: &ConfusionCounts) -> Result<Metrics> {
    let n = c.total() as f64;
    if n == 0.0 {
        return Err(Error::Data("empty confusion counts".into()));
    }
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let mut degenerate = false;
    let precision = ratio(tp, tp + fp, &mut degenerate);
    let recall = ratio(tp, tp + fn_, &mut degenerate);
    let f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn_, &mut degenerate);
    let po = (tp + tn) / n;
    let pe = ((tp + fp) / n) * ((tp + fn_) / n) + ((fn_ + tn) / n) * ((fp + tn) / n);
    let kappa = if pe >= 1.0 {
        degenerate = true;
        if po >= 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (po - pe) / (1.0 - pe)
    };
    Ok(Metrics {
        overall_accuracy: po,
        precision,
        recall,
        f1,
        kappa,
        degenerate,
    })
}

/// `key=value` block, one metric per line.
pub fn metrics_block(c: &ConfusionCounts, m: &Metrics) -> String {
    format!(
        "tp={}\nfp={}\nfn={}\ntn={}\noverall_accuracy={:.6}\nprecision={:.6}\nrecall={:.6}\nf1={:.6}\nkappa={:.6}\ndegenerate={}\n",
        c.tp, c.fp, c.fn_, c.tn, m.overall_accuracy, m.precision, m.recall, m.f1, m.kappa, m.degenerate
    )
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    let t = crate::change::contingency(a, b)?;
    let n = a.len() as f64;
    let c2 = |x: f64| x * (x - 1.0) / 2.0;
    let mut index = 0.0;
    for i in 0..t.rows() {
        for j in 0..t.cols() {
            index += c2(t.get(i, j) as f64);
        }
    }
    let sa: f64 = (0..t.rows()).map(|i| c2(t.row_sum(i) as f64)).sum();
    let sb: f64 = (0..t.cols()).map(|j| c2(t.col_sum(j) as f64)).sum();
    let expected = sa * sb / c2(n);
    let max = 0.5 * (sa + sb);
    if max == expected {
        // both partitions trivial in the same way
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn mask(v: &[u8], w: usize) -> Mask {
        Mask::new(w, v.len() / w, v.iter().map(|&b| b != 0).collect()).unwrap()
    }

    #[test]
    fn worked_example() {
        let c = ConfusionCounts {
            tp: 40,
            fp: 10,
            fn_: 20,
            tn: 30,
        };
        let m = metrics(&c).unwrap();
        // independent recomputation from the 2x2 table
        let n = 100.0;
        let pe = (50.0 / n) * (60.0 / n) + (50.0 / n) * (40.0 / n);
        assert_relative_eq!(m.overall_accuracy, 0.7, epsilon = 1e-12);
        assert_relative_eq!(m.precision, 0.8, epsilon = 1e-12);
        assert_relative_eq!(m.recall, 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(m.f1, 2.0 * 0.8 * (2.0 / 3.0) / (0.8 + 2.0 / 3.0), epsilon = 1e-12);
        assert_relative_eq!(m.kappa, (0.7 - pe) / (1.0 - pe), epsilon = 1e-12);
        assert_relative_eq!(m.kappa, 0.4, epsilon = 1e-12);
        assert!(!m.degenerate);
    }

    #[test]
    fn perfect_and_empty() {
        let t = mask(&[1, 0, 0, 1], 2);
        let m = metrics(&confusion(&t, &t).unwrap()).unwrap();
        assert_eq!((m.overall_accuracy, m.f1, m.kappa), (1.0, 1.0, 1.0));
        let none = mask(&[0, 0, 0, 0], 2);
        let c = confusion(&none, &t).unwrap();
        assert_eq!((c.tp, c.fn_), (0, 2));
        assert!(metrics(&ConfusionCounts::default()).is_err());
    }

    #[test]
    fn all_negative_is_flagged() {
        let none = mask(&[0, 0, 0, 0], 2);
        let m = metrics(&confusion(&none, &none).unwrap()).unwrap();
        assert!(m.degenerate);
        assert_eq!((m.precision, m.recall, m.f1, m.kappa), (0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn independent_prediction_has_zero_kappa() {
        let c = ConfusionCounts {
            tp: 25,
            fp: 25,
            fn_: 25,
            tn: 25,
        };
        assert_relative_eq!(metrics(&c).unwrap().kappa, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        assert!(confusion(&mask(&[0, 0], 2), &mask(&[0, 0], 1)).is_err());
    }

    #[test]
    fn ari_basics() {
        assert_relative_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap() < 0.0);
    }

    proptest! {
        #[test]
        fn matches_pixel_loop(a in proptest::collection::vec(any::<bool>(), 100), b in proptest::collection::vec(any::<bool>(), 100)) {
            let pm = Mask::new(10, 10, a.clone()).unwrap();
            let tm = Mask::new(10, 10, b.clone()).unwrap();
            let c = confusion(&pm, &tm).unwrap();
            let mut tp = 0;
            let mut fp = 0;
            for i in 0..100 {
                if a[i] && b[i] { tp += 1 }
                if a[i] && !b[i] { fp += 1 }
            }
            prop_assert_eq!((c.tp, c.fp), (tp, fp));
            prop_assert_eq!(c.total(), 100);

            let m = metrics(&c).unwrap();
            for v in [m.overall_accuracy, m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!((-1.0..=1.0).contains(&m.kappa));

            let swapped = metrics(&confusion(&tm, &pm).unwrap()).unwrap();
            prop_assert!((swapped.overall_accuracy - m.overall_accuracy).abs() < 1e-12);
            prop_assert!((swapped.kappa - m.kappa).abs() < 1e-12);
            prop_assert!((swapped.precision - m.recall).abs() < 1e-12);
        }
    }
}
