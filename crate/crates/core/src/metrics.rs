//! Cloud-to-cloud metrics, correlation, ordinal error rates, confusion matrices and
//! report emitters.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::spatial::KdTree;

/// Mean and maximum nearest-neighbor distance from each point of `a` to `b`.
pub fn directed_distances(a: &[Point3], b: &[Point3]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tree = KdTree::new(b);
    let (mut sum, mut max) = (0.0, 0.0f64);
    for p in a {
        let (_, d) = tree.nearest(p).expect("non-empty tree");
        sum += d;
        max = max.max(d);
    }
    Ok((sum / a.len() as f64, max))
}

/// Symmetric mean nearest-neighbor distance, `½(mean_a + mean_b)`.
pub fn chamfer(a: &[Point3], b: &[Point3]) -> Result<f64> {
    Ok(0.5 * (directed_distances(a, b)?.0 + directed_distances(b, a)?.0))
}

pub fn hausdorff(a: &[Point3], b: &[Point3]) -> Result<f64> {
    Ok(directed_distances(a, b)?.1.max(directed_distances(b, a)?.1))
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::DegenerateVariance);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `ξ_k` for `k = 1..m−1`: the fraction of samples at least `k` classes off.
pub fn xi_rates(pred: &[usize], truth: &[usize], m: usize) -> Result<Vec<f64>> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    let n = pred.len().max(1) as f64;
    Ok((1..m)
        .map(|k| pred.iter().zip(truth).filter(|(p, t)| p.abs_diff(**t) >= k).count() as f64 / n)
        .collect())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    Ok(pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / pred.len().max(1) as f64)
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(pred: &[usize], truth: &[usize], m: usize) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::LengthMismatch(pred.len(), truth.len()));
        }
        let mut counts = vec![vec![0u64; m]; m];
        for (&p, &t) in pred.iter().zip(truth) {
            if p >= m || t >= m {
                return Err(Error::ClassIndexOutOfRange { index: p.max(t), count: m });
            }
            counts[t][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn to_csv(&self) -> String {
        let m = self.classes();
        let mut s = String::from("true\\pred");
        for c in 0..m {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (t, row) in self.counts.iter().enumerate() {
            let _ = write!(s, "{t}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `ξ_1..ξ_{m−1}`.
    pub xi: Vec<f64>,
    /// `None` when either label vector is constant.
    pub pearson_r: Option<f64>,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn new(pred: &[usize], truth: &[usize], m: usize) -> Result<Self> {
        let as_f = |v: &[usize]| v.iter().map(|&c| c as f64).collect::<Vec<f64>>();
        let pearson_r = match pearson(&as_f(pred), &as_f(truth)) {
            Ok(r) => Some(r),
            Err(Error::DegenerateVariance) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            accuracy: accuracy(pred, truth)?,
            xi: xi_rates(pred, truth, m)?,
            pearson_r,
            confusion: ConfusionMatrix::new(pred, truth, m)?,
        })
    }

    /// Tab-free plain-text table of `k` and `ξ_k`.
    pub fn xi_table(&self) -> String {
        let mut s = String::from("k,xi\n");
        for (k, x) in self.xi.iter().enumerate() {
            let _ = writeln!(s, "{},{}", k + 1, x);
        }
        s
    }
}

/// Credit assigned to the two classes of a binary task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryOutcome {
    pub low: f64,
    pub high: f64,
}

/// Maps a multi-class prediction onto the nearer of two classes; equidistant
/// predictions split their credit evenly.
pub fn map_to_binary(pred_class: usize, binary_classes: (usize, usize)) -> Result<BinaryOutcome> {
    let (lo, hi) = binary_classes;
    if lo >= hi {
        return Err(Error::InvalidParams(format!("binary classes must satisfy low < high, got ({lo}, {hi})")));
    }
    let (dl, dh) = (pred_class.abs_diff(lo), pred_class.abs_diff(hi));
    Ok(match dl.cmp(&dh) {
        std::cmp::Ordering::Less => BinaryOutcome { low: 1.0, high: 0.0 },
        std::cmp::Ordering::Greater => BinaryOutcome { low: 0.0, high: 1.0 },
        std::cmp::Ordering::Equal => BinaryOutcome { low: 0.5, high: 0.5 },
    })
}

/// Fractional binary accuracy; every true label must be one of the two classes.
pub fn binary_accuracy(pred: &[usize], truth: &[usize], binary_classes: (usize, usize)) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    let mut credit = 0.0;
    for (&p, &t) in pred.iter().zip(truth) {
        let o = map_to_binary(p, binary_classes)?;
        credit += if t == binary_classes.0 {
            o.low
        } else if t == binary_classes.1 {
            o.high
        } else {
            return Err(Error::InvalidParams(format!("true class {t} is not in the binary task")));
        };
    }
    Ok(credit / pred.len().max(1) as f64)
}

/// Indices whose predicted class is at least `threshold_class`.
pub fn correction_selection(preds: &[usize], threshold_class: usize) -> Vec<usize> {
    preds.iter().enumerate().filter(|(_, &p)| p >= threshold_class).map(|(i, _)| i).collect()
}

/// Named column of per-pair metric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub values: Vec<f64>,
}

/// CSV with an `epsilon` column followed by one column per series.
pub fn scatter_csv(epsilon: &[f64], series: &[MetricSeries]) -> Result<String> {
    for s in series {
        if s.values.len() != epsilon.len() {
            return Err(Error::LengthMismatch(epsilon.len(), s.values.len()));
        }
    }
    let mut out = String::from("epsilon");
    for s in series {
        let _ = write!(out, ",{}", s.name);
    }
    out.push('\n');
    for (i, e) in epsilon.iter().enumerate() {
        let _ = write!(out, "{e}");
        for s in series {
            let _ = write!(out, ",{}", s.values[i]);
        }
        out.push('\n');
    }
    Ok(out)
}

/// One scatter panel per series (metric against ε), with the correlation in each title.
pub fn scatter_svg(epsilon: &[f64], series: &[MetricSeries]) -> Result<String> {
    const W: f64 = 320.0;
    const H: f64 = 240.0;
    const PAD: f64 = 36.0;
    let cols = series.len().clamp(1, 3);
    let rows = series.len().div_ceil(cols).max(1);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
        W * cols as f64,
        H * rows as f64
    );
    let range = |v: &[f64]| {
        let lo = v.iter().copied().filter(|x| x.is_finite()).fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && hi > lo {
            (lo, hi)
        } else if lo.is_finite() {
            (lo - 0.5, lo + 0.5)
        } else {
            (0.0, 1.0)
        }
    };
    let (xlo, xhi) = range(epsilon);
    for (k, s) in series.iter().enumerate() {
        if s.values.len() != epsilon.len() {
            return Err(Error::LengthMismatch(epsilon.len(), s.values.len()));
        }
        let (ox, oy) = ((k % cols) as f64 * W, (k / cols) as f64 * H);
        let (ylo, yhi) = range(&s.values);
        let r = pearson(epsilon, &s.values).map(|r| format!("{r:.3}")).unwrap_or_else(|_| "n/a".into());
        let _ = writeln!(svg, r##"<g transform="translate({ox},{oy})">"##);
        let _ = writeln!(
            svg,
            r##"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
            W - 2.0 * PAD,
            H - 2.0 * PAD
        );
        let _ = writeln!(svg, r##"<text x="{}" y="20" text-anchor="middle">{} (r = {r})</text>"##, W / 2.0, s.name);
        let _ = writeln!(svg, r##"<text x="{}" y="{}" text-anchor="middle">epsilon (m)</text>"##, W / 2.0, H - 8.0);
        for (e, v) in epsilon.iter().zip(&s.values) {
            if !v.is_finite() {
                continue;
            }
            let x = PAD + (e - xlo) / (xhi - xlo) * (W - 2.0 * PAD);
            let y = H - PAD - (v - ylo) / (yhi - ylo) * (H - 2.0 * PAD);
            let _ = writeln!(svg, r##"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill="#3465a4" fill-opacity="0.6"/>"##);
        }
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        (0..n).map(|_| Point3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0))).collect()
    }

    fn brute(a: &[Point3], b: &[Point3]) -> (f64, f64) {
        let d: Vec<f64> = a.iter().map(|p| b.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)).collect();
        (d.iter().sum::<f64>() / d.len() as f64, d.iter().copied().fold(0.0, f64::max))
    }

    #[test]
    fn trivial_metric_values() {
        let a = vec![Point3::origin()];
        let b = vec![Point3::new(1.0, 0.0, 0.0)];
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer(&a, &b).unwrap(), 1.0);
        assert_eq!(hausdorff(&[Point3::origin(), Point3::new(5.0, 0.0, 0.0)], &a).unwrap(), 5.0);
        assert!(matches!(chamfer(&a, &[]), Err(Error::EmptyCloud)));
        assert!(hausdorff(&[], &a).is_err());
    }

    #[test]
    fn metrics_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let a = cloud(&mut rng, 300);
            let b = cloud(&mut rng, 300);
            let (ab, ba) = (brute(&a, &b), brute(&b, &a));
            assert!((chamfer(&a, &b).unwrap() - 0.5 * (ab.0 + ba.0)).abs() < 1e-9);
            assert!((hausdorff(&a, &b).unwrap() - ab.1.max(ba.1)).abs() < 1e-9);
            // Dense subset: a ⊂ b.
            let sub: Vec<Point3> = b.iter().step_by(3).copied().collect();
            let (sb, bs) = (brute(&sub, &b), brute(&b, &sub));
            assert!((chamfer(&sub, &b).unwrap() - 0.5 * (sb.0 + bs.0)).abs() < 1e-9);
            assert_eq!(sb.0, 0.0);
        }
    }

    #[test]
    fn pearson_cases() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y2: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y2).unwrap() - 1.0).abs() < 1e-12);
        let yn: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &yn).unwrap() + 1.0).abs() < 1e-12);
        // Hand computation: x̄ = 3, ȳ = 2.8; Σdxdy = 6, Σdx² = 10, Σdy² = 6.8.
        let y = [2.0, 1.0, 4.0, 3.0, 4.0];
        let expect = 6.0 / (10.0f64.sqrt() * 6.8f64.sqrt());
        assert!((pearson(&x, &y).unwrap() - expect).abs() < 1e-12);
        assert!(matches!(pearson(&x, &[1.0; 5]), Err(Error::DegenerateVariance)));
    }

    #[test]
    fn xi_cases() {
        assert_eq!(xi_rates(&[0, 1, 2], &[0, 1, 2], 5).unwrap(), vec![0.0; 4]);
        let xi = xi_rates(&[0, 1, 2], &[0, 2, 4], 5).unwrap();
        assert_eq!(xi, vec![2.0 / 3.0, 1.0 / 3.0, 0.0, 0.0]);
        assert!(xi_rates(&[0], &[0, 1], 3).is_err());
    }

    #[test]
    fn binary_mapping_cases() {
        assert_eq!(map_to_binary(1, (0, 3)).unwrap(), BinaryOutcome { low: 1.0, high: 0.0 });
        assert_eq!(map_to_binary(1, (0, 2)).unwrap(), BinaryOutcome { low: 0.5, high: 0.5 });
        assert_eq!(map_to_binary(0, (0, 3)).unwrap(), BinaryOutcome { low: 1.0, high: 0.0 });
        assert_eq!(map_to_binary(3, (0, 3)).unwrap(), BinaryOutcome { low: 0.0, high: 1.0 });
        assert_eq!(map_to_binary(9, (0, 3)).unwrap(), BinaryOutcome { low: 0.0, high: 1.0 });
        assert!(map_to_binary(1, (2, 2)).is_err());
        assert_eq!(binary_accuracy(&[1, 1, 2], &[0, 2, 2], (0, 2)).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn correction_selection_cases() {
        assert_eq!(correction_selection(&[0, 3, 4, 2], 3), vec![1, 2]);
        assert_eq!(correction_selection(&[0, 3, 4, 2], 0), vec![0, 1, 2, 3]);
    }

    #[test]
    fn report_and_confusion() {
        let pred = [0, 1, 1, 2];
        let truth = [0, 1, 2, 2];
        let r = EvalReport::new(&pred, &truth, 3).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert!((r.xi[0] - (1.0 - r.accuracy)).abs() < 1e-15);
        assert_eq!(r.confusion.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 1, 1]]);
        assert_eq!(r.confusion.to_csv(), "true\\pred,0,1,2\n0,1,0,0\n1,0,1,0\n2,0,1,1\n");
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
        assert_eq!(EvalReport::new(&[1, 1], &[0, 1], 2).unwrap().pearson_r, None);
    }

    #[test]
    fn scatter_outputs() {
        let eps = [0.0, 0.1, 0.2];
        let s = [MetricSeries { name: "chamfer".into(), values: vec![0.01, 0.05, 0.09] }];
        assert_eq!(scatter_csv(&eps, &s).unwrap(), "epsilon,chamfer\n0,0.01\n0.1,0.05\n0.2,0.09\n");
        let svg = scatter_svg(&eps, &s).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("r = 1.000") && svg.matches("<circle").count() == 3);
    }

    proptest! {
        #[test]
        fn xi_non_increasing_and_binary_credit_sums_to_one(
            pairs in proptest::collection::vec((0usize..10, 0usize..10), 1..50),
            lo in 0usize..5,
            gap in 1usize..5,
        ) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let xi = xi_rates(&p, &t, 10).unwrap();
            prop_assert!(xi.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(xi.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((xi[0] - (1.0 - accuracy(&p, &t).unwrap())).abs() < 1e-12);
            for &c in &p {
                let o = map_to_binary(c, (lo, lo + gap)).unwrap();
                prop_assert_eq!(o.low + o.high, 1.0);
            }
        }

        #[test]
        fn chamfer_hausdorff_symmetric(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = cloud(&mut rng, 40);
            let b = cloud(&mut rng, 25);
            prop_assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
            prop_assert_eq!(hausdorff(&a, &b).unwrap(), hausdorff(&b, &a).unwrap());
            let h = hausdorff(&a, &b).unwrap();
            prop_assert!(h >= directed_distances(&a, &b).unwrap().0 && h >= directed_distances(&b, &a).unwrap().0);
            prop_assert!(chamfer(&a, &b).unwrap() > 0.0);
        }
    }
}
