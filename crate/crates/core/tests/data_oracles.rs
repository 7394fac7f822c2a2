//! Data tools checked against independent oracles and invariants.

use agentloom_core::toolkit::data::{detect_outliers, growth_rate, harmonize_merge, impute_linear, OutlierMethod};
use agentloom_core::toolkit::series::{Column, Frequency, SeriesTable};
use proptest::prelude::*;

const GROWTH_TOL: f64 = 1e-12;
const MEAN_TOL: f64 = 1e-9;

/// k-th smallest (0-based) by counting, without sorting.
fn kth_smallest(xs: &[f64], k: usize) -> f64 {
    for &c in xs {
        let below = xs.iter().filter(|&&x| x < c).count();
        let equal = xs.iter().filter(|&&x| x == c).count();
        if below <= k && k < below + equal {
            return c;
        }
    }
    unreachable!("k within range")
}

/// Quantile with position `(n-1) * num/den`, interpolating between order
/// statistics; the position is split in integer arithmetic.
fn brute_quantile(xs: &[f64], num: usize, den: usize) -> f64 {
    let scaled = (xs.len() - 1) * num;
    let (lo, rem) = (scaled / den, scaled % den);
    let a = kth_smallest(xs, lo);
    if rem == 0 {
        return a;
    }
    let b = kth_smallest(xs, lo + 1);
    a + (b - a) * rem as f64 / den as f64
}

fn brute_iqr_flags(xs: &[f64], k: f64) -> Vec<usize> {
    let q1 = brute_quantile(xs, 1, 4);
    let q3 = brute_quantile(xs, 3, 4);
    let (lo, hi) = (q1 - k * (q3 - q1), q3 + k * (q3 - q1));
    (0..xs.len()).filter(|&i| xs[i] < lo || xs[i] > hi).collect()
}

fn some(xs: &[f64]) -> Vec<Option<f64>> {
    xs.iter().copied().map(Some).collect()
}

#[test]
fn iqr_flags_only_the_extreme_point() {
    let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 100.0];
    assert_eq!(brute_iqr_flags(&xs, 1.5), vec![5]);
    assert_eq!(
        detect_outliers(&some(&xs), OutlierMethod::Iqr { k: 1.5 }).unwrap(),
        vec![5]
    );
}

#[test]
fn impute_fills_the_gap_linearly() {
    assert_eq!(
        impute_linear(&[Some(2.0), None, None, Some(8.0)]).unwrap(),
        vec![2.0, 4.0, 6.0, 8.0]
    );
}

#[test]
fn growth_rates_match_hand_values() {
    let g = growth_rate(&some(&[100.0, 110.0, 99.0]));
    assert_eq!(g[0], None);
    assert!((g[1].unwrap() - 0.10).abs() <= GROWTH_TOL);
    assert!((g[2].unwrap() - -0.10).abs() <= GROWTH_TOL);
}

#[test]
fn monthly_means_become_quarterly() {
    let monthly: Vec<f64> = (1..=12).map(f64::from).collect();
    let t = SeriesTable::new(
        Frequency::Monthly,
        "2020-01".parse().unwrap(),
        12,
        vec![Column::new("x", "test", some(&monthly))],
    )
    .unwrap();
    let q = harmonize_merge(&[t], Frequency::Quarterly).unwrap();
    assert_eq!(q.columns()[0].values, some(&[2.0, 5.0, 8.0, 11.0]));
}

fn zscores(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    xs.iter().map(|x| (x - mean) / sd).collect()
}

proptest! {
    #[test]
    fn iqr_agrees_with_brute_force(xs in prop::collection::vec(-1e3f64..1e3, 2..40), k in 0.5f64..3.0) {
        let q1 = brute_quantile(&xs, 1, 4);
        let q3 = brute_quantile(&xs, 3, 4);
        let (lo, hi) = (q1 - k * (q3 - q1), q3 + k * (q3 - q1));
        // Points within rounding distance of a fence may legitimately differ.
        prop_assume!(xs.iter().all(|x| (x - lo).abs() > 1e-9 && (x - hi).abs() > 1e-9));
        prop_assert_eq!(detect_outliers(&some(&xs), OutlierMethod::Iqr { k }).unwrap(), brute_iqr_flags(&xs, k));
    }

    #[test]
    fn zscore_flags_survive_affine_maps(
        xs in prop::collection::vec(-100f64..100.0, 3..50),
        threshold in 0.5f64..3.0,
    ) {
        let z = zscores(&xs);
        prop_assume!(z.iter().all(|z| z.is_finite() && (z.abs() - threshold).abs() > 1e-6));
        let method = OutlierMethod::Zscore { threshold };
        let mapped: Vec<f64> = xs.iter().map(|x| 3.0 * x + 7.0).collect();
        prop_assert_eq!(
            detect_outliers(&some(&xs), method).unwrap(),
            detect_outliers(&some(&mapped), method).unwrap()
        );
    }

    #[test]
    fn impute_keeps_observed_values(raw in prop::collection::vec(prop::option::weighted(0.6, -1e6f64..1e6), 1..60)) {
        prop_assume!(raw.iter().flatten().count() >= 2);
        let filled = impute_linear(&raw).unwrap();
        prop_assert_eq!(filled.len(), raw.len());
        for (i, v) in raw.iter().enumerate() {
            if let Some(v) = v {
                prop_assert_eq!(filled[i], *v);
            }
        }
        // Interpolated values lie between their observed neighbours.
        let lo = raw.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(filled.iter().all(|v| *v >= lo - 1e-9 && *v <= hi + 1e-9));
    }

    #[test]
    fn quarterly_aggregation_conserves_the_mean(quarters in 1usize..12, values in prop::collection::vec(-1e4f64..1e4, 36)) {
        let monthly = &values[..quarters * 3];
        let t = SeriesTable::new(
            Frequency::Monthly,
            "2001-01".parse().unwrap(),
            monthly.len(),
            vec![Column::new("x", "test", some(monthly))],
        )
        .unwrap();
        let q = harmonize_merge(&[t], Frequency::Quarterly).unwrap();
        let qv: Vec<f64> = q.columns()[0].values.iter().map(|v| v.unwrap()).collect();
        prop_assert_eq!(qv.len(), quarters);
        let m_mean = monthly.iter().sum::<f64>() / monthly.len() as f64;
        let q_mean = qv.iter().sum::<f64>() / qv.len() as f64;
        prop_assert!((m_mean - q_mean).abs() <= MEAN_TOL * (1.0 + m_mean.abs()));
    }
}
