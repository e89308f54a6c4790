use proptest::prelude::*;

use fluency::clustering;
use fluency::synth::{burst_train, BurstTrainConfig};
use fluency::{compute_features, fbds, stats, AudioBuffer, ClusterParams, ClusterResult, FbdsParams};

fn analyse(buf: &AudioBuffer) -> ClusterResult {
    clustering::cluster(buf, &FbdsParams::default(), &ClusterParams::default()).unwrap()
}

fn intervals(r: &ClusterResult) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    (
        r.pseudo_syllables.iter().map(|p| (p.start_ms, p.end_ms)).collect(),
        r.silent_breaks.iter().map(|b| (b.start_ms, b.end_ms)).collect(),
    )
}

/// Sorted, touching pseudo-syllable and break intervals inside a recording.
fn cluster_layout() -> impl Strategy<Value = ClusterResult> {
    prop::collection::vec((1.0..400.0f64, 0.0..700.0f64), 0..15).prop_flat_map(|parts| {
        (Just(parts), 0.0..300.0f64, 1.0..500.0f64).prop_map(|(parts, lead, tail)| {
            let mut t = lead;
            let mut ps = Vec::new();
            let mut breaks = Vec::new();
            for (d, gap) in parts {
                ps.push((t, t + d));
                t += d;
                if gap > 250.0 {
                    breaks.push((t, t + gap));
                }
                t += gap;
            }
            ClusterResult::from_intervals(&ps, &breaks, t + tail)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn segments_tile_any_burst_train(seed in any::<u64>()) {
        let train = burst_train(&BurstTrainConfig::default(), seed);
        let segs = fbds::segment(&train.audio, &FbdsParams::default()).unwrap();
        prop_assert_eq!(segs[0].start_ms, 0.0);
        prop_assert_eq!(segs.last().unwrap().end_ms, train.audio.duration_ms());
        for w in segs.windows(2) {
            prop_assert_eq!(w[0].end_ms, w[1].start_ms);
            prop_assert!(w[0].start_ms < w[0].end_ms);
        }
    }

    #[test]
    fn power_of_two_gain_changes_nothing(seed in any::<u64>(), k in 1i32..6) {
        let train = burst_train(&BurstTrainConfig::default(), seed);
        let a = analyse(&train.audio);
        let b = analyse(&train.audio.scaled(2f64.powi(-k)));
        prop_assert_eq!(intervals(&a), intervals(&b));
        prop_assert_eq!(compute_features(&a, None).unwrap(), compute_features(&b, None).unwrap());
    }

    #[test]
    fn reversal_keeps_the_syllable_count(seed in any::<u64>()) {
        let train = burst_train(&BurstTrainConfig::default(), seed);
        let fwd = analyse(&train.audio).pseudo_syllables.len();
        let rev = analyse(&train.audio.reversed()).pseudo_syllables.len();
        prop_assert!(fwd.abs_diff(rev) <= 1, "{} vs {}", fwd, rev);
    }

    #[test]
    fn trailing_silence_only_dilutes_rates(seed in any::<u64>(), extra_ms in 100.0..1500.0f64) {
        let train = burst_train(&BurstTrainConfig::default(), seed);
        let rate = train.audio.sample_rate();
        let mut padded = train.audio.samples().to_vec();
        padded.extend(std::iter::repeat_n(0.0, (extra_ms * rate as f64 / 1000.0) as usize));
        let padded = AudioBuffer::new(padded, rate).unwrap();
        let a = compute_features(&analyse(&train.audio), None).unwrap();
        let b = compute_features(&analyse(&padded), None).unwrap();
        prop_assert!(a.n_pseudo_syllables.abs_diff(b.n_pseudo_syllables) <= 1);
        prop_assert!(b.duration_ms > a.duration_ms);
        prop_assert!(b.speech_ratio < a.speech_ratio + 1e-9);
        prop_assert!(b.n_silent_breaks >= a.n_silent_breaks);
    }
}

proptest! {
    #[test]
    fn feature_identities(result in cluster_layout()) {
        let f = compute_features(&result, None).unwrap();
        let n = result.pseudo_syllables.len() as f64;
        prop_assert!((f.pseudo_syllable_rate * f.duration_ms - n).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&f.speech_ratio));
        prop_assert!(f.sd_pseudo_syllable_ms >= 0.0);
        prop_assert!(f.silent_break_rate >= 0.0);
        prop_assert_eq!(f.syllable_count_delta, None);
    }

    #[test]
    fn time_scaling_scales_rates_only(result in cluster_layout(), c in 0.5..4.0f64) {
        let scale = |v: &[(f64, f64)]| v.iter().map(|&(s, e)| (s * c, e * c)).collect::<Vec<_>>();
        let (ps, br) = intervals(&result);
        let stretched = ClusterResult::from_intervals(&scale(&ps), &scale(&br), result.total_duration_ms * c);
        let (a, b) = (compute_features(&result, None).unwrap(), compute_features(&stretched, None).unwrap());
        let tol = |x: f64| 1e-9 * (1.0 + x.abs());
        prop_assert!((b.pseudo_syllable_rate * c - a.pseudo_syllable_rate).abs() <= tol(a.pseudo_syllable_rate));
        prop_assert!((b.silent_break_rate * c - a.silent_break_rate).abs() <= tol(a.silent_break_rate));
        prop_assert!((b.sd_pseudo_syllable_ms - a.sd_pseudo_syllable_ms * c).abs() <= tol(b.sd_pseudo_syllable_ms));
        prop_assert!((b.speech_ratio - a.speech_ratio).abs() <= tol(a.speech_ratio));
    }

    #[test]
    fn ranks_sum_and_spearman_ignores_monotone_maps(
        pairs in prop::collection::vec((-50i32..50, -50i32..50), 3..40)
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let n = x.len() as f64;
        prop_assert_eq!(stats::ranks(&x).0.iter().sum::<f64>(), n * (n + 1.0) / 2.0);
        if let Ok(r) = stats::spearman_rho(&x, &y) {
            let cubed: Vec<f64> = x.iter().map(|v| v.powi(3) + 7.0).collect();
            prop_assert!((stats::spearman_rho(&cubed, &y).unwrap() - r).abs() < 1e-12);
            prop_assert!((stats::spearman_rho(&y, &x).unwrap() - r).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn pearson_is_affine_invariant(
        x in prop::collection::vec(-10.0..10.0f64, 3..30), a in 0.1..5.0f64, b in -5.0..5.0f64, seed in any::<u64>()
    ) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + ((seed >> (i % 60)) & 7) as f64).collect();
        if let Ok(r) = stats::pearson_r(&x, &y) {
            let t: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((stats::pearson_r(&t, &y).unwrap() - r).abs() < 1e-9);
            let neg: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((stats::pearson_r(&neg, &y).unwrap() + r).abs() < 1e-9);
        }
    }

    #[test]
    fn rank_tests_ignore_order_and_monotone_maps(
        groups in prop::collection::vec(prop::collection::vec(0i32..20, 1..8), 2..5)
    ) {
        let g: Vec<Vec<f64>> = groups.iter().map(|v| v.iter().map(|&x| x as f64).collect()).collect();
        let h = stats::kruskal_wallis(&g).unwrap();
        prop_assert!(h.statistic >= 0.0 && (0.0..=1.0).contains(&h.p_value));
        let mut rev = g.clone();
        rev.reverse();
        prop_assert!((stats::kruskal_wallis(&rev).unwrap().statistic - h.statistic).abs() < 1e-9);
        let exp: Vec<Vec<f64>> = g.iter().map(|v| v.iter().map(|x| (x / 5.0).exp()).collect()).collect();
        prop_assert!((stats::kruskal_wallis(&exp).unwrap().statistic - h.statistic).abs() < 1e-9);
    }

    #[test]
    fn friedman_ignores_per_subject_monotone_maps(
        rows in prop::collection::vec(prop::collection::vec(0i32..10, 3), 2..15)
    ) {
        let s: Vec<Vec<f64>> = rows.iter().map(|v| v.iter().map(|&x| x as f64).collect()).collect();
        let q = stats::friedman(&s).unwrap();
        let mapped: Vec<Vec<f64>> = s
            .iter()
            .enumerate()
            .map(|(i, r)| r.iter().map(|x| x * (i + 1) as f64 - i as f64).collect())
            .collect();
        prop_assert!((stats::friedman(&mapped).unwrap().statistic - q.statistic).abs() < 1e-9);
        prop_assert!(q.statistic >= 0.0);
    }

    #[test]
    fn alpha_and_rmse_bounds(items in prop::collection::vec(prop::collection::vec(1i32..6, 6), 2..5)) {
        let it: Vec<Vec<f64>> = items.iter().map(|v| v.iter().map(|&x| x as f64).collect()).collect();
        if let Ok(a) = stats::cronbach_alpha(&it) {
            prop_assert!(a <= 1.0 + 1e-12);
        }
        let e = stats::rmse(&it[0], &it[1]).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert_eq!(stats::rmse(&it[0], &it[0]).unwrap(), 0.0);
        prop_assert_eq!(e, stats::rmse(&it[1], &it[0]).unwrap());
    }
}
