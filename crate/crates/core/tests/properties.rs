mod common;

use instab::controls::{baseline_statistic, shuffle_series, shuffle_steps, BaselineKind};
use instab::metrics::{auc_wrong, bucket_sizes, spearman};
use instab::signal::{entropy, entropy_eps, jsd, jsd_eps, step_series, summarize, SeriesConfig, SummaryConfig};
use instab::trace::{align_union, parse_traces, renormalize, write_traces, ParseOptions, StepRecord, TokenEntry};
use proptest::prelude::*;
use std::f64::consts::LN_2;

use common::{distribution, random_trace, rng};

fn pairs_strategy() -> impl Strategy<Value = Vec<(u64, f64)>> {
    prop::collection::btree_map(0u64..80, 1e-6f64..1.0, 1..40)
        .prop_map(|m| m.into_iter().collect())
}

fn labelled_scores() -> impl Strategy<Value = Vec<(f64, bool)>> {
    prop::collection::vec((-50i32..50, any::<bool>()), 2..120)
        .prop_map(|v| v.into_iter().map(|(s, c)| (s as f64 / 4.0, c)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn jsd_is_symmetric_and_bounded(a in pairs_strategy(), b in pairs_strategy()) {
        let (p, q) = (distribution(&a), distribution(&b));
        let d = jsd(&p, &q);
        prop_assert!((d - jsd(&q, &p)).abs() <= 1e-12);
        prop_assert!((0.0..=LN_2 + 1e-12).contains(&d));
        prop_assert_eq!(jsd(&p, &p), 0.0);
    }

    #[test]
    fn entropy_is_bounded_by_log_support(a in pairs_strategy()) {
        let p = distribution(&a);
        let h = entropy(&p);
        prop_assert!(h >= 0.0 && h <= (p.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn alignment_is_symmetric_and_mass_preserving(a in pairs_strategy(), b in pairs_strategy()) {
        let (p, q) = (distribution(&a), distribution(&b));
        let pq = align_union(&p, &q);
        let qp = align_union(&q, &p);
        prop_assert_eq!(&pq.support, &qp.support);
        prop_assert_eq!(&pq.p, &qp.q);
        prop_assert_eq!(&pq.q, &qp.p);
        prop_assert!((pq.p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!((pq.q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn epsilon_logs_agree_on_valid_inputs(a in pairs_strategy(), b in pairs_strategy()) {
        let (p, q) = (distribution(&a), distribution(&b));
        prop_assert!((entropy(&p) - entropy_eps(&p, 1e-12)).abs() < 1e-9);
        prop_assert!((jsd(&p, &q) - jsd_eps(&p, &q, 1e-12)).abs() < 1e-9);
    }

    #[test]
    fn renormalize_is_idempotent(a in pairs_strategy(), mass in 0.3f64..1.0) {
        let step = StepRecord::new(a.iter().map(|&(t, p)| TokenEntry::new(t, (p * mass).ln())).collect());
        let once = renormalize(&step, step.len()).unwrap();
        let again = StepRecord::new(
            once.support().iter().zip(once.probs()).map(|(&t, &p)| TokenEntry::new(t, p.ln())).collect(),
        );
        let twice = renormalize(&again, again.len()).unwrap();
        prop_assert_eq!(once.support(), twice.support());
        for (x, y) in once.probs().iter().zip(twice.probs()) {
            prop_assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn series_windows_and_lambda(seed in any::<u64>(), a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let trace = random_trace(&mut rng(seed, 0), "p", 130, 12);
        let base = step_series(&trace, &SeriesConfig { lambda: a, ..Default::default() });
        let moved = step_series(&trace, &SeriesConfig { lambda: b, ..Default::default() });
        for t in 0..base.len() {
            let shifted = base.instability[t] + (b - a) * base.entropy[t];
            prop_assert!((shifted - moved.instability[t]).abs() < 1e-12);
        }
        let d = summarize(&trace, &moved, &SummaryConfig::default());
        let w = |x| d.window(x).unwrap();
        prop_assert!(w(10) <= w(20) && w(20) <= w(50) && w(50) <= w(100) && w(100) <= d.strength);
    }

    #[test]
    fn lambda_zero_is_divergence(seed in any::<u64>()) {
        let trace = random_trace(&mut rng(seed, 1), "p", 40, 8);
        let s = step_series(&trace, &SeriesConfig { lambda: 0.0, ..Default::default() });
        prop_assert_eq!(&s.instability, &s.divergence);
        prop_assert_eq!(s.divergence[0], 0.0);
    }

    #[test]
    fn shuffles_preserve_multisets(seed in any::<u64>(), shuffle_seed in any::<u64>()) {
        let trace = random_trace(&mut rng(seed, 2), "p", 60, 8);
        let series = step_series(&trace, &SeriesConfig::default());
        let shuffled = shuffle_series(&series, &trace.id, shuffle_seed);
        let sorted = |v: &[f64]| { let mut v = v.to_vec(); v.sort_by(f64::total_cmp); v };
        prop_assert_eq!(sorted(&shuffled.instability), sorted(&series.instability));
        let permuted = step_series(&shuffle_steps(&trace, shuffle_seed), &SeriesConfig::default());
        prop_assert_eq!(sorted(&permuted.entropy), sorted(&series.entropy));
        prop_assert_eq!(
            baseline_statistic(&permuted, BaselineKind::Entropy, None),
            baseline_statistic(&series, BaselineKind::Entropy, None)
        );
    }

    #[test]
    fn auc_is_rank_based(v in labelled_scores()) {
        let (scores, correct): (Vec<f64>, Vec<bool>) = v.into_iter().unzip();
        let transformed: Vec<f64> = scores.iter().map(|s| (s / 3.0).exp() * 2.0 - 7.0).collect();
        prop_assert_eq!(auc_wrong(&scores, &correct), auc_wrong(&transformed, &correct));
        let flipped: Vec<bool> = correct.iter().map(|c| !c).collect();
        if let (Some(a), Some(b)) = (auc_wrong(&scores, &correct), auc_wrong(&scores, &flipped)) {
            prop_assert!((a - (1.0 - b)).abs() < 1e-12);
        }
        if let (Some(a), Some(b)) = (spearman(&scores, &correct), spearman(&scores, &flipped)) {
            prop_assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn bucket_sizes_differ_by_at_most_one(n in 1usize..2000, k in 1usize..50) {
        prop_assume!(n >= k);
        let sizes = bucket_sizes(n, k);
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn trace_lines_round_trip(seed in any::<u64>()) {
        let traces: Vec<_> = (0..3).map(|i| random_trace(&mut rng(seed, 10 + i), &format!("t{i}"), 20, 6)).collect();
        let mut buf = Vec::new();
        write_traces(&mut buf, &traces).unwrap();
        let back = parse_traces(buf.as_slice(), ParseOptions::default()).unwrap();
        prop_assert_eq!(&back, &traces);
        let mut again = Vec::new();
        write_traces(&mut again, &back).unwrap();
        prop_assert_eq!(buf, again);
    }
}
