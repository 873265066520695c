use fpkit::bayeslab::{
    chow_reject_region, fp_risk, ood_reject_region, rejects, ClassComponent, McConfig, MixtureSpec, OodDensity,
    RegionKind, ThresholdRule,
};
use fpkit::calibration::{apply_temperature, calibrated_eval, decompose_score, fit_temperature, ScoringRule};
use fpkit::evalcore::argmax;
use fpkit::flatopt::{sam_perturb, SgdMomentum, SwaState};
use fpkit::metrics::{aupr_error, aupr_success, aurc, auroc, e_aurc, ece, fpr_at_tpr};
use proptest::prelude::*;

fn labelled(max_n: usize, levels: u32) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2..=max_n).prop_flat_map(move |n| {
        (
            prop::collection::vec((0..levels).prop_map(|v| f64::from(v) / 8.0 - 2.0), n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

fn both_classes(pos: &[bool]) -> bool {
    pos.iter().any(|&b| b) && pos.iter().any(|&b| !b)
}

fn tie_free(scores: &[f64]) -> bool {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).all(|w| w[0] < w[1])
}

fn pairwise(scores: &[f64], pos: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, a) in scores.iter().enumerate() {
        for (j, b) in scores.iter().enumerate() {
            if pos[i] && !pos[j] {
                pairs += 1.0;
                num += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
    }
    num / pairs
}

fn ranking(s: &[f64], c: &[bool]) -> Vec<f64> {
    vec![
        aurc(s, c).unwrap(),
        e_aurc(s, c).unwrap(),
        auroc(s, c).unwrap(),
        fpr_at_tpr(s, c, 0.95).unwrap(),
        aupr_success(s, c).unwrap(),
        aupr_error(s, c).unwrap(),
    ]
}

fn two_gaussians(delta: f64, c: f64, pi_in: f64) -> MixtureSpec {
    MixtureSpec {
        classes: vec![
            ClassComponent { mean: vec![-delta], var: 1.0, prior: 0.5 },
            ClassComponent { mean: vec![delta], var: 1.0, prior: 0.5 },
        ],
        ood: OodDensity::UniformBox { low: vec![-15.0], high: vec![15.0] },
        pi_in,
        reject_cost: c,
        model: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn auroc_matches_pairwise_count((s, pos) in labelled(64, 12)) {
        prop_assume!(both_classes(&pos));
        prop_assert!((auroc(&s, &pos).unwrap() - pairwise(&s, &pos)).abs() <= 1e-12);
    }

    #[test]
    fn ranking_metrics_ignore_monotone_maps((s, c) in labelled(64, 40), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        prop_assume!(both_classes(&c));
        let base = ranking(&s, &c);
        for t in [s.iter().map(|v| v.exp()).collect::<Vec<_>>(),
                  s.iter().map(|v| a * v + b).collect(),
                  s.iter().map(|v| v * v * v).collect()] {
            for (x, y) in base.iter().zip(ranking(&t, &c)) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn auroc_complement_symmetry((s, pos) in labelled(48, 1000)) {
        prop_assume!(both_classes(&pos) && tie_free(&s));
        let base = auroc(&s, &pos).unwrap();
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let flipped: Vec<bool> = pos.iter().map(|b| !b).collect();
        prop_assert!((base + auroc(&neg, &pos).unwrap() - 1.0).abs() <= 1e-12);
        prop_assert!((base + auroc(&s, &flipped).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn e_aurc_is_nonnegative((s, c) in labelled(64, 12)) {
        prop_assert!(e_aurc(&s, &c).unwrap() >= -1e-15);
    }

    #[test]
    fn e_aurc_vanishes_only_for_perfect_rankings((s, c) in labelled(32, 1000)) {
        prop_assume!(tie_free(&s));
        let perfect = s.iter().zip(&c).all(|(si, ci)| {
            s.iter().zip(&c).all(|(sj, cj)| !(*ci && !*cj) || si > sj)
        });
        let e = e_aurc(&s, &c).unwrap();
        prop_assert_eq!(e.abs() <= 1e-15, perfect, "e_aurc = {}", e);
    }

    #[test]
    fn ece_vanishes_when_bins_match_accuracy(groups in prop::collection::vec((0usize..8, 0usize..8), 1..12), bins in 1usize..20) {
        // every group sits at its own accuracy, so each bin's mean confidence is its accuracy
        let mut conf = Vec::new();
        let mut correct = Vec::new();
        for &(right, wrong) in &groups {
            let total = right + wrong;
            if total == 0 {
                continue;
            }
            conf.extend(std::iter::repeat_n(right as f64 / total as f64, total));
            correct.extend(std::iter::repeat_n(true, right));
            correct.extend(std::iter::repeat_n(false, wrong));
        }
        prop_assume!(!conf.is_empty());
        prop_assert!(ece(&conf, &correct, bins).unwrap().0.abs() <= 1e-12);
    }

    #[test]
    fn sam_perturbation_has_radius_rho(g in prop::collection::vec(-100.0f64..100.0, 1..64), rho in 1e-4f64..5.0) {
        let norm_g = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm_g > 1e-9);
        let e = sam_perturb(&g, rho);
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((norm - rho).abs() <= 1e-12 * rho.max(1.0));
    }

    #[test]
    fn swa_state_is_checkpoint_mean(cps in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 1..50)) {
        let mut swa = SwaState::new(4);
        for cp in &cps {
            swa.update(cp);
        }
        for j in 0..4 {
            let mean = cps.iter().map(|c| c[j]).sum::<f64>() / cps.len() as f64;
            prop_assert!((swa.params[j] - mean).abs() <= 1e-10 * mean.abs().max(1.0));
        }
    }

    #[test]
    fn sgd_step_closed_form(theta in -10.0f64..10.0, g in -10.0f64..10.0, lr in 1e-3f64..1.0) {
        let mut p = [theta];
        let mut opt = SgdMomentum::new(1, 0.9, 5e-4);
        opt.step(&mut p, &[g], lr);
        let v1 = g + 5e-4 * theta;
        let t1 = theta - lr * v1;
        prop_assert_eq!(p[0], t1);
        opt.step(&mut p, &[g], lr);
        let v2 = 0.9 * v1 + (g + 5e-4 * t1);
        prop_assert_eq!(p[0], t1 - lr * v2);
    }

    #[test]
    fn chow_region_matches_pointwise_rule(delta in 0.2f64..3.0, c in 0.02f64..0.45, x in -8.0f64..8.0) {
        let spec = two_gaussians(delta, c, 0.5);
        let region = chow_reject_region(&spec).unwrap();
        // skip points within 1e-6 of a boundary, where the scan's bisection is approximate
        let near = region.intervals().unwrap().iter().any(|iv| (iv.lo - x).abs() < 1e-6 || (iv.hi - x).abs() < 1e-6);
        prop_assume!(!near);
        prop_assert_eq!(region.contains(&spec, &[x]), rejects(&spec, RegionKind::Chow, &[x]));
    }

    #[test]
    fn ood_region_matches_pointwise_rule(delta in 0.0f64..3.0, pi_in in 0.05f64..0.95, x in -14.0f64..14.0) {
        let spec = two_gaussians(delta, 0.2, pi_in);
        let region = ood_reject_region(&spec).unwrap();
        let near = region.intervals().unwrap().iter().any(|iv| (iv.lo - x).abs() < 1e-6 || (iv.hi - x).abs() < 1e-6);
        prop_assume!(!near);
        prop_assert_eq!(region.contains(&spec, &[x]), rejects(&spec, RegionKind::DensityRatio, &[x]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn temperature_never_moves_argmax(seed in 0u64..1000, t in 0.05f64..50.0) {
        let (eval, _) = calibrated_eval(300, 4, 1.7, seed).unwrap();
        let scaled = apply_temperature(&eval, t).unwrap();
        prop_assert!(eval.rows().zip(scaled.rows()).all(|(a, b)| argmax(a) == argmax(b)));
    }

    #[test]
    fn temperature_search_never_accepts_a_worse_step(seed in 0u64..1000, t in 0.3f64..6.0) {
        let (eval, _) = calibrated_eval(2000, 3, t, seed).unwrap();
        let fit = fit_temperature(&eval).unwrap();
        prop_assert!(fit.path.windows(2).all(|w| w[1].1 <= w[0].1));
        prop_assert!(fit.nll_after <= fit.nll_before);
    }

    #[test]
    fn decomposition_terms_add_up(seed in 0u64..1000, t in 0.3f64..3.0, k in 2usize..5, bins in 1usize..30) {
        let (eval, q) = calibrated_eval(1500, k, t, seed).unwrap();
        for rule in [ScoringRule::LogLoss, ScoringRule::Brier] {
            let d = decompose_score(&eval, rule, bins, Some(&q)).unwrap();
            prop_assert!((d.total - d.calibration_term - d.grouping_plus_aleatoric).abs() <= 1e-12);
            let split = d.grouping.unwrap() + d.aleatoric.unwrap();
            prop_assert!((split - d.grouping_plus_aleatoric).abs() <= 1e-12);
        }
    }

    #[test]
    fn shard_streams_not_threads_fix_the_estimate(seed in 0u64..1000, threads in 2usize..6) {
        let spec = two_gaussians(1.0, 0.2, 0.5);
        let rule = ThresholdRule::chow(&spec);
        let one = fp_risk(&spec, &rule, &McConfig { n_mc: 4000, seed, shards: 6, threads: 1 }).unwrap();
        let many = fp_risk(&spec, &rule, &McConfig { n_mc: 4000, seed, shards: 6, threads }).unwrap();
        prop_assert_eq!(one, many);
    }
}
