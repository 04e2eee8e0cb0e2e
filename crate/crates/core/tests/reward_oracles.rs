use chartloop::chartlang::{execute, run_code, tokenize, ElementSet, ExecError, PaletteColor};
use chartloop::color::{delta_e_rgb, srgb_to_lab};
use chartloop::data::{corrupt, gen_reference, Difficulty};
use chartloop::rewards::{
    color_list_score, color_score, composite_reward, heuristic_judge, layout_score, multiset_f1, rule_reward,
    text_score, trajectory_reward, type_score, RewardWeights, TrajRewardParams,
};
use palette::{FromColor, Lab, Srgb};
use proptest::prelude::*;

fn es(s: &str) -> ElementSet {
    run_code(&tokenize(s).unwrap()).unwrap()
}

fn palette_lab(rgb: [u8; 3]) -> (f64, f64, f64) {
    let s: Srgb<f64> = Srgb::new(rgb[0], rgb[1], rgb[2]).into_format();
    let lab: Lab<palette::white_point::D65, f64> = Lab::from_color(s.into_linear());
    (lab.l, lab.a, lab.b)
}

fn palette_delta(p: [u8; 3], q: [u8; 3]) -> f64 {
    let (a, b) = (palette_lab(p), palette_lab(q));
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2) + (a.2 - b.2).powi(2)).sqrt()
}

/// Sort every (pred, ref) pair by (distance, pred, ref) once and accept a pair
/// whenever both ends are still free.
fn sorted_pairs_color_score(pred: &[[u8; 3]], reference: &[[u8; 3]]) -> f64 {
    if pred.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let mut pairs = Vec::new();
    for (i, &p) in pred.iter().enumerate() {
        for (j, &r) in reference.iter().enumerate() {
            pairs.push((palette_delta(p, r), i, j));
        }
    }
    pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut pu = vec![false; pred.len()];
    let mut ru = vec![false; reference.len()];
    let mut total = 0.0;
    for (d, i, j) in pairs {
        if !pu[i] && !ru[j] {
            pu[i] = true;
            ru[j] = true;
            total += (1.0 - d / 100.0).max(0.0);
        }
    }
    2.0 * total / (pred.len() + reference.len()) as f64
}

#[test]
fn lab_matches_reference_implementation_on_palette_and_grid() {
    let mut colors: Vec<[u8; 3]> = PaletteColor::ALL.iter().map(|c| c.rgb()).collect();
    for r in (0..=255).step_by(51) {
        for g in (0..=255).step_by(51) {
            for b in (0..=255).step_by(51) {
                colors.push([r as u8, g as u8, b as u8]);
            }
        }
    }
    for c in colors {
        let ours = srgb_to_lab(c);
        let (l, a, b) = palette_lab(c);
        assert!((ours.l - l).abs() < 1e-2, "{c:?} L {} vs {l}", ours.l);
        assert!((ours.a - a).abs() < 1e-2, "{c:?} a {} vs {a}", ours.a);
        assert!((ours.b - b).abs() < 1e-2, "{c:?} b {} vs {b}", ours.b);
    }
}

#[test]
fn red_vs_navy_single_pair() {
    let (red, navy) = (PaletteColor::Red.rgb(), PaletteColor::Navy.rgb());
    let expect = (1.0 - palette_delta(red, navy) / 100.0).max(0.0);
    let got = color_list_score(&[red], &[navy]);
    assert!((got - expect).abs() < 1e-4, "{got} vs {expect}");
    assert!((delta_e_rgb(red, navy) - palette_delta(red, navy)).abs() < 1e-2);
}

#[test]
fn color_score_matches_sorted_pair_oracle() {
    let mut rng = 0x9e37_79b9_u64;
    let mut next = |m: usize| {
        rng ^= rng << 13;
        rng ^= rng >> 7;
        rng ^= rng << 17;
        (rng % m as u64) as usize
    };
    for _ in 0..2000 {
        let np = next(6);
        let nr = next(6);
        let pred: Vec<[u8; 3]> = (0..np).map(|_| PaletteColor::ALL[next(12)].rgb()).collect();
        let reference: Vec<[u8; 3]> = (0..nr).map(|_| PaletteColor::ALL[next(12)].rgb()).collect();
        let got = color_list_score(&pred, &reference);
        let want = sorted_pairs_color_score(&pred, &reference);
        assert!((got - want).abs() < 1e-4, "{pred:?} {reference:?}: {got} vs {want}");
    }
}

#[test]
fn f1_and_layout_examples() {
    assert!((multiset_f1(&["A", "B", "C"], &["A", "B", "D"]) - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(multiset_f1(&["bar", "bar"], &["bar", "line"]), 0.5);
    let p = es("LAYOUT 1 2 SUBPLOT 0 TYPE bar COLOR red DATA 1.0 END SUBPLOT 1 TYPE bar COLOR red DATA 1.0 END");
    let r = es("LAYOUT 1 2 SUBPLOT 0 TYPE bar COLOR red DATA 1.0 END SUBPLOT 1 TYPE line COLOR red DATA 1.0 END");
    assert_eq!(type_score(&p, &r), 0.5);
    assert_eq!(text_score(&p, &r), 1.0);
    assert_eq!(layout_score((2, 3), (2, 2)), 0.5);
}

#[test]
fn one_of_two_colors_differs() {
    let r = es("LAYOUT 1 2 SUBPLOT 0 TYPE bar COLOR red TITLE sales DATA 1.0 END SUBPLOT 1 TYPE pie COLOR navy DATA 2.0 END");
    let p = es("LAYOUT 1 2 SUBPLOT 0 TYPE bar COLOR red TITLE sales DATA 1.0 END SUBPLOT 1 TYPE pie COLOR cyan DATA 2.0 END");
    let c = sorted_pairs_color_score(&p.colors(), &r.colors());
    let s = rule_reward(Ok(&p), &r);
    assert!((s.color - c).abs() < 1e-4);
    assert!((s.rule - (1.0 + 1.0 + c + 1.0) / 4.0).abs() < 1e-4);
    assert_eq!((s.text, s.chart_type, s.layout), (1.0, 1.0, 1.0));
}

#[test]
fn judge_examples() {
    let r = es("LAYOUT 1 1 SUBPLOT 0 TYPE bar COLOR red GRID DATA 1.0 2.0 END");
    let j = heuristic_judge(Ok(&r), &r);
    assert_eq!(j.total, 100.0);
    assert_eq!(j.scaled(), 1.0);
    let mut p = r.clone();
    p.overlap_count = 1;
    let j = heuristic_judge(Ok(&p), &r);
    assert_eq!((j.clarity, j.total), (8.0, 98.0));
    assert!((j.scaled() - 0.98).abs() < 1e-15);
    let err = ExecError::duplicate(0);
    assert_eq!(heuristic_judge(Err(&err), &r).scaled(), 0.0);
}

#[test]
fn composite_weight_rows() {
    // (format weight, alpha, beta) rows of the reward-weight ablation; the
    // expected value is evaluated by hand for format 1, rule 0.843, judge 0.837.
    let rows: [(f64, f64, f64, f64); 6] = [
        (0.1, 0.9, 0.0, 0.1 + 0.7587),
        (0.1, 0.8, 0.1, 0.1 + 0.6744 + 0.0837),
        (0.1, 0.6, 0.3, 0.1 + 0.5058 + 0.2511),
        (0.1, 0.4, 0.5, 0.1 + 0.3372 + 0.4185),
        (0.1, 0.2, 0.7, 0.1 + 0.1686 + 0.5859),
        (0.1, 0.0, 0.9, 0.1 + 0.7533),
    ];
    for (fw, alpha, beta, want) in rows {
        let w = RewardWeights::new(alpha, beta).unwrap();
        assert!((w.format_weight() - fw).abs() < 1e-12);
        let got = composite_reward(1.0, 0.843, 0.837, &w);
        assert!((got - want).abs() < 1e-12, "{alpha} {beta}: {got} vs {want}");
    }
    let w = RewardWeights::new(0.8, 0.1).unwrap();
    assert!((composite_reward(1.0, 0.843, 0.837, &w) - 0.8581).abs() < 1e-12);
}

#[test]
fn trajectory_reward_examples() {
    let p = TrajRewardParams { gamma: 0.5, eta: 0.1 };
    assert!((trajectory_reward(0.8, 0.9, &p) - 1.4).abs() < 1e-12);
    assert_eq!(trajectory_reward(0.8, 0.8, &p), 0.8 + 0.5 * 0.8);
    assert_eq!(trajectory_reward(0.2, 0.6, &TrajRewardParams::default()), 0.6);
}

fn reference_and_corruption() -> impl Strategy<Value = (ElementSet, Result<ElementSet, ExecError>)> {
    (any::<u64>(), 0usize..3, 0usize..4).prop_map(|(seed, d, edits)| {
        let diff = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard][d];
        let (prog, reference) = gen_reference(seed, diff);
        let pred = execute(&corrupt(&prog, edits, seed ^ 0x5555));
        (reference, pred)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn scores_are_bounded_and_identity_is_one((reference, pred) in reference_and_corruption()) {
        let id = rule_reward(Ok(&reference), &reference);
        prop_assert_eq!((id.text, id.chart_type, id.color, id.layout, id.rule), (1.0, 1.0, 1.0, 1.0, 1.0));
        let s = rule_reward(pred.as_ref(), &reference);
        for v in [s.text, s.chart_type, s.color, s.layout, s.rule] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!((s.rule - (s.text + s.chart_type + s.color + s.layout) / 4.0).abs() < 1e-15);
        let j = heuristic_judge(pred.as_ref(), &reference);
        let sum = j.chart_types + j.layout + j.text + j.data + j.style + j.clarity;
        prop_assert_eq!(j.total, sum);
        prop_assert!((0.0..=1.0).contains(&j.scaled()));
        if let Ok(p) = &pred {
            let c = sorted_pairs_color_score(&p.colors(), &reference.colors());
            prop_assert!((color_score(p, &reference) - c).abs() < 1e-4);
        }
    }

    #[test]
    fn boosting_is_monotone_and_bounded(r1 in 0.0f64..=1.0, a in 0.0f64..=1.0, b in 0.0f64..=1.0,
                                        gamma in 0.0f64..=1.0, eta in 0.0f64..=1.0) {
        let p = TrajRewardParams { gamma, eta };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(trajectory_reward(r1, lo, &p) <= trajectory_reward(r1, hi, &p));
        let v = trajectory_reward(r1, a, &p);
        prop_assert!((0.0..=1.0 + gamma + eta).contains(&v));
    }

    #[test]
    fn composite_is_within_unit_interval(f in 0.0f64..=1.0, r in 0.0f64..=1.0, j in 0.0f64..=1.0,
                                         alpha in 0.0f64..=1.0, t in 0.0f64..=1.0) {
        let w = RewardWeights::new(alpha, (1.0 - alpha) * t).unwrap();
        let c = composite_reward(f, r, j, &w);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&c));
    }
}
