use proptest::prelude::*;

use goskit::autograd::Graph;
use goskit::detect::hungarian_match;
use goskit::gaze::{dual_fusion, gaze_cone_values};
use goskit::geometry::{giou, BoxXyxy};
use goskit::interaction::Interaction;
use goskit::layers::ParamStore;
use goskit::metrics::{auc, average_precision, coco_thresholds, msoc_box, msoc_mask, ApPrediction};
use goskit::rng::SplitMix64;
use goskit::scene::{decode_rle, encode_rle, Bitmap};
use goskit::tensor::Tensor;

fn boxes() -> impl Strategy<Value = BoxXyxy> {
    (0.0..50.0f64, 0.0..50.0f64, 0.5..30.0f64, 0.5..30.0f64).prop_map(|(x, y, w, h)| BoxXyxy::new(x, y, x + w, y + h))
}

fn int_boxes() -> impl Strategy<Value = BoxXyxy> {
    (0u32..20, 0u32..20, 1u32..12, 1u32..12)
        .prop_map(|(x, y, w, h)| BoxXyxy::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64))
}

fn bitmap(h: usize, w: usize) -> impl Strategy<Value = Bitmap> {
    prop::collection::vec(any::<bool>(), h * w).prop_map(move |d| Bitmap::from_vec(h, w, d))
}

fn shuffled<T: Clone>(v: &[T], seed: u64) -> Vec<T> {
    let mut rng = SplitMix64::new(seed);
    let mut out = v.to_vec();
    for i in (1..out.len()).rev() {
        out.swap(i, rng.below(i + 1));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn giou_symmetric_and_translation_invariant(a in boxes(), b in boxes(), dx in -20.0..20.0f64, dy in -20.0..20.0f64) {
        let ab = giou(&a, &b).unwrap();
        prop_assert!((ab - giou(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((giou(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let moved = giou(&a.translate(dx, dy), &b.translate(dx, dy)).unwrap();
        prop_assert!((ab - moved).abs() < 1e-9);
        prop_assert!(ab > -1.0 && ab <= 1.0);
    }

    #[test]
    fn cone_splits_cosine_between_opposite_gazes(theta in 0.0..std::f64::consts::TAU, ex in 0.0..1.0f64, ey in 0.0..1.0f64) {
        let v = [theta.cos(), theta.sin()];
        let fwd = gaze_cone_values(v, (ex, ey), 7);
        let back = gaze_cone_values([-v[0], -v[1]], (ex, ey), 7);
        let eye = ((ey * 7.0).floor().min(6.0) as usize, (ex * 7.0).floor().min(6.0) as usize);
        for i in 0..7 {
            for j in 0..7 {
                let (f, b) = (fwd.at2(i, j), back.at2(i, j));
                prop_assert!((0.0..=1.0).contains(&f));
                if (i, j) == eye {
                    prop_assert_eq!(f, 1.0);
                    continue;
                }
                prop_assert!(f == 0.0 || b == 0.0);
                let dx = (j as f64 + 0.5) / 7.0 - ex;
                let dy = (i as f64 + 0.5) / 7.0 - ey;
                let cos = (dx * v[0] + dy * v[1]) / (dx * dx + dy * dy).sqrt();
                prop_assert!((f + b - cos.abs()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cone_is_monotone_in_angle(a in 0.0..3.0f64, b in 0.0..3.0f64) {
        // Gaze directions closer to a fixed cell direction score that cell higher.
        let eye = (0.5 / 7.0, 0.5 / 7.0);
        let cell_dir = (6.0f64).atan2(6.0);
        let (near, far) = (a.min(b), a.max(b));
        let at = |off: f64| {
            let t = cell_dir + off;
            gaze_cone_values([t.cos(), t.sin()], eye, 7).at2(6, 6)
        };
        prop_assert!(at(near) >= at(far) - 1e-12);
    }

    #[test]
    fn fusion_never_exceeds_either_factor(m in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 49)) {
        let g = Graph::new();
        let ps = ParamStore::new();
        let cx = ps.bind(&g);
        let a = Tensor::new([7, 7], m.iter().map(|p| p.0).collect());
        let b = Tensor::new([7, 7], m.iter().map(|p| p.1).collect());
        let f = g.value(dual_fusion(&cx, g.constant(a), g.constant(b)));
        for (v, (x, y)) in f.data().iter().zip(&m) {
            prop_assert!(*v <= x.min(*y));
        }
    }

    #[test]
    fn msoc_symmetric_and_bounded(a in int_boxes(), b in int_boxes(), k in 1u32..5, dx in 0u32..10, dy in 0u32..10) {
        let ab = msoc_box(&a, &b).unwrap();
        prop_assert!((ab - msoc_box(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(msoc_box(&a, &a).unwrap(), 1.0);
        let s = k as f64;
        prop_assert!((ab - msoc_box(&a.scale(s, s), &b.scale(s, s)).unwrap()).abs() < 1e-12);
        let (tx, ty) = (dx as f64, dy as f64);
        prop_assert!((ab - msoc_box(&a.translate(tx, ty), &b.translate(tx, ty)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn msoc_mask_symmetric_and_self_value(p in bitmap(12, 12), q in bitmap(12, 12)) {
        prop_assume!(!p.is_empty() && !q.is_empty());
        let pq = msoc_mask(&p, &q).unwrap();
        prop_assert!((pq - msoc_mask(&q, &p).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&pq));
        let fill = p.area() as f64 / p.bbox().unwrap().area();
        prop_assert!((msoc_mask(&p, &p).unwrap() - fill * fill).abs() < 1e-12);
    }

    #[test]
    fn auc_of_complement(values in prop::collection::vec(0.0..1.0f64, 64 * 64), x in 0.0..1.0f64, y in 0.0..1.0f64) {
        let mut seen = values.clone();
        seen.sort_by(f64::total_cmp);
        seen.dedup();
        prop_assume!(seen.len() == values.len());
        let h = Tensor::new([64, 64], values);
        let a = auc(&h, [x, y]);
        let b = auc(&h.map(|v| 1.0 - v), [x, y]);
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_is_one_for_radially_decreasing_maps(x in 0.0..1.0f64, y in 0.0..1.0f64, scale in 0.5..20.0f64) {
        let (gi, gj) = (((y * 64.0) as usize).min(63) as f64, ((x * 64.0) as usize).min(63) as f64);
        let h = Tensor::from_fn([64, 64], |k| {
            let (i, j) = ((k / 64) as f64, (k % 64) as f64);
            -((i - gi).powi(2) + (j - gj).powi(2)).sqrt() / scale
        });
        prop_assert_eq!(auc(&h, [x, y]), 1.0);
    }

    #[test]
    fn ap_ignores_prediction_order(
        scores in prop::collection::vec(prop::collection::vec((0usize..3, 0.0..1.0f64, 0.0..1.0f64), 0..6), 1..4),
        seed in any::<u64>(),
    ) {
        let gts: Vec<Vec<usize>> = scores.iter().map(|ps| (0..3).filter(|c| ps.iter().any(|p| p.0 == *c) || *c == 0).collect()).collect();
        // Keep each prediction's IoU with its own data, independent of position.
        let preds: Vec<Vec<(ApPrediction, f64)>> = scores
            .iter()
            .map(|ps| ps.iter().map(|&(c, s, iou)| (ApPrediction { category: c, score: s }, iou)).collect())
            .collect();
        let run = |preds: &[Vec<(ApPrediction, f64)>]| {
            let plain: Vec<Vec<ApPrediction>> = preds.iter().map(|ps| ps.iter().map(|p| p.0.clone()).collect()).collect();
            average_precision(&plain, &gts, |i, p, _| preds[i][p].1, &coco_thresholds())
        };
        let base = run(&preds);
        let perm: Vec<Vec<(ApPrediction, f64)>> = preds.iter().enumerate().map(|(i, ps)| shuffled(ps, seed ^ i as u64)).collect();
        let other = run(&perm);
        // Score ties may legitimately reorder; skip those draws.
        let tied = scores.iter().any(|ps| {
            let mut s: Vec<f64> = ps.iter().map(|p| p.1).collect();
            s.sort_by(f64::total_cmp);
            s.windows(2).any(|w| w[0] == w[1])
        });
        prop_assume!(!tied);
        prop_assert!((base.ap - other.ap).abs() < 1e-9);
        prop_assert!(base.per_threshold.iter().all(|v| (0.0..=100.0).contains(v)));
    }

    #[test]
    fn rle_round_trip(h in 1usize..30, w in 1usize..30, seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let m = Bitmap::from_fn(h, w, |_, _| rng.next_f64() < 0.4);
        let rle = encode_rle(&m);
        prop_assert_eq!(rle.counts.iter().map(|&c| c as usize).sum::<usize>(), h * w);
        prop_assert_eq!(decode_rle(&rle).unwrap(), m);
    }

    #[test]
    fn hungarian_beats_random_assignments(rows in 1usize..7, seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let cols = 1 + rng.below(rows);
        let cost: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.uniform(0.0, 10.0)).collect()).collect();
        let best = hungarian_match(&cost).unwrap().total_cost(&cost);
        for trial in 0..20 {
            let perm = shuffled(&(0..rows).collect::<Vec<_>>(), seed.wrapping_add(trial));
            let c: f64 = (0..cols).map(|t| cost[perm[t]][t]).sum();
            prop_assert!(best <= c + 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cross_interact_ignores_key_order(seed in any::<u64>(), nq in 1usize..8) {
        let mut rng = SplitMix64::new(seed);
        let mut ps = ParamStore::new();
        let it = Interaction::new(&mut ps, &mut rng, 16, 16, 4);
        let f_e = Tensor::from_fn([49, 16], |_| rng.normal());
        let q = Tensor::from_fn([nq, 16], |_| rng.normal());
        let order = shuffled(&(0..nq).collect::<Vec<_>>(), seed);
        let q_perm = Tensor::new([nq, 16], order.iter().flat_map(|&r| q.data()[r * 16..(r + 1) * 16].to_vec()).collect());
        let g = Graph::new();
        let cx = ps.bind_frozen(&g);
        let a = g.value(it.cross_interact(&cx, g.constant(f_e.clone()), g.constant(q)));
        let b = g.value(it.cross_interact(&cx, g.constant(f_e), g.constant(q_perm)));
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn single_token_self_attention_is_value_then_output(seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let mut ps = ParamStore::new();
        let it = Interaction::new(&mut ps, &mut rng, 16, 16, 4);
        let x = Tensor::from_fn([1, 16], |_| rng.normal());
        let g = Graph::new();
        let cx = ps.bind_frozen(&g);
        let xv = g.constant(x);
        let attn = &it.self_block.attn;
        let got = g.value(attn.forward(&cx, xv, xv));
        let want = g.value(attn.out_proj().forward(&cx, attn.value_proj().forward(&cx, xv)));
        prop_assert!(got.max_abs_diff(&want) < 1e-12);
    }
}
