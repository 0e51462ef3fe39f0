//! End-to-end acceptance suite. Each test prints one PASS/FAIL line straight
//! to stdout (bypassing the test harness capture) and then asserts.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use goskit::autograd::{pixel_shuffle_tensor, pixel_unshuffle_tensor, Graph, RoiBox};
use goskit::detect::hungarian_match;
use goskit::gaze::{direction_loss, dual_fusion, gaze_cone_values};
use goskit::geometry::BoxXyxy;
use goskit::harness::{
    dataset_loss, evaluate, gradcheck, prepare_items, total_loss, train, Component, EvalMode, EvalOutput, LossParts,
    LrSchedule, TrainConfig,
};
use goskit::interaction::{energy_loss, gt_heatmap, Interaction, HEATMAP_SIGMA, HEATMAP_SIZE};
use goskit::layers::ParamStore;
use goskit::mask_oracle::{generate_supervision, MockSegmenter, SupervisionRecord};
use goskit::metrics::{
    compute_report, msoc_box, msoc_mask, msoc_summary, ApPrediction, EvalInstance, ImageDetections,
};
use goskit::model::GosModel;
use goskit::rng::SplitMix64;
use goskit::scene::{decode_rle, encode_rle, generate_scene, Bitmap, SceneConfig, SceneSample};
use goskit::tensor::Tensor;

fn report(id: usize, name: &str, passed: bool, detail: &str) {
    let line = format!("acceptance {id} [{}] {name}: {detail}\n", if passed { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(passed, "criterion {id} failed: {detail}");
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn criterion_1_formula_examples() {
    let tol = 1e-9;
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    let eye = (3.5 / 7.0, 3.5 / 7.0);
    let cone = gaze_cone_values([1.0, 0.0], eye, 7);
    check("cone along gaze", close(cone.at2(3, 6), 1.0, tol));
    check("cone behind", close(cone.at2(3, 0), 0.0, tol));
    check("cone diagonal", close(cone.at2(0, 6), std::f64::consts::FRAC_1_SQRT_2, tol));
    check("cone eye cell", close(cone.at2(3, 3), 1.0, tol));

    let g = Graph::new();
    let ps = ParamStore::new();
    let cx = ps.bind(&g);
    let v = g.constant(Tensor::new([2], vec![1.0, 0.0]));
    let dir = |t: [f64; 2]| g.value(direction_loss(&cx, &[v], &[t]).unwrap()).item();
    check("direction aligned", close(dir([1.0, 0.0]), 0.0, tol));
    check("direction orthogonal", close(dir([0.0, 1.0]), 1.0, tol));
    check("direction opposite", close(dir([-1.0, 0.0]), 2.0, tol));

    let a = g.constant(Tensor::new([1, 1], vec![0.6]));
    let b = g.constant(Tensor::new([1, 1], vec![0.5]));
    check("fusion product", close(g.value(dual_fusion(&cx, a, b)).item(), 0.3, tol));

    let mask = Bitmap::from_fn(64, 64, |y, x| y == 5 && x < 10);
    let energy = |fill: f64| g.value(energy_loss(&cx, g.constant(Tensor::full([64, 64], fill)), &mask).unwrap()).item();
    check("energy ones", close(energy(1.0), 0.0, tol));
    check("energy zeros", close(energy(0.0), 1.0, tol));
    check("energy quarter", close(energy(0.25), 0.75, tol));

    let full = Bitmap::from_fn(16, 16, |y, x| y < 10 && x < 10);
    let corner = Bitmap::from_fn(16, 16, |y, x| y < 1 && x < 1);
    check("msoc identical rectangles", close(msoc_mask(&full, &full).unwrap(), 1.0, tol));
    check("msoc cell in square", close(msoc_mask(&corner, &full).unwrap(), 0.01, tol));
    let b10 = BoxXyxy::new(0.0, 0.0, 10.0, 10.0);
    check("msoc box nested", close(msoc_box(&BoxXyxy::new(0.0, 0.0, 1.0, 1.0), &b10).unwrap(), 0.01, tol));
    check("msoc box adjacent", close(msoc_box(&b10, &BoxXyxy::new(10.0, 0.0, 20.0, 10.0)).unwrap(), 0.5, tol));
    let s = msoc_summary(&[0.6, 0.8]).unwrap();
    check("msoc columns", s.at50 == 100.0 && s.at75 == 50.0 && s.at95 == 0.0);
    check("msoc mean", close(msoc_summary(&[0.93]).unwrap().mean, 90.0, tol));

    let cfg = TrainConfig::default();
    check("loss weighting", close(total_loss(1.0, 2.0, 3.0, 4.0, &cfg).unwrap(), 3025.0, tol));

    let detail = if failures.is_empty() { "all examples within 1e-9".to_string() } else { format!("mismatch: {failures:?}") };
    report(1, "formula examples", failures.is_empty(), &detail);
}

fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], col: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if col == cost[0].len() {
            *best = best.min(acc);
            return;
        }
        for r in 0..cost.len() {
            if !used[r] {
                used[r] = true;
                go(cost, col + 1, used, acc + cost[r][col], best);
                used[r] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cost.len()], 0.0, &mut best);
    best
}

/// Bilinear sample written as a sum of tent kernels over every pixel, with
/// the same border handling as the operator: zero beyond one pixel outside,
/// coordinates clamped into the image otherwise.
fn tent_sample(x: &Tensor, c: usize, y: f64, xx: f64) -> f64 {
    let (_, h, w) = x.dims3();
    if y < -1.0 || y > h as f64 || xx < -1.0 || xx > w as f64 {
        return 0.0;
    }
    let y = y.clamp(0.0, (h - 1) as f64);
    let xx = xx.clamp(0.0, (w - 1) as f64);
    let mut acc = 0.0;
    for p in 0..h {
        for q in 0..w {
            let k = (1.0 - (y - p as f64).abs()).max(0.0) * (1.0 - (xx - q as f64).abs()).max(0.0);
            acc += k * x.at3(c, p, q);
        }
    }
    acc
}

fn roi_oracle(x: &Tensor, roi: RoiBox, oh: usize, ow: usize, sampling: usize) -> Tensor {
    let (c, h, w) = x.dims3();
    let bin_w = (roi.x2 - roi.x1) * w as f64 / ow as f64;
    let bin_h = (roi.y2 - roi.y1) * h as f64 / oh as f64;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0.0;
                for sy in 0..sampling {
                    for sx in 0..sampling {
                        let y = roi.y1 * h as f64 + (i as f64 + (sy as f64 + 0.5) / sampling as f64) * bin_h - 0.5;
                        let xx = roi.x1 * w as f64 + (j as f64 + (sx as f64 + 0.5) / sampling as f64) * bin_w - 0.5;
                        acc += tent_sample(x, ch, y, xx);
                    }
                }
                out.push(acc / (sampling * sampling) as f64);
            }
        }
    }
    Tensor::new([c, oh, ow], out)
}

#[test]
fn criterion_2_oracle_equivalence() {
    let mut rng = SplitMix64::new(2024);

    let mut hungarian_bad = 0;
    for _ in 0..1000 {
        let cols = 1 + rng.below(6);
        let rows = cols + rng.below(7 - cols);
        let cost: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.uniform(-5.0, 5.0)).collect()).collect();
        let m = hungarian_match(&cost).unwrap();
        let mut seen = vec![false; rows];
        let distinct = m.pairs.len() == cols && m.pairs.iter().all(|&(p, _)| !std::mem::replace(&mut seen[p], true));
        if !distinct || (m.total_cost(&cost) - brute_force_assignment(&cost)).abs() > 1e-9 {
            hungarian_bad += 1;
        }
    }

    let mut roi_err: f64 = 0.0;
    for _ in 0..200 {
        let (c, h, w) = (1 + rng.below(3), 2 + rng.below(9), 2 + rng.below(9));
        let x = Tensor::from_fn([c, h, w], |_| rng.uniform(-1.0, 1.0));
        let (a, b) = (rng.uniform(-0.2, 1.1), rng.uniform(-0.2, 1.1));
        let (p, q) = (rng.uniform(-0.2, 1.1), rng.uniform(-0.2, 1.1));
        let roi = RoiBox { x1: a.min(b), y1: p.min(q), x2: a.max(b) + 0.01, y2: p.max(q) + 0.01 };
        let (oh, ow, s) = (1 + rng.below(7), 1 + rng.below(7), 1 + rng.below(3));
        let g = Graph::new();
        let got = g.value(g.roi_align(g.constant(x.clone()), roi, oh, ow, s));
        roi_err = roi_err.max(got.max_abs_diff(&roi_oracle(&x, roi, oh, ow, s)));
    }

    let mut rle_bad = 0;
    for _ in 0..500 {
        let (h, w) = (1 + rng.below(40), 1 + rng.below(40));
        let density = rng.next_f64();
        let m = Bitmap::from_fn(h, w, |_, _| rng.next_f64() < density);
        if decode_rle(&encode_rle(&m)).ok().as_ref() != Some(&m) {
            rle_bad += 1;
        }
    }

    let mut shuffle_bad = 0;
    for r in [1, 2, 3] {
        let x = Tensor::from_fn([4 * r * r, 5, 3], |_| rng.normal());
        let y = pixel_shuffle_tensor(&x, r);
        if y.shape() != [4, 5 * r, 3 * r] || pixel_unshuffle_tensor(&y, r) != x {
            shuffle_bad += 1;
        }
    }

    let passed = hungarian_bad == 0 && roi_err <= 1e-12 && rle_bad == 0 && shuffle_bad == 0;
    let detail = format!(
        "hungarian mismatches {hungarian_bad}/1000, roi_align max err {roi_err:.2e} over 200, rle failures {rle_bad}/500, shuffle failures {shuffle_bad}/3"
    );
    report(2, "oracle equivalence", passed, &detail);
}

#[test]
fn criterion_3_gradient_suite() {
    let rep = gradcheck(&Component::ALL, 11).unwrap();
    let failed: Vec<String> =
        rep.entries.iter().filter(|e| !e.passed).map(|e| format!("{} ({:.2e})", e.name, e.max_rel_error)).collect();
    let worst = rep.entries.iter().map(|e| e.max_rel_error / e.tolerance).fold(0.0, f64::max);
    let detail = format!("{} components, worst error/tolerance {worst:.3}, failed {failed:?}", rep.entries.len());
    report(3, "gradient suite", rep.all_passed() && rep.entries.len() == Component::ALL.len(), &detail);
}

#[test]
fn criterion_4_attention_invariants() {
    let mut rng = SplitMix64::new(4);
    let mut ps = ParamStore::new();
    let it = Interaction::new(&mut ps, &mut rng, 256, 64, 4);
    let f_e = Tensor::from_fn([49, 64], |_| rng.normal());
    let q_mask = Tensor::from_fn([25, 64], |_| rng.normal());
    let mut perm: Vec<usize> = (0..25).collect();
    for i in (1..25).rev() {
        perm.swap(i, rng.below(i + 1));
    }
    let permuted = Tensor::new([25, 64], perm.iter().flat_map(|&r| q_mask.data()[r * 64..(r + 1) * 64].to_vec()).collect());
    let g = Graph::new();
    let cx = ps.bind_frozen(&g);
    let a = g.value(it.cross_interact(&cx, g.constant(f_e.clone()), g.constant(q_mask)));
    let b = g.value(it.cross_interact(&cx, g.constant(f_e), g.constant(permuted)));
    let perm_err = a.max_abs_diff(&b);

    let mut violations = 0;
    for _ in 0..1000 {
        let m1 = Tensor::from_fn([7, 7], |_| rng.next_f64());
        let m2 = Tensor::from_fn([7, 7], |_| rng.next_f64());
        let f = g.value(dual_fusion(&cx, g.constant(m1.clone()), g.constant(m2.clone())));
        violations += f.data().iter().zip(m1.data().iter().zip(m2.data())).filter(|(v, (x, y))| **v > x.min(**y)).count();
    }
    let passed = perm_err <= 1e-12 && violations == 0;
    report(4, "attention invariants", passed, &format!("KV permutation max diff {perm_err:.2e}, fusion violations {violations}/49000"));
}

fn rect_mask(b: &BoxXyxy, size: usize) -> Bitmap {
    let s = b.scale(size as f64, size as f64);
    Bitmap::from_fn(size, size, |y, x| s.contains_point(x as f64 + 0.5, y as f64 + 0.5))
}

fn perfect_instance(gaze_cell: (usize, usize), obj: BoxXyxy, head: BoxXyxy) -> EvalInstance {
    let n = HEATMAP_SIZE as f64;
    let point = [(gaze_cell.1 as f64 + 0.5) / n, (gaze_cell.0 as f64 + 0.5) / n];
    let mask = rect_mask(&obj, 224);
    EvalInstance {
        pred_gaze_point: point,
        gt_gaze_point: point,
        pred_heatmap: gt_heatmap(point, HEATMAP_SIZE, HEATMAP_SIGMA),
        pred_head_box: head,
        gt_head_box: head,
        pred_object_box: obj,
        pred_object_mask: mask.clone(),
        pred_object_confidence: 0.9,
        gt_object_box: obj,
        gt_object_mask: mask,
        eye: [head.center().0, head.center().1],
    }
}

#[test]
fn criterion_5_metric_sanity() {
    let head = BoxXyxy::new(0.4, 0.8, 0.5, 0.9);
    let objects = [BoxXyxy::new(0.1, 0.1, 0.3, 0.25), BoxXyxy::new(0.55, 0.2, 0.9, 0.6)];
    let instances = vec![perfect_instance((10, 12), objects[0], head), perfect_instance((25, 46), objects[1], head)];
    let detections: Vec<ImageDetections> = (0..2)
        .map(|_| {
            let preds = objects
                .iter()
                .enumerate()
                .map(|(c, b)| (ApPrediction { category: c, score: 0.9 }, *b, rect_mask(b, 224)))
                .collect();
            let gts = objects.iter().enumerate().map(|(c, b)| (c, *b, rect_mask(b, 224))).collect();
            ImageDetections { preds, gts }
        })
        .collect();
    let r = compute_report(&instances, &detections).unwrap();
    let msoc_ok = [&r.msoc_mask, &r.msoc_box]
        .iter()
        .all(|s| s.mean == 100.0 && s.at50 == 100.0 && s.at75 == 100.0 && s.at95 == 100.0);
    let ap_ok = [&r.ap_box, &r.ap_mask].iter().all(|a| close(a.ap, 100.0, 1e-9));
    let gaze_ok = close(r.auc, 1.0, 1e-12) && r.dist == 0.0 && r.ang == 0.0 && close(r.gated.map, 1.0, 1e-12);

    let base = perfect_instance((10, 12), objects[0], head);
    let tp = base.is_gated_true_positive();
    let low_conf = EvalInstance { pred_object_confidence: 0.7, ..base.clone() };
    let far = EvalInstance { pred_gaze_point: [base.gt_gaze_point[0] + 0.2, base.gt_gaze_point[1]], ..base.clone() };
    let gates_ok = tp && !low_conf.is_gated_true_positive() && !far.is_gated_true_positive();

    let passed = msoc_ok && ap_ok && gaze_ok && gates_ok;
    let detail = format!(
        "mSoC mask {:.1}/{:.1}/{:.1}/{:.1}, AP box {:.1} mask {:.1}, AUC {:.3}, Dist {}, Ang {}, gated mAP {:.3}, gates (tp, conf 0.7, L2 0.2) = ({tp}, {}, {})",
        r.msoc_mask.mean,
        r.msoc_mask.at50,
        r.msoc_mask.at75,
        r.msoc_mask.at95,
        r.ap_box.ap,
        r.ap_mask.ap,
        r.auc,
        r.dist,
        r.ang,
        r.gated.map,
        low_conf.is_gated_true_positive(),
        far.is_gated_true_positive()
    );
    report(5, "metric sanity", passed, &detail);
}

/// Configuration of the overfit run shared by criteria 6 and 7.
fn smoke_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        lr: 1e-3,
        lr_schedule: LrSchedule::Cosine,
        warmup_steps: 20,
        batch: 2,
        max_steps: Some(300),
        seed: 1,
        ..Default::default()
    };
    cfg.optimizer.max_grad_norm = Some(1.0);
    cfg
}

fn smoke_scenes() -> Vec<SceneSample> {
    let sc = SceneConfig { seed: 7, ..Default::default() };
    (0..8).map(|i| generate_scene(&sc, i).unwrap()).collect()
}

fn mock_supervision(samples: &[SceneSample]) -> Vec<SupervisionRecord> {
    samples
        .iter()
        .map(|s| {
            let boxes: Vec<BoxXyxy> = s.objects.iter().map(|o| o.bbox).collect();
            SupervisionRecord::from_results(s.index, &generate_supervision(&MockSegmenter, &s.image, &boxes).unwrap())
        })
        .collect()
}

struct SmokeRun {
    initial: LossParts,
    last: LossParts,
    elapsed: Duration,
    non_real: EvalOutput,
    real: EvalOutput,
}

fn smoke_run() -> &'static SmokeRun {
    static RUN: OnceLock<SmokeRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let cfg = smoke_config();
        let samples = smoke_scenes();
        let items = prepare_items(&samples, &mock_supervision(&samples), 56).unwrap();
        let mut model = GosModel::new(&cfg.model_config(), cfg.seed).unwrap();
        let initial = dataset_loss(&model, &items, &cfg).unwrap();
        train(&mut model, &items, &cfg, None).unwrap();
        let last = dataset_loss(&model, &items, &cfg).unwrap();
        let (non_real, _) = evaluate(&model, &samples, EvalMode::NonReal).unwrap();
        let elapsed = start.elapsed();
        let (real, _) = evaluate(&model, &samples, EvalMode::Real).unwrap();
        SmokeRun { initial, last, elapsed, non_real, real }
    })
}

#[test]
fn criterion_6_pipeline_smoke() {
    let run = smoke_run();
    let ratio = run.initial.total / run.last.total;
    let near = run.non_real.samples.iter().filter(|s| s.argmax_error_cells <= 2.0).count();
    let msoc50 = run.non_real.report.msoc_mask.at50;
    let minutes = run.elapsed.as_secs_f64() / 60.0;
    let passed = ratio >= 10.0 && near >= 7 && msoc50 >= 50.0 && minutes <= 10.0;
    let detail = format!(
        "loss {:.3} -> {:.3} ({ratio:.2}x), argmax within 2 cells {near}/8, mSoC_mask@50 {msoc50:.1}, {minutes:.1} min",
        run.initial.total, run.last.total
    );
    report(6, "pipeline smoke", passed, &detail);
}

#[test]
fn criterion_7_real_mode_integrity() {
    let run = smoke_run();
    let r = &run.real.report;
    let passed = !run.real.gt_head_tainted && r.all_finite() && r.num_images == 8;
    let detail = format!(
        "taint flag {}, metrics finite {}, mSoC_mask {:.1}, AUC {:.3}, Dist {:.3}, Ang {:.1}",
        run.real.gt_head_tainted,
        r.all_finite(),
        r.msoc_mask.mean,
        r.auc,
        r.dist,
        r.ang
    );
    report(7, "real-mode integrity", passed, &detail);
}

#[test]
fn criterion_8_mask_pipeline() {
    let mut scenes = 0;
    let mut objects = 0;
    let mut mismatched = 0;
    for seed in [0, 7, 123] {
        let sc = SceneConfig { seed, ..Default::default() };
        for i in 0..80 {
            let s = generate_scene(&sc, i).unwrap();
            let boxes: Vec<BoxXyxy> = s.objects.iter().map(|o| o.bbox).collect();
            let results = generate_supervision(&MockSegmenter, &s.image, &boxes).unwrap();
            for ((obj, rle), res) in s.objects.iter().zip(&s.object_masks).zip(&results) {
                let analytic = obj.rasterize(s.size(), s.size());
                if res.mask != analytic || decode_rle(rle).unwrap() != analytic {
                    mismatched += 1;
                }
                objects += 1;
            }
            scenes += 1;
        }
    }
    report(8, "mask pipeline", mismatched == 0, &format!("{objects} objects over {scenes} scenes, {mismatched} pixel mismatches"));
}
