mod common;

use bem_core::background::{mask_from_boxes, masked_temporal_average, residual};
use bem_core::detection::{read_detections, write_detections};
use bem_core::metrics::{average_precision_50, iou, p_auc, spearman, PAucConfig};
use bem_core::rescore::{confidence_ranks, rescore_scores};
use bem_core::sim::SimRng;
use bem_core::{
    bememb, calibrate, cosine_similarity, pnm, rank_weights, BBox, CalibrationConfig, CalibrationMode, Detection,
    Embedding, ForegroundMask, Frame, GroundTruthBox, PrototypeMemory, RankMode, RescoreConfig,
};
use common::*;
use proptest::prelude::*;

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..50.0f64, 0.0..50.0f64, 0.5..20.0f64, 0.5..20.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

fn unit_scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=1.0f64, 1..max)
}

fn oracle_frame() -> impl Strategy<Value = OracleFrame> {
    (prop::collection::vec(bbox(), 0..5), prop::collection::vec((bbox(), 0.0..=1.0f64), 0..7))
        .prop_map(|(gts, dets)| OracleFrame { dets, gts })
}

fn crate_frames(frames: &[OracleFrame]) -> (Vec<Detection<f64>>, Vec<GroundTruthBox>) {
    let mut d = Vec::new();
    let mut g = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        d.extend(f.dets.iter().map(|(b, s)| Detection::new(i as u64, *b, *s)));
        g.extend(f.gts.iter().map(|b| GroundTruthBox { frame_id: i as u64, bbox: *b, label: None }));
    }
    (d, g)
}

proptest! {
    #[test]
    fn calibration_stays_inside_epsilon(scores in unit_scores(30), t in 0.2..5.0f64) {
        for mode in [CalibrationMode::None, CalibrationMode::Clip, CalibrationMode::Temperature] {
            let cfg = CalibrationConfig { mode, temperature: t, ..Default::default() };
            let out = calibrate(&scores, &cfg).unwrap();
            for (s, c) in scores.iter().zip(&out) {
                prop_assert!(*c >= 1e-6 && *c <= 1.0 - 1e-6);
                if mode != CalibrationMode::Temperature && *s >= 1e-6 && *s <= 1.0 - 1e-6 {
                    prop_assert_eq!(s, c);
                }
            }
            // monotone in the raw score
            let mut idx: Vec<usize> = (0..scores.len()).collect();
            idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
            for w in idx.windows(2) {
                prop_assert!(out[w[0]] <= out[w[1]]);
            }
        }
    }

    #[test]
    fn rank_weights_are_bounded(scores in unit_scores(60)) {
        let ranks = confidence_ranks(&scores);
        let mut sorted = ranks.clone();
        sorted.sort();
        prop_assert_eq!(sorted, (1..=scores.len()).collect::<Vec<_>>());
        for mode in [RankMode::Intent, RankMode::Literal] {
            let w: Vec<f64> = rank_weights(&ranks, mode).unwrap();
            prop_assert!(w.iter().all(|v| (0.0..1.0).contains(v)));
        }
        let intent: Vec<f64> = rank_weights(&ranks, RankMode::Intent).unwrap();
        let top = ranks.iter().position(|&r| r == 1).unwrap();
        prop_assert_eq!(intent[top], 0.0);
    }

    #[test]
    fn rescore_only_suppresses(
        scores in unit_scores(40),
        c in -1.0..=1.0f64,
        alpha in 0.0..10.0f64,
        gamma in 1e-4..10.0f64,
    ) {
        let ccfg = CalibrationConfig::default();
        let rcfg = RescoreConfig { alpha, gamma, ..Default::default() };
        let cal = calibrate(&scores, &ccfg).unwrap();
        let out = rescore_scores(&scores, Some(c), &rcfg, &ccfg).unwrap();
        prop_assert_eq!(out.len(), scores.len());
        for (s, t) in cal.iter().zip(&out) {
            prop_assert!(t.is_finite() && *t > 0.0 && *t <= *s);
        }
        prop_assert_eq!(rescore_scores(&scores, None, &rcfg, &ccfg).unwrap(), cal);
    }

    #[test]
    fn stronger_similarity_penalizes_less(scores in unit_scores(20), c1 in 0.01..1.0f64, c2 in 0.01..1.0f64) {
        let (lo, hi) = if c1 < c2 { (c1, c2) } else { (c2, c1) };
        let ccfg = CalibrationConfig::default();
        let rcfg = RescoreConfig { alpha: 0.1, gamma: 0.1, ..Default::default() };
        let a = rescore_scores(&scores, Some(lo), &rcfg, &ccfg).unwrap();
        let b = rescore_scores(&scores, Some(hi), &rcfg, &ccfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(x <= y);
        }
    }

    #[test]
    fn f32_and_f64_rescoring_agree(scores in unit_scores(20), c in 0.5..1.0f64) {
        let ccfg = CalibrationConfig::default();
        let rcfg = RescoreConfig { alpha: 0.1, gamma: 0.1, ..Default::default() };
        let s32: Vec<f32> = scores.iter().map(|&s| s as f32).collect();
        let a = rescore_scores(&scores, Some(c), &rcfg, &ccfg).unwrap();
        let b = rescore_scores(&s32, Some(c as f32), &rcfg, &ccfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - *y as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn embeddings_are_unit_and_cosine_is_bounded(
        a in prop::collection::vec(-5.0..5.0f64, 8),
        b in prop::collection::vec(-5.0..5.0f64, 8),
    ) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
        let ea = Embedding::<f64>::normalize(&a).unwrap();
        let eb = Embedding::<f64>::normalize(&b).unwrap();
        prop_assert!((ea.norm() - 1.0).abs() < 1e-12);
        let ab = cosine_similarity(&ea, &eb).unwrap();
        let ba = cosine_similarity(&eb, &ea).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, ba);
        prop_assert!((cosine_similarity(&ea, &ea).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn memory_prototype_is_unit(rows in prop::collection::vec(prop::collection::vec(0.01..1.0f64, 6), 1..12), k in 1usize..5) {
        let mut m = PrototypeMemory::<f32>::new(k).unwrap();
        for r in &rows {
            m.update(Embedding::normalize(r).unwrap()).unwrap();
            prop_assert!(m.len() <= k);
            prop_assert!((m.prototype().unwrap().norm() - 1.0).abs() < 1e-5);
        }
        prop_assert_eq!(m.len(), rows.len().min(k));
    }

    #[test]
    fn dilation_only_grows_foreground(boxes in prop::collection::vec(bbox(), 0..4), d in 0.0..3.0f64) {
        let m0 = mask_from_boxes(0, 64, 64, &boxes, 0.0).unwrap();
        let m1 = mask_from_boxes(0, 64, 64, &boxes, d).unwrap();
        for (a, b) in m0.values().iter().zip(m1.values()) {
            prop_assert!(b <= a);
        }
    }

    #[test]
    fn background_is_a_convex_combination(
        vals in prop::collection::vec(0.0..=1.0f64, 4 * 4 * 5),
        bits in prop::collection::vec(any::<bool>(), 4 * 4 * 5),
    ) {
        let frames: Vec<Frame<f64>> = (0..5).map(|t| Frame::new(t, 4, 4, 1, vals[t as usize * 16..(t as usize + 1) * 16].to_vec()).unwrap()).collect();
        let masks: Vec<ForegroundMask> = (0..5)
            .map(|t| ForegroundMask::new(t, 4, 4, bits[t as usize * 16..(t as usize + 1) * 16].iter().map(|&b| u8::from(b)).collect()).unwrap())
            .collect();
        let bg = masked_temporal_average(&frames, &masks).unwrap();
        let oracle = brute_force_background(&frames, &masks);
        for (p, &want) in oracle.iter().enumerate() {
            let col: Vec<f64> = frames.iter().map(|f| f.pixels()[p]).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = bg.image.pixels()[p];
            prop_assert!(v >= lo && v <= hi);
            prop_assert_eq!(v, want);
            prop_assert_eq!(bg.coverage[p] as usize, masks.iter().filter(|m| m.is_background(p)).count());
        }
        let r = residual(&frames[0], &bg.image).unwrap();
        prop_assert!(r.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((v - box_iou(&a, &b)).abs() < 1e-12);
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_match_oracles(frames in prop::collection::vec(oracle_frame(), 1..6)) {
        let (d, g) = crate_frames(&frames);
        let taus: Vec<f64> = (0..21).map(|j| 1.0 - j as f64 / 20.0).collect();
        let pa = p_auc(&d, &g, &PAucConfig { points: 21, ..Default::default() }).unwrap();
        prop_assert!((0.0..=1.0).contains(&pa.value));
        prop_assert!((pa.value - brute_force_pauc(&frames, &taus)).abs() < 1e-12);
        if !g.is_empty() {
            let ap = average_precision_50(&d, &g).unwrap();
            prop_assert!((0.0..=1.0).contains(&ap));
            prop_assert!((ap - brute_force_ap(&frames)).abs() < 1e-9);
        }
    }

    #[test]
    fn spearman_matches_oracle(xs in prop::collection::vec(0u8..6, 3..30), ys in prop::collection::vec(0u8..6, 3..30)) {
        let n = xs.len().min(ys.len());
        let a: Vec<f64> = xs[..n].iter().map(|&v| v as f64).collect();
        let b: Vec<f64> = ys[..n].iter().map(|&v| v as f64).collect();
        match spearman(&a, &b) {
            Ok(r) => {
                prop_assert!((-1.0..=1.0).contains(&r));
                prop_assert!((r - spearman_oracle(&a, &b)).abs() < 1e-12);
            }
            Err(_) => prop_assert!(a.iter().all(|v| *v == a[0]) || b.iter().all(|v| *v == b[0])),
        }
    }

    #[test]
    fn quantized_frames_roundtrip_through_pnm(w in 1usize..12, h in 1usize..12, ch in prop::sample::select(vec![1usize, 3]), seed in any::<u64>()) {
        let mut rng = SimRng::new(seed, 0);
        let px: Vec<f32> = (0..w * h * ch).map(|_| rng.int_inclusive(0, 255) as f32 / 255.0).collect();
        let f = Frame::new(5, w, h, ch, px).unwrap();
        let back: Frame<f32> = pnm::decode(&pnm::encode(&f), 5).unwrap();
        prop_assert_eq!(back, f);
    }

    #[test]
    fn bememb_rows_stay_unit(rows in prop::collection::vec(prop::collection::vec(0.01..1.0f64, 5), 1..6)) {
        let es: Vec<Embedding<f64>> = rows.iter().map(|r| Embedding::normalize(r).unwrap()).collect();
        let back = bememb::decode(&bememb::encode(&es).unwrap()).unwrap();
        prop_assert_eq!(back.len(), es.len());
        for (a, b) in es.iter().zip(&back) {
            prop_assert!((b.norm() - 1.0).abs() < 1e-4);
            prop_assert!(a.values().iter().zip(b.values()).all(|(x, y)| (x - *y as f64).abs() < 1e-6));
        }
    }
}

#[test]
fn detections_roundtrip_through_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.jsonl");
    let dets = vec![
        Detection::new(0, BBox::new(1.5, 2.0, 3.0, 4.25).unwrap(), 0.1 + 0.2),
        Detection::new(3, BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), 1.0).with_label(7),
    ];
    write_detections(&p, &dets).unwrap();
    assert_eq!(read_detections(&p).unwrap(), dets);
}

#[test]
fn derived_scalar_values() {
    let t2 = CalibrationConfig { mode: CalibrationMode::Temperature, temperature: 2.0, ..Default::default() };
    assert!((calibrate(&[0.8f64], &t2).unwrap()[0] - TEMPERATURE_2_OF_0_8).abs() < 1e-12);
    let a = Embedding::<f64>::normalize(&[1.0, 0.0]).unwrap();
    let b = Embedding::<f64>::normalize(&[1.0, 1.0]).unwrap();
    assert!((cosine_similarity(&a, &b).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
}

#[test]
fn sim_rng_is_reproducible() {
    let draw = |seed| {
        let mut r = SimRng::new(seed, 1);
        (0..50).map(|_| r.beta(2.0, 5.0) + r.poisson(3.0) as f64 + r.normal()).collect::<Vec<_>>()
    };
    assert_eq!(draw(9), draw(9));
    assert_ne!(draw(9), draw(10));
}
