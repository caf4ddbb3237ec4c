use maskforge::annotate::{auto_refine, record_flips, AnnotationSession, ClickKind, FlipDictionaries};
use maskforge::evaluate::{mask_metrics, oracle_annotate};
use maskforge::features::{PcaModel, DESCRIPTOR_DIMS};
use maskforge::imaging::{refine_partition, segment_superpixels, Mask, RasterImage, Scale, SlicParams};
use maskforge::proposals::generate_proposals;
use maskforge::PipelineConfig;
use proptest::prelude::*;

const SIZE: u32 = 32;

fn scene(seed: u64) -> RasterImage {
    let (cx, cy) = (10.0 + (seed % 13) as f64, 10.0 + (seed % 11) as f64);
    RasterImage::from_fn(SIZE, SIZE, |x, y| {
        let d = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
        let n = ((x * 7 + y * 13 + seed as u32) % 9) as u8;
        if d < 60.0 {
            [200 + n, 40, 40]
        } else {
            [90 + (x * 3) as u8, 140 + n, 100 + (y * 2) as u8]
        }
    })
}

fn session(seed: u64, probs: impl Fn(usize) -> f64) -> (RasterImage, AnnotationSession) {
    let img = scene(seed);
    let coarse = segment_superpixels(&img, &SlicParams::new(12, Scale::Coarse)).unwrap();
    let fine = segment_superpixels(&img, &SlicParams::new(90, Scale::Fine)).unwrap();
    let fine = refine_partition(&fine, &coarse).unwrap();
    let p = (0..coarse.region_count()).map(probs).collect();
    let s = AnnotationSession::new(format!("img{seed}"), coarse, fine, p, 0.4).unwrap();
    (img, s)
}

fn labelled_pixels(s: &AnnotationSession) -> usize {
    s.active_regions()
        .into_iter()
        .filter(|&r| s.label(r).unwrap())
        .map(|r| s.pixel_count(r).unwrap())
        .sum()
}

fn identity_pca() -> PcaModel {
    let d = DESCRIPTOR_DIMS;
    PcaModel {
        input_dims: d,
        output_dims: d,
        mean: vec![0.0; d],
        basis: (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect(),
        explained_variance: vec![1.0; d],
    }
}

fn pseudo(seed: u64, k: usize) -> f64 {
    let h = (seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn clicks_conserve_pixels_and_replay_exactly(
        seed in 0u64..500,
        ops in prop::collection::vec((any::<bool>(), 0usize..200), 0..25),
    ) {
        let (_, mut s) = session(seed, |k| pseudo(seed, k));
        for (divide, pick) in ops {
            let active = s.active_regions();
            let target = active[pick % active.len()];
            let before = s.export_mask();
            if divide && (target as usize) < s.coarse_count() as usize {
                s.apply_click(ClickKind::RightDivide, target).unwrap();
                prop_assert_eq!(s.export_mask(), before);
            } else {
                let label = s.label(target).unwrap();
                s.apply_click(ClickKind::LeftFlip, target).unwrap();
                prop_assert_eq!(s.label(target).unwrap(), !label);
                let mut undo = s.clone();
                undo.apply_click(ClickKind::LeftFlip, target).unwrap();
                prop_assert_eq!(undo.export_mask(), before);
            }
            prop_assert_eq!(s.export_mask().count(), labelled_pixels(&s));
        }
        let replayed = s.replay().unwrap();
        prop_assert_eq!(replayed.export_mask(), s.export_mask());
        prop_assert_eq!(replayed.final_coarse_labels(), s.final_coarse_labels());
    }

    #[test]
    fn oracle_clicks_never_lower_f(seed in 0u64..500) {
        let img = scene(seed);
        let truth = Mask::from_fn(SIZE, SIZE, |x, y| img.pixel(x, y)[0] >= 200);
        let (_, mut s) = session(seed, |k| pseudo(seed, k));
        let outcome = oracle_annotate(&mut s, &truth, 500).unwrap();
        prop_assert!(s.is_sealed());
        let mut step = s.fresh();
        let mut f = mask_metrics(&step.export_mask(), &truth).unwrap().f_measure;
        for e in s.clicks() {
            step.apply_click(e.kind, e.target).unwrap();
            let next = mask_metrics(&step.export_mask(), &truth).unwrap().f_measure;
            prop_assert!(next >= f - 1e-12);
            f = next;
        }
        prop_assert!((f - outcome.f_measure).abs() < 1e-12);
    }

    #[test]
    fn auto_refine_only_touches_the_band(seed in 0u64..500, flip_picks in prop::collection::vec(0usize..50, 1..5)) {
        let cfg = PipelineConfig::default();
        let pca = identity_pca();
        let probs = |k: usize| pseudo(seed, k);
        let (img, mut teacher) = session(seed, probs);
        let n = teacher.coarse_count() as usize;
        for p in flip_picks {
            let c = (p % n) as u32;
            if teacher.clicks().iter().all(|e| e.target != c) {
                teacher.apply_click(ClickKind::LeftFlip, c).unwrap();
            }
        }
        let mut flips = FlipDictionaries::new(DESCRIPTOR_DIMS, cfg.context_scales as usize);
        record_flips(&teacher, &img, &mut flips, &pca, cfg.context_scales, "set").unwrap();

        let (_, mut s) = session(seed, probs);
        let before = s.presented_labels().to_vec();
        let flipped = auto_refine(&mut s, &img, &flips, &pca, &cfg).unwrap();
        let (lo, hi) = (cfg.beta0 - cfg.delta_beta, cfg.beta0 + cfg.delta_beta);
        for c in 0..n {
            let in_band = (lo..=hi).contains(&s.probabilities()[c]);
            let changed = before[c] != s.presented_labels()[c];
            prop_assert_eq!(changed, flipped.contains(&(c as u32)));
            if !in_band {
                prop_assert!(!changed);
            }
        }
        for e in teacher.clicks() {
            let c = e.target as usize;
            if (lo..=hi).contains(&s.probabilities()[c]) && flips.is_active(before[c]) {
                prop_assert!(flipped.contains(&e.target));
            }
        }
        prop_assert_eq!(s.export_mask().count(), labelled_pixels(&s));
    }

    #[test]
    fn proposals_are_unions_of_fine_regions(seed in 0u64..500) {
        let img = scene(seed);
        let fine = segment_superpixels(&img, &SlicParams::new(60, Scale::Fine)).unwrap();
        let props = generate_proposals(&img, &fine, 40, &Default::default()).unwrap();
        prop_assert!(!props.is_empty() && props.len() <= 40);
        for w in props.windows(2) {
            prop_assert!(w[0].objectness >= w[1].objectness);
        }
        for p in &props {
            prop_assert!(p.mask.is_connected());
            let mut rebuilt = Mask::new(SIZE, SIZE);
            for &r in &p.regions {
                for (i, &l) in fine.labels().iter().enumerate() {
                    if l == r {
                        rebuilt.set(i as u32 % SIZE, i as u32 / SIZE, true);
                    }
                }
            }
            prop_assert_eq!(&rebuilt, &p.mask);
        }
    }
}
