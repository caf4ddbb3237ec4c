use maskforge::imaging::{
    context_box, refine_partition, segment_superpixels, Mask, RasterImage, Scale, SlicParams,
    SuperpixelPartition,
};
use proptest::prelude::*;

fn blocky_image(size: u32, seed: u64) -> RasterImage {
    RasterImage::from_fn(size, size, |x, y| {
        let cell = (x / 7) as u64 * 31 + (y / 5) as u64 * 17 + seed;
        let h = cell.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40;
        let n = ((x as u64 * 13 + y as u64 * 7 + seed) % 11) as u8;
        [(h & 0xff) as u8 ^ n, ((h >> 8) & 0xff) as u8, ((h >> 16) & 0xff) as u8 ^ n]
    })
}

fn check_partition(p: &SuperpixelPartition) {
    let total: usize = p.all_stats().iter().map(|s| s.pixel_count).sum();
    assert_eq!(total, (p.width() * p.height()) as usize);
    for r in 0..p.region_count() as u32 {
        let m = p.region_mask(r);
        assert!(!m.is_empty(), "region {r} empty");
        assert!(m.is_connected(), "region {r} disconnected");
    }
    for y in 0..p.height() {
        for x in 0..p.width() {
            let a = p.label_at(x, y);
            if x + 1 < p.width() {
                let b = p.label_at(x + 1, y);
                assert!(a == b || p.are_adjacent(a, b));
            }
            if y + 1 < p.height() {
                let b = p.label_at(x, y + 1);
                assert!(a == b || p.are_adjacent(a, b));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn segmentation_and_refinement_hold_invariants(
        seed in 0u64..1000,
        size in 24u32..48,
        coarse_k in 4usize..24,
        fine_k in 30usize..120,
    ) {
        let img = blocky_image(size, seed);
        let coarse = segment_superpixels(&img, &SlicParams::new(coarse_k, Scale::Coarse)).unwrap();
        let fine = segment_superpixels(&img, &SlicParams::new(fine_k, Scale::Fine)).unwrap();
        check_partition(&coarse);
        check_partition(&fine);
        prop_assert!(coarse.region_count() * 2 >= coarse_k && coarse.region_count() <= 2 * coarse_k);

        let refined = refine_partition(&fine, &coarse).unwrap();
        check_partition(&refined);
        let mut parent = vec![None; refined.region_count()];
        for (&r, &c) in refined.labels().iter().zip(coarse.labels()) {
            let slot = &mut parent[r as usize];
            prop_assert!(slot.is_none() || *slot == Some(c));
            *slot = Some(c);
        }

        let again = segment_superpixels(&img, &SlicParams::new(coarse_k, Scale::Coarse)).unwrap();
        prop_assert_eq!(again.labels(), coarse.labels());
    }

    #[test]
    fn context_boxes_nest_within_the_image(seed in 0u64..1000, k in 4usize..30) {
        let img = blocky_image(40, seed);
        let part = segment_superpixels(&img, &SlicParams::new(k, Scale::Coarse)).unwrap();
        let full = Mask::full(40, 40).bounding_box().unwrap();
        for r in 0..part.region_count() as u32 {
            let mut prev = part.stats(r).bbox;
            for n in 1..=4 {
                let b = context_box(&part, r, n).unwrap();
                prop_assert!(b.rect.contains(&prev));
                prop_assert!(full.contains(&b.rect));
                prev = b.rect;
            }
        }
    }
}
