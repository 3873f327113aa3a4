mod common;

use fabric_motif::anomaly::ProbabilityMap;
use fabric_motif::imaging::GrayImage;
use fabric_motif::segmentation::*;
use proptest::prelude::*;

/// Level image in `0..l` with enough structure for several occupied bins.
fn levels() -> impl Strategy<Value = (usize, usize, usize, Vec<usize>)> {
    (2..=16usize, 3..=12usize, 3..=12usize).prop_flat_map(|(l, w, h)| {
        (Just(l), Just(w), Just(h), prop::collection::vec(0..l, w * h))
    })
}

fn mask() -> impl Strategy<Value = BinaryMask> {
    (1..=14usize, 1..=14usize).prop_flat_map(|(w, h)| {
        prop::collection::vec(prop::bool::weighted(0.6), w * h)
            .prop_map(move |v| BinaryMask::new(w, h, v).unwrap())
    })
}

fn as_image(v: &[usize], w: usize, h: usize) -> GrayImage {
    GrayImage::new(w, h, v.iter().map(|&x| x as f64).collect()).unwrap()
}

proptest! {
    #[test]
    fn entropy_threshold_matches_exhaustive_search((l, w, h, lv) in levels()) {
        let img = as_image(&lv, w, h);
        let means = neighborhood_mean(&img, 3).unwrap();
        let mv = common::window_mean(&lv, w, h, 3);
        prop_assert_eq!(means.data().iter().map(|&x| x as usize).collect::<Vec<_>>(), mv.clone());
        let got = entropy_threshold_2d(&img, &means, l).ok();
        let want = common::entropy_threshold(&lv, &mv, l, 1e-10);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn opening_is_idempotent_and_anti_extensive(m in mask(), half in 0..3usize) {
        let se = 2 * half + 1;
        let once = opening(&m, se).unwrap();
        let twice = opening(&once, se).unwrap();
        prop_assert_eq!(&once, &twice);
        for (o, i) in once.values.iter().zip(&m.values) {
            prop_assert!(!o || *i);
        }
    }

    #[test]
    fn binarize_is_monotone((_l, w, h, lv) in levels(), s in 0..17usize, t in 0..17usize, ds in 0..4usize, dt in 0..4usize) {
        let img = as_image(&lv, w, h);
        let means = neighborhood_mean(&img, 3).unwrap();
        let loose = binarize(&img, s, t, &means).unwrap();
        let strict = binarize(&img, s + ds, t + dt, &means).unwrap();
        for (a, b) in strict.values.iter().zip(&loose.values) {
            prop_assert!(!a || *b);
        }
    }
}

#[test]
fn zero_map_gives_empty_mask() {
    let map = ProbabilityMap::from_values(16, 12, vec![0.0; 16 * 12]).unwrap();
    let mask = segment(&map, &SegmentParams::default()).unwrap();
    assert!(mask.is_empty());
}

#[test]
fn bright_square_is_segmented() {
    let mut values = vec![0.02; 32 * 32];
    for r in 10..18 {
        for c in 12..20 {
            values[r * 32 + c] = 0.9;
        }
    }
    let map = ProbabilityMap::from_values(32, 32, values).unwrap();
    let mask = segment(&map, &SegmentParams::default()).unwrap();
    assert!(mask.count() > 0);
    for r in 0..32 {
        for c in 0..32 {
            if mask.get(r, c) {
                assert!((9..19).contains(&r) && (11..21).contains(&c), "stray pixel at {r},{c}");
            }
        }
    }
}
