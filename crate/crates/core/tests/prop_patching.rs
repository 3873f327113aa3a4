use fabric_motif::imaging::GrayImage;
use fabric_motif::patching::*;
use proptest::prelude::*;

fn image() -> impl Strategy<Value = GrayImage> {
    (5..=14usize, 5..=14usize).prop_flat_map(|(w, h)| {
        // Few distinct values so flat windows actually occur.
        prop::collection::vec(0..3u8, w * h)
            .prop_map(move |d| GrayImage::new(w, h, d.into_iter().map(f64::from).collect()).unwrap())
    })
}

proptest! {
    #[test]
    fn windows_match_the_source(img in image(), p in 1..=5usize, o in 1..4usize) {
        let ps = extract_patches(&img, p, o).unwrap();
        let (nc, nr) = ((img.width() - p) / o + 1, (img.height() - p) / o + 1);
        prop_assert_eq!(ps.len(), nr * nc);
        for (k, patch) in ps.iter().enumerate() {
            let (r0, c0) = ((k / nc) * o, (k % nc) * o);
            prop_assert_eq!(patch.origin, (r0, c0));
            for i in 0..p {
                for j in 0..p {
                    prop_assert_eq!(patch.values[i * p + j], img.get(r0 + i, c0 + j));
                }
            }
        }
    }

    #[test]
    fn shuffle_is_a_permutation(img in image(), p in 1..4usize, seed in any::<u64>()) {
        let ps = extract_patches(&img, p, 1).unwrap();
        let shuffled = shuffle_patches(&ps, seed);
        let mut a = ps.origins().to_vec();
        let mut b = shuffled.origins().to_vec();
        let again = shuffle_patches(&ps, seed);
        prop_assert_eq!(again.origins(), shuffled.origins());
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn zero_threshold_drops_exactly_the_flat_windows(img in image(), p in 1..4usize) {
        let ps = extract_patches(&img, p, 1).unwrap();
        let kept = filter_by_variance(&ps, 0.0).unwrap();
        let want: Vec<_> = ps
            .iter()
            .filter(|patch| patch.values.iter().any(|&v| v != patch.values[0]))
            .map(|patch| patch.origin)
            .collect();
        prop_assert_eq!(kept.origins(), &want[..]);
    }
}
