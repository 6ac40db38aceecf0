//! Property tests for the spec-level invariants that hold over arbitrary
//! inputs rather than fixed examples.

use idcnn::dataset::extract_patches;
use idcnn::image::{ColorImage, NoiseMap};
use idcnn::metrics::{confusion, fnr, fpr, mae, mse, psnr, wacc};
use idcnn::noise::{corrupt_ctri, corrupt_spin};
use idcnn::restore::{adaptive_mean_restore, RestoreConfig};
use idcnn::rng::SeedRng;
use proptest::prelude::*;

fn image_strategy(max: usize) -> impl Strategy<Value = ColorImage> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(any::<u8>(), 3 * h * w)
            .prop_map(move |data| ColorImage::from_raw(h, w, data).unwrap())
    })
}

fn image_map_strategy(max: usize) -> impl Strategy<Value = (ColorImage, NoiseMap)> {
    (2..=max, 2..=max).prop_flat_map(|(h, w)| {
        (
            prop::collection::vec(any::<u8>(), 3 * h * w),
            prop::collection::vec(prop::bool::weighted(0.4), h * w),
        )
            .prop_map(move |(data, flags)| {
                let img = ColorImage::from_raw(h, w, data).unwrap();
                let map = NoiseMap::from_raw(
                    h,
                    w,
                    flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect(),
                )
                .unwrap();
                (img, map)
            })
    })
}

fn same_dims_pair(max: usize) -> impl Strategy<Value = (ColorImage, ColorImage)> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        (
            prop::collection::vec(any::<u8>(), 3 * h * w),
            prop::collection::vec(any::<u8>(), 3 * h * w),
        )
            .prop_map(move |(a, b)| {
                (
                    ColorImage::from_raw(h, w, a).unwrap(),
                    ColorImage::from_raw(h, w, b).unwrap(),
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mae_is_a_metric((a, b) in same_dims_pair(12), c_data in prop::collection::vec(any::<u8>(), 3 * 12 * 12)) {
        let (h, w) = a.dims();
        let c = ColorImage::from_raw(h, w, c_data[..3 * h * w].to_vec()).unwrap();
        let ab = mae(&a, &b).unwrap();
        let ba = mae(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12); // symmetry
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(mae(&a, &a).unwrap(), 0.0); // identity
        // triangle inequality
        let ac = mae(&a, &c).unwrap();
        let cb = mae(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-9);
    }

    #[test]
    fn psnr_strictly_decreases_with_mse((a, b) in same_dims_pair(10), (c, d) in same_dims_pair(10)) {
        let m1 = mse(&a, &b).unwrap();
        let m2 = mse(&c, &d).unwrap();
        let p1 = psnr(&a, &b).unwrap();
        let p2 = psnr(&c, &d).unwrap();
        if m1 < m2 {
            prop_assert!(p1 > p2, "mse {m1} < {m2} but psnr {p1} <= {p2}");
        } else if m1 > m2 {
            prop_assert!(p1 < p2);
        }
    }

    #[test]
    fn detection_rates_stay_in_unit_interval((_, truth) in image_map_strategy(12), (_, est) in image_map_strategy(12)) {
        if truth.dims() == est.dims() {
            let c = confusion(&truth, &est).unwrap();
            let (w, fp, fnr_) = (wacc(&c), fpr(&c), fnr(&c));
            prop_assert!((0.0..=1.0).contains(&w));
            prop_assert!((0.0..=1.0).contains(&fp));
            prop_assert!((0.0..=1.0).contains(&fnr_));
            // perfect detection of the same map is exact
            let perfect = confusion(&truth, &truth).unwrap();
            prop_assert_eq!(wacc(&perfect), 1.0);
        }
    }

    #[test]
    fn restoration_is_rotation_and_flip_equivariant((img, mut map) in image_map_strategy(10)) {
        // keep at least one clean pixel
        map.set(0, 0, 0.0);
        let cfg = RestoreConfig::default();
        let direct = adaptive_mean_restore(&img, &map, &cfg).unwrap();
        let rot = adaptive_mean_restore(&img.rot90(), &map.rot90(), &cfg).unwrap();
        prop_assert_eq!(rot, direct.rot90());
        let flip = adaptive_mean_restore(&img.flip_ud(), &map.flip_ud(), &cfg).unwrap();
        prop_assert_eq!(flip, direct.flip_ud());
    }

    #[test]
    fn corruption_preserves_unselected_pixels(img in image_strategy(16), rho in 0.0f64..=1.0, seed in any::<u64>(), spin in any::<bool>()) {
        let mut rng = SeedRng::new(seed);
        let (noisy, map) = if spin {
            corrupt_spin(&img, rho, &mut rng).unwrap()
        } else {
            corrupt_ctri(&img, rho, &mut rng).unwrap()
        };
        let (h, w) = img.dims();
        for y in 0..h {
            for x in 0..w {
                if !map.flagged(y, x) {
                    prop_assert_eq!(noisy.pixel(y, x), img.pixel(y, x));
                } else if spin {
                    for v in noisy.pixel(y, x) {
                        prop_assert!(v == 0 || v == 255);
                    }
                }
            }
        }
        // same seed reproduces bit-identically
        let mut rng2 = SeedRng::new(seed);
        let again = if spin {
            corrupt_spin(&img, rho, &mut rng2).unwrap()
        } else {
            corrupt_ctri(&img, rho, &mut rng2).unwrap()
        };
        prop_assert_eq!(again.0, noisy);
        prop_assert_eq!(again.1, map);
    }

    #[test]
    fn patch_grids_tile_without_overlap(img in image_strategy(24), p in 1usize..=8) {
        let (h, w) = img.dims();
        prop_assume!(p <= h.min(w));
        let map = NoiseMap::zeros(h, w);
        let set = extract_patches(&img, &map, p).unwrap();
        prop_assert_eq!(set.len(), (h / p) * (w / p));
        // reassembling the patches reproduces the cropped source exactly
        for patch in &set.patches {
            let (gy, gx) = (patch.provenance.grid_y, patch.provenance.grid_x);
            for y in 0..p {
                for x in 0..p {
                    prop_assert_eq!(patch.noisy.pixel(y, x), img.pixel(gy * p + y, gx * p + x));
                }
            }
        }
    }
}
