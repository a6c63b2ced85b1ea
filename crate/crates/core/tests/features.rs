use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wstfuse::features::{
    canny_map, gaussian_blur, gre_map, haar_map, hog_histograms, hog_map, FeatureMapKind, FeatureParams, IntegralImage,
};
use wstfuse::Image;

fn mirror(i: isize, n: usize) -> usize {
    let p = 2 * (n as isize - 1);
    let m = i.rem_euclid(p);
    (if m < n as isize { m } else { p - m }) as usize
}

fn step(h: usize, w: usize, edge: usize) -> Image {
    Image::from_fn(h, w, |_, x| if x >= edge { 1.0 } else { 0.0 })
}

fn smooth_random(n: usize, rng: &mut ChaCha8Rng) -> Image {
    gaussian_blur(&Image::from_fn(n, n, |_, _| rng.random()), 1.5).unwrap()
}

#[test]
fn every_operator_zeroes_constants_and_keeps_dims() {
    let p = FeatureParams::default();
    for c in [0.0, 0.3, 7.0] {
        let img = Image::filled(32, 40, c);
        for kind in FeatureMapKind::HANDCRAFTED {
            let out = p.apply(kind, &img).unwrap();
            assert_eq!(out.dims(), (32, 40), "{kind}");
            assert!(out.pixels().iter().all(|&v| v == 0.0), "{kind} on {c}");
        }
    }
}

#[test]
fn kind_names_round_trip() {
    for kind in FeatureMapKind::HANDCRAFTED.into_iter().chain([FeatureMapKind::Wst]) {
        assert_eq!(kind.name().parse::<FeatureMapKind>().unwrap(), kind);
    }
    assert!("SIFT".parse::<FeatureMapKind>().is_err());
    assert!(FeatureParams::default().apply(FeatureMapKind::Wst, &Image::zeros(8, 8)).is_err());
}

fn histogram_oracle(img: &Image, cell: usize, bins: usize) -> Vec<Vec<f64>> {
    let (h, w) = img.dims();
    let mut out = vec![vec![0.0; bins]; (h / cell) * (w / cell)];
    for y in 0..h {
        for x in 0..w {
            let gx = 0.5 * (img.get(y, mirror(x as isize + 1, w)) - img.get(y, mirror(x as isize - 1, w)));
            let gy = 0.5 * (img.get(mirror(y as isize + 1, h), x) - img.get(mirror(y as isize - 1, h), x));
            let m = gx.hypot(gy);
            if m == 0.0 {
                continue;
            }
            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += PI;
            }
            if theta >= PI {
                theta -= PI;
            }
            let b = ((theta * bins as f64 / PI) as usize).min(bins - 1);
            out[(y / cell) * (w / cell) + x / cell][b] += m;
        }
    }
    out
}

#[test]
fn hog_vertical_edge() {
    let img = step(32, 32, 12);
    let hist = hog_histograms(&img, 8, 9).unwrap();
    let oracle = histogram_oracle(&img, 8, 9);
    for (a, b) in hist.iter().zip(&oracle) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    // cells in column 1 (pixels 8..16) straddle the edge
    for cy in 0..4 {
        let cell = &hist[cy * 4 + 1];
        let best = (0..9).max_by(|&i, &j| cell[i].total_cmp(&cell[j])).unwrap();
        assert_eq!(best, 0);
        assert!(cell[0] > 0.0 && cell[1..].iter().all(|&v| v == 0.0));
    }
    let map = hog_map(&img, 8, 9).unwrap();
    assert_eq!(map.dims(), (32, 32));
    assert!(map.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(map.get(5, 12) > 0.0);
    assert_eq!(map.get(5, 30), 0.0);
}

#[test]
fn hog_rejects_bad_geometry() {
    assert!(hog_map(&Image::zeros(30, 32), 8, 9).is_err());
    assert!(hog_map(&Image::zeros(16, 16), 32, 9).is_err());
    assert!(hog_map(&Image::zeros(16, 16), 8, 1).is_err());
}

#[test]
fn canny_single_column_edge() {
    let img = step(24, 32, 16);
    let e = canny_map(&img, 1.4, 0.1, 0.2).unwrap();
    assert!(e.pixels().iter().all(|&v| v == 0.0 || v == 1.0));
    let cols: Vec<usize> = (0..32).filter(|&x| (0..24).any(|y| e.get(y, x) == 1.0)).collect();
    assert_eq!(cols.len(), 1, "edge columns {cols:?}");
    assert!(cols[0] == 15 || cols[0] == 16);
    assert!((0..24).all(|y| e.get(y, cols[0]) == 1.0));
    assert!(canny_map(&img, 1.4, 0.3, 0.2).is_err());
    assert!(canny_map(&img, 1.4, 0.0, 0.2).is_err());
}

#[test]
fn canny_binary_on_random() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let e = canny_map(&smooth_random(32, &mut rng), 1.4, 0.1, 0.2).unwrap();
    assert!(e.pixels().iter().all(|&v| v == 0.0 || v == 1.0));
    assert!(e.pixels().iter().any(|&v| v == 1.0));
}

#[test]
fn gre_ramp_and_oracle() {
    let ramp = Image::from_fn(40, 40, |_, x| x as f64);
    let g = gre_map(&ramp, 2.0).unwrap();
    for y in 0..40 {
        for x in 8..32 {
            assert!((g.get(y, x) - 1.0).abs() < 1e-9, "{}", g.get(y, x));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = Image::from_fn(20, 24, |_, _| rng.random());
    let s = gaussian_blur(&img, 2.0).unwrap();
    let g = gre_map(&img, 2.0).unwrap();
    for y in 0..20 {
        for x in 0..24 {
            let gx = 0.5 * (s.get(y, mirror(x as isize + 1, 24)) - s.get(y, mirror(x as isize - 1, 24)));
            let gy = 0.5 * (s.get(mirror(y as isize + 1, 20), x) - s.get(mirror(y as isize - 1, 20), x));
            assert!((g.get(y, x) - gx.hypot(gy)).abs() < 1e-12);
            assert!(g.get(y, x) >= 0.0);
        }
    }
    assert!(gre_map(&img, 0.0).is_err());
}

#[test]
fn integral_image_sums_are_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        // dyadic values make every partial sum exact
        let img = Image::from_fn(16, 16, |_, _| rng.random_range(0..256) as f64 / 256.0);
        let ii = IntegralImage::new(&img);
        for _ in 0..50 {
            let (r0, r1) = {
                let a = rng.random_range(0..=16);
                let b = rng.random_range(0..=16);
                (a.min(b), a.max(b))
            };
            let (c0, c1) = {
                let a = rng.random_range(0..=16);
                let b = rng.random_range(0..=16);
                (a.min(b), a.max(b))
            };
            let mut brute = 0.0;
            for y in r0..r1 {
                for x in c0..c1 {
                    brute += img.get(y, x);
                }
            }
            assert_eq!(ii.rect_sum(r0, c0, r1, c1), brute);
        }
    }
}

fn haar_oracle(img: &Image, scale: usize) -> Image {
    let (h, w) = img.dims();
    let half = scale as isize / 2;
    let at = |y: isize, x: isize| img.get(mirror(y, h), mirror(x, w));
    let area = (scale as isize * half) as f64;
    Image::from_fn(h, w, |y, x| {
        let (y, x) = (y as isize, x as isize);
        let (mut l, mut r, mut t, mut b) = (0.0, 0.0, 0.0, 0.0);
        for yy in y - half..y + half {
            for xx in x - half..x + half {
                let v = at(yy, xx);
                if xx < x {
                    l += v
                } else {
                    r += v
                }
                if yy < y {
                    t += v
                } else {
                    b += v
                }
            }
        }
        ((l - r) / area).abs().max(((t - b) / area).abs())
    })
}

#[test]
fn haar_step_edge_and_oracle() {
    let img = step(24, 40, 20);
    let m = haar_map(&img, 4).unwrap();
    for y in 0..24 {
        assert_eq!(m.get(y, 20), 1.0);
        for d in 4..15 {
            assert_eq!(m.get(y, 20 + d), 0.0);
            assert_eq!(m.get(y, 20 - d), 0.0);
        }
        assert!(m.get(y, 21) < 1.0 && m.get(y, 21) > 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let img = Image::from_fn(18, 22, |_, _| rng.random());
    for scale in [2, 4, 8] {
        let got = haar_map(&img, scale).unwrap();
        let want = haar_oracle(&img, scale);
        assert!(got.max_abs_diff(&want) < 1e-12);
    }
    assert!(haar_map(&img, 3).is_err());
    assert!(haar_map(&img, 0).is_err());
    assert!(haar_map(&img, 20).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn constant_images_give_zero_maps(c in -100.0f64..100.0) {
        let img = Image::filled(16, 16, c);
        let p = FeatureParams { hog_cell: 4, haar_scale: 4, ..FeatureParams::default() };
        for kind in FeatureMapKind::HANDCRAFTED {
            prop_assert!(p.apply(kind, &img).unwrap().pixels().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn hog_and_gre_ignore_offsets(seed in 0u64..10_000, c in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = smooth_random(16, &mut rng);
        let shifted = img.map(|v| v + c).unwrap();
        prop_assert!(gre_map(&img, 2.0).unwrap().max_abs_diff(&gre_map(&shifted, 2.0).unwrap()) < 1e-9);
        let a = hog_histograms(&img, 4, 9).unwrap();
        let b = hog_histograms(&shifted, 4, 9).unwrap();
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn maps_keep_dims(h in 1usize..5, w in 1usize..5) {
        let (h, w) = (h * 8, w * 8);
        let mut rng = ChaCha8Rng::seed_from_u64((h * 31 + w) as u64);
        let img = Image::from_fn(h, w, |_, _| rng.random());
        let p = FeatureParams { haar_scale: 8, ..FeatureParams::default() };
        for kind in FeatureMapKind::HANDCRAFTED {
            prop_assert_eq!(p.apply(kind, &img).unwrap().dims(), (h, w));
        }
    }
}
