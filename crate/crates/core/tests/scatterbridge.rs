use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wstfuse::scatter::{
    bridge, bridge_backward, fixed::frozen_bank, fixed_wst, fixed_wst_reference, scatter0, scatter1, scatter2, BankConfig, Bridge, FilterBank, NormState,
    OffsetParams,
};
use wstfuse::{FeatureTensor, Image};

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::from_fn(h, w, |_, _| rng.random())
}

fn brute_complex(src: &[f64], h: usize, w: usize, k: &wstfuse::scatter::bank::MorletKernel) -> Vec<Complex64> {
    let r = k.radius as isize;
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for v in -r..=r {
                for u in -r..=r {
                    let sy = mirror(y as isize - v, h);
                    let sx = mirror(x as isize - u, w);
                    acc += k.at(v, u) * src[sy * w + sx];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn brute_phi(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for v in -r..=r {
                for u in -r..=r {
                    let wt = taps[(v + r) as usize] * taps[(u + r) as usize];
                    acc += wt * src[mirror(y as isize - v, h) * w + mirror(x as isize - u, w)];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn default_bank() -> FilterBank {
    let cfg = BankConfig::default();
    FilterBank::new(&cfg, &OffsetParams::zeros(&cfg)).unwrap()
}

fn small_cfg() -> BankConfig {
    BankConfig {
        scales: 2,
        orientations: 3,
        ..BankConfig::default()
    }
}

#[test]
fn scatter0_constant_impulse_and_brute_force() {
    let bank = default_bank();
    let c = scatter0(&Image::filled(12, 12, 0.37), &bank);
    assert!(c.pixels().iter().all(|v| (v - 0.37).abs() < 1e-12));

    let mut imp = Image::zeros(15, 15).into_pixels();
    imp[7 * 15 + 7] = 1.0;
    let out = scatter0(&Image::new(15, 15, imp).unwrap(), &bank);
    let taps = bank.phi_taps();
    for dy in -4isize..=4 {
        for dx in -4isize..=4 {
            let v = out.get((7 + dy) as usize, (7 + dx) as usize);
            assert!((v - taps[(dy + 4) as usize] * taps[(dx + 4) as usize]).abs() < 1e-15);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = random_image(16, 16, &mut rng);
    let got = scatter0(&img, &bank);
    let want = brute_phi(img.pixels(), 16, 16, taps);
    for (a, b) in got.pixels().iter().zip(&want) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn scatter1_zero_constant_and_brute_force() {
    let bank = default_bank();
    let z = scatter1(&Image::zeros(16, 16), &bank, 2, 3).unwrap();
    assert!(z.pixels().iter().all(|&v| v == 0.0));
    for j in 1..=3 {
        for k in 1..=6 {
            let c = scatter1(&Image::filled(24, 24, 0.8), &bank, j, k).unwrap();
            let m = c.pixels().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(m <= 1e-8, "j={j} k={k} max {m}");
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = random_image(16, 16, &mut rng);
    let cfg = bank.config();
    for (j, k) in [(1, 1), (3, 4)] {
        let got = scatter1(&img, &bank, j, k).unwrap();
        let u: Vec<f64> = brute_complex(img.pixels(), 16, 16, bank.kernel(cfg.filter_index(j, k)))
            .iter()
            .map(|z| z.norm())
            .collect();
        let want = brute_phi(&u, 16, 16, bank.phi_taps());
        for (a, b) in got.pixels().iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }
    }
    assert!(scatter1(&img, &bank, 4, 1).is_err());
}

#[test]
fn scatter1_prefers_matching_orientation() {
    let bank = default_bank();
    let cfg = bank.config();
    let n = 48;
    for j in 1..=3 {
        for k in 1..=6 {
            let theta = cfg.orientation(k);
            let omega = cfg.xi / (cfg.base_scale * 2f64.powi(j as i32 - 1));
            // carrier direction (cos, sin) over (column, row)
            let img = Image::from_fn(n, n, |r, c| {
                0.5 + 0.5 * (omega * (c as f64 * theta.cos() + r as f64 * theta.sin())).cos()
            });
            let orth = (k + 2) % 6 + 1; // theta + pi/2
            let mean = |kk| {
                let s = scatter1(&img, &bank, j, kk).unwrap();
                s.pixels().iter().sum::<f64>() / s.len() as f64
            };
            assert!(mean(k) > mean(orth), "j={j} k={k}");
        }
    }
}

#[test]
fn scatter2_staged_oracle_and_order_rule() {
    let bank = default_bank();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = random_image(8, 8, &mut rng);
    for (a, b) in [(0, 1), (2, 13), (16, 17)] {
        let got = scatter2(&img, &bank, (a, b)).unwrap();
        let ua: Vec<f64> = brute_complex(img.pixels(), 8, 8, bank.kernel(a)).iter().map(|z| z.norm()).collect();
        let ub: Vec<f64> = brute_complex(&ua, 8, 8, bank.kernel(b)).iter().map(|z| z.norm()).collect();
        let want = brute_phi(&ub, 8, 8, bank.phi_taps());
        for (x, y) in got.pixels().iter().zip(&want) {
            assert!((x - y).abs() < 1e-9, "({a},{b}) {x} vs {y}");
        }
    }
    assert!(scatter2(&Image::zeros(8, 8), &bank, (3, 9)).unwrap().pixels().iter().all(|&v| v == 0.0));
    assert!(scatter2(&img, &bank, (5, 5)).is_err());
    assert!(scatter2(&img, &bank, (6, 2)).is_err());
    assert_eq!(bank.config().pairs().len(), 153);
}

#[test]
fn bridge_shape_and_rejects_odd() {
    let cfg = BankConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = random_image(64, 64, &mut rng);
    let start = Instant::now();
    let t = bridge(&img, &cfg, &OffsetParams::zeros(&cfg), &NormState::instance(172)).unwrap();
    let elapsed = start.elapsed();
    assert_eq!((t.height(), t.width(), t.channels()), (32, 32, 172));
    assert!(elapsed.as_secs_f64() < 1.0, "{elapsed:?}");
    let odd = random_image(63, 64, &mut rng);
    assert!(bridge(&odd, &cfg, &OffsetParams::zeros(&cfg), &NormState::instance(172)).is_err());
}

#[test]
fn zero_offsets_match_fixed_path() {
    let cfg = BankConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let norm = NormState::instance(172);
    let img = random_image(16, 16, &mut rng);
    let a = bridge(&img, &cfg, &OffsetParams::zeros(&cfg), &norm).unwrap();
    let b = fixed_wst(&img, &cfg, &norm).unwrap();
    assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    let frozen = fixed_wst_reference(&img, &cfg, &norm).unwrap();
    assert_eq!(frozen.labels(), a.labels());
    assert!(a.values().iter().zip(frozen.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    // the frozen kernels agree with the deformable builder at zero offset
    let bank = FilterBank::new(&cfg, &OffsetParams::zeros(&cfg)).unwrap();
    let fb = frozen_bank(&cfg).unwrap();
    for (k, f) in bank.kernels().iter().zip(fb.kernels()) {
        assert_eq!(k.values, f.values);
    }
}

#[test]
fn forward_is_deterministic_and_nonnegative() {
    let cfg = small_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let img = random_image(20, 16, &mut rng);
    let mut off = OffsetParams::zeros(&cfg);
    off.delta_j[2] = 0.3;
    off.delta_theta[4] = -0.2;
    let b = Bridge::new(&cfg, &off, 20, 16).unwrap();
    let s1 = b.stack(&img).unwrap();
    let s2 = b.stack(&img).unwrap();
    assert_eq!(s1, s2);
    assert!(s1.values()[20 * 16..].iter().all(|&v| v >= 0.0));
}

#[test]
fn scale_covariance() {
    let cfg = small_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let img = random_image(16, 16, &mut rng);
    let b = Bridge::new(&cfg, &OffsetParams::zeros(&cfg), 16, 16).unwrap();
    let base = b.stack(&img).unwrap();
    let scaled = b.stack(&img.scaled(3.0).unwrap()).unwrap();
    for (x, y) in base.values().iter().zip(scaled.values()) {
        assert!((3.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
    }
}

fn weighted_objective(b: &Bridge, img: &Image, norm: &NormState, w: &[f64]) -> f64 {
    let (t, _) = b.forward(img, norm, false).unwrap();
    t.values().iter().zip(w).map(|(a, c)| a * c).sum()
}

#[test]
fn offset_gradients_match_central_differences() {
    let cfg = BankConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = random_image(16, 16, &mut rng);
    let mut off = OffsetParams::zeros(&cfg);
    for n in 0..cfg.filter_count() {
        off.delta_j[n] = rng.random_range(-0.3..0.3);
        off.delta_theta[n] = rng.random_range(-0.2..0.2);
    }
    let mut norm = NormState::instance(172);
    for c in 0..172 {
        norm.gamma[c] = rng.random_range(0.5..1.5);
        norm.beta[c] = rng.random_range(-0.2..0.2);
    }
    let w: Vec<f64> = (0..172 * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
    let upstream = FeatureTensor::new(8, 8, 172, w.clone(), wstfuse::scatter::bridge::channel_labels(&cfg)).unwrap();
    let grads = bridge_backward(&img, &cfg, &off, &norm, &upstream).unwrap();

    let h = 1e-4;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-7);
    for n in 0..cfg.filter_count() {
        for which in 0..2 {
            let eval = |delta: f64| {
                let mut o = off.clone();
                if which == 0 {
                    o.delta_j[n] += delta;
                } else {
                    o.delta_theta[n] += delta;
                }
                let b = Bridge::new(&cfg, &o, 16, 16).unwrap();
                weighted_objective(&b, &img, &norm, &w)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = if which == 0 { grads.delta_j[n] } else { grads.delta_theta[n] };
            assert!(rel(an, fd) < 1e-4, "filter {n} kind {which}: {an} vs {fd}");
        }
    }

    let b = Bridge::new(&cfg, &off, 16, 16).unwrap();
    let input = grads.input.as_ref().unwrap();
    for &(r, c) in &[(0usize, 0usize), (5, 9), (15, 3)] {
        let bump = |d: f64| {
            let mut p = img.clone().into_pixels();
            p[r * 16 + c] += d;
            weighted_objective(&b, &Image::new(16, 16, p).unwrap(), &norm, &w)
        };
        let fd = (bump(h) - bump(-h)) / (2.0 * h);
        assert!(rel(input.get(r, c), fd) < 1e-4, "pixel ({r},{c})");
    }
    for c in [0usize, 30, 171] {
        let eval = |d: f64| {
            let mut nn = norm.clone();
            nn.gamma[c] += d;
            weighted_objective(&b, &img, &nn, &w)
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        assert!(rel(grads.gamma[c], fd) < 1e-4);
    }
}

#[test]
fn zero_upstream_and_structural_independence() {
    let cfg = small_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let img = random_image(12, 12, &mut rng);
    let off = OffsetParams::zeros(&cfg);
    let c = cfg.channel_count();
    let norm = NormState::instance(c);
    let labels = wstfuse::scatter::bridge::channel_labels(&cfg);
    let zero = FeatureTensor::new(6, 6, c, vec![0.0; c * 36], labels.clone()).unwrap();
    let g = bridge_backward(&img, &cfg, &off, &norm, &zero).unwrap();
    assert!(g.delta_j.iter().chain(&g.delta_theta).all(|&v| v == 0.0));

    // only the S1 channel of filter 2 and S0 carry gradient
    let mut w = vec![0.0; c * 36];
    for v in &mut w[..36] {
        *v = rng.random_range(-1.0..1.0);
    }
    for v in &mut w[3 * 36..4 * 36] {
        *v = rng.random_range(-1.0..1.0);
    }
    let up = FeatureTensor::new(6, 6, c, w, labels).unwrap();
    let g = bridge_backward(&img, &cfg, &off, &norm, &up).unwrap();
    for n in 0..cfg.filter_count() {
        if n != 2 {
            assert_eq!(g.delta_j[n], 0.0);
            assert_eq!(g.delta_theta[n], 0.0);
        }
    }
    assert!(g.delta_j[2] != 0.0);

    let bad = FeatureTensor::zeros(6, 6, c - 1);
    let b = Bridge::new(&cfg, &off, 12, 12).unwrap();
    let (_, tape) = b.forward(&img, &norm, true).unwrap();
    assert!(b.backward(&tape.unwrap(), &norm, &bad, false).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn channel_formula(j in 1usize..4, k in 1usize..5) {
        let cfg = BankConfig { scales: j, orientations: k, ..BankConfig::default() };
        let n = j * k;
        prop_assert_eq!(cfg.channel_count(), 1 + n + n * (n - 1) / 2);
        prop_assert_eq!(wstfuse::scatter::bridge::channel_labels(&cfg).len(), cfg.channel_count());
    }

    #[test]
    fn scattering_nonnegative(seed in 0u64..1000, scale in 0.0f64..4.0) {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Image::from_fn(10, 10, |_, _| rng.random::<f64>() * scale - scale / 2.0);
        let b = Bridge::new(&cfg, &OffsetParams::zeros(&cfg), 10, 10).unwrap();
        let s = b.stack(&img).unwrap();
        prop_assert!(s.values()[100..].iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn clamp_holds_after_any_update(dj in -5.0f64..5.0, dt in -5.0f64..5.0, n in 0usize..18) {
        let cfg = BankConfig::default();
        let mut o = OffsetParams::zeros(&cfg);
        o.delta_j[n] += dj;
        o.delta_theta[n] += dt;
        o.clamp(&cfg);
        prop_assert!(o.within_bounds(&cfg));
        prop_assert!(o.delta_theta[n].abs() <= PI / 12.0 + 1e-15);
    }
}
