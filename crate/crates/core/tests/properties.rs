mod common;

use proptest::prelude::*;

use common::{brute_force_distance, composite, random_image, random_mask, rng};
use targetfill::denoise::OracleDenoiser;
use targetfill::masks::{dilate_hole, distance_transform, heated_mask, ring, Mask};
use targetfill::noise::{forward_noise, make_linear_schedule, renoise_one_step, BETA_END, BETA_START, TRAIN_STEPS};
use targetfill::pipeline::{compose_binary, compose_heated, run_traced, SamplerConfig};
use targetfill::rng::{Purpose, SeededRng};
use targetfill::schedules::{denoiser_call_count, jump_plan, LambdaSpec, Move};
use targetfill::{ImageTensor, Shape};

fn mask_strategy() -> impl Strategy<Value = Mask> {
    (1usize..=10, 1usize..=10, 0.0f64..1.0, any::<u64>())
        .prop_map(|(h, w, frac, seed)| random_mask(h, w, frac, &mut rng(seed)))
}

/// Hole pixels grown by a square (Chebyshev) neighbourhood, exhaustively.
fn brute_force_dilation(mask: &Mask, width: usize) -> Vec<bool> {
    let (h, w) = (mask.height(), mask.width());
    let mut hole = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            hole[y * w + x] = (0..h).any(|sy| {
                (0..w).any(|sx| {
                    mask.is_hole(sy, sx) && y.abs_diff(sy) <= width && x.abs_diff(sx) <= width
                })
            });
        }
    }
    hole
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn distance_transform_matches_exhaustive_search(mask in mask_strategy()) {
        let fast = distance_transform(&mask).unwrap();
        let slow = brute_force_distance(&mask);
        prop_assert_eq!(fast.values(), slow.as_slice());
    }

    #[test]
    fn heat_is_bounded_zero_on_scene_and_falls_with_buffer(mask in mask_strategy(), b in 1u32..6) {
        let narrow = heated_mask(&mask, b).unwrap();
        let wide = heated_mask(&mask, b + 1).unwrap();
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                let h = narrow.get(y, x);
                prop_assert!((0.0..=1.0).contains(&h));
                prop_assert_eq!(h == 0.0, mask.is_scene(y, x));
                prop_assert!(wide.get(y, x) <= h);
            }
        }
    }

    #[test]
    fn heat_grows_with_distance(mask in mask_strategy(), b in 1u32..6) {
        let d = distance_transform(&mask).unwrap();
        let heat = heated_mask(&mask, b).unwrap();
        let mut pairs: Vec<(u32, f64)> = d.values().iter().copied().zip(heat.values().iter().copied()).collect();
        pairs.sort_by_key(|p| p.0);
        for w in pairs.windows(2) {
            prop_assert!(w[0].1 <= w[1].1);
        }
    }

    #[test]
    fn dilation_is_extensive_monotone_and_square(mask in mask_strategy(), width in 0usize..5) {
        let grown = dilate_hole(&mask, width);
        let more = dilate_hole(&mask, width + 1);
        let expected = brute_force_dilation(&mask, width);
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.is_hole(y, x) {
                    prop_assert!(grown.is_hole(y, x));
                }
                if grown.is_hole(y, x) {
                    prop_assert!(more.is_hole(y, x));
                }
                prop_assert_eq!(grown.is_hole(y, x), expected[y * mask.width() + x]);
            }
        }
    }

    #[test]
    fn ring_partitions_the_dilated_hole(mask in mask_strategy(), width in 0usize..5) {
        let band = ring(&mask, width);
        let grown = dilate_hole(&mask, width);
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                prop_assert!(!(band.contains(y, x) && mask.is_hole(y, x)));
                prop_assert_eq!(band.contains(y, x) || mask.is_hole(y, x), grown.is_hole(y, x));
            }
        }
        if width == 0 {
            prop_assert!(band.is_empty());
        }
    }

    #[test]
    fn alpha_bar_is_the_product_over_kept_steps(timesteps in 1usize..=1000) {
        let sched = make_linear_schedule(timesteps).unwrap();
        let base = |i: usize| {
            BETA_START + (BETA_END - BETA_START) * (i - 1) as f64 / (TRAIN_STEPS - 1) as f64
        };
        let mut prod = 1.0f64;
        let mut kept = 0usize;
        for t in 1..=timesteps {
            let s = ((t * TRAIN_STEPS) as f64 / timesteps as f64).round() as usize;
            for i in kept + 1..=s {
                prod *= 1.0 - base(i);
            }
            kept = s;
            prop_assert!((sched.alpha_bar(t) - prod).abs() <= 1e-12);
            prop_assert!(sched.alpha_bar(t) < sched.alpha_bar(t - 1));
        }
        prop_assert_eq!(sched.alpha_bar(0), 1.0);
        prop_assert_eq!(sched.posterior_var(1), 0.0);
    }

    #[test]
    fn plans_walk_unit_steps_within_range(timesteps in 1usize..300, j in 1usize..60, r in 1usize..12) {
        let plan = jump_plan(timesteps, j, r).unwrap();
        let mut t = plan.start();
        prop_assert_eq!(t, timesteps);
        for mv in plan.moves() {
            match *mv {
                Move::Down(to) => prop_assert_eq!(to + 1, t),
                Move::Up(to) => prop_assert_eq!(to, t + 1),
            }
            t = mv.to();
            prop_assert!(t <= timesteps);
        }
        prop_assert_eq!(t, 0);
        prop_assert_eq!(plan.down_count(), plan.up_count() + timesteps);
        prop_assert_eq!(denoiser_call_count(timesteps, j, r).unwrap(), plan.down_count());
        // Each of at most T/j anchors adds at most j·(r-1) extra calls.
        prop_assert!(plan.down_count() <= timesteps + (timesteps / j) * j * (r - 1));
    }

    #[test]
    fn binary_and_heated_blends_stay_between_sources(
        mask in mask_strategy(),
        lambda in 0.0f64..=1.0,
        b in 1u32..5,
        seed in any::<u64>(),
    ) {
        let mut g = rng(seed);
        let shape = Shape::new(2, mask.height(), mask.width());
        let scene = random_image(shape, &mut g);
        let target = random_image(shape, &mut g);
        let repaint = random_image(shape, &mut g);
        let heat = heated_mask(&mask, b).unwrap();
        let outs = [
            compose_binary(&scene, &target, &repaint, &mask, lambda).unwrap(),
            compose_heated(&scene, &target, &repaint, &heat).unwrap(),
        ];
        for out in &outs {
            for c in 0..2 {
                for y in 0..mask.height() {
                    for x in 0..mask.width() {
                        let v = out.get(c, y, x);
                        if mask.is_scene(y, x) {
                            prop_assert_eq!(v, scene.get(c, y, x));
                        } else {
                            let (t, r) = (target.get(c, y, x), repaint.get(c, y, x));
                            prop_assert!(v >= t.min(r) && v <= t.max(r));
                        }
                    }
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn oracle_chain_recovers_composite(
        timesteps in 5usize..60,
        j in 1usize..20,
        r in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut g = rng(seed);
        let shape = Shape::new(3, 6, 6);
        let mask = random_mask(6, 6, 0.5, &mut g);
        let scene = random_image(shape, &mut g);
        let target = random_image(shape, &mut g);
        let truth = composite(&scene, &target, &mask);
        let cfg = SamplerConfig {
            timesteps,
            jump_len: j.min(timesteps),
            resample: r,
            lambda: LambdaSpec::Constant { value: 1.0 },
            seed,
            ..SamplerConfig::default()
        };
        let sched = make_linear_schedule(timesteps).unwrap();
        let mut oracle = OracleDenoiser::new(truth.clone(), &sched);
        let out = run_traced(&scene, &target, &mask, &cfg, &mut oracle).unwrap();
        prop_assert!(out.image.max_abs_diff(&truth) <= 1e-4);
    }
}

/// Sample mean and variance of every pixel pooled.
fn moments(samples: &[f32]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = samples.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn forward_noise_has_the_marginal_moments() {
    let sched = make_linear_schedule(100).unwrap();
    let x0 = ImageTensor::filled(Shape::new(1, 200, 250), 0.6);
    let n = x0.data().len() as f64;
    for t in [1, 10, 50, 100] {
        let mut rng = SeededRng::new(t as u64);
        let xt = forward_noise(&x0, t, &sched, &mut rng, Purpose::Scene).unwrap();
        let (mean, var) = moments(xt.data());
        let want_mean = sched.alpha_bar(t).sqrt() * 0.6;
        let want_var = 1.0 - sched.alpha_bar(t);
        // Four standard errors.
        assert!((mean - want_mean).abs() <= 4.0 * (want_var / n).sqrt(), "t={t} mean {mean}");
        assert!((var - want_var).abs() <= 4.0 * want_var * (2.0 / n).sqrt(), "t={t} var {var}");
    }
}

#[test]
fn renoising_a_forward_sample_gives_the_next_marginal() {
    let sched = make_linear_schedule(50).unwrap();
    let x0 = ImageTensor::filled(Shape::new(1, 200, 250), -0.4);
    let n = x0.data().len() as f64;
    for t in [1, 2, 25, 50] {
        let mut rng = SeededRng::new(100 + t as u64);
        let prev = forward_noise(&x0, t - 1, &sched, &mut rng, Purpose::Scene).unwrap();
        let xt = renoise_one_step(&prev, t, &sched, &mut rng).unwrap();
        let (mean, var) = moments(xt.data());
        let want_mean = sched.alpha_bar(t).sqrt() * -0.4;
        let want_var = 1.0 - sched.alpha_bar(t);
        assert!((mean - want_mean).abs() <= 4.0 * (want_var / n).sqrt(), "t={t} mean {mean}");
        assert!((var - want_var).abs() <= 4.0 * want_var * (2.0 / n).sqrt(), "t={t} var {var}");
    }
}
