//! Target-guided inpainting sampler.
//!
//! Each Down move of the timestep plan produces three candidates for
//! `x_{t-1}`: the forward-noised scene, the forward-noised target, and one
//! reverse step of the denoiser from the current state. The configured mask
//! mode decides, per pixel, how they are combined. Up moves renoise the state
//! by one step.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::denoise::{reverse_step, Denoiser};
use crate::error::{Error, Result};
use crate::masks::{heated_mask, ring, HeatField, Mask, Ring};
use crate::noise::{forward_noise, gaussian_draw, make_linear_schedule, renoise_one_step};
use crate::rng::{Purpose, SeededRng};
use crate::schedules::{jump_plan, LambdaSpec, Move};
use crate::tensor::{ImageTensor, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// Scene outside the hole, λ-blend inside.
    #[default]
    Binary,
    /// Distance-weighted blend toward the target inside the hole.
    Heated,
    /// Like binary, plus a band around the hole taken from the denoiser.
    SceneBuffer,
}

/// Where scene-buffer ring pixels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RingSource {
    #[default]
    Ddpm,
    LambdaBlend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub timesteps: usize,
    pub jump_len: usize,
    pub resample: usize,
    pub lambda: LambdaSpec,
    pub mask_mode: MaskMode,
    /// Heat buffer size `b`, in pixels of Manhattan distance.
    pub heat_buffer: u32,
    /// Apply λ on top of the heat field (weight toward target `h·(1-λ)`).
    pub heat_with_lambda: bool,
    /// Scene-buffer ring width `w`, in 8-connected dilation steps.
    pub ring_width: usize,
    /// Scene-buffer hole blend constant `c`, used in place of λ in the hole.
    pub buffer_c: f64,
    pub ring_source: RingSource,
    pub seed: u64,
    pub candidates: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            timesteps: 200,
            jump_len: 40,
            resample: 40,
            lambda: LambdaSpec::LinearP { p: 0.5 },
            mask_mode: MaskMode::Binary,
            heat_buffer: 4,
            heat_with_lambda: false,
            ring_width: 4,
            buffer_c: 0.95,
            ring_source: RingSource::Ddpm,
            seed: 0,
            candidates: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 || self.timesteps > crate::noise::TRAIN_STEPS {
            return Err(Error::invalid(format!(
                "timesteps must be in [1, {}], got {}",
                crate::noise::TRAIN_STEPS,
                self.timesteps
            )));
        }
        if self.jump_len == 0 || self.resample == 0 {
            return Err(Error::invalid("jump length and resample count must be >= 1"));
        }
        self.lambda.validate()?;
        if self.mask_mode == MaskMode::Heated && self.heat_buffer == 0 {
            return Err(Error::invalid("heat buffer size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.buffer_c) {
            return Err(Error::invalid(format!(
                "scene-buffer constant c must be in [0, 1], got {}",
                self.buffer_c
            )));
        }
        if self.candidates == 0 {
            return Err(Error::invalid("candidate count must be >= 1"));
        }
        Ok(())
    }
}

/// `w·a + (1-w)·b`. Every mode blends through this so the degenerate cases
/// agree bit for bit.
#[inline]
fn blend(w: f64, a: f32, b: f32) -> f32 {
    (w * a as f64 + (1.0 - w) * b as f64) as f32
}

fn check_sources(
    scene: &ImageTensor,
    target: &ImageTensor,
    repaint: &ImageTensor,
    height: usize,
    width: usize,
) -> Result<()> {
    target.ensure_shape(scene.shape())?;
    repaint.ensure_shape(scene.shape())?;
    let plane = Shape::new(scene.channels(), height, width);
    scene.ensure_shape(plane)
}

/// Applies `pick(pixel_index, scene, target, repaint)` at every element.
fn compose_with(
    scene: &ImageTensor,
    target: &ImageTensor,
    repaint: &ImageTensor,
    pick: impl Fn(usize, f32, f32, f32) -> f32,
) -> ImageTensor {
    let plane = scene.shape().plane();
    let data = scene
        .data()
        .iter()
        .zip(target.data())
        .zip(repaint.data())
        .enumerate()
        .map(|(i, ((&s, &t), &r))| pick(i % plane, s, t, r))
        .collect();
    ImageTensor::from_vec(scene.shape(), data).expect("shape preserved")
}

/// Scene pixels keep the noised scene; hole pixels take
/// `λ·repaint + (1-λ)·target`.
pub fn compose_binary(
    scene: &ImageTensor,
    target: &ImageTensor,
    repaint: &ImageTensor,
    mask: &Mask,
    lambda: f64,
) -> Result<ImageTensor> {
    check_sources(scene, target, repaint, mask.height(), mask.width())?;
    check_weight("lambda", lambda)?;
    let known = mask.scene_pixels();
    Ok(compose_with(scene, target, repaint, |p, s, t, r| {
        if known[p] {
            s
        } else {
            blend(lambda, r, t)
        }
    }))
}

/// Hole pixels take `h·target + (1-h)·repaint`; scene pixels keep the noised
/// scene. The heat field is zero exactly on scene pixels.
pub fn compose_heated(
    scene: &ImageTensor,
    target: &ImageTensor,
    repaint: &ImageTensor,
    heat: &HeatField,
) -> Result<ImageTensor> {
    check_sources(scene, target, repaint, heat.height(), heat.width())?;
    let h = heat.values();
    Ok(compose_with(scene, target, repaint, |p, s, t, r| {
        if h[p] == 0.0 {
            s
        } else {
            blend(h[p], t, r)
        }
    }))
}

/// Heated composition with the heat field additionally scaled by `1-λ`.
pub fn compose_heated_lambda(
    scene: &ImageTensor,
    target: &ImageTensor,
    repaint: &ImageTensor,
    heat: &HeatField,
    lambda: f64,
) -> Result<ImageTensor> {
    check_sources(scene, target, repaint, heat.height(), heat.width())?;
    check_weight("lambda", lambda)?;
    let h = heat.values();
    Ok(compose_with(scene, target, repaint, |p, s, t, r| {
        if h[p] == 0.0 {
            s
        } else {
            blend(h[p] * (1.0 - lambda), t, r)
        }
    }))
}

/// Hole pixels take `c·repaint + (1-c)·target`; ring pixels take the denoiser
/// output (or the λ-blend when `source` says so); everything else keeps the
/// noised scene.
#[allow(clippy::too_many_arguments)]
pub fn compose_scene_buffer(
    scene: &ImageTensor,
    target: &ImageTensor,
    repaint: &ImageTensor,
    mask: &Mask,
    ring: &Ring,
    c: f64,
    lambda: f64,
    source: RingSource,
) -> Result<ImageTensor> {
    check_sources(scene, target, repaint, mask.height(), mask.width())?;
    if ring.height() != mask.height() || ring.width() != mask.width() {
        return Err(Error::InvalidMask("ring and mask dimensions differ".into()));
    }
    check_weight("c", c)?;
    check_weight("lambda", lambda)?;
    let known = mask.scene_pixels();
    let band = ring.members();
    if known.iter().zip(band).any(|(k, b)| *b && !*k) {
        return Err(Error::InvalidMask("ring overlaps the hole".into()));
    }
    Ok(compose_with(scene, target, repaint, |p, s, t, r| {
        if !known[p] {
            blend(c, r, t)
        } else if band[p] {
            match source {
                RingSource::Ddpm => r,
                RingSource::LambdaBlend => blend(lambda, r, t),
            }
        } else {
            s
        }
    }))
}

fn check_weight(name: &str, w: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::invalid(format!("{name} must be in [0, 1], got {w}")));
    }
    Ok(())
}

/// Per-run mask geometry, computed once.
enum Composer {
    Binary,
    Heated(HeatField),
    SceneBuffer(Ring),
}

impl Composer {
    fn new(mask: &Mask, cfg: &SamplerConfig) -> Result<Self> {
        if cfg.mask_mode != MaskMode::Binary && !mask.has_scene() {
            return Err(Error::InvalidMask(
                "an all-hole mask is only supported in binary mode".into(),
            ));
        }
        Ok(match cfg.mask_mode {
            MaskMode::Binary => Composer::Binary,
            MaskMode::Heated => Composer::Heated(heated_mask(mask, cfg.heat_buffer)?),
            MaskMode::SceneBuffer => Composer::SceneBuffer(ring(mask, cfg.ring_width)),
        })
    }

    fn compose(
        &self,
        scene: &ImageTensor,
        target: &ImageTensor,
        repaint: &ImageTensor,
        mask: &Mask,
        cfg: &SamplerConfig,
        lambda: f64,
    ) -> Result<ImageTensor> {
        match self {
            Composer::Binary => compose_binary(scene, target, repaint, mask, lambda),
            Composer::Heated(heat) if cfg.heat_with_lambda => {
                compose_heated_lambda(scene, target, repaint, heat, lambda)
            }
            Composer::Heated(heat) => compose_heated(scene, target, repaint, heat),
            Composer::SceneBuffer(band) => compose_scene_buffer(
                scene,
                target,
                repaint,
                mask,
                band,
                cfg.buffer_c,
                lambda,
                cfg.ring_source,
            ),
        }
    }
}

/// Result of one sampler run with its cost accounting.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub image: ImageTensor,
    pub denoiser_calls: usize,
    pub renoise_steps: usize,
}

/// Sampler position: current timestep, state and RNG counters.
struct RunState {
    t: usize,
    x: ImageTensor,
    rng: SeededRng,
}

fn validate_inputs<D: Denoiser + ?Sized>(
    scene: &ImageTensor,
    target: &ImageTensor,
    mask: &Mask,
    cfg: &SamplerConfig,
    denoiser: &D,
) -> Result<()> {
    cfg.validate()?;
    target.ensure_shape(scene.shape())?;
    if mask.height() != scene.height() || mask.width() != scene.width() {
        return Err(Error::InvalidMask(format!(
            "mask is {}x{}, images are {}x{}",
            mask.height(),
            mask.width(),
            scene.height(),
            scene.width()
        )));
    }
    if !scene.is_finite() || !target.is_finite() {
        return Err(Error::invalid("scene and target must be finite"));
    }
    if denoiser.shape() != scene.shape() {
        return Err(Error::ShapeMismatch {
            expected: scene.shape(),
            actual: denoiser.shape(),
        });
    }
    Ok(())
}

/// Runs the sampler once with `cfg.seed` and reports its cost.
pub fn run_traced<D: Denoiser + ?Sized>(
    scene: &ImageTensor,
    target: &ImageTensor,
    mask: &Mask,
    cfg: &SamplerConfig,
    denoiser: &mut D,
) -> Result<RunOutput> {
    validate_inputs(scene, target, mask, cfg, denoiser)?;
    let sched = make_linear_schedule(cfg.timesteps)?;
    let lambda = cfg.lambda.bind(cfg.timesteps)?;
    let plan = jump_plan(cfg.timesteps, cfg.jump_len, cfg.resample)?;
    let composer = Composer::new(mask, cfg)?;

    let mut rng = SeededRng::new(cfg.seed);
    let init = gaussian_draw(
        scene.shape(),
        &mut rng.substream(Purpose::Init, cfg.timesteps),
    );
    let mut state = RunState {
        t: plan.start(),
        x: init,
        rng,
    };
    let mut out = RunOutput {
        image: ImageTensor::zeros(scene.shape()),
        denoiser_calls: 0,
        renoise_steps: 0,
    };
    debug!(
        "run seed={} T={} j={} r={} mode={:?}: {} moves",
        cfg.seed,
        cfg.timesteps,
        cfg.jump_len,
        cfg.resample,
        cfg.mask_mode,
        plan.moves().len()
    );

    for &mv in plan.moves() {
        match mv {
            Move::Down(to) => {
                let t = state.t;
                debug_assert_eq!(to + 1, t);
                let repaint = reverse_step(denoiser, &state.x, t, &sched, &mut state.rng)
                    .map_err(|e| Error::Backend {
                        t,
                        source: Box::new(e),
                    })?;
                out.denoiser_calls += 1;
                let scene_t = forward_noise(scene, to, &sched, &mut state.rng, Purpose::Scene)?;
                let target_t = forward_noise(target, to, &sched, &mut state.rng, Purpose::Target)?;
                let weight = lambda.eval(to)?;
                state.x = composer.compose(&scene_t, &target_t, &repaint, mask, cfg, weight)?;
            }
            Move::Up(to) => {
                debug_assert_eq!(state.t + 1, to);
                state.x = renoise_one_step(&state.x, to, &sched, &mut state.rng)?;
                out.renoise_steps += 1;
            }
        }
        state.t = mv.to();
        debug_assert!(state.x.is_finite(), "non-finite state at t={}", state.t);
    }
    out.image = state.x;
    Ok(out)
}

/// Runs the sampler once with `cfg.seed`.
pub fn run<D: Denoiser + ?Sized>(
    scene: &ImageTensor,
    target: &ImageTensor,
    mask: &Mask,
    cfg: &SamplerConfig,
    denoiser: &mut D,
) -> Result<ImageTensor> {
    run_traced(scene, target, mask, cfg, denoiser).map(|o| o.image)
}

/// Seed used for candidate `index` of a run seeded with `seed`.
pub fn candidate_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

/// `cfg.candidates` independent runs seeded `seed, seed+1, ...`, in order.
pub fn run_candidates<D: Denoiser + ?Sized>(
    scene: &ImageTensor,
    target: &ImageTensor,
    mask: &Mask,
    cfg: &SamplerConfig,
    denoiser: &mut D,
) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    (0..cfg.candidates)
        .map(|k| {
            let cell = SamplerConfig {
                seed: candidate_seed(cfg.seed, k),
                ..cfg.clone()
            };
            run_traced(scene, target, mask, &cell, denoiser)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::{AnalyticGaussianDenoiser, OracleDenoiser};

    fn px(v: f32) -> ImageTensor {
        ImageTensor::from_vec(Shape::new(1, 1, 1), vec![v]).unwrap()
    }

    fn hole_1x1() -> Mask {
        Mask::all_hole(1, 1)
    }

    #[test]
    fn binary_scene_pixel_ignores_lambda() {
        let m = Mask::all_scene(1, 1);
        for lambda in [0.0, 0.3, 1.0] {
            let out = compose_binary(&px(0.1), &px(0.4), &px(0.8), &m, lambda).unwrap();
            assert_eq!(out.data()[0], 0.1);
        }
    }

    #[test]
    fn binary_hole_arithmetic() {
        let out = compose_binary(&px(0.1), &px(0.4), &px(0.8), &hole_1x1(), 0.25).unwrap();
        assert!((out.data()[0] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn heated_arithmetic_and_deep_hole() {
        let shape = Shape::new(1, 1, 3);
        let scene = ImageTensor::filled(shape, 0.1);
        let target = ImageTensor::filled(shape, 0.4);
        let repaint = ImageTensor::filled(shape, 0.8);
        let half = heated_mask(&Mask::with_hole_rect(1, 3, 0..1, 1..2), 2).unwrap();
        let out = compose_heated(&scene, &target, &repaint, &half).unwrap();
        assert!((out.get(0, 0, 1) - 0.6).abs() < 1e-7);
        assert_eq!(out.get(0, 0, 0), 0.1);
        let full = heated_mask(&Mask::with_hole_rect(1, 3, 0..1, 1..2), 1).unwrap();
        let out = compose_heated(&scene, &target, &repaint, &full).unwrap();
        assert_eq!(out.get(0, 0, 1), 0.4);
    }

    #[test]
    fn scene_buffer_pixels() {
        let m = Mask::with_hole_rect(3, 3, 1..2, 1..2);
        let band = ring(&m, 1);
        let shape = Shape::new(1, 3, 3);
        let scene = ImageTensor::filled(shape, -0.9);
        let target = ImageTensor::filled(shape, 0.6);
        let repaint = ImageTensor::filled(shape, 0.2);
        let out =
            compose_scene_buffer(&scene, &target, &repaint, &m, &band, 0.5, 0.0, RingSource::Ddpm)
                .unwrap();
        assert!((out.get(0, 1, 1) - 0.4).abs() < 1e-7);
        assert_eq!(out.get(0, 0, 0), 0.2);
        let out = compose_scene_buffer(
            &scene,
            &target,
            &repaint,
            &m,
            &band,
            0.5,
            0.0,
            RingSource::LambdaBlend,
        )
        .unwrap();
        assert_eq!(out.get(0, 0, 0), 0.6);
    }

    #[test]
    fn scene_buffer_rejects_overlapping_ring() {
        let m = Mask::with_hole_rect(3, 3, 1..2, 1..2);
        // A "ring" computed on a different, larger hole overlaps this one.
        let wrong = ring(&Mask::with_hole_rect(3, 3, 0..1, 0..1), 2);
        let t = ImageTensor::zeros(Shape::new(1, 3, 3));
        assert!(compose_scene_buffer(&t, &t, &t, &m, &wrong, 0.5, 0.5, RingSource::Ddpm).is_err());
    }

    #[test]
    fn compose_checks_shapes() {
        let m = hole_1x1();
        let wide = ImageTensor::zeros(Shape::new(1, 1, 2));
        assert!(matches!(
            compose_binary(&px(0.0), &wide, &px(0.0), &m, 0.5),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(compose_binary(&px(0.0), &px(0.0), &px(0.0), &m, 1.5).is_err());
    }

    #[test]
    fn default_config_matches_recommendation() {
        let cfg = SamplerConfig::default();
        assert_eq!((cfg.timesteps, cfg.jump_len, cfg.resample), (200, 40, 40));
        assert_eq!(cfg.lambda, LambdaSpec::LinearP { p: 0.5 });
        assert_eq!(cfg.ring_width, 4);
        cfg.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let bad = [
            SamplerConfig { timesteps: 0, ..Default::default() },
            SamplerConfig { timesteps: 1001, ..Default::default() },
            SamplerConfig { jump_len: 0, ..Default::default() },
            SamplerConfig { resample: 0, ..Default::default() },
            SamplerConfig { candidates: 0, ..Default::default() },
            SamplerConfig { buffer_c: 1.2, ..Default::default() },
            SamplerConfig { lambda: LambdaSpec::Constant { value: -0.5 }, ..Default::default() },
            SamplerConfig { mask_mode: MaskMode::Heated, heat_buffer: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn config_json_uses_defaults_for_missing_fields() {
        let cfg: SamplerConfig =
            serde_json::from_str(r#"{"timesteps": 50, "mask_mode": "scene-buffer"}"#).unwrap();
        assert_eq!(cfg.timesteps, 50);
        assert_eq!(cfg.mask_mode, MaskMode::SceneBuffer);
        assert_eq!(cfg.jump_len, 40);
        assert!(serde_json::from_str::<SamplerConfig>(r#"{"bogus": 1}"#).is_err());
    }

    fn small_inputs() -> (ImageTensor, ImageTensor, Mask) {
        let shape = Shape::new(3, 8, 8);
        let scene = ImageTensor::from_vec(
            shape,
            (0..shape.len()).map(|i| ((i * 7) % 17) as f32 / 8.5 - 1.0).collect(),
        )
        .unwrap();
        let target = ImageTensor::from_vec(
            shape,
            (0..shape.len()).map(|i| ((i * 5) % 13) as f32 / 6.5 - 1.0).collect(),
        )
        .unwrap();
        (scene, target, Mask::with_hole_rect(8, 8, 2..6, 3..7))
    }

    #[test]
    fn all_scene_mask_returns_scene_in_every_mode() {
        let (scene, target, _) = small_inputs();
        let mask = Mask::all_scene(8, 8);
        for mode in [MaskMode::Binary, MaskMode::Heated, MaskMode::SceneBuffer] {
            let cfg = SamplerConfig {
                timesteps: 10,
                jump_len: 3,
                resample: 2,
                mask_mode: mode,
                ..Default::default()
            };
            let sched = make_linear_schedule(10).unwrap();
            let mut d = AnalyticGaussianDenoiser::new(scene.shape(), 0.0, 0.1, &sched);
            let out = run(&scene, &target, &mask, &cfg, &mut d).unwrap();
            assert!(out.bits_eq(&scene), "{mode:?}");
        }
    }

    #[test]
    fn all_hole_mask_only_in_binary_mode() {
        let (scene, target, _) = small_inputs();
        let mask = Mask::all_hole(8, 8);
        let sched = make_linear_schedule(5).unwrap();
        let mut d = OracleDenoiser::new(target.clone(), &sched);
        for (mode, ok) in [
            (MaskMode::Binary, true),
            (MaskMode::Heated, false),
            (MaskMode::SceneBuffer, false),
        ] {
            let cfg = SamplerConfig {
                timesteps: 5,
                jump_len: 1,
                resample: 1,
                mask_mode: mode,
                ..Default::default()
            };
            assert_eq!(run(&scene, &target, &mask, &cfg, &mut d).is_ok(), ok, "{mode:?}");
        }
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let (scene, target, _) = small_inputs();
        let sched = make_linear_schedule(5).unwrap();
        let cfg = SamplerConfig {
            timesteps: 5,
            ..Default::default()
        };
        let mut d = OracleDenoiser::new(scene.clone(), &sched);
        let small_mask = Mask::all_scene(4, 8);
        assert!(matches!(
            run(&scene, &target, &small_mask, &cfg, &mut d),
            Err(Error::InvalidMask(_))
        ));
        let gray = ImageTensor::zeros(Shape::new(1, 8, 8));
        let mask = Mask::all_scene(8, 8);
        assert!(matches!(
            run(&scene, &gray, &mask, &cfg, &mut d),
            Err(Error::ShapeMismatch { .. })
        ));
        let mut wrong = OracleDenoiser::new(gray, &sched);
        assert!(matches!(
            run(&scene, &target, &mask, &cfg, &mut wrong),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    struct Failing;

    impl Denoiser for Failing {
        fn shape(&self) -> Shape {
            Shape::new(3, 8, 8)
        }

        fn epsilon(&mut self, _x_t: &ImageTensor, _t: usize) -> Result<ImageTensor> {
            Err(Error::Worker("boom".into()))
        }
    }

    #[test]
    fn backend_errors_carry_the_timestep() {
        let (scene, target, mask) = small_inputs();
        let cfg = SamplerConfig {
            timesteps: 7,
            ..Default::default()
        };
        let err = run(&scene, &target, &mask, &cfg, &mut Failing).unwrap_err();
        assert!(matches!(err, Error::Backend { t: 7, .. }), "{err}");
        assert!(err.is_backend());
    }

    #[test]
    fn single_candidate_equals_run() {
        let (scene, target, mask) = small_inputs();
        let sched = make_linear_schedule(12).unwrap();
        let cfg = SamplerConfig {
            timesteps: 12,
            jump_len: 4,
            resample: 2,
            seed: 77,
            ..Default::default()
        };
        let mut d = AnalyticGaussianDenoiser::new(scene.shape(), 0.0, 0.2, &sched);
        let single = run(&scene, &target, &mask, &cfg, &mut d).unwrap();
        let cands = run_candidates(&scene, &target, &mask, &cfg, &mut d).unwrap();
        assert_eq!(cands.len(), 1);
        assert!(cands[0].image.bits_eq(&single));
    }
}
