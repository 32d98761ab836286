#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use targetfill::masks::Mask;
use targetfill::{ImageTensor, Shape};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(shape: Shape, rng: &mut impl Rng) -> ImageTensor {
    let data = (0..shape.len()).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
    ImageTensor::from_vec(shape, data).unwrap()
}

/// Image whose values are exact u8 codes, so it survives a PNG round trip.
pub fn quantized_image(shape: Shape, rng: &mut impl Rng) -> ImageTensor {
    let data = (0..shape.len())
        .map(|_| targetfill::imgio::decode_u8(rng.random()))
        .collect();
    ImageTensor::from_vec(shape, data).unwrap()
}

/// Random mask with roughly `hole_frac` hole pixels and at least one scene pixel.
pub fn random_mask(height: usize, width: usize, hole_frac: f64, rng: &mut impl Rng) -> Mask {
    let mut scene: Vec<bool> = (0..height * width)
        .map(|_| !rng.random_bool(hole_frac))
        .collect();
    if !scene.iter().any(|&s| s) {
        let i = rng.random_range(0..scene.len());
        scene[i] = true;
    }
    Mask::new(height, width, scene).unwrap()
}

/// Centered rectangular hole covering the middle half of the image.
pub fn center_hole(height: usize, width: usize) -> Mask {
    Mask::with_hole_rect(height, width, height / 4..3 * height / 4, width / 4..3 * width / 4)
}

/// Exhaustive Manhattan distance from each pixel to the nearest scene pixel.
pub fn brute_force_distance(mask: &Mask) -> Vec<u32> {
    let (h, w) = (mask.height(), mask.width());
    let mut out = vec![0u32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut best = u32::MAX;
            for sy in 0..h {
                for sx in 0..w {
                    if mask.is_scene(sy, sx) {
                        let d = (y.abs_diff(sy) + x.abs_diff(sx)) as u32;
                        best = best.min(d);
                    }
                }
            }
            out[y * w + x] = best;
        }
    }
    out
}

/// `scene` outside the hole, `target` inside it.
pub fn composite(scene: &ImageTensor, target: &ImageTensor, mask: &Mask) -> ImageTensor {
    let mut out = scene.clone();
    for c in 0..scene.channels() {
        for y in 0..scene.height() {
            for x in 0..scene.width() {
                if mask.is_hole(y, x) {
                    out.set(c, y, x, target.get(c, y, x));
                }
            }
        }
    }
    out
}
