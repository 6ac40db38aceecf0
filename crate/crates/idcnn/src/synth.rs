//! Seeded synthetic photographs: smooth shaded backgrounds, soft-edged
//! shapes and mild texture. Used for self-contained training demos and the
//! desk-scale verification runs, where real photo corpora are unavailable.

use crate::image::ColorImage;
use crate::rng::SeedRng;

struct Shape {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    color: [f64; 3],
    softness: f64,
    rectangular: bool,
}

/// Generates an h×w image from the seed. The composition: a per-channel
/// linear shade, two low-frequency sinusoidal fields, a handful of soft
/// ellipses/rectangles, and ±3 uniform texture.
pub fn synth_image(h: usize, w: usize, seed: u64) -> ColorImage {
    let mut rng = SeedRng::new(seed);

    let base: [f64; 3] = std::array::from_fn(|_| rng.uniform_range(60.0, 195.0));
    let slope_y: [f64; 3] = std::array::from_fn(|_| rng.uniform_range(-40.0, 40.0));
    let slope_x: [f64; 3] = std::array::from_fn(|_| rng.uniform_range(-40.0, 40.0));

    let n_waves = 2;
    let waves: Vec<([f64; 3], f64, f64, f64)> = (0..n_waves)
        .map(|_| {
            let amp: [f64; 3] = std::array::from_fn(|_| rng.uniform_range(4.0, 22.0));
            let fy = rng.uniform_range(0.5, 2.5);
            let fx = rng.uniform_range(0.5, 2.5);
            let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
            (amp, fy, fx, phase)
        })
        .collect();

    let n_shapes = 4 + rng.index(7);
    let shapes: Vec<Shape> = (0..n_shapes)
        .map(|_| Shape {
            cy: rng.uniform_range(0.0, h as f64),
            cx: rng.uniform_range(0.0, w as f64),
            ry: rng.uniform_range(0.08, 0.35) * h as f64,
            rx: rng.uniform_range(0.08, 0.35) * w as f64,
            color: std::array::from_fn(|_| rng.uniform_range(20.0, 235.0)),
            softness: rng.uniform_range(0.03, 0.12),
            rectangular: rng.bernoulli(0.3),
        })
        .collect();

    let mut img = ColorImage::new(h, w);
    for y in 0..h {
        let fy = y as f64 / h.max(1) as f64;
        for x in 0..w {
            let fx = x as f64 / w.max(1) as f64;
            let mut px = [0.0f64; 3];
            for q in 0..3 {
                px[q] = base[q] + slope_y[q] * (fy - 0.5) + slope_x[q] * (fx - 0.5);
            }
            for (amp, wy, wx, phase) in &waves {
                let s = (std::f64::consts::TAU * (wy * fy + wx * fx) + phase).sin();
                for q in 0..3 {
                    px[q] += amp[q] * s;
                }
            }
            for shape in &shapes {
                let dy = (y as f64 - shape.cy) / shape.ry;
                let dx = (x as f64 - shape.cx) / shape.rx;
                let d = if shape.rectangular {
                    dy.abs().max(dx.abs())
                } else {
                    (dy * dy + dx * dx).sqrt()
                };
                let alpha = 1.0 / (1.0 + ((d - 1.0) / shape.softness).exp());
                if alpha > 1e-4 {
                    for (p, &c) in px.iter_mut().zip(&shape.color) {
                        *p = alpha * c + (1.0 - alpha) * *p;
                    }
                }
            }
            let mut rgb = [0u8; 3];
            for (v, &p) in rgb.iter_mut().zip(&px) {
                let textured = p + rng.uniform_range(-3.0, 3.0);
                *v = textured.round().clamp(0.0, 255.0) as u8;
            }
            img.set_pixel(y, x, rgb);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = synth_image(40, 60, 7);
        let b = synth_image(40, 60, 7);
        assert_eq!(a, b);
        let c = synth_image(40, 60, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn uses_a_reasonable_value_range() {
        let img = synth_image(64, 64, 3);
        let min = img.data().iter().min().unwrap();
        let max = img.data().iter().max().unwrap();
        assert!(max > min, "degenerate constant image");
    }

    #[test]
    fn is_locally_smooth_on_average() {
        // Mean horizontal channel difference should be far below the
        // impulse scale; that is what makes impulses detectable.
        let img = synth_image(96, 96, 11);
        let mut total = 0u64;
        let mut count = 0u64;
        for y in 0..96 {
            for x in 1..96 {
                for q in 0..3 {
                    total +=
                        (img.channel(y, x, q) as i64 - img.channel(y, x - 1, q) as i64).unsigned_abs();
                    count += 1;
                }
            }
        }
        let mean = total as f64 / count as f64;
        assert!(mean < 12.0, "mean neighbour difference {mean}");
    }
}
