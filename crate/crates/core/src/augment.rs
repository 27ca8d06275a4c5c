//! HSV color jitter.
//!
//! Hue is scaled multiplicatively as an angle (wrapping at 360 degrees);
//! saturation and value are scaled and clamped to `[0, 1]`. Factors are
//! drawn uniformly: hue from `[0.9, 1.1]`, saturation and brightness from
//! `[0.5, 1.5]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::RgbImage;

pub const HUE_RANGE: (f64, f64) = (0.9, 1.1);
pub const SATURATION_RANGE: (f64, f64) = (0.5, 1.5);
pub const BRIGHTNESS_RANGE: (f64, f64) = (0.5, 1.5);

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

pub fn rgb_to_hsv(rgb: [u8; 3]) -> Hsv {
    let [r, g, b] = rgb.map(|c| f64::from(c) / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    Hsv {
        h: if h >= 360.0 { h - 360.0 } else { h },
        s,
        v: max,
    }
}

pub fn hsv_to_rgb(hsv: Hsv) -> [u8; 3] {
    let Hsv { h, s, v } = hsv;
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterFactors {
    pub hue: f64,
    pub saturation: f64,
    pub brightness: f64,
}

impl JitterFactors {
    pub const IDENTITY: Self = Self {
        hue: 1.0,
        saturation: 1.0,
        brightness: 1.0,
    };

    pub fn within_sampling_ranges(&self) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| (lo..=hi).contains(&v);
        inside(self.hue, HUE_RANGE)
            && inside(self.saturation, SATURATION_RANGE)
            && inside(self.brightness, BRIGHTNESS_RANGE)
    }
}

/// Draws one factor triple from `rng`.
pub fn sample_factors_with(rng: &mut impl Rng) -> JitterFactors {
    JitterFactors {
        hue: rng.gen_range(HUE_RANGE.0..=HUE_RANGE.1),
        saturation: rng.gen_range(SATURATION_RANGE.0..=SATURATION_RANGE.1),
        brightness: rng.gen_range(BRIGHTNESS_RANGE.0..=BRIGHTNESS_RANGE.1),
    }
}

/// Factor triple determined entirely by `seed`.
pub fn sample_factors(seed: u64) -> JitterFactors {
    sample_factors_with(&mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn jitter_pixel(rgb: [u8; 3], f: &JitterFactors) -> [u8; 3] {
    let hsv = rgb_to_hsv(rgb);
    hsv_to_rgb(Hsv {
        h: (hsv.h * f.hue).rem_euclid(360.0),
        s: (hsv.s * f.saturation).clamp(0.0, 1.0),
        v: (hsv.v * f.brightness).clamp(0.0, 1.0),
    })
}

pub fn jitter(img: &RgbImage, f: &JitterFactors) -> RgbImage {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        *p = jitter_pixel(*p, f);
    }
    out
}
