//! sRGB → CIE XYZ (D65) → CIELUV conversion and frame differencing.

use std::sync::OnceLock;

use crate::frame::Frame;

use super::KeyframeError;

/// Linear-RGB to XYZ matrix for sRGB primaries and a D65 white point.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124, 0.3576, 0.1805],
    [0.2126, 0.7152, 0.0722],
    [0.0193, 0.1192, 0.9505],
];

/// (6/29)^3
const EPSILON: f64 = 216.0 / 24389.0;
/// (29/3)^3
const KAPPA: f64 = 24389.0 / 27.0;

/// Per-pixel `[L*, u*, v*]` values for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LuvPlanes {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[f64; 3]>,
}

/// The reference white is the XYZ of linear (1, 1, 1), so sRGB white maps to
/// zero chromaticity exactly.
fn white_uv() -> (f64, f64) {
    let xn: f64 = RGB_TO_XYZ[0].iter().sum();
    let yn: f64 = RGB_TO_XYZ[1].iter().sum();
    let zn: f64 = RGB_TO_XYZ[2].iter().sum();
    let d = xn + 15.0 * yn + 3.0 * zn;
    (4.0 * xn / d, 9.0 * yn / d)
}

fn white_y() -> f64 {
    RGB_TO_XYZ[1].iter().sum()
}

fn srgb_decode(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_lut() -> &'static [f64; 256] {
    static LUT: OnceLock<[f64; 256]> = OnceLock::new();
    LUT.get_or_init(|| std::array::from_fn(|i| srgb_decode(i as u8)))
}

/// Converts one sRGB pixel to CIELUV.
pub fn pixel_to_luv(rgb: [u8; 3]) -> [f64; 3] {
    let lut = linear_lut();
    let lin = rgb.map(|c| lut[c as usize]);
    let [x, y, z] = RGB_TO_XYZ.map(|row| row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]);

    let yr = y / white_y();
    let l = if yr > EPSILON {
        116.0 * yr.cbrt() - 16.0
    } else {
        KAPPA * yr
    };
    let denom = x + 15.0 * y + 3.0 * z;
    if l == 0.0 || denom == 0.0 {
        return [0.0, 0.0, 0.0];
    }
    let (un, vn) = white_uv();
    let u_prime = 4.0 * x / denom;
    let v_prime = 9.0 * y / denom;
    [l, 13.0 * l * (u_prime - un), 13.0 * l * (v_prime - vn)]
}

pub fn rgb_to_luv(frame: &Frame) -> LuvPlanes {
    LuvPlanes {
        width: frame.width(),
        height: frame.height(),
        data: frame.rgb_pixels().map(pixel_to_luv).collect(),
    }
}

/// Mean absolute difference over every pixel and channel.
pub fn luv_frame_diff(a: &LuvPlanes, b: &LuvPlanes) -> Result<f64, KeyframeError> {
    if (a.width, a.height) != (b.width, b.height) || a.data.len() != b.data.len() {
        return Err(KeyframeError::DimensionMismatch {
            left: (a.width, a.height),
            right: (b.width, b.height),
        });
    }
    let total: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(p, q)| (p[0] - q[0]).abs() + (p[1] - q[1]).abs() + (p[2] - q[2]).abs())
        .sum();
    Ok(total / (3 * a.data.len()) as f64)
}
