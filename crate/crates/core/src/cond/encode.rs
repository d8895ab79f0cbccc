//! Fourier feature encoding for coordinates and normals.

use nalgebra::Vector3;

/// Sin/cos features at frequencies 2⁰π … 2^(bands−1)π per axis, axis-major:
/// for axis a, for band j: sin(2ʲπ·vₐ), cos(2ʲπ·vₐ). Length is 3·2·bands.
pub fn fourier_encode(v: &Vector3<f64>, bands: usize) -> Vec<f64> {
    debug_assert!(bands >= 1);
    let mut out = Vec::with_capacity(6 * bands);
    for a in 0..3 {
        let base = std::f64::consts::PI * v[a];
        for j in 0..bands {
            let arg = (1u64 << j) as f64 * base;
            out.push(arg.sin());
            out.push(arg.cos());
        }
    }
    out
}

/// Scalar variant used for the timestep embedding. Length is 2·bands.
pub fn fourier_encode_scalar(x: f64, bands: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * bands);
    let base = std::f64::consts::PI * x;
    for j in 0..bands {
        let arg = (1u64 << j) as f64 * base;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    out
}
