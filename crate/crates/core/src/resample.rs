//! Bilinear resampling shared by ROI refinement and heatmap export.

/// Resizes a planar `[channels, h, w]` image to `[channels, out_h, out_w]`.
///
/// Sample positions use half-pixel centers, `src = (dst + 0.5) * in / out - 0.5`,
/// clamped to the image so edges replicate.
pub fn resize_bilinear(data: &[f64], channels: usize, h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(data.len(), channels * h * w, "resize_bilinear: data length does not match dims");
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let ys = taps(out_h, h);
    let xs = taps(out_w, w);
    let mut out = Vec::with_capacity(channels * out_h * out_w);
    for plane in data.chunks_exact(h * w) {
        for &(y0, y1, fy) in &ys {
            let (r0, r1) = (&plane[y0 * w..(y0 + 1) * w], &plane[y1 * w..(y1 + 1) * w]);
            for &(x0, x1, fx) in &xs {
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
                out.push(top + (bottom - top) * fy);
            }
        }
    }
    out
}
