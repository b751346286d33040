//! Painter's rasterization of a world state: background first, then static
//! bodies, then dynamic ones, as filled shapes in their colors. The unit
//! square maps to the full pixel grid with y up in world space.

use std::path::Path;

use super::{BodyKind, WorldState};
use crate::error::Result;
use crate::tensor::Tensor;

const BACKGROUND: [f64; 3] = [1.0, 1.0, 1.0];

/// Renders to `[3, h, w]`, values in [0, 1].
pub fn render_frame(state: &WorldState, width: usize, height: usize) -> Tensor<f32> {
    assert!(width > 0 && height > 0, "raster dims must be positive");
    let mut data = vec![0.0f32; 3 * height * width];
    for c in 0..3 {
        for i in 0..height * width {
            data[c * height * width + i] = BACKGROUND[c] as f32;
        }
    }
    // a segment is one pixel wide-ish at any resolution
    let seg_halfwidth = 0.75 / width.min(height) as f64;

    let statics = state.bodies.iter().filter(|b| !b.is_dynamic());
    let dynamics = state.bodies.iter().filter(|b| b.is_dynamic());
    for body in statics.chain(dynamics) {
        let rgb = body.color.rgb();
        for py in 0..height {
            for px in 0..width {
                let wx = (px as f64 + 0.5) / width as f64;
                let wy = 1.0 - (py as f64 + 0.5) / height as f64;
                let covered = match body.kind {
                    BodyKind::DynamicCircle { radius } | BodyKind::StaticCircle { radius } => {
                        let dx = wx - body.position.x;
                        let dy = wy - body.position.y;
                        dx * dx + dy * dy <= radius * radius
                    }
                    BodyKind::StaticSegment { a, b } => {
                        let p = super::closest_point_on_segment(
                            super::Vec2::new(wx, wy),
                            a,
                            b,
                        );
                        let dx = wx - p.x;
                        let dy = wy - p.y;
                        dx * dx + dy * dy <= seg_halfwidth * seg_halfwidth
                    }
                };
                if covered {
                    for c in 0..3 {
                        data[(c * height + py) * width + px] = rgb[c] as f32;
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[3, height, width], data).expect("raster shape")
}

/// Quantizes a float frame `[3, h, w]` into interleaved 8-bit RGB rows.
pub fn frame_to_rgb8(frame: &Tensor<f32>) -> Vec<u8> {
    let (h, w) = (frame.shape()[1], frame.shape()[2]);
    let mut out = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = frame.data()[(c * h + y) * w + x].clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    out
}

/// Inverse of [`frame_to_rgb8`].
pub fn rgb8_to_frame(bytes: &[u8], width: usize, height: usize) -> Tensor<f32> {
    let mut data = vec![0.0f32; 3 * height * width];
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                data[(c * height + y) * width + x] = bytes[(y * width + x) * 3 + c] as f32 / 255.0;
            }
        }
    }
    Tensor::from_vec(&[3, height, width], data).expect("frame shape")
}

/// Writes one frame as binary PPM (P6).
pub fn write_ppm(rgb: &[u8], width: usize, height: usize, path: &Path) -> Result<()> {
    let mut buf = format!("P6\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(rgb);
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{Body, BodyColor, Vec2, WorldState};

    #[test]
    fn empty_world_is_background() {
        let state = WorldState::new(vec![], -10.0);
        let f = render_frame(&state, 8, 8);
        assert_eq!(f.shape(), &[3, 8, 8]);
        assert!(f.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn circle_center_pixel_has_body_color() {
        let body = Body::dynamic_circle(Vec2::new(0.5, 0.5), Vec2::ZERO, 0.1, BodyColor::Green, 0.5, 0.0);
        let state = WorldState::new(vec![body], -10.0);
        let f = render_frame(&state, 16, 16);
        // pixel containing the center
        let px = (0.5f64 * 16.0) as usize;
        let py = ((1.0 - 0.5) * 16.0) as usize;
        let rgb = BodyColor::Green.rgb();
        for c in 0..3 {
            assert_eq!(f.data()[(c * 16 + py) * 16 + px], rgb[c] as f32);
        }
        assert!(f.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn dynamic_drawn_over_static() {
        let under = Body::static_circle(Vec2::new(0.5, 0.5), 0.2, BodyColor::Blue, 0.5);
        let over = Body::dynamic_circle(Vec2::new(0.5, 0.5), Vec2::ZERO, 0.1, BodyColor::Green, 0.5, 0.0);
        // static listed after dynamic: painter order must still favor dynamics
        let state = WorldState::new(vec![over, under], -10.0);
        let f = render_frame(&state, 16, 16);
        let rgb = BodyColor::Green.rgb();
        for c in 0..3 {
            assert_eq!(f.data()[(c * 16 + 8) * 16 + 8], rgb[c] as f32);
        }
    }

    #[test]
    fn rgb8_round_trip_is_stable() {
        let body = Body::dynamic_circle(Vec2::new(0.4, 0.6), Vec2::ZERO, 0.15, BodyColor::Red, 0.5, 0.0);
        let state = WorldState::new(vec![body], -10.0);
        let f = render_frame(&state, 12, 12);
        let bytes = frame_to_rgb8(&f);
        let back = rgb8_to_frame(&bytes, 12, 12);
        let again = frame_to_rgb8(&back);
        assert_eq!(bytes, again);
    }
}
