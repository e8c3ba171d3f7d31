//! Integer drawing primitives on an [`ImageGrid`].

use crate::observation::ImageGrid;

/// Visits every pixel of the integer line from `(x0, y0)` to `(x1, y1)`.
///
/// Walks the major axis one pixel at a time. The minor coordinate after `k`
/// major steps is `round_half_down(k * |d_minor| / |d_major|)` away from the
/// start, tracked with an integer error term.
pub fn walk_line(x0: i64, y0: i64, x1: i64, y1: i64, mut visit: impl FnMut(i64, i64)) {
    let dx = (x1 - x0).abs();
    let dy = (y1 - y0).abs();
    let sx = if x1 >= x0 { 1 } else { -1 };
    let sy = if y1 >= y0 { 1 } else { -1 };
    let (major, minor) = if dx >= dy { (dx, dy) } else { (dy, dx) };

    // err tracks 2*(k*minor) - (2*m - 1)*major relative to the next rounding threshold.
    let mut err = 2 * minor - major;
    let (mut x, mut y) = (x0, y0);
    for _ in 0..=major {
        visit(x, y);
        if err > 0 {
            if dx >= dy {
                y += sy;
            } else {
                x += sx;
            }
            err -= 2 * major;
        }
        err += 2 * minor;
        if dx >= dy {
            x += sx;
        } else {
            y += sy;
        }
    }
}

/// Writes `color` at `(x, y)` when it lies inside the grid.
#[inline]
pub fn put_pixel(img: &mut ImageGrid, x: i64, y: i64, color: &[f32]) {
    if x < 0 || y < 0 || x >= img.width() as i64 || y >= img.height() as i64 {
        return;
    }
    let c = img.channels();
    let base = (y as usize * img.width() + x as usize) * c;
    let values = img.values_mut();
    for (k, v) in color.iter().take(c).enumerate() {
        values[base + k] = *v;
    }
}

pub fn draw_line(img: &mut ImageGrid, x0: i64, y0: i64, x1: i64, y1: i64, color: &[f32]) {
    walk_line(x0, y0, x1, y1, |x, y| put_pixel(img, x, y, color));
}

/// Fills every pixel whose integer offset from the center satisfies
/// `dx² + dy² ≤ radius²`.
pub fn fill_disc(img: &mut ImageGrid, cx: i64, cy: i64, radius: i64, color: &[f32]) {
    let r2 = radius * radius;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            if dx * dx + dy * dy <= r2 {
                put_pixel(img, cx + dx, cy + dy, color);
            }
        }
    }
}

/// Line of the given half-width: every pixel within `half_width` of the segment.
pub fn draw_thick_line(
    img: &mut ImageGrid,
    (x0, y0): (i64, i64),
    (x1, y1): (i64, i64),
    half_width: i64,
    color: &[f32],
) {
    let (fx0, fy0, fx1, fy1) = (x0 as f64, y0 as f64, x1 as f64, y1 as f64);
    let (vx, vy) = (fx1 - fx0, fy1 - fy0);
    let len2 = vx * vx + vy * vy;
    let hw2 = (half_width * half_width) as f64;
    let ymin = (y0.min(y1) - half_width).max(0);
    let ymax = (y0.max(y1) + half_width).min(img.height() as i64 - 1);
    let xmin = (x0.min(x1) - half_width).max(0);
    let xmax = (x0.max(x1) + half_width).min(img.width() as i64 - 1);
    for y in ymin..=ymax {
        for x in xmin..=xmax {
            let (px, py) = (x as f64 - fx0, y as f64 - fy0);
            let t = if len2 > 0.0 {
                ((px * vx + py * vy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (ex, ey) = (px - t * vx, py - t * vy);
            if ex * ex + ey * ey <= hw2 {
                put_pixel(img, x, y, color);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Closed-form minor offset: round_half_down(p / q) = floor((2p + q - 1) / 2q).
    fn closed_form_line(x0: i64, y0: i64, x1: i64, y1: i64) -> Vec<(i64, i64)> {
        let dx = x1 - x0;
        let dy = y1 - y0;
        let major = dx.abs().max(dy.abs());
        let mut out = Vec::new();
        for k in 0..=major {
            let (x, y) = if dx.abs() >= dy.abs() {
                let off = if major == 0 {
                    0
                } else {
                    (2 * k * dy.abs() + major - 1) / (2 * major)
                };
                (x0 + k * dx.signum(), y0 + off * dy.signum())
            } else {
                let off = (2 * k * dx.abs() + major - 1) / (2 * major);
                (x0 + off * dx.signum(), y0 + k * dy.signum())
            };
            out.push((x, y));
        }
        out
    }

    fn walked(x0: i64, y0: i64, x1: i64, y1: i64) -> Vec<(i64, i64)> {
        let mut pts = Vec::new();
        walk_line(x0, y0, x1, y1, |x, y| pts.push((x, y)));
        pts
    }

    #[test]
    fn simple_lines() {
        assert_eq!(walked(0, 0, 3, 0), vec![(0, 0), (1, 0), (2, 0), (3, 0)]);
        assert_eq!(walked(2, 2, 2, 2), vec![(2, 2)]);
        assert_eq!(walked(0, 0, -2, -2), vec![(0, 0), (-1, -1), (-2, -2)]);
        // Exact tie at k=1: 1*1/2 rounds down.
        assert_eq!(walked(0, 0, 2, 1), vec![(0, 0), (1, 0), (2, 1)]);
    }

    proptest! {
        #[test]
        fn incremental_walk_matches_closed_form(
            x0 in -40i64..40, y0 in -40i64..40, x1 in -40i64..40, y1 in -40i64..40
        ) {
            prop_assert_eq!(walked(x0, y0, x1, y1), closed_form_line(x0, y0, x1, y1));
        }
    }

    #[test]
    fn disc_has_thirteen_pixels_at_radius_two() {
        let mut img = ImageGrid::filled(9, 9, 1, 1.0);
        fill_disc(&mut img, 4, 4, 2, &[0.0]);
        assert_eq!(img.values().iter().filter(|v| **v == 0.0).count(), 13);
    }

    #[test]
    fn clipping_is_silent() {
        let mut img = ImageGrid::filled(4, 4, 3, 1.0);
        draw_line(&mut img, -10, -10, 10, 10, &[0.0, 0.0, 0.0]);
        fill_disc(&mut img, -1, 5, 3, &[0.5, 0.5, 0.5]);
        draw_thick_line(&mut img, (-5, 0), (20, 3), 2, &[0.2, 0.2, 0.2]);
        assert!(img.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
