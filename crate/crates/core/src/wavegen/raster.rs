//! Segment clipping and grid traversal shared by the plate and mask rasters.

/// Clips the segment `a → b` to the box `[0, w] × [0, h]` (Liang–Barsky).
pub fn clip_segment(a: (f64, f64), b: (f64, f64), w: f64, h: f64) -> Option<((f64, f64), (f64, f64))> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [(-dx, a.0), (dx, w - a.0), (-dy, a.1), (dy, h - a.1)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then_some(((a.0 + t0 * dx, a.1 + t0 * dy), (a.0 + t1 * dx, a.1 + t1 * dy)))
}

/// Visits every cell of a `cols × rows` grid of square cells of side `cell`
/// that the segment passes through (Amanatides–Woo). Cells are half-open, so
/// a point on a shared edge belongs to the cell above/right of it; the path
/// is 4-connected. Coordinates outside the grid are clamped onto it.
pub fn traverse(
    a: (f64, f64),
    b: (f64, f64),
    cols: usize,
    rows: usize,
    cell: f64,
    mut visit: impl FnMut(usize, usize),
) {
    let clamp = |v: f64, n: usize| (v / cell).clamp(0.0, n as f64 - 1e-9);
    let (x0, y0) = (clamp(a.0, cols), clamp(a.1, rows));
    let (x1, y1) = (clamp(b.0, cols), clamp(b.1, rows));
    let (mut cx, mut cy) = (x0.floor() as isize, y0.floor() as isize);
    let (ex, ey) = (x1.floor() as isize, y1.floor() as isize);
    let axis = |p0: f64, p1: f64, c: isize| -> (isize, f64, f64) {
        let d = p1 - p0;
        if d > 0.0 {
            (1, (c as f64 + 1.0 - p0) / d, 1.0 / d)
        } else if d < 0.0 {
            (-1, (p0 - c as f64) / -d, -1.0 / d)
        } else {
            (0, f64::INFINITY, f64::INFINITY)
        }
    };
    let (sx, mut tx, dtx) = axis(x0, x1, cx);
    let (sy, mut ty, dty) = axis(y0, y1, cy);
    visit(cx as usize, cy as usize);
    for _ in 0..cols + rows + 2 {
        if cx == ex && cy == ey {
            break;
        }
        if tx <= ty {
            cx += sx;
            tx += dtx;
        } else {
            cy += sy;
            ty += dty;
        }
        if cx < 0 || cy < 0 || cx >= cols as isize || cy >= rows as isize {
            break;
        }
        visit(cx as usize, cy as usize);
    }
}
