use super::Mask;
use crate::error::{Error, Result};

/// Convex hull by Andrew's monotone chain, counter-clockwise, without
/// collinear points. Duplicates are removed from `points`.
pub fn convex_hull(points: &mut Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    points.sort_unstable();
    points.dedup();
    if points.len() <= 2 {
        return points.clone();
    }
    fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    }
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(points.len() * 2);
    for &p in points.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in points.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Twice the signed polygon area (shoelace).
pub fn polygon_area2(poly: &[(i64, i64)]) -> i64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum()
}

/// Pixel count over the area of the convex hull of all foreground pixel
/// corners, so a single pixel or a straight line has solidity 1.
pub fn solidity(mask: &Mask) -> Result<f64> {
    let (h, w) = (mask.height(), mask.width());
    let mut points = Vec::new();
    let mut count = 0usize;
    for y in 0..h {
        let row = &mask.data()[y * w..(y + 1) * w];
        let first = row.iter().position(|&b| b);
        let last = row.iter().rposition(|&b| b);
        if let (Some(x0), Some(x1)) = (first, last) {
            count += row.iter().filter(|&&b| b).count();
            let (y, x0, x1) = (y as i64, x0 as i64, x1 as i64 + 1);
            points.extend_from_slice(&[(x0, y), (x0, y + 1), (x1, y), (x1, y + 1)]);
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let hull = convex_hull(&mut points);
    let area = polygon_area2(&hull).abs() as f64 / 2.0;
    Ok(count as f64 / area)
}
