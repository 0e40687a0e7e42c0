use super::Location;
use crate::error::{domain, Result};

/// A simple closed ring in the lat/lon plane. The closing edge is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Location>,
}

fn cross(o: &Location, a: &Location, b: &Location) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn on_segment(a: &Location, b: &Location, p: &Location, tol: f64) -> bool {
    let len = a.distance(b);
    if cross(a, b, p).abs() > tol * len.max(1.0) {
        return false;
    }
    p.x >= a.x.min(b.x) - tol && p.x <= a.x.max(b.x) + tol && p.y >= a.y.min(b.y) - tol && p.y <= a.y.max(b.y) + tol
}

fn segments_intersect(a: &Location, b: &Location, c: &Location, d: &Location, tol: f64) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > tol && d2 < -tol) || (d1 < -tol && d2 > tol)) && ((d3 > tol && d4 < -tol) || (d3 < -tol && d4 > tol)) {
        return true;
    }
    on_segment(c, d, a, tol) || on_segment(c, d, b, tol) || on_segment(a, b, c, tol) || on_segment(a, b, d, tol)
}

impl Polygon {
    /// Validates the ring: at least three distinct vertices, non-zero area and
    /// no self-intersections. A repeated closing vertex is dropped.
    pub fn new(mut vertices: Vec<Location>) -> Result<Self> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return domain(format!("polygon needs at least 3 vertices, got {}", vertices.len()));
        }
        if let Some(i) = vertices.iter().position(|v| !v.is_finite()) {
            return domain(format!("polygon vertex {i} is not finite"));
        }
        let scale = vertices.iter().fold(1.0f64, |s, v| s.max(v.x.abs()).max(v.y.abs()));
        let tol = 1e-12 * scale;
        let k = vertices.len();
        for i in 0..k {
            if vertices[i].distance(&vertices[(i + 1) % k]) <= tol {
                return domain(format!("polygon edge {i} has zero length"));
            }
        }
        let poly = Self { vertices };
        if poly.signed_area().abs() <= tol * scale {
            return domain("polygon has zero area");
        }
        for i in 0..k {
            let (a, b) = poly.edge(i);
            for j in i + 1..k {
                let adjacent = j == i + 1 || (i == 0 && j == k - 1);
                let (c, d) = poly.edge(j);
                if adjacent {
                    // Adjacent edges share one vertex; they may only overlap
                    // there. Folding back onto each other is degenerate.
                    let (shared, far_a, far_c) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                    if cross(shared, far_a, far_c).abs() <= tol * scale {
                        let ux = far_a.x - shared.x;
                        let uy = far_a.y - shared.y;
                        let vx = far_c.x - shared.x;
                        let vy = far_c.y - shared.y;
                        if ux * vx + uy * vy > 0.0 {
                            return domain(format!("polygon edges {i} and {j} overlap"));
                        }
                    }
                } else if segments_intersect(a, b, c, d, tol) {
                    return domain(format!("polygon edges {i} and {j} intersect"));
                }
            }
        }
        Ok(poly)
    }

    pub fn vertices(&self) -> &[Location] {
        &self.vertices
    }

    fn edge(&self, i: usize) -> (&Location, &Location) {
        (&self.vertices[i], &self.vertices[(i + 1) % self.vertices.len()])
    }

    pub fn signed_area(&self) -> f64 {
        let k = self.vertices.len();
        (0..k)
            .map(|i| {
                let (a, b) = self.edge(i);
                a.x * b.y - b.x * a.y
            })
            .sum::<f64>()
            / 2.0
    }

    /// Axis-aligned bounding box as `(min, max)` corners.
    pub fn bounds(&self) -> (Location, Location) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices[1..] {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
        }
        (lo, hi)
    }

    /// Even-odd ray casting; points on the boundary count as inside.
    pub fn contains(&self, pt: &Location) -> bool {
        let scale = self
            .vertices
            .iter()
            .fold(1.0f64, |s, v| s.max(v.x.abs()).max(v.y.abs()));
        let tol = 1e-12 * scale;
        let k = self.vertices.len();
        if (0..k).any(|i| {
            let (a, b) = self.edge(i);
            on_segment(a, b, pt, tol)
        }) {
            return true;
        }
        let mut inside = false;
        for i in 0..k {
            let (a, b) = self.edge(i);
            if (a.y > pt.y) != (b.y > pt.y) {
                let x_cross = a.x + (pt.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if pt.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

pub fn point_in_polygon(poly: &Polygon, pt: &Location) -> bool {
    poly.contains(pt)
}
