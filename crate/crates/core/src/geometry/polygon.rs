//! Quadrilaterals, areas and convex-clipping IoU.

pub type Point = [f64; 2];
pub type Quad = [Point; 4];

/// A ground-truth region.
#[derive(Clone, Debug, PartialEq)]
pub struct TextPolygon {
    pub vertices: Quad,
    /// Set for "###" regions: excluded from training and evaluation.
    pub ignore: bool,
    pub transcription: String,
}

impl TextPolygon {
    pub fn new(vertices: Quad) -> Self {
        Self {
            vertices,
            ignore: false,
            transcription: String::new(),
        }
    }

    pub fn ignored(vertices: Quad) -> Self {
        Self {
            vertices,
            ignore: true,
            transcription: "###".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionBox {
    pub polygon: Quad,
    pub score: f64,
}

/// Shoelace area; positive for clockwise order in image coordinates (y down).
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let [x1, y1] = poly[i];
        let [x2, y2] = poly[(i + 1) % n];
        s += x1 * y2 - x2 * y1;
    }
    0.5 * s
}

pub fn polygon_area(poly: &[Point]) -> f64 {
    signed_area(poly).abs()
}

const DEGENERATE_AREA: f64 = 1e-12;

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn oriented(poly: &[Point]) -> Vec<Point> {
    let mut v = poly.to_vec();
    if signed_area(&v) < 0.0 {
        v.reverse();
    }
    v
}

fn line_intersection(p1: Point, p2: Point, q1: Point, q2: Point) -> Point {
    let d1 = [p2[0] - p1[0], p2[1] - p1[1]];
    let d2 = [q2[0] - q1[0], q2[1] - q1[1]];
    let denom = d1[0] * d2[1] - d1[1] * d2[0];
    if denom.abs() < 1e-300 {
        return p2;
    }
    let t = ((q1[0] - p1[0]) * d2[1] - (q1[1] - p1[1]) * d2[0]) / denom;
    [p1[0] + t * d1[0], p1[1] + t * d1[1]]
}

/// Intersection of `subject` with the convex polygon `clip`
/// (Sutherland–Hodgman). Both may be in either orientation.
pub fn clip_polygon(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let clip = oriented(clip);
    let mut out = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % n]);
        let input = std::mem::take(&mut out);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    out.push(line_intersection(prev, cur, a, b));
                }
                out.push(cur);
            } else if prev_in {
                out.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    out
}

pub fn intersection_area(a: &[Point], b: &[Point]) -> f64 {
    let clipped = clip_polygon(a, b);
    if clipped.len() < 3 {
        0.0
    } else {
        polygon_area(&clipped)
    }
}

/// Intersection over union of two convex polygons; 0 for degenerate input.
pub fn polygon_iou(a: &[Point], b: &[Point]) -> f64 {
    let (aa, ab) = (polygon_area(a), polygon_area(b));
    if aa < DEGENERATE_AREA || ab < DEGENERATE_AREA {
        return 0.0;
    }
    let inter = intersection_area(a, b).min(aa).min(ab);
    let union = aa + ab - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Even–odd point-in-polygon test.
pub fn contains_point(poly: &[Point], p: Point) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi[1] > p[1]) != (pj[1] > p[1]) {
            let x = pj[0] + (p[1] - pj[1]) * (pi[0] - pj[0]) / (pi[1] - pj[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Clockwise order (image coordinates) starting at the vertex with the
/// smallest `x + y`.
pub fn canonical_order(q: &Quad) -> Quad {
    let mut v = *q;
    if signed_area(&v) < 0.0 {
        v.reverse();
    }
    let start = (0..4)
        .min_by(|&a, &b| (v[a][0] + v[a][1]).total_cmp(&(v[b][0] + v[b][1])))
        .expect("four vertices");
    std::array::from_fn(|i| v[(start + i) % 4])
}

pub fn edge_length(a: Point, b: Point) -> f64 {
    (b[0] - a[0]).hypot(b[1] - a[1])
}

pub fn shortest_edge(q: &Quad) -> f64 {
    (0..4).map(|i| edge_length(q[i], q[(i + 1) % 4])).fold(f64::INFINITY, f64::min)
}

/// Minimum-area enclosing rectangle of a quad: `(angle, center-frame extents)`.
/// The angle is normalised to `(−π/4, π/4]`; the extents are
/// `[u_min, u_max, v_min, v_max]` along `u = (cos θ, sin θ)`, `v = (−sin θ, cos θ)`.
pub fn min_area_rect(q: &Quad) -> (f64, [f64; 4]) {
    let mut best: Option<(f64, f64, [f64; 4])> = None;
    for i in 0..4 {
        let (a, b) = (q[i], q[(i + 1) % 4]);
        if edge_length(a, b) < 1e-12 {
            continue;
        }
        let theta = normalize_angle((b[1] - a[1]).atan2(b[0] - a[0]));
        let ext = extents(q, theta);
        let area = (ext[1] - ext[0]) * (ext[3] - ext[2]);
        if best.map_or(true, |(ba, _, _)| area < ba - 1e-9) {
            best = Some((area, theta, ext));
        }
    }
    match best {
        Some((_, theta, ext)) => (theta, ext),
        None => (0.0, extents(q, 0.0)),
    }
}

/// Fold an angle into `(−π/4, π/4]` using the rectangle's quarter-turn symmetry.
pub fn normalize_angle(theta: f64) -> f64 {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
    let mut t = theta.rem_euclid(FRAC_PI_2);
    if t > FRAC_PI_4 {
        t -= FRAC_PI_2;
    }
    t
}

fn extents(q: &Quad, theta: f64) -> [f64; 4] {
    let (s, c) = theta.sin_cos();
    let mut e = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for p in q {
        let pu = p[0] * c + p[1] * s;
        let pv = -p[0] * s + p[1] * c;
        e[0] = e[0].min(pu);
        e[1] = e[1].max(pu);
        e[2] = e[2].min(pv);
        e[3] = e[3].max(pv);
    }
    e
}

/// Rotated rectangle around `p` with edge distances `(top, right, bottom, left)`.
pub fn rbox_corners(p: Point, distances: [f64; 4], angle: f64) -> Quad {
    let [t, r, b, l] = distances;
    let (s, c) = angle.sin_cos();
    let u = [c, s];
    let v = [-s, c];
    let at = |du: f64, dv: f64| [p[0] + du * u[0] + dv * v[0], p[1] + du * u[1] + dv * v[1]];
    [at(-l, -t), at(r, -t), at(r, b), at(-l, b)]
}

/// Move every edge inward by `ratio` times the mean length of its two
/// neighbouring edges (for a rectangle: each side pair shrinks by `ratio` of
/// the perpendicular extent from both ends).
pub fn shrink_quad(q: &Quad, ratio: f64) -> Quad {
    let q = {
        let mut v = *q;
        if signed_area(&v) < 0.0 {
            v.reverse();
        }
        v
    };
    let len: [f64; 4] = std::array::from_fn(|i| edge_length(q[i], q[(i + 1) % 4]));
    // Offset line for edge i.
    let lines: [(Point, Point); 4] = std::array::from_fn(|i| {
        let (a, b) = (q[i], q[(i + 1) % 4]);
        let d = ratio * 0.5 * (len[(i + 3) % 4] + len[(i + 1) % 4]);
        let l = len[i].max(1e-12);
        // Inward normal for clockwise order with y down.
        let n = [-(b[1] - a[1]) / l, (b[0] - a[0]) / l];
        ([a[0] + d * n[0], a[1] + d * n[1]], [b[0] + d * n[0], b[1] + d * n[1]])
    });
    std::array::from_fn(|i| {
        let (p1, p2) = lines[(i + 3) % 4];
        let (q1, q2) = lines[i];
        line_intersection(p1, p2, q1, q2)
    })
}
