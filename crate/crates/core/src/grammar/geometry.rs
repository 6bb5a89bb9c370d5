use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Anchor, Primitive};

pub type Mat3 = [[f64; 3]; 3];

/// Exact values at multiples of 90° so axis-aligned layouts stay exact.
fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let r = deg.rem_euclid(360.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 90.0 {
        (1.0, 0.0)
    } else if r == 180.0 {
        (0.0, -1.0)
    } else if r == 270.0 {
        (-1.0, 0.0)
    } else {
        let rad = r * PI / 180.0;
        (rad.sin(), rad.cos())
    }
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn mat_vec(a: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

/// A rigid transform: rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Frame {
    pub rotation: Mat3,
    pub position: [f64; 3],
}

impl Frame {
    pub const IDENTITY: Frame = Frame {
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        position: [0.0; 3],
    };

    /// Rotation `Rz(z)·Ry(y)·Rx(x)` in degrees.
    pub fn from_euler_deg(position: [f64; 3], angles: [f64; 3]) -> Frame {
        let (sx, cx) = sin_cos_deg(angles[0]);
        let (sy, cy) = sin_cos_deg(angles[1]);
        let (sz, cz) = sin_cos_deg(angles[2]);
        let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
        let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
        Frame {
            rotation: mat_mul(&rz, &mat_mul(&ry, &rx)),
            position,
        }
    }

    pub fn rot_z_deg(deg: f64) -> Frame {
        Frame::from_euler_deg([0.0; 3], [0.0, 0.0, deg])
    }

    /// `self ∘ local`: `local` expressed in the coordinates of `self`.
    pub fn compose(&self, local: &Frame) -> Frame {
        let p = mat_vec(&self.rotation, local.position);
        Frame {
            rotation: mat_mul(&self.rotation, &local.rotation),
            position: [
                p[0] + self.position[0],
                p[1] + self.position[1],
                p[2] + self.position[2],
            ],
        }
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let p = mat_vec(&self.rotation, v);
        [
            p[0] + self.position[0],
            p[1] + self.position[1],
            p[2] + self.position[2],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn from_points(points: impl IntoIterator<Item = [f64; 3]>) -> Aabb {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        Aabb { min, max }
    }

    /// Strict overlap on all three axes; touching faces do not count.
    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] < other.max[k] && other.min[k] < self.max[k])
    }

    pub fn corners(&self) -> [[f64; 3]; 8] {
        let (a, b) = (self.min, self.max);
        [
            [a[0], a[1], a[2]],
            [b[0], a[1], a[2]],
            [a[0], b[1], a[2]],
            [b[0], b[1], a[2]],
            [a[0], a[1], b[2]],
            [b[0], a[1], b[2]],
            [a[0], b[1], b[2]],
            [b[0], b[1], b[2]],
        ]
    }
}

/// Local-frame bounding box of a primitive with resolved sizes.
pub(crate) fn local_box(primitive: Primitive, anchor: Anchor, sizes: &[f64]) -> Aabb {
    let s = |i: usize| sizes.get(i).copied().unwrap_or(0.0);
    // extents along x, y, z
    let (ex, ey, ez) = match primitive {
        Primitive::Box | Primitive::ExtrusionProfile => (s(0), s(1), s(2)),
        Primitive::Cylinder => (s(1), 2.0 * s(0), 2.0 * s(0)),
        Primitive::Sphere => (2.0 * s(0), 2.0 * s(0), 2.0 * s(0)),
    };
    let (x0, x1) = match anchor {
        Anchor::Base => (0.0, ex),
        Anchor::Center => (-0.5 * ex, 0.5 * ex),
    };
    Aabb {
        min: [x0, -0.5 * ey, -0.5 * ez],
        max: [x1, 0.5 * ey, 0.5 * ez],
    }
}

pub(crate) fn volume(primitive: Primitive, sizes: &[f64]) -> f64 {
    let s = |i: usize| sizes.get(i).copied().unwrap_or(0.0);
    match primitive {
        Primitive::Box | Primitive::ExtrusionProfile => s(0) * s(1) * s(2),
        Primitive::Cylinder => PI * s(0) * s(0) * s(1),
        Primitive::Sphere => 4.0 / 3.0 * PI * s(0).powi(3),
    }
}

/// One placed unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Occurrence {
    pub unit: String,
    pub primitive: Primitive,
    pub anchor: Anchor,
    pub frame: Frame,
    /// Resolved size values, in the unit's size-parameter order.
    pub sizes: Vec<f64>,
    /// World-space axis-aligned bounding box.
    pub bbox: Aabb,
    /// Host occurrence; `None` for the axiom.
    pub parent: Option<usize>,
    /// Application that placed this occurrence; `None` for the axiom.
    pub application: Option<usize>,
}

/// Geometric realization of a design sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Assembly {
    pub occurrences: Vec<Occurrence>,
    /// Sum of primitive volumes at unit density.
    pub total_mass_proxy: f64,
}

impl Assembly {
    pub fn count_unit(&self, unit: &str) -> usize {
        self.occurrences.iter().filter(|o| o.unit == unit).count()
    }

    /// Pairs of occurrences (other than host/child) whose boxes overlap.
    pub fn collisions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.occurrences.len() {
            for j in (i + 1)..self.occurrences.len() {
                let (a, b) = (&self.occurrences[i], &self.occurrences[j]);
                if a.parent == Some(j) || b.parent == Some(i) {
                    continue;
                }
                if a.bbox.overlaps(&b.bbox) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("assembly serializes")
    }

    /// Wavefront OBJ triangle mesh, one group per occurrence.
    pub fn to_obj(&self) -> String {
        let mut out = String::from("# shapeflow assembly\n");
        let mut base = 1usize;
        for (idx, occ) in self.occurrences.iter().enumerate() {
            let _ = writeln!(out, "g {}_{}", occ.unit, idx);
            let (verts, tris) = mesh(occ.primitive, occ.anchor, &occ.sizes);
            for v in &verts {
                let w = occ.frame.apply(*v);
                let _ = writeln!(out, "v {} {} {}", w[0], w[1], w[2]);
            }
            for t in &tris {
                let _ = writeln!(out, "f {} {} {}", t[0] + base, t[1] + base, t[2] + base);
            }
            base += verts.len();
        }
        out
    }
}

const SEGMENTS: usize = 16;

type Mesh = (Vec<[f64; 3]>, Vec<[usize; 3]>);

fn mesh(primitive: Primitive, anchor: Anchor, sizes: &[f64]) -> Mesh {
    let lb = local_box(primitive, anchor, sizes);
    match primitive {
        Primitive::Box | Primitive::ExtrusionProfile => {
            let verts = lb.corners().to_vec();
            let tris = vec![
                [0, 2, 1],
                [1, 2, 3],
                [4, 5, 6],
                [5, 7, 6],
                [0, 1, 4],
                [1, 5, 4],
                [2, 6, 3],
                [3, 6, 7],
                [0, 4, 2],
                [2, 4, 6],
                [1, 3, 5],
                [3, 7, 5],
            ];
            (verts, tris)
        }
        Primitive::Cylinder => {
            let r = 0.5 * (lb.max[1] - lb.min[1]);
            let (x0, x1) = (lb.min[0], lb.max[0]);
            let mut verts = vec![[x0, 0.0, 0.0], [x1, 0.0, 0.0]];
            for k in 0..SEGMENTS {
                let a = 2.0 * PI * k as f64 / SEGMENTS as f64;
                let (s, c) = a.sin_cos();
                verts.push([x0, r * c, r * s]);
                verts.push([x1, r * c, r * s]);
            }
            let mut tris = Vec::new();
            for k in 0..SEGMENTS {
                let a0 = 2 + 2 * k;
                let a1 = 2 + 2 * ((k + 1) % SEGMENTS);
                tris.push([0, a1, a0]);
                tris.push([1, a0 + 1, a1 + 1]);
                tris.push([a0, a1, a0 + 1]);
                tris.push([a1, a1 + 1, a0 + 1]);
            }
            (verts, tris)
        }
        Primitive::Sphere => {
            let r = 0.5 * (lb.max[0] - lb.min[0]);
            let c = [lb.min[0] + r, 0.0, 0.0];
            let (rings, segs) = (8usize, SEGMENTS);
            let mut verts = vec![[c[0], c[1], c[2] + r], [c[0], c[1], c[2] - r]];
            for i in 1..rings {
                let phi = PI * i as f64 / rings as f64;
                for j in 0..segs {
                    let th = 2.0 * PI * j as f64 / segs as f64;
                    verts.push([
                        c[0] + r * phi.sin() * th.cos(),
                        c[1] + r * phi.sin() * th.sin(),
                        c[2] + r * phi.cos(),
                    ]);
                }
            }
            let idx = |i: usize, j: usize| 2 + (i - 1) * segs + (j % segs);
            let mut tris = Vec::new();
            for j in 0..segs {
                tris.push([0, idx(1, j), idx(1, j + 1)]);
                tris.push([1, idx(rings - 1, j + 1), idx(rings - 1, j)]);
            }
            for i in 1..rings - 1 {
                for j in 0..segs {
                    tris.push([idx(i, j), idx(i + 1, j), idx(i, j + 1)]);
                    tris.push([idx(i, j + 1), idx(i + 1, j), idx(i + 1, j + 1)]);
                }
            }
            (verts, tris)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_turns_are_exact() {
        let f = Frame::rot_z_deg(90.0);
        assert_eq!(f.apply([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0]);
        let down = Frame::from_euler_deg([0.0; 3], [0.0, 90.0, 0.0]);
        assert_eq!(down.apply([1.0, 0.0, 0.0]), [0.0, 0.0, -1.0]);
        let up = Frame::from_euler_deg([0.0; 3], [0.0, -90.0, 0.0]);
        assert_eq!(up.apply([1.0, 0.0, 0.0]), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn compose_translates_then_rotates() {
        let host = Frame::from_euler_deg([10.0, 0.0, 0.0], [0.0, 0.0, 90.0]);
        let local = Frame::from_euler_deg([5.0, 0.0, 0.0], [0.0; 3]);
        let w = host.compose(&local);
        assert_eq!(w.position, [10.0, 5.0, 0.0]);
    }

    #[test]
    fn touching_boxes_do_not_overlap() {
        let a = Aabb {
            min: [0.0; 3],
            max: [1.0; 3],
        };
        let b = Aabb {
            min: [1.0, 0.0, 0.0],
            max: [2.0, 1.0, 1.0],
        };
        assert!(!a.overlaps(&b));
        let c = Aabb {
            min: [0.999, 0.0, 0.0],
            max: [2.0, 1.0, 1.0],
        };
        assert!(a.overlaps(&c));
    }

    #[test]
    fn local_boxes_follow_anchor() {
        let b = local_box(Primitive::Cylinder, Anchor::Base, &[2.0, 5.0]);
        assert_eq!(b.min, [0.0, -2.0, -2.0]);
        assert_eq!(b.max, [5.0, 2.0, 2.0]);
        let c = local_box(Primitive::Box, Anchor::Center, &[2.0, 4.0, 6.0]);
        assert_eq!(c.min, [-1.0, -2.0, -3.0]);
    }
}
