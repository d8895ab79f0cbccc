//! Built-in solid catalog: area-uniform surface sampling plus solid inclusion
//! tests, in each shape's canonical frame.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Cube,
    Sphere,
    Cylinder,
    Ellipsoid,
    LPrism,
}

impl Shape {
    pub const ALL: [Shape; 5] = [
        Shape::Cube,
        Shape::Sphere,
        Shape::Cylinder,
        Shape::Ellipsoid,
        Shape::LPrism,
    ];

    pub fn parse(name: &str) -> Result<Shape> {
        match name {
            "cube" => Ok(Shape::Cube),
            "sphere" => Ok(Shape::Sphere),
            "cylinder" => Ok(Shape::Cylinder),
            "ellipsoid" => Ok(Shape::Ellipsoid),
            "l-prism" | "lprism" => Ok(Shape::LPrism),
            other => Err(Error::invalid(format!("unknown shape `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Shape::Cube => "cube",
            Shape::Sphere => "sphere",
            Shape::Cylinder => "cylinder",
            Shape::Ellipsoid => "ellipsoid",
            Shape::LPrism => "l-prism",
        }
    }

    /// Total surface area in the canonical frame.
    pub fn surface_area(&self) -> f64 {
        use std::f64::consts::PI;
        match self {
            Shape::Cube => 24.0,
            Shape::Sphere => 4.0 * PI,
            Shape::Cylinder => {
                2.0 * PI * CYL_R * (2.0 * CYL_HH) + 2.0 * PI * CYL_R * CYL_R
            }
            // Thomsen's approximation, plenty for density bookkeeping.
            Shape::Ellipsoid => {
                let (a, b, c) = (ELL_A, ELL_B, ELL_C);
                let p = 1.6075;
                let s = ((a * b).powf(p) + (a * c).powf(p) + (b * c).powf(p)) / 3.0;
                4.0 * PI * s.powf(1.0 / p)
            }
            Shape::LPrism => {
                // Two L caps of area 3 plus perimeter (8) times height.
                2.0 * 3.0 + 8.0 * (2.0 * LP_HH)
            }
        }
    }

    /// One area-uniform surface sample: position and outward unit normal.
    pub fn sample_surface(&self, rng: &mut impl Rng) -> (Vector3<f64>, Vector3<f64>) {
        match self {
            Shape::Cube => sample_box(rng, Vector3::new(1.0, 1.0, 1.0)),
            Shape::Sphere => {
                let n = random_unit(rng);
                (n, n)
            }
            Shape::Cylinder => sample_cylinder(rng),
            Shape::Ellipsoid => sample_ellipsoid(rng),
            Shape::LPrism => sample_l_prism(rng),
        }
    }

    /// Solid inclusion test in the canonical frame. Boundary points count as
    /// inside (with a rounding-sized slack on the quadratic surfaces).
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        const SLACK: f64 = 1e-9;
        match self {
            Shape::Cube => p.x.abs() <= 1.0 && p.y.abs() <= 1.0 && p.z.abs() <= 1.0,
            Shape::Sphere => p.norm_squared() <= 1.0 + SLACK,
            Shape::Cylinder => {
                p.z.abs() <= CYL_HH && p.x * p.x + p.y * p.y <= CYL_R * CYL_R + SLACK
            }
            Shape::Ellipsoid => {
                let q = Vector3::new(p.x / ELL_A, p.y / ELL_B, p.z / ELL_C);
                q.norm_squared() <= 1.0 + SLACK
            }
            Shape::LPrism => {
                p.z.abs() <= LP_HH
                    && p.x.abs() <= 1.0
                    && p.y.abs() <= 1.0
                    && !(p.x > 0.0 && p.y > 0.0)
            }
        }
    }
}

const CYL_R: f64 = 0.7;
const CYL_HH: f64 = 1.0;
const ELL_A: f64 = 1.0;
const ELL_B: f64 = 0.7;
const ELL_C: f64 = 0.45;
const LP_HH: f64 = 0.6;

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn sample_box(rng: &mut impl Rng, half: Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let areas = [
        half.y * half.z, // +-x faces
        half.x * half.z,
        half.x * half.y,
    ];
    let total: f64 = areas.iter().sum::<f64>() * 2.0;
    let mut pick = rng.gen::<f64>() * total;
    for axis in 0..3 {
        for sign in [1.0, -1.0] {
            if pick < areas[axis] {
                let mut p = Vector3::new(
                    rng.gen::<f64>() * 2.0 - 1.0,
                    rng.gen::<f64>() * 2.0 - 1.0,
                    rng.gen::<f64>() * 2.0 - 1.0,
                );
                p.x *= half.x;
                p.y *= half.y;
                p.z *= half.z;
                p[axis] = sign * half[axis];
                let mut n = Vector3::zeros();
                n[axis] = sign;
                return (p, n);
            }
            pick -= areas[axis];
        }
    }
    // Rounding fallthrough: last face.
    (Vector3::new(0.0, 0.0, -half.z), -Vector3::z())
}

fn sample_cylinder(rng: &mut impl Rng) -> (Vector3<f64>, Vector3<f64>) {
    use std::f64::consts::PI;
    let lateral = 2.0 * PI * CYL_R * (2.0 * CYL_HH);
    let cap = PI * CYL_R * CYL_R;
    let pick = rng.gen::<f64>() * (lateral + 2.0 * cap);
    if pick < lateral {
        let theta = rng.gen::<f64>() * 2.0 * PI;
        let z = (rng.gen::<f64>() * 2.0 - 1.0) * CYL_HH;
        let n = Vector3::new(theta.cos(), theta.sin(), 0.0);
        (Vector3::new(CYL_R * n.x, CYL_R * n.y, z), n)
    } else {
        let sign = if pick < lateral + cap { 1.0 } else { -1.0 };
        let r = CYL_R * rng.gen::<f64>().sqrt();
        let theta = rng.gen::<f64>() * 2.0 * PI;
        (
            Vector3::new(r * theta.cos(), r * theta.sin(), sign * CYL_HH),
            Vector3::new(0.0, 0.0, sign),
        )
    }
}

fn sample_ellipsoid(rng: &mut impl Rng) -> (Vector3<f64>, Vector3<f64>) {
    // Rejection against the surface-element density keeps the samples
    // area-uniform on the stretched sphere.
    let (a, b, c) = (ELL_A, ELL_B, ELL_C);
    let g_max = (b * c).max(a * c).max(a * b);
    loop {
        let u = random_unit(rng);
        let g = Vector3::new(b * c * u.x, a * c * u.y, a * b * u.z).norm();
        if rng.gen::<f64>() * g_max <= g {
            let p = Vector3::new(a * u.x, b * u.y, c * u.z);
            let n = Vector3::new(p.x / (a * a), p.y / (b * b), p.z / (c * c)).normalize();
            return (p, n);
        }
    }
}

fn sample_l_prism(rng: &mut impl Rng) -> (Vector3<f64>, Vector3<f64>) {
    // Cross-section: [-1,1]^2 minus the open quadrant x>0, y>0.
    // Cap area 3 each; side walls are edge length x height.
    let h = 2.0 * LP_HH;
    let caps = 2.0 * 3.0;
    let sides = [
        (2.0, 0usize), // y = -1, normal -y
        (1.0, 1),      // x = 1, y in [-1,0], normal +x
        (1.0, 2),      // y = 0, x in [0,1], normal +y (inner)
        (1.0, 3),      // x = 0, y in [0,1], normal +x (inner)
        (1.0, 4),      // y = 1, x in [-1,0], normal +y
        (2.0, 5),      // x = -1, normal -x
    ];
    let side_total: f64 = sides.iter().map(|(l, _)| l * h).sum();
    let mut pick = rng.gen::<f64>() * (caps + side_total);
    if pick < caps {
        let sign = if pick < 3.0 { 1.0 } else { -1.0 };
        let (x, y) = sample_l_cross_section(rng);
        return (Vector3::new(x, y, sign * LP_HH), Vector3::new(0.0, 0.0, sign));
    }
    pick -= caps;
    let z = (rng.gen::<f64>() * 2.0 - 1.0) * LP_HH;
    for (len, which) in sides {
        let area = len * h;
        if pick < area {
            let t = rng.gen::<f64>();
            let (p, n) = match which {
                0 => (Vector3::new(-1.0 + 2.0 * t, -1.0, z), -Vector3::y()),
                1 => (Vector3::new(1.0, -1.0 + t, z), Vector3::x()),
                2 => (Vector3::new(t, 0.0, z), Vector3::y()),
                3 => (Vector3::new(0.0, t, z), Vector3::x()),
                4 => (Vector3::new(-1.0 + t, 1.0, z), Vector3::y()),
                _ => (Vector3::new(-1.0, -1.0 + 2.0 * t, z), -Vector3::x()),
            };
            return (p, n);
        }
        pick -= area;
    }
    (Vector3::new(-1.0, 0.0, z), -Vector3::x())
}

fn sample_l_cross_section(rng: &mut impl Rng) -> (f64, f64) {
    // Lower rectangle [-1,1]x[-1,0] (area 2) vs left rectangle [-1,0]x[0,1].
    if rng.gen::<f64>() * 3.0 < 2.0 {
        (rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() - 1.0)
    } else {
        (rng.gen::<f64>() - 1.0, rng.gen::<f64>())
    }
}
