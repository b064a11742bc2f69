//! Rejection-sampling protocols that turn a uniform sampling into a
//! controlled non-uniform one, plus synthetic shapes with exact normals.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::cloud::{dot, normalize, FeatureMap, PointCloud, Vec3};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProtocolKind {
    Uniform,
    Split,
    Gradient,
    Lambertian,
    Occlusion,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 5] = [
        ProtocolKind::Uniform,
        ProtocolKind::Split,
        ProtocolKind::Gradient,
        ProtocolKind::Lambertian,
        ProtocolKind::Occlusion,
    ];

    pub const NON_UNIFORM: [ProtocolKind; 4] = [
        ProtocolKind::Split,
        ProtocolKind::Gradient,
        ProtocolKind::Lambertian,
        ProtocolKind::Occlusion,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ProtocolKind::Uniform => "uniform",
            ProtocolKind::Split => "split",
            ProtocolKind::Gradient => "gradient",
            ProtocolKind::Lambertian => "lambert",
            ProtocolKind::Occlusion => "occlusion",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Some(Self::Uniform),
            "split" => Some(Self::Split),
            "gradient" => Some(Self::Gradient),
            "lambert" | "lambertian" => Some(Self::Lambertian),
            "occlusion" => Some(Self::Occlusion),
            _ => None,
        }
    }
}

pub const DEFAULT_SPLIT_KEEP: f64 = 0.25;
pub const DEFAULT_GRADIENT_FLOOR: f64 = 0.05;
pub const OCCLUSION_BINS: usize = 64;
pub const OCCLUSION_DEPTH_FRACTION: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct Protocol {
    pub kind: ProtocolKind,
    /// Keep probability inside the split half-space.
    pub keep_prob: f64,
    /// Gradient axis or view direction. `None` picks the largest bounding-box
    /// axis for Gradient and an rng-drawn direction for Lambertian/Occlusion.
    pub direction: Option<Vec3>,
    /// Lowest keep probability of the Gradient ramp.
    pub p_min: f64,
    pub rng: Rng,
}

impl Protocol {
    pub fn new(kind: ProtocolKind, rng: Rng) -> Self {
        Self {
            kind,
            keep_prob: DEFAULT_SPLIT_KEEP,
            direction: None,
            p_min: DEFAULT_GRADIENT_FLOOR,
            rng,
        }
    }

    pub fn with_direction(mut self, d: Vec3) -> Self {
        self.direction = Some(d);
        self
    }

    pub fn with_keep_prob(mut self, p: f64) -> Self {
        self.keep_prob = p;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::invalid(format!("keep probability {} not in (0, 1]", self.keep_prob)));
        }
        if !(self.p_min > 0.0 && self.p_min <= 1.0) {
            return Err(Error::invalid(format!("gradient floor {} not in (0, 1]", self.p_min)));
        }
        if let Some(d) = self.direction {
            if (crate::cloud::norm(d) - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("protocol direction must be unit length"));
            }
        }
        Ok(())
    }
}

/// Indices (ascending) of the points a protocol keeps.
pub fn protocol_indices(cloud: &PointCloud, proto: &Protocol) -> Result<Vec<usize>> {
    proto.validate()?;
    if proto.kind == ProtocolKind::Lambertian && cloud.normals().is_none() {
        return Err(Error::MissingNormals);
    }
    if proto.kind == ProtocolKind::Uniform {
        return Ok((0..cloud.len()).collect());
    }
    let mut keep = vec![false; cloud.len()];
    for b in cloud.batch_vocabulary() {
        let members: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.batch_id(i) == b).collect();
        let view = proto
            .direction
            .unwrap_or_else(|| proto.rng.fork_index("view", b as u64).direction());
        let bern = proto.rng.fork_index("accept", b as u64);
        match proto.kind {
            ProtocolKind::Uniform => unreachable!(),
            ProtocolKind::Occlusion => {
                for i in visible(cloud, &members, view) {
                    keep[i] = true;
                }
            }
            _ => {
                let probs = acceptance(cloud, &members, proto, view, b)?;
                for (k, &i) in members.iter().enumerate() {
                    keep[i] = bern.uniform_at(i as u64) < probs[k];
                }
            }
        }
    }
    Ok((0..cloud.len()).filter(|&i| keep[i]).collect())
}

/// Applies a protocol and returns the retained sub-cloud.
pub fn apply_protocol(cloud: &PointCloud, proto: &Protocol) -> Result<PointCloud> {
    Ok(cloud.subset(&protocol_indices(cloud, proto)?))
}

fn acceptance(cloud: &PointCloud, members: &[usize], proto: &Protocol, view: Vec3, batch: u32) -> Result<Vec<f64>> {
    let pos = |i: usize| cloud.position(i);
    Ok(match proto.kind {
        ProtocolKind::Split => {
            let n = members.len() as f64;
            let mut c = [0.0; 3];
            for &i in members {
                for d in 0..3 {
                    c[d] += pos(i)[d] / n;
                }
            }
            let normal = proto.rng.fork_index("split", batch as u64).direction();
            members
                .iter()
                .map(|&i| {
                    let p = pos(i);
                    if dot([p[0] - c[0], p[1] - c[1], p[2] - c[2]], normal) > 0.0 {
                        proto.keep_prob
                    } else {
                        1.0
                    }
                })
                .collect()
        }
        ProtocolKind::Gradient => {
            let pts: Vec<Vec3> = members.iter().map(|&i| pos(i)).collect();
            let axis = proto.direction.unwrap_or_else(|| {
                let (lo, hi) = crate::cloud::bounds_of(&pts).expect("non-empty");
                let ext = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
                let mut a = 0;
                for d in 1..3 {
                    if ext[d] > ext[a] {
                        a = d;
                    }
                }
                let mut v = [0.0; 3];
                v[a] = 1.0;
                v
            });
            let proj: Vec<f64> = pts.iter().map(|&p| dot(p, axis)).collect();
            let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            proj.iter()
                .map(|&t| {
                    let u = if span > 0.0 { (t - lo) / span } else { 1.0 };
                    proto.p_min + (1.0 - proto.p_min) * u
                })
                .collect()
        }
        ProtocolKind::Lambertian => {
            let normals = cloud.normals().ok_or(Error::MissingNormals)?;
            members.iter().map(|&i| dot(normals[i], view).max(0.0)).collect()
        }
        ProtocolKind::Uniform | ProtocolKind::Occlusion => unreachable!(),
    })
}

/// Points not hidden behind others when seen from far along `view`: each
/// point is binned on a 64x64 grid in the image plane and kept iff its depth
/// is within `0.02 * bbox_diag` of the nearest point in its bin.
fn visible(cloud: &PointCloud, members: &[usize], view: Vec3) -> Vec<usize> {
    let d = normalize(view);
    let helper = if d[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let u = normalize(cross(d, helper));
    let v = cross(d, u);
    let pts: Vec<Vec3> = members.iter().map(|&i| cloud.position(i)).collect();
    let diag = crate::cloud::bounds_of(&pts)
        .map(|(lo, hi)| crate::cloud::norm(crate::cloud::sub(hi, lo)))
        .unwrap_or(0.0);
    let tau = OCCLUSION_DEPTH_FRACTION * diag;
    let uv: Vec<(f64, f64)> = pts.iter().map(|&p| (dot(p, u), dot(p, v))).collect();
    let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(a, b) in &uv {
        u0 = u0.min(a);
        u1 = u1.max(a);
        v0 = v0.min(b);
        v1 = v1.max(b);
    }
    let nb = OCCLUSION_BINS;
    let bin = |x: f64, lo: f64, hi: f64| -> usize {
        if hi > lo {
            (((x - lo) / (hi - lo)) * nb as f64).floor().clamp(0.0, (nb - 1) as f64) as usize
        } else {
            0
        }
    };
    let bins: Vec<usize> = uv
        .iter()
        .map(|&(a, b)| bin(b, v0, v1) * nb + bin(a, u0, u1))
        .collect();
    // Height along the view direction; the viewer sits at +infinity.
    let height: Vec<f64> = pts.iter().map(|&p| dot(p, d)).collect();
    let mut front = vec![f64::NEG_INFINITY; nb * nb];
    for (k, &b) in bins.iter().enumerate() {
        front[b] = front[b].max(height[k]);
    }
    members
        .iter()
        .enumerate()
        .filter(|&(k, _)| front[bins[k]] - height[k] <= tau)
        .map(|(_, &i)| i)
        .collect()
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    /// Unit sphere.
    Sphere,
    /// Ring radius 1, tube radius 0.4, axis z.
    Torus,
    /// Half extents 1 x 0.6 x 0.4.
    Box,
    /// Semi-axes 1 x 0.7 x 0.5.
    Ellipsoid,
}

pub const TORUS_MAJOR: f64 = 1.0;
pub const TORUS_MINOR: f64 = 0.4;
pub const BOX_HALF_EXTENTS: Vec3 = [1.0, 0.6, 0.4];
pub const ELLIPSOID_AXES: Vec3 = [1.0, 0.7, 0.5];

impl ShapeKind {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Torus => "torus",
            ShapeKind::Box => "box",
            ShapeKind::Ellipsoid => "ellipsoid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sphere" => Some(Self::Sphere),
            "torus" => Some(Self::Torus),
            "box" | "cube" => Some(Self::Box),
            "ellipsoid" => Some(Self::Ellipsoid),
            _ => None,
        }
    }
}

/// Area-uniform surface samples with exact unit normals.
pub fn generate_shape(kind: ShapeKind, n: usize, rng: &mut Rng) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::invalid("shape needs at least one point"));
    }
    let mut pos = Vec::with_capacity(n);
    let mut nrm = Vec::with_capacity(n);
    while pos.len() < n {
        let (p, q) = match kind {
            ShapeKind::Sphere => {
                let d = rng.direction();
                (d, d)
            }
            ShapeKind::Torus => {
                let (big, small) = (TORUS_MAJOR, TORUS_MINOR);
                let theta = rng.range(0.0, 2.0 * PI);
                // Area element grows with distance from the axis.
                if rng.uniform() * (big + small) > big + small * theta.cos() {
                    continue;
                }
                let phi = rng.range(0.0, 2.0 * PI);
                let ring = big + small * theta.cos();
                (
                    [ring * phi.cos(), ring * phi.sin(), small * theta.sin()],
                    [theta.cos() * phi.cos(), theta.cos() * phi.sin(), theta.sin()],
                )
            }
            ShapeKind::Box => box_sample(rng),
            ShapeKind::Ellipsoid => {
                let [a, b, c] = ELLIPSOID_AXES;
                let u = rng.direction();
                let g = [u[0] / a, u[1] / b, u[2] / c];
                let stretch = crate::cloud::norm(g) * a.min(b).min(c);
                if rng.uniform() > stretch {
                    continue;
                }
                ([a * u[0], b * u[1], c * u[2]], normalize(g))
            }
        };
        pos.push(p);
        nrm.push(q);
    }
    PointCloud::new(pos).with_normals(nrm)
}

fn box_sample(rng: &mut Rng) -> (Vec3, Vec3) {
    let h = BOX_HALF_EXTENTS;
    // Face pair areas (one face each) for normal axes x, y, z.
    let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
    let total: f64 = areas.iter().sum();
    let t = rng.uniform() * total;
    let axis = if t < areas[0] {
        0
    } else if t < areas[0] + areas[1] {
        1
    } else {
        2
    };
    let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
    let mut p = [0.0; 3];
    for d in 0..3 {
        p[d] = if d == axis { sign * h[d] } else { rng.range(-h[d], h[d]) };
    }
    let mut n = [0.0; 3];
    n[axis] = sign;
    (p, n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarField {
    /// 1 inside the latitude band `[lo, hi]` (radians), else 0.
    StepBand { lo: f64, hi: f64 },
    /// `cos(k * latitude)`.
    Harmonic { k: f64 },
    /// 1 everywhere.
    Constant,
}

pub fn latitude(p: Vec3) -> f64 {
    let r = crate::cloud::norm(p);
    if r == 0.0 {
        0.0
    } else {
        (p[2] / r).clamp(-1.0, 1.0).asin()
    }
}

/// One-channel signal on points of the unit sphere.
pub fn scalar_field_on_sphere(cloud: &PointCloud, field: ScalarField) -> FeatureMap {
    let values = cloud
        .positions()
        .iter()
        .map(|&p| {
            let lat = latitude(p);
            match field {
                ScalarField::StepBand { lo, hi } => f64::from(u8::from(lat >= lo && lat <= hi)),
                ScalarField::Harmonic { k } => (k * lat).cos(),
                ScalarField::Constant => 1.0,
            }
        })
        .collect();
    FeatureMap::from_vec(cloud.len(), 1, values).expect("finite field")
}

pub const FULL_BAND: ScalarField = ScalarField::StepBand {
    lo: -FRAC_PI_2,
    hi: FRAC_PI_2,
};

#[cfg(test)]
mod tests {
    use super::*;

    fn three_sigma(p: f64, n: usize) -> f64 {
        3.0 * (p * (1.0 - p) / n as f64).sqrt()
    }

    #[test]
    fn uniform_keeps_everything() {
        let c = generate_shape(ShapeKind::Torus, 500, &mut Rng::new(1)).unwrap();
        let out = apply_protocol(&c, &Protocol::new(ProtocolKind::Uniform, Rng::new(2))).unwrap();
        assert_eq!(out, c);
    }

    #[test]
    fn lambertian_on_sphere() {
        let n = 50_000;
        let c = generate_shape(ShapeKind::Sphere, n, &mut Rng::new(3)).unwrap();
        let proto = Protocol::new(ProtocolKind::Lambertian, Rng::new(4)).with_direction([0.0, 0.0, 1.0]);
        let idx = protocol_indices(&c, &proto).unwrap();
        assert!(idx.iter().all(|&i| c.normals().unwrap()[i][2] > 0.0));
        let frac = idx.len() as f64 / n as f64;
        assert!((frac - 0.25).abs() < three_sigma(0.25, n), "{frac}");
    }

    #[test]
    fn lambertian_requires_normals() {
        let c = PointCloud::new(vec![[0.0; 3]]);
        let proto = Protocol::new(ProtocolKind::Lambertian, Rng::new(0));
        assert!(matches!(protocol_indices(&c, &proto), Err(Error::MissingNormals)));
    }

    #[test]
    fn split_retains_expected_fraction() {
        let n = 100_000;
        let mut rng = Rng::new(5);
        let c = PointCloud::new((0..n).map(|_| rng.unit_cube()).collect());
        let kept = protocol_indices(&c, &Protocol::new(ProtocolKind::Split, Rng::new(6))).unwrap();
        let frac = kept.len() as f64 / n as f64;
        // Centroid plane splits a symmetric cube in half; 0.5*0.25 + 0.5*1.
        let expected = (1.0 + 0.25) / 2.0;
        assert!((frac - expected).abs() < three_sigma(expected, n), "{frac}");
    }

    #[test]
    fn split_monotone_in_keep_prob() {
        let mut rng = Rng::new(7);
        let c = PointCloud::new((0..20_000).map(|_| rng.unit_cube()).collect());
        let mean_frac = |p: f64| {
            (0..10)
                .map(|s| {
                    let proto = Protocol::new(ProtocolKind::Split, Rng::new(100 + s)).with_keep_prob(p);
                    protocol_indices(&c, &proto).unwrap().len() as f64
                })
                .sum::<f64>()
        };
        let fr: Vec<f64> = [0.1, 0.25, 0.5, 0.9].iter().map(|&p| mean_frac(p)).collect();
        assert!(fr.windows(2).all(|w| w[0] < w[1]), "{fr:?}");
    }

    #[test]
    fn gradient_ramp_floor_and_axis() {
        let n = 40_000;
        let mut rng = Rng::new(8);
        let c = PointCloud::new((0..n).map(|_| {
            let p = rng.unit_cube();
            [4.0 * p[0], p[1], p[2]]
        }).collect());
        let idx = protocol_indices(&c, &Protocol::new(ProtocolKind::Gradient, Rng::new(9))).unwrap();
        // Retention in the lowest and highest tenth along x.
        let count = |lo: f64, hi: f64| {
            let total = (0..n).filter(|&i| (lo..hi).contains(&c.position(i)[0])).count() as f64;
            let kept = idx.iter().filter(|&&i| (lo..hi).contains(&c.position(i)[0])).count() as f64;
            kept / total
        };
        let low = count(0.0, 0.4);
        let high = count(3.6, 4.0);
        assert!(low > 0.0 && low < 0.15, "{low}");
        assert!(high > 0.9, "{high}");
        let mean = idx.len() as f64 / n as f64;
        assert!((mean - 0.525).abs() < 0.02, "{mean}");
    }

    #[test]
    fn occlusion_keeps_front_hemisphere() {
        let c = generate_shape(ShapeKind::Sphere, 200_000, &mut Rng::new(10)).unwrap();
        let proto = Protocol::new(ProtocolKind::Occlusion, Rng::new(11)).with_direction([0.0, 0.0, 1.0]);
        let idx = protocol_indices(&c, &proto).unwrap();
        let back = idx.iter().filter(|&&i| c.position(i)[2] < -0.2).count();
        assert_eq!(back, 0);
        let front = idx.iter().filter(|&&i| c.position(i)[2] > 0.5).count();
        let front_total = (0..c.len()).filter(|&i| c.position(i)[2] > 0.5).count();
        assert!(front as f64 > 0.9 * front_total as f64);
    }

    #[test]
    fn protocol_output_is_subset_and_seeded() {
        let c = generate_shape(ShapeKind::Ellipsoid, 3000, &mut Rng::new(12)).unwrap();
        for kind in ProtocolKind::ALL {
            let a = protocol_indices(&c, &Protocol::new(kind, Rng::new(13))).unwrap();
            let b = protocol_indices(&c, &Protocol::new(kind, Rng::new(13))).unwrap();
            assert_eq!(a, b);
            assert!(a.windows(2).all(|w| w[0] < w[1]));
            let sub = apply_protocol(&c, &Protocol::new(kind, Rng::new(13))).unwrap();
            for (k, &i) in a.iter().enumerate() {
                assert_eq!(sub.position(k), c.position(i));
            }
            if kind != ProtocolKind::Uniform {
                let d = protocol_indices(&c, &Protocol::new(kind, Rng::new(14))).unwrap();
                assert_ne!(a, d, "{kind:?}");
            }
        }
    }

    #[test]
    fn sphere_points_and_normals() {
        let c = generate_shape(ShapeKind::Sphere, 1000, &mut Rng::new(15)).unwrap();
        for (p, n) in c.positions().iter().zip(c.normals().unwrap()) {
            assert!((crate::cloud::norm(*p) - 1.0).abs() < 1e-12);
            assert_eq!(p, n);
        }
    }

    #[test]
    fn torus_implicit_equation() {
        let c = generate_shape(ShapeKind::Torus, 2000, &mut Rng::new(16)).unwrap();
        for p in c.positions() {
            let ring = (p[0] * p[0] + p[1] * p[1]).sqrt() - TORUS_MAJOR;
            let residual = ring * ring + p[2] * p[2] - TORUS_MINOR * TORUS_MINOR;
            assert!(residual.abs() < 1e-9);
        }
    }

    #[test]
    fn box_faces_proportional_to_area() {
        let n = 60_000;
        let c = generate_shape(ShapeKind::Box, n, &mut Rng::new(17)).unwrap();
        let h = BOX_HALF_EXTENTS;
        let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
        let total: f64 = areas.iter().sum::<f64>() * 2.0;
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let count = c
                    .normals()
                    .unwrap()
                    .iter()
                    .filter(|nn| nn[axis] == sign)
                    .count();
                let p = areas[axis] / total;
                let frac = count as f64 / n as f64;
                assert!((frac - p).abs() < three_sigma(p, n), "axis {axis} {sign}: {frac} vs {p}");
            }
        }
        for nn in c.normals().unwrap() {
            assert_eq!(nn.iter().filter(|v| **v != 0.0).count(), 1);
        }
    }

    #[test]
    fn ellipsoid_on_surface() {
        let c = generate_shape(ShapeKind::Ellipsoid, 2000, &mut Rng::new(18)).unwrap();
        let [a, b, cc] = ELLIPSOID_AXES;
        for (p, n) in c.positions().iter().zip(c.normals().unwrap()) {
            let v = (p[0] / a).powi(2) + (p[1] / b).powi(2) + (p[2] / cc).powi(2);
            assert!((v - 1.0).abs() < 1e-12);
            let grad = normalize([p[0] / (a * a), p[1] / (b * b), p[2] / (cc * cc)]);
            assert!(dot(grad, *n) > 1.0 - 1e-12);
        }
        assert!(generate_shape(ShapeKind::Sphere, 0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn scalar_fields() {
        let c = generate_shape(ShapeKind::Sphere, 10_000, &mut Rng::new(19)).unwrap();
        assert!(scalar_field_on_sphere(&c, FULL_BAND).values().iter().all(|&v| v == 1.0));
        assert!(scalar_field_on_sphere(&c, ScalarField::Harmonic { k: 0.0 })
            .values()
            .iter()
            .all(|&v| v == 1.0));
        let f = scalar_field_on_sphere(&c, ScalarField::StepBand { lo: 0.2, hi: 0.5 });
        let frac = f.values().iter().sum::<f64>() / 10_000.0;
        // Zone area between two latitudes over the full sphere.
        let p = (0.5f64.sin() - 0.2f64.sin()) / 2.0;
        assert!((frac - p).abs() < three_sigma(p, 10_000), "{frac} vs {p}");
    }
}
