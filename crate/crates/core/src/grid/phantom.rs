use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{GridImage, LandmarkSet};
use crate::error::{Error, Result};
use crate::metrics::labels;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PhantomFamily {
    /// Whole-body silhouette, 8 landmarks.
    BodyOutline2D,
    /// Short-axis cardiac slice (LV blood pool, myocardium, RV), 33 landmarks.
    CardiacRings2D,
    /// Upper half of an ellipsoidal skull shell, 6 landmarks.
    SkullCap3D,
}

impl PhantomFamily {
    pub fn landmark_count(self) -> usize {
        match self {
            PhantomFamily::BodyOutline2D => 8,
            PhantomFamily::CardiacRings2D => 33,
            PhantomFamily::SkullCap3D => 6,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            PhantomFamily::SkullCap3D => 3,
            _ => 2,
        }
    }

    pub fn default_extents(self) -> Vec<usize> {
        match self {
            PhantomFamily::BodyOutline2D => vec![64, 64],
            PhantomFamily::CardiacRings2D => vec![128, 128],
            PhantomFamily::SkullCap3D => vec![32, 32, 32],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PhantomFamily::BodyOutline2D => "body-outline-2d",
            PhantomFamily::CardiacRings2D => "cardiac-rings-2d",
            PhantomFamily::SkullCap3D => "skull-cap-3d",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "body-outline-2d" => Ok(PhantomFamily::BodyOutline2D),
            "cardiac-rings-2d" => Ok(PhantomFamily::CardiacRings2D),
            "skull-cap-3d" => Ok(PhantomFamily::SkullCap3D),
            other => Err(Error::Argument(format!("unknown phantom family '{other}'"))),
        }
    }
}

/// Recipe for one family of synthetic images.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub family: PhantomFamily,
    pub landmark_count: usize,
    /// Scales every random deformation; 1 is the nominal variability, 0 gives the template.
    pub amplitude: f64,
    /// Standard deviation of additive Gaussian intensity noise.
    pub noise: f64,
    pub extents: Vec<usize>,
    pub seed: u64,
}

/// Largest amplitude for which the deformation bounds keep every family's outline simple.
pub const MAX_AMPLITUDE: f64 = 1.5;

impl PhantomSpec {
    pub fn new(family: PhantomFamily, amplitude: f64, noise: f64, seed: u64) -> Self {
        Self {
            family,
            landmark_count: family.landmark_count(),
            amplitude,
            noise,
            extents: family.default_extents(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.landmark_count != self.family.landmark_count() {
            return Err(Error::Argument(format!(
                "{} phantoms carry {} landmarks, not {}",
                self.family.name(),
                self.family.landmark_count(),
                self.landmark_count
            )));
        }
        if self.extents.len() != self.family.dim() {
            return Err(Error::Argument(format!(
                "{} phantoms are {}D",
                self.family.name(),
                self.family.dim()
            )));
        }
        if self.extents.iter().any(|&e| e < 16) {
            return Err(Error::Argument("phantom extents must be at least 16 voxels".into()));
        }
        if !(0.0..=MAX_AMPLITUDE).contains(&self.amplitude) {
            return Err(Error::Argument(format!(
                "amplitude must lie in [0, {MAX_AMPLITUDE}], got {}",
                self.amplitude
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Argument("noise level must be a finite non-negative value".into()));
        }
        Ok(())
    }
}

/// Bounded standard-normal draw; the bound keeps deformed outlines non-self-intersecting.
fn unit_draw<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z.clamp(-2.5, 2.5)
}

fn add_noise<R: Rng + ?Sized>(data: &mut [f32], noise: f64, rng: &mut R) {
    if noise > 0.0 {
        let dist = Normal::new(0.0, noise).expect("noise validated");
        for v in data.iter_mut() {
            *v += dist.sample(rng) as f32;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One phantom image with exact landmark positions.
pub fn generate_phantom<R: Rng + ?Sized>(spec: &PhantomSpec, rng: &mut R) -> Result<(GridImage, LandmarkSet)> {
    spec.validate()?;
    match spec.family {
        PhantomFamily::BodyOutline2D => {
            let body = BodyOutline::sample(spec, rng);
            let mut data = body.render(&spec.extents);
            add_noise(&mut data, spec.noise, rng);
            let image = GridImage::new(spec.extents.clone(), vec![1.0; 2], data)?;
            Ok((image, body.landmarks()))
        }
        PhantomFamily::CardiacRings2D => {
            let heart = CardiacGeometry::sample(spec, rng);
            let mut data = heart.render(&spec.extents);
            add_noise(&mut data, spec.noise, rng);
            let image = GridImage::new(spec.extents.clone(), vec![1.0; 2], data)?;
            Ok((image, heart.landmarks()))
        }
        PhantomFamily::SkullCap3D => {
            let skull = SkullCap::sample(spec, rng);
            let mut data = skull.render(&spec.extents);
            add_noise(&mut data, spec.noise, rng);
            let image = GridImage::new(spec.extents.clone(), vec![1.0; 3], data)?;
            Ok((image, skull.landmarks()))
        }
    }
}

/// `count` phantoms drawn from a stream seeded by `spec.seed`.
pub fn generate_many(spec: &PhantomSpec, count: usize) -> Result<Vec<(GridImage, LandmarkSet)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..count).map(|_| generate_phantom(spec, &mut rng)).collect()
}

// ---------------------------------------------------------------- body outline

/// Silhouette vertices on a 64x64 reference grid, (row, col), traced clockwise from the head.
const BODY_TEMPLATE: [[f64; 2]; 20] = [
    [6.0, 32.0],  // head top *
    [10.0, 37.0], // head side
    [16.0, 35.0], // neck
    [19.0, 46.0], // right shoulder *
    [36.0, 54.0], // right hand outer *
    [38.0, 49.0], // right hand inner
    [24.0, 41.0], // right armpit
    [38.0, 42.0], // right hip
    [58.0, 42.0], // right foot outer *
    [58.0, 35.0], // right foot inner
    [42.0, 32.0], // crotch *
    [58.0, 29.0], // left foot inner
    [58.0, 22.0], // left foot outer *
    [38.0, 22.0], // left hip
    [24.0, 23.0], // left armpit
    [38.0, 15.0], // left hand inner
    [36.0, 10.0], // left hand outer *
    [19.0, 18.0], // left shoulder *
    [16.0, 29.0], // neck
    [10.0, 27.0], // head side
];

/// Template vertex of each landmark, in landmark order.
const BODY_LANDMARK_VERTICES: [usize; 8] = [0, 3, 4, 8, 10, 12, 16, 17];

const BODY_REFERENCE: f64 = 64.0;

#[derive(Clone, Debug)]
struct BodyOutline {
    /// Deformed vertices in the caller's grid, (row, col).
    vertices: Vec<[f64; 2]>,
}

impl BodyOutline {
    /// Draws deformations until the whole outline keeps a one-voxel clearance from the border.
    fn sample<R: Rng + ?Sized>(spec: &PhantomSpec, rng: &mut R) -> Self {
        loop {
            let body = Self::draw(spec, rng);
            let fits = body.vertices.iter().all(|p| {
                (0..2).all(|d| p[d] >= 1.0 && p[d] <= spec.extents[d] as f64 - 2.0)
            });
            if fits {
                return body;
            }
        }
    }

    fn draw<R: Rng + ?Sized>(spec: &PhantomSpec, rng: &mut R) -> Self {
        let amp = spec.amplitude;
        let arm = 2.0 * amp * unit_draw(rng);
        let leg = 2.0 * amp * unit_draw(rng);
        let height = 1.5 * amp * unit_draw(rng);
        let angle = 0.03 * amp * unit_draw(rng);
        let scale = 1.0 + 0.02 * amp * unit_draw(rng);
        let shift = [amp * unit_draw(rng), amp * unit_draw(rng)];

        let mut v: Vec<[f64; 2]> = BODY_TEMPLATE.to_vec();
        // Arms swing outwards: hands move away from the midline and slightly up.
        for (i, side) in [(4usize, 1.0), (5, 1.0), (15, -1.0), (16, -1.0)] {
            v[i][1] += side * arm;
            v[i][0] -= 0.4 * arm;
        }
        // Legs spread symmetrically at the feet.
        for (i, side) in [(8usize, 1.0), (9, 1.0), (11, -1.0), (12, -1.0)] {
            v[i][1] += side * leg;
        }
        // Lower body lengthens: feet move fully, crotch and hips partially.
        for i in [8usize, 9, 11, 12] {
            v[i][0] += height;
        }
        for i in [7usize, 10, 13] {
            v[i][0] += 0.5 * height;
        }
        let center = [BODY_REFERENCE / 2.0, BODY_REFERENCE / 2.0];
        let (s, c) = angle.sin_cos();
        let gain = [spec.extents[0] as f64 / BODY_REFERENCE, spec.extents[1] as f64 / BODY_REFERENCE];
        let vertices = v
            .iter()
            .map(|p| {
                let r = p[0] - center[0];
                let q = p[1] - center[1];
                let rr = scale * (c * r - s * q) + center[0] + shift[0];
                let qq = scale * (s * r + c * q) + center[1] + shift[1];
                [rr * gain[0], qq * gain[1]]
            })
            .collect();
        Self { vertices }
    }

    fn landmarks(&self) -> LandmarkSet {
        let coords = BODY_LANDMARK_VERTICES
            .iter()
            .flat_map(|&i| self.vertices[i])
            .collect();
        LandmarkSet::complete(2, coords).expect("finite template")
    }

    fn render(&self, extents: &[usize]) -> Vec<f32> {
        let (h, w) = (extents[0], extents[1]);
        let mut out = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let sd = signed_distance(&self.vertices, [r as f64, c as f64]);
                let depth = (-sd / 8.0).clamp(0.0, 1.0);
                out.push((sigmoid(-sd / 0.7) * (0.5 + 0.5 * depth)) as f32);
            }
        }
        out
    }
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if (a[0] > p[0]) != (b[0] > p[0]) {
            let t = (p[0] - a[0]) / (b[0] - a[0]);
            if p[1] < a[1] + t * (b[1] - a[1]) {
                inside = !inside;
            }
        }
    }
    inside
}

pub fn segment_distance(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * d[0] - p[0], a[1] + t * d[1] - p[1]];
    (q[0] * q[0] + q[1] * q[1]).sqrt()
}

/// Distance to the outline, negative inside.
fn signed_distance(poly: &[[f64; 2]], p: [f64; 2]) -> f64 {
    let n = poly.len();
    let d = (0..n)
        .map(|i| segment_distance(poly[i], poly[(i + 1) % n], p))
        .fold(f64::INFINITY, f64::min);
    if point_in_polygon(poly, p) {
        -d
    } else {
        d
    }
}

// ---------------------------------------------------------------- cardiac slice

const CARDIAC_REFERENCE: f64 = 128.0;

/// Analytic short-axis slice: LV blood pool disc, myocardial annulus around it, and an RV
/// crescent formed by a second disc minus the epicardial disc.
#[derive(Clone, Debug, PartialEq)]
pub struct CardiacGeometry {
    pub center: [f64; 2],
    pub endo_radius: f64,
    pub epi_radius: f64,
    pub rv_center: [f64; 2],
    pub rv_radius: f64,
}

impl CardiacGeometry {
    pub fn canonical(extents: &[usize]) -> Self {
        Self::from_params(extents, [0.0; 6])
    }

    /// `d` holds offsets of (center row, center col, endo radius, wall thickness,
    /// RV angle in radians, RV radius) on the 128-voxel reference grid.
    fn from_params(extents: &[usize], d: [f64; 6]) -> Self {
        let g = extents[0].min(extents[1]) as f64 / CARDIAC_REFERENCE;
        let center = [(62.0 + d[0]) * g, (56.0 + d[1]) * g];
        let endo = (15.0 + d[2]) * g;
        let epi = endo + (11.0 + d[3]) * g;
        let angle = d[4];
        let dist = 30.0 * g;
        let rv_center = [center[0] - dist * angle.sin(), center[1] + dist * angle.cos()];
        Self { center, endo_radius: endo, epi_radius: epi, rv_center, rv_radius: (24.0 + d[5]) * g }
    }

    /// Random geometry with offsets scaled by the spec amplitude.
    pub fn sample<R: Rng + ?Sized>(spec: &PhantomSpec, rng: &mut R) -> Self {
        let a = spec.amplitude;
        let d = [
            2.0 * a * unit_draw(rng),
            2.0 * a * unit_draw(rng),
            1.2 * a * unit_draw(rng),
            1.0 * a * unit_draw(rng),
            0.08 * a * unit_draw(rng),
            1.5 * a * unit_draw(rng),
        ];
        Self::from_params(&spec.extents, d)
    }

    pub fn label_at(&self, p: [f64; 2]) -> u8 {
        let dc = dist(p, self.center);
        if dc < self.endo_radius {
            labels::LV
        } else if dc < self.epi_radius {
            labels::MYO
        } else if dist(p, self.rv_center) < self.rv_radius {
            labels::RV
        } else {
            labels::BACKGROUND
        }
    }

    /// Label grid sampled at voxel centers, row-major.
    pub fn labels(&self, extents: &[usize]) -> Vec<u8> {
        let mut out = Vec::with_capacity(extents[0] * extents[1]);
        for r in 0..extents[0] {
            for c in 0..extents[1] {
                out.push(self.label_at([r as f64, c as f64]));
            }
        }
        out
    }

    fn render(&self, extents: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(extents[0] * extents[1]);
        for r in 0..extents[0] {
            for c in 0..extents[1] {
                let p = [r as f64, c as f64];
                let dc = dist(p, self.center);
                let endo = sigmoid((self.endo_radius - dc) / 0.6);
                let epi = sigmoid((self.epi_radius - dc) / 0.6);
                let rv = sigmoid((self.rv_radius - dist(p, self.rv_center)) / 0.6) * (1.0 - epi);
                out.push((0.9 * endo + 0.35 * (epi - endo) + 0.75 * rv) as f32);
            }
        }
        out
    }

    /// Intersections of the RV and epicardial circles, smaller row first.
    pub fn junctions(&self) -> ([f64; 2], [f64; 2]) {
        let (c0, r0, c1, r1) = (self.center, self.epi_radius, self.rv_center, self.rv_radius);
        let d = dist(c0, c1);
        let a = (r0 * r0 - r1 * r1 + d * d) / (2.0 * d);
        let h = (r0 * r0 - a * a).max(0.0).sqrt();
        let u = [(c1[0] - c0[0]) / d, (c1[1] - c0[1]) / d];
        let m = [c0[0] + a * u[0], c0[1] + a * u[1]];
        let p = [m[0] - h * u[1], m[1] + h * u[0]];
        let q = [m[0] + h * u[1], m[1] - h * u[0]];
        if p[0] < q[0] || (p[0] == q[0] && p[1] <= q[1]) {
            (p, q)
        } else {
            (q, p)
        }
    }

    /// The 33 landmarks in their canonical order: junctions A and B, LV center C, eight
    /// (endo, epi) ray pairs, then 14 RV free-wall points from A to B.
    pub fn landmarks(&self) -> LandmarkSet {
        let (a, b) = self.junctions();
        let c = self.center;
        let ua = unit([a[0] - c[0], a[1] - c[1]]);
        let ub = unit([b[0] - c[0], b[1] - c[1]]);
        let start = unit([ua[0] + ub[0], ua[1] + ub[1]]);
        let mut pts: Vec<[f64; 2]> = vec![a, b, c];
        for k in 0..8 {
            let u = rotate(start, k as f64 * std::f64::consts::FRAC_PI_4);
            pts.push([c[0] + self.endo_radius * u[0], c[1] + self.endo_radius * u[1]]);
            pts.push([c[0] + self.epi_radius * u[0], c[1] + self.epi_radius * u[1]]);
        }
        // Free wall: the RV arc that stays outside the epicardium, walked from A to B.
        let rc = self.rv_center;
        let phi_a = (a[1] - rc[1]).atan2(a[0] - rc[0]);
        let phi_b = (b[1] - rc[1]).atan2(b[0] - rc[0]);
        let tau = std::f64::consts::TAU;
        let ccw = (phi_b - phi_a).rem_euclid(tau);
        let mid_ccw = phi_a + 0.5 * ccw;
        let probe = [rc[0] + self.rv_radius * mid_ccw.cos(), rc[1] + self.rv_radius * mid_ccw.sin()];
        let sweep = if dist(probe, c) > self.epi_radius { ccw } else { ccw - tau };
        for i in 0..14 {
            let phi = phi_a + sweep * (i + 1) as f64 / 15.0;
            pts.push([rc[0] + self.rv_radius * phi.cos(), rc[1] + self.rv_radius * phi.sin()]);
        }
        LandmarkSet::complete(2, pts.concat()).expect("finite geometry")
    }
}

/// Rotation by `angle` from axis 0 toward axis 1.
pub fn rotate(u: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * u[0] - s * u[1], s * u[0] + c * u[1]]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn unit(v: [f64; 2]) -> [f64; 2] {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    [v[0] / n, v[1] / n]
}

// ---------------------------------------------------------------- skull cap

const SKULL_REFERENCE: f64 = 32.0;

/// Upper half of an ellipsoidal shell; axis 0 points from the vertex downwards.
#[derive(Clone, Debug)]
struct SkullCap {
    center: [f64; 3],
    radii: [f64; 3],
    thickness: f64,
}

impl SkullCap {
    fn sample<R: Rng + ?Sized>(spec: &PhantomSpec, rng: &mut R) -> Self {
        loop {
            let skull = Self::draw(spec, rng);
            let fits = (0..3).all(|d| {
                skull.center[d] - skull.radii[d] >= 1.0
                    && skull.center[d] + skull.radii[d] <= spec.extents[d] as f64 - 2.0
            });
            if fits {
                return skull;
            }
        }
    }

    fn draw<R: Rng + ?Sized>(spec: &PhantomSpec, rng: &mut R) -> Self {
        let a = spec.amplitude;
        let g: Vec<f64> = spec.extents.iter().map(|&e| e as f64 / SKULL_REFERENCE).collect();
        let center = [
            (17.0 + 0.8 * a * unit_draw(rng)) * g[0],
            (16.0 + 0.8 * a * unit_draw(rng)) * g[1],
            (16.0 + 0.8 * a * unit_draw(rng)) * g[2],
        ];
        let radii = [
            (11.0 + 0.8 * a * unit_draw(rng)) * g[0],
            (12.0 + 0.8 * a * unit_draw(rng)) * g[1],
            (10.0 + 0.8 * a * unit_draw(rng)) * g[2],
        ];
        let thickness = 2.0 * g.iter().cloned().fold(f64::INFINITY, f64::min);
        Self { center, radii, thickness }
    }

    fn landmarks(&self) -> LandmarkSet {
        let (c, r) = (self.center, self.radii);
        let pts = [
            [c[0] - r[0], c[1], c[2]],
            [c[0], c[1] - r[1], c[2]],
            [c[0], c[1] + r[1], c[2]],
            [c[0], c[1], c[2] - r[2]],
            [c[0], c[1], c[2] + r[2]],
            [c[0], c[1], c[2]],
        ];
        LandmarkSet::complete(3, pts.concat()).expect("finite geometry")
    }

    fn render(&self, extents: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(extents.iter().product());
        let mean_r = (self.radii[0] + self.radii[1] + self.radii[2]) / 3.0;
        for z in 0..extents[0] {
            for y in 0..extents[1] {
                for x in 0..extents[2] {
                    let p = [z as f64, y as f64, x as f64];
                    let q: f64 = (0..3)
                        .map(|d| ((p[d] - self.center[d]) / self.radii[d]).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    // Approximate radial distance from the outer surface.
                    let sd = (q - 1.0) * mean_r;
                    let outer = sigmoid(-sd / 0.6);
                    let inner = sigmoid(-(sd + self.thickness) / 0.6);
                    let base = sigmoid((self.center[0] + 0.5 - p[0]) / 0.6);
                    let v = base * ((outer - inner) + 0.3 * inner);
                    out.push(v as f32);
                }
            }
        }
        out
    }
}
