//! Sequential ray propagation.

use std::io::{self, Write};

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::materials::{GrinMedium, Material, WAVELENGTH_D_UM};
use crate::par::{self, Execution};
use crate::surfaces::{intersect, InteractionMode, Surface};
use crate::{OpticsError, Result, Vec3};

/// Fixed RK4 arc-length step inside GRIN media.
pub const GRIN_STEP_MM: f64 = 0.05;
pub const GRIN_MAX_STEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub direction: Vec3,
    pub wavelength_um: f64,
    pub field_id: usize,
    /// Normalized pupil coordinates the ray was aimed at.
    pub pupil: [f64; 2],
}

impl Ray {
    /// Builds a ray, normalizing `direction`.
    pub fn new(origin: Vec3, direction: Vec3, wavelength_um: f64) -> Self {
        Self {
            origin,
            direction: direction.normalize(),
            wavelength_um,
            field_id: 0,
            pupil: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Refraction {
    Refracted(Vec3),
    TotalInternalReflection,
}

fn check_unit(v: &Vec3, what: &str) -> Result<()> {
    if (v.norm() - 1.0).abs() > 1e-9 {
        return Err(OpticsError::Geometry(format!("{what} is not unit length (|v| = {})", v.norm())));
    }
    Ok(())
}

/// Vector Snell law. `normal` must oppose `dir`.
pub fn refract(dir: &Vec3, normal: &Vec3, n1: f64, n2: f64) -> Result<Refraction> {
    check_unit(dir, "direction")?;
    check_unit(normal, "normal")?;
    let cos_i = -dir.dot(normal);
    if cos_i <= 0.0 {
        return Err(OpticsError::Geometry("normal does not oppose the ray".into()));
    }
    let eta = n1 / n2;
    let k = 1.0 - eta * eta * (1.0 - cos_i * cos_i);
    if k < 0.0 {
        return Ok(Refraction::TotalInternalReflection);
    }
    let t = dir * eta + normal * (eta * cos_i - k.sqrt());
    Ok(Refraction::Refracted(t.normalize()))
}

/// Mirror reflection about `normal`.
pub fn reflect(dir: &Vec3, normal: &Vec3) -> Result<Vec3> {
    check_unit(dir, "direction")?;
    check_unit(normal, "normal")?;
    Ok((dir - normal * (2.0 * dir.dot(normal))).normalize())
}

/// Where a ray leaves a GRIN segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrinExit {
    pub point: Vec3,
    pub direction: Vec3,
    /// Index at the exit point.
    pub index: f64,
    pub steps: usize,
}

#[derive(Clone, Copy)]
struct GrinState {
    r: Vec3,
    /// Optical direction vector `n · dr/ds`.
    t: Vec3,
}

fn grin_rk4(grin: &GrinMedium, s: GrinState, h: f64) -> GrinState {
    let deriv = |st: &GrinState| {
        let (n, g) = grin.index_and_gradient(&st.r);
        (st.t / n, g)
    };
    let (k1r, k1t) = deriv(&s);
    let s2 = GrinState {
        r: s.r + k1r * (h / 2.0),
        t: s.t + k1t * (h / 2.0),
    };
    let (k2r, k2t) = deriv(&s2);
    let s3 = GrinState {
        r: s.r + k2r * (h / 2.0),
        t: s.t + k2t * (h / 2.0),
    };
    let (k3r, k3t) = deriv(&s3);
    let s4 = GrinState {
        r: s.r + k3r * h,
        t: s.t + k3t * h,
    };
    let (k4r, k4t) = deriv(&s4);
    GrinState {
        r: s.r + (k1r + k2r * 2.0 + k3r * 2.0 + k4r) * (h / 6.0),
        t: s.t + (k1t + k2t * 2.0 + k3t * 2.0 + k4t) * (h / 6.0),
    }
}

/// Integrates the ray equation `d/ds (n dr/ds) = ∇n` with fixed-step RK4
/// from `entry` until the ray crosses `exit`, then refines the crossing by
/// bisection on a shortened final step.
pub fn trace_grin_segment(grin: &GrinMedium, entry: &Vec3, dir: &Vec3, exit: &Surface, step_mm: f64) -> Result<GrinExit> {
    let side = |p: &Vec3| exit.side(p).unwrap_or(f64::NEG_INFINITY);
    let (n0, _) = grin.index_and_gradient(entry);
    let mut state = GrinState {
        r: *entry,
        t: dir.normalize() * n0,
    };
    if side(&state.r) > 0.0 {
        return Err(OpticsError::Geometry(format!("GRIN entry already beyond `{}`", exit.name)));
    }
    for step in 1..=GRIN_MAX_STEPS {
        let next = grin_rk4(grin, state, step_mm);
        if side(&next.r) >= 0.0 {
            let (mut lo, mut hi) = (0.0, step_mm);
            let mut out = next;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let trial = grin_rk4(grin, state, mid);
                let v = side(&trial.r);
                out = trial;
                if v.abs() <= 1e-13 || hi - lo < 1e-16 {
                    break;
                }
                if v < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let (n, _) = grin.index_and_gradient(&out.r);
            return Ok(GrinExit {
                point: out.r,
                direction: out.t.normalize(),
                index: n,
                steps: step,
            });
        }
        state = next;
    }
    Err(OpticsError::StepLimitExceeded(GRIN_MAX_STEPS))
}

/// Reference point and nominal direction used to launch rays into a system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaunchAxis {
    pub origin_mm: [f64; 3],
    pub direction: [f64; 3],
}

impl LaunchAxis {
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        let d = direction.normalize();
        Self {
            origin_mm: [origin.x, origin.y, origin.z],
            direction: [d.x, d.y, d.z],
        }
    }

    pub fn origin(&self) -> Vec3 {
        Vec3::from(self.origin_mm)
    }

    pub fn direction(&self) -> Vec3 {
        Vec3::from(self.direction).normalize()
    }
}

/// Ordered surfaces with the media between them. The last surface is the
/// evaluation (image) surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticalSystem {
    pub name: String,
    pub object_medium: Material,
    pub surfaces: Vec<Surface>,
    pub stop_index: usize,
    /// Diameter of the stop's clear aperture used for ray aiming.
    pub pupil_diameter_mm: f64,
    pub launch: LaunchAxis,
}

impl OpticalSystem {
    pub fn new(
        name: impl Into<String>,
        object_medium: Material,
        surfaces: Vec<Surface>,
        stop_index: usize,
        pupil_diameter_mm: f64,
        launch: LaunchAxis,
    ) -> Result<Self> {
        if surfaces.is_empty() || stop_index >= surfaces.len() {
            return Err(OpticsError::InvalidInput(format!(
                "stop index {stop_index} invalid for {} surfaces",
                surfaces.len()
            )));
        }
        if !(pupil_diameter_mm > 0.0) {
            return Err(OpticsError::InvalidInput("pupil diameter must be > 0".into()));
        }
        Ok(Self {
            name: name.into(),
            object_medium,
            surfaces,
            stop_index,
            pupil_diameter_mm,
            launch,
        })
    }

    pub fn image_surface(&self) -> &Surface {
        self.surfaces.last().expect("system has surfaces")
    }

    /// Medium a ray travels in when it reaches surface `i`.
    pub fn medium_before(&self, i: usize) -> &Material {
        let mut m = &self.object_medium;
        for s in &self.surfaces[..i] {
            if s.mode == InteractionMode::Refract {
                m = &s.material_after;
            }
        }
        m
    }

    /// The same surfaces traversed backwards, without the image surface.
    ///
    /// A ray started on the original image surface with its final direction
    /// negated retraces the original path.
    pub fn reversed(&self) -> Result<OpticalSystem> {
        let n = self.surfaces.len();
        if n < 2 {
            return Err(OpticsError::InvalidInput("need at least two surfaces to reverse".into()));
        }
        let surfaces: Vec<Surface> = (0..n - 1)
            .rev()
            .map(|i| {
                let mut s = self.surfaces[i].clone();
                if s.mode == InteractionMode::Refract {
                    s.material_after = self.medium_before(i).clone();
                }
                s
            })
            .collect();
        let stop = if self.stop_index < n - 1 { n - 2 - self.stop_index } else { 0 };
        let last = self.image_surface().pose;
        OpticalSystem::new(
            format!("{} (reversed)", self.name),
            self.medium_before(n - 1).clone(),
            surfaces,
            stop,
            self.pupil_diameter_mm,
            LaunchAxis::new(last.origin(), -self.launch.direction()),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    Refracted,
    Reflected,
    TirReflected,
    /// Refracted out of a TIR wall instead of being guided.
    Escaped,
    Vignetted,
    Missed,
}

impl Interaction {
    pub fn is_terminal(self) -> bool {
        matches!(self, Interaction::Escaped | Interaction::Vignetted | Interaction::Missed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Interaction::Refracted => "refracted",
            Interaction::Reflected => "reflected",
            Interaction::TirReflected => "tir_reflected",
            Interaction::Escaped => "escaped",
            Interaction::Vignetted => "vignetted",
            Interaction::Missed => "missed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceRecord {
    pub surface: usize,
    pub interaction: Interaction,
    pub point: Vec3,
    /// Unit normal opposing the incoming ray (zero when the surface was missed).
    pub normal: Vec3,
    pub direction_in: Vec3,
    pub direction_out: Vec3,
    pub n_in: f64,
    pub n_out: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayPath {
    pub ray: Ray,
    pub records: Vec<SurfaceRecord>,
    /// True when the ray reached the last requested surface unobstructed.
    pub complete: bool,
}

impl RayPath {
    /// Hit point on the final surface, when the path completed.
    pub fn terminal(&self) -> Option<Vec3> {
        self.complete.then(|| self.records.last().map(|r| r.point)).flatten()
    }

    pub fn final_direction(&self) -> Option<Vec3> {
        self.complete.then(|| self.records.last().map(|r| r.direction_out)).flatten()
    }

    pub fn count(&self, kind: Interaction) -> usize {
        self.records.iter().filter(|r| r.interaction == kind).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceOptions {
    pub ignore_apertures: bool,
    /// Stop after this surface index (inclusive).
    pub upto: Option<usize>,
    pub grin_step_mm: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            ignore_apertures: false,
            upto: None,
            grin_step_mm: GRIN_STEP_MM,
        }
    }
}

/// Traces one ray through every surface of `system`.
pub fn trace(system: &OpticalSystem, ray: &Ray) -> RayPath {
    trace_with(system, ray, &TraceOptions::default())
}

pub fn trace_with(system: &OpticalSystem, ray: &Ray, opts: &TraceOptions) -> RayPath {
    let last = opts.upto.unwrap_or(system.surfaces.len() - 1).min(system.surfaces.len() - 1);
    let mut records = Vec::with_capacity(last + 1);
    let mut pos = ray.origin;
    let mut dir = ray.direction;
    let mut medium = &system.object_medium;
    let lambda = ray.wavelength_um;

    let missed = |i: usize, pos: Vec3, dir: Vec3| SurfaceRecord {
        surface: i,
        interaction: Interaction::Missed,
        point: pos,
        normal: Vec3::zeros(),
        direction_in: dir,
        direction_out: dir,
        n_in: f64::NAN,
        n_out: f64::NAN,
    };

    for (i, surface) in system.surfaces.iter().enumerate().take(last + 1) {
        // propagate to the surface
        let (point, n_in) = match medium {
            Material::Grin(g) => match trace_grin_segment(g, &pos, &dir, surface, opts.grin_step_mm) {
                Ok(exit) => {
                    dir = exit.direction;
                    (exit.point, exit.index)
                }
                Err(_) => {
                    records.push(missed(i, pos, dir));
                    return RayPath { ray: *ray, records, complete: false };
                }
            },
            m => match (intersect(surface, &pos, &dir), m.index_at(lambda)) {
                (Ok(hit), Ok(n)) => {
                    if hit.vignetted && !opts.ignore_apertures {
                        records.push(SurfaceRecord {
                            interaction: Interaction::Vignetted,
                            normal: hit.normal,
                            n_in: n,
                            n_out: n,
                            ..missed(i, hit.point, dir)
                        });
                        return RayPath { ray: *ray, records, complete: false };
                    }
                    (hit.point, n)
                }
                _ => {
                    records.push(missed(i, pos, dir));
                    return RayPath { ray: *ray, records, complete: false };
                }
            },
        };

        // normal at the hit point, facing the incoming ray
        let local = surface.pose.to_local_point(&point);
        let normal = match surface.normal_at_local(local.x, local.y) {
            Ok(n) => {
                if n.dot(&dir) > 0.0 {
                    -n
                } else {
                    n
                }
            }
            Err(_) => {
                records.push(missed(i, point, dir));
                return RayPath { ray: *ray, records, complete: false };
            }
        };
        if medium.is_grin() && !opts.ignore_apertures && !surface.aperture.contains(local.x, local.y) {
            records.push(SurfaceRecord {
                interaction: Interaction::Vignetted,
                normal,
                n_in,
                n_out: n_in,
                ..missed(i, point, dir)
            });
            return RayPath { ray: *ray, records, complete: false };
        }

        let mut record = SurfaceRecord {
            surface: i,
            interaction: Interaction::Refracted,
            point,
            normal,
            direction_in: dir,
            direction_out: dir,
            n_in,
            n_out: n_in,
        };
        let outcome = match surface.mode {
            InteractionMode::Refract => {
                let n_out = surface.material_after.index_at_point(lambda, &point);
                match n_out.and_then(|n2| refract(&dir, &normal, n_in, n2).map(|r| (n2, r))) {
                    Ok((n2, Refraction::Refracted(t))) => {
                        record.direction_out = t;
                        record.n_out = n2;
                        medium = &surface.material_after;
                        Ok(())
                    }
                    _ => Err(Interaction::Missed),
                }
            }
            InteractionMode::Reflect | InteractionMode::HalfMirrorReflect => match reflect(&dir, &normal) {
                Ok(r) => {
                    record.interaction = Interaction::Reflected;
                    record.direction_out = r;
                    Ok(())
                }
                Err(_) => Err(Interaction::Missed),
            },
            InteractionMode::RefractOrTir => {
                let n_out = surface.material_after.index_at_point(lambda, &point);
                match n_out.and_then(|n2| refract(&dir, &normal, n_in, n2).map(|r| (n2, r))) {
                    Ok((_, Refraction::TotalInternalReflection)) => match reflect(&dir, &normal) {
                        Ok(r) => {
                            record.interaction = Interaction::TirReflected;
                            record.direction_out = r;
                            Ok(())
                        }
                        Err(_) => Err(Interaction::Missed),
                    },
                    Ok((n2, Refraction::Refracted(t))) => {
                        record.direction_out = t;
                        record.n_out = n2;
                        Err(Interaction::Escaped)
                    }
                    Err(_) => Err(Interaction::Missed),
                }
            }
        };
        if let Err(kind) = outcome {
            record.interaction = kind;
            records.push(record);
            return RayPath { ray: *ray, records, complete: false };
        }
        dir = record.direction_out;
        pos = point;
        records.push(record);
    }
    RayPath {
        ray: *ray,
        records,
        complete: true,
    }
}

/// Object specification for a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// Collimated beam travelling along `direction`.
    Collimated { direction: [f64; 3] },
    /// Rays diverging from a real point.
    Point { position_mm: [f64; 3] },
    /// Rays converging toward a virtual point beyond the launch plane.
    Converging { position_mm: [f64; 3] },
}

impl FieldSpec {
    /// Collimated field at angles from the global z axis.
    pub fn angle(x_deg: f64, y_deg: f64) -> Self {
        let d = Vec3::new(x_deg.to_radians().tan(), y_deg.to_radians().tan(), 1.0).normalize();
        FieldSpec::Collimated {
            direction: [d.x, d.y, d.z],
        }
    }

    pub fn point(p: Vec3) -> Self {
        FieldSpec::Point {
            position_mm: [p.x, p.y, p.z],
        }
    }

    /// Field at object vergence `diopters` measured at `reference` (positive:
    /// real object 1/V metres in front; negative: converging light).
    pub fn vergence(diopters: f64, x_deg: f64, y_deg: f64, reference: Vec3) -> Self {
        let d = Vec3::new(x_deg.to_radians().tan(), y_deg.to_radians().tan(), 1.0).normalize();
        if diopters.abs() < 1e-12 {
            return FieldSpec::Collimated {
                direction: [d.x, d.y, d.z],
            };
        }
        let dist = 1000.0 / diopters.abs();
        if diopters > 0.0 {
            let p = reference - d * dist;
            FieldSpec::Point {
                position_mm: [p.x, p.y, p.z],
            }
        } else {
            let p = reference + d * dist;
            FieldSpec::Converging {
                position_mm: [p.x, p.y, p.z],
            }
        }
    }
}

fn perpendicular_basis(d: &Vec3) -> (Vec3, Vec3) {
    let helper = if d.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e2 = d.cross(&helper).normalize();
    let e1 = e2.cross(d).normalize();
    (e1, e2)
}

fn launch_ray(system: &OpticalSystem, field: &FieldSpec, uv: [f64; 2], wavelength: f64) -> Ray {
    let origin = system.launch.origin();
    match field {
        FieldSpec::Collimated { direction } => {
            let d = Vec3::from(*direction).normalize();
            let (e1, e2) = perpendicular_basis(&d);
            Ray::new(origin + e1 * uv[0] + e2 * uv[1], d, wavelength)
        }
        FieldSpec::Point { position_mm } => {
            let p = Vec3::from(*position_mm);
            let d0 = (origin - p).normalize();
            let (e1, e2) = perpendicular_basis(&d0);
            Ray::new(p, d0 + e1 * uv[0] + e2 * uv[1], wavelength)
        }
        FieldSpec::Converging { position_mm } => {
            let p = Vec3::from(*position_mm);
            let d0 = (p - origin).normalize();
            let (e1, e2) = perpendicular_basis(&d0);
            let o = origin + e1 * uv[0] + e2 * uv[1];
            Ray::new(o, p - o, wavelength)
        }
    }
}

/// Launch parameters of the ray from a point source along `direction`, or
/// `None` for other field kinds or directions facing away from the launch.
pub fn point_launch_parameters(system: &OpticalSystem, field: &FieldSpec, direction: &Vec3) -> Option<[f64; 2]> {
    let FieldSpec::Point { position_mm } = field else { return None };
    let d0 = (system.launch.origin() - Vec3::from(*position_mm)).normalize();
    let c = direction.dot(&d0);
    if c <= 1e-6 {
        return None;
    }
    let (e1, e2) = perpendicular_basis(&d0);
    let w = direction / c - d0;
    Some([w.dot(&e1), w.dot(&e2)])
}

/// Solves launch parameters so rays land on chosen stop coordinates.
///
/// The chief ray is found by Newton iteration; other rays start from the
/// chief-ray Jacobian and refine with a chord iteration.
#[derive(Debug, Clone)]
pub struct Aimer<'a> {
    system: &'a OpticalSystem,
    field: FieldSpec,
    wavelength: f64,
    chief: [f64; 2],
    jac_inv: Matrix2<f64>,
}

const AIM_FD: f64 = 1e-5;

impl<'a> Aimer<'a> {
    pub fn new(system: &'a OpticalSystem, field: FieldSpec, wavelength: f64) -> Result<Self> {
        let aimer = Self::unsolved(system, field, wavelength);
        let uv = aimer.starting_point();
        aimer.solve(uv)
    }

    /// Like [`Aimer::new`] but starts the chief-ray search at `uv0`.
    pub fn with_start(system: &'a OpticalSystem, field: FieldSpec, wavelength: f64, uv0: [f64; 2]) -> Result<Self> {
        Self::unsolved(system, field, wavelength).solve(uv0)
    }

    fn unsolved(system: &'a OpticalSystem, field: FieldSpec, wavelength: f64) -> Self {
        Self {
            system,
            field,
            wavelength,
            chief: [0.0, 0.0],
            jac_inv: Matrix2::identity(),
        }
    }

    fn solve(mut self, start: [f64; 2]) -> Result<Self> {
        let system = self.system;
        let mut uv = start;
        for _ in 0..30 {
            let f = self.stop_xy(uv).ok_or_else(|| {
                OpticsError::Geometry(format!("chief ray cannot reach the stop of `{}`", system.name))
            })?;
            let j = self.jacobian(uv)?;
            let inv = j
                .try_inverse()
                .ok_or_else(|| OpticsError::Geometry("singular ray-aiming Jacobian".into()))?;
            self.jac_inv = inv;
            if f.norm() < 1e-10 {
                self.chief = uv;
                return Ok(self);
            }
            let step = inv * f;
            let mut t = 1.0;
            let mut next = [uv[0] - step[0], uv[1] - step[1]];
            for _ in 0..30 {
                if self.stop_xy(next).is_some_and(|g| g.norm() < f.norm()) {
                    break;
                }
                t *= 0.5;
                next = [uv[0] - t * step[0], uv[1] - t * step[1]];
            }
            uv = next;
        }
        let f = self.stop_xy(uv);
        if f.map_or(false, |f| f.norm() < 1e-7) {
            self.chief = uv;
            return Ok(self);
        }
        Err(OpticsError::Geometry("chief-ray aiming did not converge".into()))
    }

    /// Starting launch parameters for the chief-ray search: `[0, 0]`, then
    /// (for point sources) the ray parallel to the launch axis, then a
    /// spiral around those until some ray reaches the stop.
    fn starting_point(&self) -> [f64; 2] {
        let mut seeds = vec![[0.0, 0.0]];
        if let Some(uv) = point_launch_parameters(self.system, &self.field, &self.system.launch.direction()) {
            seeds.push(uv);
        }
        for s in &seeds {
            if self.stop_xy(*s).is_some() {
                return *s;
            }
        }
        let scale = match self.field {
            FieldSpec::Point { .. } => 0.02,
            _ => 0.25 * self.system.pupil_diameter_mm.max(1.0),
        };
        for s in seeds.iter().rev() {
            for k in 1..=12 {
                let r = scale * k as f64;
                for j in 0..12 {
                    let a = std::f64::consts::TAU * j as f64 / 12.0;
                    let uv = [s[0] + r * a.cos(), s[1] + r * a.sin()];
                    if self.stop_xy(uv).is_some() {
                        return uv;
                    }
                }
            }
        }
        [0.0, 0.0]
    }

    fn stop_xy(&self, uv: [f64; 2]) -> Option<nalgebra::Vector2<f64>> {
        let ray = launch_ray(self.system, &self.field, uv, self.wavelength);
        let opts = TraceOptions {
            ignore_apertures: true,
            upto: Some(self.system.stop_index),
            ..Default::default()
        };
        let path = trace_with(self.system, &ray, &opts);
        let p = path.terminal()?;
        let l = self.system.surfaces[self.system.stop_index].pose.to_local_point(&p);
        Some(nalgebra::Vector2::new(l.x, l.y))
    }

    fn jacobian(&self, uv: [f64; 2]) -> Result<Matrix2<f64>> {
        let mut j = Matrix2::zeros();
        for k in 0..2 {
            let mut a = uv;
            let mut b = uv;
            a[k] += AIM_FD;
            b[k] -= AIM_FD;
            let (fa, fb) = match (self.stop_xy(a), self.stop_xy(b)) {
                (Some(fa), Some(fb)) => (fa, fb),
                _ => return Err(OpticsError::Geometry("ray-aiming Jacobian unavailable".into())),
            };
            j.set_column(k, &((fa - fb) / (2.0 * AIM_FD)));
        }
        Ok(j)
    }

    pub fn chief_ray(&self) -> Ray {
        launch_ray(self.system, &self.field, self.chief, self.wavelength)
    }

    /// Chord iterations on the chief-ray Jacobian, then damped Newton with
    /// local Jacobians if the residual is still large.
    fn refine(&self, mut uv: [f64; 2], t: nalgebra::Vector2<f64>) -> [f64; 2] {
        let residual = |uv: [f64; 2]| self.stop_xy(uv).map(|f| f - t);
        let start = uv;
        for _ in 0..12 {
            let Some(r) = residual(uv) else { break };
            if r.norm() < 1e-10 {
                return uv;
            }
            let s = self.jac_inv * r;
            uv = [uv[0] - s[0], uv[1] - s[1]];
        }
        if residual(uv).is_some_and(|r| r.norm() < 1e-7) {
            return uv;
        }
        let mut uv = if residual(uv).is_some() { uv } else { start };
        for _ in 0..20 {
            let Some(r) = residual(uv) else { break };
            if r.norm() < 1e-10 {
                break;
            }
            let Some(inv) = self.jacobian(uv).ok().and_then(|j| j.try_inverse()) else { break };
            let s = inv * r;
            let mut k = 1.0;
            let mut next = [uv[0] - s[0], uv[1] - s[1]];
            while !residual(next).is_some_and(|g| g.norm() < r.norm()) && k > 1e-4 {
                k *= 0.5;
                next = [uv[0] - k * s[0], uv[1] - k * s[1]];
            }
            if k <= 1e-4 {
                break;
            }
            uv = next;
        }
        uv
    }

    /// Ray aimed at stop-local `(x, y)` in mm.
    pub fn aim(&self, target: [f64; 2], refine: bool) -> Ray {
        let t = nalgebra::Vector2::new(target[0], target[1]);
        let d = self.jac_inv * t;
        let mut uv = [self.chief[0] + d[0], self.chief[1] + d[1]];
        if refine {
            uv = self.refine(uv, t);
        }
        launch_ray(self.system, &self.field, uv, self.wavelength)
    }
}

/// Sampling pattern over the normalized pupil disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PupilGrid {
    /// One center ray plus `6k` rays on ring `k`.
    Hexapolar { rings: usize },
    /// `n × n` square lattice clipped to the unit disk.
    Square { n: usize },
}

impl PupilGrid {
    pub fn points(&self) -> Vec<[f64; 2]> {
        match *self {
            PupilGrid::Hexapolar { rings } => {
                let mut pts = vec![[0.0, 0.0]];
                for k in 1..=rings {
                    let r = k as f64 / rings as f64;
                    let m = 6 * k;
                    for j in 0..m {
                        let a = std::f64::consts::TAU * j as f64 / m as f64;
                        pts.push([r * a.cos(), r * a.sin()]);
                    }
                }
                pts
            }
            PupilGrid::Square { n } => {
                let mut pts = Vec::new();
                if n == 1 {
                    return vec![[0.0, 0.0]];
                }
                for i in 0..n {
                    for j in 0..n {
                        let x = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
                        let y = -1.0 + 2.0 * j as f64 / (n - 1) as f64;
                        if x * x + y * y <= 1.0 + 1e-12 {
                            pts.push([x, y]);
                        }
                    }
                }
                pts
            }
        }
    }

    /// Smallest hexapolar grid with at least `n` rays.
    pub fn hexapolar_with_at_least(n: usize) -> Self {
        let mut rings = 1;
        while 1 + 3 * rings * (rings + 1) < n {
            rings += 1;
        }
        PupilGrid::Hexapolar { rings }
    }
}

pub const MIN_BUNDLE_RAYS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub field: FieldSpec,
    pub paths: Vec<RayPath>,
    pub vignetted_fraction: f64,
}

impl Bundle {
    pub fn complete(&self) -> impl Iterator<Item = &RayPath> {
        self.paths.iter().filter(|p| p.complete)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleOptions {
    pub refine_aim: bool,
    pub trace: TraceOptions,
    pub exec: Execution,
    /// Fraction of the stop radius sampled.
    pub pupil_scale: f64,
}

impl Default for BundleOptions {
    fn default() -> Self {
        Self {
            refine_aim: true,
            trace: TraceOptions::default(),
            exec: Execution::Parallel,
            pupil_scale: 1.0,
        }
    }
}

/// Traces a bundle aimed over the stop. Requires at least
/// [`MIN_BUNDLE_RAYS`] rays.
pub fn trace_bundle(system: &OpticalSystem, field: &FieldSpec, grid: &PupilGrid, wavelength_um: f64) -> Result<Bundle> {
    let n = grid.points().len();
    if n < MIN_BUNDLE_RAYS {
        return Err(OpticsError::InsufficientRays {
            got: n,
            need: MIN_BUNDLE_RAYS,
        });
    }
    trace_bundle_with(system, field, grid, wavelength_um, &BundleOptions::default())
}

/// [`trace_bundle`] without the ray-count floor and with explicit options.
pub fn trace_bundle_with(
    system: &OpticalSystem,
    field: &FieldSpec,
    grid: &PupilGrid,
    wavelength_um: f64,
    opts: &BundleOptions,
) -> Result<Bundle> {
    let aimer = Aimer::new(system, *field, wavelength_um)?;
    Ok(trace_bundle_aimed(&aimer, grid, opts))
}

/// Traces a bundle with an already solved [`Aimer`].
pub fn trace_bundle_aimed(aimer: &Aimer, grid: &PupilGrid, opts: &BundleOptions) -> Bundle {
    let system = aimer.system;
    let radius = 0.5 * system.pupil_diameter_mm * opts.pupil_scale;
    let pts = grid.points();
    let paths = par::map(opts.exec, &pts, |p| {
        let mut ray = aimer.aim([p[0] * radius, p[1] * radius], opts.refine_aim);
        ray.pupil = *p;
        trace_with(system, &ray, &opts.trace)
    });
    let vignetted = paths.iter().filter(|p| !p.complete).count();
    Bundle {
        field: aimer.field,
        vignetted_fraction: vignetted as f64 / paths.len().max(1) as f64,
        paths,
    }
}

/// Traces the bundle at the design wavelength with a default hexapolar grid.
pub fn trace_default_bundle(system: &OpticalSystem, field: &FieldSpec) -> Result<Bundle> {
    trace_bundle(system, field, &PupilGrid::Hexapolar { rings: 8 }, WAVELENGTH_D_UM)
}

/// Writes one CSV row per surface record.
pub fn write_paths_csv<W: Write>(paths: &[RayPath], mut w: W) -> io::Result<()> {
    writeln!(w, "ray,field_id,px,py,surface,interaction,x_mm,y_mm,z_mm,dx,dy,dz")?;
    for (i, p) in paths.iter().enumerate() {
        for r in &p.records {
            writeln!(
                w,
                "{i},{},{:.6},{:.6},{},{},{:.9},{:.9},{:.9},{:.12},{:.12},{:.12}",
                p.ray.field_id,
                p.ray.pupil[0],
                p.ray.pupil[1],
                r.surface,
                r.interaction.as_str(),
                r.point.x,
                r.point.y,
                r.point.z,
                r.direction_out.x,
                r.direction_out.y,
                r.direction_out.z
            )?;
        }
    }
    Ok(())
}
