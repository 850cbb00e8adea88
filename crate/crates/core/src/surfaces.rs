//! Surface geometry: sag profiles, poses, apertures and ray intersection.

use nalgebra::{Isometry3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::materials::Material;
use crate::{OpticsError, Result, Vec3};

/// Maximum number of extended-polynomial terms (complete up to 4th order).
pub const MAX_POLY_TERMS: usize = 14;

/// `(x power, y power)` of each extended-polynomial term, in storage order:
/// X, Y, X², XY, Y², X³, X²Y, XY², Y³, X⁴, X³Y, X²Y², XY³, Y⁴.
pub const POLY_EXPONENTS: [(i32, i32); MAX_POLY_TERMS] = [
    (1, 0),
    (0, 1),
    (2, 0),
    (1, 1),
    (0, 2),
    (3, 0),
    (2, 1),
    (1, 2),
    (0, 3),
    (4, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 4),
];

/// Column labels matching [`POLY_EXPONENTS`].
pub const POLY_LABELS: [&str; MAX_POLY_TERMS] = [
    "X1", "Y1", "X2", "X1Y1", "Y2", "X3", "X2Y1", "X1Y2", "Y3", "X4", "X3Y1", "X2Y2", "X1Y3", "Y4",
];

/// Conic base plus polynomial terms in normalized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtendedPolynomial {
    pub curvature_per_mm: f64,
    pub conic: f64,
    pub norm_radius_mm: f64,
    /// Coefficients in mm, ordered as [`POLY_EXPONENTS`].
    pub coeffs_mm: Vec<f64>,
}

impl ExtendedPolynomial {
    pub fn new(curvature: f64, conic: f64, norm_radius: f64, coeffs: Vec<f64>) -> Result<Self> {
        let p = Self {
            curvature_per_mm: curvature,
            conic,
            norm_radius_mm: norm_radius,
            coeffs_mm: coeffs,
        };
        p.validate()?;
        Ok(p)
    }

    /// Builds the surface from a base *radius* in mm (0 or infinite means flat).
    ///
    /// Tabulated freeform prescriptions list the base as a radius even where
    /// the column is labelled as curvature; this is the one place that
    /// interpretation lives.
    pub fn from_base_radius(radius: f64, conic: f64, norm_radius: f64, coeffs: Vec<f64>) -> Result<Self> {
        let c = if radius == 0.0 || !radius.is_finite() {
            0.0
        } else {
            1.0 / radius
        };
        Self::new(c, conic, norm_radius, coeffs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coeffs_mm.len() > MAX_POLY_TERMS {
            return Err(OpticsError::InvalidInput(format!(
                "extended polynomial has {} terms, at most {MAX_POLY_TERMS} supported",
                self.coeffs_mm.len()
            )));
        }
        if !(self.norm_radius_mm > 0.0) {
            return Err(OpticsError::InvalidInput("normalization radius must be > 0".into()));
        }
        Ok(())
    }

    fn poly(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let r = self.norm_radius_mm;
        let (u, v) = (x / r, y / r);
        let (mut z, mut gu, mut gv) = (0.0, 0.0, 0.0);
        for (a, &(p, q)) in self.coeffs_mm.iter().zip(POLY_EXPONENTS.iter()) {
            if *a == 0.0 {
                continue;
            }
            z += a * u.powi(p) * v.powi(q);
            if p > 0 {
                gu += a * f64::from(p) * u.powi(p - 1) * v.powi(q);
            }
            if q > 0 {
                gv += a * f64::from(q) * u.powi(p) * v.powi(q - 1);
            }
        }
        (z, gu / r, gv / r)
    }
}

/// Geometry of one optical interface, in its local frame (vertex at origin,
/// axis along local +z).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceProfile {
    Plane,
    Standard {
        curvature_per_mm: f64,
        conic: f64,
    },
    Biconic {
        curvature_x_per_mm: f64,
        curvature_y_per_mm: f64,
        conic_x: f64,
        conic_y: f64,
    },
    /// Power in y only.
    CylinderY {
        curvature_y_per_mm: f64,
    },
    ExtendedPolynomial(ExtendedPolynomial),
}

#[inline]
fn conic_sag(c: f64, k: f64, r2: f64, x: f64, y: f64) -> Result<(f64, f64)> {
    // returns (sag, sqrt term)
    let arg = 1.0 - (1.0 + k) * c * c * r2;
    if arg < 0.0 {
        return Err(OpticsError::Domain { x, y, arg });
    }
    let s = arg.sqrt();
    Ok((c * r2 / (1.0 + s), s))
}

impl SurfaceProfile {
    pub fn standard_radius(radius: f64, conic: f64) -> Self {
        let c = if radius.is_finite() && radius != 0.0 { 1.0 / radius } else { 0.0 };
        SurfaceProfile::Standard {
            curvature_per_mm: c,
            conic,
        }
    }

    /// Sag z(x, y) in mm.
    pub fn sag(&self, x: f64, y: f64) -> Result<f64> {
        match self {
            SurfaceProfile::Plane => Ok(0.0),
            SurfaceProfile::Standard { curvature_per_mm: c, conic: k } => {
                conic_sag(*c, *k, x * x + y * y, x, y).map(|v| v.0)
            }
            SurfaceProfile::Biconic {
                curvature_x_per_mm: cx,
                curvature_y_per_mm: cy,
                conic_x: kx,
                conic_y: ky,
            } => {
                let arg = 1.0 - (1.0 + kx) * cx * cx * x * x - (1.0 + ky) * cy * cy * y * y;
                if arg < 0.0 {
                    return Err(OpticsError::Domain { x, y, arg });
                }
                Ok((cx * x * x + cy * y * y) / (1.0 + arg.sqrt()))
            }
            SurfaceProfile::CylinderY { curvature_y_per_mm: c } => conic_sag(*c, 0.0, y * y, x, y).map(|v| v.0),
            SurfaceProfile::ExtendedPolynomial(p) => {
                let (base, _) = conic_sag(p.curvature_per_mm, p.conic, x * x + y * y, x, y)?;
                Ok(base + p.poly(x, y).0)
            }
        }
    }

    /// Sag and its partial derivatives `(z, dz/dx, dz/dy)`.
    ///
    /// The gradient requires the conic root argument to be strictly positive.
    pub fn sag_gradient(&self, x: f64, y: f64) -> Result<(f64, f64, f64)> {
        match self {
            SurfaceProfile::Plane => Ok((0.0, 0.0, 0.0)),
            SurfaceProfile::Standard { curvature_per_mm: c, conic: k } => {
                let (z, s) = conic_sag(*c, *k, x * x + y * y, x, y)?;
                if s == 0.0 {
                    return Err(OpticsError::Domain { x, y, arg: 0.0 });
                }
                Ok((z, c * x / s, c * y / s))
            }
            SurfaceProfile::Biconic {
                curvature_x_per_mm: cx,
                curvature_y_per_mm: cy,
                conic_x: kx,
                conic_y: ky,
            } => {
                let arg = 1.0 - (1.0 + kx) * cx * cx * x * x - (1.0 + ky) * cy * cy * y * y;
                if arg <= 0.0 {
                    return Err(OpticsError::Domain { x, y, arg });
                }
                let s = arg.sqrt();
                let den = 1.0 + s;
                let num = cx * x * x + cy * y * y;
                let dsx = -(1.0 + kx) * cx * cx * x / s;
                let dsy = -(1.0 + ky) * cy * cy * y / s;
                let gx = (2.0 * cx * x * den - num * dsx) / (den * den);
                let gy = (2.0 * cy * y * den - num * dsy) / (den * den);
                Ok((num / den, gx, gy))
            }
            SurfaceProfile::CylinderY { curvature_y_per_mm: c } => {
                let (z, s) = conic_sag(*c, 0.0, y * y, x, y)?;
                if s == 0.0 {
                    return Err(OpticsError::Domain { x, y, arg: 0.0 });
                }
                Ok((z, 0.0, c * y / s))
            }
            SurfaceProfile::ExtendedPolynomial(p) => {
                let c = p.curvature_per_mm;
                let (z, s) = conic_sag(c, p.conic, x * x + y * y, x, y)?;
                if s == 0.0 {
                    return Err(OpticsError::Domain { x, y, arg: 0.0 });
                }
                let (pz, px, py) = p.poly(x, y);
                Ok((z + pz, c * x / s + px, c * y / s + py))
            }
        }
    }

    /// Paraxial curvatures `(c_x, c_y)` at the vertex.
    pub fn vertex_curvatures(&self) -> (f64, f64) {
        match self {
            SurfaceProfile::Plane => (0.0, 0.0),
            SurfaceProfile::Standard { curvature_per_mm: c, .. } => (*c, *c),
            SurfaceProfile::Biconic {
                curvature_x_per_mm,
                curvature_y_per_mm,
                ..
            } => (*curvature_x_per_mm, *curvature_y_per_mm),
            SurfaceProfile::CylinderY { curvature_y_per_mm } => (0.0, *curvature_y_per_mm),
            SurfaceProfile::ExtendedPolynomial(p) => {
                let r2 = p.norm_radius_mm * p.norm_radius_mm;
                let a = |i: usize| p.coeffs_mm.get(i).copied().unwrap_or(0.0);
                (p.curvature_per_mm + 2.0 * a(2) / r2, p.curvature_per_mm + 2.0 * a(4) / r2)
            }
        }
    }
}

/// Rigid placement of a surface's local frame in the global frame.
///
/// Tilts are applied as `R = Rx(tilt_x) · Ry(tilt_y) · Rz(tilt_z)`, then the
/// decenter translation: `p_global = R · p_local + decenter`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfacePose {
    pub decenter_mm: [f64; 3],
    pub tilt_deg: [f64; 3],
}

impl SurfacePose {
    pub fn at_z(z: f64) -> Self {
        Self {
            decenter_mm: [0.0, 0.0, z],
            tilt_deg: [0.0; 3],
        }
    }

    pub fn new(decenter: Vec3, tilt_deg: [f64; 3]) -> Self {
        Self {
            decenter_mm: [decenter.x, decenter.y, decenter.z],
            tilt_deg,
        }
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        let [tx, ty, tz] = self.tilt_deg;
        Rotation3::from_axis_angle(&Vector3::x_axis(), tx.to_radians())
            * Rotation3::from_axis_angle(&Vector3::y_axis(), ty.to_radians())
            * Rotation3::from_axis_angle(&Vector3::z_axis(), tz.to_radians())
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        let [x, y, z] = self.decenter_mm;
        Isometry3::from_parts(
            Translation3::new(x, y, z),
            UnitQuaternion::from_rotation_matrix(&self.rotation()),
        )
    }

    pub fn origin(&self) -> Vec3 {
        Vec3::from(self.decenter_mm)
    }

    pub fn to_global_point(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.origin()
    }

    pub fn to_local_point(&self, p: &Vec3) -> Vec3 {
        self.rotation().inverse() * (p - self.origin())
    }

    pub fn to_global_dir(&self, d: &Vec3) -> Vec3 {
        self.rotation() * d
    }

    pub fn to_local_dir(&self, d: &Vec3) -> Vec3 {
        self.rotation().inverse() * d
    }

    /// Local +z axis expressed in the global frame.
    pub fn axis(&self) -> Vec3 {
        self.rotation() * Vec3::z()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApertureShape {
    Rectangular,
    Elliptical,
}

/// Clear aperture in the surface's local x/y, optionally offset from the vertex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aperture {
    pub shape: ApertureShape,
    pub half_x_mm: f64,
    pub half_y_mm: f64,
    #[serde(default)]
    pub center_mm: [f64; 2],
}

impl Aperture {
    pub fn circular(radius: f64) -> Self {
        Self {
            shape: ApertureShape::Elliptical,
            half_x_mm: radius,
            half_y_mm: radius,
            center_mm: [0.0, 0.0],
        }
    }

    pub fn rectangular(half_x: f64, half_y: f64) -> Self {
        Self {
            shape: ApertureShape::Rectangular,
            half_x_mm: half_x,
            half_y_mm: half_y,
            center_mm: [0.0, 0.0],
        }
    }

    /// Large enough never to clip anything in a desk-scale system.
    pub fn unbounded() -> Self {
        Self::rectangular(1.0e4, 1.0e4)
    }

    pub fn with_center(mut self, cx: f64, cy: f64) -> Self {
        self.center_mm = [cx, cy];
        self
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let u = (x - self.center_mm[0]) / self.half_x_mm;
        let v = (y - self.center_mm[1]) / self.half_y_mm;
        match self.shape {
            ApertureShape::Rectangular => u.abs() <= 1.0 && v.abs() <= 1.0,
            ApertureShape::Elliptical => u * u + v * v <= 1.0,
        }
    }
}

/// How a ray interacts with the surface during sequential tracing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    Refract,
    Reflect,
    /// Total internal reflection when beyond the critical angle, escape otherwise.
    RefractOrTir,
    /// Partially reflecting coating; the display path always takes the reflection.
    HalfMirrorReflect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Surface {
    pub name: String,
    pub profile: SurfaceProfile,
    pub pose: SurfacePose,
    pub mode: InteractionMode,
    pub aperture: Aperture,
    /// Medium on the far side of the interface. For reflecting modes the ray
    /// stays in its current medium and this is only the outside medium.
    pub material_after: Material,
}

impl Surface {
    pub fn new(
        name: impl Into<String>,
        profile: SurfaceProfile,
        pose: SurfacePose,
        mode: InteractionMode,
        aperture: Aperture,
        material_after: Material,
    ) -> Result<Self> {
        if !(aperture.half_x_mm > 0.0 && aperture.half_y_mm > 0.0) {
            return Err(OpticsError::InvalidInput("aperture half-widths must be > 0".into()));
        }
        if let SurfaceProfile::ExtendedPolynomial(p) = &profile {
            p.validate()?;
        }
        Ok(Self {
            name: name.into(),
            profile,
            pose,
            mode,
            aperture,
            material_after,
        })
    }

    /// Signed distance-like function: negative before the surface (local z
    /// below the sag), positive after.
    pub fn side(&self, p: &Vec3) -> Result<f64> {
        let l = self.pose.to_local_point(p);
        Ok(l.z - self.profile.sag(l.x, l.y)?)
    }

    /// Unit normal at a local (x, y), along local `(-dz/dx, -dz/dy, 1)`, in
    /// global coordinates.
    pub fn normal_at_local(&self, x: f64, y: f64) -> Result<Vec3> {
        let (_, gx, gy) = self.profile.sag_gradient(x, y)?;
        Ok(self.pose.to_global_dir(&Vec3::new(-gx, -gy, 1.0).normalize()))
    }
}

/// Result of intersecting a ray with a surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub point: Vec3,
    /// Unit normal facing the incoming ray (`normal · dir < 0`).
    pub normal: Vec3,
    /// Local-frame hit point.
    pub local: Vec3,
    /// Path length from the ray origin.
    pub distance: f64,
    pub vignetted: bool,
}

const NEWTON_MAX_ITERS: usize = 50;
const ROOT_TOL: f64 = 1e-12;

/// Intersects the ray `origin + t·dir` (dir unit-length) with `surface`.
///
/// Newton's method on `t`, started from the local `z = 0` plane crossing,
/// with a bracketed bisection fallback when Newton fails to converge.
pub fn intersect(surface: &Surface, origin: &Vec3, dir: &Vec3) -> Result<Hit> {
    let iso = surface.pose.isometry();
    let o = iso.inverse_transform_point(&Point3::from(*origin)).coords;
    let d = iso.inverse_transform_vector(dir);
    let profile = &surface.profile;

    let f = |t: f64| -> Result<(f64, f64)> {
        let p = o + d * t;
        let (s, gx, gy) = profile.sag_gradient(p.x, p.y)?;
        Ok((p.z - s, d.z - gx * d.x - gy * d.y))
    };

    let t0 = if d.z.abs() > 1e-12 { -o.z / d.z } else { 0.0 };
    let mut t = newton(&f, t0).or_else(|| bisect_forward(&f, t0)).ok_or_else(|| {
        OpticsError::NoIntersection(surface.name.clone())
    })?;
    if t < -1e-9 {
        // Newton locked onto a root behind the ray; look ahead instead.
        t = bisect_forward(&f, t0).filter(|t| *t >= -1e-9).ok_or_else(|| {
            OpticsError::NoIntersection(surface.name.clone())
        })?;
    }

    let local = o + d * t;
    let (_, gx, gy) = profile
        .sag_gradient(local.x, local.y)
        .map_err(|_| OpticsError::NoIntersection(surface.name.clone()))?;
    let mut n_local = Vec3::new(-gx, -gy, 1.0).normalize();
    if n_local.dot(&d) > 0.0 {
        n_local = -n_local;
    }
    Ok(Hit {
        point: origin + dir * t,
        normal: iso.rotation * n_local,
        local,
        distance: t,
        vignetted: !surface.aperture.contains(local.x, local.y),
    })
}

fn newton(f: &impl Fn(f64) -> Result<(f64, f64)>, t0: f64) -> Option<f64> {
    let mut t = t0;
    let mut last_good = t0;
    let mut step_scale = 1.0;
    for _ in 0..NEWTON_MAX_ITERS {
        match f(t) {
            Ok((val, deriv)) => {
                if !val.is_finite() || !deriv.is_finite() {
                    return None;
                }
                if val.abs() <= ROOT_TOL {
                    return Some(t);
                }
                if deriv.abs() < 1e-14 {
                    return None;
                }
                last_good = t;
                let step = val / deriv;
                t -= step * step_scale;
                if step.abs() < 1e-15 {
                    return (val.abs() <= 1e-9).then_some(t);
                }
            }
            Err(_) => {
                // left the sag domain: retreat halfway toward the last valid point
                step_scale *= 0.5;
                t = 0.5 * (t + last_good);
            }
        }
    }
    None
}

fn bisect_forward(f: &impl Fn(f64) -> Result<(f64, f64)>, t0: f64) -> Option<f64> {
    let span = t0.abs().max(1.0) * 4.0;
    let n = 4000;
    let dt = span / n as f64;
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=n {
        let t = -1e-9 + dt * i as f64;
        let Ok((v, _)) = f(t) else {
            prev = None;
            continue;
        };
        if let Some((tp, vp)) = prev {
            if vp.signum() != v.signum() {
                let (mut lo, mut hi, mut vlo) = (tp, t, vp);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let Ok((vm, _)) = f(mid) else { return None };
                    if vm.abs() <= ROOT_TOL || hi - lo < 1e-15 {
                        return Some(mid);
                    }
                    if vm.signum() == vlo.signum() {
                        lo = mid;
                        vlo = vm;
                    } else {
                        hi = mid;
                    }
                }
                return Some(0.5 * (lo + hi));
            }
        }
        prev = Some((t, v));
    }
    None
}
