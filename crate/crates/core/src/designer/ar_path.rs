//! Builder for the folded display path and its ideal-eye evaluation.
//!
//! Global frame: the eye pupil is at the origin and display light reaches it
//! travelling along +z; y points up. The prescription lens occupies
//! `z ∈ [-d_e - t_l, -d_e]`. Every tilt is a rotation about x, with the
//! design angle θ measured from +y to the surface normal, so a surface's
//! local z axis is `(0, cos θ, sin θ)`.
//!
//! The path is laid out by unfolding the center chief ray backwards from
//! the pupil: exit through `S_r`, combiner, `S_r` and `S_f` TIR bounces, the
//! guide, waveguide entry, cylinder, prism, beam-shaping lens and display.
//! Each vertex lies on that ray at the tabulated distance from the previous.

use std::sync::OnceLock;

use serde::Serialize;

use super::lens::{direct_lens_profiles, PrescriptionLensDesign};
use super::constraints::{min_thickness_between, MIN_EDGE_MM};
use super::params::DesignParams;
use crate::eye::{build_eye, mm_per_degree, Prescription};
use crate::materials::{Material, WAVELENGTH_D_UM};
use crate::surfaces::{intersect, Aperture, InteractionMode, Surface, SurfacePose, SurfaceProfile};
use crate::tracer::{
    point_launch_parameters, reflect, refract, trace_bundle_aimed, trace_bundle_with, trace_with, Aimer, Bundle,
    BundleOptions, FieldSpec, LaunchAxis, OpticalSystem, PupilGrid, Ray, RayPath, Refraction, TraceOptions,
};
use crate::{OpticsError, Result, Vec3};

pub const S_BSL_FRONT: usize = 0;
pub const S_BSL_BACK: usize = 1;
pub const S_PRISM: usize = 2;
pub const S_CYLINDER: usize = 3;
pub const S_WAVEGUIDE: usize = 4;
pub const S_TIR_FRONT: usize = 5;
pub const S_TIR_REAR: usize = 6;
pub const S_FREEFORM: usize = 7;
pub const S_EXIT: usize = 8;
pub const S_PUPIL: usize = 9;

/// Margin around the display size for apertures used before the footprint is known.
pub const APERTURE_MARGIN_MM: f64 = 1.5;
/// Half-width of the prescription lens in x.
pub const LENS_HALF_WIDTH_MM: f64 = 30.0;
const LENS_TOP_MM: f64 = 60.0;
pub const EYE_PUPIL_DIAMETER_MM: f64 = 4.0;
const AIM_REFERENCE_MM: f64 = 100.0;
pub const EYE_RELIEF_RANGE_MM: (f64, f64) = (12.0, 20.0);

/// Tilt about x for a surface whose normal makes `theta_deg` with +y.
pub fn tilt_pose(origin: Vec3, theta_deg: f64) -> SurfacePose {
    SurfacePose::new(origin, [theta_deg - 90.0, 0.0, 0.0])
}

/// Local z axis of a tilted surface.
pub fn tilt_axis(theta_deg: f64) -> Vec3 {
    let t = theta_deg.to_radians();
    Vec3::new(0.0, t.cos(), t.sin())
}

/// A built display path with its context.
#[derive(Debug, Clone, PartialEq)]
pub struct ArSystem {
    /// Parameters with the guide length resolved.
    pub params: DesignParams,
    pub lens: PrescriptionLensDesign,
    pub prescription: Prescription,
    /// Beam-shaping lens front through the eye pupil.
    pub system: OpticalSystem,
    /// Pupil back to the display plane, for field mapping.
    pub reverse: OpticalSystem,
    pub display_pose: SurfacePose,
    /// Beam footprint of the full display into the centered eye pupil on
    /// the five display-module surfaces. Edge thicknesses are judged here.
    pub footprint: [Aperture; 5],
    pub warnings: Vec<String>,
}

fn n_at(m: &Material) -> Result<f64> {
    m.index_at(WAVELENGTH_D_UM)
}

fn bend(dir: &Vec3, axis: &Vec3, n1: f64, n2: f64) -> Result<Vec3> {
    let normal = if dir.dot(axis) > 0.0 { -axis } else { *axis };
    match refract(dir, &normal, n1, n2)? {
        Refraction::Refracted(t) => Ok(t),
        Refraction::TotalInternalReflection => Err(OpticsError::Geometry("chief ray cannot refract through the path".into())),
    }
}

/// Unfolding state of the center chief ray up to the second TIR bounce.
struct Fold {
    /// Point on `S_f` (second bounce, traced backwards).
    p2: Vec3,
    /// Direction after that bounce, heading toward the waveguide entry.
    d3: Vec3,
    /// Path length from `p2` to `S_r` along `d3`.
    room: f64,
}

fn tir_bounce(surface: &Surface, origin: &Vec3, dir: &Vec3, n: f64) -> Result<(Vec3, Vec3)> {
    let hit = intersect(surface, origin, dir)?;
    match refract(dir, &hit.normal, n, 1.0)? {
        Refraction::TotalInternalReflection => Ok((hit.point, reflect(dir, &hit.normal)?)),
        Refraction::Refracted(_) => Err(OpticsError::Geometry(format!(
            "center chief ray is not totally reflected at `{}`",
            surface.name
        ))),
    }
}

fn plane_surface(name: &str, pose: SurfacePose, after: Material, ap: Aperture) -> Result<Surface> {
    Surface::new(name, SurfaceProfile::Plane, pose, InteractionMode::Refract, ap, after)
}

fn curvature(r: f64) -> f64 {
    if r == 0.0 || !r.is_finite() {
        0.0
    } else {
        1.0 / r
    }
}

/// Local y of the global point `(0, y, z)` in `pose`.
fn local_y(pose: &SurfacePose, y: f64, z: f64) -> f64 {
    pose.to_local_point(&Vec3::new(0.0, y, z)).y
}

fn y_range_aperture(half_x: f64, y0: f64, y1: f64) -> Aperture {
    let (lo, hi) = (y0.min(y1), y0.max(y1));
    Aperture::rectangular(half_x, 0.5 * (hi - lo).max(1e-6)).with_center(0.0, 0.5 * (lo + hi))
}

/// Builds the display path for `rx`, using closed-form lens profiles.
pub fn build_ar_system(params: &DesignParams, rx: &Prescription) -> Result<ArSystem> {
    let lens = direct_lens_profiles(rx, params.lens_thickness_mm, &params.n3)?;
    build_ar_system_with_lens(params, &lens, rx)
}

pub fn build_ar_system_with_lens(params: &DesignParams, lens: &PrescriptionLensDesign, rx: &Prescription) -> Result<ArSystem> {
    params.display.validate()?;
    let mut warnings = Vec::new();
    let (lo, hi) = EYE_RELIEF_RANGE_MM;
    if !(lo..=hi).contains(&params.eye_relief_mm) {
        warnings.push(format!(
            "eye relief {} mm outside the designed {lo}-{hi} mm range",
            params.eye_relief_mm
        ));
    }
    let mut p = params.clone();
    if p.symmetric_magnification {
        p.theta_l_deg = p.theta_d_deg;
    }
    let mut lens = lens.clone();
    lens.thickness_mm = p.lens_thickness_mm;
    lens.material = p.n3.clone();
    let n3 = n_at(&p.n3)?;

    let t_l = p.lens_thickness_mm;
    let rear_z = -p.eye_relief_mm;
    let front_z = rear_z - t_l;
    let z_m = rear_z - p.mirror_depth_fraction * t_l;
    let mirror_pose = tilt_pose(Vec3::new(0.0, 0.0, z_m), p.theta_f_deg);

    let tir_front = Surface::new(
        "S_f",
        lens.front_profile(),
        lens.front_pose(rear_z),
        InteractionMode::RefractOrTir,
        Aperture::unbounded(),
        Material::air(),
    )?;
    let tir_rear = Surface::new(
        "S_r",
        lens.rear_profile(),
        lens.rear_pose(rear_z),
        InteractionMode::RefractOrTir,
        Aperture::unbounded(),
        Material::air(),
    )?;
    let mirror = Surface::new(
        "S_free",
        SurfaceProfile::ExtendedPolynomial(p.freeform.clone()),
        mirror_pose,
        InteractionMode::HalfMirrorReflect,
        Aperture::unbounded(),
        p.n3.clone(),
    )?;

    // unfold the center chief ray backwards from the pupil
    let fold = {
        let start = Vec3::zeros();
        let d0 = -Vec3::z();
        let h = intersect(&tir_rear, &start, &d0)?;
        let d = match refract(&d0, &h.normal, 1.0, n3)? {
            Refraction::Refracted(t) => t,
            Refraction::TotalInternalReflection => unreachable!("air to glass never reflects totally"),
        };
        let hm = intersect(&mirror, &h.point, &d)?;
        let d1 = reflect(&d, &hm.normal)?;
        let (p1, d2) = tir_bounce(&tir_rear, &hm.point, &d1, n3)?;
        let (p2, d3) = tir_bounce(&tir_front, &p1, &d2, n3)?;
        let room = intersect(&tir_rear, &p2, &d3).map(|h| h.distance).unwrap_or(0.0);
        Fold { p2, d3, room }
    };

    let mut guide = match p.guide_length_mm {
        Some(g) => g,
        None => 0.5 * fold.room,
    };
    let solve_focus = p.guide_length_mm.is_none();
    let tan_f = p.theta_f_deg.to_radians().tan();
    let y_cut_front = -(front_z - z_m) * tan_f;
    let y_cut_rear = -(rear_z - z_m) * tan_f;

    let assemble = |guide: f64, clear: Option<&[Aperture; 5]>| -> Result<(OpticalSystem, SurfacePose)> {
        let n1 = n_at(&p.n1)?;
        let n2 = n_at(&p.n2)?;
        let e = fold.p2 + fold.d3 * guide;
        let d4 = bend(&fold.d3, &tilt_axis(p.theta_w_deg), n3, n2)?;
        let c = e + d4 * p.t_w_mm;
        let d5 = bend(&d4, &tilt_axis(p.theta_c_deg), n2, n1)?;
        let pr = c + d5 * p.t_c_mm;
        let d6 = bend(&d5, &tilt_axis(p.theta_p_deg), n1, 1.0)?;
        let b2 = pr + d6 * p.d_p_mm;
        let axis_l = tilt_axis(p.theta_l_deg);
        let d7 = bend(&d6, &axis_l, 1.0, n1)?;
        // the beam-shaping lens is coaxial: its thickness runs along its own axis
        let b1 = b2 + axis_l * (p.t_bsl_mm * d7.dot(&axis_l).signum());
        let front = Surface::new(
            "bsl_front",
            SurfaceProfile::Standard {
                curvature_per_mm: curvature(p.r_l1_mm),
                conic: 0.0,
            },
            tilt_pose(b1, p.theta_l_deg),
            InteractionMode::Refract,
            Aperture::unbounded(),
            p.n1.clone(),
        )?;
        let q = intersect(&front, &b2, &d7)?;
        let d8 = match refract(&d7, &q.normal, n1, 1.0)? {
            Refraction::Refracted(t) => t,
            Refraction::TotalInternalReflection => {
                return Err(OpticsError::Geometry("chief ray is trapped in the beam-shaping lens".into()))
            }
        };
        let disp = q.point + d8 * p.a_mm;
        let display_pose = tilt_pose(disp, p.theta_d_deg);

        let dw = p.display.width_mm;
        let dh = p.display.height_mm;
        let generous = Aperture::rectangular(0.5 * dw + APERTURE_MARGIN_MM, 0.5 * dh + APERTURE_MARGIN_MM);
        let ap = |i: usize| clear.map_or(generous, |c| c[i]);

        let wg_pose = tilt_pose(e, p.theta_w_deg);
        let (slab_lo, slab_hi) = slab_limits(&wg_pose, &tir_front, &tir_rear)?;
        let wg_ap = match clear {
            Some(c) => clip_y(c[S_WAVEGUIDE], slab_lo, slab_hi),
            None => y_range_aperture(0.5 * dw + APERTURE_MARGIN_MM, slab_lo, slab_hi),
        };
        let mut s_f = tir_front.clone();
        s_f.aperture = y_range_aperture(LENS_HALF_WIDTH_MM, y_cut_front, LENS_TOP_MM);
        let mut s_r = tir_rear.clone();
        s_r.aperture = y_range_aperture(LENS_HALF_WIDTH_MM, y_cut_rear, LENS_TOP_MM);
        let mut free = mirror.clone();
        free.aperture = y_range_aperture(
            LENS_HALF_WIDTH_MM,
            local_y(&mirror_pose, y_cut_front, front_z),
            local_y(&mirror_pose, y_cut_rear, rear_z),
        );
        let mut exit = tir_rear.clone();
        exit.name = "S_r_exit".into();
        exit.mode = InteractionMode::Refract;
        let mut front = front;
        front.aperture = ap(S_BSL_FRONT);

        let surfaces = vec![
            front,
            Surface::new(
                "bsl_back",
                SurfaceProfile::Standard {
                    curvature_per_mm: curvature(p.r_l2_mm),
                    conic: 0.0,
                },
                tilt_pose(b2, p.theta_l_deg),
                InteractionMode::Refract,
                ap(S_BSL_BACK),
                Material::air(),
            )?,
            plane_surface("prism_entry", tilt_pose(pr, p.theta_p_deg), p.n1.clone(), ap(S_PRISM))?,
            Surface::new(
                "cylinder",
                SurfaceProfile::CylinderY {
                    curvature_y_per_mm: curvature(p.r_cy_mm),
                },
                tilt_pose(c, p.theta_c_deg),
                InteractionMode::Refract,
                ap(S_CYLINDER),
                p.n2.clone(),
            )?,
            plane_surface("waveguide_entry", wg_pose, p.n3.clone(), wg_ap)?,
            s_f,
            s_r,
            free,
            exit,
            plane_surface(
                "pupil",
                SurfacePose::at_z(0.0),
                Material::air(),
                Aperture::circular(0.5 * EYE_PUPIL_DIAMETER_MM * (1.0 + 1e-9)),
            )?,
        ];
        let sys = OpticalSystem::new(
            format!("AR path SPH {:+.2} at d_e {} mm", lens_label(&lens), p.eye_relief_mm),
            Material::air(),
            surfaces,
            S_PUPIL,
            EYE_PUPIL_DIAMETER_MM,
            // aiming reference far down the launch axis, so display points
            // close to the lens still get a well-conditioned tilt basis
            LaunchAxis::new(disp - d8 * AIM_REFERENCE_MM, -d8),
        )?;
        Ok((sys, display_pose))
    };

    if solve_focus {
        let target = 1.0 / p.image_distance_mm;
        let lo = 0.05 * fold.room;
        let hi = 0.95 * fold.room;
        let g = |len: f64| -> Option<f64> {
            let (sys, pose) = assemble(len, None).ok()?;
            let v = center_vergence(&sys, &pose)?;
            Some(v - target)
        };
        guide = solve_guide(&g, lo, hi).ok_or_else(|| {
            OpticsError::Geometry("no guide length brings the center field to the target image distance".into())
        })?;
        if let Some(v) = g(guide) {
            if v.abs() > 1e-6 {
                warnings.push(format!(
                    "focus target {} mm not reachable; residual vergence {:.3} D",
                    p.image_distance_mm,
                    v * 1e3
                ));
            }
        }
    }
    p.guide_length_mm = Some(guide);
    let (open, pose) = assemble(guide, None)?;
    let footprint = footprint_apertures(&open, &pose, &p.display);
    let (fitted, _) = assemble(guide, Some(&footprint))?;
    let clear = edge_limited_apertures(&fitted.surfaces, &footprint);
    let (system, display_pose) = assemble(guide, Some(&clear))?;

    // reverse trace used to map eye-side field angles onto display points
    let rev = reverse_of(&system, &display_pose)?;

    let out = ArSystem {
        params: p,
        lens,
        prescription: *rx,
        system,
        reverse: rev,
        display_pose,
        footprint,
        warnings,
    };
    let chief = out.trace_display_chief([0.0, 0.0])?;
    let ok = chief.complete
        && chief.records[S_TIR_FRONT].interaction == crate::tracer::Interaction::TirReflected
        && chief.records[S_TIR_REAR].interaction == crate::tracer::Interaction::TirReflected;
    if !ok {
        return Err(OpticsError::Geometry("center-field chief ray fails TIR in the waveguide".into()));
    }
    Ok(out)
}

fn lens_label(lens: &PrescriptionLensDesign) -> f64 {
    lens.back_vertex_powers().1
}

/// Root of `g` in `[lo, hi]` by a coarse scan and Illinois regula falsi;
/// falls back to the sampled minimum of `|g|` when there is no sign change.
fn solve_guide(g: &dyn Fn(f64) -> Option<f64>, lo: f64, hi: f64) -> Option<f64> {
    let n = 8;
    let xs: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let vs: Vec<Option<f64>> = xs.iter().map(|&x| g(x)).collect();
    for i in 0..n {
        let (Some(a), Some(b)) = (vs[i], vs[i + 1]) else { continue };
        if a == 0.0 {
            return Some(xs[i]);
        }
        if a.signum() == b.signum() {
            continue;
        }
        let (mut x0, mut f0, mut x1, mut f1) = (xs[i], a, xs[i + 1], b);
        let mut side = 0;
        for _ in 0..60 {
            let x = (x0 * f1 - x1 * f0) / (f1 - f0);
            let Some(fx) = g(x) else { break };
            if fx.abs() < 1e-12 || (x1 - x0).abs() < 1e-9 {
                return Some(x);
            }
            if fx.signum() == f1.signum() {
                x1 = x;
                f1 = fx;
                if side == -1 {
                    f0 *= 0.5;
                }
                side = -1;
            } else {
                x0 = x;
                f0 = fx;
                if side == 1 {
                    f1 *= 0.5;
                }
                side = 1;
            }
        }
        return Some((x0 * f1 - x1 * f0) / (f1 - f0));
    }
    xs.iter()
        .zip(&vs)
        .filter_map(|(x, v)| v.map(|v| (*x, v.abs())))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(x, _)| x)
}

/// Local-y extent of the waveguide entry plane between the two lens walls.
fn slab_limits(pose: &SurfacePose, front: &Surface, rear: &Surface) -> Result<(f64, f64)> {
    let u = pose.to_global_dir(&Vec3::y());
    let o = pose.origin();
    let mut ys = [0.0; 2];
    for (k, s) in [front, rear].into_iter().enumerate() {
        let mut hit = None;
        for dir in [u, -u] {
            if let Ok(h) = intersect(s, &o, &dir) {
                if h.distance >= 0.0 {
                    hit = Some(h.point);
                    break;
                }
            }
        }
        let p = hit.ok_or_else(|| OpticsError::Geometry("waveguide entry does not span the lens".into()))?;
        ys[k] = pose.to_local_point(&p).y;
    }
    Ok((ys[0].min(ys[1]), ys[0].max(ys[1])))
}

fn clip_y(ap: Aperture, lo: f64, hi: f64) -> Aperture {
    let y0 = (ap.center_mm[1] - ap.half_y_mm).max(lo);
    let y1 = (ap.center_mm[1] + ap.half_y_mm).min(hi);
    let mut out = y_range_aperture(ap.half_x_mm, y0, y1.max(y0));
    out.center_mm[0] = ap.center_mm[0];
    out
}

pub(crate) fn reverse_chief(rev: &OpticalSystem, field_deg: [f64; 2]) -> RayPath {
    let d = -Vec3::new(field_deg[0].to_radians().tan(), field_deg[1].to_radians().tan(), 1.0);
    let opts = TraceOptions {
        ignore_apertures: true,
        ..Default::default()
    };
    trace_with(rev, &Ray::new(Vec3::zeros(), d, WAVELENGTH_D_UM), &opts)
}

fn map_field(rev: &OpticalSystem, display: &SurfacePose, field_deg: [f64; 2]) -> Option<[f64; 2]> {
    let p = reverse_chief(rev, field_deg).terminal()?;
    let l = display.to_local_point(&p);
    Some([l.x, l.y])
}

/// Field angles whose chief ray lands on `target` on the display, by
/// damped Newton iteration on the reverse trace.
fn invert_field(rev: &OpticalSystem, display: &SurfacePose, target: [f64; 2]) -> Option<[f64; 2]> {
    let h = 1e-4;
    let mut f = [0.0, 0.0];
    let mut r = {
        let m = map_field(rev, display, f)?;
        [m[0] - target[0], m[1] - target[1]]
    };
    for _ in 0..40 {
        let norm = r[0].hypot(r[1]);
        if norm < 1e-10 {
            return Some(f);
        }
        let mut j = nalgebra::Matrix2::zeros();
        for k in 0..2 {
            let (mut a, mut b) = (f, f);
            a[k] += h;
            b[k] -= h;
            let (ma, mb) = (map_field(rev, display, a)?, map_field(rev, display, b)?);
            j[(0, k)] = (ma[0] - mb[0]) / (2.0 * h);
            j[(1, k)] = (ma[1] - mb[1]) / (2.0 * h);
        }
        let step = j.try_inverse()? * nalgebra::Vector2::new(r[0], r[1]);
        let mut t = 1.0;
        loop {
            let g = [f[0] - t * step[0], f[1] - t * step[1]];
            if let Some(m) = map_field(rev, display, g) {
                let rn = [m[0] - target[0], m[1] - target[1]];
                if rn[0].hypot(rn[1]) < norm {
                    f = g;
                    r = rn;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-6 {
                return None;
            }
        }
    }
    (r[0].hypot(r[1]) < 1e-7).then_some(f)
}

/// Aimer for a display point, seeded with the chief ray found on the
/// reverse path.
fn display_aimer<'a>(
    fwd: &'a OpticalSystem,
    rev: &OpticalSystem,
    display: &SurfacePose,
    local: [f64; 2],
    wavelength_um: f64,
) -> Result<Aimer<'a>> {
    let p = display.to_global_point(&Vec3::new(local[0], local[1], 0.0));
    let field = FieldSpec::point(p);
    let seed = invert_field(rev, display, local)
        .and_then(|f| reverse_chief(rev, f).final_direction())
        .and_then(|d| point_launch_parameters(fwd, &field, &(-d)));
    match seed {
        Some(uv) => Aimer::with_start(fwd, field, wavelength_um, uv),
        None => Err(OpticsError::Geometry(format!(
            "no chief ray from display point ({:.3}, {:.3}) reaches the pupil",
            local[0], local[1]
        ))),
    }
}

fn reverse_of(sys: &OpticalSystem, display: &SurfacePose) -> Result<OpticalSystem> {
    let mut rev = sys.reversed()?;
    rev.surfaces.push(plane_surface("display", *display, Material::air(), Aperture::unbounded())?);
    rev.launch = LaunchAxis::new(Vec3::zeros(), -Vec3::z());
    Ok(rev)
}

/// Margin added around the traced beam footprint on upstream optics.
pub const FOOTPRINT_MARGIN_MM: f64 = 0.25;

/// Clear apertures of the five upstream surfaces: the bounding box of the
/// full-display, full-pupil beam footprint plus [`FOOTPRINT_MARGIN_MM`].
fn footprint_apertures(sys: &OpticalSystem, display_pose: &SurfacePose, display: &super::params::DisplaySpec) -> [Aperture; 5] {
    let Ok(rev) = reverse_of(sys, display_pose) else {
        return [Aperture::rectangular(0.5 * display.width_mm + APERTURE_MARGIN_MM, 0.5 * display.height_mm + APERTURE_MARGIN_MM); 5];
    };
    let mut lo = [[f64::INFINITY; 2]; 5];
    let mut hi = [[f64::NEG_INFINITY; 2]; 5];
    let opts = TraceOptions {
        ignore_apertures: true,
        ..Default::default()
    };
    let r = 0.5 * EYE_PUPIL_DIAMETER_MM;
    let mut targets = vec![[0.0, 0.0]];
    targets.extend((0..8).map(|k| {
        let a = std::f64::consts::TAU * k as f64 / 8.0;
        [r * a.cos(), r * a.sin()]
    }));
    let aim = |local: [f64; 2]| display_aimer(sys, &rev, display_pose, local, WAVELENGTH_D_UM).ok();
    let mut aimers = Vec::new();
    for i in -1..=1 {
        for j in -1..=1 {
            let edge = [0.5 * display.width_mm * i as f64, 0.5 * display.height_mm * j as f64];
            if let Some(a) = aim(edge) {
                aimers.push(a);
                continue;
            }
            // outermost aimable point on the segment from the display center
            let (mut inside, mut outside) = (0.0, 1.0);
            let mut best = None;
            for _ in 0..6 {
                let t = 0.5 * (inside + outside);
                match aim([edge[0] * t, edge[1] * t]) {
                    Some(a) => {
                        inside = t;
                        best = Some(a);
                    }
                    None => outside = t,
                }
            }
            aimers.extend(best);
        }
    }
    for aimer in &aimers {
        for t in &targets {
            let path = trace_with(sys, &aimer.aim(*t, true), &opts);
            if !path.complete {
                continue;
            }
            for rec in path.records.iter().filter(|r| r.surface <= S_WAVEGUIDE) {
                let l = sys.surfaces[rec.surface].pose.to_local_point(&rec.point);
                let k = rec.surface;
                lo[k] = [lo[k][0].min(l.x), lo[k][1].min(l.y)];
                hi[k] = [hi[k][0].max(l.x), hi[k][1].max(l.y)];
            }
        }
    }
    std::array::from_fn(|k| {
        if lo[k][0].is_finite() {
            let m = FOOTPRINT_MARGIN_MM;
            Aperture::rectangular(0.5 * (hi[k][0] - lo[k][0]) + m, 0.5 * (hi[k][1] - lo[k][1]) + m)
                .with_center(0.5 * (hi[k][0] + lo[k][0]), 0.5 * (hi[k][1] + lo[k][1]))
        } else {
            Aperture::rectangular(0.5 * display.width_mm + APERTURE_MARGIN_MM, 0.5 * display.height_mm + APERTURE_MARGIN_MM)
        }
    })
}

/// Largest footprint enlargement of the clear apertures.
pub const MAX_APERTURE_SCALE: f64 = 3.0;

fn scaled(a: &Aperture, s: f64) -> Aperture {
    Aperture {
        half_x_mm: a.half_x_mm * s,
        half_y_mm: a.half_y_mm * s,
        ..*a
    }
}

/// Footprint scale at which the element from `a` to `b` thins to the edge
/// limit, in `[1, MAX_APERTURE_SCALE]`. An element already thinner than the
/// limit over its footprint extends until its surfaces meet.
fn edge_scale(a: &Surface, b: &Surface) -> f64 {
    let thick_at = |s: f64| {
        let mut a = a.clone();
        a.aperture = scaled(&a.aperture, s);
        min_thickness_between(&a, b)
    };
    let limit = if thick_at(1.0) >= MIN_EDGE_MM { MIN_EDGE_MM } else { 0.0 };
    if thick_at(MAX_APERTURE_SCALE) >= limit {
        return MAX_APERTURE_SCALE;
    }
    if thick_at(1.0) < limit {
        return 1.0;
    }
    let (mut lo, mut hi) = (1.0, MAX_APERTURE_SCALE);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if thick_at(mid) >= limit {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Mechanical clear apertures: each element's footprint enlarged about its
/// center until the element edge reaches the minimum edge thickness.
/// `surfaces` must carry the footprint apertures.
fn edge_limited_apertures(surfaces: &[Surface], footprint: &[Aperture; 5]) -> [Aperture; 5] {
    let bsl = edge_scale(&surfaces[S_BSL_FRONT], &surfaces[S_BSL_BACK]);
    let prism = edge_scale(&surfaces[S_PRISM], &surfaces[S_CYLINDER]);
    let guide = edge_scale(&surfaces[S_CYLINDER], &surfaces[S_WAVEGUIDE]);
    let s = [bsl, bsl, prism, prism.min(guide), guide];
    std::array::from_fn(|k| scaled(&footprint[k], s[k]))
}

/// Vergence fit `(V_x, V_y)` in 1/mm of rays at the pupil plane: the slope
/// of ray tan-angle against pupil position. Positive values diverge from a
/// virtual point in front of the eye.
pub fn fit_vergence<'a>(paths: impl IntoIterator<Item = &'a RayPath>) -> Option<(f64, f64)> {
    let mut sx = [0.0; 5];
    let mut sy = [0.0; 5];
    let mut n = 0.0;
    for path in paths {
        let (Some(p), Some(d)) = (path.terminal(), path.final_direction()) else { continue };
        let (tx, ty) = (d.x / d.z, d.y / d.z);
        for (s, h, t) in [(&mut sx, p.x, tx), (&mut sy, p.y, ty)] {
            s[0] += h;
            s[1] += t;
            s[2] += h * h;
            s[3] += h * t;
        }
        n += 1.0;
    }
    if n < 3.0 {
        return None;
    }
    let slope = |s: &[f64; 5]| {
        let den = n * s[2] - s[0] * s[0];
        (den.abs() > 1e-18).then(|| (n * s[3] - s[0] * s[1]) / den)
    };
    Some((slope(&sx)?, slope(&sy)?))
}

fn center_vergence(sys: &OpticalSystem, display_pose: &SurfacePose) -> Option<f64> {
    let field = FieldSpec::point(display_pose.origin());
    let opts = BundleOptions {
        exec: crate::par::Execution::Sequential,
        pupil_scale: 0.5,
        trace: TraceOptions {
            ignore_apertures: true,
            ..Default::default()
        },
        ..Default::default()
    };
    let b = trace_bundle_with(sys, &field, &PupilGrid::Hexapolar { rings: 2 }, WAVELENGTH_D_UM, &opts).ok()?;
    let (vx, vy) = fit_vergence(&b.paths)?;
    Some(0.5 * (vx + vy))
}

/// Focal length (mm per radian) of the ideal eye, from the schematic
/// emmetrope's retinal scale.
pub fn eye_focal_length_mm() -> f64 {
    static F: OnceLock<f64> = OnceLock::new();
    *F.get_or_init(|| {
        let eye = build_eye(&Prescription::default()).expect("emmetropic eye builds");
        mm_per_degree(&eye.system).expect("emmetropic eye traces") * 180.0 / std::f64::consts::PI
    })
}

/// Retinal points (mm) of an ideal eye focused at vergence `v_per_mm`.
pub fn ideal_eye_points<'a>(paths: impl IntoIterator<Item = &'a RayPath>, v_per_mm: f64) -> Vec<[f64; 2]> {
    let f = eye_focal_length_mm();
    paths
        .into_iter()
        .filter_map(|path| {
            let p = path.terminal()?;
            let d = path.final_direction()?;
            Some([f * (d.x / d.z - v_per_mm * p.x), f * (d.y / d.z - v_per_mm * p.y)])
        })
        .collect()
}

/// Display-field report entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldPoint {
    pub field_deg: [f64; 2],
    pub display_mm: [f64; 2],
}

impl ArSystem {
    pub fn display_point_global(&self, local: [f64; 2]) -> Vec3 {
        self.display_pose.to_global_point(&Vec3::new(local[0], local[1], 0.0))
    }

    /// Display-local point whose chief ray reaches the pupil center at the
    /// given field angles.
    pub fn display_point_for_field(&self, field_deg: [f64; 2]) -> Result<[f64; 2]> {
        map_field(&self.reverse, &self.display_pose, field_deg)
            .ok_or_else(|| OpticsError::Geometry(format!("field {field_deg:?} does not map back to the display")))
    }

    /// Field angles `[x, y]` (degrees) seen for a display point.
    pub fn field_for_display_point(&self, display_local: [f64; 2]) -> Result<[f64; 2]> {
        invert_field(&self.reverse, &self.display_pose, display_local)
            .ok_or_else(|| OpticsError::Geometry(format!("display point {display_local:?} has no chief ray")))
    }

    pub fn field_spec(&self, display_local: [f64; 2]) -> FieldSpec {
        FieldSpec::point(self.display_point_global(display_local))
    }

    pub fn aimer(&self, display_local: [f64; 2], wavelength_um: f64) -> Result<Aimer<'_>> {
        display_aimer(&self.system, &self.reverse, &self.display_pose, display_local, wavelength_um)
    }

    /// Chief ray from a display point to the pupil center, apertures active.
    pub fn trace_display_chief(&self, display_local: [f64; 2]) -> Result<RayPath> {
        let aimer = self.aimer(display_local, WAVELENGTH_D_UM)?;
        Ok(crate::tracer::trace(&self.system, &aimer.chief_ray()))
    }

    pub fn bundle(&self, display_local: [f64; 2], grid: &PupilGrid, wavelength_um: f64, opts: &BundleOptions) -> Result<Bundle> {
        let aimer = self.aimer(display_local, wavelength_um)?;
        Ok(trace_bundle_aimed(&aimer, grid, opts))
    }

    /// Same design at another eye relief (the display module moves with the lens).
    pub fn at_eye_relief(&self, d_e: f64) -> Result<ArSystem> {
        let mut p = self.params.clone();
        p.eye_relief_mm = d_e;
        build_ar_system_with_lens(&p, &self.lens, &self.prescription)
    }

    /// Same optics with the display moved `delta_a_mm` further from the
    /// beam-shaping lens along the center chief ray.
    pub fn with_display_shift(&self, delta_a_mm: f64) -> Result<ArSystem> {
        let dir = (self.display_pose.origin() - self.system.launch.origin()).normalize();
        let mut out = self.clone();
        out.display_pose = SurfacePose::new(self.display_pose.origin() + dir * delta_a_mm, self.display_pose.tilt_deg);
        out.params.a_mm += delta_a_mm;
        out.reverse = reverse_of(&self.system, &out.display_pose)?;
        Ok(out)
    }

    /// Target vergence (1/mm) of the virtual image.
    pub fn target_vergence(&self) -> f64 {
        1.0 / self.params.image_distance_mm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracer::Interaction;
    use approx::assert_abs_diff_eq;

    fn prototype() -> ArSystem {
        build_ar_system(&DesignParams::prototype(), &Prescription::sphere(-1.0)).unwrap()
    }

    #[test]
    fn tilt_axis_convention() {
        let pose = tilt_pose(Vec3::zeros(), 60.0);
        assert_abs_diff_eq!(pose.axis(), tilt_axis(60.0), epsilon = 1e-15);
        assert_abs_diff_eq!(tilt_axis(90.0), Vec3::z(), epsilon = 1e-15);
    }

    #[test]
    fn prototype_center_signature() {
        let ar = prototype();
        let path = ar.trace_display_chief([0.0, 0.0]).unwrap();
        assert!(path.complete);
        let kinds: Vec<Interaction> = path.records.iter().map(|r| r.interaction).collect();
        assert_eq!(kinds[S_TIR_FRONT], Interaction::TirReflected);
        assert_eq!(kinds[S_TIR_REAR], Interaction::TirReflected);
        assert_eq!(kinds[S_FREEFORM], Interaction::Reflected);
        assert_eq!(path.count(Interaction::TirReflected), 2);
        assert_eq!(path.count(Interaction::Reflected), 1);
    }

    #[test]
    fn focus_solved_to_image_distance() {
        let ar = prototype();
        let v = center_vergence(&ar.system, &ar.display_pose).unwrap();
        assert_abs_diff_eq!(v, 1.0 / 485.0, epsilon = 1e-7);
        assert!(ar.params.guide_length_mm.is_some());
    }

    #[test]
    fn symmetric_flag_ties_bsl_tilt() {
        let mut p = DesignParams::prototype();
        p.theta_l_deg = 10.0;
        let ar = build_ar_system(&p, &Prescription::sphere(-1.0)).unwrap();
        assert_eq!(ar.params.theta_l_deg, ar.params.theta_d_deg);
    }

    #[test]
    fn eye_relief_out_of_range_warns() {
        let mut p = DesignParams::prototype();
        p.eye_relief_mm = 25.0;
        let ar = build_ar_system(&p, &Prescription::sphere(-1.0)).unwrap();
        assert!(ar.warnings.iter().any(|w| w.contains("eye relief")));
        assert!(prototype().warnings.iter().all(|w| !w.contains("eye relief")));
    }

    #[test]
    fn field_mapping_round_trip() {
        let ar = prototype();
        let d = ar.display_point_for_field([5.0, 3.0]).unwrap();
        let path = ar.trace_display_chief(d).unwrap();
        let dir = path.final_direction().unwrap();
        assert_abs_diff_eq!((dir.x / dir.z).atan().to_degrees(), 5.0, epsilon = 1e-6);
        assert_abs_diff_eq!((dir.y / dir.z).atan().to_degrees(), 3.0, epsilon = 1e-6);
    }

    #[test]
    fn shallow_combiner_breaks_tir() {
        let mut p = DesignParams::prototype();
        p.theta_f_deg = 85.0;
        assert!(matches!(build_ar_system(&p, &Prescription::sphere(-1.0)), Err(OpticsError::Geometry(_))));
    }

    #[test]
    fn vergence_fit_of_point_source() {
        // rays from a point 500 mm in front of the pupil plane
        let src = Vec3::new(0.0, 0.0, -500.0);
        let paths: Vec<RayPath> = (0..9)
            .map(|i| {
                let h = Vec3::new(-1.0 + 0.25 * i as f64, 0.5 - 0.1 * i as f64, 0.0);
                let d = (h - src).normalize();
                RayPath {
                    ray: Ray::new(src, d, 0.55),
                    records: vec![crate::tracer::SurfaceRecord {
                        surface: 0,
                        interaction: Interaction::Refracted,
                        point: h,
                        normal: -Vec3::z(),
                        direction_in: d,
                        direction_out: d,
                        n_in: 1.0,
                        n_out: 1.0,
                    }],
                    complete: true,
                }
            })
            .collect();
        let (vx, vy) = fit_vergence(&paths).unwrap();
        assert_abs_diff_eq!(vx, 1.0 / 500.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vy, 1.0 / 500.0, epsilon = 1e-12);
    }
}
