use prescription_ar::analysis::geometric_mtf;
use prescription_ar::designer::{DesignParams, MeritSpec};
use prescription_ar::designer::lens::direct_lens_profiles;
use prescription_ar::designer::merit::evaluate;
use prescription_ar::eye::{build_eye, cornea_radius_from_cyl, Prescription};
use prescription_ar::materials::{Material, WAVELENGTH_D_UM};
use prescription_ar::par::Execution;
use prescription_ar::surfaces::{
    Aperture, ExtendedPolynomial, InteractionMode, Surface, SurfacePose, SurfaceProfile, MAX_POLY_TERMS,
};
use prescription_ar::tracer::{
    refract, trace, trace_bundle_with, trace_with, BundleOptions, FieldSpec, Interaction, LaunchAxis, OpticalSystem,
    PupilGrid, Ray, Refraction, TraceOptions,
};
use prescription_ar::Vec3;
use proptest::prelude::*;

fn tangential(d: &Vec3, n: &Vec3) -> Vec3 {
    d - n * d.dot(n)
}

fn unit(theta: f64, phi: f64) -> Vec3 {
    Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

fn profile() -> impl Strategy<Value = SurfaceProfile> {
    prop_oneof![
        (-0.08..0.08f64, -2.0..1.0f64).prop_map(|(c, k)| SurfaceProfile::Standard { curvature_per_mm: c, conic: k }),
        (-0.08..0.08f64, -0.08..0.08f64, -2.0..1.0f64, -2.0..1.0f64).prop_map(|(cx, cy, kx, ky)| {
            SurfaceProfile::Biconic {
                curvature_x_per_mm: cx,
                curvature_y_per_mm: cy,
                conic_x: kx,
                conic_y: ky,
            }
        }),
        (-0.08..0.08f64).prop_map(|c| SurfaceProfile::CylinderY { curvature_y_per_mm: c }),
        (-0.05..0.05f64, proptest::collection::vec(-0.05..0.05f64, MAX_POLY_TERMS)).prop_map(|(c, coeffs)| {
            SurfaceProfile::ExtendedPolynomial(ExtendedPolynomial::new(c, 0.0, 5.0, coeffs).unwrap())
        }),
    ]
}

fn single_interface(profile: SurfaceProfile, n: f64, tilt: [f64; 3]) -> OpticalSystem {
    let glass = Material::homogeneous("glass", n, 50.0).unwrap();
    let s = |name: &str, p: SurfaceProfile, z: f64, tilt: [f64; 3], m: Material| {
        Surface::new(name, p, SurfacePose::new(Vec3::new(0.0, 0.0, z), tilt), InteractionMode::Refract, Aperture::unbounded(), m)
            .unwrap()
    };
    let surfaces = vec![
        s("interface", profile, 0.0, tilt, glass.clone()),
        s("image", SurfaceProfile::Plane, 20.0, [0.0; 3], glass),
    ];
    OpticalSystem::new("probe", Material::Air, surfaces, 0, 4.0, LaunchAxis::new(Vec3::new(0.0, 0.0, -10.0), Vec3::z())).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn vector_snell_conserves_tangential_momentum(
        theta in 0.0..1.5f64, phi in 0.0..6.28f64,
        ntheta in 0.0..0.8f64, nphi in 0.0..6.28f64,
        n1 in 1.0..2.0f64, n2 in 1.0..2.0f64,
    ) {
        let normal = -unit(ntheta, nphi);
        let d = unit(theta, phi);
        prop_assume!(d.dot(&normal) < -1e-3);
        let sin2 = 1.0 - d.dot(&normal).powi(2);
        match refract(&d, &normal, n1, n2).unwrap() {
            Refraction::Refracted(t) => {
                prop_assert!((t.norm() - 1.0).abs() < 1e-12);
                prop_assert!((tangential(&d, &normal) * n1 - tangential(&t, &normal) * n2).norm() < 1e-12);
                prop_assert!(t.dot(&normal) < 0.0);
            }
            Refraction::TotalInternalReflection => prop_assert!(n1 * n1 * sin2 > n2 * n2 * (1.0 - 1e-12)),
        }
    }

    #[test]
    fn traced_refraction_obeys_snell(
        p in profile(), n in 1.3..1.9f64,
        x in -3.0..3.0f64, y in -3.0..3.0f64,
        ax in -0.2..0.2f64, ay in -0.2..0.2f64,
        tx in -10.0..10.0f64, ty in -10.0..10.0f64,
    ) {
        let system = single_interface(p, n, [tx, ty, 0.0]);
        let path = trace(&system, &Ray::new(Vec3::new(x, y, -10.0), Vec3::new(ax, ay, 1.0), WAVELENGTH_D_UM));
        let r = &path.records[0];
        prop_assume!(r.interaction == Interaction::Refracted);
        let lhs = tangential(&r.direction_in, &r.normal) * r.n_in;
        let rhs = tangential(&r.direction_out, &r.normal) * r.n_out;
        prop_assert!((lhs - rhs).norm() <= 1e-10);
        prop_assert!((r.normal.norm() - 1.0).abs() < 1e-12);
        prop_assert!(r.normal.dot(&r.direction_in) < 0.0);
    }

    #[test]
    fn sag_gradient_matches_central_differences(p in profile(), x in -3.0..3.0f64, y in -3.0..3.0f64) {
        let h = 1e-5;
        let (z, gx, gy) = p.sag_gradient(x, y).unwrap();
        prop_assert_eq!(z, p.sag(x, y).unwrap());
        let fx = (p.sag(x + h, y).unwrap() - p.sag(x - h, y).unwrap()) / (2.0 * h);
        let fy = (p.sag(x, y + h).unwrap() - p.sag(x, y - h).unwrap()) / (2.0 * h);
        prop_assert!((gx - fx).abs() <= 1e-6, "{gx} {fx}");
        prop_assert!((gy - fy).abs() <= 1e-6, "{gy} {fy}");
    }

    #[test]
    fn cornea_cylinder_radius_matches_vergence_oracle(r_y in 7.0..9.0f64, cyl in -4.0..0.0f64, n in 1.33..1.4f64) {
        let d_y = (n - 1.0) / (r_y * 1e-3);
        let expected = (n - 1.0) / (d_y + cyl) * 1e3;
        prop_assert!((cornea_radius_from_cyl(r_y, n, cyl).unwrap() - expected).abs() <= 1e-9);
        prop_assert!(cornea_radius_from_cyl(r_y, n, cyl).unwrap() >= r_y - 1e-12);
    }

    #[test]
    fn positive_cylinder_is_rejected(sph in -6.0..6.0f64, cyl in 0.01..4.0f64, axis in 0.0..180.0f64) {
        prop_assert!(Prescription::new(sph, cyl, axis, 0.0).is_err());
    }

    #[test]
    fn mtf_is_bounded_and_starts_at_one(
        pts in proptest::collection::vec((-0.02..0.02f64, -0.02..0.02f64), 500..800),
        az in 0.0..180.0f64,
    ) {
        let points: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
        let c = geometric_mtf(&points, 0.29, &[0.0, 5.0, 10.0, 30.0], az).unwrap();
        prop_assert!((c.tangential[0] - 1.0).abs() < 1e-12 && (c.sagittal[0] - 1.0).abs() < 1e-12);
        prop_assert!(c.tangential.iter().chain(&c.sagittal).all(|m| (0.0..=1.0 + 1e-12).contains(m)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn grin_step_is_converged(x in -1.5..1.5f64, y in -1.5..1.5f64, ax in -0.08..0.08f64, ay in -0.08..0.08f64) {
        let eye = build_eye(&Prescription::sphere(-1.0)).unwrap();
        let ray = Ray::new(Vec3::new(x, y, -10.0), Vec3::new(ax, ay, 1.0), WAVELENGTH_D_UM);
        let fine = TraceOptions { grin_step_mm: 0.0005, ..Default::default() };
        let (a, b) = (trace(&eye.system, &ray), trace_with(&eye.system, &ray, &fine));
        prop_assert_eq!(a.complete, b.complete);
        if let (Some(p), Some(q)) = (a.terminal(), b.terminal()) {
            prop_assert!((p - q).norm() <= 1e-6);
        }
    }

    #[test]
    fn bundles_are_identical_across_execution_modes(fx in -10.0..10.0f64, fy in -10.0..10.0f64, sph in -4.0..2.0f64) {
        let eye = build_eye(&Prescription::sphere(sph)).unwrap();
        let run = |exec| {
            let opts = BundleOptions { exec, ..Default::default() };
            trace_bundle_with(&eye.system, &FieldSpec::angle(fx, fy), &PupilGrid::Hexapolar { rings: 4 }, WAVELENGTH_D_UM, &opts)
                .unwrap()
                .paths
        };
        prop_assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn merit_residuals_are_identical_across_execution_modes(fx in -9.0..9.0f64, fy in -4.5..4.5f64) {
        let rx = Prescription::sphere(-1.0);
        let p = DesignParams::prototype();
        let lens = direct_lens_profiles(&rx, p.lens_thickness_mm, &p.n3).unwrap();
        let run = |exec| {
            let mut spec = MeritSpec::new(vec![[0.0, 0.0], [fx, fy]], vec![20.0]);
            spec.exec = exec;
            evaluate(&p, &lens, &rx, &spec).residuals
        };
        let (a, b) = (run(Execution::Sequential), run(Execution::Parallel));
        prop_assert!(a.iter().map(|v| v.to_bits()).eq(b.iter().map(|v| v.to_bits())));
    }
}
