use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use prescription_ar::designer::lens::direct_lens_profiles;
use prescription_ar::designer::merit::evaluate;
use prescription_ar::designer::{DesignParams, MeritSpec};
use prescription_ar::eye::{build_eye, Prescription};
use prescription_ar::materials::WAVELENGTH_D_UM;
use prescription_ar::par::Execution;
use prescription_ar::tracer::{trace_bundle_with, BundleOptions, FieldSpec, PupilGrid};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bundle(c: &mut Criterion) {
    let eye = build_eye(&Prescription::sphere(-1.0)).unwrap();
    let field = FieldSpec::angle(5.0, 2.0);
    let mut g = c.benchmark_group("eye_bundle");
    for rings in [6, 13] {
        let grid = PupilGrid::Hexapolar { rings };
        for (name, exec) in MODES {
            let opts = BundleOptions { exec, ..Default::default() };
            g.bench_with_input(BenchmarkId::new(name, rings), &grid, |b, grid| {
                b.iter(|| trace_bundle_with(&eye.system, &field, grid, WAVELENGTH_D_UM, &opts).unwrap())
            });
        }
    }
    g.finish();
}

fn merit(c: &mut Criterion) {
    let rx = Prescription::sphere(-1.0);
    let p = DesignParams::prototype();
    let lens = direct_lens_profiles(&rx, p.lens_thickness_mm, &p.n3).unwrap();
    let mut g = c.benchmark_group("ar_merit");
    g.sample_size(10);
    for (name, exec) in MODES {
        let mut spec = MeritSpec::default();
        spec.exec = exec;
        g.bench_function(name, |b| b.iter(|| evaluate(&p, &lens, &rx, &spec)));
    }
    g.finish();
}

criterion_group!(benches, bundle, merit);
criterion_main!(benches);
