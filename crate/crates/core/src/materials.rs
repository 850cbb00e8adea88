//! Refractive media: dispersive homogeneous glasses/polymers and the
//! gradient-index crystalline lens.

use serde::{Deserialize, Serialize};

use crate::surfaces::SurfacePose;
use crate::{OpticsError, Result, Vec3};

/// Fraunhofer d line, the design wavelength.
pub const WAVELENGTH_D_UM: f64 = 0.5876;
pub const WAVELENGTH_F_UM: f64 = 0.4861;
pub const WAVELENGTH_C_UM: f64 = 0.6563;
pub const CHROMATIC_SET_UM: [f64; 3] = [WAVELENGTH_F_UM, WAVELENGTH_D_UM, WAVELENGTH_C_UM];

const BAND_UM: (f64, f64) = (0.4, 0.7);

// Vendor datasheet values (Schott N-LASF31A, Schott N-BK7, Zeonex COP).
pub const N_LASF31A: (f64, f64) = (1.8830, 40.76);
pub const N_BK7: (f64, f64) = (1.5168, 64.17);
pub const COP: (f64, f64) = (1.5261, 56.2);

// Schematic-eye media.
pub const CORNEA: (f64, f64) = (1.376, 55.468);
pub const AQUEOUS: (f64, f64) = (1.3337, 50.522);
pub const AQUEOUS_STOP: (f64, f64) = (1.337, 50.522);
pub const VITREOUS: (f64, f64) = (1.336, 51.293);

/// Index polynomial `n = n0 + a_z·Z + a_zz·Z² + a_rr·(X² + Y²)` in a local
/// frame whose origin is the lens segment's front vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrinMedium {
    pub name: String,
    pub n0: f64,
    pub a_z_per_mm: f64,
    pub a_zz_per_mm2: f64,
    pub a_rr_per_mm2: f64,
    /// Placement of the polynomial's coordinate frame.
    pub frame: SurfacePose,
}

impl GrinMedium {
    pub fn anterior_lens() -> Self {
        Self {
            name: "LENS_ANTERIOR".into(),
            n0: 1.371,
            a_z_per_mm: 0.0652778,
            a_zz_per_mm2: -0.0226659,
            a_rr_per_mm2: -0.0020399,
            frame: SurfacePose::default(),
        }
    }

    pub fn posterior_lens() -> Self {
        Self {
            name: "LENS_POSTERIOR".into(),
            n0: 1.418,
            a_z_per_mm: 0.0,
            a_zz_per_mm2: -0.0100737,
            a_rr_per_mm2: -0.0020399,
            frame: SurfacePose::default(),
        }
    }

    /// A medium with no gradient, handy as a test reference.
    pub fn uniform(n: f64) -> Self {
        Self {
            name: "UNIFORM".into(),
            n0: n,
            a_z_per_mm: 0.0,
            a_zz_per_mm2: 0.0,
            a_rr_per_mm2: 0.0,
            frame: SurfacePose::default(),
        }
    }

    pub fn with_frame(mut self, frame: SurfacePose) -> Self {
        self.frame = frame;
        self
    }

    /// Index and gradient at a point given in the medium's local frame.
    pub fn local_index_and_gradient(&self, p: &Vec3) -> (f64, Vec3) {
        let r2 = p.x * p.x + p.y * p.y;
        let n = self.n0 + self.a_z_per_mm * p.z + self.a_zz_per_mm2 * p.z * p.z + self.a_rr_per_mm2 * r2;
        let g = Vec3::new(
            2.0 * self.a_rr_per_mm2 * p.x,
            2.0 * self.a_rr_per_mm2 * p.y,
            self.a_z_per_mm + 2.0 * self.a_zz_per_mm2 * p.z,
        );
        (n, g)
    }

    /// Index and gradient at a global point; the gradient is returned in
    /// global coordinates.
    pub fn index_and_gradient(&self, p: &Vec3) -> (f64, Vec3) {
        let (n, g) = self.local_index_and_gradient(&self.frame.to_local_point(p));
        (n, self.frame.to_global_dir(&g))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Material {
    Air,
    Homogeneous { name: String, nd: f64, vd: f64 },
    Grin(GrinMedium),
}

impl Material {
    pub fn air() -> Self {
        Material::Air
    }

    pub fn homogeneous(name: impl Into<String>, nd: f64, vd: f64) -> Result<Self> {
        if !(nd > 1.0) || !(vd > 0.0) {
            return Err(OpticsError::InvalidInput(format!("need n_d > 1 and V_d > 0, got ({nd}, {vd})")));
        }
        Ok(Material::Homogeneous {
            name: name.into(),
            nd,
            vd,
        })
    }

    fn named((nd, vd): (f64, f64), name: &str) -> Self {
        Material::Homogeneous {
            name: name.into(),
            nd,
            vd,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Material::Air => "AIR",
            Material::Homogeneous { name, .. } => name,
            Material::Grin(g) => &g.name,
        }
    }

    pub fn is_grin(&self) -> bool {
        matches!(self, Material::Grin(_))
    }

    /// Index of a homogeneous medium at `wavelength_um`.
    ///
    /// Uses a two-term Cauchy model `n = A + B/λ²` pinned to `n_d` at the d
    /// line with `n_F − n_C = (n_d − 1)/V_d`.
    pub fn index_at(&self, wavelength_um: f64) -> Result<f64> {
        if !(BAND_UM.0..=BAND_UM.1).contains(&wavelength_um) {
            return Err(OpticsError::OutOfBand(wavelength_um));
        }
        match self {
            Material::Air => Ok(1.0),
            Material::Homogeneous { nd, vd, .. } => {
                let (a, b) = cauchy_coefficients(*nd, *vd);
                Ok(a + b / (wavelength_um * wavelength_um))
            }
            Material::Grin(g) => Err(OpticsError::NotHomogeneous(g.name.clone())),
        }
    }

    /// Index at a global point; homogeneous media ignore the position.
    pub fn index_at_point(&self, wavelength_um: f64, p: &Vec3) -> Result<f64> {
        match self {
            Material::Grin(g) => Ok(g.index_and_gradient(p).0),
            _ => self.index_at(wavelength_um),
        }
    }
}

/// `(A, B)` of the Cauchy model reproducing `(n_d, V_d)`.
pub fn cauchy_coefficients(nd: f64, vd: f64) -> (f64, f64) {
    let dispersion = (nd - 1.0) / vd;
    let b = dispersion / (WAVELENGTH_F_UM.powi(-2) - WAVELENGTH_C_UM.powi(-2));
    (nd - b / (WAVELENGTH_D_UM * WAVELENGTH_D_UM), b)
}

/// Index and gradient of a GRIN material at a global point.
pub fn grin_index_and_gradient(material: &Material, point: &Vec3) -> Result<(f64, Vec3)> {
    match material {
        Material::Grin(g) => Ok(g.index_and_gradient(point)),
        other => Err(OpticsError::InvalidInput(format!("`{}` is not a GRIN medium", other.name()))),
    }
}

/// Names accepted by [`lookup`].
pub const CATALOG_NAMES: [&str; 10] = [
    "AIR",
    "N-LASF31A",
    "N-BK7",
    "COP",
    "CORNEA",
    "AQUEOUS",
    "AQUEOUS_STOP",
    "VITREOUS",
    "LENS_ANTERIOR",
    "LENS_POSTERIOR",
];

/// Looks up a catalog material by name (case-insensitive; `ZEONEX` aliases `COP`).
pub fn lookup(name: &str) -> Result<Material> {
    let key = name.trim().to_ascii_uppercase();
    Ok(match key.as_str() {
        "AIR" => Material::Air,
        "N-LASF31A" => Material::named(N_LASF31A, "N-LASF31A"),
        "N-BK7" => Material::named(N_BK7, "N-BK7"),
        "COP" | "ZEONEX" => Material::named(COP, "COP"),
        "CORNEA" => Material::named(CORNEA, "CORNEA"),
        "AQUEOUS" => Material::named(AQUEOUS, "AQUEOUS"),
        "AQUEOUS_STOP" => Material::named(AQUEOUS_STOP, "AQUEOUS_STOP"),
        "VITREOUS" => Material::named(VITREOUS, "VITREOUS"),
        "LENS_ANTERIOR" => Material::Grin(GrinMedium::anterior_lens()),
        "LENS_POSTERIOR" => Material::Grin(GrinMedium::posterior_lens()),
        _ => return Err(OpticsError::UnknownMaterial(name.to_string())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn air_is_one() {
        for l in [0.4, 0.55, 0.7] {
            assert_eq!(Material::air().index_at(l).unwrap(), 1.0);
        }
    }

    #[test]
    fn cornea_d_line() {
        let m = lookup("cornea").unwrap();
        assert_abs_diff_eq!(m.index_at(WAVELENGTH_D_UM).unwrap(), 1.376, epsilon = 1e-12);
    }

    #[test]
    fn cornea_abbe_dispersion() {
        let m = lookup("CORNEA").unwrap();
        let df = m.index_at(WAVELENGTH_F_UM).unwrap() - m.index_at(WAVELENGTH_C_UM).unwrap();
        assert_abs_diff_eq!(df, 0.376 / 55.468, epsilon = 1e-12);
        assert_abs_diff_eq!(df, 0.006779, epsilon = 1e-6);
    }

    #[test]
    fn all_catalog_media_round_trip() {
        for name in CATALOG_NAMES {
            let m = lookup(name).unwrap();
            if let Material::Homogeneous { nd, vd, .. } = m {
                let n_d = m.index_at(WAVELENGTH_D_UM).unwrap();
                let v = (n_d - 1.0) / (m.index_at(WAVELENGTH_F_UM).unwrap() - m.index_at(WAVELENGTH_C_UM).unwrap());
                assert_abs_diff_eq!(n_d, nd, epsilon = 1e-9);
                assert_abs_diff_eq!(v, vd, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn out_of_band_rejected() {
        let m = lookup("N-BK7").unwrap();
        assert_eq!(m.index_at(0.35), Err(OpticsError::OutOfBand(0.35)));
        assert!(m.index_at(0.71).is_err());
    }

    #[test]
    fn unknown_material() {
        assert!(matches!(lookup("unobtainium"), Err(OpticsError::UnknownMaterial(_))));
    }

    #[test]
    fn invalid_homogeneous_rejected() {
        assert!(Material::homogeneous("x", 0.9, 50.0).is_err());
        assert!(Material::homogeneous("x", 1.5, 0.0).is_err());
    }

    #[test]
    fn anterior_lens_at_origin() {
        let (n, g) = GrinMedium::anterior_lens().local_index_and_gradient(&Vec3::zeros());
        assert_abs_diff_eq!(n, 1.371, epsilon = 1e-15);
        assert_abs_diff_eq!(g, Vec3::new(0.0, 0.0, 0.0652778), epsilon = 1e-15);
    }

    #[test]
    fn posterior_lens_at_origin() {
        let (n, g) = GrinMedium::posterior_lens().local_index_and_gradient(&Vec3::zeros());
        assert_abs_diff_eq!(n, 1.418, epsilon = 1e-15);
        assert_abs_diff_eq!(g, Vec3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn grin_gradient_matches_central_difference() {
        let g = GrinMedium::anterior_lens();
        let p = Vec3::new(1.0, 0.0, 0.0);
        let (_, grad) = g.local_index_and_gradient(&p);
        let h = 1e-5;
        for axis in 0..3 {
            let mut e = Vec3::zeros();
            e[axis] = h;
            let fd = (g.local_index_and_gradient(&(p + e)).0 - g.local_index_and_gradient(&(p - e)).0) / (2.0 * h);
            assert_abs_diff_eq!(fd, grad[axis], epsilon = 1e-8);
        }
    }

    #[test]
    fn grin_frame_is_applied() {
        let g = GrinMedium::anterior_lens().with_frame(SurfacePose::at_z(10.0));
        let (n, _) = g.index_and_gradient(&Vec3::new(0.0, 0.0, 10.0));
        assert_abs_diff_eq!(n, 1.371, epsilon = 1e-15);
        assert!(grin_index_and_gradient(&Material::air(), &Vec3::zeros()).is_err());
    }
}
