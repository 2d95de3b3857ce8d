//! Analytic test shapes and grids that enclose them.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{AtomSite, Element, ScalarField};
use crate::grid::GridComplex;
use crate::molio::{MolecularStructure, ParseReport, Role};

/// Edge length of the tetrahedron carrying the four unit balls. With the
/// blend below, the isovalue range 2 to 3.84 passes through merging
/// (c ≈ 2.86), tunnel death (c ≈ 3.35) and cavity death (c ≈ 3.55), and a
/// 20-level sweep on a 48³ grid samples each phase at least twice.
pub const FOUR_BALL_EDGE: f64 = 8.2;

/// Blend width of the four-ball union. A hard minimum leaves zero-radius
/// creases where balls meet; vertex sampling turns those into spurious
/// tunnels and cavities at every resolution.
pub const FOUR_BALL_BLEND: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Sphere SDF of the given radius at the origin.
    Ball { radius: f64 },
    /// Spherical shell `inner ≤ |x| ≤ outer`.
    Shell { inner: f64, outer: f64 },
    /// Solid torus around the z axis.
    Torus { major: f64, minor: f64 },
    /// Four unit balls at alternating corners of a cube (a regular
    /// tetrahedron), joined by a soft minimum of width `blend`.
    FourBalls { edge: f64, blend: f64 },
    /// Union of six random balls inside the unit cube.
    Blob { seed: u64 },
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Ball { .. } => "ball",
            Shape::Shell { .. } => "shell",
            Shape::Torus { .. } => "torus",
            Shape::FourBalls { .. } => "fourballs",
            Shape::Blob { .. } => "blob",
        }
    }

    /// Default instance of a named shape.
    pub fn by_name(name: &str) -> Result<Shape> {
        name.parse()
    }

    pub fn field(&self) -> Result<ScalarField> {
        match *self {
            Shape::Ball { radius } => ScalarField::sphere([0.0; 3], radius),
            Shape::Shell { inner, outer } => ScalarField::shell([0.0; 3], inner, outer),
            Shape::Torus { major, minor } => ScalarField::torus([0.0; 3], major, minor),
            Shape::FourBalls { edge, blend } => {
                if !(edge > 0.0) {
                    return Err(Error::InvalidArgument("tetrahedron edge must be positive".into()));
                }
                ScalarField::smooth_ball_union(four_ball_centers(edge).to_vec(), vec![1.0; 4], blend)
            }
            Shape::Blob { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut centers = Vec::new();
                let mut radii = Vec::new();
                for _ in 0..6 {
                    centers.push([0; 3].map(|_: i32| rng.random_range(-0.5..0.5)));
                    radii.push(rng.random_range(0.3..0.55));
                }
                ScalarField::ball_union(centers, radii)
            }
        }
    }

    /// Half side of a cube centered at the origin containing the sublevel set
    /// `{f ≤ c}` for every `c ≤ max_isovalue`.
    pub fn extent(&self, max_isovalue: f64) -> f64 {
        let grow = max_isovalue.max(0.0);
        match *self {
            Shape::Ball { radius } => radius + grow,
            Shape::Shell { outer, .. } => outer + grow,
            Shape::Torus { major, minor } => major + minor + grow,
            Shape::FourBalls { edge, blend } => edge / 8f64.sqrt() + 1.0 + blend * 4f64.ln() + grow,
            Shape::Blob { .. } => 0.5 * 3f64.sqrt() + 0.55 + grow,
        }
    }

    /// Grid with `resolution` vertices per axis whose margin around the
    /// sublevel set at `max_isovalue` is at least two spacings. An odd
    /// resolution puts a vertex at the origin.
    pub fn grid_with_resolution(&self, resolution: usize, max_isovalue: f64) -> Result<GridComplex> {
        if resolution < 6 {
            return Err(Error::InvalidArgument("resolution must be at least 6".into()));
        }
        let e = self.extent(max_isovalue);
        // h = e + 2ℓ with ℓ = 2h/(n−1).
        let n = resolution as f64;
        let h = e * (n - 1.0) / (n - 5.0);
        let spacing = 2.0 * h / (n - 1.0);
        GridComplex::new([resolution; 3], spacing, [-h; 3])
    }

    /// Grid of the given spacing, centered at the origin, margin ≥ 2ℓ.
    pub fn grid_with_spacing(&self, spacing: f64, max_isovalue: f64) -> Result<GridComplex> {
        let e = self.extent(max_isovalue) + 2.0 * spacing;
        GridComplex::centered([0.0; 3], [e; 3], spacing)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Shape> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "ball" | "sphere" => Shape::Ball { radius: 1.0 },
            "shell" => Shape::Shell { inner: 0.5, outer: 1.0 },
            "torus" => Shape::Torus { major: 1.0, minor: 0.4 },
            "fourballs" | "four-balls" => Shape::FourBalls {
                edge: FOUR_BALL_EDGE,
                blend: FOUR_BALL_BLEND,
            },
            "blob" => Shape::Blob { seed: 7 },
            _ => return Err(Error::InvalidArgument(format!("unknown shape `{s}`"))),
        })
    }
}

/// Alternating corners `(±s, ±s, ±s)` with an even number of minus signs,
/// `s = edge / (2√2)`.
pub fn four_ball_centers(edge: f64) -> [[f64; 3]; 4] {
    let s = edge / 8f64.sqrt();
    [[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]]
}

/// `count` evenly spaced values from `start` to `end` inclusive.
pub fn linspace(start: f64, end: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![start],
        _ => (0..count)
            .map(|i| {
                if i == count - 1 {
                    end
                } else {
                    start + (end - start) * i as f64 / (count - 1) as f64
                }
            })
            .collect(),
    }
}

/// A small random protein-ligand complex: `protein_atoms` atoms drawn from
/// C, N, O, S and H in a 10 Å box, and `ligand_atoms` atoms drawn from the
/// ligand elements in a 5 Å box at its center.
pub fn synthetic_complex(
    seed: u64,
    protein_atoms: usize,
    ligand_atoms: usize,
) -> (MolecularStructure, MolecularStructure) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prot = [Element::C, Element::C, Element::N, Element::O, Element::S, Element::H];
    let lig = [
        Element::C,
        Element::C,
        Element::N,
        Element::O,
        Element::H,
        Element::F,
        Element::Cl,
        Element::P,
    ];
    let mut make = |n: usize, pool: &[Element], half: f64, role: Role| {
        let atoms: Vec<AtomSite> = (0..n)
            .map(|_| {
                let e = pool[rng.random_range(0..pool.len())];
                AtomSite::new(e, [0; 3].map(|_: i32| rng.random_range(-half..half)))
            })
            .collect();
        MolecularStructure {
            id: format!("synthetic-{seed}"),
            role,
            report: ParseReport {
                atoms: atoms.len(),
                ..Default::default()
            },
            atoms,
        }
    };
    let protein = make(protein_atoms, &prot, 5.0, Role::Protein);
    let ligand = make(ligand_atoms, &lig, 2.5, Role::Ligand);
    (protein, ligand)
}
