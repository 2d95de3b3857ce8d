//! Level-set functions and their samples on primal and dual grid points.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridComplex, DIM};

/// Elements with a tabulated van der Waals radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    H,
    C,
    N,
    O,
    S,
    P,
    F,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 10] = [
        Element::H,
        Element::C,
        Element::N,
        Element::O,
        Element::S,
        Element::P,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    /// Bondi van der Waals radius in Å.
    pub fn vdw_radius(self) -> f64 {
        match self {
            Element::H => 1.20,
            Element::C => 1.70,
            Element::N => 1.55,
            Element::O => 1.52,
            Element::S => 1.80,
            Element::P => 1.80,
            Element::F => 1.47,
            Element::Cl => 1.75,
            Element::Br => 1.85,
            Element::I => 1.98,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::S => "S",
            Element::P => "P",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    /// Case-insensitive symbol lookup.
    pub fn from_symbol(s: &str) -> Option<Element> {
        let s = s.trim();
        Element::ALL.into_iter().find(|e| e.symbol().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomSite {
    pub position: [f64; 3],
    pub element: Element,
    pub vdw_radius: f64,
}

impl AtomSite {
    pub fn new(element: Element, position: [f64; 3]) -> Self {
        AtomSite {
            position,
            element,
            vdw_radius: element.vdw_radius(),
        }
    }
}

/// Scalar samples on a grid's vertices, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedVolume {
    pub dims: [usize; 3],
    pub spacing: f64,
    pub origin: [f64; 3],
    pub values: Vec<f64>,
}

impl TabulatedVolume {
    pub fn grid(&self) -> Result<GridComplex> {
        GridComplex::new(self.dims, self.spacing, self.origin)
    }

    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    /// Trilinear interpolation, clamped to the tabulated box.
    pub fn interpolate(&self, p: [f64; 3]) -> f64 {
        let mut cell = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..DIM {
            let u = ((p[a] - self.origin[a]) / self.spacing).clamp(0.0, (self.dims[a] - 1) as f64);
            let i = (u.floor() as usize).min(self.dims[a] - 2);
            cell[a] = i;
            t[a] = u - i as f64;
        }
        let mut v = 0.0;
        for bits in 0..8 {
            let mut w = 1.0;
            let mut idx = cell;
            for a in 0..DIM {
                if bits & (1 << a) != 0 {
                    w *= t[a];
                    idx[a] += 1;
                } else {
                    w *= 1.0 - t[a];
                }
            }
            if w != 0.0 {
                v += w * self.at(idx[0], idx[1], idx[2]);
            }
        }
        v
    }

    /// Reads the `DIMS nx ny nz SPACING l ORIGIN ox oy oz` text format.
    pub fn read<R: BufRead>(reader: R) -> Result<TabulatedVolume> {
        let mut header: Option<(usize, String)> = None;
        let mut values = Vec::new();
        for (ln, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse {
                line: ln + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            if header.is_none() {
                header = Some((ln + 1, line));
                continue;
            }
            for tok in line.split_whitespace() {
                values.push(tok.parse::<f64>().map_err(|_| Error::Parse {
                    line: ln + 1,
                    message: format!("bad value `{tok}`"),
                })?);
            }
        }
        let (hl, header) = header.ok_or(Error::Parse {
            line: 1,
            message: "missing DIMS header".into(),
        })?;
        let bad = |m: &str| Error::Parse {
            line: hl,
            message: m.to_string(),
        };
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 10 || f[0] != "DIMS" || f[4] != "SPACING" || f[6] != "ORIGIN" {
            return Err(bad("expected `DIMS nx ny nz SPACING l ORIGIN ox oy oz`"));
        }
        let n = |s: &str| s.parse::<usize>().map_err(|_| bad("bad dimension"));
        let x = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let vol = TabulatedVolume {
            dims: [n(f[1])?, n(f[2])?, n(f[3])?],
            spacing: x(f[5])?,
            origin: [x(f[7])?, x(f[8])?, x(f[9])?],
            values,
        };
        vol.grid().map_err(|e| bad(&e.to_string()))?;
        let expect: usize = vol.dims.iter().product();
        if vol.values.len() != expect {
            return Err(Error::Parse {
                line: hl,
                message: format!("expected {expect} values, found {}", vol.values.len()),
            });
        }
        Ok(vol)
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let [nx, ny, nz] = self.dims;
        let [ox, oy, oz] = self.origin;
        writeln!(w, "DIMS {nx} {ny} {nz} SPACING {} ORIGIN {ox} {oy} {oz}", self.spacing)?;
        for row in self.values.chunks(nx) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// A level-set function on ℝ³.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarField {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Minimum over member ball SDFs.
    BallUnion {
        centers: Vec<[f64; 3]>,
        radii: Vec<f64>,
    },
    /// Soft minimum `−w·ln Σ exp(−d_i/w)` of member ball SDFs `d_i`. Agrees
    /// with the hard minimum away from the creases where balls meet and
    /// rounds those creases over a width of order `w`.
    SmoothBallUnion {
        centers: Vec<[f64; 3]>,
        radii: Vec<f64>,
        width: f64,
    },
    /// Ring in the plane normal to z through `center`.
    Torus {
        center: [f64; 3],
        major: f64,
        minor: f64,
    },
    /// Spherical shell between two radii.
    Shell {
        center: [f64; 3],
        inner: f64,
        outer: f64,
    },
    /// Negative sum of atom-centered Gaussians.
    Fri {
        atoms: Vec<AtomSite>,
        tau: f64,
    },
    Tabulated(TabulatedVolume),
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl ScalarField {
    pub fn sphere(center: [f64; 3], radius: f64) -> Result<Self> {
        positive(radius, "radius")?;
        Ok(ScalarField::Sphere { center, radius })
    }

    pub fn ball_union(centers: Vec<[f64; 3]>, radii: Vec<f64>) -> Result<Self> {
        if centers.is_empty() || centers.len() != radii.len() {
            return Err(Error::InvalidArgument(
                "ball union needs one radius per center and at least one ball".into(),
            ));
        }
        for &r in &radii {
            positive(r, "radius")?;
        }
        Ok(ScalarField::BallUnion { centers, radii })
    }

    pub fn smooth_ball_union(centers: Vec<[f64; 3]>, radii: Vec<f64>, width: f64) -> Result<Self> {
        positive(width, "blend width")?;
        match Self::ball_union(centers, radii)? {
            ScalarField::BallUnion { centers, radii } => Ok(ScalarField::SmoothBallUnion { centers, radii, width }),
            _ => unreachable!(),
        }
    }

    pub fn torus(center: [f64; 3], major: f64, minor: f64) -> Result<Self> {
        positive(major, "major radius")?;
        positive(minor, "minor radius")?;
        Ok(ScalarField::Torus { center, major, minor })
    }

    pub fn shell(center: [f64; 3], inner: f64, outer: f64) -> Result<Self> {
        positive(inner, "inner radius")?;
        positive(outer - inner, "shell thickness")?;
        Ok(ScalarField::Shell { center, inner, outer })
    }

    /// FRI density ρ(x) = −Σ exp(−(‖x − x_i‖ / (τ r_i))²).
    pub fn fri_density(atoms: Vec<AtomSite>, tau: f64) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidArgument("FRI density needs at least one atom".into()));
        }
        positive(tau, "tau")?;
        for a in &atoms {
            positive(a.vdw_radius, "van der Waals radius")?;
            if a.position.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument("atom position must be finite".into()));
            }
        }
        Ok(ScalarField::Fri { atoms, tau })
    }

    pub fn value(&self, p: [f64; 3]) -> f64 {
        match self {
            ScalarField::Sphere { center, radius } => dist(p, *center) - radius,
            ScalarField::BallUnion { centers, radii } => centers
                .iter()
                .zip(radii)
                .map(|(c, r)| dist(p, *c) - r)
                .fold(f64::INFINITY, f64::min),
            ScalarField::SmoothBallUnion { centers, radii, width } => {
                let d: Vec<f64> = centers.iter().zip(radii).map(|(c, r)| dist(p, *c) - r).collect();
                let m = d.iter().copied().fold(f64::INFINITY, f64::min);
                let s: f64 = d.iter().map(|x| (-(x - m) / width).exp()).sum();
                m - width * s.ln()
            }
            ScalarField::Torus { center, major, minor } => {
                let d = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
                let q = (d[0] * d[0] + d[1] * d[1]).sqrt() - major;
                (q * q + d[2] * d[2]).sqrt() - minor
            }
            ScalarField::Shell { center, inner, outer } => {
                let mid = 0.5 * (inner + outer);
                (dist(p, *center) - mid).abs() - 0.5 * (outer - inner)
            }
            ScalarField::Fri { atoms, tau } => {
                let mut s = 0.0;
                for a in atoms {
                    let w = tau * a.vdw_radius;
                    let d2 = (p[0] - a.position[0]).powi(2)
                        + (p[1] - a.position[1]).powi(2)
                        + (p[2] - a.position[2]).powi(2);
                    let e = d2 / (w * w);
                    if e < 700.0 {
                        s += (-e).exp();
                    }
                }
                -s
            }
            ScalarField::Tabulated(t) => t.interpolate(p),
        }
    }
}

fn positive(x: f64, what: &str) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} must be positive, got {x}")))
    }
}

/// Unperturbed field values at primal vertices and dual vertices (3-cell centers).
#[derive(Debug, Clone)]
pub struct RawSamples {
    pub grid: Arc<GridComplex>,
    pub primal: Vec<f64>,
    pub dual: Vec<f64>,
}

impl RawSamples {
    pub fn evaluate(field: &ScalarField, grid: Arc<GridComplex>) -> RawSamples {
        let [nx, ny, _] = grid.dims();
        let primal: Vec<f64> = (0..grid.num_vertices())
            .into_par_iter()
            .map(|i| {
                let v = [i % nx, (i / nx) % ny, i / (nx * ny)];
                field.value(grid.vertex_position(v))
            })
            .collect();
        let dual: Vec<f64> = (0..grid.num_cells(3))
            .into_par_iter()
            .map(|i| field.value(grid.cell_center(grid.cell(3, i))))
            .collect();
        RawSamples { grid, primal, dual }
    }

    /// Samples on the vertices of a tabulated volume; dual values are the
    /// trilinear interpolant at cell centers (the mean of the eight corners).
    pub fn from_tabulated(vol: &TabulatedVolume) -> Result<RawSamples> {
        let grid = Arc::new(vol.grid()?);
        let dual = (0..grid.num_cells(3))
            .map(|i| {
                let c = grid.cell(3, i);
                grid.cell_vertices(c).iter().map(|&v| vol.values[v]).sum::<f64>() / 8.0
            })
            .collect();
        Ok(RawSamples {
            grid,
            primal: vol.values.clone(),
            dual,
        })
    }

    pub fn at_isovalue(&self, isovalue: f64) -> SampledField {
        SampledField::from_values(self.grid.clone(), self.primal.clone(), self.dual.clone(), isovalue)
    }
}

/// Field samples thresholded at an isovalue `c`; the sublevel set is `{f ≤ c}`.
#[derive(Debug, Clone)]
pub struct SampledField {
    grid: Arc<GridComplex>,
    primal: Vec<f64>,
    dual: Vec<f64>,
    isovalue: f64,
    epsilon: f64,
    near_boundary: bool,
}

/// Pushes values within `eps` of `c` to distance `eps`, keeping their side;
/// exact ties go outside.
pub fn perturb(v: f64, c: f64, eps: f64) -> f64 {
    let d = v - c;
    if d >= 0.0 && d < eps {
        c + eps
    } else if d < 0.0 && d > -eps {
        c - eps
    } else {
        v
    }
}

impl SampledField {
    pub fn from_values(grid: Arc<GridComplex>, mut primal: Vec<f64>, mut dual: Vec<f64>, isovalue: f64) -> Self {
        assert_eq!(primal.len(), grid.num_vertices());
        assert_eq!(dual.len(), grid.num_cells(3));
        let eps = 1e-5 * grid.spacing();
        for v in primal.iter_mut().chain(dual.iter_mut()) {
            *v = perturb(*v, isovalue, eps);
        }
        let near_boundary = touches_boundary(&grid, &primal, &dual, isovalue);
        SampledField {
            grid,
            primal,
            dual,
            isovalue,
            epsilon: eps,
            near_boundary,
        }
    }

    pub fn grid(&self) -> &Arc<GridComplex> {
        &self.grid
    }

    pub fn primal_values(&self) -> &[f64] {
        &self.primal
    }

    pub fn dual_values(&self) -> &[f64] {
        &self.dual
    }

    pub fn isovalue(&self) -> f64 {
        self.isovalue
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn primal_inside(&self, v: usize) -> bool {
        self.primal[v] <= self.isovalue
    }

    pub fn dual_inside(&self, c: usize) -> bool {
        self.dual[c] <= self.isovalue
    }

    /// Set when the sublevel set reaches the outermost layer of grid points,
    /// in which case it is not separated from the grid boundary by a spacing.
    pub fn near_boundary(&self) -> bool {
        self.near_boundary
    }

    /// The same samples viewed from the dual grid: its vertices carry this
    /// field's dual values and its 3-cell centers (the interior primal
    /// vertices) carry primal values.
    pub fn dual_view(&self) -> Result<SampledField> {
        let dual_grid = Arc::new(self.grid.dual_grid()?);
        if dual_grid.dims().iter().any(|&n| n < 3) {
            return Err(Error::InvalidArgument(
                "dual view needs at least 3 vertices per axis".into(),
            ));
        }
        let inner: Vec<f64> = (0..dual_grid.num_cells(3))
            .map(|i| {
                let c = dual_grid.cell(3, i);
                let v = c.base.map(|b| b + 1);
                self.primal[self.grid.vertex_index(v)]
            })
            .collect();
        Ok(SampledField::from_values(
            dual_grid,
            self.dual.clone(),
            inner,
            self.isovalue,
        ))
    }
}

fn touches_boundary(grid: &GridComplex, primal: &[f64], dual: &[f64], c: f64) -> bool {
    let dims = grid.dims();
    let on_face = |b: [usize; 3], ext: [usize; 3]| (0..DIM).any(|a| b[a] == 0 || b[a] + 1 == ext[a]);
    let [nx, ny, _] = dims;
    let vertex_hit = primal
        .iter()
        .enumerate()
        .any(|(i, &v)| v <= c && on_face([i % nx, (i / nx) % ny, i / (nx * ny)], dims));
    let ext = grid.extents(0b111);
    vertex_hit
        || dual
            .iter()
            .enumerate()
            .any(|(i, &v)| v <= c && on_face([i % ext[0], (i / ext[0]) % ext[1], i / (ext[0] * ext[1])], ext))
}

pub fn sample_on_grid(field: &ScalarField, grid: Arc<GridComplex>, isovalue: f64) -> SampledField {
    RawSamples::evaluate(field, grid).at_isovalue(isovalue)
}
