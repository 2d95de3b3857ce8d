//! Topological feature vectors of protein-ligand complexes: for every
//! element-pair cloud and isovalue, `β₀` and the smallest non-zero
//! eigenvalues of the BIG Laplacian of 3-forms under the normal condition.

use std::io::{Read, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::eigen::SolverOptions;
use crate::error::{Error, Result};
use crate::field::{AtomSite, Element, RawSamples, ScalarField};
use crate::grid::GridComplex;
use crate::laplacian::{LaplacianKind, OperatorSet};
use crate::molio::{pair_clouds, pair_labels, AtomPairCloud, MolecularStructure, DEFAULT_CUTOFF, PAIR_COUNT};
use crate::presets::linspace;
use crate::spectrum::laplacian_spectrum;
use crate::support::BoundaryCondition;
use crate::topology::component_cell_counts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub isovalues: Vec<f64>,
    /// Non-zero eigenvalues recorded per manifold.
    pub k: usize,
    /// Width factor of the FRI Gaussians.
    pub tau: f64,
    /// Base grid spacing in Å.
    pub spacing: f64,
    /// Inside 3-cells each connected component must hold.
    pub min_cells: usize,
    /// Spacing halvings allowed to reach `min_cells`.
    pub max_halvings: usize,
    pub cutoff: f64,
    /// Fill for eigenvalues that do not exist (too few cells) and for empty
    /// clouds.
    pub pad_value: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            isovalues: linspace(-0.5, -0.001, 9),
            k: 5,
            tau: 1.0,
            spacing: 0.8,
            min_cells: 8,
            max_halvings: 2,
            cutoff: DEFAULT_CUTOFF,
            pad_value: 0.0,
        }
    }
}

impl FeatureConfig {
    pub fn with_k(k: usize) -> Self {
        FeatureConfig {
            k,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.isovalues.is_empty() {
            return Err(Error::InvalidArgument("at least one isovalue is required".into()));
        }
        if let Some(c) = self.isovalues.iter().find(|c| !(c.is_finite() && **c < 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "FRI isovalues must be negative and finite, got {c}"
            )));
        }
        for (v, what) in [(self.tau, "tau"), (self.spacing, "spacing"), (self.cutoff, "cutoff")] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{what} must be positive, got {v}")));
            }
        }
        if !self.pad_value.is_finite() {
            return Err(Error::InvalidArgument("pad value must be finite".into()));
        }
        Ok(())
    }

    /// Entries per (pair, isovalue): `β₀` then `k` eigenvalues.
    pub fn block_width(&self) -> usize {
        self.k + 1
    }

    pub fn pair_width(&self) -> usize {
        self.block_width() * self.isovalues.len()
    }

    pub fn row_len(&self) -> usize {
        self.pair_width() * PAIR_COUNT
    }

    /// Descriptive name of every column, pair-major, then isovalue, then
    /// `beta0, lambda1..lambda_k`.
    pub fn column_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.row_len());
        for pair in pair_labels() {
            for i in 0..self.isovalues.len() {
                out.push(format!("{pair}:c{i}:beta0"));
                out.extend((1..=self.k).map(|j| format!("{pair}:c{i}:lambda{j}")));
            }
        }
        out
    }
}

/// Features of one element-pair cloud over all isovalues.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBlock {
    pub label: String,
    pub empty: bool,
    /// Isovalue-major blocks of `β₀, λ₁..λ_k`.
    pub values: Vec<f64>,
    /// Spacing used at each isovalue (empty for an empty cloud).
    pub spacings: Vec<f64>,
}

/// How far beyond the atoms the sublevel set `{ρ ≤ c}` can reach: outside
/// this distance from every atom `Σ exp(−d²/(τr)²) < |c|`.
pub fn fri_reach(atoms: &[AtomSite], tau: f64, c: f64) -> f64 {
    let r_max = atoms.iter().map(|a| a.vdw_radius).fold(0.0, f64::max);
    let ratio = atoms.len() as f64 / c.abs();
    tau * r_max * ratio.ln().max(0.0).sqrt()
}

/// Grid anchored at the atoms' bounding-box corner, padded by the reach of
/// the largest isovalue plus two spacings.
pub fn pair_grid(atoms: &[AtomSite], tau: f64, max_isovalue: f64, spacing: f64) -> Result<GridComplex> {
    if atoms.is_empty() {
        return Err(Error::InvalidArgument("cannot place a grid around no atoms".into()));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for a in atoms {
        for i in 0..3 {
            lo[i] = lo[i].min(a.position[i]);
            hi[i] = hi[i].max(a.position[i]);
        }
    }
    let margin = fri_reach(atoms, tau, max_isovalue) + 2.0 * spacing;
    let dims = [0, 1, 2].map(|i| ((hi[i] - lo[i] + 2.0 * margin) / spacing).ceil() as usize + 1);
    GridComplex::new(dims, spacing, lo.map(|x| x - margin))
}

fn resolved(counts: &[usize], min_cells: usize) -> bool {
    counts.iter().all(|&c| c >= min_cells)
}

/// `β₀` and the first `k` non-zero eigenvalues of `L_{3,n}` (BIG) at every
/// isovalue. The spacing is halved at an isovalue until every component
/// holds `min_cells` inside cells.
pub fn featurize_pair(cloud: &AtomPairCloud, config: &FeatureConfig) -> Result<PairBlock> {
    config.validate()?;
    let label = cloud.label();
    let n_iso = config.isovalues.len();
    if cloud.is_empty() {
        return Ok(PairBlock {
            label,
            empty: true,
            values: vec![config.pad_value; config.pair_width()],
            spacings: vec![],
        });
    }
    let mut atoms = cloud.atoms.clone();
    atoms.sort_by(crate::molio::canonical_order);
    let field = ScalarField::fri_density(atoms.clone(), config.tau)?;
    let c_max = config.isovalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut results: Vec<Option<(Vec<f64>, f64)>> = vec![None; n_iso];
    let opts = SolverOptions::default();
    for h in 0..=config.max_halvings {
        let pending: Vec<usize> = (0..n_iso).filter(|&i| results[i].is_none()).collect();
        if pending.is_empty() {
            break;
        }
        let spacing = config.spacing / f64::powi(2.0, h as i32);
        let grid = Arc::new(pair_grid(&atoms, config.tau, c_max, spacing)?);
        let samples = RawSamples::evaluate(&field, grid);
        let done: Vec<(usize, Option<Vec<f64>>)> = pending
            .par_iter()
            .map(|&i| {
                let sampled = samples.at_isovalue(config.isovalues[i]);
                if !resolved(&component_cell_counts(&sampled), config.min_cells) {
                    return Ok((i, None));
                }
                let ops = OperatorSet::build_big_only(Arc::new(sampled), BoundaryCondition::Normal)?;
                let s = laplacian_spectrum(&ops, 3, LaplacianKind::Big, config.k, &opts)?;
                let mut block = vec![config.pad_value; config.block_width()];
                block[0] = s.kernel_dim as f64;
                for (slot, v) in block[1..].iter_mut().zip(&s.nonzero_eigenvalues) {
                    *slot = *v;
                }
                Ok((i, Some(block)))
            })
            .collect::<Result<_>>()?;
        for (i, block) in done {
            if let Some(b) = block {
                results[i] = Some((b, spacing));
            }
        }
    }
    if let Some(i) = results.iter().position(|r| r.is_none()) {
        return Err(Error::ResolutionLimit {
            pair: label,
            message: format!(
                "a component at isovalue {} holds fewer than {} cells after {} halvings of spacing {}",
                config.isovalues[i], config.min_cells, config.max_halvings, config.spacing
            ),
        });
    }
    let mut values = Vec::with_capacity(config.pair_width());
    let mut spacings = Vec::with_capacity(n_iso);
    for (b, s) in results.into_iter().flatten() {
        values.extend(b);
        spacings.push(s);
    }
    Ok(PairBlock {
        label,
        empty: false,
        values,
        spacings,
    })
}

/// Feature row of one complex.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub values: Vec<f64>,
    /// Labels of pairs whose cloud was empty.
    pub empty_pairs: Vec<String>,
}

/// The 40 pair blocks of a complex concatenated in pair order.
pub fn featurize_complex(
    id: &str,
    protein: &MolecularStructure,
    ligand: &MolecularStructure,
    config: &FeatureConfig,
) -> Result<FeatureRow> {
    config.validate()?;
    let clouds = pair_clouds(protein, ligand, config.cutoff)?;
    let blocks: Vec<PairBlock> = clouds
        .par_iter()
        .map(|c| {
            featurize_pair(c, config).map_err(|e| match e {
                e @ Error::ResolutionLimit { .. } => e,
                other => Error::InvalidState(format!("pair {}: {other}", c.label())),
            })
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(config.row_len());
    let mut empty_pairs = Vec::new();
    for b in blocks {
        if b.empty {
            empty_pairs.push(b.label);
        }
        values.extend(b.values);
    }
    Ok(FeatureRow {
        id: id.to_string(),
        values,
        empty_pairs,
    })
}

/// Rows of equal width with their complex ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureMatrix {
    pub ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn width(&self) -> Option<usize> {
        self.values.first().map(Vec::len)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(&mut self, id: impl Into<String>, row: Vec<f64>) -> Result<()> {
        if let Some(w) = self.width() {
            if w != row.len() {
                return Err(Error::InvalidArgument(format!(
                    "row of width {} does not match width {w}",
                    row.len()
                )));
            }
        }
        self.ids.push(id.into());
        self.values.push(row);
        Ok(())
    }

    pub fn push_row(&mut self, row: FeatureRow) -> Result<()> {
        self.push(row.id, row.values)
    }
}

struct Counter<W> {
    inner: W,
    bytes: usize,
}

impl<W: Write> Write for Counter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.bytes += n;
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

/// CSV `id,f_000000,f_000001,…` with shortest round-trip decimals. Returns
/// the number of bytes written.
pub fn write_features<W: Write>(m: &FeatureMatrix, w: W) -> std::io::Result<usize> {
    let width = m.width().unwrap_or(0);
    let mut out = csv::Writer::from_writer(Counter { inner: w, bytes: 0 });
    let mut header = Vec::with_capacity(width + 1);
    header.push("id".to_string());
    header.extend((0..width).map(|j| format!("f_{j:06}")));
    out.write_record(&header)?;
    for (id, row) in m.ids.iter().zip(&m.values) {
        if row.len() != width {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "ragged feature matrix",
            ));
        }
        let mut rec = Vec::with_capacity(width + 1);
        rec.push(id.clone());
        rec.extend(row.iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    let counter = out.into_inner().map_err(|e| e.into_error())?;
    Ok(counter.bytes)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

pub fn read_features<R: Read>(r: R) -> Result<FeatureMatrix> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.get(0) != Some("id") {
        return Err(Error::Parse {
            line: 1,
            message: "feature CSV must start with an `id` column".into(),
        });
    }
    let mut m = FeatureMatrix::default();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = i + 2;
        let row = rec
            .iter()
            .skip(1)
            .map(|s| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("invalid feature value `{s}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        m.push(rec.get(0).unwrap_or_default(), row)?;
    }
    Ok(m)
}

/// Companion `id,label` CSV.
pub fn write_labels<W: Write>(labels: &[(String, f64)], w: W) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["id", "label"])?;
    for (id, y) in labels {
        out.write_record([id.clone(), y.to_string()])?;
    }
    out.flush()
}

pub fn read_labels<R: Read>(r: R) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let (Some(id), Some(y)) = (rec.get(0), rec.get(1)) else {
            return Err(Error::Parse {
                line: i + 2,
                message: "expected `id,label`".into(),
            });
        };
        let y: f64 = y.trim().parse().map_err(|_| Error::Parse {
            line: i + 2,
            message: format!("label `{y}` is not a number"),
        })?;
        out.push((id.to_string(), y));
    }
    Ok(out)
}

/// Settings needed to reproduce a feature file.
pub fn manifest(config: &FeatureConfig) -> serde_json::Value {
    let radii: serde_json::Map<String, serde_json::Value> = Element::ALL
        .iter()
        .map(|e| (e.symbol().to_string(), json!(e.vdw_radius())))
        .collect();
    json!({
        "software": "hodgegrid",
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "row_length": config.row_len(),
        "pairs": pair_labels(),
        "column_order": "pair, then isovalue, then beta0 and lambda1..lambda_k",
        "laplacian": "BIG, 3-forms, normal boundary condition",
        "grid": "spacing as configured, anchored at the cloud bounding-box corner, margin = FRI reach at the largest isovalue + 2 spacings",
        "vdw_radii": radii,
    })
}
