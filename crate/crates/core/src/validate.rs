//! Self-checks against independent oracles at small sizes, for running on an
//! installed binary. The integration tests cover the same ground at full size.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::eigen::{smallest_eigenpairs, zero_threshold, SolverOptions};
use crate::features::{featurize_complex, read_features, write_features, FeatureConfig, FeatureMatrix};
use crate::field::{RawSamples, SampledField};
use crate::grid::GridComplex;
use crate::laplacian::{LaplacianKind, OperatorSet};
use crate::molio::{pair_clouds, parse_structure, Role, StructureFormat, DEFAULT_CUTOFF, PAIR_COUNT};
use crate::persistence::{build_filtration, persistent_operators};
use crate::presets::{synthetic_complex, Shape};
use crate::spectrum::{betti_from_kernels, dense_oracle, laplacian_spectrum, squared_singular_values};
use crate::support::BoundaryCondition;
use crate::topology::{betti_numbers, surviving_components};

const KINDS: [LaplacianKind; 2] = [LaplacianKind::Hodge, LaplacianKind::Big];

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type Check = fn() -> std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn ops_for(shape: Shape, resolution: usize) -> OperatorSet {
    let grid = Arc::new(shape.grid_with_resolution(resolution, 0.0).expect("valid grid"));
    let sampled = RawSamples::evaluate(&shape.field().expect("valid shape"), grid).at_isovalue(0.0);
    OperatorSet::build(Arc::new(sampled), BoundaryCondition::Normal).expect("operators build")
}

fn nilpotency() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10 {
        let dims = [(); 3].map(|_| rng.random_range(3..=10));
        let grid = Arc::new(GridComplex::new(dims, 1.0, [0.0; 3]).expect("valid grid"));
        for k in 0..2 {
            let p = grid
                .boundary_matrix(k + 1)
                .expect("k ≤ 2")
                .matmul(grid.boundary_matrix(k).expect("k ≤ 2"));
            ensure(p.triplets().all(|(_, _, v)| v == 0), || {
                format!("D{}D{k} ≠ 0 on {dims:?}", k + 1)
            })?;
        }
        let primal = (0..grid.num_vertices()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dual = (0..grid.num_cells(3)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sampled = Arc::new(SampledField::from_values(grid, primal, dual, 0.0));
        for bc in [BoundaryCondition::Normal, BoundaryCondition::Tangential] {
            let ops = OperatorSet::build_big_only(sampled.clone(), bc).map_err(|e| e.to_string())?;
            for k in 0..2 {
                let p = ops
                    .differential(k + 1)
                    .expect("k ≤ 2")
                    .matmul(ops.differential(k).expect("k ≤ 2"));
                ensure(p.triplets().all(|(_, _, v)| v == 0), || {
                    format!("restricted D{}D{k} ≠ 0 ({bc})", k + 1)
                })?;
            }
        }
    }
    Ok("10 grids, full and restricted products exactly zero".into())
}

fn betti() -> std::result::Result<String, String> {
    let cases = [
        (Shape::Ball { radius: 1.0 }, [1, 0, 0]),
        (Shape::Shell { inner: 0.5, outer: 1.0 }, [1, 0, 1]),
        (Shape::Torus { major: 1.0, minor: 0.4 }, [1, 1, 0]),
    ];
    for (shape, expect) in cases {
        let ops = ops_for(shape, 21);
        let oracle = betti_numbers(ops.sampled());
        ensure(oracle == expect, || format!("{shape}: flood fill {oracle:?}"))?;
        for kind in KINDS {
            let b = betti_from_kernels(&ops, kind, &SolverOptions::default()).map_err(|e| e.to_string())?;
            ensure(b == expect, || format!("{shape} {kind}: kernels {b:?}"))?;
        }
    }
    Ok("ball, shell and torus match the flood-fill oracle".into())
}

fn duality() -> std::result::Result<String, String> {
    let shape = Shape::Blob { seed: 7 };
    let grid = Arc::new(shape.grid_with_resolution(16, 0.0).expect("valid grid"));
    let sampled = RawSamples::evaluate(&shape.field().expect("valid shape"), grid).at_isovalue(0.0);
    let dual = sampled.dual_view().map_err(|e| e.to_string())?;
    let p = OperatorSet::build(Arc::new(sampled), BoundaryCondition::Normal).map_err(|e| e.to_string())?;
    let q = OperatorSet::build(Arc::new(dual), BoundaryCondition::Tangential).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for kind in KINDS {
        for k in 0..=3 {
            let a = laplacian_spectrum(&p, k, kind, 5, &SolverOptions::default()).map_err(|e| e.to_string())?;
            let b = laplacian_spectrum(&q, 3 - k, kind, 5, &SolverOptions::default()).map_err(|e| e.to_string())?;
            ensure(a.kernel_dim == b.kernel_dim, || format!("{kind} k={k}: kernels differ"))?;
            for (x, y) in a.nonzero_eigenvalues.iter().zip(&b.nonzero_eigenvalues) {
                worst = worst.max(rel(*x, *y));
            }
        }
    }
    ensure(worst <= 1e-8, || format!("relative gap {worst:.2e}"))?;
    Ok(format!("primal normal vs dual tangential, gap {worst:.1e}"))
}

fn singular_union() -> std::result::Result<String, String> {
    let ops = ops_for(Shape::Torus { major: 1.0, minor: 0.4 }, 10);
    let mut worst: f64 = 0.0;
    for kind in KINDS {
        for k in 0..=3 {
            let l = ops.spectral_matrix(k, kind).map_err(|e| e.to_string())?;
            let eig = dense_oracle(l, None).map_err(|e| e.to_string())?;
            let top = eig.last().copied().unwrap_or(0.0).max(1.0);
            let mut union = Vec::new();
            if k < 3 {
                union.extend(
                    squared_singular_values(&ops.symmetrized_differential(k, kind).map_err(|e| e.to_string())?)
                        .map_err(|e| e.to_string())?,
                );
            }
            if k > 0 {
                union.extend(
                    squared_singular_values(&ops.symmetrized_differential(k - 1, kind).map_err(|e| e.to_string())?)
                        .map_err(|e| e.to_string())?,
                );
            }
            union.retain(|&s| s > 1e-8 * top);
            union.resize(eig.len().max(union.len()), 0.0);
            union.sort_by(f64::total_cmp);
            ensure(union.len() == eig.len(), || format!("{kind} k={k}: count mismatch"))?;
            let gap = eig.iter().zip(&union).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / top;
            worst = worst.max(gap);
        }
    }
    ensure(worst <= 1e-8, || format!("gap {worst:.2e}"))?;
    Ok(format!(
        "Laplacian spectra are unions of squared singular values, gap {worst:.1e}"
    ))
}

fn eigensolver() -> std::result::Result<String, String> {
    let iterative = SolverOptions {
        dense_limit: 0,
        ..SolverOptions::default()
    };
    let mut count = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let ops = ops_for(Shape::Blob { seed }, 10);
        for k in 0..=3 {
            let m = ops.spectral_matrix(k, LaplacianKind::Big).map_err(|e| e.to_string())?;
            if m.nrows() < 20 {
                continue;
            }
            let dense = dense_oracle(m, None).map_err(|e| e.to_string())?;
            let thr = zero_threshold(m.gershgorin_bound());
            let kernel = dense.iter().filter(|&&x| x <= thr).count();
            let it = smallest_eigenpairs(m, 4, None, &iterative, false).map_err(|e| e.to_string())?;
            ensure(it.kernel_dim == kernel, || {
                format!("blob {seed} k={k}: kernel {} vs {kernel}", it.kernel_dim)
            })?;
            for (a, b) in it.values[kernel..].iter().zip(&dense[kernel..]) {
                worst = worst.max(rel(*a, *b));
            }
            count += 1;
        }
    }
    ensure(worst <= 1e-8, || format!("gap {worst:.2e}"))?;
    Ok(format!("{count} matrices, Lanczos vs dense gap {worst:.1e}"))
}

fn persistence() -> std::result::Result<String, String> {
    let shape = Shape::by_name("fourballs").map_err(|e| e.to_string())?;
    let grid = Arc::new(shape.grid_with_resolution(16, 3.84).map_err(|e| e.to_string())?);
    let f = build_filtration(&shape.field().map_err(|e| e.to_string())?, grid, &[2.0, 2.29, 2.6])
        .map_err(|e| e.to_string())?;
    let opts = SolverOptions::default();
    for k in 0..=3 {
        for kind in KINDS {
            let pair = persistent_operators(&f, 0, 0, k, kind).map_err(|e| e.to_string())?;
            let level = f.level(0).spectral_matrix(k, kind).map_err(|e| e.to_string())?;
            let gap = pair.spectral.add(&level.scaled(-1.0)).max_abs();
            ensure(gap <= 1e-12 * level.max_abs().max(1.0), || {
                format!("p=0 k={k} {kind}: gap {gap:.2e}")
            })?;
        }
    }
    for kind in KINDS {
        let dims: Vec<usize> = (0..f.len())
            .map(|p| {
                persistent_operators(&f, 0, p, 3, kind)
                    .and_then(|pair| pair.spectrum(&f, 1, &opts))
                    .map(|s| s.kernel_dim)
            })
            .collect::<crate::Result<_>>()
            .map_err(|e| e.to_string())?;
        let oracle: Vec<usize> = (0..f.len())
            .map(|p| surviving_components(f.level(0).sampled(), f.level(p).sampled()))
            .collect();
        ensure(dims == oracle, || {
            format!("{kind}: persistent β₀ {dims:?}, union-find {oracle:?}")
        })?;
    }
    Ok("p=0 collapse and persistent β₀ against union-find survival".into())
}

fn molecules() -> std::result::Result<String, String> {
    let pdb = "ATOM      1  N   MET A   1      10.000  20.000  30.000  1.00  0.00           N";
    let s = parse_structure(pdb, StructureFormat::Pdb, Role::Protein, "p").map_err(|e| e.to_string())?;
    ensure(s.atoms.len() == 1 && s.atoms[0].position == [10.0, 20.0, 30.0], || {
        "PDB columns misread".into()
    })?;
    ensure(
        parse_structure("Xx 0 0 0", StructureFormat::Xyz, Role::Ligand, "l").is_err(),
        || "unknown-only structure accepted".into(),
    )?;
    let (p, l) = synthetic_complex(3, 12, 6);
    let clouds = pair_clouds(&p, &l, DEFAULT_CUTOFF).map_err(|e| e.to_string())?;
    ensure(clouds.len() == PAIR_COUNT, || format!("{} clouds", clouds.len()))?;
    let small = pair_clouds(&p, &l, 3.0).map_err(|e| e.to_string())?;
    for (a, b) in small.iter().zip(&clouds) {
        ensure(a.atoms.iter().all(|x| b.atoms.contains(x)), || {
            "larger cutoff dropped an atom".into()
        })?;
    }
    Ok("parsers, 40 ordered clouds and cutoff monotonicity".into())
}

fn features() -> std::result::Result<String, String> {
    let (p, l) = synthetic_complex(5, 4, 2);
    let config = FeatureConfig::with_k(1);
    let row = featurize_complex("v", &p, &l, &config).map_err(|e| e.to_string())?;
    ensure(row.values.len() == config.row_len(), || {
        format!("row width {}", row.values.len())
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut pp, mut lp) = (p.clone(), l.clone());
    pp.atoms.shuffle(&mut rng);
    lp.atoms.shuffle(&mut rng);
    let perm = featurize_complex("v", &pp, &lp, &config).map_err(|e| e.to_string())?;
    ensure(perm.values == row.values, || "atom order changed the features".into())?;
    let mut m = FeatureMatrix::default();
    m.push("v", row.values).map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    write_features(&m, &mut bytes).map_err(|e| e.to_string())?;
    let back = read_features(bytes.as_slice()).map_err(|e| e.to_string())?;
    ensure(back == m, || "CSV round trip changed values".into())?;
    Ok(format!(
        "width {}, permutation invariant, CSV round trip exact",
        config.row_len()
    ))
}

/// Every check in order.
pub fn checks() -> Vec<(&'static str, Check)> {
    vec![
        ("nilpotency", nilpotency as Check),
        ("betti", betti),
        ("duality", duality),
        ("singular-union", singular_union),
        ("eigensolver", eigensolver),
        ("persistence", persistence),
        ("molecules", molecules),
        ("features", features),
    ]
}

/// Runs the checks whose names are in `only` (all when empty). A panicking
/// check counts as failed.
pub fn run(only: &[String]) -> Vec<CheckOutcome> {
    checks()
        .into_iter()
        .filter(|(name, _)| only.is_empty() || only.iter().any(|o| o == name))
        .map(|(name, check)| {
            let start = Instant::now();
            let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            });
            let seconds = start.elapsed().as_secs_f64();
            match result {
                Ok(detail) => CheckOutcome {
                    name,
                    passed: true,
                    detail,
                    seconds,
                },
                Err(detail) => CheckOutcome {
                    name,
                    passed: false,
                    detail,
                    seconds,
                },
            }
        })
        .collect()
}
