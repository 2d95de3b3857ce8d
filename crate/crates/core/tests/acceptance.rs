//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run everything with `cargo test --test acceptance`, or a subset by
//! number, e.g. `cargo test --test acceptance -- 3 7`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use hodgegrid::eigen::{zero_threshold, SolverOptions};
use hodgegrid::features::{featurize_complex, write_features, FeatureConfig, FeatureMatrix};
use hodgegrid::field::{RawSamples, SampledField, ScalarField};
use hodgegrid::grid::GridComplex;
use hodgegrid::laplacian::{LaplacianKind, OperatorSet};
use hodgegrid::molio::MolecularStructure;
use hodgegrid::persistence::{build_filtration, level_sweep, persistent_operators, Filtration};
use hodgegrid::presets::{linspace, synthetic_complex, Shape};
use hodgegrid::sparse::{Csr, SparseMatrix};
use hodgegrid::spectrum::{betti_from_kernels, dense_oracle, laplacian_spectrum, spectrum, squared_singular_values};
use hodgegrid::support::BoundaryCondition;
use hodgegrid::topology::{betti_numbers, surviving_components};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KINDS: [LaplacianKind; 2] = [LaplacianKind::Hodge, LaplacianKind::Big];

/// Relative agreement of primal and dual eigenvalues.
const DUALITY_RTOL: f64 = 1e-8;
/// Multiset agreement of Laplacian and singular spectra, relative to the
/// largest eigenvalue.
const UNION_RTOL: f64 = 1e-8;
/// Bound on `|λ₁(big) / (ℓ² λ₁(hodge)) − 1|` at the finest grid.
const SCALING_BOUND: f64 = 0.15;
const COLLAPSE_RTOL: f64 = 1e-12;
const NILPOTENCY_RTOL: f64 = 1e-10;
const TRANSLATION_RTOL: f64 = 1e-6;
const ORACLE_RTOL: f64 = 1e-8;

/// λ^C at tunnel birth moves by at most this multiple of the median step
/// between topologically identical levels.
const BIRTH_STEP_FACTOR: f64 = 1.5;
/// λ^C falls at tunnel death by at least this multiple of that median.
const DEATH_DROP_FACTOR: f64 = 3.0;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn level_ops(shape: Shape, resolution: usize, bc: BoundaryCondition) -> (OperatorSet, f64) {
    let grid = Arc::new(shape.grid_with_resolution(resolution, 0.0).unwrap());
    let spacing = grid.spacing();
    let sampled = RawSamples::evaluate(&shape.field().unwrap(), grid).at_isovalue(0.0);
    (OperatorSet::build(Arc::new(sampled), bc).unwrap(), spacing)
}

fn all_zero(m: &Csr<i32>) -> bool {
    m.triplets().all(|(_, _, v)| v == 0)
}

fn random_sampled(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> SampledField {
    let grid = Arc::new(GridComplex::new(dims, 1.0, [0.0; 3]).unwrap());
    if rng.random_bool(0.5) {
        let primal = (0..grid.num_vertices()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dual = (0..grid.num_cells(3)).map(|_| rng.random_range(-1.0..1.0)).collect();
        SampledField::from_values(grid, primal, dual, 0.0)
    } else {
        let n = rng.random_range(1..6);
        let centers = (0..n)
            .map(|_| [0, 1, 2].map(|a| rng.random_range(0.0..(dims[a] - 1) as f64)))
            .collect();
        let radii = (0..n).map(|_| rng.random_range(0.5..4.0)).collect();
        let field = ScalarField::ball_union(centers, radii).unwrap();
        RawSamples::evaluate(&field, grid).at_isovalue(0.0)
    }
}

fn criterion_1() -> Outcome {
    let mut grids = vec![[2, 2, 2], [3, 4, 5], [16, 16, 16], [16, 3, 9], [2, 16, 16]];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        grids.push([0; 3].map(|_: i32| rng.random_range(2..=16)));
    }
    for dims in &grids {
        let grid = GridComplex::new(*dims, 0.5, [0.0; 3]).unwrap();
        for k in 0..2 {
            let p = grid
                .boundary_matrix(k + 1)
                .unwrap()
                .matmul(grid.boundary_matrix(k).unwrap());
            ensure(all_zero(&p), || format!("D{}·D{} ≠ 0 on {dims:?}", k + 1, k))?;
        }
    }
    let mut products = 0;
    for _ in 0..50 {
        let dims = [0; 3].map(|_: i32| rng.random_range(4..=16));
        let sampled = Arc::new(random_sampled(&mut rng, dims));
        for bc in [BoundaryCondition::Normal, BoundaryCondition::Tangential] {
            let ops = OperatorSet::build_big_only(sampled.clone(), bc).unwrap();
            for k in 0..2 {
                let p = ops.differential(k + 1).unwrap().matmul(ops.differential(k).unwrap());
                ensure(all_zero(&p), || {
                    format!("restricted D{}·D{} ≠ 0 ({bc}, {dims:?})", k + 1, k)
                })?;
                products += 1;
            }
        }
    }
    Ok(format!(
        "{} full grids, {products} restricted products, all exactly zero",
        grids.len()
    ))
}

fn criterion_2() -> Outcome {
    let cases = [
        (Shape::Ball { radius: 1.0 }, [1, 0, 0]),
        (Shape::Shell { inner: 0.5, outer: 1.0 }, [1, 0, 1]),
        (Shape::Torus { major: 1.0, minor: 0.4 }, [1, 1, 0]),
    ];
    let mut seen = Vec::new();
    for (shape, expect) in cases {
        let (ops, _) = level_ops(shape, 33, BoundaryCondition::Normal);
        let oracle = betti_numbers(ops.sampled());
        ensure(oracle == expect, || format!("{shape}: flood fill gives {oracle:?}"))?;
        for kind in KINDS {
            let b = betti_from_kernels(&ops, kind, &SolverOptions::default()).unwrap();
            ensure(b == expect, || {
                format!("{shape} {kind}: kernels {b:?}, expected {expect:?}")
            })?;
        }
        seen.push(format!("{shape} {expect:?}"));
    }
    Ok(seen.join(", "))
}

fn criterion_3() -> Outcome {
    let shape = Shape::by_name("fourballs").unwrap();
    let isovalues = linspace(2.0, 3.84, 20);
    let grid = Arc::new(shape.grid_with_resolution(48, 3.84).unwrap());
    let samples = RawSamples::evaluate(&shape.field().unwrap(), grid);
    let f = Filtration::from_samples(&samples, &isovalues, false).unwrap();
    let rows = level_sweep(&f, LaplacianKind::Big, &SolverOptions::default()).unwrap();
    let betti: Vec<[usize; 3]> = rows.iter().map(|r| r.betti).collect();
    for (r, ops) in rows.iter().zip(f.levels()) {
        let oracle = betti_numbers(ops.sampled());
        ensure(oracle == r.betti, || {
            format!("c={}: kernels {:?} vs flood fill {oracle:?}", r.isovalue, r.betti)
        })?;
    }
    let pattern = [[4, 0, 0], [1, 3, 0], [1, 0, 1], [1, 0, 0]];
    let mut at = 0;
    for b in &betti {
        if at < pattern.len() && *b == pattern[at] {
            at += 1;
        }
    }
    ensure(at == pattern.len(), || {
        format!("Betti sequence {betti:?} lacks the merge pattern")
    })?;

    let merge = betti.iter().position(|b| b[0] == 1).unwrap();
    let birth = betti.iter().position(|b| b[1] > 0).unwrap();
    let death = birth + betti[birth..].iter().position(|b| b[1] == 0).unwrap();
    let lt: Vec<f64> = rows.iter().map(|r| r.lambda_t.unwrap_or(f64::NAN)).collect();
    let lc: Vec<f64> = rows.iter().map(|r| r.lambda_c.unwrap_or(f64::NAN)).collect();
    ensure(lt.iter().chain(&lc).all(|x| x.is_finite()), || {
        "missing λ values".into()
    })?;

    let drops: Vec<f64> = (1..lt.len()).map(|i| (lt[i - 1] - lt[i]) / lt[i - 1]).collect();
    let biggest = (0..drops.len()).max_by(|&a, &b| drops[a].total_cmp(&drops[b])).unwrap() + 1;
    ensure(biggest == merge && drops[merge - 1] > 0.0, || {
        format!("largest relative λ^T drop at index {biggest}, merge at {merge}")
    })?;

    let mut regular: Vec<f64> = (1..lc.len())
        .filter(|&i| betti[i] == betti[i - 1])
        .map(|i| (lc[i] - lc[i - 1]).abs())
        .collect();
    regular.sort_by(f64::total_cmp);
    let median = regular[regular.len() / 2];
    let birth_step = (lc[birth] - lc[birth - 1]).abs();
    let death_drop = lc[death - 1] - lc[death];
    ensure(birth_step <= BIRTH_STEP_FACTOR * median, || {
        format!("λ^C jumps by {birth_step:.3e} at tunnel birth (median step {median:.3e})")
    })?;
    ensure(death_drop >= DEATH_DROP_FACTOR * median, || {
        format!("λ^C drops by {death_drop:.3e} at tunnel death (median step {median:.3e})")
    })?;
    Ok(format!(
        "merge at c={:.3}: λ^T {:.3e}→{:.3e}; tunnel birth λ^C step {birth_step:.2e}, death drop {death_drop:.2e}, median step {median:.2e}",
        isovalues[merge],
        lt[merge - 1],
        lt[merge]
    ))
}

fn criterion_4() -> Outcome {
    let shape = Shape::Blob { seed: 7 };
    let grid = Arc::new(shape.grid_with_resolution(24, 0.0).unwrap());
    let sampled = RawSamples::evaluate(&shape.field().unwrap(), grid).at_isovalue(0.0);
    let dual = sampled.dual_view().unwrap();
    let primal = OperatorSet::build(Arc::new(sampled), BoundaryCondition::Normal).unwrap();
    let dual = OperatorSet::build(Arc::new(dual), BoundaryCondition::Tangential).unwrap();
    let opts = SolverOptions::default();
    let mut worst: f64 = 0.0;
    for kind in KINDS {
        for k in 0..=3 {
            let a = laplacian_spectrum(&primal, k, kind, 10, &opts).unwrap();
            let b = laplacian_spectrum(&dual, 3 - k, kind, 10, &opts).unwrap();
            ensure(a.kernel_dim == b.kernel_dim, || {
                format!("{kind} k={k}: kernels {} vs {}", a.kernel_dim, b.kernel_dim)
            })?;
            let mut va = vec![0.0; a.kernel_dim];
            va.extend(&a.nonzero_eigenvalues);
            let mut vb = vec![0.0; b.kernel_dim];
            vb.extend(&b.nonzero_eigenvalues);
            let n = va.len().min(vb.len()).min(10);
            ensure(n == 10, || format!("{kind} k={k}: only {n} eigenvalues"))?;
            for (x, y) in va[..n].iter().zip(&vb[..n]) {
                if *x != 0.0 || *y != 0.0 {
                    worst = worst.max(rel(*x, *y));
                }
            }
        }
    }
    ensure(worst <= DUALITY_RTOL, || format!("largest relative gap {worst:.2e}"))?;
    Ok(format!("dims {:?}, largest relative gap {worst:.2e}", primal.dims()))
}

fn criterion_5() -> Outcome {
    let cases = [
        (Shape::Ball { radius: 1.0 }, 11),
        (Shape::Torus { major: 1.0, minor: 0.4 }, 12),
        (Shape::Blob { seed: 3 }, 12),
    ];
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for (shape, n) in cases {
        let (ops, _) = level_ops(shape, n, BoundaryCondition::Normal);
        for kind in KINDS {
            for k in 0..=3 {
                let l = ops.spectral_matrix(k, kind).unwrap();
                if l.nrows() > 1500 || l.nrows() == 0 {
                    continue;
                }
                let eig = dense_oracle(l, None).unwrap();
                let top = eig.last().copied().unwrap_or(0.0).max(1.0);
                let mut union = Vec::new();
                if k < 3 {
                    union.extend(squared_singular_values(&ops.symmetrized_differential(k, kind).unwrap()).unwrap());
                }
                if k > 0 {
                    union.extend(squared_singular_values(&ops.symmetrized_differential(k - 1, kind).unwrap()).unwrap());
                }
                union.retain(|&s| s > UNION_RTOL * top);
                union.resize(eig.len().max(union.len()), 0.0);
                union.sort_by(f64::total_cmp);
                ensure(union.len() == eig.len(), || {
                    format!("{shape} {kind} k={k}: too many singular values")
                })?;
                let gap = eig.iter().zip(&union).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / top;
                worst = worst.max(gap);
                ensure(gap <= UNION_RTOL, || format!("{shape} {kind} k={k}: gap {gap:.2e}"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} spectra, largest relative gap {worst:.2e}"))
}

fn criterion_6() -> Outcome {
    let shape = Shape::Ball { radius: 1.0 };
    let opts = SolverOptions::default();
    let mut report = Vec::new();
    for k in 0..=3 {
        let mut errs = Vec::new();
        for n in [17, 25, 33] {
            let (ops, spacing) = level_ops(shape, n, BoundaryCondition::Normal);
            let big = laplacian_spectrum(&ops, k, LaplacianKind::Big, 1, &opts)
                .unwrap()
                .nonzero_eigenvalues[0];
            let hodge = laplacian_spectrum(&ops, k, LaplacianKind::Hodge, 1, &opts)
                .unwrap()
                .nonzero_eigenvalues[0];
            errs.push((big / (spacing * spacing * hodge) - 1.0).abs());
        }
        ensure(errs.windows(2).all(|w| w[1] < w[0]), || {
            format!("k={k}: not decreasing {errs:?}")
        })?;
        ensure(errs[2] <= SCALING_BOUND, || format!("k={k}: final gap {:.3}", errs[2]))?;
        report.push(format!("k={k} {:.3}→{:.3}→{:.3}", errs[0], errs[1], errs[2]));
    }
    Ok(report.join(", "))
}

fn nilpotency_gap(f: &Filtration, l: usize, p: usize, k: usize, kind: LaplacianKind) -> f64 {
    let pair = persistent_operators(f, l, p, k, kind).unwrap();
    let delta = pair.codifferential.unwrap();
    let lo = f.level(l);
    let d = lo.differential(k).unwrap().to_f64();
    let s_up = lo.metric(k + 1, kind).unwrap();
    let inv: Vec<f64> = lo.metric(k, kind).unwrap().iter().map(|s| 1.0 / s).collect();
    let inner = d.transpose().scale(Some(&inv), Some(&s_up));
    let a = delta.matmul(&inner).max_abs() / (delta.max_abs() * inner.max_abs());
    let diff = pair.differential.unwrap();
    let b = d.matmul(&diff).max_abs() / (d.max_abs() * diff.max_abs());
    a.max(b)
}

fn criterion_7() -> Outcome {
    let ball = {
        let field = ScalarField::sphere([0.03, -0.02, 0.01], 1.0).unwrap();
        let grid = Arc::new(GridComplex::centered([0.0; 3], [1.8; 3], 0.3).unwrap());
        build_filtration(&field, grid, &[-0.4, -0.15, 0.1, 0.3]).unwrap()
    };
    let torus = {
        let shape = Shape::Torus { major: 1.0, minor: 0.4 };
        let grid = Arc::new(shape.grid_with_spacing(0.2, 0.7).unwrap());
        build_filtration(&shape.field().unwrap(), grid, &[-0.1, 0.0, 0.2, 0.55, 0.7]).unwrap()
    };
    let four = {
        let shape = Shape::by_name("fourballs").unwrap();
        let grid = Arc::new(shape.grid_with_resolution(20, 3.84).unwrap());
        build_filtration(&shape.field().unwrap(), grid, &[2.0, 2.29, 2.387, 2.58]).unwrap()
    };
    let opts = SolverOptions::default();
    let mut collapse: f64 = 0.0;
    for f in [&ball, &torus, &four] {
        for k in 0..=3 {
            for kind in KINDS {
                let pair = persistent_operators(f, 0, 0, k, kind).unwrap();
                let level = f.level(0).spectral_matrix(k, kind).unwrap();
                let scale = level.max_abs().max(1.0);
                collapse = collapse.max(pair.spectral.add(&level.scaled(-1.0)).max_abs() / scale);
                let a = pair.spectrum(f, 5, &opts).unwrap();
                let b = laplacian_spectrum(f.level(0), k, kind, 5, &opts).unwrap();
                ensure(a.kernel_dim == b.kernel_dim, || {
                    format!("p=0 kernel {} vs {}", a.kernel_dim, b.kernel_dim)
                })?;
                for (x, y) in a.nonzero.iter().zip(&b.nonzero_eigenvalues) {
                    collapse = collapse.max(rel(*x, *y));
                }
            }
        }
    }
    ensure(collapse <= COLLAPSE_RTOL, || format!("p=0 gap {collapse:.2e}"))?;

    for (name, f, degrees) in [
        ("ball", &ball, vec![0, 1, 2, 3]),
        ("torus", &torus, vec![2, 3]),
        ("four-ball", &four, vec![2, 3]),
    ] {
        for &k in &degrees {
            for kind in KINDS {
                let dims: Vec<usize> = (0..f.len())
                    .map(|p| {
                        persistent_operators(f, 0, p, k, kind)
                            .unwrap()
                            .spectrum(f, 1, &opts)
                            .unwrap()
                            .kernel_dim
                    })
                    .collect();
                ensure(dims.windows(2).all(|w| w[0] >= w[1]), || {
                    format!("{name} k={k} {kind}: kernels {dims:?}")
                })?;
            }
        }
    }

    let mut nil: f64 = 0.0;
    for f in [&ball, &four] {
        for (l, p) in [(0, 1), (0, f.len() - 1), (1, 2)] {
            for k in 1..=2 {
                for kind in KINDS {
                    nil = nil.max(nilpotency_gap(f, l, p, k, kind));
                }
            }
        }
    }
    ensure(nil <= NILPOTENCY_RTOL, || format!("nilpotency gap {nil:.2e}"))?;

    let last = four.len() - 1;
    let survive = surviving_components(four.level(0).sampled(), four.level(last).sampled());
    let levels: Vec<usize> = four.levels().iter().map(|o| betti_numbers(o.sampled())[0]).collect();
    ensure(levels[0] == 4 && levels[last] == 1, || {
        format!("four-ball levels β₀ {levels:?}")
    })?;
    for kind in KINDS {
        let b0 = persistent_operators(&four, 0, last, 3, kind)
            .unwrap()
            .spectrum(&four, 1, &opts)
            .unwrap()
            .kernel_dim;
        ensure(b0 == 1 && survive == 1, || {
            format!("{kind}: persistent β₀ {b0}, union-find {survive}")
        })?;
    }
    Ok(format!(
        "p=0 gap {collapse:.1e}, nilpotency {nil:.1e}, four-ball persistent β₀ 4→1 = union-find"
    ))
}

fn feature_csv(id: &str, p: &MolecularStructure, l: &MolecularStructure, k: usize) -> (Vec<f64>, Vec<u8>) {
    let row = featurize_complex(id, p, l, &FeatureConfig::with_k(k)).unwrap();
    let mut m = FeatureMatrix::default();
    m.push(id, row.values.clone()).unwrap();
    let mut bytes = Vec::new();
    write_features(&m, &mut bytes).unwrap();
    (row.values, bytes)
}

fn criterion_8() -> Outcome {
    let (p, l) = synthetic_complex(1, 17, 8);
    ensure(p.atoms.len() + l.atoms.len() == 25, || "complex is not 25 atoms".into())?;
    let mut widths = Vec::new();
    let mut base = (vec![], vec![]);
    for k in [5, 10] {
        let (values, bytes) = feature_csv("synthetic", &p, &l, k);
        let text = String::from_utf8(bytes.clone()).unwrap();
        let data = text.lines().nth(1).unwrap();
        widths.push(data.split(',').count() - 1);
        if k == 5 {
            base = (values, bytes);
        }
    }
    ensure(widths == [2160, 3960], || format!("row widths {widths:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut pp, mut lp) = (p.clone(), l.clone());
    pp.atoms.shuffle(&mut rng);
    lp.atoms.shuffle(&mut rng);
    let (_, perm_bytes) = feature_csv("synthetic", &pp, &lp, 5);
    ensure(perm_bytes == base.1, || "permuted input changed the CSV bytes".into())?;
    let shift = [31.7, -12.25, 4.125];
    let (moved, _) = feature_csv("synthetic", &p.translated(shift), &l.translated(shift), 5);
    let worst = base
        .0
        .iter()
        .zip(&moved)
        .map(|(a, b)| if a == b { 0.0 } else { rel(*a, *b) })
        .fold(0.0, f64::max);
    ensure(worst <= TRANSLATION_RTOL, || {
        format!("translation changed a feature by {worst:.2e}")
    })?;
    Ok(format!(
        "widths 2160/3960, permutation byte-identical, translation gap {worst:.1e}"
    ))
}

fn criterion_9() -> Outcome {
    let mut mats: Vec<(String, SparseMatrix)> = Vec::new();
    'outer: for seed in 0..20u64 {
        let (ops, _) = level_ops(
            Shape::Blob { seed },
            11 + (seed as usize % 4),
            BoundaryCondition::Normal,
        );
        for k in 0..=3 {
            for kind in KINDS {
                let m = ops.spectral_matrix(k, kind).unwrap();
                if (50..=1500).contains(&m.nrows()) {
                    mats.push((format!("blob{seed} k={k} {kind}"), m.clone()));
                    if mats.len() == 30 {
                        break 'outer;
                    }
                }
            }
        }
    }
    ensure(mats.len() == 30, || format!("only {} matrices assembled", mats.len()))?;
    let iterative = SolverOptions {
        dense_limit: 0,
        ..SolverOptions::default()
    };
    let mut worst: f64 = 0.0;
    for (name, m) in &mats {
        let dense = dense_oracle(m, None).unwrap();
        let thr = zero_threshold(m.gershgorin_bound());
        let kernel = dense.iter().filter(|&&x| x <= thr).count();
        let it = spectrum(m, 6, None, None, &iterative).unwrap();
        ensure(it.kernel_dim == kernel, || {
            format!("{name}: kernel {} vs dense {kernel}", it.kernel_dim)
        })?;
        let expect = &dense[kernel..(kernel + 6).min(dense.len())];
        ensure(it.nonzero.len() == expect.len(), || {
            format!("{name}: {} eigenvalues", it.nonzero.len())
        })?;
        for (a, b) in it.nonzero.iter().zip(expect) {
            worst = worst.max(rel(*a, *b));
        }
    }
    ensure(worst <= ORACLE_RTOL, || format!("largest relative gap {worst:.2e}"))?;
    Ok(format!("30 matrices, largest relative gap {worst:.2e}"))
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, u64, fn() -> Outcome); 9] = [
        (1, "exact nilpotency", 10, criterion_1),
        (2, "Betti numbers from kernels", 120, criterion_2),
        (3, "four-ball filtration", 600, criterion_3),
        (4, "primal/dual duality", 120, criterion_4),
        (5, "spectrum of singular values", 60, criterion_5),
        (6, "BIG/Hodge scaling", 300, criterion_6),
        (7, "persistence", 600, criterion_7),
        (8, "feature shape and invariance", 300, criterion_8),
        (9, "iterative vs dense eigenvalues", 120, criterion_9),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > Duration::from_secs(budget) => {
                Err(format!("{detail}; took {elapsed:.1?}, budget {budget} s"))
            }
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS criterion {id} ({name}) [{elapsed:.1?}]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}) [{elapsed:.1?}]: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
