use std::sync::Arc;

use hodgegrid::features::{featurize_complex, featurize_pair, pair_grid, write_features, FeatureConfig, FeatureMatrix};
use hodgegrid::field::{AtomSite, Element, RawSamples, ScalarField};
use hodgegrid::molio::{pair_clouds, AtomPairCloud, MolecularStructure};
use hodgegrid::presets::synthetic_complex;
use hodgegrid::topology::betti_numbers;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn csv_bytes(rows: &[(String, Vec<f64>)]) -> Vec<u8> {
    let mut m = FeatureMatrix::default();
    for (id, r) in rows {
        m.push(id.clone(), r.clone()).unwrap();
    }
    let mut out = Vec::new();
    write_features(&m, &mut out).unwrap();
    out
}

fn shuffled(s: &MolecularStructure, seed: u64) -> MolecularStructure {
    let mut out = s.clone();
    out.atoms.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}

#[test]
fn two_carbons_merge_across_the_sweep() {
    let atoms = vec![
        AtomSite::new(Element::C, [0.0; 3]),
        AtomSite::new(Element::C, [6.0, 0.2, -0.1]),
    ];
    let cloud = AtomPairCloud {
        protein_element: Element::C,
        ligand_element: Element::C,
        atoms: atoms.clone(),
        protein_atoms: 1,
    };
    let config = FeatureConfig::with_k(2);
    let block = featurize_pair(&cloud, &config).unwrap();
    let betti: Vec<f64> = block.values.chunks(3).map(|b| b[0]).collect();
    assert_eq!(betti.first(), Some(&2.0));
    assert_eq!(betti.last(), Some(&1.0));
    let field = ScalarField::fri_density(atoms.clone(), config.tau).unwrap();
    for (i, &c) in config.isovalues.iter().enumerate() {
        let grid = pair_grid(&atoms, config.tau, -0.001, block.spacings[i]).unwrap();
        let samples = RawSamples::evaluate(&field, Arc::new(grid));
        let oracle = betti_numbers(&samples.at_isovalue(c))[0];
        assert_eq!(betti[i], oracle as f64, "isovalue {c}");
    }
}

#[test]
fn rows_have_fixed_width_and_sorted_blocks() {
    let (p, l) = synthetic_complex(4, 8, 4);
    let config = FeatureConfig::with_k(3);
    let row = featurize_complex("a", &p, &l, &config).unwrap();
    assert_eq!(row.values.len(), 4 * 9 * 40);
    for blk in row.values.chunks(4) {
        assert!(blk[0] >= 0.0 && blk[0].fract() == 0.0);
        let nonzero: Vec<f64> = blk[1..].iter().copied().filter(|&v| v != 0.0).collect();
        assert!(nonzero.windows(2).all(|w| w[0] <= w[1]), "{blk:?}");
    }
    let clouds = pair_clouds(&p, &l, config.cutoff).unwrap();
    let empty: Vec<String> = clouds.iter().filter(|c| c.is_empty()).map(|c| c.label()).collect();
    assert_eq!(row.empty_pairs, empty);
    let bytes = csv_bytes(&[("a".into(), row.values.clone()), ("b".into(), row.values)]);
    let text = String::from_utf8(bytes).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l.split(',').count() == 4 * 9 * 40 + 1));
}

#[test]
fn permutation_and_translation_invariance() {
    let (p, l) = synthetic_complex(9, 9, 4);
    let config = FeatureConfig::with_k(2);
    let base = featurize_complex("x", &p, &l, &config).unwrap();
    let perm = featurize_complex("x", &shuffled(&p, 1), &shuffled(&l, 2), &config).unwrap();
    assert_eq!(
        csv_bytes(&[("x".into(), base.values.clone())]),
        csv_bytes(&[("x".into(), perm.values)])
    );
    let shift = [13.25, -7.5, 0.375];
    let moved = featurize_complex("x", &p.translated(shift), &l.translated(shift), &config).unwrap();
    for (a, b) in base.values.iter().zip(&moved.values) {
        assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-12), "{a} vs {b}");
    }
}
