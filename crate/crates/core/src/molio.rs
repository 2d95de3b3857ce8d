//! Molecular structure ingestion and element-specific atom-pair clouds.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{AtomSite, Element};

/// Protein elements of the pair clouds. Hydrogen is ignored on the protein
/// side since most protein structures carry none.
pub const PROTEIN_ELEMENTS: [Element; 4] = [Element::C, Element::N, Element::O, Element::S];

pub const LIGAND_ELEMENTS: [Element; 10] = Element::ALL;

/// Number of protein × ligand element pairs.
pub const PAIR_COUNT: usize = PROTEIN_ELEMENTS.len() * LIGAND_ELEMENTS.len();

/// Distance (Å) from the ligand within which protein atoms are kept.
pub const DEFAULT_CUTOFF: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureFormat {
    Xyz,
    Pdb,
    Mol2,
}

impl StructureFormat {
    /// Format implied by a file extension.
    pub fn from_path(path: &Path) -> Result<StructureFormat> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
        ext.parse().map_err(|_| {
            Error::InvalidArgument(format!(
                "cannot infer structure format of {} (expected .xyz, .pdb or .mol2)",
                path.display()
            ))
        })
    }
}

impl FromStr for StructureFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xyz" => Ok(StructureFormat::Xyz),
            "pdb" | "ent" => Ok(StructureFormat::Pdb),
            "mol2" => Ok(StructureFormat::Mol2),
            _ => Err(Error::InvalidArgument(format!("unknown structure format `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Protein,
    Ligand,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Protein => "protein",
            Role::Ligand => "ligand",
        })
    }
}

/// What a parser kept and dropped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub atoms: usize,
    pub per_element: BTreeMap<String, usize>,
    /// Atoms dropped because their element has no tabulated radius.
    pub skipped: usize,
    pub skipped_elements: BTreeMap<String, usize>,
    /// PDB records dropped as repeats of an atom already read, by the field
    /// that distinguished them.
    pub alternate_locations: usize,
    pub insertion_codes: usize,
    pub duplicates: usize,
}

impl ParseReport {
    fn keep(&mut self, e: Element) {
        self.atoms += 1;
        *self.per_element.entry(e.symbol().to_string()).or_default() += 1;
    }

    fn skip(&mut self, symbol: &str) {
        self.skipped += 1;
        *self.skipped_elements.entry(symbol.to_string()).or_default() += 1;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MolecularStructure {
    pub id: String,
    pub role: Role,
    pub atoms: Vec<AtomSite>,
    pub report: ParseReport,
}

impl MolecularStructure {
    /// Copy with every atom moved by `shift`.
    pub fn translated(&self, shift: [f64; 3]) -> MolecularStructure {
        let mut out = self.clone();
        for a in &mut out.atoms {
            for (x, s) in a.position.iter_mut().zip(shift) {
                *x += s;
            }
        }
        out
    }
}

/// Parse one structure from text.
pub fn parse_structure(text: &str, format: StructureFormat, role: Role, id: &str) -> Result<MolecularStructure> {
    if text.trim().is_empty() {
        return Err(Error::EmptyStructure(format!("{id}: no content")));
    }
    let mut report = ParseReport::default();
    let atoms = match format {
        StructureFormat::Xyz => parse_xyz(text, &mut report)?,
        StructureFormat::Pdb => parse_pdb(text, &mut report)?,
        StructureFormat::Mol2 => parse_mol2(text, &mut report)?,
    };
    if atoms.is_empty() {
        return Err(Error::EmptyStructure(format!(
            "{id}: no atoms with a known element ({} skipped)",
            report.skipped
        )));
    }
    Ok(MolecularStructure {
        id: id.to_string(),
        role,
        atoms,
        report,
    })
}

/// Read and parse a structure file; the format comes from the extension and
/// the id from the file stem.
pub fn read_structure(path: &Path, role: Role) -> Result<MolecularStructure> {
    let format = StructureFormat::from_path(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("structure");
    parse_structure(&text, format, role, id).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

fn parse_coord(s: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} coordinate `{}`", s.trim()),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite {what} coordinate"),
        });
    }
    Ok(v)
}

fn push_atom(atoms: &mut Vec<AtomSite>, report: &mut ParseReport, symbol: &str, position: [f64; 3]) {
    match Element::from_symbol(symbol) {
        Some(e) => {
            report.keep(e);
            atoms.push(AtomSite::new(e, position));
        }
        None => report.skip(symbol),
    }
}

/// `element x y z` per line. A leading atom-count line and the comment line
/// after it (the usual XYZ header) are skipped, as are blank and `#` lines.
fn parse_xyz(text: &str, report: &mut ParseReport) -> Result<Vec<AtomSite>> {
    let lines: Vec<&str> = text.lines().collect();
    let first = lines.iter().position(|l| !l.trim().is_empty());
    let skip = match first {
        Some(i) if lines[i].trim().parse::<usize>().is_ok() => i + 2,
        _ => 0,
    };
    let mut atoms = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(skip) {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = t.split_whitespace().collect();
        if tok.len() < 4 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected `element x y z`, got `{t}`"),
            });
        }
        let pos = [
            parse_coord(tok[1], i + 1, "x")?,
            parse_coord(tok[2], i + 1, "y")?,
            parse_coord(tok[3], i + 1, "z")?,
        ];
        push_atom(&mut atoms, report, tok[0], pos);
    }
    Ok(atoms)
}

/// Byte range of 1-based inclusive PDB columns, clipped to the line.
fn columns(line: &str, from: usize, to: usize) -> &str {
    let b = line.as_bytes();
    if from > b.len() {
        return "";
    }
    line.get(from - 1..to.min(b.len())).unwrap_or("")
}

/// Element from an atom name: two-letter symbols are left-aligned in column
/// 13, one-letter symbols start in column 14.
fn element_from_name(name_field: &str) -> String {
    let padded = format!("{name_field:<4}");
    let first = padded.chars().next().unwrap_or(' ');
    let letters: String = padded
        .trim()
        .trim_start_matches(|c: char| c.is_ascii_digit())
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect();
    if first.is_ascii_alphabetic() && letters.len() >= 2 {
        if let Some(e) = Element::from_symbol(&letters[..2]).filter(|e| e.symbol().len() == 2) {
            return e.symbol().to_string();
        }
    }
    letters.chars().take(1).collect()
}

/// ATOM/HETATM records of the first model. Repeats of an atom (same chain,
/// residue number and atom name) keep the first occurrence whatever their
/// alternate-location or insertion code.
fn parse_pdb(text: &str, report: &mut ParseReport) -> Result<Vec<AtomSite>> {
    let mut atoms = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.starts_with("ENDMDL") {
            break;
        }
        if !(line.starts_with("ATOM") || line.starts_with("HETATM")) {
            continue;
        }
        if line.len() < 54 {
            return Err(Error::Parse {
                line: n,
                message: "ATOM/HETATM record shorter than 54 columns".into(),
            });
        }
        let name = columns(line, 13, 16);
        let alt = columns(line, 17, 17).trim();
        let chain = columns(line, 22, 22);
        let seq = columns(line, 23, 26).trim();
        let icode = columns(line, 27, 27).trim();
        let pos = [
            parse_coord(columns(line, 31, 38), n, "x")?,
            parse_coord(columns(line, 39, 46), n, "y")?,
            parse_coord(columns(line, 47, 54), n, "z")?,
        ];
        if !seen.insert((chain.to_string(), seq.to_string(), name.trim().to_string())) {
            if !alt.is_empty() {
                report.alternate_locations += 1;
            } else if !icode.is_empty() {
                report.insertion_codes += 1;
            } else {
                report.duplicates += 1;
            }
            continue;
        }
        let symbol = match columns(line, 77, 78).trim() {
            "" => element_from_name(name),
            s => s.to_string(),
        };
        push_atom(&mut atoms, report, &symbol, pos);
    }
    Ok(atoms)
}

/// The first `@<TRIPOS>ATOM` block: `id name x y z type …`, element from the
/// SYBYL type before the dot.
fn parse_mol2(text: &str, report: &mut ParseReport) -> Result<Vec<AtomSite>> {
    let mut atoms = Vec::new();
    let mut in_block = false;
    let mut found = false;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.starts_with("@<TRIPOS>") {
            if in_block {
                break;
            }
            in_block = t.eq_ignore_ascii_case("@<TRIPOS>ATOM");
            found |= in_block;
            continue;
        }
        if !in_block || t.is_empty() || t.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = t.split_whitespace().collect();
        if tok.len() < 6 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected `id name x y z type`, got `{t}`"),
            });
        }
        let pos = [
            parse_coord(tok[2], i + 1, "x")?,
            parse_coord(tok[3], i + 1, "y")?,
            parse_coord(tok[4], i + 1, "z")?,
        ];
        let symbol = tok[5].split('.').next().unwrap_or_default();
        push_atom(&mut atoms, report, symbol, pos);
    }
    if !found {
        return Err(Error::Parse {
            line: 0,
            message: "no @<TRIPOS>ATOM block".into(),
        });
    }
    Ok(atoms)
}

/// Atoms of one protein element near the ligand together with the ligand
/// atoms of one element.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomPairCloud {
    pub protein_element: Element,
    pub ligand_element: Element,
    /// Sorted by element, then position.
    pub atoms: Vec<AtomSite>,
    pub protein_atoms: usize,
}

impl AtomPairCloud {
    /// `C-Cl` style label.
    pub fn label(&self) -> String {
        pair_label(self.protein_element, self.ligand_element)
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

pub fn pair_label(protein: Element, ligand: Element) -> String {
    format!("{protein}-{ligand}")
}

/// Labels of all pairs in cloud order.
pub fn pair_labels() -> Vec<String> {
    PROTEIN_ELEMENTS
        .iter()
        .flat_map(|&p| LIGAND_ELEMENTS.iter().map(move |&l| pair_label(p, l)))
        .collect()
}

/// Total order on atoms independent of input order.
pub fn canonical_order(a: &AtomSite, b: &AtomSite) -> std::cmp::Ordering {
    a.element
        .cmp(&b.element)
        .then_with(|| a.position[0].total_cmp(&b.position[0]))
        .then_with(|| a.position[1].total_cmp(&b.position[1]))
        .then_with(|| a.position[2].total_cmp(&b.position[2]))
        .then_with(|| a.vdw_radius.total_cmp(&b.vdw_radius))
}

/// The 40 element-pair clouds, protein element major. A protein atom enters
/// when it lies within `cutoff` of any ligand atom; hydrogen on the protein
/// side never does. Clouds may be empty.
pub fn pair_clouds(
    protein: &MolecularStructure,
    ligand: &MolecularStructure,
    cutoff: f64,
) -> Result<Vec<AtomPairCloud>> {
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(Error::InvalidArgument(format!("cutoff must be positive, got {cutoff}")));
    }
    let c2 = cutoff * cutoff;
    let near: Vec<&AtomSite> = protein
        .atoms
        .iter()
        .filter(|a| {
            ligand.atoms.iter().any(|b| {
                let d2: f64 = (0..3).map(|i| (a.position[i] - b.position[i]).powi(2)).sum();
                d2 <= c2
            })
        })
        .collect();
    let mut out = Vec::with_capacity(PAIR_COUNT);
    for &pe in &PROTEIN_ELEMENTS {
        let prot: Vec<AtomSite> = near.iter().filter(|a| a.element == pe).map(|a| (*a).clone()).collect();
        for &le in &LIGAND_ELEMENTS {
            let mut atoms = prot.clone();
            atoms.extend(ligand.atoms.iter().filter(|a| a.element == le).cloned());
            atoms.sort_by(canonical_order);
            out.push(AtomPairCloud {
                protein_element: pe,
                ligand_element: le,
                atoms,
                protein_atoms: prot.len(),
            });
        }
    }
    Ok(out)
}
