use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::OracleError;
use crate::losses::LabelVector;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedLabels {
    pub labels: LabelVector,
    /// `classes[c]` is the raw value mapped to label `c`.
    pub classes: Vec<String>,
}

/// Labels from a CSV with a header row.
///
/// Classes follow `class_map` when given, otherwise the lexicographic order of the distinct values.
pub fn load_labels(path: &Path, column: &str, k: u32, class_map: Option<&[String]>) -> Result<LoadedLabels, OracleError> {
    let f = std::fs::File::open(path).map_err(|e| OracleError::Parse(format!("{}: {e}", path.display())))?;
    load_labels_from_reader(f, column, k, class_map)
}

pub fn load_labels_from_reader<R: Read>(
    reader: R,
    column: &str,
    k: u32,
    class_map: Option<&[String]>,
) -> Result<LoadedLabels, OracleError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| OracleError::Parse(e.to_string()))?.clone();
    let col = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| OracleError::Parse(format!("no column {column:?}")))?;
    let mut raw = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| OracleError::Parse(e.to_string()))?;
        let v = rec.get(col).ok_or_else(|| OracleError::Parse(format!("short record at line {}", raw.len() + 2)))?;
        raw.push(v.to_string());
    }
    if raw.is_empty() {
        return Err(OracleError::Parse("no data rows".into()));
    }
    let classes: Vec<String> = match class_map {
        Some(m) => m.to_vec(),
        None => raw.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect(),
    };
    if k < 2 {
        return Err(OracleError::Parse("need K >= 2".into()));
    }
    if classes.len() > k as usize {
        let value = classes[k as usize].clone();
        return Err(OracleError::UnknownClass { value });
    }
    let labels = raw
        .iter()
        .map(|v| {
            classes.iter().position(|c| c == v).map(|c| c as u32).ok_or_else(|| OracleError::UnknownClass { value: v.clone() })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let labels = LabelVector::new(labels, k).map_err(|e| OracleError::Parse(e.to_string()))?;
    Ok(LoadedLabels { labels, classes })
}

/// Uniform labels from a seeded generator.
pub fn synthetic_labels(seed: u64, n: usize, k: u32) -> LabelVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = (0..n).map(|_| rng.gen_range(0..k)).collect();
    LabelVector::new(labels, k).expect("labels below k")
}

/// The bundled label-only fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dataset {
    Titanic,
    Iris,
    Satellite,
}

impl Dataset {
    pub const ALL: [Dataset; 3] = [Dataset::Titanic, Dataset::Iris, Dataset::Satellite];

    pub fn name(self) -> &'static str {
        match self {
            Dataset::Titanic => "titanic",
            Dataset::Iris => "iris",
            Dataset::Satellite => "satellite",
        }
    }

    pub fn k(self) -> u32 {
        match self {
            Dataset::Titanic => 2,
            Dataset::Iris => 3,
            Dataset::Satellite => 6,
        }
    }

    pub fn column(self) -> &'static str {
        match self {
            Dataset::Titanic => "survived",
            Dataset::Iris => "species",
            Dataset::Satellite => "class",
        }
    }

    pub fn csv(self) -> &'static str {
        match self {
            Dataset::Titanic => include_str!("../../data/titanic.csv"),
            Dataset::Iris => include_str!("../../data/iris.csv"),
            Dataset::Satellite => include_str!("../../data/satellite.csv"),
        }
    }

    pub fn load(self) -> LoadedLabels {
        load_labels_from_reader(self.csv().as_bytes(), self.column(), self.k(), None).expect("bundled fixture parses")
    }
}

impl FromStr for Dataset {
    type Err = OracleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dataset::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| OracleError::Parse(format!("unknown dataset {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures() {
        let t = Dataset::Titanic.load();
        assert_eq!((t.labels.n(), t.classes.len()), (2201, 2));
        assert_eq!(t.labels.labels().iter().filter(|&&c| c == 1).count(), 711);
        assert_eq!((Dataset::Iris.load().labels.n(), Dataset::Iris.load().classes.len()), (150, 3));
        let s = Dataset::Satellite.load();
        assert_eq!((s.labels.n(), s.classes.len()), (6430, 6));
    }

    #[test]
    fn too_many_classes() {
        let csv = "y\n1\n2\n3\n4\n5\n6\n7\n";
        assert!(matches!(load_labels_from_reader(csv.as_bytes(), "y", 6, None), Err(OracleError::UnknownClass { .. })));
        let map: Vec<String> = ["a", "b"].map(String::from).to_vec();
        let err = load_labels_from_reader("y\na\nc\n".as_bytes(), "y", 2, Some(&map)).unwrap_err();
        assert_eq!(err, OracleError::UnknownClass { value: "c".into() });
        assert!(matches!(load_labels_from_reader("x\n1\n".as_bytes(), "y", 2, None), Err(OracleError::Parse(_))));
    }

    #[test]
    fn synthetic_is_reproducible() {
        assert_eq!(synthetic_labels(5, 40, 3), synthetic_labels(5, 40, 3));
        assert_ne!(synthetic_labels(5, 40, 3), synthetic_labels(6, 40, 3));
    }
}
