use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::tensor::rng_for;

pub const MANIFEST_HEADER: &str = "path,label";

/// Labelled image list. Class 0 is MSI, class 1 is MSS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<(String, u8)>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<(String, u8)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (path, label) in &entries {
            if *label > 1 {
                return Err(Error::InvalidInput(format!("label {label} for `{path}`")));
            }
            if !seen.insert(path.as_str()) {
                return Err(Error::DuplicatePath(path.clone()));
            }
        }
        Ok(Self { root: root.into(), entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(class 0 count, class 1 count)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let ones = self.entries.iter().filter(|(_, l)| *l == 1).count();
        (self.entries.len() - ones, ones)
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    fn subset(&self, idx: &[usize]) -> Manifest {
        Manifest { root: self.root.clone(), entries: idx.iter().map(|&i| self.entries[i].clone()).collect() }
    }

    /// Seeded 80/10/10 train/validation/test split. Train and validation
    /// sizes are floored; test takes the remainder.
    pub fn split(&self, seed: u64) -> (Manifest, Manifest, Manifest) {
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng_for(seed, 11));
        let n_train = n * 8 / 10;
        let n_val = n / 10;
        let (train, rest) = idx.split_at(n_train);
        let (val, test) = rest.split_at(n_val);
        (self.subset(train), self.subset(val), self.subset(test))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for (p, l) in &self.entries {
            s.push_str(&format!("{p},{l}\n"));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Reads a `path,label` CSV; relative paths resolve against the CSV's
/// directory. Rows are numbered from 1, not counting the header.
pub fn load_manifest(csv_path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(csv_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(csv_path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let err = |row: usize, reason: String| Error::ManifestParse { path: csv_path.to_path_buf(), row, reason };
    let mut lines = text.lines();
    match lines.next().map(str::trim) {
        Some(MANIFEST_HEADER) => {}
        other => return Err(err(0, format!("expected header `{MANIFEST_HEADER}`, found {other:?}"))),
    }
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (path, label) = line.rsplit_once(',').ok_or_else(|| err(row, "expected `path,label`".into()))?;
        let label = match label.trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(err(row, format!("label `{other}` is not 0 or 1"))),
        };
        let path = path.trim().to_string();
        if path.is_empty() {
            return Err(err(row, "empty path".into()));
        }
        if !seen.insert(path.clone()) {
            return Err(Error::DuplicatePath(path));
        }
        entries.push((path, label));
    }
    let root = csv_path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Manifest { root, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("manifest.csv");
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn parses_two_rows() {
        let dir = tempfile::tempdir().unwrap();
        let m = load_manifest(&write(dir.path(), "path,label\na.ppm,0\nb.ppm,1\n")).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.class_counts(), (1, 1));
        assert_eq!(m.resolve("a.ppm"), dir.path().join("a.ppm"));
    }

    #[test]
    fn bad_label_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let r = load_manifest(&write(dir.path(), "path,label\na,0\nb,1\nc,2\n"));
        match r {
            Err(e @ Error::ManifestParse { row: 3, .. }) => assert!(e.to_string().contains("row 3")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_and_header_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_manifest(&write(dir.path(), "path,label\na,0\na,1\n")), Err(Error::DuplicatePath(_))));
        assert!(matches!(load_manifest(&write(dir.path(), "file,class\na,0\n")), Err(Error::ManifestParse { row: 0, .. })));
    }

    #[test]
    fn split_80_10_10() {
        let entries = (0..100).map(|i| (format!("img{i}.ppm"), (i % 2) as u8)).collect();
        let m = Manifest::new("/data", entries).unwrap();
        let (tr, va, te) = m.split(5);
        assert_eq!((tr.len(), va.len(), te.len()), (80, 10, 10));
        let mut all: Vec<_> = tr.entries.iter().chain(&va.entries).chain(&te.entries).cloned().collect();
        all.sort();
        let mut orig = m.entries.clone();
        orig.sort();
        assert_eq!(all, orig);
        let names: HashSet<_> = all.iter().map(|(p, _)| p.clone()).collect();
        assert_eq!(names.len(), 100);
        assert_eq!(m.split(5), m.split(5));
    }
}
