use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::{read_bag, write_bag, Bag, DataError};
use crate::survival::SurvivalLabel;

pub const MANIFEST_HEADER: [&str; 4] = ["patient_id", "path", "time", "censored"];

#[derive(Clone, Debug, PartialEq)]
pub struct Patient {
    pub bag: Bag,
    pub label: SurvivalLabel,
}

impl Patient {
    pub fn id(&self) -> &str {
        &self.bag.patient_id
    }
}

/// Patients with unique ids and a shared feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    patients: Vec<Patient>,
    dim: usize,
}

impl Cohort {
    pub fn new(patients: Vec<Patient>) -> Result<Self, DataError> {
        let first = patients
            .first()
            .ok_or_else(|| DataError::Invalid("cohort has no patients".into()))?;
        let dim = first.bag.dim();
        let mut seen = HashSet::new();
        for p in &patients {
            if !seen.insert(p.id().to_string()) {
                return Err(DataError::DuplicateId(p.id().to_string()));
            }
            if p.bag.dim() != dim {
                return Err(DataError::Dimension {
                    id: p.id().to_string(),
                    expected: dim,
                    got: p.bag.dim(),
                });
            }
        }
        Ok(Self { patients, dim })
    }

    pub fn patients(&self) -> &[Patient] {
        &self.patients
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> Vec<SurvivalLabel> {
        self.patients.iter().map(|p| p.label).collect()
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<SurvivalLabel> {
        indices.iter().map(|&i| self.patients[i].label).collect()
    }
}

fn manifest_error(line: usize, message: impl Into<String>) -> DataError {
    DataError::Manifest {
        line,
        message: message.into(),
    }
}

/// Loads a `patient_id,path,time,censored` CSV; relative bag paths resolve
/// against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Cohort, DataError> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(manifest_error(
            1,
            format!("header must be `{}`", MANIFEST_HEADER.join(",")),
        ));
    }
    let mut patients = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        if record.len() != 4 {
            return Err(manifest_error(line, format!("expected 4 fields, got {}", record.len())));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(manifest_error(line, "empty patient_id"));
        }
        let time: f64 = record[2]
            .parse()
            .map_err(|e| manifest_error(line, format!("bad time `{}`: {e}", &record[2])))?;
        if !(time > 0.0 && time.is_finite()) {
            return Err(manifest_error(line, format!("time must be positive, got {time}")));
        }
        let censored = match &record[3] {
            "0" => false,
            "1" => true,
            other => return Err(manifest_error(line, format!("censored must be 0 or 1, got `{other}`"))),
        };
        let bag_path = {
            let p = PathBuf::from(&record[1]);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let mut bag = read_bag(&bag_path)?;
        bag.patient_id = id;
        patients.push(Patient {
            bag,
            label: SurvivalLabel::new(time, censored)?,
        });
    }
    Cohort::new(patients)
}

/// Writes every bag to `dir/bags/<id>.vpb` and a manifest to
/// `dir/manifest.csv`, returning the manifest path.
pub fn write_cohort(cohort: &Cohort, dir: &Path) -> Result<PathBuf, DataError> {
    let bag_dir = dir.join("bags");
    fs::create_dir_all(&bag_dir).map_err(|e| DataError::io(&bag_dir, e))?;
    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest)?;
    w.write_record(MANIFEST_HEADER)?;
    for p in cohort.patients() {
        let rel = format!("bags/{}.vpb", p.id());
        write_bag(&dir.join(&rel), &p.bag)?;
        let censored = if p.label.censored() { "1" } else { "0" };
        w.write_record([p.id(), rel.as_str(), &p.label.time().to_string(), censored])?;
    }
    w.flush().map_err(|e| DataError::io(&manifest, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn write_bags(dir: &Path, ids: &[&str]) {
        fs::create_dir_all(dir.join("bags")).unwrap();
        for id in ids {
            let bag = Bag::new(*id, Tensor::matrix(2, 3, vec![0.5; 6]).unwrap()).unwrap();
            write_bag(&dir.join(format!("bags/{id}.vpb")), &bag).unwrap();
        }
    }

    #[test]
    fn loads_valid_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_bags(dir.path(), &["a", "b", "c"]);
        let m = dir.path().join("manifest.csv");
        fs::write(
            &m,
            "patient_id,path,time,censored\na,bags/a.vpb,1.5,0\nb,bags/b.vpb,2,1\nc,bags/c.vpb,0.25,0\n",
        )
        .unwrap();
        let c = load_manifest(&m).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.dim(), 3);
        assert!(c.patients()[1].label.censored());
        assert_eq!(c.patients()[2].label.time(), 0.25);
    }

    #[test]
    fn rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        write_bags(dir.path(), &["a", "b"]);
        let m = dir.path().join("manifest.csv");
        let cases = [
            ("patient_id,path,time,censored\na,bags/a.vpb,1,0\na,bags/b.vpb,2,0\n", "duplicate"),
            ("patient_id,path,time,censored\na,bags/a.vpb,0,0\n", "time"),
            ("patient_id,path,time,censored\na,bags/missing.vpb,1,0\n", "missing"),
            ("patient_id,path,time,censored\na,bags/a.vpb,1,2\n", "censored"),
            ("id,path,time,censored\na,bags/a.vpb,1,0\n", "header"),
        ];
        for (text, what) in cases {
            fs::write(&m, text).unwrap();
            let r = load_manifest(&m);
            assert!(r.is_err(), "{what} accepted");
            if what == "duplicate" {
                assert!(matches!(r, Err(DataError::DuplicateId(_))));
            }
            if what == "missing" {
                assert!(matches!(r, Err(DataError::Io { .. })));
            }
        }
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let patients = (0..3)
            .map(|i| Patient {
                bag: Bag::new(format!("P{i}"), Tensor::matrix(i + 1, 2, vec![i as f64 * 0.5; 2 * (i + 1)]).unwrap())
                    .unwrap(),
                label: SurvivalLabel::new(1.0 + i as f64 / 3.0, i == 1).unwrap(),
            })
            .collect();
        let cohort = Cohort::new(patients).unwrap();
        let m = write_cohort(&cohort, dir.path()).unwrap();
        assert_eq!(load_manifest(&m).unwrap(), cohort);
    }
}
