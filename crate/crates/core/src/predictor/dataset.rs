//! Feature/target datasets and their CSV form.
//!
//! Header: `graph_id,machine_id,framework_id,<feature columns>,time_s,mem_mib`.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PredictorError;
use crate::features::{FeatureLayout, FeatureVector};

const LEADING: [&str; 3] = ["graph_id", "machine_id", "framework_id"];
const TRAILING: [&str; 2] = ["time_s", "mem_mib"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Provenance {
    pub graph_id: String,
    pub machine_id: String,
    pub framework_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub features: Vec<f64>,
    /// Seconds.
    pub time_s: f64,
    /// Mebibytes.
    pub mem_mib: f64,
    pub provenance: Provenance,
}

impl DataPoint {
    pub fn target(&self, t: Target) -> f64 {
        match t {
            Target::Time => self.time_s,
            Target::Memory => self.mem_mib,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Target {
    Time,
    Memory,
}

impl Target {
    pub const BOTH: [Target; 2] = [Target::Time, Target::Memory];

    pub fn column(self) -> &'static str {
        match self {
            Target::Time => "time_s",
            Target::Memory => "mem_mib",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub layout: FeatureLayout,
    pub points: Vec<DataPoint>,
}

impl Dataset {
    pub fn new(layout: FeatureLayout) -> Self {
        Dataset {
            layout,
            points: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Appends a point, checking layout and target sanity.
    pub fn push(
        &mut self,
        features: &FeatureVector,
        time_s: f64,
        mem_mib: f64,
        provenance: Provenance,
    ) -> Result<(), PredictorError> {
        if features.layout != self.layout {
            return Err(PredictorError::InconsistentLayout(format!(
                "point {} has {} columns, dataset has {}",
                provenance.graph_id,
                features.layout.len(),
                self.layout.len()
            )));
        }
        let point = DataPoint {
            features: features.values.clone(),
            time_s,
            mem_mib,
            provenance,
        };
        check_point(&point, self.layout.len())?;
        self.points.push(point);
        Ok(())
    }

    pub fn targets(&self, t: Target) -> Vec<f64> {
        self.points.iter().map(|p| p.target(t)).collect()
    }

    /// Layout-consistency and target-positivity checks for every point.
    pub fn check(&self) -> Result<(), PredictorError> {
        self.points
            .iter()
            .try_for_each(|p| check_point(p, self.layout.len()))
    }

    pub fn subset(&self, points: Vec<DataPoint>) -> Dataset {
        Dataset {
            layout: self.layout.clone(),
            points,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), PredictorError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = LEADING.to_vec();
        header.extend(self.layout.columns().iter().map(String::as_str));
        header.extend(TRAILING);
        out.write_record(&header)?;
        for p in &self.points {
            let mut row = vec![
                p.provenance.graph_id.clone(),
                p.provenance.machine_id.clone(),
                p.provenance.framework_id.clone(),
            ];
            row.extend(p.features.iter().map(|v| v.to_string()));
            row.push(p.time_s.to_string());
            row.push(p.mem_mib.to_string());
            out.write_record(&row)?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Dataset, PredictorError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let n = header.len();
        if n < LEADING.len() + TRAILING.len()
            || header[..3] != LEADING
            || header[n - 2..] != TRAILING
        {
            return Err(PredictorError::Parse(format!(
                "dataset header must start with {} and end with {}",
                LEADING.join(","),
                TRAILING.join(",")
            )));
        }
        let layout = FeatureLayout::from_columns(header[3..n - 2].to_vec());
        let mut ds = Dataset::new(layout);
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let num = |i: usize| -> Result<f64, PredictorError> {
                record[i].trim().parse::<f64>().map_err(|e| {
                    PredictorError::Parse(format!("row {}, column `{}`: {e}", line + 1, header[i]))
                })
            };
            let features = (3..n - 2).map(num).collect::<Result<Vec<_>, _>>()?;
            let point = DataPoint {
                features,
                time_s: num(n - 2)?,
                mem_mib: num(n - 1)?,
                provenance: Provenance {
                    graph_id: record[0].to_string(),
                    machine_id: record[1].to_string(),
                    framework_id: record[2].to_string(),
                },
            };
            check_point(&point, ds.layout.len())?;
            ds.points.push(point);
        }
        Ok(ds)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset, PredictorError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| PredictorError::io(path, e))?;
        Dataset::read_csv(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PredictorError> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| PredictorError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn check_point(p: &DataPoint, width: usize) -> Result<(), PredictorError> {
    if p.features.len() != width {
        return Err(PredictorError::InconsistentLayout(format!(
            "point {} has {} features, layout has {width}",
            p.provenance.graph_id,
            p.features.len()
        )));
    }
    if p.features.iter().any(|v| !v.is_finite()) {
        return Err(PredictorError::InvalidTarget(format!(
            "point {} has a non-finite feature",
            p.provenance.graph_id
        )));
    }
    for (name, v) in [("time_s", p.time_s), ("mem_mib", p.mem_mib)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(PredictorError::InvalidTarget(format!(
                "point {}: {name} = {v} is not positive",
                p.provenance.graph_id
            )));
        }
    }
    Ok(())
}

/// Seeded shuffle then split; the first `round(ratio * n)` points train.
pub fn split_dataset(ds: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset), PredictorError> {
    if ds.len() < 2 {
        return Err(PredictorError::TooFewPoints(ds.len()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(PredictorError::InvalidConfig(format!("split ratio {ratio} outside (0, 1)")));
    }
    let (train, test) = split_indices(ds.len(), ratio, seed);
    let pick = |idx: &[usize]| ds.subset(idx.iter().map(|&i| ds.points[i].clone()).collect());
    Ok((pick(&train), pick(&test)))
}

pub(crate) fn split_indices(n: usize, ratio: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let test = idx.split_off(k);
    (idx, test)
}
