//! File formats: wide dataset CSV with a JSON grid sidecar, edge-list CSV, kernel CSV.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{FcarError, Result};
use crate::function_space::{CovOperator, FunctionalDataset, TimeGrid};
use crate::lattice::{build_from_edge_list, NeighborhoodGraph};
use crate::model::SCHEMA_VERSION;
use crate::simulate::{GridSpec, SimConfig};

/// JSON sidecar next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub schema_version: u32,
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_config: Option<SimConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DatasetSidecar {
    pub fn for_grid(grid: &TimeGrid) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            grid: GridSpec {
                t_min: grid.t_min(),
                t_max: grid.t_max(),
                points: grid.len(),
            },
            sim_config: None,
            seed: None,
        }
    }
}

/// `data.csv` -> `data.json`.
pub fn sidecar_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Writes `location_id,t_0,...,t_{T-1}`, one row per curve.
pub fn write_dataset_csv(path: &Path, data: &FunctionalDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let t_len = data.grid().len();
    let mut header = Vec::with_capacity(t_len + 1);
    header.push("location_id".to_string());
    header.extend((0..t_len).map(|k| format!("t_{k}")));
    w.write_record(&header)?;
    for (i, id) in data.location_ids().iter().enumerate() {
        let mut record = Vec::with_capacity(t_len + 1);
        record.push(id.clone());
        record.extend(data.matrix().row(i).iter().map(|v| format!("{v:e}")));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a wide dataset CSV. `grid` defaults to `T` uniform points on `[0, 1]`.
pub fn read_dataset_csv(path: &Path, grid: Option<Arc<TimeGrid>>) -> Result<FunctionalDataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.get(0) != Some("location_id") {
        return Err(FcarError::Validation(format!(
            "{}: first column must be location_id",
            path.display()
        )));
    }
    let t_len = header.len() - 1;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != t_len + 1 {
            return Err(FcarError::Validation(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                line + 2,
                rec.len(),
                t_len + 1
            )));
        }
        ids.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| {
                FcarError::Validation(format!("{}: row {}: bad number {field:?}", path.display(), line + 2))
            })?;
            values.push(v);
        }
    }
    let grid = match grid {
        Some(g) => g,
        None => Arc::new(TimeGrid::uniform(0.0, 1.0, t_len)?),
    };
    let n = ids.len();
    FunctionalDataset::new(DMatrix::from_row_slice(n, t_len, &values), grid, ids)
}

/// Reads the dataset and, if present, its sidecar grid.
pub fn read_dataset_with_sidecar(path: &Path) -> Result<FunctionalDataset> {
    let side = sidecar_path(path);
    let grid = if side.exists() {
        let meta: DatasetSidecar = read_json(&side)?;
        Some(meta.grid.build()?)
    } else {
        None
    };
    read_dataset_csv(path, grid)
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeRecord {
    src: String,
    dst: String,
}

/// Writes each undirected edge once as `src,dst` location ids.
pub fn write_edge_list_csv(path: &Path, graph: &NeighborhoodGraph) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let ids = graph.location_ids();
    for (i, j) in graph.edges() {
        w.serialize(EdgeRecord {
            src: ids[i].clone(),
            dst: ids[j].clone(),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an undirected `src,dst` edge list over the given location ids.
pub fn read_edge_list_csv(path: &Path, location_ids: &[String]) -> Result<NeighborhoodGraph> {
    let index: HashMap<&str, usize> = location_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() != 2 || &header[0] != "src" || &header[1] != "dst" {
        return Err(FcarError::Validation(format!(
            "{}: header must be src,dst",
            path.display()
        )));
    }
    let mut edges = Vec::new();
    for rec in r.deserialize() {
        let rec: EdgeRecord = rec?;
        let lookup = |id: &str| {
            index.get(id).copied().ok_or_else(|| {
                FcarError::Validation(format!("{}: unknown location id {id:?}", path.display()))
            })
        };
        edges.push((lookup(&rec.src)?, lookup(&rec.dst)?));
    }
    build_from_edge_list(location_ids.len(), &edges, location_ids.to_vec())
}

/// Location ids of an edge list in order of first appearance.
pub fn read_edge_list_ids(path: &Path) -> Result<Vec<String>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut seen = HashMap::new();
    let mut ids = Vec::new();
    for rec in r.deserialize() {
        let rec: EdgeRecord = rec?;
        for id in [rec.src, rec.dst] {
            if !seen.contains_key(&id) {
                seen.insert(id.clone(), ids.len());
                ids.push(id);
            }
        }
    }
    Ok(ids)
}

/// Kernel as CSV: header `t,<points>`, then one row per grid point.
pub fn write_kernel_csv(path: &Path, op: &CovOperator) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let points = op.grid().points();
    let mut header = vec!["t".to_string()];
    header.extend(points.iter().map(|t| format!("{t}")));
    w.write_record(&header)?;
    for (s, t) in points.iter().enumerate() {
        let mut rec = vec![format!("{t}")];
        rec.extend(op.kernel().row(s).iter().map(|v| format!("{v:e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_kernel_csv(path: &Path, grid: Arc<TimeGrid>) -> Result<CovOperator> {
    let mut r = csv::Reader::from_path(path)?;
    let t_len = grid.len();
    let mut values = Vec::with_capacity(t_len * t_len);
    for rec in r.records() {
        let rec = rec?;
        for field in rec.iter().skip(1) {
            values.push(field.parse::<f64>().map_err(|_| {
                FcarError::Validation(format!("{}: bad number {field:?}", path.display()))
            })?);
        }
    }
    if values.len() != t_len * t_len {
        return Err(FcarError::Dimension(format!(
            "{}: {} kernel entries for a {t_len}-point grid",
            path.display(),
            values.len()
        )));
    }
    CovOperator::new(DMatrix::from_row_slice(t_len, t_len, &values), grid)
}
