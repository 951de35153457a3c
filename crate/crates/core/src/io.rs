//! CSV and JSON artifacts.
//!
//! Every file starts with the resolved configuration and seeds: CSV files
//! as `# config: {json}` / `# seeds: [json]` comment lines, JSON files as
//! `config` and `seeds` members next to the payload.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::evaluation::{GridSample, SummaryRow};
use crate::regression::Dataset;
use crate::seed::SeedPlan;
use crate::systems::Trajectory;

/// Provenance written at the top of every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedPlan>,
}

impl Header {
    pub fn new(config: &ExperimentConfig, seeds: &[SeedPlan]) -> Self {
        Self { config: config.clone(), seeds: seeds.to_vec() }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn csv_writer(path: &Path, header: &Header) -> Result<csv::Writer<BufWriter<File>>> {
    let mut out = create(path)?;
    writeln!(out, "# config: {}", serde_json::to_string(&header.config)?)?;
    writeln!(out, "# seeds: {}", serde_json::to_string(&header.seeds)?)?;
    Ok(csv::Writer::from_writer(out))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?)
}

/// Reads the provenance comment lines of a CSV artifact.
pub fn read_csv_header(path: &Path) -> Result<Header> {
    let mut config = None;
    let mut seeds = None;
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if let Some(rest) = line.strip_prefix("# config: ") {
            config = Some(serde_json::from_str(rest)?);
        } else if let Some(rest) = line.strip_prefix("# seeds: ") {
            seeds = Some(serde_json::from_str(rest)?);
        } else if !line.starts_with('#') {
            break;
        }
    }
    match (config, seeds) {
        (Some(config), Some(seeds)) => Ok(Header { config, seeds }),
        _ => Err(Error::InvalidParameter(format!("{} has no provenance header", path.display()))),
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetRecord {
    t: Option<f64>,
    q: f64,
    p: f64,
    qdot: f64,
    pdot: f64,
    traj_id: Option<usize>,
}

/// `t,q,p,qdot,pdot,traj_id`; `t` and `traj_id` are empty without provenance.
pub fn write_dataset_csv(path: &Path, header: &Header, dataset: &Dataset) -> Result<()> {
    if dataset.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: dataset.dim() });
    }
    let mut w = csv_writer(path, header)?;
    for (i, (x, xdot)) in dataset.states().iter().zip(dataset.derivatives()).enumerate() {
        w.serialize(DatasetRecord {
            t: dataset.times().map(|t| t[i]),
            q: x[0],
            p: x[1],
            qdot: xdot[0],
            pdot: xdot[1],
            traj_id: dataset.trajectory_ids().map(|ids| ids[i]),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut states = Vec::new();
    let mut derivatives = Vec::new();
    let mut times = Vec::new();
    let mut ids = Vec::new();
    for record in csv_reader(path)?.deserialize() {
        let r: DatasetRecord = record?;
        states.push(vec![r.q, r.p]);
        derivatives.push(vec![r.qdot, r.pdot]);
        times.extend(r.t);
        ids.extend(r.traj_id);
    }
    let dataset = Dataset::new(states, derivatives)?;
    if !dataset.is_empty() && times.len() == dataset.len() && ids.len() == dataset.len() {
        dataset.with_provenance(times, ids)
    } else {
        Ok(dataset)
    }
}

/// `t,q,p,traj_id`, one block per trajectory.
pub fn write_trajectories_csv(path: &Path, header: &Header, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = csv_writer(path, header)?;
    w.write_record(["t", "q", "p", "traj_id"])?;
    for (id, traj) in trajectories.iter().enumerate() {
        for (t, x) in traj.times.iter().zip(&traj.states) {
            w.serialize((t, x[0], x[1], id))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `q,p,qdot,pdot`, rows in grid order.
pub fn write_grid_csv(path: &Path, header: &Header, grid: &[GridSample]) -> Result<()> {
    let mut w = csv_writer(path, header)?;
    w.write_record(["q", "p", "qdot", "pdot"])?;
    for s in grid {
        w.serialize((s.x[0], s.x[1], s.xdot[0], s.xdot[1]))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid_csv(path: &Path) -> Result<Vec<GridSample>> {
    let mut out = Vec::new();
    for record in csv_reader(path)?.deserialize() {
        let (q, p, qdot, pdot): (f64, f64, f64, f64) = record?;
        out.push(GridSample { x: vec![q, p], xdot: vec![qdot, pdot] });
    }
    Ok(out)
}

/// `system,model,train_mse,test_mse,seed,d,sigma,lambda1,lambda2`.
/// Aggregate rows carry `median` in the seed column.
pub fn write_summary_csv(path: &Path, header: &Header, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv_writer(path, header)?;
    w.write_record(["system", "model", "train_mse", "test_mse", "seed", "d", "sigma", "lambda1", "lambda2"])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.system.clone(),
            r.model.clone(),
            r.train_mse.to_string(),
            r.test_mse.to_string(),
            r.seed.map_or_else(|| "median".to_string(), |s| s.to_string()),
            r.d.to_string(),
            opt(r.sigma),
            opt(r.lambda1),
            opt(r.lambda2),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    #[derive(Deserialize)]
    struct Raw {
        system: String,
        model: String,
        train_mse: f64,
        test_mse: f64,
        seed: String,
        d: usize,
        sigma: Option<f64>,
        lambda1: Option<f64>,
        lambda2: Option<f64>,
    }
    let mut out = Vec::new();
    for record in csv_reader(path)?.deserialize() {
        let r: Raw = record?;
        let seed = match r.seed.as_str() {
            "median" => None,
            s => Some(s.parse().map_err(|_| Error::InvalidParameter(format!("bad seed column '{s}'")))?),
        };
        out.push(SummaryRow {
            system: r.system,
            model: r.model,
            train_mse: r.train_mse,
            test_mse: r.test_mse,
            seed,
            d: r.d,
            sigma: r.sigma,
            lambda1: r.lambda1,
            lambda2: r.lambda2,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    config: &'a ExperimentConfig,
    seeds: &'a [SeedPlan],
    #[serde(flatten)]
    payload: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    config: ExperimentConfig,
    seeds: Vec<SeedPlan>,
    #[serde(flatten)]
    payload: T,
}

/// Writes `payload` (which must serialize as a JSON object) with the header
/// merged in at the top level.
pub fn write_json<T: Serialize>(path: &Path, header: &Header, payload: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, &EnvelopeOut { config: &header.config, seeds: &header.seeds, payload })?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(Header, T)> {
    let env: EnvelopeIn<T> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    Ok((Header { config: env.config, seeds: env.seeds }, env.payload))
}
