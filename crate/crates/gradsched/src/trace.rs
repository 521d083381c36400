//! Trace ingestion and export.
//!
//! A trace bundle is three (optionally four) CSV files in one directory:
//!
//! - `machines.csv`: `instance_id` plus one capacity column per resource
//!   type; the header defines the resource catalog.
//! - `job_types.csv`: `port_id` plus one requirement column per resource
//!   type; its resource columns must match `machines.csv`.
//! - `arrivals.csv`: `slot,port_id,count` with 1-based slots. Missing
//!   (slot, port) pairs mean zero arrivals.
//! - `edges.csv` (optional): `port_id,instance_id` channel list. Absent
//!   file means the complete bipartite graph.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{complete_channels, GraphSpec, InstanceSpec, PortSpec, ResourceCatalog};
use crate::reward::ArrivalVector;

pub const MACHINES_FILE: &str = "machines.csv";
pub const JOB_TYPES_FILE: &str = "job_types.csv";
pub const ARRIVALS_FILE: &str = "arrivals.csv";
pub const EDGES_FILE: &str = "edges.csv";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
    #[error("{file}: malformed header: {detail}")]
    MalformedHeader { file: String, detail: String },
    #[error("{file} row {row}: non-numeric field {column}: {value:?}")]
    NonNumericField { file: String, row: usize, column: String, value: String },
    #[error("{file} row {row}: {detail}")]
    ReferentialViolation { file: String, row: usize, detail: String },
    #[error("{file} row {row}: {detail}")]
    InvalidField { file: String, row: usize, detail: String },
}

/// The three ingested tables, still in external-id space.
#[derive(Debug, Clone)]
pub struct TraceBundle {
    pub graph_spec: GraphSpec,
    /// Arrival counts per slot (0-based internally; slot `t` of the file is
    /// entry `t - 1`), each vector aligned with `graph_spec.ports`.
    pub arrivals: Vec<ArrivalVector>,
}

impl TraceBundle {
    /// Largest arrival count anywhere in the table.
    pub fn max_count(&self) -> u32 {
        self.arrivals
            .iter()
            .flat_map(|x| x.counts.iter().copied())
            .max()
            .unwrap_or(0)
    }
}

/// Rows that were accepted but normalized away, with the reason.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub dropped: Vec<String>,
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>), TraceError> {
    let file_label = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => TraceError::Io {
                path: path.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
            },
            _ => TraceError::Csv { file: file_label.clone(), source: e },
        })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|source| TraceError::Csv { file: file_label.clone(), source })?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        rows.push(record.map_err(|source| TraceError::Csv {
            file: file_label.clone(),
            source,
        })?);
    }
    Ok((headers, rows))
}

fn parse_u32(file: &str, row: usize, column: &str, value: &str) -> Result<u32, TraceError> {
    value.parse().map_err(|_| TraceError::NonNumericField {
        file: file.into(),
        row,
        column: column.into(),
        value: value.into(),
    })
}

fn parse_f64(file: &str, row: usize, column: &str, value: &str) -> Result<f64, TraceError> {
    value.parse().map_err(|_| TraceError::NonNumericField {
        file: file.into(),
        row,
        column: column.into(),
        value: value.into(),
    })
}

fn id_table(
    file: &str,
    headers: &[String],
    id_column: &str,
    rows: &[csv::StringRecord],
) -> Result<(Vec<String>, Vec<(u32, Vec<f64>)>), TraceError> {
    if headers.first().map(String::as_str) != Some(id_column) {
        return Err(TraceError::MalformedHeader {
            file: file.into(),
            detail: format!("first column must be {id_column}, got {:?}", headers.first()),
        });
    }
    let resource_columns: Vec<String> = headers[1..].to_vec();
    if resource_columns.is_empty() {
        return Err(TraceError::MalformedHeader {
            file: file.into(),
            detail: "no resource columns".into(),
        });
    }
    let mut out = Vec::with_capacity(rows.len());
    for (i, record) in rows.iter().enumerate() {
        let row = i + 2; // 1-based, counting the header line
        if record.len() != headers.len() {
            return Err(TraceError::InvalidField {
                file: file.into(),
                row,
                detail: format!("{} fields, expected {}", record.len(), headers.len()),
            });
        }
        let id = parse_u32(file, row, id_column, &record[0])?;
        let mut values = Vec::with_capacity(resource_columns.len());
        for (j, col) in resource_columns.iter().enumerate() {
            values.push(parse_f64(file, row, col, &record[j + 1])?);
        }
        out.push((id, values));
    }
    Ok((resource_columns, out))
}

/// Load and validate a trace bundle from a directory.
pub fn load_trace(dir: &Path) -> Result<(TraceBundle, LoadReport), TraceError> {
    let mut report = LoadReport::default();

    let machines_path = dir.join(MACHINES_FILE);
    let (headers, rows) = read_csv(&machines_path)?;
    let (resources, machine_rows) = id_table(MACHINES_FILE, &headers, "instance_id", &rows)?;
    let instances: Vec<InstanceSpec> = machine_rows
        .into_iter()
        .map(|(id, capacities)| InstanceSpec { id, capacities })
        .collect();

    let jobs_path = dir.join(JOB_TYPES_FILE);
    let (headers, rows) = read_csv(&jobs_path)?;
    let (job_resources, job_rows) = id_table(JOB_TYPES_FILE, &headers, "port_id", &rows)?;
    if job_resources != resources {
        return Err(TraceError::MalformedHeader {
            file: JOB_TYPES_FILE.into(),
            detail: format!(
                "resource columns {job_resources:?} do not match machines {resources:?}"
            ),
        });
    }
    let ports: Vec<PortSpec> = job_rows
        .into_iter()
        .map(|(id, requirements)| PortSpec { id, requirements })
        .collect();

    let port_pos: HashMap<u32, usize> =
        ports.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
    let instance_ids: HashMap<u32, ()> = instances.iter().map(|i| (i.id, ())).collect();

    let edges_path = dir.join(EDGES_FILE);
    let channels = if edges_path.exists() {
        let (headers, rows) = read_csv(&edges_path)?;
        if headers != ["port_id", "instance_id"] {
            return Err(TraceError::MalformedHeader {
                file: EDGES_FILE.into(),
                detail: format!("expected port_id,instance_id, got {headers:?}"),
            });
        }
        let mut channels = Vec::with_capacity(rows.len());
        for (i, record) in rows.iter().enumerate() {
            let row = i + 2;
            let l = parse_u32(EDGES_FILE, row, "port_id", &record[0])?;
            let r = parse_u32(EDGES_FILE, row, "instance_id", &record[1])?;
            if !port_pos.contains_key(&l) {
                return Err(TraceError::ReferentialViolation {
                    file: EDGES_FILE.into(),
                    row,
                    detail: format!("unknown port {l}"),
                });
            }
            if !instance_ids.contains_key(&r) {
                return Err(TraceError::ReferentialViolation {
                    file: EDGES_FILE.into(),
                    row,
                    detail: format!("unknown instance {r}"),
                });
            }
            channels.push((l, r));
        }
        channels
    } else {
        complete_channels(&ports, &instances)
    };

    let arrivals_path = dir.join(ARRIVALS_FILE);
    let (headers, rows) = read_csv(&arrivals_path)?;
    if headers != ["slot", "port_id", "count"] {
        return Err(TraceError::MalformedHeader {
            file: ARRIVALS_FILE.into(),
            detail: format!("expected slot,port_id,count, got {headers:?}"),
        });
    }
    let mut slot_counts: Vec<Vec<u32>> = Vec::new();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    for (i, record) in rows.iter().enumerate() {
        let row = i + 2;
        let slot = parse_u32(ARRIVALS_FILE, row, "slot", &record[0])? as usize;
        let port = parse_u32(ARRIVALS_FILE, row, "port_id", &record[1])?;
        let count = parse_u32(ARRIVALS_FILE, row, "count", &record[2])?;
        if slot == 0 {
            return Err(TraceError::InvalidField {
                file: ARRIVALS_FILE.into(),
                row,
                detail: "slots are 1-based".into(),
            });
        }
        let Some(&l) = port_pos.get(&port) else {
            return Err(TraceError::ReferentialViolation {
                file: ARRIVALS_FILE.into(),
                row,
                detail: format!("unknown port {port}"),
            });
        };
        if count == 0 {
            report.dropped.push(format!("{ARRIVALS_FILE} row {row}: zero count"));
            continue;
        }
        if slot_counts.len() < slot {
            slot_counts.resize(slot, vec![0; ports.len()]);
        }
        if let Some(&first_row) = seen.get(&(slot, l)) {
            report.dropped.push(format!(
                "{ARRIVALS_FILE} row {row}: merged into row {first_row} (same slot and port)"
            ));
        } else {
            seen.insert((slot, l), row);
        }
        slot_counts[slot - 1][l] += count;
    }

    let bundle = TraceBundle {
        graph_spec: GraphSpec {
            catalog: ResourceCatalog::new(resources),
            ports,
            instances,
            channels,
        },
        arrivals: slot_counts.into_iter().map(|counts| ArrivalVector { counts }).collect(),
    };
    Ok((bundle, report))
}

fn write_file(path: &PathBuf, contents: &str) -> Result<(), TraceError> {
    std::fs::write(path, contents).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Export a scenario as a trace bundle; the exact inverse of `load_trace`
/// for well-formed inputs.
pub fn write_trace(
    dir: &Path,
    spec: &GraphSpec,
    arrivals: &[ArrivalVector],
) -> Result<(), TraceError> {
    std::fs::create_dir_all(dir).map_err(|source| TraceError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let resources = spec.catalog.names();

    let mut machines = format!("instance_id,{}\n", resources.join(","));
    for i in &spec.instances {
        let caps: Vec<String> = i.capacities.iter().map(f64::to_string).collect();
        machines.push_str(&format!("{},{}\n", i.id, caps.join(",")));
    }
    write_file(&dir.join(MACHINES_FILE), &machines)?;

    let mut jobs = format!("port_id,{}\n", resources.join(","));
    for p in &spec.ports {
        let reqs: Vec<String> = p.requirements.iter().map(f64::to_string).collect();
        jobs.push_str(&format!("{},{}\n", p.id, reqs.join(",")));
    }
    write_file(&dir.join(JOB_TYPES_FILE), &jobs)?;

    let mut edges = String::from("port_id,instance_id\n");
    for &(l, r) in &spec.channels {
        edges.push_str(&format!("{l},{r}\n"));
    }
    write_file(&dir.join(EDGES_FILE), &edges)?;

    let mut rows = String::from("slot,port_id,count\n");
    for (t, x) in arrivals.iter().enumerate() {
        for (l, &count) in x.counts.iter().enumerate() {
            if count > 0 {
                rows.push_str(&format!("{},{},{}\n", t + 1, spec.ports[l].id, count));
            }
        }
    }
    write_file(&dir.join(ARRIVALS_FILE), &rows)?;
    Ok(())
}
