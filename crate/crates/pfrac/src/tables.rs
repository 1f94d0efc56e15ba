//! CSV files: curves, per-step reports and material fields.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use pfrac_core::materials::{ElementMaterial, MaterialField, Region};
use pfrac_core::postprocess::CurveSeries;
use pfrac_core::solvers::StepReport;
use thiserror::Error;

use crate::{create_file, fmt17, OutputError};

#[derive(Debug, Error)]
pub enum TableError {
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: record {record}: {message}")]
    Record { path: String, record: usize, message: String },
}

fn csv_error(path: &Path, source: csv::Error) -> TableError {
    TableError::Csv {
        path: path.display().to_string(),
        source,
    }
}

fn record_error(path: &Path, record: usize, message: impl Into<String>) -> TableError {
    TableError::Record {
        path: path.display().to_string(),
        record,
        message: message.into(),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, TableError> {
    Ok(csv::WriterBuilder::new().from_writer(create_file(path)?))
}

fn reader(path: &Path) -> Result<csv::Reader<File>, TableError> {
    let f = File::open(path).map_err(|e| OutputError::new(path, e))?;
    Ok(csv::ReaderBuilder::new().from_reader(f))
}

fn field<'a>(path: &Path, row: &'a csv::StringRecord, record: usize, i: usize) -> Result<&'a str, TableError> {
    row.get(i).ok_or_else(|| record_error(path, record, format!("missing column {i}")))
}

fn number<T: std::str::FromStr>(path: &Path, row: &csv::StringRecord, record: usize, i: usize) -> Result<T, TableError> {
    let s = field(path, row, record, i)?;
    s.trim()
        .parse()
        .map_err(|_| record_error(path, record, format!("column {i}: cannot parse '{s}'")))
}

/// Rows `abscissa,ordinate,label`, one series after another.
pub fn write_curves_csv(series: &[CurveSeries], path: &Path) -> Result<(), TableError> {
    let mut w = writer(path)?;
    w.write_record(["abscissa", "ordinate", "label"]).map_err(|e| csv_error(path, e))?;
    for c in series {
        for (x, y) in c.abscissa.iter().zip(&c.ordinate) {
            w.write_record([fmt17(*x), fmt17(*y), c.label.clone()])
                .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| OutputError::new(path, e))?;
    Ok(())
}

/// Reads a curves file; consecutive rows with the same label form a series.
pub fn read_curves_csv(path: &Path) -> Result<Vec<CurveSeries>, TableError> {
    let mut out: Vec<CurveSeries> = Vec::new();
    for (i, row) in reader(path)?.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let x: f64 = number(path, &row, i, 0)?;
        let y: f64 = number(path, &row, i, 1)?;
        let label = field(path, &row, i, 2)?;
        match out.last_mut() {
            Some(c) if c.label == label => {
                c.abscissa.push(x);
                c.ordinate.push(y);
            }
            _ => out.push(CurveSeries {
                abscissa: vec![x],
                ordinate: vec![y],
                label: label.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Step reports appended and flushed one row at a time, so an aborted run
/// keeps the rows it finished.
pub struct StepCsv {
    w: csv::Writer<BufWriter<File>>,
    path: std::path::PathBuf,
    deterministic: bool,
}

impl StepCsv {
    pub fn create(path: &Path, monitors: &[String], deterministic: bool) -> Result<Self, TableError> {
        let mut w = writer(path)?;
        let mut header: Vec<String> = ["step", "load_factor", "probe"].map(String::from).to_vec();
        header.extend(monitors.iter().map(|m| format!("reaction_{m}")));
        for c in ["x", "y", "z"] {
            header.push(format!("reaction_total_{c}"));
        }
        for c in ["x", "y", "z"] {
            header.push(format!("applied_total_{c}"));
        }
        header.extend(
            [
                "equilibrium_error",
                "fractured_volume",
                "staggered_iterations",
                "newton_iterations",
                "residual_norm",
                "relative_change",
                "s_min",
                "s_max",
                "halved",
                "fallback",
                "converged",
                "wall_time",
            ]
            .map(String::from),
        );
        w.write_record(&header).map_err(|e| csv_error(path, e))?;
        w.flush().map_err(|e| OutputError::new(path, e))?;
        Ok(Self {
            w,
            path: path.to_path_buf(),
            deterministic,
        })
    }

    pub fn push(&mut self, r: &StepReport) -> Result<(), TableError> {
        let mut row = vec![r.step.to_string(), fmt17(r.load_factor), fmt17(r.probe)];
        row.extend(r.reactions.iter().map(|&x| fmt17(x)));
        row.extend(r.reaction_total.iter().map(|&x| fmt17(x)));
        row.extend(r.applied_total.iter().map(|&x| fmt17(x)));
        row.extend([
            fmt17(r.equilibrium_error),
            fmt17(r.fractured_volume),
            r.staggered_iterations.to_string(),
            r.newton_iterations.to_string(),
            fmt17(r.residual_norm),
            fmt17(r.relative_change),
            fmt17(r.s_min),
            fmt17(r.s_max),
            r.halved.to_string(),
            r.fallback.to_string(),
            r.converged.to_string(),
            fmt17(if self.deterministic { 0.0 } else { r.wall_time }),
        ]);
        self.w.write_record(&row).map_err(|e| csv_error(&self.path, e))?;
        self.w.flush().map_err(|e| OutputError::new(&self.path, e))?;
        Ok(())
    }
}

/// Rows `element_index,E,nu,Gc,l,region_tag`.
pub fn write_material_csv(materials: &MaterialField, path: &Path) -> Result<(), TableError> {
    let mut w = writer(path)?;
    w.write_record(["element_index", "E", "nu", "Gc", "l", "region_tag"])
        .map_err(|e| csv_error(path, e))?;
    for (i, m) in materials.elements().iter().enumerate() {
        w.write_record([
            i.to_string(),
            fmt17(m.e),
            fmt17(m.nu),
            fmt17(m.gc),
            fmt17(m.l),
            m.region.tag().to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| OutputError::new(path, e))?;
    Ok(())
}

/// Reads a material field written by [`write_material_csv`]. Rows must be
/// in element order.
pub fn read_material_csv(path: &Path, residual_stiffness: f64) -> Result<MaterialField, TableError> {
    let mut elements = Vec::new();
    for (i, row) in reader(path)?.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let index: usize = number(path, &row, i, 0)?;
        if index != i {
            return Err(record_error(path, i, format!("element index {index}, expected {i}")));
        }
        let tag: i32 = number(path, &row, i, 5)?;
        let region = Region::from_tag(tag).ok_or_else(|| record_error(path, i, format!("unknown region tag {tag}")))?;
        let m = ElementMaterial::new(
            number(path, &row, i, 1)?,
            number(path, &row, i, 2)?,
            number(path, &row, i, 3)?,
            number(path, &row, i, 4)?,
            region,
        )
        .map_err(|e| record_error(path, i, e.to_string()))?;
        elements.push(m);
    }
    MaterialField::new(elements, residual_stiffness).map_err(|e| record_error(path, 0, e.to_string()))
}
