//! CSV and schema files.
//!
//! Data files carry a mandatory header and use the empty string for a
//! missing cell. Mask files are 0/1 CSVs with the data header.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{Cell, ColumnKind, ColumnSpec, TabularDataset};
use crate::ndcore::Mask;
use crate::{Error, Result};

pub fn read_schema(path: &Path) -> Result<Vec<ColumnSpec>> {
    let specs: Vec<ColumnSpec> = serde_json::from_reader(File::open(path)?)?;
    Ok(specs)
}

pub fn write_schema(path: &Path, specs: &[ColumnSpec]) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, specs)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_csv(path: &Path, schema: Option<&[ColumnSpec]>) -> Result<TabularDataset> {
    read_csv_from_reader(File::open(path)?, schema)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Parses CSV text. With a schema, columns are matched by header name and
/// categorical columns without a category list get one in first-appearance
/// order; without a schema, a column whose non-empty cells all parse as
/// finite numbers is numeric and every other column is categorical.
pub fn read_csv_from_reader<R: Read>(reader: R, schema: Option<&[ColumnSpec]>) -> Result<TabularDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Data("CSV header row is missing".into()));
    }
    let mut raw: Vec<Vec<String>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Data(format!(
                "line {}: {} fields for {} header columns",
                raw.len() + 2,
                rec.len(),
                header.len()
            )));
        }
        raw.push(rec.iter().map(|s| s.trim().to_string()).collect());
    }

    let mut specs: Vec<ColumnSpec> = match schema {
        Some(schema) => header
            .iter()
            .map(|name| {
                schema
                    .iter()
                    .find(|s| &s.name == name)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("column '{name}' is not in the schema")))
            })
            .collect::<Result<_>>()?,
        None => header
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let numeric = raw
                    .iter()
                    .map(|row| &row[c])
                    .filter(|s| !s.is_empty())
                    .all(|s| s.parse::<f64>().is_ok_and(f64::is_finite));
                let kind = if numeric { ColumnKind::Numeric } else { ColumnKind::Categorical };
                log::info!("column '{name}' inferred as {kind:?}");
                ColumnSpec {
                    name: name.clone(),
                    kind,
                    categories: Vec::new(),
                }
            })
            .collect(),
    };
    if let Some(schema) = schema {
        if schema.len() != header.len() {
            return Err(Error::Data(format!(
                "schema lists {} columns, CSV header has {}",
                schema.len(),
                header.len()
            )));
        }
    }

    for (c, spec) in specs.iter_mut().enumerate() {
        if spec.is_categorical() && spec.categories.is_empty() {
            for row in &raw {
                let v = &row[c];
                if !v.is_empty() && !spec.categories.contains(v) {
                    spec.categories.push(v.clone());
                }
            }
        }
    }

    let mut rows = Vec::with_capacity(raw.len());
    for (r, row) in raw.iter().enumerate() {
        let cells = row
            .iter()
            .zip(&specs)
            .map(|(v, spec)| {
                if v.is_empty() {
                    return Ok(Cell::Missing);
                }
                match spec.kind {
                    ColumnKind::Numeric => v
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .map(Cell::Numeric)
                        .ok_or_else(|| {
                            Error::Data(format!(
                                "line {}, column '{}': '{v}' is not a finite number",
                                r + 2,
                                spec.name
                            ))
                        }),
                    ColumnKind::Categorical => spec.category_index(v).map(Cell::Category).ok_or_else(|| {
                        Error::Data(format!(
                            "line {}, column '{}': category '{v}' is not in the schema",
                            r + 2,
                            spec.name
                        ))
                    }),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(cells);
    }
    TabularDataset::new(specs, rows)
}

fn format_cell(cell: &Cell, spec: &ColumnSpec) -> String {
    match cell {
        Cell::Missing => String::new(),
        Cell::Numeric(v) => v.to_string(),
        Cell::Category(i) => spec.categories[*i].clone(),
    }
}

pub fn write_csv(path: &Path, ds: &TabularDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ds.specs.iter().map(|s| s.name.as_str()))?;
    for row in &ds.rows {
        w.write_record(row.iter().zip(&ds.specs).map(|(c, s)| format_cell(c, s)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_mask_csv(path: &Path, header: &[String], mask: &Mask) -> Result<()> {
    if header.len() != mask.cols() {
        return Err(Error::shape("write_mask_csv", "header width differs from mask width"));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in 0..mask.rows() {
        w.write_record(mask.row(r).iter().map(|&m| if m { "1" } else { "0" }))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mask_csv(path: &Path) -> Result<(Vec<String>, Mask)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut bits = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Data(format!("mask line {}: wrong field count", rows + 2)));
        }
        for v in rec.iter() {
            bits.push(match v.trim() {
                "0" => false,
                "1" => true,
                other => return Err(Error::Data(format!("mask line {}: '{other}' is not 0/1", rows + 2))),
            });
        }
        rows += 1;
    }
    let cols = header.len();
    Ok((header, Mask::from_vec(rows, cols, bits)?))
}
