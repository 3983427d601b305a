//! CSV import and export.
//!
//! Floats are written with Rust's shortest round-trip formatting, so an
//! export followed by an import reproduces every value bit for bit.

use std::collections::HashMap;
use std::io::{Read, Write};

use ndarray::Array2;

use crate::design::{Sample, StratumInfo};
use crate::error::{Error, Result};
use crate::imputation::ImputedSample;
use crate::popgen::{FinitePopulation, PopulationUnit};

/// Default additivity tolerance for respondents, as a fraction of `x`.
pub const DEFAULT_ADDITIVITY_TOLERANCE: f64 = 0.005;

const UNIT_ID: &str = "unit_id";
const CELL: &str = "cell";
const STRATUM: &str = "stratum";
const WEIGHT: &str = "weight";
const X: &str = "x";
const RESPONDENT: &str = "respondent";
const IMPUTED: &str = "imputed";
const DONOR_ID: &str = "donor_id";
const RESERVED: [&str; 8] = [
    UNIT_ID, CELL, STRATUM, WEIGHT, X, RESPONDENT, IMPUTED, DONOR_ID,
];

fn fmt(v: f64) -> String {
    v.to_string()
}

pub fn write_population_csv<W: Write>(pop: &FinitePopulation, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_string(), STRATUM.into(), X.into()];
    header.extend(Sample::default_item_labels(pop.num_items));
    out.write_record(&header)?;
    for u in &pop.units {
        let mut row = vec![u.id.to_string(), u.stratum.to_string(), fmt(u.x)];
        row.extend(u.y.iter().map(|&v| fmt(v)));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_population_csv<R: Read>(r: R) -> Result<FinitePopulation> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.len() < 5 || &header[0] != "id" || &header[1] != STRATUM || &header[2] != X {
        return Err(Error::Data(
            "population header must start with id,stratum,x followed by at least two items".into(),
        ));
    }
    let num_items = header.len() - 3;
    let mut units = Vec::new();
    let mut num_strata = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let at = |e: String| Error::Data(format!("line {}: {e}", line + 2));
        let field = |j: usize| -> Result<f64> {
            rec[j]
                .trim()
                .parse::<f64>()
                .map_err(|e| at(format!("{}: {e}", &header[j])))
        };
        let id = rec[0]
            .trim()
            .parse::<u64>()
            .map_err(|e| at(format!("id: {e}")))?;
        let stratum = rec[1]
            .trim()
            .parse::<usize>()
            .map_err(|e| at(format!("stratum: {e}")))?;
        if stratum == 0 {
            return Err(at("strata are numbered from 1".into()));
        }
        num_strata = num_strata.max(stratum);
        let y = (3..header.len()).map(field).collect::<Result<Vec<_>>>()?;
        units.push(PopulationUnit {
            id,
            stratum,
            x: field(2)?,
            nonzero: y.iter().filter(|&&v| v > 0.0).count(),
            y,
        });
    }
    Ok(FinitePopulation::from_units(units, num_strata, num_items))
}

/// A survey extract: one row per sampled unit with its design weight, total,
/// reported details and response status.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDataset {
    pub sample: Sample,
    pub respondent: Vec<bool>,
    /// Unit ids of respondents whose details missed their total by more than
    /// the tolerance and were treated as nonrespondents.
    pub demoted: Vec<u64>,
}

/// Write a sample in the dataset layout:
/// `unit_id,cell,stratum,weight,x,<items>,respondent`.
pub fn write_dataset_csv<W: Write>(sample: &Sample, respondent: &[bool], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = [UNIT_ID, CELL, STRATUM, WEIGHT, X]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(sample.item_labels.iter().cloned());
    header.push(RESPONDENT.into());
    out.write_record(&header)?;
    for i in 0..sample.len() {
        let mut row = vec![
            sample.ids[i].to_string(),
            sample.cell_labels[sample.cells[i]].clone(),
            sample.strata_info[sample.strata[i]].label.clone(),
            fmt(sample.weights[i]),
            fmt(sample.x[i]),
        ];
        row.extend((0..sample.num_items()).map(|t| fmt(sample.y[[i, t]])));
        row.push(if respondent[i] { "1" } else { "0" }.into());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Some(true),
        "0" | "false" | "no" | "n" => Some(false),
        _ => None,
    }
}

fn index_of(labels: &mut Vec<String>, lookup: &mut HashMap<String, usize>, label: &str) -> usize {
    if let Some(&k) = lookup.get(label) {
        return k;
    }
    labels.push(label.to_string());
    lookup.insert(label.to_string(), labels.len() - 1);
    labels.len() - 1
}

/// Read a dataset, validating weights and totals and demoting respondents
/// whose details do not add up to `x` within `tolerance * x`.
///
/// Stratum population sizes are the rounded sums of weights. Detail values of
/// nonrespondents may be left empty.
pub fn read_dataset_csv<R: Read>(r: R, tolerance: f64) -> Result<EmpiricalDataset> {
    if !(tolerance >= 0.0) {
        return Err(Error::Config(format!(
            "additivity tolerance {tolerance} is negative"
        )));
    }
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let need = |name: &str| {
        col(name).ok_or_else(|| Error::Data(format!("dataset is missing the `{name}` column")))
    };
    let (c_id, c_cell, c_stratum, c_w, c_x, c_r) = (
        need(UNIT_ID)?,
        need(CELL)?,
        need(STRATUM)?,
        need(WEIGHT)?,
        need(X)?,
        need(RESPONDENT)?,
    );
    let item_cols: Vec<usize> = (0..header.len())
        .filter(|&j| !RESERVED.contains(&header[j].trim()))
        .collect();
    if item_cols.len() < 2 {
        return Err(Error::Data(
            "dataset needs at least two detail item columns".into(),
        ));
    }
    let item_labels: Vec<String> = item_cols
        .iter()
        .map(|&j| header[j].trim().to_string())
        .collect();

    let mut ids = Vec::new();
    let mut cells = Vec::new();
    let mut strata = Vec::new();
    let mut weights = Vec::new();
    let mut xs = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut respondent = Vec::new();
    let mut demoted = Vec::new();
    let (mut cell_labels, mut cell_lookup) = (Vec::new(), HashMap::new());
    let (mut stratum_labels, mut stratum_lookup) = (Vec::new(), HashMap::new());

    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let at = |e: String| Error::Data(format!("line {}: {e}", line + 2));
        let num = |j: usize| -> Result<f64> {
            rec[j]
                .trim()
                .parse::<f64>()
                .map_err(|e| at(format!("{}: {e}", header[j].trim())))
        };
        let id = rec[c_id]
            .trim()
            .parse::<u64>()
            .map_err(|e| at(format!("{UNIT_ID}: {e}")))?;
        let w = num(c_w)?;
        if !(w >= 1.0) || !w.is_finite() {
            return Err(at(format!("weight {w} is below 1")));
        }
        let x = num(c_x)?;
        if !(x > 0.0) || !x.is_finite() {
            return Err(at(format!("total x = {x} must be positive")));
        }
        let mut resp = parse_flag(&rec[c_r])
            .ok_or_else(|| at(format!("respondent flag `{}` is not 0/1", &rec[c_r])))?;
        let y: Vec<f64> = item_cols
            .iter()
            .map(|&j| {
                if !resp && rec[j].trim().is_empty() {
                    Ok(0.0)
                } else {
                    num(j)
                }
            })
            .collect::<Result<_>>()?;
        if resp {
            if let Some(v) = y.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
                return Err(at(format!("detail value {v} must be nonnegative")));
            }
            let sum: f64 = y.iter().sum();
            if (sum - x).abs() > tolerance * x {
                resp = false;
                demoted.push(id);
            }
        }
        ids.push(id);
        cells.push(index_of(
            &mut cell_labels,
            &mut cell_lookup,
            rec[c_cell].trim(),
        ));
        strata.push(index_of(
            &mut stratum_labels,
            &mut stratum_lookup,
            rec[c_stratum].trim(),
        ));
        weights.push(w);
        xs.push(x);
        rows.push(y);
        respondent.push(resp);
    }
    if ids.is_empty() {
        return Err(Error::Data("dataset has no rows".into()));
    }
    let n = ids.len();
    let mut y = Array2::zeros((n, item_labels.len()));
    for (i, r) in rows.iter().enumerate() {
        for (t, v) in r.iter().enumerate() {
            y[[i, t]] = *v;
        }
    }
    let strata_info = stratum_labels
        .iter()
        .enumerate()
        .map(|(h, label)| {
            let members: Vec<usize> = (0..n).filter(|&i| strata[i] == h).collect();
            let sum_w: f64 = members.iter().map(|&i| weights[i]).sum();
            StratumInfo {
                label: label.clone(),
                population_size: (sum_w.round() as usize).max(members.len()),
                sample_size: members.len(),
            }
        })
        .collect();
    Ok(EmpiricalDataset {
        sample: Sample {
            ids,
            strata,
            cells,
            weights,
            x: xs,
            y,
            strata_info,
            cell_labels,
            item_labels,
        },
        respondent,
        demoted,
    })
}

/// Dataset layout plus `imputed` (0/1) and `donor_id` columns; detail columns
/// hold the final values.
pub fn write_imputed_csv<W: Write>(imp: &ImputedSample, w: W) -> Result<()> {
    let s = &imp.sample;
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = [UNIT_ID, CELL, STRATUM, WEIGHT, X]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(s.item_labels.iter().cloned());
    header.extend([RESPONDENT.to_string(), IMPUTED.into(), DONOR_ID.into()]);
    out.write_record(&header)?;
    for i in 0..s.len() {
        let mut row = vec![
            s.ids[i].to_string(),
            s.cell_labels[s.cells[i]].clone(),
            s.strata_info[s.strata[i]].label.clone(),
            fmt(s.weights[i]),
            fmt(s.x[i]),
        ];
        row.extend((0..s.num_items()).map(|t| fmt(imp.values[[i, t]])));
        let donor = imp.assignment.donor_of[i];
        row.push(if imp.delta[i] { "1" } else { "0" }.into());
        row.push(if donor.is_some() { "1" } else { "0" }.into());
        row.push(donor.map(|d| s.ids[d].to_string()).unwrap_or_default());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
