use std::io::Write;

use rayon::prelude::*;

use super::{evaluate_loss, LossError, LossSpec, Result, SoftPrediction};
use crate::table::{write_loss_csv, CaseKey, ScoreTable, TableError};
use crate::volume::BinaryMask;

/// One (prediction, reference) pair to evaluate.
#[derive(Debug, Clone)]
pub struct LossCase {
    pub key: CaseKey,
    pub pred: SoftPrediction,
    pub reference: BinaryMask,
}

/// Loss values for every case and spec. Column `j` is `specs[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTable {
    pub specs: Vec<LossSpec>,
    pub table: ScoreTable,
}

impl LossTable {
    pub fn write_csv(&self, out: impl Write) -> std::result::Result<(), TableError> {
        let hashes: Vec<String> = self.specs.iter().map(LossSpec::params_hash).collect();
        write_loss_csv(out, &self.table, &hashes)
    }
}

/// Evaluate every spec on every case. Cells are computed in parallel.
pub fn loss_response_matrix(cases: &[LossCase], specs: &[LossSpec]) -> Result<LossTable> {
    if cases.is_empty() {
        return Err(LossError::Empty("no cases"));
    }
    if specs.is_empty() {
        return Err(LossError::Empty("no loss specs"));
    }
    let rows: Vec<Vec<f64>> = cases
        .par_iter()
        .map(|case| {
            specs
                .iter()
                .map(|spec| {
                    evaluate_loss(spec, &case.pred, &case.reference).map_err(|e| LossError::Cell {
                        cell: format!("{}, {}, {}, {}", case.key.exam, case.key.method, case.key.channel, spec.label()),
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    // Duplicate spec labels get a positional suffix so columns stay addressable.
    let mut columns: Vec<String> = Vec::with_capacity(specs.len());
    for spec in specs {
        let base = spec.label();
        let mut name = base.clone();
        let mut k = 2;
        while columns.contains(&name) {
            name = format!("{base}#{k}");
            k += 1;
        }
        columns.push(name);
    }
    let mut table = ScoreTable::new(columns);
    for (case, values) in cases.iter().zip(rows) {
        table
            .push_row(case.key.clone(), values)
            .map_err(|_| LossError::Cell {
                cell: format!("{}, {}, {}", case.key.exam, case.key.method, case.key.channel),
                source: Box::new(LossError::Empty("duplicate row key")),
            })?;
    }
    Ok(LossTable {
        specs: specs.to_vec(),
        table,
    })
}
