//! Published perplexities for Llama-7B, kept as formatter fixtures. They are
//! never compared against desk-scale results.

use crate::error::{Error, Result};
use crate::pruning::Method;

use super::report::{PruneReport, ReportMetadata, ReportRow};

const TABLE1_METHODS: [Method; 2] = [Method::Magnitude, Method::NegMagnitude];

#[rustfmt::skip]
const TABLE1: [(f64, [f64; 2]); 10] = [
    (0.00, [5.677, 5.677]),
    (0.10, [5.806, 104948.891]),
    (0.20, [6.020, 352772.500]),
    (0.30, [6.669, 335747.406]),
    (0.40, [8.601, 260632.641]),
    (0.50, [17.285, 227413.484]),
    (0.60, [559.987, 185086.078]),
    (0.70, [48414.551, 273153.688]),
    (0.80, [132175.578, 188488.000]),
    (0.90, [317879.250, 185304.016]),
];

const TABLE2_METHODS: [Method; 4] = [Method::Wanda, Method::SparseGpt, Method::Magnitude, Method::Mama];

#[rustfmt::skip]
const TABLE2: [(f64, [f64; 4]); 8] = [
    (0.00, [5.677, 5.677, 5.677, 5.677]),
    (0.50, [7.257, 7.234, 17.285, 17.247]),
    (0.60, [10.691, 10.442, 559.987, 554.727]),
    (0.70, [84.905, 27.214, 48414.551, 51841.121]),
    (0.80, [5782.432, 182.463, 132175.578, 135494.797]),
    (0.90, [19676.668, 3198.101, 317879.250, 301472.500]),
    (0.95, [28309.178, 4088.413, 273552.281, 273629.750]),
    (0.99, [108234.484, 16869.203, 222543.047, 214966.484]),
];

fn build<const M: usize>(methods: [Method; M], table: &[(f64, [f64; M])]) -> Result<PruneReport> {
    let rows = table
        .iter()
        .flat_map(|&(level, cells)| {
            methods.iter().zip(cells).map(move |(&method, perplexity)| ReportRow {
                method,
                level,
                seed: 0,
                perplexity,
                achieved_sparsity: 0.0,
                discarded_rows: 0,
            })
        })
        .collect();
    PruneReport::new(methods.to_vec(), rows, ReportMetadata::default())
}

/// `table1` is magnitude against negated magnitude; `table2` compares
/// wanda, sparsegpt, magnitude and mama.
pub fn load_paper_fixture(name: &str) -> Result<PruneReport> {
    match name {
        "table1" => build(TABLE1_METHODS, &TABLE1),
        "table2" => build(TABLE2_METHODS, &TABLE2),
        other => Err(Error::UnknownFixture(other.to_string())),
    }
}
