//! Analytic false-positive and false-negative tables.

use std::fmt::Write;

use sparse_ard::rates::{fn_rate, fp_rate, psi, RateQuery};
use sparse_ard::sparsifiers::Method;
use sparse_ard::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub param: f64,
    pub psi: f64,
    pub fp: f64,
    /// `None` for a true zero, where a miss is undefined.
    pub fn_rate: Option<f64>,
}

pub fn rate_table(method: Method, params: &[f64], rho: f64, sigma: f64, xi: f64) -> Result<Vec<RateRow>> {
    params
        .iter()
        .map(|&param| {
            let q = RateQuery { xi_true: xi, rho, sigma, method, param };
            let miss = fn_rate(&q)?;
            Ok(RateRow {
                param,
                psi: psi(method, param, rho, sigma)?,
                fp: fp_rate(&q)?,
                fn_rate: miss.defined.then_some(miss.value),
            })
        })
        .collect()
}

/// Tab-separated table with a header line.
pub fn format_table(rows: &[RateRow]) -> String {
    let mut s = String::from("param\tpsi\tfp\tfn\n");
    for r in rows {
        let miss = r.fn_rate.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "NA".into());
        let _ = writeln!(s, "{:.6e}\t{:.6e}\t{:.6e}\t{}", r.param, r.psi, r.fp, miss);
    }
    s
}
