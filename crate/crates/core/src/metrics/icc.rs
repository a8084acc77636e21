//! ICC(2,1): two-way random effects, absolute agreement, single measurement,
//! with the F-based 95% confidence interval of McGraw and Wong.

use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IccReport {
    pub icc: f64,
    pub lower: f64,
    pub upper: f64,
    pub subjects: usize,
    pub ms_rows: f64,
    pub ms_cols: f64,
    pub ms_error: f64,
}

/// Test-retest ICC between two paired runs.
pub fn icc_test_retest(run_a: &[f64], run_b: &[f64]) -> Result<IccReport> {
    if run_a.len() != run_b.len() {
        return Err(Error::Pairing(run_a.len(), run_b.len()));
    }
    if run_a.len() < 5 {
        return Err(Error::IccUndefined(format!("need at least 5 pairs, got {}", run_a.len())));
    }
    let table: Vec<Vec<f64>> = run_a.iter().zip(run_b).map(|(&a, &b)| vec![a, b]).collect();
    icc_a1(&table)
}

fn f_quantile(p: f64, d1: f64, d2: f64) -> Result<f64> {
    let dist = FisherSnedecor::new(d1, d2).map_err(|e| Error::IccUndefined(e.to_string()))?;
    Ok(dist.inverse_cdf(p))
}

/// ICC(A,1) for an `n x k` table (rows are subjects, columns are runs).
pub fn icc_a1(table: &[Vec<f64>]) -> Result<IccReport> {
    let n = table.len();
    let k = table.first().map_or(0, Vec::len);
    if n < 2 || k < 2 || table.iter().any(|r| r.len() != k) {
        return Err(Error::IccUndefined("need a rectangular table with at least 2 rows and 2 columns".into()));
    }
    if table.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::IccUndefined("non-finite measurement".into()));
    }
    let (nf, kf) = (n as f64, k as f64);
    let grand = table.iter().flatten().sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = table.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let col_means: Vec<f64> = (0..k).map(|j| table.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let ss_rows = kf * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_cols = nf * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_total: f64 = table.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let ss_err = (ss_total - ss_rows - ss_cols).max(0.0);
    let msr = ss_rows / (nf - 1.0);
    let msc = ss_cols / (kf - 1.0);
    let mse = ss_err / ((nf - 1.0) * (kf - 1.0));

    let denom = msr + (kf - 1.0) * mse + kf * (msc - mse) / nf;
    if !(denom > 0.0) || ss_total <= f64::EPSILON * grand.abs().max(1.0) * nf * kf {
        return Err(Error::IccUndefined("zero variance across measurements".into()));
    }
    let icc = ((msr - mse) / denom).clamp(-1.0, 1.0);

    let (lower, upper) = if mse <= 0.0 || icc >= 1.0 {
        (icc, icc)
    } else {
        let a = kf * icc / (nf * (1.0 - icc));
        let b = 1.0 + kf * icc * (nf - 1.0) / (nf * (1.0 - icc));
        let v = (a * msc + b * mse).powi(2) / ((a * msc).powi(2) / (kf - 1.0) + (b * mse).powi(2) / ((nf - 1.0) * (kf - 1.0)));
        let fl = f_quantile(0.975, nf - 1.0, v)?;
        let fu = f_quantile(0.975, v, nf - 1.0)?;
        let c = kf * nf - kf - nf;
        let lo = nf * (msr - fl * mse) / (fl * (kf * msc + c * mse) + nf * msr);
        let up = nf * (fu * msr - mse) / (kf * msc + c * mse + nf * fu * msr);
        (lo.clamp(-1.0, icc), up.clamp(icc, 1.0))
    };
    Ok(IccReport { icc, lower, upper, subjects: n, ms_rows: msr, ms_cols: msc, ms_error: mse })
}
