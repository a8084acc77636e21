//! Subject re-identification as retrieval over pairwise similarities.

use crate::error::{Error, Result};
use crate::metrics::ssim::{ms_ssim_with, MsSsimConfig};
use crate::scalar::Scalar;
use crate::tensor::Volume;

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub query: usize,
    pub subject: String,
    pub predicted: String,
    pub average_precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub f1: f64,
    pub map: f64,
    pub queries: Vec<QueryResult>,
}

/// Symmetric MS-SSIM matrix (diagonal is 1).
pub fn similarity_matrix<T: Scalar>(scans: &[Volume<T>], cfg: &MsSsimConfig) -> Result<Vec<Vec<f64>>> {
    let n = scans.len();
    let mut sim = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s = ms_ssim_with(&scans[i], &scans[j], cfg)?;
            sim[i][j] = s;
            sim[j][i] = s;
        }
    }
    Ok(sim)
}

/// Average precision with tied scores resolved by their expectation under a
/// uniformly random order within each tie group.
pub(crate) fn tie_aware_ap(scores: &[f64], relevant: &[bool]) -> f64 {
    let total_pos = relevant.iter().filter(|&&r| r).count();
    if total_pos == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut seen, mut pos_before, mut ap) = (0usize, 0usize, 0.0);
    let mut g = 0;
    while g < order.len() {
        let mut end = g + 1;
        while end < order.len() && scores[order[end]] == scores[order[g]] {
            end += 1;
        }
        let t = end - g;
        let p = order[g..end].iter().filter(|&&i| relevant[i]).count();
        if p > 0 {
            let mut sum = 0.0;
            for j in 1..=t {
                let extra = if t > 1 { (j - 1) as f64 * (p - 1) as f64 / (t - 1) as f64 } else { 0.0 };
                sum += (pos_before as f64 + 1.0 + extra) / (seen + j) as f64;
            }
            ap += p as f64 / t as f64 * sum;
        }
        seen += t;
        pos_before += p;
        g = end;
    }
    ap / total_pos as f64
}

/// Ranks every other scan by similarity for each query that has at least one
/// same-subject positive. Top-1 predicts identity; F1 is micro-averaged.
pub fn reid_retrieval(subjects: &[String], similarity: &[Vec<f64>]) -> Result<RetrievalReport> {
    let n = subjects.len();
    if similarity.len() != n || similarity.iter().any(|r| r.len() != n) {
        return Err(Error::dim("similarity matrix does not match the subject list"));
    }
    let mut queries = Vec::new();
    for q in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| j != q).collect();
        let relevant: Vec<bool> = others.iter().map(|&j| subjects[j] == subjects[q]).collect();
        if !relevant.iter().any(|&r| r) {
            continue;
        }
        let scores: Vec<f64> = others.iter().map(|&j| similarity[q][j]).collect();
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = i;
            }
        }
        queries.push(QueryResult {
            query: q,
            subject: subjects[q].clone(),
            predicted: subjects[others[best]].clone(),
            average_precision: tie_aware_ap(&scores, &relevant),
        });
    }
    if queries.is_empty() {
        return Err(Error::config("no subject has two or more scans"));
    }
    let map = queries.iter().map(|q| q.average_precision).sum::<f64>() / queries.len() as f64;
    // micro-averaged over subjects: pooled TP / FP / FN
    let tp = queries.iter().filter(|q| q.predicted == q.subject).count() as f64;
    let fp = queries.len() as f64 - tp;
    let fn_ = fp;
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fn_);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(RetrievalReport { f1, map, queries })
}
