use std::io::Write;

use crate::trpo::{csv_error, LearningCurve};
use crate::{Error, Result};

/// Indices of the `q` trials with the highest final average return, best first.
/// Ties keep the original trial order.
pub fn select_top_q(curves: &[LearningCurve], q: usize) -> Vec<usize> {
    let finals: Vec<f64> = curves
        .iter()
        .map(|c| c.records.last().map_or(f64::NEG_INFINITY, |r| r.avg_return))
        .collect();
    let mut idx: Vec<usize> = (0..curves.len()).collect();
    idx.sort_by(|&a, &b| finals[b].total_cmp(&finals[a]));
    idx.truncate(q);
    idx
}

/// Median of a non-empty slice; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Per-iteration median of the average return over the top `q` trials.
///
/// Curves are truncated to the shortest selected one.
pub fn top_q_median(curves: &[LearningCurve], q: usize) -> Result<Vec<(usize, f64)>> {
    if curves.is_empty() || q == 0 {
        return Err(Error::config("aggregation needs at least one curve and q > 0"));
    }
    if q > curves.len() {
        return Err(Error::config(format!(
            "top-q of {q} requested from only {} trials",
            curves.len()
        )));
    }
    let chosen: Vec<&LearningCurve> = select_top_q(curves, q).into_iter().map(|i| &curves[i]).collect();
    let len = chosen.iter().map(|c| c.records.len()).min().unwrap_or(0);
    Ok((0..len)
        .map(|k| {
            let values: Vec<f64> = chosen.iter().map(|c| c.records[k].avg_return).collect();
            (chosen[0].records[k].iter, median(&values))
        })
        .collect())
}

pub fn write_aggregate<W: Write>(rows: &[(usize, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "avg_return"]).map_err(csv_error)?;
    for (i, r) in rows {
        w.write_record([i.to_string(), r.to_string()]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
