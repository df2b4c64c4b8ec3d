use crate::data::{sq_dist, Dataset};
use crate::error::{check_dim, FmError, Result};

fn check_aligned(endpoints: &[Vec<Vec<f64>>]) -> Result<(usize, usize)> {
    let first = endpoints.first().ok_or(FmError::Empty("endpoint matrix"))?;
    let n = first.len();
    if n == 0 {
        return Err(FmError::Empty("endpoint samples"));
    }
    let d = first[0].len();
    for m in endpoints {
        check_dim(n, m.len())?;
        for x in m {
            check_dim(d, x.len())?;
        }
    }
    Ok((n, d))
}

/// Entry `(a, b)` is the mean over samples of `|x_a - x_b|` for endpoints
/// `endpoints[model][sample]` that share their initial states.
pub fn pairwise_distance_matrix(endpoints: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    let (n, _) = check_aligned(endpoints)?;
    let m = endpoints.len();
    let mut out = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in a + 1..m {
            let s: f64 = endpoints[a]
                .iter()
                .zip(&endpoints[b])
                .map(|(x, y)| sq_dist(x, y).sqrt())
                .sum();
            out[a][b] = s / n as f64;
            out[b][a] = out[a][b];
        }
    }
    Ok(out)
}

/// Per model, the mean over samples of the distance to the nearest training
/// point.
pub fn distance_to_trainset(endpoints: &[Vec<Vec<f64>>], ds: &Dataset) -> Result<Vec<f64>> {
    let (n, d) = check_aligned(endpoints)?;
    check_dim(ds.dim(), d)?;
    Ok(endpoints
        .iter()
        .map(|m| m.iter().map(|x| ds.nearest(x).1.sqrt()).sum::<f64>() / n as f64)
        .collect())
}

pub fn write_matrix_csv<W: std::io::Write>(w: W, labels: &[String], m: &[Vec<f64>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![String::new()];
    header.extend(labels.iter().cloned());
    out.write_record(&header)?;
    for (label, row) in labels.iter().zip(m) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(f64::to_string));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
