use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sq_dist, Dataset};
use crate::error::{check_dim, FmError, Result};
use crate::field::Denoiser;
use crate::rng::{seeded, substream, SourceKind};

pub const PSNR_CAP: f64 = 99.0;

/// `10 log10(data_max^2 / MSE)`, capped at 99 dB.
pub fn psnr(clean: &[f64], estimate: &[f64], data_max: f64) -> Result<f64> {
    check_dim(clean.len(), estimate.len())?;
    if !(data_max > 0.0) {
        return Err(FmError::InvalidArgument(format!("data_max must be positive, got {data_max}")));
    }
    if clean.is_empty() {
        return Err(FmError::Empty("psnr input"));
    }
    let mse = sq_dist(clean, estimate) / clean.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (data_max * data_max / mse).log10()).min(PSNR_CAP))
}

/// Peak value used for PSNR: the dataset's value range.
pub fn default_data_max(ds: &Dataset) -> Result<f64> {
    let (lo, hi) = ds.value_range();
    if hi > lo {
        Ok(hi - lo)
    } else {
        Err(FmError::InvalidArgument(
            "dataset has a constant value range; set data_max explicitly".into(),
        ))
    }
}

/// Fixed `(x_t, x1)` pairs at one time, reused across evaluations so that
/// PSNR comparisons between denoisers see identical noise.
#[derive(Debug, Clone, PartialEq)]
pub struct PsnrProbe {
    pub t: f64,
    pub inputs: Vec<Vec<f64>>,
    pub cleans: Vec<Vec<f64>>,
    pub data_max: f64,
}

/// First `n` entries of a seeded permutation, or `n` draws with replacement.
fn pick_indices(len: usize, n: usize, replace: bool, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(FmError::Empty("evaluation set"));
    }
    if n <= len {
        let mut perm: Vec<usize> = (0..len).collect();
        perm.shuffle(rng);
        perm.truncate(n);
        Ok(perm)
    } else if replace {
        Ok((0..n).map(|_| rng.random_range(0..len)).collect())
    } else {
        Err(FmError::InvalidArgument(format!(
            "n_eval = {n} exceeds the {len} test samples; allow replacement to proceed"
        )))
    }
}

impl PsnrProbe {
    pub fn from_pairs(t: f64, inputs: Vec<Vec<f64>>, cleans: Vec<Vec<f64>>, data_max: f64) -> Result<Self> {
        check_dim(inputs.len(), cleans.len())?;
        if inputs.is_empty() {
            return Err(FmError::Empty("psnr probe"));
        }
        if !(data_max > 0.0) {
            return Err(FmError::InvalidArgument(format!("data_max must be positive, got {data_max}")));
        }
        Ok(Self {
            t,
            inputs,
            cleans,
            data_max,
        })
    }

    /// `n_eval` test points with fresh `x0 ~ source` under `seed`.
    pub fn draw(
        ds: &Dataset,
        t: f64,
        n_eval: usize,
        seed: u64,
        data_max: f64,
        source: SourceKind,
    ) -> Result<Self> {
        let mut rng = seeded(seed);
        let idx = pick_indices(ds.len(), n_eval, true, &mut rng)?;
        let mut inputs = Vec::with_capacity(n_eval);
        let mut cleans = Vec::with_capacity(n_eval);
        for i in idx {
            let x1 = ds.row(i).to_vec();
            let x0 = source.draw(&mut rng, ds.dim());
            inputs.push(x0.iter().zip(&x1).map(|(a, b)| (1.0 - t) * a + t * b).collect());
            cleans.push(x1);
        }
        Self::from_pairs(t, inputs, cleans, data_max)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Mean per-sample PSNR of given estimates.
    pub fn mean_psnr(&self, estimates: &[Vec<f64>]) -> Result<f64> {
        check_dim(self.len(), estimates.len())?;
        let mut acc = 0.0;
        for (c, e) in self.cleans.iter().zip(estimates) {
            acc += psnr(c, e, self.data_max)?;
        }
        Ok(acc / self.len() as f64)
    }

    pub fn denoise_all<D: Denoiser + ?Sized>(&self, d: &D) -> Result<Vec<Vec<f64>>> {
        self.inputs.par_iter().map(|x| d.denoise(x, self.t)).collect()
    }

    pub fn evaluate<D: Denoiser + ?Sized>(&self, d: &D) -> Result<f64> {
        self.mean_psnr(&self.denoise_all(d)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsnrCurve {
    pub t_grid: Vec<f64>,
    pub psnr: Vec<f64>,
    pub n_eval: usize,
    pub data_max: f64,
}

impl PsnrCurve {
    /// `self - baseline`, pointwise.
    pub fn difference(&self, baseline: &PsnrCurve) -> Result<Vec<f64>> {
        if self.t_grid != baseline.t_grid {
            return Err(FmError::InvalidArgument("curves use different time grids".into()));
        }
        Ok(self.psnr.iter().zip(&baseline.psnr).map(|(a, b)| a - b).collect())
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W, baseline: Option<&PsnrCurve>) -> Result<()> {
        let diff = baseline.map(|b| self.difference(b)).transpose()?;
        let mut out = csv::Writer::from_writer(w);
        if diff.is_some() {
            out.write_record(["t", "psnr", "diff_vs_baseline"])?;
        } else {
            out.write_record(["t", "psnr"])?;
        }
        for (k, (t, p)) in self.t_grid.iter().zip(&self.psnr).enumerate() {
            let mut row = vec![t.to_string(), p.to_string()];
            if let Some(d) = &diff {
                row.push(d[k].to_string());
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Mean PSNR of `D(x_t, t)` against `x1` for each `t`. The same `n_eval`
/// test points are used at every time; the noise at time index `k` comes
/// from substream `k` of `seed`, so two denoisers evaluated with the same
/// seed see identical inputs.
pub fn psnr_curve<D: Denoiser + ?Sized>(
    d: &D,
    ds_test: &Dataset,
    t_grid: &[f64],
    n_eval: usize,
    seed: u64,
    data_max: f64,
    with_replacement: bool,
) -> Result<PsnrCurve> {
    check_dim(d.dim(), ds_test.dim())?;
    let idx = pick_indices(ds_test.len(), n_eval, with_replacement, &mut seeded(seed))?;
    let cleans: Vec<Vec<f64>> = idx.iter().map(|&i| ds_test.row(i).to_vec()).collect();
    let mut psnrs = Vec::with_capacity(t_grid.len());
    for (k, &t) in t_grid.iter().enumerate() {
        if !(0.0..=1.0).contains(&t) {
            return Err(FmError::InvalidTime(t));
        }
        let mut rng = substream(seed, k as u64 + 1);
        let inputs = cleans
            .iter()
            .map(|x1| {
                let x0 = SourceKind::Gaussian.draw(&mut rng, x1.len());
                x0.iter().zip(x1).map(|(a, b)| (1.0 - t) * a + t * b).collect()
            })
            .collect();
        let probe = PsnrProbe::from_pairs(t, inputs, cleans.clone(), data_max)?;
        psnrs.push(probe.evaluate(d)?);
    }
    Ok(PsnrCurve {
        t_grid: t_grid.to_vec(),
        psnr: psnrs,
        n_eval,
        data_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closedform::MmseDenoiser;
    use crate::field::IdentityDenoiser;
    use crate::rng::normal_vec;

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr(&[0.3, 0.4], &[0.3, 0.4], 1.0).unwrap(), PSNR_CAP);
        assert!(psnr(&[0.0, 0.0], &[1.0, 1.0], 1.0).unwrap().abs() < 1e-15);
        assert!((psnr(&[0.0], &[2.0], 2.0).unwrap()).abs() < 1e-15);
        assert!((psnr(&[0.0], &[0.1], 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert!(psnr(&[0.0], &[0.1], 0.0).is_err());
    }

    fn ds(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = seeded(seed);
        Dataset::from_rows("g", (0..n).map(|_| normal_vec(&mut rng, d)).collect(), None).unwrap()
    }

    #[test]
    fn mmse_on_its_training_set_reaches_the_cap_at_one() {
        let data = ds(5, 3, 1);
        let m = MmseDenoiser::new(data.clone());
        let c = psnr_curve(&m, &data, &[0.5, 0.9, 1.0], 5, 2, 1.0, false).unwrap();
        assert_eq!(c.psnr[2], PSNR_CAP);
        assert!(c.psnr[0] < c.psnr[1] && c.psnr[1] <= c.psnr[2]);
    }

    #[test]
    fn identity_denoiser_matches_the_noise_energy() {
        // E|x_t - x1|^2 = (1 - t)^2 (d + |x1|^2) for x0 ~ N(0, I).
        let data = Dataset::from_rows("pt", vec![vec![1.0, -1.0, 0.5, 2.0]], None).unwrap();
        let t = 0.9;
        let probe = PsnrProbe::draw(&data, t, 20_000, 4, 1.0, SourceKind::Gaussian).unwrap();
        let est = probe.denoise_all(&IdentityDenoiser { dim: 4 }).unwrap();
        let mse: f64 = est.iter().map(|e| sq_dist(e, data.row(0))).sum::<f64>() / (est.len() * 4) as f64;
        let expected = (1.0 - t) * (1.0 - t) * (4.0 + 6.25) / 4.0;
        assert!((mse / expected - 1.0).abs() < 0.03, "{mse} vs {expected}");
    }

    #[test]
    fn curve_is_deterministic_and_differences() {
        let data = ds(30, 2, 5);
        let m = MmseDenoiser::new(data.clone());
        let grid = [0.1, 0.4, 0.7];
        let a = psnr_curve(&m, &data, &grid, 20, 9, 2.0, false).unwrap();
        let b = psnr_curve(&m, &data, &grid, 20, 9, 2.0, false).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.difference(&b).unwrap(), vec![0.0; 3]);
        assert!(psnr_curve(&m, &data, &grid, 40, 9, 2.0, false).is_err());
        assert!(psnr_curve(&m, &data, &grid, 40, 9, 2.0, true).is_ok());
    }

    #[test]
    fn larger_estimate_noise_lowers_mean_psnr() {
        let mut rng = seeded(12);
        let clean: Vec<Vec<f64>> = (0..10_000).map(|_| normal_vec(&mut rng, 4)).collect();
        let mut prev = f64::INFINITY;
        for s in [0.01, 0.05, 0.1, 0.5] {
            let est: Vec<Vec<f64>> = clean
                .iter()
                .map(|c| c.iter().map(|a| a + s * normal_vec(&mut rng, 1)[0]).collect())
                .collect();
            let probe = PsnrProbe::from_pairs(0.5, clean.clone(), clean.clone(), 1.0).unwrap();
            let p = probe.mean_psnr(&est).unwrap();
            assert!(p <= prev);
            prev = p;
        }
    }
}
