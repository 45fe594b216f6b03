//! Spectral metrics, sampling trajectories and the σ ablation.
//!
//! Every metric here is computed on images clamped to `[-1, 1]`, the same
//! range the image writers accept.

mod spectral;

pub use spectral::{
    band_energies, default_cutoff, dft2, high_freq_energy, low_band_correlation, nyquist,
    radial_frequency, total_variation, BandEnergies, Complex,
};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::denoiser::NoisePredictor;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::pnm;
use crate::sampler::{sample_many, SamplerConfig, DEFAULT_SIGMA};
use crate::schedule::NoiseSchedule;

pub const DEFAULT_SNAPSHOTS: [usize; 6] = [1000, 400, 300, 200, 100, 0];
pub const DEFAULT_ABLATION_SIGMAS: [usize; 4] = [0, 100, 250, 400];

fn clamped(img: &Tensor<f32>) -> Tensor<f32> {
    img.clamp(-1.0, 1.0)
}

/// Band energies and total variation of one image.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SpectralReport {
    pub total: f64,
    pub low: f64,
    pub high: f64,
    pub total_variation: f64,
}

impl SpectralReport {
    pub fn of(img: &Tensor<f32>, rho: f64) -> Result<Self> {
        let img = clamped(img);
        let e = band_energies(&img, rho)?;
        Ok(SpectralReport {
            total: e.total,
            low: e.low,
            high: e.high,
            total_variation: total_variation(&img)?,
        })
    }
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Summary::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Summary {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub t: usize,
    /// One report per run, on the predicted clean image at step `t`.
    pub reports: Vec<SpectralReport>,
    /// Low-band correlation of each run's prediction with its final image.
    pub correlations: Vec<f64>,
}

impl TrajectoryRow {
    pub fn high(&self) -> Summary {
        Summary::of(self.reports.iter().map(|r| r.high))
    }

    pub fn low(&self) -> Summary {
        Summary::of(self.reports.iter().map(|r| r.low))
    }

    pub fn correlation(&self) -> Summary {
        Summary::of(self.correlations.iter().copied())
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryReport {
    pub rho: f64,
    /// In sampling order, so `t` decreases down the table.
    pub rows: Vec<TrajectoryRow>,
    /// Predicted clean images of the first run, aligned with `rows`.
    pub first_run: Vec<Tensor<f32>>,
}

impl TrajectoryReport {
    /// Snapshot interval `(t_from, t_to)` over which mean high-band energy
    /// grows fastest per denoising step.
    pub fn peak_detail_growth(&self) -> Option<(usize, usize)> {
        self.rows
            .windows(2)
            .map(|w| {
                let rate = (w[1].high().mean - w[0].high().mean) / (w[0].t - w[1].t) as f64;
                (rate, (w[0].t, w[1].t))
            })
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, span)| span)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,total,low,high,high_std,total_variation,low_band_corr\n");
        for r in &self.rows {
            let tot = Summary::of(r.reports.iter().map(|x| x.total));
            let tv = Summary::of(r.reports.iter().map(|x| x.total_variation));
            let (h, l, c) = (r.high(), r.low(), r.correlation());
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.t, tot.mean, l.mean, h.mean, h.std, tv.mean, c.mean
            );
        }
        s
    }
}

/// Samples `runs` trajectories (run `i` seeded as in [`sample_many`]) and
/// reports spectral metrics of the predicted clean image at each snapshot.
pub fn trajectory_report<M: NoisePredictor + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    snapshot_steps: &[usize],
    runs: usize,
    rho: f64,
) -> Result<TrajectoryReport> {
    if runs == 0 {
        return Err(Error::invalid("trajectory needs at least one run"));
    }
    let cfg = SamplerConfig {
        snapshot_steps: snapshot_steps.to_vec(),
        ..cfg.clone()
    };
    let outs = sample_many(model, sched, &cfg, runs, |_| cfg.class)?;
    let per_run = outs
        .par_iter()
        .map(|o| {
            let fin = clamped(&o.image);
            o.snapshots
                .iter()
                .map(|s| {
                    let x0 = clamped(&s.x0_pred);
                    Ok((
                        SpectralReport::of(&x0, rho)?,
                        low_band_correlation(&x0, &fin, rho)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = outs[0]
        .snapshots
        .iter()
        .enumerate()
        .map(|(k, s)| TrajectoryRow {
            t: s.t,
            reports: per_run.iter().map(|r| r[k].0).collect(),
            correlations: per_run.iter().map(|r| r[k].1).collect(),
        })
        .collect();
    let first_run = outs[0]
        .snapshots
        .iter()
        .map(|s| clamped(&s.x0_pred))
        .collect();
    Ok(TrajectoryReport {
        rho,
        rows,
        first_run,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub sigma: usize,
    pub is_default: bool,
    pub high: Summary,
    pub total_variation: Summary,
}

#[derive(Clone, Debug)]
pub struct AblationTable {
    pub rho: f64,
    pub rows: Vec<AblationRow>,
    /// Clamped samples, `samples[row][run]`; run `i` shares its seed across rows.
    pub samples: Vec<Vec<Tensor<f32>>>,
}

impl AblationTable {
    pub fn to_csv(&self, image_dirs: &[String]) -> String {
        let mut s = String::from(
            "sigma,default,mean_high_freq_energy,std_high_freq_energy,mean_tv,std_tv,images\n",
        );
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6},{:.6},{}",
                r.sigma,
                r.is_default,
                r.high.mean,
                r.high.std,
                r.total_variation.mean,
                r.total_variation.std,
                image_dirs.get(i).map(String::as_str).unwrap_or("")
            );
        }
        s
    }

    /// Writes every sample, `ablation.csv` and a contact sheet with one row
    /// per σ and up to `grid_cols` samples per row. Returns the written paths.
    pub fn write(&self, dir: impl AsRef<Path>, grid_cols: usize) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut dirs = Vec::new();
        for (row, imgs) in self.rows.iter().zip(&self.samples) {
            let name = format!("sigma_{}", row.sigma);
            let sub = dir.join(&name);
            std::fs::create_dir_all(&sub)?;
            for (i, img) in imgs.iter().enumerate() {
                let p = sub.join(format!("{i:04}.{}", pnm::extension(img)?));
                pnm::write_image(img, &p)?;
                written.push(p);
            }
            dirs.push(name);
        }
        let csv = dir.join("ablation.csv");
        std::fs::write(&csv, self.to_csv(&dirs))?;
        written.push(csv);
        let cols = grid_cols.max(1);
        let grid_rows: Vec<Vec<Tensor<f32>>> = self
            .samples
            .iter()
            .map(|r| r.iter().take(cols).cloned().collect())
            .collect();
        let sheet = pnm::to_rgb(&pnm::contact_sheet(&grid_rows, 2, 1.0)?)?;
        let grid = dir.join("grid.ppm");
        pnm::write_image(&sheet, &grid)?;
        written.push(grid);
        Ok(written)
    }
}

/// Samples `n_per` images for each σ with seeds shared across σ, so σ is
/// the only factor that varies between rows.
pub fn ablate_sigma<M: NoisePredictor + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    base_cfg: &SamplerConfig,
    sigmas: &[usize],
    n_per: usize,
    rho: f64,
    class_of: impl Fn(usize) -> usize + Sync,
) -> Result<AblationTable> {
    if sigmas.is_empty() || n_per == 0 {
        return Err(Error::invalid(
            "ablation needs at least one σ and one sample",
        ));
    }
    let mut rows = Vec::new();
    let mut samples = Vec::new();
    for &sigma in sigmas {
        let cfg = SamplerConfig {
            sigma,
            snapshot_steps: Vec::new(),
            ..base_cfg.clone()
        };
        let imgs: Vec<Tensor<f32>> = sample_many(model, sched, &cfg, n_per, &class_of)?
            .into_iter()
            .map(|o| clamped(&o.image))
            .collect();
        let reports = imgs
            .par_iter()
            .map(|img| SpectralReport::of(img, rho))
            .collect::<Result<Vec<_>>>()?;
        rows.push(AblationRow {
            sigma,
            is_default: sigma == DEFAULT_SIGMA,
            high: Summary::of(reports.iter().map(|r| r.high)),
            total_variation: Summary::of(reports.iter().map(|r| r.total_variation)),
        });
        samples.push(imgs);
    }
    Ok(AblationTable { rho, rows, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{GaussianMixtureOracle, OraclePredictor};
    use crate::rng::{gaussian, substream};

    fn oracle_model() -> OraclePredictor {
        let mean: Tensor<f64> = gaussian(&[1, 8, 8], &mut substream(4, "m", 0))
            .scale(0.5)
            .unwrap();
        OraclePredictor {
            oracle: GaussianMixtureOracle::point_mass(mean),
            schedule: NoiseSchedule::default(),
            patch_size: 4,
        }
    }

    fn cfg() -> SamplerConfig {
        SamplerConfig {
            steps: 20,
            sigma: 0,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn summary_of_values() {
        let s = Summary::of([1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(Summary::of([]), Summary::default());
    }

    #[test]
    fn trajectory_endpoint_correlates_perfectly() {
        let m = oracle_model();
        let rep = trajectory_report(&m, &m.schedule, &cfg(), &[1000, 500, 100, 0], 2, 2.0).unwrap();
        let ts: Vec<usize> = rep.rows.iter().map(|r| r.t).collect();
        assert_eq!(ts, [1000, 500, 100, 0]);
        for c in &rep.rows[3].correlations {
            assert!((c - 1.0).abs() < 1e-12);
        }
        assert!(rep.peak_detail_growth().is_some());
        assert_eq!(rep.to_csv().lines().count(), 5);
        assert_eq!(rep.first_run.len(), 4);
    }

    #[test]
    fn trajectory_rejects_unvisited_snapshot() {
        let m = oracle_model();
        assert!(trajectory_report(&m, &m.schedule, &cfg(), &[999], 1, 2.0).is_err());
    }

    #[test]
    fn ablation_rows_and_default_marker() {
        let m = oracle_model();
        let t = ablate_sigma(&m, &m.schedule, &cfg(), &[0, 250], 3, 2.0, |_| 0).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(!t.rows[0].is_default && t.rows[1].is_default);
        assert_eq!(t.samples[1].len(), 3);

        let dir = tempfile::tempdir().unwrap();
        let written = t.write(dir.path(), 2).unwrap();
        assert_eq!(written.len(), 6 + 2);
        let csv = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
        assert!(csv.lines().nth(2).unwrap().starts_with("250,true,"));
    }

    #[test]
    fn ablation_sigma_zero_matches_plain_sampling() {
        let m = oracle_model();
        let t = ablate_sigma(&m, &m.schedule, &cfg(), &[0], 2, 2.0, |_| 0).unwrap();
        let plain = sample_many(&m, &m.schedule, &cfg(), 2, |_| 0).unwrap();
        for (a, b) in t.samples[0].iter().zip(&plain) {
            assert_eq!(a, &b.image.clamp(-1.0, 1.0));
        }
    }
}
