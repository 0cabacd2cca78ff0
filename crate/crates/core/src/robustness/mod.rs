//! Attribution accuracy under image degradations.

pub mod degrade;

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attribution::{evaluate_images, Attributor, EvalReport};
use crate::concepts::ConceptId;
use crate::error::{ensure, Result};
use crate::image::Image;
use crate::parallel::Exec;

pub use degrade::{degrade, parse_spec, Degradation, DegradationKind};

#[derive(Debug, Clone)]
pub struct KindResult {
    pub degradation: Degradation,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct RobustnessReport {
    pub clean: EvalReport,
    pub kinds: Vec<KindResult>,
}

impl RobustnessReport {
    /// Mean and sample standard deviation of per-kind accuracy.
    pub fn mean_std(&self) -> (f64, f64) {
        let acc: Vec<f64> = self.kinds.iter().map(|k| k.report.accuracy()).collect();
        mean_std(&acc)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# severity mapping is a stand-in parameterization\n");
        s.push_str("kind,severity,accuracy,mean_bit_accuracy,null_rate\n");
        writeln!(
            s,
            "clean,0,{:.6},{:.6},{:.6}",
            self.clean.accuracy(),
            self.clean.mean_bit_accuracy(),
            self.clean.null_rate()
        )
        .expect("string write");
        for k in &self.kinds {
            writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6}",
                k.degradation.kind,
                k.degradation.severity,
                k.report.accuracy(),
                k.report.mean_bit_accuracy(),
                k.report.null_rate()
            )
            .expect("string write");
        }
        let (m, sd) = self.mean_std();
        writeln!(s, "# summary\nclean_accuracy,{:.6}\nmean_accuracy,{m:.6}\nstd_accuracy,{sd:.6}", self.clean.accuracy())
            .expect("string write");
        s
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Degrades every image with every listed degradation and attributes the results.
///
/// Image `i` under degradation `k` draws from its own seeded stream.
pub fn robustness_report(
    exec: Exec,
    images: &[(String, Vec<ConceptId>, Image)],
    attributor: &Attributor,
    degradations: &[Degradation],
    seed: u64,
) -> Result<RobustnessReport> {
    ensure!(!images.is_empty(), InvalidArgument, "robustness needs at least one image");
    let clean = evaluate_images(exec, images, attributor)?;
    let mut kinds = Vec::with_capacity(degradations.len());
    for (k, d) in degradations.iter().enumerate() {
        let degraded = crate::parallel::map_range(exec, images.len(), |i| {
            let stream = seed ^ ((k as u64) << 40) ^ (i as u64).wrapping_mul(0x2545_F491_4F6C_DD1D);
            let mut rng = ChaCha8Rng::seed_from_u64(stream);
            let (label, truth, img) = &images[i];
            Ok((label.clone(), truth.clone(), degrade(img, *d, &mut rng)?))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        kinds.push(KindResult {
            degradation: *d,
            report: evaluate_images(exec, &degraded, attributor)?,
        });
    }
    Ok(RobustnessReport { clean, kinds })
}

/// Every kind at one severity.
pub fn all_kinds(severity: f64) -> Result<Vec<Degradation>> {
    DegradationKind::ALL.iter().map(|&k| Degradation::new(k, severity)).collect()
}
