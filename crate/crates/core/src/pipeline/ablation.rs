//! The four-variant comparison: full, fixed threshold, single conditioned
//! pathway, and no regime detection at all.

use std::fmt::Write as _;
use std::time::Instant;

use super::{Ablation, DataSource, Evaluation, PipelineError, RunConfig, System};
use crate::evalsuite::{compare, EvalReport, SignificanceRow};

#[derive(Clone, Debug)]
pub struct VariantRun {
    pub variant: Ablation,
    pub seed: u64,
    pub system: System,
    pub evaluation: Evaluation,
    pub report: EvalReport,
    /// Training plus test evaluation, wall clock.
    pub seconds: f64,
}

/// `base` with the master seed and, for synthetic data, the market seed set
/// to `seed`.
pub fn seeded(base: &RunConfig, seed: u64) -> RunConfig {
    let mut c = base.clone();
    c.seed = seed;
    if let DataSource::Synthetic(s) = &mut c.data {
        s.seed = seed;
    }
    c
}

fn finish(variant: Ablation, seed: u64, system: System, started: Instant) -> Result<VariantRun, PipelineError> {
    let evaluation = system.evaluate_test()?;
    let report = system.report(variant.label(), &evaluation)?;
    Ok(VariantRun {
        variant,
        seed,
        system,
        evaluation,
        report,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Trains and evaluates all four variants on one seed, in `Ablation::ALL`
/// order. The fixed-threshold variant reuses the full run's first two
/// stages, which is exactly what training it alone would produce.
pub fn run_seed(base: &RunConfig, seed: u64, mut progress: impl FnMut(&str)) -> Result<Vec<VariantRun>, PipelineError> {
    let cfg = seeded(base, seed).configure_ablation(Ablation::Full);
    let started = Instant::now();
    let mut full = System::from_config(cfg.clone())?;
    full.run_stages(&[1, 2], |_| Ok(()))?;
    let shared = started.elapsed();

    let fixed_start = Instant::now();
    let no_sac = full.without_controller();
    let no_sac = finish(Ablation::NoSac, seed, no_sac, fixed_start)?;
    progress(&format!("seed {seed}: no-sac done"));

    let resume = Instant::now();
    full.run_stages(&[3, 4], |_| Ok(()))?;
    let mut full = finish(Ablation::Full, seed, full, resume)?;
    full.seconds += shared.as_secs_f64();
    progress(&format!("seed {seed}: full done in {:.0} s", full.seconds));

    let mut runs = vec![full, no_sac];
    for variant in [Ablation::NoDual, Ablation::NoAe] {
        let t = Instant::now();
        let mut s = System::from_config(cfg.configure_ablation(variant))?;
        s.run_stages(&[1, 2, 3, 4], |_| Ok(()))?;
        runs.push(finish(variant, seed, s, t)?);
        progress(&format!("seed {seed}: {} done", variant.label()));
    }
    Ok(runs)
}

/// Paired daily squared-error tests of the full model against each other
/// variant of the same seed.
pub fn significance_rows(runs: &[VariantRun], horizons: &[usize]) -> Result<Vec<(u64, SignificanceRow)>, PipelineError> {
    let mut out = Vec::new();
    for full in runs.iter().filter(|r| r.variant == Ablation::Full) {
        for other in runs.iter().filter(|r| r.seed == full.seed && r.variant != Ablation::Full) {
            for &h in horizons {
                let row = compare(
                    ("full", &full.evaluation.forecasts),
                    (other.variant.label(), &other.evaluation.forecasts),
                    h,
                )?;
                out.push((full.seed, row));
            }
        }
    }
    Ok(out)
}

/// Seed-averaged MAPE, RMSE and DA per variant and horizon.
pub fn comparison_table(runs: &[VariantRun], horizons: &[usize]) -> String {
    let mut s = String::new();
    let mut seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let _ = writeln!(s, "variant comparison, test split, mean over seeds {seeds:?}");
    let _ = write!(s, "{:<10}", "variant");
    for h in horizons {
        let _ = write!(s, " {:>9} {:>9} {:>7}", format!("MAPE@{h}"), format!("RMSE@{h}"), format!("DA@{h}"));
    }
    s.push('\n');
    for v in Ablation::ALL {
        let of: Vec<&VariantRun> = runs.iter().filter(|r| r.variant == v).collect();
        if of.is_empty() {
            continue;
        }
        let _ = write!(s, "{:<10}", v.label());
        for &h in horizons {
            let ms: Vec<_> = of.iter().filter_map(|r| r.report.aggregate(h)).collect();
            let k = ms.len().max(1) as f64;
            let mean = |f: &dyn Fn(&crate::evalsuite::Metrics) -> f64| ms.iter().map(f).sum::<f64>() / k;
            let _ = write!(s, " {:>9.4} {:>9.4} {:>7.2}", mean(&|m| m.mape), mean(&|m| m.rmse), mean(&|m| m.da));
        }
        s.push('\n');
    }
    s
}
