//! Component ablation: six toggle combinations, trained and scored.
//!
//! The rows switch the filter, the grayscale consistency guidance, the
//! phase-preserving normalization, and the adversarial branch in the fixed
//! pattern below; identity and center-cluster losses stay on everywhere.
//! Each row trains once per seed on the same dataset and reports retrieval
//! scores averaged across seeds.

use std::fmt::Write as _;

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::Result;
use crate::eval::{self, SplitMetrics};
use crate::model::{Model, Toggles};
use crate::trainer::Trainer;

/// The six rows: label plus (iaf, grayscale guidance, ppnorm, mal).
pub const ROWS: [(&str, Toggles); 6] = [
    ("baseline", Toggles { iaf: false, grayscale_guidance: false, ppnorm: false, mal: false }),
    ("+IAF", Toggles { iaf: true, grayscale_guidance: false, ppnorm: false, mal: false }),
    ("+IAF+L_con", Toggles { iaf: true, grayscale_guidance: true, ppnorm: false, mal: false }),
    ("+PPNorm", Toggles { iaf: false, grayscale_guidance: false, ppnorm: true, mal: false }),
    ("+IAF+L_con+PPNorm", Toggles { iaf: true, grayscale_guidance: true, ppnorm: true, mal: false }),
    ("full", Toggles { iaf: true, grayscale_guidance: true, ppnorm: true, mal: true }),
];

/// One trained-and-scored toggle combination.
pub struct AblationRow {
    pub index: usize,
    pub label: &'static str,
    pub toggles: Toggles,
    /// Mean over seeds of each seed's mean over gallery draws.
    pub mean: SplitMetrics,
    pub per_seed: Vec<SplitMetrics>,
}

/// Trains every row once per seed and scores it on the test split.
/// `progress` receives one line per finished training.
pub fn run(
    cfg: &RunConfig,
    seeds: &[u64],
    mut progress: impl FnMut(&str),
) -> Result<Vec<AblationRow>> {
    let dataset = Dataset::generate(&cfg.data)?;
    let mut rows = Vec::with_capacity(ROWS.len());
    for (i, (label, toggles)) in ROWS.iter().enumerate() {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut model_cfg = cfg.model.clone();
            model_cfg.toggles = *toggles;
            let model = Model::new(&model_cfg, seed)?;
            let mut trainer = Trainer::new(
                model,
                &dataset,
                cfg.schedule.clone(),
                cfg.weights,
                seed,
            )?;
            trainer.gray_identity_loss = cfg.gray_identity_loss;
            trainer.fit(None)?;
            let report = eval::evaluate(&trainer.model, &dataset, cfg.eval_splits, seed)?;
            progress(&format!(
                "[{}/{}] {label} seed {seed}: R-1 {:.1}% mAP {:.1}%",
                i + 1,
                ROWS.len(),
                100.0 * report.mean.rank1,
                100.0 * report.mean.map
            ));
            per_seed.push(report.mean);
        }
        let n = per_seed.len() as f64;
        let mean = SplitMetrics {
            rank1: per_seed.iter().map(|m| m.rank1).sum::<f64>() / n,
            rank10: per_seed.iter().map(|m| m.rank10).sum::<f64>() / n,
            rank20: per_seed.iter().map(|m| m.rank20).sum::<f64>() / n,
            map: per_seed.iter().map(|m| m.map).sum::<f64>() / n,
        };
        rows.push(AblationRow {
            index: i + 1,
            label,
            toggles: *toggles,
            mean,
            per_seed,
        });
    }
    Ok(rows)
}

fn mark(on: bool) -> &'static str {
    if on {
        "x"
    } else {
        ""
    }
}

/// Aligned comparison table: toggle pattern plus seed-averaged scores in
/// percent.
pub fn to_table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>2}  {:<18} {:>4} {:>6} {:>7} {:>4}  {:>7} {:>7} {:>7} {:>7}",
        "#", "combination", "IAF", "L_con", "PPNorm", "MAL", "R-1", "R-10", "R-20", "mAP"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>2}  {:<18} {:>4} {:>6} {:>7} {:>4}  {:>6.2}% {:>6.2}% {:>6.2}% {:>6.2}%",
            r.index,
            r.label,
            mark(r.toggles.iaf),
            mark(r.toggles.grayscale_guidance),
            mark(r.toggles.ppnorm),
            mark(r.toggles.mal),
            100.0 * r.mean.rank1,
            100.0 * r.mean.rank10,
            100.0 * r.mean.rank20,
            100.0 * r.mean.map
        );
    }
    out
}

/// Machine-readable rows: one line per row with fractional scores.
pub fn to_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("index,combination,iaf,l_con,ppnorm,mal,R-1,R-10,R-20,mAP\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.index,
            r.label,
            r.toggles.iaf,
            r.toggles.grayscale_guidance,
            r.toggles.ppnorm,
            r.toggles.mal,
            r.mean.rank1,
            r.mean.rank10,
            r.mean.rank20,
            r.mean.map
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_follow_the_component_grid() {
        assert_eq!(ROWS.len(), 6);
        assert_eq!(ROWS[0].1, Toggles { iaf: false, grayscale_guidance: false, ppnorm: false, mal: false });
        assert_eq!(ROWS[5].1, Toggles { iaf: true, grayscale_guidance: true, ppnorm: true, mal: true });
        // MAL flips only on the last row; guidance implies the filter.
        for (i, (_, t)) in ROWS.iter().enumerate() {
            assert_eq!(t.mal, i == 5);
            assert!(!t.grayscale_guidance || t.iaf);
        }
    }

    #[test]
    fn tiny_ablation_produces_six_scored_rows() {
        let mut cfg = RunConfig::default();
        for (k, v) in [
            ("data.train_identities", "3"),
            ("data.test_identities", "2"),
            ("data.images_per_modality", "2"),
            ("data.height", "8"),
            ("data.width", "8"),
            ("model.stage_channels", "2,3"),
            ("model.iaf_hidden", "2"),
            ("model.disc_hidden", "3"),
            ("model.ppnorm_stages", "2"),
            ("train.epochs", "1"),
            ("train.batch_identities", "2"),
            ("train.images_per_modality", "1"),
            ("eval.splits", "2"),
        ] {
            cfg.apply(k, v).unwrap();
        }
        let cfg = cfg.finalize().unwrap();
        let mut lines = 0;
        let rows = run(&cfg, &[1], |_| lines += 1).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(lines, 6);
        for r in &rows {
            assert!((0.0..=1.0).contains(&r.mean.rank1));
            assert!((0.0..=1.0).contains(&r.mean.map));
            assert_eq!(r.per_seed.len(), 1);
        }
        let table = to_table(&rows);
        assert_eq!(table.lines().count(), 7);
        assert!(table.contains("PPNorm"));
        let csv = to_csv(&rows);
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.starts_with("index,"));
    }
}
