//! Summary tables for fine-tuning comparisons.

use serde::{Deserialize, Serialize};

use crate::online::FinetuneReport;

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Median where a missing value ranks above every present one.
pub fn median_steps(values: &[Option<usize>]) -> Option<f64> {
    let mut v: Vec<Option<usize>> = values.to_vec();
    v.sort_by_key(|x| x.unwrap_or(usize::MAX));
    let n = v.len();
    if n == 0 {
        return None;
    }
    if n % 2 == 1 {
        v[n / 2].map(|x| x as f64)
    } else {
        match (v[n / 2 - 1], v[n / 2]) {
            (Some(a), Some(b)) => Some(0.5 * (a + b) as f64),
            _ => None,
        }
    }
}

/// Paired runs of one seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparePair {
    pub seed_index: usize,
    pub pretrained: FinetuneReport,
    pub scratch: FinetuneReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub scenario_id: String,
    pub reference_return: f64,
    pub threshold_fractions: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub pairs: Vec<ComparePair>,
}

fn fmt_steps(s: Option<f64>) -> String {
    s.map_or_else(|| "-".into(), |v| format!("{v}"))
}

impl CompareReport {
    /// Median steps-to-threshold per arm: `(scratch, pretrained)`.
    pub fn median_steps(&self, threshold: f64) -> (Option<f64>, Option<f64>) {
        let arm = |pick: fn(&ComparePair) -> &FinetuneReport| {
            let v: Vec<Option<usize>> = self.pairs.iter().map(|p| pick(p).steps_to(threshold)).collect();
            median_steps(&v)
        };
        (arm(|p| &p.scratch), arm(|p| &p.pretrained))
    }

    /// One row per threshold with both arms side by side.
    pub fn threshold_table_csv(&self) -> String {
        let mut s = String::from(
            "scenario,threshold_fraction,threshold_return,scratch_median_steps,pretrained_median_steps,scratch_reached,pretrained_reached,seeds\n",
        );
        for (f, &t) in self.threshold_fractions.iter().zip(&self.thresholds) {
            let (sc, pr) = self.median_steps(t);
            let reached = |pick: fn(&ComparePair) -> &FinetuneReport| {
                self.pairs.iter().filter(|p| pick(p).steps_to(t).is_some()).count()
            };
            s += &format!(
                "{},{f},{t:.6},{},{},{},{},{}\n",
                self.scenario_id,
                fmt_steps(sc),
                fmt_steps(pr),
                reached(|p| &p.scratch),
                reached(|p| &p.pretrained),
                self.pairs.len()
            );
        }
        s
    }

    pub fn curves_csv(&self) -> String {
        let mut s = String::from("arm,seed_index,iteration,env_steps,mean_return,success_rate\n");
        for p in &self.pairs {
            for (arm, r) in [("pretrained", &p.pretrained), ("scratch", &p.scratch)] {
                for it in &r.curve {
                    s += &format!(
                        "{arm},{},{},{},{},{}\n",
                        p.seed_index, it.iteration, it.env_steps, it.mean_return, it.success_rate
                    );
                }
            }
        }
        s
    }

    pub fn final_eval_csv(&self) -> String {
        let mut s = String::from("arm,seed_index,mean_return,success_rate\n");
        for p in &self.pairs {
            for (arm, r) in [("pretrained", &p.pretrained), ("scratch", &p.scratch)] {
                s += &format!(
                    "{arm},{},{},{}\n",
                    p.seed_index, r.final_eval.mean_return, r.final_eval.success_rate
                );
            }
        }
        s
    }
}

/// `steps_to_threshold.csv` of one fine-tuning run.
pub fn thresholds_csv(r: &FinetuneReport) -> String {
    let mut s = String::from("scenario,threshold,env_steps\n");
    for h in &r.steps_to_threshold {
        s += &format!(
            "{},{},{}\n",
            r.scenario_id,
            h.threshold,
            h.env_steps.map_or_else(|| "-".into(), |v| v.to_string())
        );
    }
    s
}
