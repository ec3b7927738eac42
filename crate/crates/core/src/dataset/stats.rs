use super::record::{Dataset, DatasetManifest, Episode, SCHEMA_VERSION};
use crate::env::{TaskSpec, Tier};

/// Count, mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

/// Single-pass (Welford) summary; empty input gives zeros.
pub fn summarize(values: &[f64]) -> Summary {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in values.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let n = values.len();
    Summary {
        count: n,
        mean,
        std: if n == 0 { 0.0 } else { (m2 / n as f64).sqrt() },
    }
}

pub fn manifest_for(
    task: &TaskSpec,
    tier: Tier,
    seed: u64,
    episodes: &[Episode],
) -> DatasetManifest {
    let returns: Vec<f64> = episodes.iter().map(|e| e.team_return()).collect();
    let s = summarize(&returns);
    DatasetManifest {
        scenario_id: task.scenario_id.clone(),
        tier,
        n_episodes: episodes.len(),
        n_samples: episodes
            .iter()
            .flat_map(|e| e.trajectories.iter())
            .map(|t| t.len())
            .sum(),
        reward_mean: s.mean,
        reward_std: s.std,
        generator_seed: seed,
        schema_version: SCHEMA_VERSION,
    }
}

/// Manifest statistics recomputed from the records.
pub fn stats(dataset: &Dataset) -> DatasetManifest {
    manifest_for(
        &dataset.task,
        dataset.manifest.tier,
        dataset.manifest.generator_seed,
        &dataset.episodes,
    )
}

/// Maps | Quality | # Samples | Reward mean (± std)
pub fn format_table(manifests: &[DatasetManifest]) -> String {
    let mut out = format!(
        "{:<10} | {:<16} | {:>10} | {}\n",
        "Maps", "Quality", "# Samples", "Reward mean (± std)"
    );
    out.push_str(&format!("{}\n", "-".repeat(64)));
    for m in manifests {
        out.push_str(&format!(
            "{:<10} | {:<16} | {:>10} | {:.2} (± {:.2})\n",
            m.scenario_id,
            format!("{}-{}", m.scenario_id, m.tier),
            m.n_samples,
            m.reward_mean,
            m.reward_std
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        let s = summarize(&[1.0, 1.0, 1.0]);
        assert_eq!((s.mean, s.std), (1.0, 0.0));
        let s = summarize(&[0.0, 2.0]);
        assert_eq!((s.mean, s.std), (1.0, 1.0));
        let s = summarize(&[]);
        assert_eq!((s.count, s.mean, s.std), (0, 0.0, 0.0));
    }
}
