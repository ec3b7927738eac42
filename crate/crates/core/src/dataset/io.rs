//! On-disk dataset format, one file per (scenario, tier):
//!
//! ```text
//! "MADT-DATA-1\n"
//! u64 header_len, JSON {"manifest": .., "task": ..}
//! repeated episode blocks:
//!   u32 block_len (bytes that follow)
//!   u32 n_agents, u32 steps
//!   per step: state (f64 × state_dim), reward f64, done u32,
//!             per agent: obs (f64 × obs_dim), action u32, avail (u32 × n_actions)
//! ```
//!
//! Integers and reals are little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::record::{Dataset, DatasetManifest, Episode, TimestepRecord, Trajectory};
use crate::env::TaskSpec;
use crate::error::{MadtError, Result};

pub const DATA_MAGIC: &[u8] = b"MADT-DATA-1\n";
pub const DATA_EXTENSION: &str = "madt";

#[derive(Serialize, Deserialize)]
struct Header {
    manifest: DatasetManifest,
    task: TaskSpec,
}

pub fn file_name(scenario: &str, tier: crate::env::Tier) -> String {
    format!("{scenario}__{tier}.{DATA_EXTENSION}")
}

fn encode_episode(ep: &Episode, task: &TaskSpec, out: &mut Vec<u8>) -> Result<()> {
    let n_agents = ep.trajectories.len();
    let steps = ep.len();
    let mut block = Vec::new();
    block.extend_from_slice(&(n_agents as u32).to_le_bytes());
    block.extend_from_slice(&(steps as u32).to_le_bytes());
    for t in 0..steps {
        let lead = &ep.trajectories[0].records[t];
        if lead.state.len() != task.state_dim {
            return Err(MadtError::DataIntegrity(format!(
                "state of length {} where task declares {}",
                lead.state.len(),
                task.state_dim
            )));
        }
        for v in &lead.state {
            block.extend_from_slice(&v.to_le_bytes());
        }
        block.extend_from_slice(&lead.reward.to_le_bytes());
        block.extend_from_slice(&(lead.done as u32).to_le_bytes());
        for traj in &ep.trajectories {
            let r = traj.records.get(t).ok_or_else(|| {
                MadtError::DataIntegrity(format!("{} is shorter than its episode", traj.source()))
            })?;
            if r.obs.len() != task.obs_dim || r.avail.len() != task.n_actions {
                return Err(MadtError::DataIntegrity(format!(
                    "{} t={t}: record dims do not match task",
                    traj.source()
                )));
            }
            for v in &r.obs {
                block.extend_from_slice(&v.to_le_bytes());
            }
            block.extend_from_slice(&(r.action as u32).to_le_bytes());
            for &a in &r.avail {
                block.extend_from_slice(&(a as u32).to_le_bytes());
            }
        }
    }
    out.extend_from_slice(&(block.len() as u32).to_le_bytes());
    out.extend_from_slice(&block);
    Ok(())
}

pub fn encode(dataset: &Dataset) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        manifest: dataset.manifest.clone(),
        task: dataset.task.clone(),
    })
    .map_err(|e| MadtError::DataIntegrity(format!("manifest does not serialize: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(DATA_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for ep in &dataset.episodes {
        encode_episode(ep, &dataset.task, &mut out)?;
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(MadtError::format(self.path, "unexpected end of data"));
        }
        let (h, t) = self.buf.split_at(n);
        self.buf = t;
        Ok(h)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u32()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(MadtError::format(self.path, format!("flag field holds {v}"))),
        }
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Dataset> {
    let mut c = Cursor { buf: bytes, path };
    if c.take(DATA_MAGIC.len())? != DATA_MAGIC {
        return Err(MadtError::format(path, "not a MADT-DATA-1 file"));
    }
    let hlen = c.u64()? as usize;
    let header: Header = serde_json::from_slice(c.take(hlen)?)
        .map_err(|e| MadtError::format(path, format!("bad header: {e}")))?;
    let task = header.task;
    let mut episodes = Vec::new();
    while !c.buf.is_empty() {
        let block_len = c.u32()? as usize;
        let mut b = Cursor {
            buf: c.take(block_len)?,
            path,
        };
        let n_agents = b.u32()? as usize;
        let steps = b.u32()? as usize;
        let index = episodes.len();
        let mut trajectories: Vec<Trajectory> = (0..n_agents)
            .map(|agent_id| Trajectory {
                scenario_id: task.scenario_id.clone(),
                episode: index,
                agent_id,
                records: Vec::with_capacity(steps),
            })
            .collect();
        for _ in 0..steps {
            let state = b.f64s(task.state_dim)?;
            let reward = b.f64()?;
            let done = b.flag()?;
            for traj in trajectories.iter_mut() {
                let obs = b.f64s(task.obs_dim)?;
                let action = b.u32()? as usize;
                let avail = (0..task.n_actions)
                    .map(|_| b.flag())
                    .collect::<Result<Vec<_>>>()?;
                traj.records.push(TimestepRecord {
                    state: state.clone(),
                    obs,
                    action,
                    reward,
                    done,
                    avail,
                });
            }
        }
        if !b.buf.is_empty() {
            return Err(MadtError::format(path, format!("episode {index} has trailing bytes")));
        }
        episodes.push(Episode { trajectories });
    }
    Ok(Dataset {
        manifest: header.manifest,
        task,
        episodes,
    })
}

/// Writes `dataset` into `dir` and returns the file path.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| MadtError::io(dir, e))?;
    let path = dir.join(file_name(&dataset.manifest.scenario_id, dataset.manifest.tier));
    fs::write(&path, encode(dataset)?).map_err(|e| MadtError::io(&path, e))?;
    Ok(path)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| MadtError::io(path, e))?;
    decode(&bytes, path)
}

/// Dataset files in `dir`, sorted by file name.
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| MadtError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == DATA_EXTENSION))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Every dataset file in `dir`, sorted by file name.
pub fn read_dir(dir: &Path) -> Result<Vec<Dataset>> {
    dataset_files(dir)?.iter().map(|p| read_dataset(p)).collect()
}
