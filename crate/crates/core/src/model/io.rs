use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::config::ModelConfig;
use super::network::Model;
use crate::error::{MadtError, Result};
use crate::numerics::Checkpoint;

const KIND: &str = "madt-model";

impl Model {
    pub fn to_checkpoint(&self, provenance: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::new(json!({
            "kind": KIND,
            "config": self.config,
            "provenance": provenance,
        }));
        for (n, t) in self.names().iter().zip(self.params()) {
            ck.push(n.clone(), t.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<Model> {
        if ck.header.get("kind").and_then(|k| k.as_str()) != Some(KIND) {
            return Err(MadtError::format(path, "not a model checkpoint"));
        }
        let config: ModelConfig = serde_json::from_value(ck.header["config"].clone())
            .map_err(|e| MadtError::format(path, format!("bad model config: {e}")))?;
        Model::from_named(config, ck.tensors.clone())
    }

    /// Writes the checkpoint and a model card next to it (`<path>.card.txt`).
    pub fn save(&self, path: &Path, provenance: serde_json::Value) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| MadtError::io(dir, e))?;
        }
        self.to_checkpoint(provenance.clone()).save(path)?;
        let card = card_path(path);
        fs::write(&card, self.card(&provenance)).map_err(|e| MadtError::io(&card, e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        Model::from_checkpoint(&Checkpoint::load(path)?, path)
    }

    pub fn card(&self, provenance: &serde_json::Value) -> String {
        let c = &self.config;
        let mut s = String::from("MADT model card\n\n");
        s += &format!("layers            {}\n", c.n_layer);
        s += &format!("heads             {}\n", c.n_head);
        s += &format!("embedding width   {}\n", c.n_embd);
        s += &format!("context length    {}\n", c.context_length);
        s += &format!("max timestep      {}\n", c.max_timestep);
        s += &format!("state dim         {}\n", c.state_dim);
        s += &format!("observation dim   {}\n", c.obs_dim);
        s += &format!("action slots      {}\n", c.n_actions);
        s += &format!("max agents        {}\n", c.max_agents);
        s += &format!("return-to-go      {}\n", if c.use_rtg { "on" } else { "off" });
        s += &format!("parameters        {}\n\n", self.n_parameters());
        s += "provenance\n";
        s += &serde_json::to_string_pretty(provenance).unwrap_or_default();
        s.push('\n');
        s
    }
}

pub fn card_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.file_name().unwrap_or_default().to_os_string();
    name.push(".card.txt");
    ckpt.with_file_name(name)
}
