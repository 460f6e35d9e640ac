//! Versioned prompt persistence: `prompts/<block>/<id>.v<N>.txt`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::protocol::{AggregatorPrompt, PromptSet, RolePrompt, SystemTopology};

/// On-disk prompt store rooted at a directory. Role prompts live under
/// `roles/`, aggregator prompts under `aggregators/`; each version is its
/// own file, so lineage stays inspectable.
pub struct PromptStore {
    root: PathBuf,
}

impl PromptStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        PromptStore { root: root.into() }
    }

    fn write(&self, block: &str, id: &str, version: u32, text: &str) -> Result<PathBuf> {
        let dir = self.root.join(block);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let path = dir.join(format!("{id}.v{version}.txt"));
        std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(path)
    }

    pub fn save_role(&self, prompt: &RolePrompt) -> Result<PathBuf> {
        self.write("roles", &prompt.role_id, prompt.version, &prompt.text)
    }

    pub fn save_aggregator(&self, prompt: &AggregatorPrompt) -> Result<PathBuf> {
        self.write(
            "aggregators",
            &format!("round{}", prompt.round_index),
            prompt.version,
            &prompt.text,
        )
    }

    /// Persists the current version of every prompt in the set.
    pub fn save_set(&self, prompts: &PromptSet) -> Result<()> {
        for prompt in prompts.roles.values() {
            self.save_role(prompt)?;
        }
        for prompt in prompts.aggregators.values() {
            self.save_aggregator(prompt)?;
        }
        Ok(())
    }
}

/// Loads initial role prompts from `dir`, expecting `<role_id>.txt` per role.
pub fn load_role_prompts(
    dir: &Path,
    topology: &SystemTopology,
) -> Result<std::collections::BTreeMap<String, RolePrompt>> {
    let mut prompts = std::collections::BTreeMap::new();
    for role_id in topology.role_ids() {
        let path = dir.join(format!("{role_id}.txt"));
        let text =
            std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        prompts.insert(role_id.clone(), RolePrompt::initial(role_id, text)?);
    }
    Ok(prompts)
}

/// Loads initial aggregator prompts from `dir`: `round<t>.txt` per round,
/// falling back to `default.txt` for rounds without a dedicated file.
pub fn load_aggregator_prompts(
    dir: &Path,
    topology: &SystemTopology,
) -> Result<std::collections::BTreeMap<u32, AggregatorPrompt>> {
    let default_path = dir.join("default.txt");
    let default_text = std::fs::read_to_string(&default_path).ok();
    let mut prompts = std::collections::BTreeMap::new();
    for t in topology.rounds() {
        let path = dir.join(format!("round{t}.txt"));
        let text = match std::fs::read_to_string(&path) {
            Ok(text) => text,
            Err(_) => default_text.clone().ok_or_else(|| {
                Error::Config(format!(
                    "no aggregator prompt for round {t}: neither {} nor {} exists",
                    path.display(),
                    default_path.display()
                ))
            })?,
        };
        prompts.insert(t, AggregatorPrompt::initial(t, text)?);
    }
    Ok(prompts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_writes_versioned_files() {
        let dir = tempfile::tempdir().unwrap();
        let store = PromptStore::new(dir.path());
        let v0 = RolePrompt::initial("planner", "original").unwrap();
        let v1 = v0.evolved("rewritten");
        store.save_role(&v0).unwrap();
        store.save_role(&v1).unwrap();
        let agg = AggregatorPrompt::initial(2, "summarize").unwrap();
        store.save_aggregator(&agg).unwrap();

        assert_eq!(
            std::fs::read_to_string(dir.path().join("roles/planner.v0.txt")).unwrap(),
            "original"
        );
        assert_eq!(
            std::fs::read_to_string(dir.path().join("roles/planner.v1.txt")).unwrap(),
            "rewritten"
        );
        assert!(dir.path().join("aggregators/round2.v0.txt").exists());
    }

    #[test]
    fn initial_prompts_load_with_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let topo = SystemTopology::new(vec!["a".into(), "b".into()], 2).unwrap();

        let roles_dir = dir.path().join("roles");
        std::fs::create_dir_all(&roles_dir).unwrap();
        std::fs::write(roles_dir.join("a.txt"), "prompt a {question}").unwrap();
        std::fs::write(roles_dir.join("b.txt"), "prompt b {question}").unwrap();
        let roles = load_role_prompts(&roles_dir, &topo).unwrap();
        assert_eq!(roles["a"].text, "prompt a {question}");
        assert_eq!(roles["a"].version, 0);

        let agg_dir = dir.path().join("aggs");
        std::fs::create_dir_all(&agg_dir).unwrap();
        std::fs::write(agg_dir.join("round1.txt"), "first round").unwrap();
        std::fs::write(agg_dir.join("default.txt"), "default agg").unwrap();
        let aggs = load_aggregator_prompts(&agg_dir, &topo).unwrap();
        assert_eq!(aggs[&1].text, "first round");
        assert_eq!(aggs[&2].text, "default agg");
    }
}
