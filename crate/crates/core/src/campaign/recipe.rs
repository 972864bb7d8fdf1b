use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{read_json, read_text, write_atomic, CampaignDir, CampaignLock, FRONT_FILE, RECIPE_DIR};
use crate::error::{Error, Result};
use crate::pareto::{select_representatives, ParetoFront};
use crate::space::{Allocator, EnvMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecipeKind {
    MinTime,
    MinMemory,
    Knee,
}

impl RecipeKind {
    pub const ALL: [RecipeKind; 3] = [RecipeKind::MinTime, RecipeKind::MinMemory, RecipeKind::Knee];

    pub fn as_str(self) -> &'static str {
        match self {
            RecipeKind::MinTime => "min-time",
            RecipeKind::MinMemory => "min-memory",
            RecipeKind::Knee => "knee",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.env", self.as_str())
    }
}

impl FromStr for RecipeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RecipeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown recipe kind `{s}`")))
    }
}

/// A shell-sourceable set of allocator assignments.
///
/// Provenance lives in `# key: value` comments; a tcmalloc recipe also
/// carries `# preload=<library>`, which `validate` turns into `LD_PRELOAD`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Recipe {
    pub kind: Option<RecipeKind>,
    pub allocator: Option<Allocator>,
    pub preload: Option<String>,
    pub env: EnvMap,
    /// Every `# key: value` header line, in file order.
    pub header: Vec<(String, String)>,
}

fn needs_quoting(v: &str) -> bool {
    v.is_empty()
        || !v
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "._-+/:,@%".contains(c))
}

fn is_identifier(k: &str) -> bool {
    let mut chars = k.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Recipe {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(out, "# {k}: {v}");
        }
        if let Some(lib) = &self.preload {
            let _ = writeln!(out, "# preload={lib}");
        }
        for (k, v) in self.env.iter() {
            if needs_quoting(v) {
                let _ = writeln!(out, "{k}='{}'", v.replace('\'', r"'\''"));
            } else {
                let _ = writeln!(out, "{k}={v}");
            }
        }
        out
    }

    pub fn parse(text: &str, name: &str) -> Result<Recipe> {
        let mut recipe = Recipe::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(lib) = comment.strip_prefix("preload=") {
                    recipe.preload = Some(lib.trim().to_string());
                } else if let Some((k, v)) = comment.split_once(':') {
                    let (k, v) = (k.trim(), v.trim());
                    match k {
                        "recipe" => recipe.kind = v.parse().ok(),
                        "allocator" => recipe.allocator = v.parse().ok(),
                        _ => {}
                    }
                    recipe.header.push((k.to_string(), v.to_string()));
                }
                continue;
            }
            let assignment = line.strip_prefix("export ").unwrap_or(line);
            let (k, v) = assignment
                .split_once('=')
                .ok_or_else(|| Error::parse(name, i + 1, "expected VAR=value"))?;
            if !is_identifier(k) {
                return Err(Error::parse(name, i + 1, format!("invalid variable name `{k}`")));
            }
            let v = match v.strip_prefix('\'') {
                Some(q) => q
                    .strip_suffix('\'')
                    .ok_or_else(|| Error::parse(name, i + 1, "unterminated quote"))?
                    .replace(r"'\''", "'"),
                None => v.to_string(),
            };
            recipe.env.0.insert(k.to_string(), v);
        }
        Ok(recipe)
    }

    pub fn load(path: &Path) -> Result<Recipe> {
        Recipe::parse(&read_text(path)?, &path.display().to_string())
    }
}

/// Writes the min-time, min-memory and knee recipes of a campaign's front.
pub fn cmd_select(campaign: &Path) -> Result<Vec<(RecipeKind, PathBuf)>> {
    let dir = CampaignDir::new(campaign);
    let front: ParetoFront = read_json(&dir.path(FRONT_FILE))?;
    if front.is_empty() {
        return Err(Error::Data(format!("{} is empty", dir.path(FRONT_FILE).display())));
    }
    let cfg = dir.config()?;
    let space = cfg.parameter_space()?;
    let id = dir.campaign_id()?;
    let _lock = CampaignLock::acquire(&dir.root)?;

    let reps = select_representatives(&front.objectives());
    let out_dir = dir.path(RECIPE_DIR);
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let mut written = Vec::new();
    for kind in RecipeKind::ALL {
        let idx = match kind {
            RecipeKind::MinTime => reps.min_time,
            RecipeKind::MinMemory => reps.min_memory,
            RecipeKind::Knee => reps.knee,
        };
        let point = &front.points[idx];
        if let Some(stray) = point
            .env
            .0
            .keys()
            .find(|k| !space.specs.iter().any(|s| &s.env_var == *k))
        {
            return Err(Error::Data(format!("front point sets {stray}, which is not in the {} space", space.allocator)));
        }
        let recipe = Recipe {
            kind: Some(kind),
            allocator: Some(space.allocator),
            preload: space.preload_library.clone(),
            env: point.env.clone(),
            header: vec![
                ("recipe".into(), kind.as_str().into()),
                ("campaign".into(), id.clone()),
                ("allocator".into(), space.allocator.to_string()),
                ("record".into(), point.record_index.to_string()),
                ("peak_heap_bytes".into(), point.objectives.peak_heap().to_string()),
                ("wallclock_seconds".into(), point.objectives.wallclock().to_string()),
            ],
        };
        let path = out_dir.join(kind.file_name());
        write_atomic(&path, recipe.render().as_bytes())?;
        written.push((kind, path));
    }
    Ok(written)
}
