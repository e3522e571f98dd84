//! Declarative experiment grids for batch sweeps.
//!
//! ```toml
//! seed = 7
//! out_dir = "runs"
//! datasets = ["prepared/oa-mine", "prepared/ae-110k"]
//! designs = ["list", "json-5-val"]
//! selectors = ["semsim", "mmr"]
//! demos = [0, 10]
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{parse_design, PipelineError, Result, TrainSize};
use crate::demos::SelectorStrategy;
use crate::prompts::PromptDesign;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGrid {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub backend: Option<String>,
    #[serde(default)]
    pub train: Option<TrainSize>,
    #[serde(default)]
    pub mmr_lambda: Option<f64>,
    pub out_dir: PathBuf,
    pub datasets: Vec<PathBuf>,
    pub designs: Vec<String>,
    #[serde(default = "default_selectors")]
    pub selectors: Vec<SelectorStrategy>,
    #[serde(default = "default_demos")]
    pub demos: Vec<usize>,
}

fn default_selectors() -> Vec<SelectorStrategy> {
    vec![SelectorStrategy::SemanticSimilarity]
}

fn default_demos() -> Vec<usize> {
    vec![10]
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub data_dir: PathBuf,
    pub design: PromptDesign,
    pub selector: SelectorStrategy,
    pub run_dir: PathBuf,
}

impl ExperimentGrid {
    pub fn from_toml(text: &str) -> Result<Self> {
        let grid: ExperimentGrid = toml::from_str(text).map_err(|e| PipelineError::Usage(format!("config: {e}")))?;
        if grid.datasets.is_empty() || grid.designs.is_empty() || grid.selectors.is_empty() || grid.demos.is_empty() {
            return Err(PipelineError::Usage("config: every grid axis needs at least one entry".into()));
        }
        Ok(grid)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Usage(format!("{}: {e}", path.display())))?;
        ExperimentGrid::from_toml(&text)
    }

    /// The datasets × designs × selectors × demos product. Zero-shot cells
    /// ignore the selector and appear once.
    pub fn cells(&self) -> Result<Vec<GridCell>> {
        let mut cells = Vec::new();
        let mut names = BTreeSet::new();
        for data_dir in &self.datasets {
            let dataset = data_dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "data".into());
            for label in &self.designs {
                for &demos in &self.demos {
                    let design = parse_design(label, demos)?;
                    for &selector in &self.selectors {
                        let name = if demos == 0 {
                            format!("{}-zero-shot", design.label())
                        } else {
                            format!("{}-{}-{demos}", design.label(), selector)
                        };
                        if !names.insert((dataset.clone(), name.clone())) {
                            continue;
                        }
                        cells.push(GridCell {
                            data_dir: data_dir.clone(),
                            design,
                            selector,
                            run_dir: self.out_dir.join(&dataset).join(name),
                        });
                    }
                }
            }
        }
        Ok(cells)
    }
}
