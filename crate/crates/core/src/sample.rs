use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Modality;
use crate::eval::TaskKind;
use crate::gateway::ImageRef;
use crate::prompts::{KnowledgeBundle, PromptTask};

fn default_task() -> PromptTask {
    PromptTask::Vqa
}

/// One question about one image. `image_ref` is resolved against the
/// directory of the file the sample was read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub image_ref: String,
    pub question: String,
    pub gold: String,
    pub modality: Modality,
    #[serde(default = "default_task")]
    pub task: PromptTask,
    /// Defaults to closed for VQA and open for report generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_kind: Option<TaskKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<KnowledgeBundle>,
}

impl Sample {
    pub fn task_kind(&self) -> TaskKind {
        self.task_kind.unwrap_or(match self.task {
            PromptTask::Vqa => TaskKind::Closed,
            PromptTask::ReportRad | PromptTask::ReportOph => TaskKind::Open,
        })
    }

    pub fn image_path(&self, base: &Path) -> PathBuf {
        base.join(&self.image_ref)
    }

    pub fn image(&self, base: &Path) -> ImageRef {
        ImageRef::Path(self.image_path(base))
    }
}
