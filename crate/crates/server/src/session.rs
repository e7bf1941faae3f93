use std::sync::{Arc, PoisonError, RwLock, RwLockReadGuard, RwLockWriteGuard};

use gsculpt_core::perception::{FeatureExtractorHandle, SegmenterHandle};
use gsculpt_core::pipeline::{SegmentConfig, SegmentReport};
use gsculpt_core::scene::{Click, GaussianScene, SceneError, Selection, ViewSet};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Undo steps kept per session. The stack holds one more entry than this.
pub const MAX_UNDO: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SessionConfig {
    #[serde(flatten)]
    pub segment: SegmentConfig,
    pub segmenter: SegmenterHandle,
    pub features: FeatureExtractorHandle,
}

/// One entry of the undo stack. The selection, when present, is bound to `scene`.
#[derive(Debug, Clone)]
pub struct Version {
    pub scene: Arc<GaussianScene>,
    pub selection: Option<Selection>,
}

#[derive(Debug)]
pub struct Session {
    versions: Vec<Version>,
    /// Bumped on every push and undo so clients can tell renders apart.
    revision: u64,
    pub views: Arc<ViewSet>,
    pub clicks: Vec<Click>,
    pub config: SessionConfig,
    pub report: Option<SegmentReport>,
}

impl Session {
    pub fn new(scene: GaussianScene, views: ViewSet, config: SessionConfig) -> Self {
        Self {
            versions: vec![Version {
                scene: Arc::new(scene),
                selection: None,
            }],
            revision: 0,
            views: Arc::new(views),
            clicks: Vec::new(),
            config,
            report: None,
        }
    }

    pub fn current(&self) -> &Version {
        self.versions.last().expect("version stack is never empty")
    }

    pub fn undo_depth(&self) -> usize {
        self.versions.len() - 1
    }

    /// Pushes a new scene version, dropping the oldest beyond [`MAX_UNDO`] undo steps.
    pub fn push(&mut self, version: Version) {
        self.versions.push(version);
        if self.versions.len() > MAX_UNDO + 1 {
            self.versions.remove(0);
        }
        self.revision += 1;
    }

    /// Pops the top version. Returns false when there is nothing to undo.
    pub fn undo(&mut self) -> bool {
        if self.versions.len() < 2 {
            return false;
        }
        self.versions.pop();
        self.revision += 1;
        true
    }

    /// Replaces the selection of the top version.
    pub fn set_selection(&mut self, selection: Selection) -> Result<(), SceneError> {
        let top = self.versions.last_mut().expect("version stack is never empty");
        selection.check(&top.scene)?;
        top.selection = Some(selection);
        Ok(())
    }

    pub fn summary(&self) -> Value {
        let top = self.current();
        json!({
            "revision": self.revision,
            "undo_depth": self.undo_depth(),
            "scene_hash": top.scene.content_hash(),
            "gaussians": top.scene.len(),
            "selection_count": top.selection.as_ref().map_or(0, Selection::len),
        })
    }
}

/// A session plus its writer lock. Mutations hold `writer` for their whole run,
/// so reads of `state` only ever wait for a commit, never for a computation.
#[derive(Debug)]
pub struct SessionSlot {
    state: RwLock<Session>,
    pub writer: Arc<tokio::sync::Mutex<()>>,
}

impl SessionSlot {
    pub fn new(session: Session) -> Self {
        Self {
            state: RwLock::new(session),
            writer: Arc::new(tokio::sync::Mutex::new(())),
        }
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Session> {
        self.state.read().unwrap_or_else(PoisonError::into_inner)
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, Session> {
        self.state.write().unwrap_or_else(PoisonError::into_inner)
    }
}
