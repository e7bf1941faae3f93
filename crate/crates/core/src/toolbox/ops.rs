//! JSON operation descriptors shared by the CLI and the session server.

use serde::{Deserialize, Serialize};

use super::{
    build_editor, colorize, combine, copy_paste, remove_selection, scale_selection, semantic_edit, ColorizeMode,
    EditRequest, PlacementTransform, ToolboxError,
};
use crate::scene::{load_scene_ply, load_selection, GaussianScene, SceneError, Selection, ViewSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum OpDescriptor {
    Colorize {
        #[serde(default)]
        mode: ColorizeMode,
        color: [f64; 3],
    },
    Scale {
        epsilon: f64,
    },
    Remove,
    CopyPaste {
        #[serde(default)]
        placement: PlacementTransform,
    },
    Combine {
        source_scene: String,
        /// Selection file over the source scene; the whole source when absent.
        #[serde(default)]
        source_selection: Option<String>,
        #[serde(default)]
        placement: PlacementTransform,
    },
    Edit {
        instruction: String,
        steps: usize,
        step_size: f64,
        #[serde(default = "default_true")]
        annealing: bool,
        editor: String,
        #[serde(default)]
        seed: u64,
    },
}

fn default_true() -> bool {
    true
}

impl OpDescriptor {
    pub fn name(&self) -> &'static str {
        match self {
            OpDescriptor::Colorize { .. } => "colorize",
            OpDescriptor::Scale { .. } => "scale",
            OpDescriptor::Remove => "remove",
            OpDescriptor::CopyPaste { .. } => "copy_paste",
            OpDescriptor::Combine { .. } => "combine",
            OpDescriptor::Edit { .. } => "edit",
        }
    }

    /// Whether the op acts on a selection of the current scene.
    pub fn needs_selection(&self) -> bool {
        !matches!(self, OpDescriptor::Combine { .. })
    }
}

#[derive(Debug, Clone)]
pub struct OpOutcome {
    pub scene: GaussianScene,
    /// The selection carried over to the new scene, if it still exists.
    pub selection: Option<Selection>,
    pub loss_trace: Option<Vec<f64>>,
}

fn rebind(scene: &GaussianScene, selection: &Selection) -> Result<Selection, ToolboxError> {
    Ok(Selection::new(scene, selection.indices().iter().copied())?)
}

/// Applies one descriptor. `progress` only fires for `edit`.
pub fn apply_op(
    scene: &GaussianScene,
    selection: Option<&Selection>,
    views: &ViewSet,
    op: &OpDescriptor,
    progress: &mut dyn FnMut(usize, f64),
) -> Result<OpOutcome, ToolboxError> {
    let required = || selection.ok_or(ToolboxError::Scene(SceneError::EmptySelection));
    let keep = |s: GaussianScene, sel: &Selection| -> Result<OpOutcome, ToolboxError> {
        let selection = Some(rebind(&s, sel)?);
        Ok(OpOutcome {
            scene: s,
            selection,
            loss_trace: None,
        })
    };
    match op {
        OpDescriptor::Colorize { mode, color } => {
            let sel = required()?;
            keep(colorize(scene, sel, *color, *mode)?, sel)
        }
        OpDescriptor::Scale { epsilon } => {
            let sel = required()?;
            keep(scale_selection(scene, sel, *epsilon)?, sel)
        }
        OpDescriptor::Remove => {
            let (scene, _) = remove_selection(scene, required()?)?;
            Ok(OpOutcome {
                scene,
                selection: None,
                loss_trace: None,
            })
        }
        OpDescriptor::CopyPaste { placement } => {
            let (scene, copies) = copy_paste(scene, required()?, placement)?;
            Ok(OpOutcome {
                scene,
                selection: Some(copies),
                loss_trace: None,
            })
        }
        OpDescriptor::Combine {
            source_scene,
            source_selection,
            placement,
        } => {
            let source = load_scene_ply(source_scene)?;
            let source_sel = match source_selection {
                Some(path) => load_selection(path)?,
                None => Selection::all(&source)?,
            };
            let combined = combine(scene, &source, &source_sel, placement)?;
            let selection = match selection {
                Some(sel) => Some(rebind(&combined, sel)?),
                None => None,
            };
            Ok(OpOutcome {
                scene: combined,
                selection,
                loss_trace: None,
            })
        }
        OpDescriptor::Edit {
            instruction,
            steps,
            step_size,
            annealing,
            editor,
            seed,
        } => {
            let sel = required()?;
            let editor = build_editor(editor)?;
            let request = EditRequest {
                instruction: instruction.clone(),
                steps: *steps,
                step_size: *step_size,
                annealing: *annealing,
                seed: *seed,
                background: [0.0; 3],
            };
            let out = semantic_edit(scene, sel, views, editor.as_ref(), &request, progress)?;
            Ok(OpOutcome {
                scene: out.scene,
                selection: Some(out.selection),
                loss_trace: Some(out.loss_trace),
            })
        }
    }
}
