//! The bipartite tree network.
//!
//! Per tree (post and author, each with its own weights):
//! node matrices → root-aware self-attention → mean pool → tree GRU
//! (each node conditioned on its parent) → leaf max-pool, root enhancement and
//! attention-weighted sum. The two tree vectors are concatenated and fed to a
//! softmax classifier.

mod layers;
mod params;

pub use layers::{
    embed_post, embed_post_raw, encode_author, encode_author_raw, forward_tree, l2_penalty, loss, node_pool, predict,
    ral_node, self_attention, tal_aggregate, trvnn_forward, event_loss, ForwardOutput, RootContext, TreeTrace,
};
pub use params::{ModelParams, TreeParamIds};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("node matrix has no non-padding rows")]
    AllPadding,
    #[error("node {child} has parent {parent}; parents must precede children")]
    Topology { child: usize, parent: usize },
    #[error("token id {id} outside vocabulary of {size}")]
    IndexOutOfVocab { id: usize, size: usize },
    #[error("ablation disables both trees")]
    NoTree,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparams(String),
}

/// Model and training settings. Defaults are the published settings; `epochs`
/// is not published and defaults to 30.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub d: usize,
    pub mu: f64,
    pub max_len: usize,
    pub lr: f64,
    pub l2: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub folds: usize,
    pub seed: u64,
    pub min_count: usize,
    /// Early stopping on a held-out slice of the training set when set.
    pub patience: Option<usize>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            d: 128,
            mu: 0.6,
            max_len: 30,
            lr: 0.005,
            l2: 1e-3,
            dropout: 0.5,
            batch_size: 16,
            epochs: 30,
            folds: 5,
            seed: 42,
            min_count: 1,
            patience: None,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidHyperparams(m.to_string()));
        if self.d == 0 {
            return bad("d must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return bad("mu must lie in [0, 1]");
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be at least 1");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if !(self.lr > 0.0) || self.l2 < 0.0 {
            return bad("lr must be positive and l2 non-negative");
        }
        Ok(())
    }
}

/// Which sub-modules one tree uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TreeModules {
    pub tnp: bool,
    pub ral: bool,
    pub trvnn: bool,
    pub tal: bool,
}

impl TreeModules {
    pub const ALL: TreeModules = TreeModules { tnp: true, ral: true, trvnn: true, tal: true };
}

impl Default for TreeModules {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeKind {
    Post,
    Author,
}

impl TreeKind {
    pub fn name(self) -> &'static str {
        match self {
            TreeKind::Post => "post",
            TreeKind::Author => "author",
        }
    }
}

/// Sub-module switches. Module flags are per tree so that post-side and
/// author-side variants can be run independently.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationConfig {
    pub use_post_tree: bool,
    pub use_author_tree: bool,
    pub post: TreeModules,
    pub author: TreeModules,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl AblationConfig {
    pub fn full() -> Self {
        AblationConfig { use_post_tree: true, use_author_tree: true, post: TreeModules::ALL, author: TreeModules::ALL }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.use_post_tree || self.use_author_tree {
            Ok(())
        } else {
            Err(ModelError::NoTree)
        }
    }

    pub fn modules(&self, kind: TreeKind) -> TreeModules {
        match kind {
            TreeKind::Post => self.post,
            TreeKind::Author => self.author,
        }
    }

    pub fn uses(&self, kind: TreeKind) -> bool {
        match kind {
            TreeKind::Post => self.use_post_tree,
            TreeKind::Author => self.use_author_tree,
        }
    }

    /// Applies the same module switches to both trees.
    pub fn with_modules(mut self, m: TreeModules) -> Self {
        self.post = m;
        self.author = m;
        self
    }
}

/// Ablation variants on one side of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Full,
    /// Drop the other tree.
    WithoutOtherTree,
    WithoutTnpTrvnn,
    WithoutRalTal,
    WithoutTnp,
    WithoutRal,
    WithoutTrvnn,
    WithoutTal,
}

impl Variant {
    pub const ABLATIONS: [Variant; 7] = [
        Variant::WithoutOtherTree,
        Variant::WithoutTnpTrvnn,
        Variant::WithoutRalTal,
        Variant::WithoutTnp,
        Variant::WithoutRal,
        Variant::WithoutTrvnn,
        Variant::WithoutTal,
    ];

    pub fn label(self, side: TreeKind) -> String {
        let body = match self {
            Variant::Full => return "BAET".to_string(),
            Variant::WithoutOtherTree => match side {
                TreeKind::Post => "w/o AT",
                TreeKind::Author => "w/o PT",
            },
            Variant::WithoutTnpTrvnn => "w/o TNP&TRvNN",
            Variant::WithoutRalTal => "w/o RAL&TAL",
            Variant::WithoutTnp => "w/o TNP",
            Variant::WithoutRal => "w/o RAL",
            Variant::WithoutTrvnn => "w/o TRvNN",
            Variant::WithoutTal => "w/o TAL",
        };
        format!("{}: {body}", side.name())
    }

    /// The ablation for this variant applied to `side`, starting from the full model.
    pub fn config(self, side: TreeKind) -> AblationConfig {
        let mut cfg = AblationConfig::full();
        let m = match side {
            TreeKind::Post => &mut cfg.post,
            TreeKind::Author => &mut cfg.author,
        };
        match self {
            Variant::Full => {}
            Variant::WithoutOtherTree => match side {
                TreeKind::Post => cfg.use_author_tree = false,
                TreeKind::Author => cfg.use_post_tree = false,
            },
            Variant::WithoutTnpTrvnn => {
                m.tnp = false;
                m.trvnn = false;
            }
            Variant::WithoutRalTal => {
                m.ral = false;
                m.tal = false;
            }
            Variant::WithoutTnp => m.tnp = false,
            Variant::WithoutRal => m.ral = false,
            Variant::WithoutTrvnn => m.trvnn = false,
            Variant::WithoutTal => m.tal = false,
        }
        cfg
    }
}


#[cfg(test)]
mod config_tests {
    use super::*;

    #[test]
    fn defaults_match_published_settings() {
        let h = Hyperparams::default();
        assert_eq!(h.d, 128);
        assert_eq!(h.mu, 0.6);
        assert_eq!(h.lr, 0.005);
        assert_eq!(h.l2, 1e-3);
        assert_eq!(h.dropout, 0.5);
        assert_eq!(h.batch_size, 16);
        assert_eq!(h.folds, 5);
        assert!(h.validate().is_ok());
    }

    #[test]
    fn invalid_hyperparams() {
        let h = Hyperparams { mu: 1.5, ..Default::default() };
        assert!(h.validate().is_err());
        let h = Hyperparams { d: 0, ..Default::default() };
        assert!(h.validate().is_err());
    }

    #[test]
    fn both_trees_off_rejected() {
        let cfg = AblationConfig { use_post_tree: false, use_author_tree: false, ..AblationConfig::full() };
        assert_eq!(cfg.validate(), Err(ModelError::NoTree));
    }

    #[test]
    fn variant_configs() {
        assert_eq!(Variant::Full.config(TreeKind::Post), AblationConfig::full());
        let c = Variant::WithoutOtherTree.config(TreeKind::Author);
        assert!(!c.use_post_tree && c.use_author_tree);
        let c = Variant::WithoutTnpTrvnn.config(TreeKind::Post);
        assert!(!c.post.tnp && !c.post.trvnn && c.post.ral && c.author == TreeModules::ALL);
        assert_eq!(Variant::WithoutRalTal.label(TreeKind::Author), "author: w/o RAL&TAL");
        for side in [TreeKind::Post, TreeKind::Author] {
            for v in Variant::ABLATIONS {
                assert!(v.config(side).validate().is_ok());
                assert_ne!(v.config(side), AblationConfig::full());
            }
        }
    }
}
