use serde::{Deserialize, Serialize};
use std::fmt;

/// Symbolic coordinate frame identifier. Comparisons are exact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameId(String);

impl FrameId {
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        assert!(!name.is_empty(), "frame name must be non-empty");
        FrameId(name)
    }

    pub fn base() -> Self {
        FrameId("base".into())
    }

    pub fn tcp() -> Self {
        FrameId("tcp".into())
    }

    pub fn lidar() -> Self {
        FrameId("lidar".into())
    }

    pub fn template() -> Self {
        FrameId("template".into())
    }

    pub fn ground_truth() -> Self {
        FrameId("ground-truth".into())
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}
