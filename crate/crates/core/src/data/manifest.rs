//! Dataset manifest, one JSON object per line.
//!
//! The first line is a header, every further line one clip:
//!
//! ```text
//! {"format":"stnet-manifest","version":1,"entries":2,"counts":[1,1]}
//! {"clip_id":"calm-0000","path":"clips/calm-0000.stnetfrm","label":0,"frames":16,"height":24,"width":24}
//! {"clip_id":"agitated-0000","path":"clips/agitated-0000.stnetfrm","label":1,"frames":16,"height":24,"width":24}
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::write_atomically;

pub const MANIFEST_VERSION: u32 = 1;
const FORMAT: &str = "stnet-manifest";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    /// Relative to the manifest's directory.
    pub path: String,
    pub label: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    entries: usize,
    counts: [usize; 2],
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = DatasetManifest { entries };
        m.validate()?;
        Ok(m)
    }

    /// Clips per class, `[nonviolent, violent]`.
    pub fn counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for e in &self.entries {
            if let Some(slot) = c.get_mut(e.label) {
                *slot += 1;
            }
        }
        c
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut paths = HashSet::new();
        for e in &self.entries {
            if e.label > 1 {
                return Err(Error::Label(format!("'{}' has label {}", e.clip_id, e.label)));
            }
            if !paths.insert(e.path.as_str()) {
                return Err(Error::integrity(format!("path '{}' listed twice", e.path)));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            format: FORMAT.into(),
            version: MANIFEST_VERSION,
            entries: self.entries.len(),
            counts: self.counts(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::format("manifest is empty"))?;
        let header: Header =
            serde_json::from_str(first).map_err(|e| Error::format(format!("manifest header: {e}")))?;
        if header.format != FORMAT {
            return Err(Error::format(format!("manifest format '{}' is not '{FORMAT}'", header.format)));
        }
        if header.version != MANIFEST_VERSION {
            return Err(Error::format(format!(
                "manifest version {} is not supported (this build reads version {MANIFEST_VERSION})",
                header.version
            )));
        }
        let entries = lines
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::format(format!("manifest line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<ManifestEntry>>>()?;
        let m = DatasetManifest::new(entries)?;
        if m.len() != header.entries || m.counts() != header.counts {
            return Err(Error::integrity(format!(
                "manifest header promises {} entries {:?}, body has {} {:?}",
                header.entries,
                header.counts,
                m.len(),
                m.counts()
            )));
        }
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomically(path.as_ref(), self.to_jsonl().as_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Io(e).context(path.display().to_string()))?;
        DatasetManifest::from_jsonl(&text).map_err(|e| e.context(path.display().to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, label: usize) -> ManifestEntry {
        ManifestEntry {
            clip_id: id.into(),
            path: format!("clips/{id}.stnetfrm"),
            label,
            frames: 16,
            height: 24,
            width: 24,
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let m = DatasetManifest::new(vec![entry("a", 0), entry("b", 1), entry("c", 1)]).unwrap();
        let text = m.to_jsonl();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(DatasetManifest::from_jsonl(&text).unwrap(), m);
        assert_eq!(m.counts(), [1, 2]);
    }

    #[test]
    fn duplicate_paths_and_bad_counts_are_rejected() {
        assert!(matches!(DatasetManifest::new(vec![entry("a", 0), entry("a", 1)]), Err(Error::Integrity(_))));
        let m = DatasetManifest::new(vec![entry("a", 0)]).unwrap();
        let tampered = m.to_jsonl().replace("\"counts\":[1,0]", "\"counts\":[0,1]");
        assert!(matches!(DatasetManifest::from_jsonl(&tampered), Err(Error::Integrity(_))));
    }
}
