//! Dataset manifest: a tab-separated table with one row per audio file.
//!
//! Header: `path singer_id authenticity algorithm split variant`. Paths are
//! relative to the manifest's directory unless absolute. `algorithm` is empty
//! for authentic rows and required for deepfake rows.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER: [&str; 6] = ["path", "singer_id", "authenticity", "algorithm", "split", "variant"];

/// Tag used for authentic tracks in per-algorithm reports.
pub const REAL_TAG: &str = "REAL";

macro_rules! text_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " {:?}"),
                        other
                    ))),
                }
            }
        }
    };
}

text_enum!(Authenticity { Authentic => "authentic", Deepfake => "deepfake" });
text_enum!(Split { Train => "train", Val => "val", Test => "test" });
text_enum!(Variant { Fullmix => "fullmix", Vocals => "vocals" });

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub path: String,
    pub singer_id: String,
    pub authenticity: Authenticity,
    pub algorithm: Option<String>,
    pub split: Split,
    pub variant: Variant,
}

impl ManifestRow {
    pub fn is_deepfake(&self) -> bool {
        self.authenticity == Authenticity::Deepfake
    }

    /// Algorithm tag, or [`REAL_TAG`] for authentic rows.
    pub fn tag(&self) -> &str {
        self.algorithm.as_deref().unwrap_or(REAL_TAG)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>, root: impl Into<PathBuf>) -> Result<Self> {
        let m = Self { rows, root: root.into() };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for row in &self.rows {
            if row.path.is_empty() || row.singer_id.is_empty() {
                return Err(Error::Config(format!("row {:?}: empty path or singer_id", row.path)));
            }
            if !seen.insert(row.path.as_str()) {
                return Err(Error::Config(format!("duplicate path {:?}", row.path)));
            }
            if row.is_deepfake() != row.algorithm.is_some() {
                return Err(Error::Config(format!(
                    "row {:?}: algorithm tag must be present exactly for deepfake rows",
                    row.path
                )));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Config("manifest is empty".into()))?;
        let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
        if cols != HEADER {
            return Err(Error::Config(format!("manifest header must be {:?}, got {cols:?}", HEADER.join("\t"))));
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != HEADER.len() {
                return Err(Error::Config(format!("manifest line {}: expected 6 fields, got {}", i + 1, f.len())));
            }
            rows.push(ManifestRow {
                path: f[0].to_string(),
                singer_id: f[1].to_string(),
                authenticity: f[2].parse()?,
                algorithm: (!f[3].is_empty()).then(|| f[3].to_string()),
                split: f[4].parse()?,
                variant: f[5].trim_end_matches('\r').parse()?,
            });
        }
        Self::new(rows, root)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn to_text(&self) -> String {
        let mut out = HEADER.join("\t");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.path,
                r.singer_id,
                r.authenticity,
                r.algorithm.as_deref().unwrap_or(""),
                r.split,
                r.variant
            ));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::atomic_write(path.as_ref(), self.to_text().as_bytes())
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// Sorted distinct singer ids among authentic rows of the given split.
    pub fn singers(&self, split: Split) -> Vec<String> {
        self.split(split)
            .filter(|r| !r.is_deepfake())
            .map(|r| r.singer_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn row(&self, path: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.path == path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "path\tsinger_id\tauthenticity\talgorithm\tsplit\tvariant\n\
        a.wav\ts1\tauthentic\t\ttrain\tvocals\n\
        b.wav\ts1\tdeepfake\tA07\ttest\tfullmix\n";

    #[test]
    fn text_round_trip() {
        let m = Manifest::parse(TEXT, "/data").unwrap();
        assert_eq!(m.rows.len(), 2);
        assert_eq!(m.rows[1].tag(), "A07");
        assert_eq!(m.rows[0].tag(), REAL_TAG);
        assert_eq!(m.to_text(), TEXT);
        assert_eq!(m.resolve(&m.rows[0]), PathBuf::from("/data/a.wav"));
    }

    #[test]
    fn invariants_enforced() {
        let dup = format!("{TEXT}a.wav\ts2\tauthentic\t\ttest\tvocals\n");
        assert!(Manifest::parse(&dup, ".").is_err());
        let untagged = TEXT.replace("A07", "");
        assert!(Manifest::parse(&untagged, ".").is_err());
        let tagged_real = TEXT.replace("\t\ttrain", "\tA01\ttrain");
        assert!(Manifest::parse(&tagged_real, ".").is_err());
        assert!(Manifest::parse("path\tsinger\n", ".").is_err());
    }
}
