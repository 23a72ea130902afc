//! Versioned on-disk container shared by every persisted artifact.
//!
//! Layout: 8-byte magic, 4-byte artifact kind, little-endian `u32` format
//! version, then a CBOR payload. CBOR stores `f64` values as raw IEEE-754
//! bits, so every artifact round-trips bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BCALIGN\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Graph,
    Encoder,
    Registry,
    Table,
    Consumer,
}

impl ArtifactKind {
    fn tag(self) -> &'static [u8; 4] {
        match self {
            ArtifactKind::Graph => b"GRPH",
            ArtifactKind::Encoder => b"ENCD",
            ArtifactKind::Registry => b"REGY",
            ArtifactKind::Table => b"TABL",
            ArtifactKind::Consumer => b"CNSM",
        }
    }

    fn from_tag(tag: &[u8; 4]) -> Option<Self> {
        [
            ArtifactKind::Graph,
            ArtifactKind::Encoder,
            ArtifactKind::Registry,
            ArtifactKind::Table,
            ArtifactKind::Consumer,
        ]
        .into_iter()
        .find(|k| k.tag() == tag)
    }
}

pub fn write_to<W: Write, T: Serialize>(mut w: W, kind: ArtifactKind, value: &T) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(kind.tag())?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    ciborium::into_writer(value, &mut w).map_err(|e| std::io::Error::other(e.to_string()))?;
    w.flush()
}

pub fn save<T: Serialize>(path: &Path, kind: ArtifactKind, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_to(BufWriter::new(file), kind, value).map_err(|e| Error::io(path, e))
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: ArtifactKind) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let format_err = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };

    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| format_err("truncated header".into()))?;
    if &header[..8] != MAGIC {
        return Err(format_err("bad magic header".into()));
    }
    let tag: [u8; 4] = header[8..12].try_into().unwrap();
    match ArtifactKind::from_tag(&tag) {
        Some(k) if k == kind => {}
        Some(k) => return Err(format_err(format!("expected {kind:?} artifact, found {k:?}"))),
        None => return Err(format_err("unknown artifact kind".into())),
    }
    let version = u32::from_le_bytes(header[12..16].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(format_err(format!(
            "unsupported format version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    ciborium::from_reader(r).map_err(|e| format_err(format!("corrupt payload: {e}")))
}
