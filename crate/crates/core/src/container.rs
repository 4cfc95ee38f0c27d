// SPDX-License-Identifier: MIT OR Apache-2.0

//! Self-describing binary container shared by datasets, classifier
//! checkpoints and SAE checkpoints.
//!
//! ```text
//! offset  size  field
//! 0       4     magic  b"UNLA"
//! 4       2     format version (u16 LE, currently 1)
//! 6       1     artifact kind (1 dataset, 2 checkpoint, 3 sae)
//! 7       1     reserved, must be 0
//! 8       4     metadata length N (u32 LE)
//! 12      N     metadata, UTF-8 JSON
//! ..      4     section count S (u32 LE)
//! then S sections:
//!         2     name length (u16 LE), followed by the UTF-8 name
//!         1     dtype (1 = f64, 2 = u32)
//!         8     rows (u64 LE)
//!         8     cols (u64 LE)
//!         ..    rows*cols little-endian values
//! ```
//!
//! Decoding never trusts a length field before checking it against the
//! bytes that remain, and trailing bytes are rejected.

use crate::error::{AuditError, Result};
use crate::numerics::Matrix;

pub const MAGIC: [u8; 4] = *b"UNLA";
pub const FORMAT_VERSION: u16 = 1;
const MAX_NAME_LEN: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Dataset = 1,
    Checkpoint = 2,
    Sae = 3,
}

impl ArtifactKind {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            1 => Ok(Self::Dataset),
            2 => Ok(Self::Checkpoint),
            3 => Ok(Self::Sae),
            other => Err(fmt_err(format!("unknown artifact kind {other}"))),
        }
    }
}

/// Payload of one named section.
#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    F64(Matrix),
    U32 {
        rows: usize,
        cols: usize,
        data: Vec<u32>,
    },
}

impl Section {
    fn dtype(&self) -> u8 {
        match self {
            Section::F64(_) => 1,
            Section::U32 { .. } => 2,
        }
    }
}

/// Decoded container: kind tag, JSON metadata and ordered named sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: ArtifactKind,
    pub meta: String,
    pub sections: Vec<(String, Section)>,
}

fn fmt_err(msg: impl Into<String>) -> AuditError {
    AuditError::Format(msg.into())
}

impl Container {
    pub fn new(kind: ArtifactKind, meta: String) -> Self {
        Self {
            kind,
            meta,
            sections: Vec::new(),
        }
    }

    pub fn push_f64(&mut self, name: impl Into<String>, m: Matrix) {
        self.sections.push((name.into(), Section::F64(m)));
    }

    pub fn push_u32(&mut self, name: impl Into<String>, data: Vec<u32>) {
        let rows = data.len();
        self.sections.push((
            name.into(),
            Section::U32 {
                rows,
                cols: 1,
                data,
            },
        ));
    }

    fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| fmt_err(format!("missing section {name:?}")))
    }

    pub fn matrix(&self, name: &str) -> Result<&Matrix> {
        match self.section(name)? {
            Section::F64(m) => Ok(m),
            Section::U32 { .. } => Err(fmt_err(format!("section {name:?} is not f64"))),
        }
    }

    pub fn u32s(&self, name: &str) -> Result<&[u32]> {
        match self.section(name)? {
            Section::U32 { data, .. } => Ok(data),
            Section::F64(_) => Err(fmt_err(format!("section {name:?} is not u32"))),
        }
    }

    pub fn expect_kind(&self, kind: ArtifactKind) -> Result<()> {
        if self.kind != kind {
            return Err(fmt_err(format!(
                "expected {kind:?} container, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.kind as u8);
        out.push(0);
        let meta_len = u32::try_from(self.meta.len()).map_err(|_| fmt_err("metadata too large"))?;
        out.extend_from_slice(&meta_len.to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        let count = u32::try_from(self.sections.len()).map_err(|_| fmt_err("too many sections"))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, section) in &self.sections {
            if name.len() > MAX_NAME_LEN {
                return Err(fmt_err(format!("section name too long: {}", name.len())));
            }
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(section.dtype());
            match section {
                Section::F64(m) => {
                    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
                    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
                    for v in m.data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Section::U32 { rows, cols, data } => {
                    out.extend_from_slice(&(*rows as u64).to_le_bytes());
                    out.extend_from_slice(&(*cols as u64).to_le_bytes());
                    for v in data {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(fmt_err("bad magic"));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(fmt_err(format!("unsupported format version {version}")));
        }
        let kind = ArtifactKind::from_byte(r.u8()?)?;
        if r.u8()? != 0 {
            return Err(fmt_err("reserved byte must be zero"));
        }
        let meta_len = r.u32()? as usize;
        let meta = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| fmt_err("metadata is not UTF-8"))?
            .to_owned();
        let count = r.u32()? as usize;
        // Each section needs at least 19 header bytes.
        if count > r.remaining() / 19 {
            return Err(fmt_err(format!("section count {count} exceeds input")));
        }
        let mut sections = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            if name_len > MAX_NAME_LEN {
                return Err(fmt_err("section name too long"));
            }
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| fmt_err("section name is not UTF-8"))?
                .to_owned();
            let dtype = r.u8()?;
            let rows = usize::try_from(r.u64()?).map_err(|_| fmt_err("rows overflow"))?;
            let cols = usize::try_from(r.u64()?).map_err(|_| fmt_err("cols overflow"))?;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| fmt_err("element count overflow"))?;
            let section = match dtype {
                1 => {
                    let raw = r.take_elems(n, 8)?;
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                        .collect();
                    Section::F64(Matrix::new(rows, cols, data)?)
                }
                2 => {
                    let raw = r.take_elems(n, 4)?;
                    let data = raw
                        .chunks_exact(4)
                        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                        .collect();
                    Section::U32 { rows, cols, data }
                }
                other => return Err(fmt_err(format!("unknown dtype {other}"))),
            };
            sections.push((name, section));
        }
        if r.remaining() != 0 {
            return Err(fmt_err(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self {
            kind,
            meta,
            sections,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(fmt_err(format!(
                "unexpected end of input at byte {} (wanted {n})",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn take_elems(&mut self, count: usize, width: usize) -> Result<&'a [u8]> {
        let n = count
            .checked_mul(width)
            .ok_or_else(|| fmt_err("payload size overflow"))?;
        self.take(n)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}
