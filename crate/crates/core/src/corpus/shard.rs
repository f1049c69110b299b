//! Binary corpus shards and the text manifest that indexes them.
//!
//! Shard layout (little-endian): magic `IMNT`, version `u16`, entry count
//! `u64`, feature dim `u32`, then per entry: id `u64`, class-name length
//! `u16` + UTF-8, caption length `u16` + UTF-8, `r_v` as `dim × f32`, `r_l`
//! as `dim × f32`.
//!
//! Manifest: one UTF-8 line per entry, tab-separated
//! `id, class_name, caption, shard_path, row_index`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::caption::validate_caption;
use super::CorpusEntry;
use crate::bytes::ByteReader;
use crate::error::{Error, Result};
use crate::features::FeatureVec;

pub const MAGIC: &[u8; 4] = b"IMNT";
pub const VERSION: u16 = 1;
/// Byte offset of the feature-dim field.
pub const DIM_OFFSET: u64 = 14;
pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct Shard {
    pub dim: usize,
    pub entries: Vec<CorpusEntry>,
}

fn string_len(s: &str, what: &str, id: u64) -> Result<u16> {
    u16::try_from(s.len())
        .map_err(|_| Error::Argument(format!("{what} of entry {id} exceeds 65535 bytes")))
}

pub fn encode_shard(dim: usize, entries: &[CorpusEntry]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(26 + entries.len() * (8 * dim + 64));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for e in entries {
        if e.dim() != dim {
            return Err(Error::Dimension(format!(
                "entry {} has dim {}, shard dim is {dim}",
                e.id,
                e.dim()
            )));
        }
        let caption = e.caption.to_string();
        out.extend_from_slice(&e.id.to_le_bytes());
        out.extend_from_slice(&string_len(&e.class_name, "class name", e.id)?.to_le_bytes());
        out.extend_from_slice(e.class_name.as_bytes());
        out.extend_from_slice(&string_len(&caption, "caption", e.id)?.to_le_bytes());
        out.extend_from_slice(caption.as_bytes());
        for v in [&e.r_v, &e.r_l] {
            for x in v.values() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_shard(buf: &[u8]) -> Result<Shard> {
    let mut r = ByteReader::new(buf);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad shard magic"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported shard version {version}")));
    }
    let count = r.u64("entry count")?;
    let dim = r.u32("feature dim")? as usize;
    if count > 0 && dim == 0 {
        return Err(Error::format(DIM_OFFSET, "feature dim is zero"));
    }
    let mut entries = Vec::with_capacity(count.min(1 << 20) as usize);
    for idx in 0..count {
        let rec = |what: &str| format!("{what} of record {idx}");
        let id = r.u64(&rec("id"))?;
        let n = r.u16(&rec("class-name length"))? as usize;
        let class_name = r.utf8(n, &rec("class name"))?;
        let n = r.u16(&rec("caption length"))? as usize;
        let at = r.offset();
        let caption_text = r.utf8(n, &rec("caption"))?;
        let caption = validate_caption(&caption_text)
            .map_err(|e| Error::format(at, format!("record {idx}: {e}")))?;
        let r_v = FeatureVec::new(r.f32s(dim, &rec("r_v payload"))?)?;
        let r_l = FeatureVec::new(r.f32s(dim, &rec("r_l payload"))?)?;
        entries.push(CorpusEntry::from_stored(id, class_name, caption, r_v, r_l));
    }
    if r.remaining() != 0 {
        return Err(Error::format(r.offset(), "trailing bytes after last record"));
    }
    Ok(Shard { dim, entries })
}

pub fn write_shard(path: &Path, dim: usize, entries: &[CorpusEntry]) -> Result<()> {
    fs::write(path, encode_shard(dim, entries)?).map_err(|e| Error::io(path, e))
}

pub fn read_shard(path: &Path) -> Result<Shard> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_shard(&buf)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestLine {
    pub id: u64,
    pub class_name: String,
    pub caption: String,
    pub shard_path: String,
    pub row_index: usize,
}

#[derive(Clone, Debug)]
pub struct ShardSet {
    pub shard_paths: Vec<PathBuf>,
    pub manifest_path: PathBuf,
}

pub fn shard_file_name(i: usize) -> String {
    format!("shard-{i:05}.imnt")
}

/// Writes `entries` as shards of at most `capacity` rows plus a manifest.
/// An empty corpus produces only the manifest.
pub fn build_shards(entries: &[CorpusEntry], capacity: usize, out_dir: &Path) -> Result<ShardSet> {
    if capacity == 0 {
        return Err(Error::Argument("shard capacity must be > 0".into()));
    }
    let dim = entries.first().map_or(0, CorpusEntry::dim);
    if let Some(e) = entries.iter().find(|e| e.dim() != dim) {
        return Err(Error::Dimension(format!(
            "entry {} has dim {}, corpus dim is {dim}",
            e.id,
            e.dim()
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = String::new();
    let mut shard_paths = Vec::new();
    for (i, chunk) in entries.chunks(capacity).enumerate() {
        let name = shard_file_name(i);
        let path = out_dir.join(&name);
        write_shard(&path, dim, chunk)?;
        for (row, e) in chunk.iter().enumerate() {
            manifest.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.id, e.class_name, e.caption, name, row
            ));
        }
        shard_paths.push(path);
    }
    let manifest_path = out_dir.join(MANIFEST_NAME);
    let mut f = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    f.write_all(manifest.as_bytes())
        .map_err(|e| Error::io(&manifest_path, e))?;
    Ok(ShardSet {
        shard_paths,
        manifest_path,
    })
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestLine>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Argument(format!("{}:{}: {m}", path.display(), n + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(bad("expected 5 tab-separated columns"));
        }
        out.push(ManifestLine {
            id: cols[0].parse().map_err(|_| bad("bad id"))?,
            class_name: cols[1].to_string(),
            caption: cols[2].to_string(),
            shard_path: cols[3].to_string(),
            row_index: cols[4].parse().map_err(|_| bad("bad row index"))?,
        });
    }
    Ok(out)
}

/// Loads every shard named by the manifest in `dir`, in manifest order.
pub fn load_corpus(dir: &Path) -> Result<Vec<Shard>> {
    let lines = read_manifest(&dir.join(MANIFEST_NAME))?;
    let mut names: Vec<&str> = Vec::new();
    for l in &lines {
        if !names.contains(&l.shard_path.as_str()) {
            names.push(&l.shard_path);
        }
    }
    names.iter().map(|n| read_shard(&dir.join(n))).collect()
}
