use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetMeta, LabelMode, VideoRecord};
use crate::error::{Error, Result};
use crate::regions::{BoundingBox, RegionProposal};
use crate::train::Label;

pub const PROPOSALS_FILE: &str = "proposals.ndjson";
pub const LABELS_FILE: &str = "labels.ndjson";
pub const GLOBALS_FILE: &str = "globals.ndjson";
pub const PACKED_FILE: &str = "dataset.bin";
pub const META_FILE: &str = "meta.json";

const PACKED_MAGIC: &[u8; 4] = b"RGDS";
const PACKED_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    #[default]
    Ndjson,
    Bin,
}

impl DataFormat {
    /// The packed file wins when both layouts are present.
    pub fn detect(dir: &Path) -> Self {
        if dir.join(PACKED_FILE).exists() {
            DataFormat::Bin
        } else {
            DataFormat::Ndjson
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ProposalLine {
    video_id: String,
    frame: usize,
    #[serde(rename = "box")]
    bbox: BoundingBox,
    feature: Vec<f64>,
    #[serde(default)]
    source_id: String,
}

#[derive(Serialize, Deserialize)]
struct LabelLine {
    video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    multi_hot: Option<Vec<u8>>,
}

#[derive(Serialize, Deserialize)]
struct GlobalLine {
    video_id: String,
    feature: Vec<f64>,
}

/// Writes `records` (sorted by id) and `meta` into `dir`.
pub fn save_dataset(dir: &Path, records: &[VideoRecord], meta: &DatasetMeta, format: DataFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut sorted: Vec<&VideoRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let meta_json = serde_json::to_string_pretty(meta).expect("plain struct");
    write_file(&dir.join(META_FILE), meta_json.as_bytes())?;
    match format {
        DataFormat::Ndjson => save_ndjson(dir, &sorted),
        DataFormat::Bin => save_packed(dir, &sorted, meta),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn save_ndjson(dir: &Path, records: &[&VideoRecord]) -> Result<()> {
    let mut proposals = Vec::new();
    let mut labels = Vec::new();
    let mut globals = Vec::new();
    for r in records {
        for p in &r.proposals {
            let line = ProposalLine {
                video_id: r.video_id.clone(),
                frame: p.frame,
                bbox: p.bbox,
                feature: p.feature.clone(),
                source_id: p.source_id.clone(),
            };
            serde_json::to_writer(&mut proposals, &line).expect("in-memory write");
            proposals.push(b'\n');
        }
        let line = match &r.label {
            Label::Class(c) => LabelLine {
                video_id: r.video_id.clone(),
                label: Some(*c),
                multi_hot: None,
            },
            Label::MultiHot(v) => LabelLine {
                video_id: r.video_id.clone(),
                label: None,
                multi_hot: Some(v.clone()),
            },
        };
        serde_json::to_writer(&mut labels, &line).expect("in-memory write");
        labels.push(b'\n');
        if let Some(g) = &r.global_feature {
            let line = GlobalLine {
                video_id: r.video_id.clone(),
                feature: g.clone(),
            };
            serde_json::to_writer(&mut globals, &line).expect("in-memory write");
            globals.push(b'\n');
        }
    }
    write_file(&dir.join(PROPOSALS_FILE), &proposals)?;
    write_file(&dir.join(LABELS_FILE), &labels)?;
    let gpath = dir.join(GLOBALS_FILE);
    if globals.is_empty() {
        if gpath.exists() {
            fs::remove_file(&gpath).map_err(|e| Error::io(&gpath, e))?;
        }
        Ok(())
    } else {
        write_file(&gpath, &globals)
    }
}

/// Reads `meta.json` if present.
pub fn load_meta(dir: &Path) -> Result<Option<DatasetMeta>> {
    let path = dir.join(META_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::data(path.display().to_string(), e.to_string()))
}

/// Loads every record under `dir`, ordered by video id. Feature widths
/// must agree across all proposals and global features.
pub fn load_dataset(dir: &Path, format: DataFormat) -> Result<Vec<VideoRecord>> {
    let records = match format {
        DataFormat::Ndjson => load_ndjson(dir)?,
        DataFormat::Bin => load_packed(dir)?,
    };
    if records.is_empty() {
        log::warn!("{}: dataset is empty", dir.display());
    }
    Ok(records)
}

fn ndjson_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("{} line {}", path.display(), i + 1), e.to_string()))?;
        out.push((i + 1, value));
    }
    Ok(out)
}

fn load_ndjson(dir: &Path) -> Result<Vec<VideoRecord>> {
    let ppath = dir.join(PROPOSALS_FILE);
    let lines: Vec<(usize, ProposalLine)> = ndjson_lines(&ppath)?;
    if lines.is_empty() {
        return Ok(Vec::new());
    }
    let mut width = None;
    let mut videos: BTreeMap<String, Vec<RegionProposal>> = BTreeMap::new();
    for (n, line) in lines {
        let locus = || format!("{} line {n} (video {})", ppath.display(), line.video_id);
        check_width(&mut width, line.feature.len(), locus)?;
        if line.feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(locus(), "non-finite feature value"));
        }
        videos.entry(line.video_id).or_default().push(RegionProposal {
            frame: line.frame,
            bbox: line.bbox,
            feature: line.feature,
            source_id: line.source_id,
        });
    }
    let d = width.unwrap_or(0);

    let lpath = dir.join(LABELS_FILE);
    let mut labels: BTreeMap<String, Label> = BTreeMap::new();
    for (n, line) in ndjson_lines::<LabelLine>(&lpath)? {
        let locus = format!("{} line {n} (video {})", lpath.display(), line.video_id);
        let label = match (line.label, line.multi_hot) {
            (Some(c), None) => Label::Class(c),
            (None, Some(v)) => Label::MultiHot(v),
            _ => return Err(Error::data(locus, "need exactly one of `label` and `multi_hot`")),
        };
        if !videos.contains_key(&line.video_id) {
            return Err(Error::data(locus, "label for a video without proposals"));
        }
        if labels.insert(line.video_id, label).is_some() {
            return Err(Error::data(locus, "duplicate label"));
        }
    }

    let gpath = dir.join(GLOBALS_FILE);
    let mut globals: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    if gpath.exists() {
        for (n, line) in ndjson_lines::<GlobalLine>(&gpath)? {
            let locus = || format!("{} line {n} (video {})", gpath.display(), line.video_id);
            if line.feature.len() != d {
                return Err(Error::FeatureWidth {
                    locus: locus(),
                    expected: d,
                    found: line.feature.len(),
                });
            }
            if !videos.contains_key(&line.video_id) {
                return Err(Error::data(locus(), "global feature for a video without proposals"));
            }
            globals.insert(line.video_id, line.feature);
        }
    }

    let mut records = Vec::with_capacity(videos.len());
    for (video_id, proposals) in videos {
        let label = labels
            .remove(&video_id)
            .ok_or_else(|| Error::data(format!("{} (video {video_id})", lpath.display()), "missing label"))?;
        records.push(VideoRecord {
            global_feature: globals.remove(&video_id),
            video_id,
            proposals,
            label,
            volume: None,
        });
    }
    check_labels(&records)?;
    Ok(records)
}

fn check_width(width: &mut Option<usize>, found: usize, locus: impl Fn() -> String) -> Result<()> {
    match *width {
        None if found == 0 => Err(Error::data(locus(), "empty feature vector")),
        None => {
            *width = Some(found);
            Ok(())
        }
        Some(expected) if expected != found => Err(Error::FeatureWidth {
            locus: locus(),
            expected,
            found,
        }),
        Some(_) => Ok(()),
    }
}

/// Labels must all be class indices or all multi-hot of one length.
fn check_labels(records: &[VideoRecord]) -> Result<()> {
    let Some(first) = records.first() else {
        return Ok(());
    };
    for r in records {
        let ok = match (&first.label, &r.label) {
            (Label::Class(_), Label::Class(_)) => true,
            (Label::MultiHot(a), Label::MultiHot(b)) => a.len() == b.len() && b.iter().all(|&x| x <= 1),
            _ => false,
        };
        if !ok {
            return Err(Error::data(
                format!("video {}", r.video_id),
                "label is inconsistent with the rest of the dataset",
            ));
        }
    }
    Ok(())
}

// Packed layout, all little-endian:
//   magic "RGDS", version u32, videos u32, d u32, classes u32, mode u8
//   per video: id (u16 length + UTF-8), proposals u32, has_global u8,
//     label (u32 index, or `classes` bytes of 0/1), global (d x f64),
//     per proposal: frame u32, box 4 x f64, feature d x f64,
//       source_id (u16 length + UTF-8)

fn save_packed(dir: &Path, records: &[&VideoRecord], meta: &DatasetMeta) -> Result<()> {
    let path = dir.join(PACKED_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::new();
    buf.extend_from_slice(PACKED_MAGIC);
    put_u32(&mut buf, PACKED_VERSION);
    put_u32(&mut buf, records.len() as u32);
    put_u32(&mut buf, meta.feature_dim as u32);
    put_u32(&mut buf, meta.classes as u32);
    buf.push(match meta.mode {
        LabelMode::Single => 0,
        LabelMode::Multi => 1,
    });
    for r in records {
        put_str(&mut buf, &r.video_id)?;
        put_u32(&mut buf, r.proposals.len() as u32);
        buf.push(r.global_feature.is_some() as u8);
        match (&r.label, meta.mode) {
            (Label::Class(c), LabelMode::Single) => put_u32(&mut buf, *c as u32),
            (Label::MultiHot(v), LabelMode::Multi) if v.len() == meta.classes => buf.extend_from_slice(v),
            _ => {
                return Err(Error::data(
                    format!("video {}", r.video_id),
                    "label does not match the dataset mode",
                ))
            }
        }
        if let Some(g) = &r.global_feature {
            put_f64s(&mut buf, g, meta.feature_dim, &r.video_id)?;
        }
        for p in &r.proposals {
            put_u32(&mut buf, p.frame as u32);
            for v in <[f64; 4]>::from(p.bbox) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            put_f64s(&mut buf, &p.feature, meta.feature_dim, &r.video_id)?;
            put_str(&mut buf, &p.source_id)?;
        }
        w.write_all(&buf).map_err(|e| Error::io(&path, e))?;
        buf.clear();
    }
    w.write_all(&buf).map_err(|e| Error::io(&path, e))?;
    w.flush().map_err(|e| Error::io(&path, e))
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::Invalid(format!("identifier too long: {s}")))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_f64s(buf: &mut Vec<u8>, v: &[f64], d: usize, video: &str) -> Result<()> {
    if v.len() != d {
        return Err(Error::FeatureWidth {
            locus: format!("video {video}"),
            expected: d,
            found: v.len(),
        });
    }
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::data(
                format!("{} offset {}", self.path.display(), self.pos),
                "truncated file",
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        let pos = self.pos;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::data(format!("{} offset {pos}", self.path.display()), "invalid UTF-8"))
    }
}

fn load_packed(dir: &Path) -> Result<Vec<VideoRecord>> {
    let path = dir.join(PACKED_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: &path,
    };
    if r.take(4)? != PACKED_MAGIC {
        return Err(Error::data(path.display().to_string(), "not a packed dataset"));
    }
    let version = r.u32()?;
    if version != PACKED_VERSION {
        return Err(Error::data(path.display().to_string(), format!("unsupported version {version}")));
    }
    let videos = r.u32()? as usize;
    let d = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let multi = match r.u8()? {
        0 => false,
        1 => true,
        m => return Err(Error::data(path.display().to_string(), format!("unknown label mode {m}"))),
    };
    let mut records = Vec::with_capacity(videos);
    for _ in 0..videos {
        let video_id = r.string()?;
        let count = r.u32()? as usize;
        let has_global = r.u8()? != 0;
        let label = if multi {
            Label::MultiHot(r.take(classes)?.to_vec())
        } else {
            Label::Class(r.u32()? as usize)
        };
        let global_feature = if has_global { Some(r.f64s(d)?) } else { None };
        let mut proposals = Vec::with_capacity(count);
        for _ in 0..count {
            let frame = r.u32()? as usize;
            let c = r.f64s(4)?;
            let bbox = BoundingBox::new(c[0], c[1], c[2], c[3])
                .map_err(|e| Error::data(format!("{} (video {video_id})", path.display()), e.to_string()))?;
            let feature = r.f64s(d)?;
            let source_id = r.string()?;
            proposals.push(RegionProposal {
                frame,
                bbox,
                feature,
                source_id,
            });
        }
        records.push(VideoRecord {
            video_id,
            proposals,
            global_feature,
            label,
            volume: None,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::data(
            format!("{} offset {}", path.display(), r.pos),
            "trailing bytes after the last record",
        ));
    }
    records.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    check_labels(&records)?;
    Ok(records)
}
