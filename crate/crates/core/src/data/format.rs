//! The EEGD on-disk dataset format and metadata export.
//!
//! Little-endian binary. Header: magic `EEGD`, format version, channels,
//! segment length, sampling rate in millihertz, class count, subject count.
//! Then per subject: id length and UTF-8 bytes, segment count, all labels
//! as u32, then all samples as raw f32. The whole file is parsed against
//! its length before any data is accepted, so truncation and inflated
//! counts surface as format errors with the offending byte offset.

use std::path::Path;

use crate::error::{Error, Result};

use super::types::{EEGDataset, Segment, SubjectData};

const MAGIC: &[u8; 4] = b"EEGD";

/// On-disk dataset layout revision, stored in the header.
pub const DATASET_FORMAT_VERSION: u32 = 1;
const VERSION: u32 = DATASET_FORMAT_VERSION;

fn rate_to_mhz(fs: f64) -> Result<u32> {
    let mhz = (fs * 1000.0).round();
    if mhz < 1.0 || mhz > u32::MAX as f64 || mhz / 1000.0 != fs {
        return Err(Error::Config(format!(
            "sampling rate {fs} Hz is not representable at millihertz precision"
        )));
    }
    Ok(mhz as u32)
}

pub fn encode_dataset(dataset: &EEGDataset) -> Result<Vec<u8>> {
    dataset.validate()?;
    let mhz = rate_to_mhz(dataset.sampling_rate)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        dataset.channels as u32,
        dataset.segment_len as u32,
        mhz,
        dataset.n_classes as u32,
        dataset.subjects.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for subject in &dataset.subjects {
        let id = subject.subject_id.as_bytes();
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&(subject.segments.len() as u32).to_le_bytes());
        for seg in &subject.segments {
            out.extend_from_slice(&(seg.label as u32).to_le_bytes());
        }
        for seg in &subject.segments {
            for v in &seg.samples {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    offset: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_string(),
            offset: self.offset as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.offset.checked_add(n).ok_or_else(|| {
            self.fail("length overflows")
        })?;
        if end > self.buf.len() {
            return Err(self.fail(format!(
                "needs {n} more bytes but only {} remain",
                self.buf.len() - self.offset
            )));
        }
        let slice = &self.buf[self.offset..end];
        self.offset = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let at = self.offset;
        let bytes = self.take(4).map_err(|_| Error::Format {
            path: self.path.to_string(),
            offset: at as u64,
            msg: format!("truncated while reading {what}"),
        })?;
        Ok(u32::from_le_bytes(bytes.try_into().unwrap()))
    }
}

pub fn decode_dataset(bytes: &[u8], path: &str) -> Result<EEGDataset> {
    let mut c = Cursor {
        buf: bytes,
        offset: 0,
        path,
    };
    let magic = c.take(4).map_err(|_| Error::Format {
        path: path.to_string(),
        offset: 0,
        msg: "file too short for the EEGD magic".into(),
    })?;
    if magic != MAGIC {
        c.offset = 0;
        return Err(c.fail(format!("bad magic {magic:?}, expected \"EEGD\"")));
    }
    let version_at = c.offset;
    let version = c.u32("version")?;
    if version != VERSION {
        c.offset = version_at;
        return Err(c.fail(format!("unsupported format version {version}")));
    }
    let channels = c.u32("channels")? as usize;
    let segment_len = c.u32("segment_len")? as usize;
    let sampling_rate = f64::from(c.u32("sampling rate")?) / 1000.0;
    let n_classes = c.u32("n_classes")? as usize;
    let n_subjects = c.u32("n_subjects")? as usize;

    let seg_values = channels * segment_len;
    let mut subjects = Vec::with_capacity(n_subjects.min(1024));
    for _ in 0..n_subjects {
        let id_len = c.u32("subject id length")? as usize;
        let id_at = c.offset;
        let id_bytes = c.take(id_len)?;
        let subject_id = String::from_utf8(id_bytes.to_vec()).map_err(|_| Error::Format {
            path: path.to_string(),
            offset: id_at as u64,
            msg: "subject id is not UTF-8".into(),
        })?;
        let count = c.u32("segment count")? as usize;
        let mut labels = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let at = c.offset;
            let label = c.u32("label")? as usize;
            if label >= n_classes {
                return Err(Error::Format {
                    path: path.to_string(),
                    offset: at as u64,
                    msg: format!("label {label} outside 0..{n_classes}"),
                });
            }
            labels.push(label);
        }
        let mut segments = Vec::with_capacity(count.min(1 << 20));
        for label in labels {
            let raw = c.take(seg_values * 4)?;
            let samples = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            segments.push(Segment { samples, label });
        }
        subjects.push(SubjectData {
            subject_id,
            segments,
        });
    }
    if c.offset != bytes.len() {
        return Err(c.fail(format!(
            "{} trailing bytes after the declared content",
            bytes.len() - c.offset
        )));
    }

    let dataset = EEGDataset {
        channels,
        segment_len,
        sampling_rate,
        n_classes,
        subjects,
    };
    dataset.validate()?;
    Ok(dataset)
}

pub fn write_dataset(dataset: &EEGDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_dataset(dataset)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<EEGDataset> {
    let path = path.as_ref();
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_dataset(&bytes, &path.display().to_string())
}

/// One CSV row per segment: subject_id, index within the subject, label.
pub fn export_metadata_csv(dataset: &EEGDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("subject_id,index,label\n");
    for subject in &dataset.subjects {
        for (i, seg) in subject.segments.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", subject.subject_id, i, seg.label));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EEGDataset {
        EEGDataset {
            channels: 2,
            segment_len: 3,
            sampling_rate: 128.0,
            n_classes: 2,
            subjects: vec![
                SubjectData {
                    subject_id: "s01".into(),
                    segments: vec![
                        Segment {
                            samples: vec![1.0, -2.5, 0.0, 3.25, 4.0, -0.125],
                            label: 0,
                        },
                        Segment {
                            samples: vec![0.5; 6],
                            label: 1,
                        },
                    ],
                },
                SubjectData {
                    subject_id: "s02".into(),
                    segments: vec![Segment {
                        samples: vec![-1.0; 6],
                        label: 1,
                    }],
                },
            ],
        }
    }

    #[test]
    fn round_trip_is_bitwise_lossless() {
        let data = sample();
        let bytes = encode_dataset(&data).unwrap();
        let back = decode_dataset(&bytes, "mem").unwrap();
        assert_eq!(back, data);
        assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.eegd");
        let data = sample();
        write_dataset(&data, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), data);
    }

    #[test]
    fn corruption_is_rejected_with_offsets() {
        let bytes = encode_dataset(&sample()).unwrap();

        let mut magic = bytes.clone();
        magic[1] = b'X';
        match decode_dataset(&magic, "m") {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }

        let mut version = bytes.clone();
        version[4] = 9;
        match decode_dataset(&version, "m") {
            Err(Error::Format { offset: 4, msg, .. }) => assert!(msg.contains("version")),
            other => panic!("{other:?}"),
        }

        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(decode_dataset(cut, "m"), Err(Error::Format { .. })));

        let mut long = bytes.clone();
        long.push(0);
        match decode_dataset(&long, "m") {
            Err(Error::Format { msg, .. }) => assert!(msg.contains("trailing")),
            other => panic!("{other:?}"),
        }

        // First label sits after the header (28), id header (4+3), count (4).
        let mut label = bytes;
        label[39] = 0xFF;
        match decode_dataset(&label, "m") {
            Err(Error::Format { offset: 39, msg, .. }) => assert!(msg.contains("label")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unrepresentable_rates_and_empty_datasets_fail_at_write() {
        let mut data = sample();
        data.sampling_rate = std::f64::consts::PI;
        assert!(matches!(encode_dataset(&data), Err(Error::Config(_))));

        let mut empty = sample();
        empty.subjects.clear();
        assert!(encode_dataset(&empty).is_err());
    }

    #[test]
    fn metadata_csv_lists_every_segment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("meta.csv");
        export_metadata_csv(&sample(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "subject_id,index,label");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "s01,0,0");
        assert_eq!(lines[3], "s02,0,1");
    }
}
