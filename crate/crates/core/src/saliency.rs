//! Input-gradient saliency maps and their channel aggregation and export.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Deformer;
use crate::tensor::Tensor;
use crate::train::Checkpoint;

/// Absolute input gradient for one class logit, min-max normalized per map.
/// `map` is row-major `[channels, len]`; every value sits in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub channels: usize,
    pub len: usize,
    pub map: Vec<f32>,
    /// Time-mean of each channel's normalized row, min-max normalized across
    /// channels.
    pub channel_scores: Vec<f32>,
    pub class_idx: usize,
    pub subject_id: String,
}

/// Min-max rescale to [0, 1] in place. A constant input has no range to
/// stretch and maps to all zeros.
fn min_max(values: &mut [f32]) {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in values.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = hi - lo;
    if range > 0.0 {
        for v in values {
            *v = (*v - lo) / range;
        }
    } else {
        // Constant or empty input; also the NaN escape hatch.
        values.fill(0.0);
    }
}

fn scores_of(map: &[f32], l: usize) -> Vec<f32> {
    let mut scores: Vec<f32> = map
        .chunks_exact(l)
        .map(|row| row.iter().sum::<f32>() / l as f32)
        .collect();
    min_max(&mut scores);
    scores
}

/// Saliency of `x` under the model's current parameters. `x` is one segment
/// `[channels, len]`; the gradient flows to a private copy, so the caller's
/// tensor is never written.
pub fn saliency_map(
    model: &Deformer<f32>,
    x: &Tensor<f32>,
    class_idx: usize,
    subject_id: &str,
) -> Result<SaliencyMap> {
    let (c, l) = (model.config.channels, model.config.segment_len);
    if x.shape() != [c, l] {
        return Err(Error::shape(
            "saliency",
            format!("input {:?}, expected one segment of [{c}, {l}]", x.shape()),
        ));
    }
    if class_idx >= model.config.n_classes {
        return Err(Error::Domain(format!(
            "class index {class_idx} out of range for {} classes",
            model.config.n_classes
        )));
    }
    let input = Tensor::param(x.to_vec(), x.shape())?;
    let trace = model.infer(&input)?;
    trace.logits.narrow(0, class_idx, 1)?.sum().backward()?;
    let mut map: Vec<f32> = input
        .grad()
        .expect("input is a graph leaf")
        .iter()
        .map(|g| g.abs())
        .collect();
    min_max(&mut map);
    let channel_scores = scores_of(&map, l);
    Ok(SaliencyMap {
        channels: c,
        len: l,
        map,
        channel_scores,
        class_idx,
        subject_id: subject_id.to_string(),
    })
}

/// Saliency under checkpointed parameters. Inference runs on a scratch model
/// restored from the checkpoint; neither the passed model nor the checkpoint
/// is modified.
pub fn saliency(
    model: &Deformer<f32>,
    ckpt: &Checkpoint,
    x: &Tensor<f32>,
    class_idx: usize,
    subject_id: &str,
) -> Result<SaliencyMap> {
    ckpt.validate_against(model)?;
    let (scratch, _) = ckpt.restore_model()?;
    saliency_map(&scratch, x, class_idx, subject_id)
}

/// Elementwise mean over maps of one geometry, re-normalized to [0, 1];
/// channel scores are recomputed from the averaged map.
pub fn average_saliency(maps: &[SaliencyMap]) -> Result<SaliencyMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Domain("cannot average zero saliency maps".into()))?;
    let (c, l) = (first.channels, first.len);
    let mut mean = vec![0.0f32; c * l];
    for m in maps {
        if m.channels != c || m.len != l {
            return Err(Error::shape(
                "average_saliency",
                format!("map is {}x{}, expected {c}x{l}", m.channels, m.len),
            ));
        }
        for (acc, &v) in mean.iter_mut().zip(&m.map) {
            *acc += v;
        }
    }
    let inv = 1.0 / maps.len() as f32;
    for v in &mut mean {
        *v *= inv;
    }
    min_max(&mut mean);
    let channel_scores = scores_of(&mean, l);
    Ok(SaliencyMap {
        channels: c,
        len: l,
        map: mean,
        channel_scores,
        class_idx: first.class_idx,
        subject_id: "average".to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Pgm,
}

/// Channel scores, then the full matrix under a `map` separator line.
pub fn saliency_csv(map: &SaliencyMap) -> String {
    let mut out = String::from("channel,score\n");
    for (i, score) in map.channel_scores.iter().enumerate() {
        out.push_str(&format!("ch{i},{score}\n"));
    }
    out.push_str("map\n");
    for row in map.map.chunks_exact(map.len) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Reads back what [`saliency_csv`] wrote: per-channel scores and the matrix.
pub fn parse_saliency_csv(text: &str) -> Result<(Vec<f32>, Vec<Vec<f32>>)> {
    let bad = |line: usize, msg: String| {
        Error::Domain(format!("saliency CSV line {}: {msg}", line + 1))
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "channel,score")) => {}
        other => {
            return Err(bad(0, format!("expected header channel,score, got {other:?}")));
        }
    }
    let mut scores = Vec::new();
    let mut rows = Vec::new();
    let mut in_matrix = false;
    for (n, line) in lines {
        if line == "map" {
            in_matrix = true;
            continue;
        }
        if in_matrix {
            let row: Vec<f32> = line
                .split(',')
                .map(|cell| cell.parse().map_err(|e| bad(n, format!("{cell:?}: {e}"))))
                .collect::<Result<_>>()?;
            rows.push(row);
        } else {
            let (_, value) = line
                .split_once(',')
                .ok_or_else(|| bad(n, "expected channel,score".into()))?;
            scores.push(value.parse().map_err(|e| bad(n, format!("{value:?}: {e}")))?);
        }
    }
    if !in_matrix {
        return Err(Error::Domain("saliency CSV has no map block".into()));
    }
    Ok((scores, rows))
}

/// 8-bit binary PGM, width `len`, height `channels`.
pub fn saliency_pgm(map: &SaliencyMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.len, map.channels).into_bytes();
    out.extend(map.map.iter().map(|v| (v * 255.0).round() as u8));
    out
}

pub fn export_saliency(
    map: &SaliencyMap,
    path: impl AsRef<Path>,
    format: ExportFormat,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        ExportFormat::Csv => saliency_csv(map).into_bytes(),
        ExportFormat::Pgm => saliency_pgm(map),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}
