//! Text formats: one object per line, whitespace separated.
//!
//! ```text
//! # detections: image_id class x0 y0 x1 y1 score
//! scene_0003 car 120 44 188 96 0.93
//! # ground truth: image_id class x0 y0 x1 y1 distance_m
//! scene_0003 car 118 45 190 97 23.5
//! ```
//!
//! Blank lines and `#` comments are ignored.

use std::fmt::Write as _;
use std::path::Path;

use super::{ApByDistance, BBox, Detection, EvalError, GroundTruthObject};
use crate::sceneformat::ClassLabel;

type Row = (usize, String, ClassLabel, BBox, f64);

fn parse_rows(text: &str, last: &str) -> Result<Vec<Row>, EvalError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: String| EvalError::Parse { line, msg };
        let f: Vec<&str> = content.split_whitespace().collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 fields (image_id class x0 y0 x1 y1 {last}), found {}", f.len())));
        }
        let class: ClassLabel = f[1].parse().map_err(err)?;
        let mut nums = [0.0; 5];
        for (k, s) in f[2..].iter().enumerate() {
            nums[k] = s
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("cannot parse {s:?} as a number")))?;
        }
        let b = BBox::new(nums[0], nums[1], nums[2], nums[3]);
        if b.x1 < b.x0 || b.y1 < b.y0 {
            return Err(err("box has x1 < x0 or y1 < y0".into()));
        }
        out.push((line, f[0].to_string(), class, b, nums[4]));
    }
    Ok(out)
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>, EvalError> {
    parse_rows(text, "score")?
        .into_iter()
        .map(|(line, image_id, class_label, bbox, score)| {
            if !(0.0..=1.0).contains(&score) {
                return Err(EvalError::Parse {
                    line,
                    msg: format!("score {score} outside [0, 1]"),
                });
            }
            if bbox.area() <= 0.0 {
                return Err(EvalError::Parse {
                    line,
                    msg: "detection box is empty".into(),
                });
            }
            Ok(Detection {
                image_id,
                class_label,
                bbox,
                score,
            })
        })
        .collect()
}

pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruthObject>, EvalError> {
    parse_rows(text, "distance")?
        .into_iter()
        .map(|(line, image_id, class_label, bbox, distance)| {
            if !(distance > 0.0) {
                return Err(EvalError::Parse {
                    line,
                    msg: format!("distance {distance} must be positive"),
                });
            }
            Ok(GroundTruthObject {
                image_id,
                class_label,
                bbox,
                distance,
                instance_id: 0,
            })
        })
        .collect()
}

fn read(path: &Path) -> Result<String, EvalError> {
    std::fs::read_to_string(path).map_err(|e| EvalError::File {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

fn with_path<T>(path: &Path, r: Result<T, EvalError>) -> Result<T, EvalError> {
    r.map_err(|e| EvalError::File {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>, EvalError> {
    let path = path.as_ref();
    with_path(path, parse_detections(&read(path)?))
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthObject>, EvalError> {
    let path = path.as_ref();
    with_path(path, parse_ground_truth(&read(path)?))
}

fn write_rows<'a>(path: &Path, header: &str, rows: impl Iterator<Item = (&'a str, ClassLabel, BBox, f64)>) -> Result<(), EvalError> {
    let mut s = format!("# {header}\n");
    for (id, c, b, v) in rows {
        writeln!(s, "{id} {c} {} {} {} {} {v}", b.x0, b.y0, b.x1, b.y1).expect("string write");
    }
    std::fs::write(path, s).map_err(|e| EvalError::File {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn write_detections(path: impl AsRef<Path>, dets: &[Detection]) -> Result<(), EvalError> {
    write_rows(
        path.as_ref(),
        "image_id class x0 y0 x1 y1 score",
        dets.iter().map(|d| (d.image_id.as_str(), d.class_label, d.bbox, d.score)),
    )
}

pub fn write_ground_truth(path: impl AsRef<Path>, gts: &[GroundTruthObject]) -> Result<(), EvalError> {
    write_rows(
        path.as_ref(),
        "image_id class x0 y0 x1 y1 distance_m",
        gts.iter().map(|g| (g.image_id.as_str(), g.class_label, g.bbox, g.distance)),
    )
}

/// Plot data: `bin_center,class,ap,n_gt`, with an empty `ap` for absent
/// bins.
pub fn ap_csv(r: &ApByDistance) -> String {
    let mut s = String::from("bin_center,class,ap,n_gt\n");
    let centers = r.bin_centers();
    for (c, bins) in &r.classes {
        for (center, b) in centers.iter().zip(bins) {
            let ap = b.ap.map(|v| format!("{v:.6}")).unwrap_or_default();
            writeln!(s, "{center},{c},{ap},{}", b.n_gt).expect("string write");
        }
    }
    s
}
