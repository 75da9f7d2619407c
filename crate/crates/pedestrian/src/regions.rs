//! Scored-region CSV (`frame_id,x,y,w,h,score`), shared by proposal files
//! and detector output, and the miss-rate curve CSV.

use std::collections::BTreeMap;
use std::path::Path;

use pedestrian_core::evaluate::MrFppiCurve;
use pedestrian_core::{BoundingBox, ScoredRegion};
use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};

pub const REGION_HEADER: [&str; 6] = ["frame_id", "x", "y", "w", "h", "score"];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    frame_id: String,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    score: f64,
}

/// Parses regions grouped by frame, file order kept within each frame.
/// Rows are numbered from 1 after the header in error messages.
pub fn regions_from_csv(data: &[u8], path: &Path) -> Result<BTreeMap<String, Vec<ScoredRegion>>> {
    let mut out: BTreeMap<String, Vec<ScoredRegion>> = BTreeMap::new();
    if data.iter().all(u8::is_ascii_whitespace) {
        return Ok(out);
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(data);
    let header = reader
        .headers()
        .map_err(|e| Error::parse(path, format!("header: {e}")))?;
    if header.iter().ne(REGION_HEADER) {
        return Err(Error::parse(
            path,
            format!("header must be `{}`", REGION_HEADER.join(",")),
        ));
    }
    for (i, rec) in reader.deserialize::<Row>().enumerate() {
        let row = i + 1;
        let r = rec.map_err(|e| Error::parse(path, format!("row {row}: {e}")))?;
        if !(r.w > 0.0 && r.h > 0.0) {
            return Err(Error::parse(
                path,
                format!("row {row}: width and height must be positive"),
            ));
        }
        if !(r.x.is_finite() && r.y.is_finite() && r.w.is_finite() && r.h.is_finite()) || r.score.is_nan() {
            return Err(Error::parse(path, format!("row {row}: non-finite value")));
        }
        out.entry(r.frame_id.clone()).or_default().push(ScoredRegion::new(
            r.frame_id,
            BoundingBox::new(r.x, r.y, r.w, r.h),
            r.score,
        ));
    }
    Ok(out)
}

pub fn load_regions(path: &Path) -> Result<BTreeMap<String, Vec<ScoredRegion>>> {
    regions_from_csv(&error::read(path)?, path)
}

pub fn regions_to_csv<'a>(regions: impl IntoIterator<Item = &'a ScoredRegion>) -> Vec<u8> {
    // Header written by hand so that an empty list still gets one.
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(REGION_HEADER).expect("in-memory write");
    for r in regions {
        w.serialize(Row {
            frame_id: r.frame_id.clone(),
            x: r.bbox.x,
            y: r.bbox.y,
            w: r.bbox.w,
            h: r.bbox.h,
            score: r.score,
        })
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn save_regions<'a>(path: &Path, regions: impl IntoIterator<Item = &'a ScoredRegion>) -> Result<()> {
    error::write(path, regions_to_csv(regions))
}

pub fn curve_to_csv(curve: &MrFppiCurve) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", "fppi", "miss_rate"])
        .expect("in-memory write");
    for p in &curve.points {
        w.write_record([p.threshold.to_string(), p.fppi.to_string(), p.miss_rate.to_string()])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}
