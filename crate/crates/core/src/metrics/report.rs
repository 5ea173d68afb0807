use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ThresholdSweep;
use crate::error::{Error, Result};

/// One row of the per-image CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub image_id: String,
    pub num_pred: usize,
    pub num_gt: usize,
    pub precisions: Vec<f64>,
    pub map: f64,
}

impl ImageReport {
    /// Writes `imageId,num_pred,num_gt,p@0.50,…,p@0.95,mAP`.
    pub fn write_csv(rows: &[ImageReport], sweep: &ThresholdSweep, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["image_id".to_string(), "num_pred".into(), "num_gt".into()];
        header.extend(sweep.thresholds().iter().map(|t| format!("p@{t:.2}")));
        header.push("map".into());
        w.write_record(&header)?;
        for r in rows {
            let mut rec = vec![r.image_id.clone(), r.num_pred.to_string(), r.num_gt.to_string()];
            rec.extend(r.precisions.iter().map(|p| format!("{p:.6}")));
            rec.push(format!("{:.6}", r.map));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Aggregate result laid out like a results-table row: model, input size,
/// output size, and one mAP per evaluated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub model: String,
    pub input_size: String,
    pub output_size: String,
    pub map: BTreeMap<String, f64>,
    pub num_images: usize,
    pub mean_loss: Option<f64>,
}

impl SummaryReport {
    pub fn table_header(&self) -> String {
        let mut s = format!("{:<12} {:<12} {:<12}", "Model", "Input Size", "Output Size");
        for name in self.map.keys() {
            s.push_str(&format!(" {:>10}", format!("mAP[{name}]")));
        }
        s
    }

    pub fn table_row(&self) -> String {
        let mut s = format!("{:<12} {:<12} {:<12}", self.model, self.input_size, self.output_size);
        for v in self.map.values() {
            s.push_str(&format!(" {v:>10.3}"));
        }
        s
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f).map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Formats `h×w×c`.
pub fn size_label(h: usize, w: usize, c: usize) -> String {
    format!("{h}×{w}×{c}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_row_has_three_decimals() {
        let r = SummaryReport {
            model: "U-Net".into(),
            input_size: size_label(512, 512, 3),
            output_size: size_label(128, 128, 1),
            map: BTreeMap::from([("eval".to_string(), 0.31149)]),
            num_images: 10,
            mean_loss: None,
        };
        let row = r.table_row();
        assert!(row.contains("512×512×3"));
        assert!(row.contains("128×128×1"));
        assert!(row.trim_end().ends_with("0.311"));
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![ImageReport {
            image_id: "a".into(),
            num_pred: 1,
            num_gt: 2,
            precisions: vec![0.5; 10],
            map: 0.5,
        }];
        ImageReport::write_csv(&rows, &ThresholdSweep::default(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "image_id,num_pred,num_gt,p@0.50,p@0.55,p@0.60,p@0.65,p@0.70,p@0.75,p@0.80,p@0.85,p@0.90,p@0.95,map"
        );
        assert!(lines.next().unwrap().starts_with("a,1,2,0.500000"));
    }
}
