use std::fmt::Write as _;
use std::path::Path;

use super::accuracy;
use crate::assignment::CoarseDictionary;
use crate::data::{EncodedInputs, GroundingDataset, RunConfig, Split};
use crate::error::{CiteError, Result};
use crate::training::{train, AssignOptions, AssignmentKind, Assigner};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub assignment: AssignmentKind,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,assignment,val_accuracy,test_accuracy,error\n");
        for r in &self.rows {
            let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            let _ = writeln!(s, "{},{},{},{},{err}", r.k, r.assignment, cell(r.val_accuracy), cell(r.test_accuracy));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| CiteError::io(path, e))
    }
}

fn run_cell(
    ds: &GroundingDataset,
    enc: &EncodedInputs,
    cfg: &RunConfig,
    dictionary: Option<&CoarseDictionary>,
) -> Result<(f64, Option<f64>)> {
    let opts = AssignOptions {
        seed: cfg.seed,
        kmeans_iters: cfg.kmeans_iters,
        kmeans_on_test: cfg.kmeans_on_test,
        dictionary: dictionary.cloned(),
    };
    let assigner = Assigner::build(cfg.assignment, cfg.k, ds, &opts)?;
    let model_cfg = cfg.model_config(enc.region_dim(), enc.phrase_dim());
    let out = train(ds, enc, &model_cfg, &cfg.train_config(), &assigner)?;
    let test = ds.phrases_in(Split::Test);
    let test_acc = if test.is_empty() {
        None
    } else {
        Some(accuracy(&out.model, ds, enc, &test, &assigner)?.accuracy)
    };
    Ok((out.best_val, test_acc))
}

/// Trains and evaluates one model per `(K, assignment)`; a failing cell is
/// recorded and the rest still run.
pub fn k_sweep(
    ds: &GroundingDataset,
    base: &RunConfig,
    ks: &[usize],
    kinds: &[AssignmentKind],
    dictionary: Option<&CoarseDictionary>,
    progress: &mut dyn FnMut(&SweepRow),
) -> Result<SweepTable> {
    let enc = ds.encode(base.spatial, base.proposals_per_image)?;
    let mut table = SweepTable::default();
    for &kind in kinds {
        for &k in ks {
            let cfg = RunConfig { k, assignment: kind, ..base.clone() };
            let row = match cfg.validate().and_then(|_| run_cell(ds, &enc, &cfg, dictionary)) {
                Ok((val, test)) => SweepRow { k, assignment: kind, val_accuracy: Some(val), test_accuracy: test, error: None },
                Err(e) => SweepRow { k, assignment: kind, val_accuracy: None, test_accuracy: None, error: Some(e.to_string()) },
            };
            progress(&row);
            table.rows.push(row);
        }
    }
    Ok(table)
}

/// Accuracy-versus-K line plot, one polyline per assignment kind.
pub fn sweep_svg(table: &SweepTable) -> String {
    let (w, h, pad) = (480.0, 320.0, 40.0);
    let value = |r: &SweepRow| r.test_accuracy.or(r.val_accuracy);
    let ks: Vec<usize> = {
        let mut v: Vec<usize> = table.rows.iter().map(|r| r.k).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let x_of = |k: usize| {
        let i = ks.iter().position(|&x| x == k).unwrap_or(0) as f64;
        pad + i * (w - 2.0 * pad) / (ks.len().max(2) - 1) as f64
    };
    let y_of = |a: f64| h - pad - a * (h - 2.0 * pad);
    let mut s = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#);
    let _ = write!(
        s,
        r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{0}" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    for &k in &ks {
        let _ = write!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{k}</text>"#, x_of(k), h - pad + 16.0);
    }
    let colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let mut kinds: Vec<AssignmentKind> = table.rows.iter().map(|r| r.assignment).collect();
    kinds.sort();
    kinds.dedup();
    for (n, kind) in kinds.iter().enumerate() {
        let pts: Vec<String> = table
            .rows
            .iter()
            .filter(|r| r.assignment == *kind)
            .filter_map(|r| value(r).map(|a| format!("{:.1},{:.1}", x_of(r.k), y_of(a))))
            .collect();
        let c = colours[n % colours.len()];
        let _ = write!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        let _ = write!(s, r#"<text x="{}" y="{}" font-size="12" fill="{c}">{kind}</text>"#, w - pad - 60.0, pad + 14.0 * n as f64);
    }
    s.push_str("</svg>\n");
    s
}
