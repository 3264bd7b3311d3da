//! Dice / Jaccard scoring and the per-epoch metrics CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Result, TrainError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    pub fn dice(&self) -> f64 {
        2.0 * self.tp as f64 / (2 * self.tp + self.fp + self.fn_) as f64
    }

    pub fn jaccard(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fp + self.fn_) as f64
    }
}

/// Per-class counts for foreground classes `1..=classes`; entry `c - 1` is class `c`.
pub fn class_counts(pred: &[u8], truth: &[u8], classes: usize) -> Vec<Counts> {
    let mut out = vec![Counts::default(); classes];
    for (&p, &t) in pred.iter().zip(truth) {
        let (p, t) = (p as usize, t as usize);
        if p == t {
            if p > 0 {
                out[p - 1].tp += 1;
            }
            continue;
        }
        if p > 0 {
            out[p - 1].fp += 1;
        }
        if t > 0 {
            out[t - 1].fn_ += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub dice_mean: f64,
    pub ji_mean: f64,
    /// Per foreground class, averaged over the volumes that contain it (NaN if none do).
    pub dice: Vec<f64>,
    pub ji: Vec<f64>,
}

/// Scores each volume from its pooled slice predictions, skipping classes absent
/// from that volume's ground truth, then averages over volumes.
pub fn score_volumes(volumes: &[(Vec<u8>, Vec<u8>)], classes: usize) -> Scores {
    let mut dice_sum = vec![0.0; classes];
    let mut ji_sum = vec![0.0; classes];
    let mut present = vec![0usize; classes];
    let (mut dice_mean, mut ji_mean, mut scored) = (0.0, 0.0, 0usize);
    for (pred, truth) in volumes {
        let counts = class_counts(pred, truth, classes);
        let (mut d, mut j, mut k) = (0.0, 0.0, 0usize);
        for (c, cnt) in counts.iter().enumerate() {
            if cnt.tp + cnt.fn_ == 0 {
                continue;
            }
            let (dc, jc) = (cnt.dice(), cnt.jaccard());
            dice_sum[c] += dc;
            ji_sum[c] += jc;
            present[c] += 1;
            d += dc;
            j += jc;
            k += 1;
        }
        if k > 0 {
            dice_mean += d / k as f64;
            ji_mean += j / k as f64;
            scored += 1;
        }
    }
    let avg = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    Scores {
        dice_mean: avg(dice_mean, scored),
        ji_mean: avg(ji_mean, scored),
        dice: dice_sum.iter().zip(&present).map(|(&s, &n)| avg(s, n)).collect(),
        ji: ji_sum.iter().zip(&present).map(|(&s, &n)| avg(s, n)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub loss_gcl: Option<f64>,
    pub loss_seg: Option<f64>,
    pub loss_cons: Option<f64>,
    pub loss_lcl: Option<f64>,
    pub lambda3: Option<f64>,
    pub scores: Option<Scores>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub classes: usize,
    pub rows: Vec<MetricsRow>,
    /// Seconds per stage; kept out of the CSV so reruns stay byte-identical.
    pub wall_clock: Vec<(String, f64)>,
}

impl MetricsReport {
    pub fn new(classes: usize) -> Self {
        MetricsReport {
            classes,
            ..Default::default()
        }
    }

    pub fn header(&self) -> String {
        let mut h = String::from("epoch,split,loss_gcl,loss_seg,loss_cons,loss_lcl,lambda3,dice_mean,ji_mean");
        for c in 1..=self.classes {
            write!(h, ",dice_c{c}").unwrap();
        }
        for c in 1..=self.classes {
            write!(h, ",ji_c{c}").unwrap();
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        let mut out = self.header();
        out.push('\n');
        for r in &self.rows {
            let mut fields = vec![
                r.epoch.to_string(),
                r.split.clone(),
                opt(r.loss_gcl),
                opt(r.loss_seg),
                opt(r.loss_cons),
                opt(r.loss_lcl),
                opt(r.lambda3),
            ];
            match &r.scores {
                Some(s) => {
                    fields.push(s.dice_mean.to_string());
                    fields.push(s.ji_mean.to_string());
                    fields.extend(s.dice.iter().chain(&s.ji).map(f64::to_string));
                }
                None => fields.extend(std::iter::repeat(String::new()).take(2 + 2 * self.classes)),
            }
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(TrainError::Metrics {
            line: 1,
            detail: "empty file".into(),
        })?;
        let cols = header.split(',').count();
        if cols < 9 || (cols - 9) % 2 != 0 {
            return Err(TrainError::Metrics {
                line: 1,
                detail: format!("unexpected header {header:?}"),
            });
        }
        let report = MetricsReport::new((cols - 9) / 2);
        if report.header() != header {
            return Err(TrainError::Metrics {
                line: 1,
                detail: format!("unexpected header {header:?}"),
            });
        }
        let mut report = report;
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols {
                return Err(TrainError::Metrics {
                    line: lineno,
                    detail: format!("{} fields, expected {cols}", f.len()),
                });
            }
            let num = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse().map(Some).map_err(|_| TrainError::Metrics {
                    line: lineno,
                    detail: format!("not a number: {s:?}"),
                })
            };
            let epoch = f[0].parse().map_err(|_| TrainError::Metrics {
                line: lineno,
                detail: format!("bad epoch {:?}", f[0]),
            })?;
            let scores = match num(f[7])? {
                None => None,
                Some(dice_mean) => {
                    let rest: Vec<f64> = f[9..]
                        .iter()
                        .map(|s| num(s).map(|v| v.unwrap_or(f64::NAN)))
                        .collect::<Result<_>>()?;
                    Some(Scores {
                        dice_mean,
                        ji_mean: num(f[8])?.unwrap_or(f64::NAN),
                        dice: rest[..report.classes].to_vec(),
                        ji: rest[report.classes..].to_vec(),
                    })
                }
            };
            report.rows.push(MetricsRow {
                epoch,
                split: f[1].to_owned(),
                loss_gcl: num(f[2])?,
                loss_seg: num(f[3])?,
                loss_cons: num(f[4])?,
                loss_lcl: num(f[5])?,
                lambda3: num(f[6])?,
                scores,
            });
        }
        Ok(report)
    }

    /// Last row of the given split, if any.
    pub fn last(&self, split: &str) -> Option<&MetricsRow> {
        self.rows.iter().rev().find(|r| r.split == split)
    }
}

pub fn save_metrics(report: &MetricsReport, path: &Path) -> Result<()> {
    fs::write(path, report.to_csv()).map_err(|e| TrainError::io(path, e))
}

pub fn load_metrics(path: &Path) -> Result<MetricsReport> {
    let text = fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
    MetricsReport::from_csv(&text)
}
