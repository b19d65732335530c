use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::run::RouteResult;

pub const CSV_COLUMNS: &str =
    "vehicle_id,route_id,unseen,l_complete,l_total,rc,is,ds,termination,infractions,ticks";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Averages {
    pub ds: f64,
    pub rc: f64,
    pub is: f64,
    pub episodes: usize,
}

impl Averages {
    fn of<'a>(rs: impl IntoIterator<Item = &'a RouteResult>) -> Self {
        let mut a = Averages::default();
        for r in rs {
            a.ds += r.ds;
            a.rc += r.rc;
            a.is += r.is;
            a.episodes += 1;
        }
        if a.episodes > 0 {
            let n = a.episodes as f64;
            a.ds /= n;
            a.rc /= n;
            a.is /= n;
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSummary {
    pub vehicle_id: String,
    pub unseen: bool,
    #[serde(flatten)]
    pub averages: Averages,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub variant: String,
    pub seeds: BTreeMap<String, u64>,
    pub config_hash: String,
    pub results: Vec<RouteResult>,
    /// In order of first appearance in `results`.
    pub vehicles: Vec<VehicleSummary>,
    /// Mean over all episodes.
    pub overall: Averages,
}

impl BenchmarkReport {
    pub fn new(variant: String, seeds: BTreeMap<String, u64>, config_hash: String, results: Vec<RouteResult>) -> Self {
        let mut r = Self {
            variant,
            seeds,
            config_hash,
            results,
            vehicles: Vec::new(),
            overall: Averages::default(),
        };
        r.aggregate();
        r
    }

    fn aggregate(&mut self) {
        let mut ids: Vec<&str> = Vec::new();
        for r in &self.results {
            if !ids.contains(&r.vehicle_id.as_str()) {
                ids.push(&r.vehicle_id);
            }
        }
        self.vehicles = ids
            .iter()
            .map(|id| {
                let rs: Vec<&RouteResult> = self.results.iter().filter(|r| r.vehicle_id == *id).collect();
                VehicleSummary {
                    vehicle_id: id.to_string(),
                    unseen: rs.iter().all(|r| r.unseen),
                    averages: Averages::of(rs),
                }
            })
            .collect();
        self.overall = Averages::of(&self.results);
    }

    /// Flags every vehicle outside `training_ids` as unseen.
    pub fn mark_unseen(&mut self, training_ids: &[String]) {
        for r in &mut self.results {
            r.unseen = !training_ids.contains(&r.vehicle_id);
        }
        self.aggregate();
    }

    pub fn vehicle(&self, id: &str) -> Option<&VehicleSummary> {
        self.vehicles.iter().find(|v| v.vehicle_id == id)
    }

    /// Mean DS over the given vehicles' per-vehicle averages.
    pub fn mean_ds_over(&self, ids: &[&str]) -> Result<f64> {
        let mut s = 0.0;
        for id in ids {
            s += self
                .vehicle(id)
                .ok_or_else(|| Error::Lookup(format!("vehicle `{id}` not in report")))?
                .averages
                .ds;
        }
        Ok(s / ids.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_COLUMNS);
        out.push('\n');
        for r in &self.results {
            let infractions: Vec<&str> = r
                .events
                .iter()
                .filter(|e| e.kind.is_infraction())
                .map(|e| e.kind.name())
                .collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.vehicle_id,
                r.route_id,
                r.unseen,
                r.l_complete,
                r.l_total,
                r.rc,
                r.is,
                r.ds,
                r.termination,
                infractions.join(";"),
                r.ticks
            );
        }
        out
    }

    /// Self-contained bar chart of per-vehicle DS and RC (x100).
    pub fn to_svg(&self) -> String {
        let bar_w = 18.0;
        let group_w = 2.0 * bar_w + 16.0;
        let (left, top, h) = (50.0, 40.0, 200.0);
        let width = left + group_w * self.vehicles.len() as f64 + 20.0;
        let height = top + h + 90.0;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{left}" y="20" font-size="14">{} : avg DS {:.2}, RC {:.2}, IS {:.3}</text>"#,
            escape(&self.variant),
            100.0 * self.overall.ds,
            100.0 * self.overall.rc,
            self.overall.is
        );
        for tick in 0..=4 {
            let y = top + h - h * tick as f64 / 4.0;
            let _ = writeln!(
                s,
                r##"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{}</text>"##,
                width - 20.0,
                left - 4.0,
                y + 4.0,
                tick * 25
            );
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            let x0 = left + 8.0 + group_w * i as f64;
            for (j, (val, color)) in [(v.averages.ds, "#3b6ea5"), (v.averages.rc, "#a5a5a5")].iter().enumerate() {
                let bh = h * val.clamp(0.0, 1.0);
                let _ = writeln!(
                    s,
                    r#"<rect x="{}" y="{}" width="{bar_w}" height="{bh}" fill="{color}"/>"#,
                    x0 + j as f64 * bar_w,
                    top + h - bh
                );
            }
            let label = if v.unseen { format!("{}*", v.vehicle_id) } else { v.vehicle_id.clone() };
            let (lx, ly) = (x0 + bar_w, top + h + 12.0);
            let _ = writeln!(
                s,
                r#"<text x="{lx}" y="{ly}" transform="rotate(40 {lx} {ly})">{}</text>"#,
                escape(&label)
            );
        }
        let ly = height - 10.0;
        let _ = writeln!(
            s,
            r##"<rect x="{left}" y="{}" width="10" height="10" fill="#3b6ea5"/><text x="{}" y="{ly}">DS</text><rect x="{}" y="{}" width="10" height="10" fill="#a5a5a5"/><text x="{}" y="{ly}">RC</text><text x="{}" y="{ly}">* unseen</text>"##,
            ly - 9.0,
            left + 14.0,
            left + 44.0,
            ly - 9.0,
            left + 58.0,
            left + 90.0
        );
        s.push_str("</svg>\n");
        s
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Writes `<stem>.json`, `<stem>.csv` and `<stem>.svg` into `dir`.
    pub fn write_all(&self, dir: &Path, stem: &str) -> Result<()> {
        self.save_json(&dir.join(format!("{stem}.json")))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let svg = dir.join(format!("{stem}.svg"));
        std::fs::write(&svg, self.to_svg()).map_err(|e| Error::io(&svg, e))
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One row per report: variant, DS and RC (x100) and IS.
pub fn comparison_table(reports: &[BenchmarkReport]) -> String {
    let mut out = String::from("variant,ds,rc,is,episodes\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{:.2},{:.2},{:.4},{}",
            r.variant,
            100.0 * r.overall.ds,
            100.0 * r.overall.rc,
            r.overall.is,
            r.overall.episodes
        );
    }
    out
}

/// Grouped bar chart of overall DS per report.
pub fn comparison_svg(reports: &[BenchmarkReport]) -> String {
    let (left, top, h, bar) = (50.0, 30.0, 200.0, 60.0);
    let width = left + (bar + 20.0) * reports.len() as f64 + 20.0;
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}" font-family="sans-serif" font-size="11">"#,
        top + h + 40.0
    );
    s.push('\n');
    for (i, r) in reports.iter().enumerate() {
        let x = left + (bar + 20.0) * i as f64;
        let bh = h * r.overall.ds.clamp(0.0, 1.0);
        let _ = writeln!(
            s,
            r##"<rect x="{x}" y="{}" width="{bar}" height="{bh}" fill="#3b6ea5"/><text x="{}" y="{}" text-anchor="middle">{:.1}</text><text x="{}" y="{}" text-anchor="middle">{}</text>"##,
            top + h - bh,
            x + bar / 2.0,
            top + h - bh - 4.0,
            100.0 * r.overall.ds,
            x + bar / 2.0,
            top + h + 16.0,
            escape(&r.variant)
        );
    }
    s.push_str("</svg>\n");
    s
}
