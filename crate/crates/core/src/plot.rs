//! Static SVG bar charts of fitted components.
//!
//! Each component gets one figure: score bars on top, loading bars below,
//! and a CSV with exactly the plotted numbers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Result, XcanError};
use crate::io::format_float;
use crate::model::{scores, FactorModel};
use crate::pipeline::ComponentLimits;

const WIDTH: f64 = 900.0;
const PANEL_HEIGHT: f64 = 220.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const TITLE_HEIGHT: f64 = 40.0;
const LABEL_BAND: f64 = 60.0;
/// Beyond this many bars the tick labels are dropped.
const MAX_TICK_LABELS: usize = 80;

/// Numbers shown in one component figure.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentPanel {
    /// Zero-based component index.
    pub component: usize,
    pub scores: Vec<f64>,
    pub loadings: Vec<f64>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// Explained variance of the whole model, as a fraction.
    pub explained_variance: f64,
    /// Control limits drawn as horizontal lines on the score panel.
    pub limits: Option<(f64, f64)>,
}

impl ComponentPanel {
    /// One panel per component of `model`.
    pub fn from_model(
        model: &FactorModel,
        row_labels: &[String],
        col_labels: &[String],
        explained_variance: f64,
        limits: Option<&[ComponentLimits]>,
    ) -> Result<Vec<ComponentPanel>> {
        if row_labels.len() != model.n_obs() {
            return Err(XcanError::dims(
                "row labels",
                model.n_obs(),
                row_labels.len(),
            ));
        }
        if col_labels.len() != model.n_vars() {
            return Err(XcanError::dims(
                "column labels",
                model.n_vars(),
                col_labels.len(),
            ));
        }
        if let Some(l) = limits {
            if l.len() != model.n_components() {
                return Err(XcanError::dims(
                    "control limits",
                    model.n_components(),
                    l.len(),
                ));
            }
        }
        let t = scores(model);
        Ok((0..model.n_components())
            .map(|h| ComponentPanel {
                component: h,
                scores: t.column(h).iter().copied().collect(),
                loadings: model.p.column(h).iter().copied().collect(),
                row_labels: row_labels.to_vec(),
                col_labels: col_labels.to_vec(),
                explained_variance,
                limits: limits.map(|l| (l[h].lo, l[h].hi)),
            })
            .collect())
    }

    pub fn title(&self) -> String {
        format!(
            "Component {}, explained variance {:.1}%",
            self.component + 1,
            100.0 * self.explained_variance
        )
    }

    /// `kind,label,value` rows for the score and loading bars.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,label,value\n");
        let rows = self
            .row_labels
            .iter()
            .zip(&self.scores)
            .map(|(l, v)| ("score", l, v));
        let cols = self
            .col_labels
            .iter()
            .zip(&self.loadings)
            .map(|(l, v)| ("loading", l, v));
        for (kind, label, v) in rows.chain(cols) {
            let _ = writeln!(out, "{kind},{},{}", csv_field(label), format_float(*v));
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let height = TITLE_HEIGHT + 2.0 * (PANEL_HEIGHT + LABEL_BAND);
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            xml_escape(&self.title())
        );
        let extra: Vec<f64> = self.limits.map(|(lo, hi)| vec![lo, hi]).unwrap_or_default();
        bar_panel(
            &mut svg,
            TITLE_HEIGHT,
            "Scores",
            &self.scores,
            &self.row_labels,
            &extra,
            self.limits,
        );
        bar_panel(
            &mut svg,
            TITLE_HEIGHT + PANEL_HEIGHT + LABEL_BAND,
            "Loadings",
            &self.loadings,
            &self.col_labels,
            &[],
            None,
        );
        svg.push_str("</svg>\n");
        svg
    }
}

fn bar_panel(
    svg: &mut String,
    top: f64,
    name: &str,
    values: &[f64],
    labels: &[String],
    extra: &[f64],
    limits: Option<(f64, f64)>,
) {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let (y0, y1) = (top + 10.0, top + PANEL_HEIGHT - 10.0);
    let mut lo = values.iter().chain(extra).copied().fold(0.0, f64::min);
    let mut hi = values.iter().chain(extra).copied().fold(0.0, f64::max);
    if hi - lo <= 0.0 {
        lo = -1.0;
        hi = 1.0;
    }
    let y_of = |v: f64| y1 - (v - lo) / (hi - lo) * (y1 - y0);
    let zero = y_of(0.0);

    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{name}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    for v in [lo, 0.0, hi] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            MARGIN_LEFT - 6.0,
            y_of(v),
            tick(v)
        );
    }
    let _ = writeln!(
        svg,
        r##"<line x1="{MARGIN_LEFT}" y1="{y0}" x2="{MARGIN_LEFT}" y2="{y1}" stroke="#444"/>"##
    );

    let n = values.len().max(1);
    let slot = plot_w / n as f64;
    for (i, &v) in values.iter().enumerate() {
        let x = MARGIN_LEFT + i as f64 * slot + 0.15 * slot;
        let (ya, yb) = if v >= 0.0 {
            (y_of(v), zero)
        } else {
            (zero, y_of(v))
        };
        let fill = if v >= 0.0 { "#3b6ea5" } else { "#c0504d" };
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.2}" y="{ya:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
            0.7 * slot,
            yb - ya
        );
        if values.len() <= MAX_TICK_LABELS {
            let cx = x + 0.35 * slot;
            let ly = y1 + 8.0;
            let _ = writeln!(
                svg,
                r#"<text x="{cx:.2}" y="{ly:.2}" transform="rotate(60 {cx:.2} {ly:.2})" font-size="9">{}</text>"#,
                xml_escape(&labels[i])
            );
        }
    }
    let _ = writeln!(
        svg,
        r##"<line x1="{MARGIN_LEFT}" y1="{zero:.2}" x2="{}" y2="{zero:.2}" stroke="#444"/>"##,
        WIDTH - MARGIN_RIGHT
    );
    if let Some((l, h)) = limits {
        for v in [l, h] {
            let _ = writeln!(
                svg,
                r##"<line x1="{MARGIN_LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#d62728" stroke-dasharray="6 4"/>"##,
                WIDTH - MARGIN_RIGHT,
                y = y_of(v)
            );
        }
    }
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1e3 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes `component_<h>.svg` and `component_<h>.csv` (1-based) for every
/// panel and returns the written paths.
pub fn write_panels(dir: impl AsRef<Path>, panels: &[ComponentPanel]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| XcanError::io(dir, e))?;
    let mut written = Vec::with_capacity(2 * panels.len());
    for p in panels {
        let stem = format!("component_{}", p.component + 1);
        for (ext, body) in [("svg", p.to_svg()), ("csv", p.to_csv())] {
            let path = dir.join(format!("{stem}.{ext}"));
            fs::write(&path, body).map_err(|e| XcanError::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn labels(prefix: &str, n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn zero_component_draws_flat_bars() {
        let m = FactorModel::zeros(4, 3, 1, false);
        let panels =
            ComponentPanel::from_model(&m, &labels("o", 4), &labels("v", 3), 0.0, None).unwrap();
        let svg = panels[0].to_svg();
        assert!(svg.contains(r#"height="0.00""#));
        assert!(panels[0]
            .to_csv()
            .lines()
            .skip(1)
            .all(|l| l.ends_with("0.0000000000000000e0")));
    }

    #[test]
    fn csv_holds_scores_and_loadings() {
        let m = FactorModel::new(
            DMatrix::from_row_slice(2, 1, &[0.6, 0.8]),
            DVector::from_vec(vec![2.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            None,
        )
        .unwrap();
        let p = &ComponentPanel::from_model(
            &m,
            &labels("o", 2),
            &["a,b".into(), "c".into()],
            0.5,
            None,
        )
        .unwrap()[0];
        assert_eq!(p.scores, vec![1.2, 1.6]);
        let csv = p.to_csv();
        assert!(csv.contains("loading,\"a,b\",1.0000000000000000e0"));
        assert!(p.title().contains("50.0%"));
    }

    #[test]
    fn limit_lines_are_drawn() {
        let m = FactorModel::new(
            DMatrix::from_row_slice(2, 1, &[0.6, 0.8]),
            DVector::from_vec(vec![1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            None,
        )
        .unwrap();
        let lim = ComponentLimits {
            component: 0,
            lo: -3.0,
            hi: 3.0,
            flagged: vec![],
        };
        let p =
            &ComponentPanel::from_model(&m, &labels("o", 2), &labels("v", 1), 1.0, Some(&[lim]))
                .unwrap()[0];
        assert_eq!(p.to_svg().matches("stroke-dasharray").count(), 2);
    }
}
