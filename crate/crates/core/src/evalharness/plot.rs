//! Raster map of an imputed salinity field with a colour-bar legend and
//! observations overlaid.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::experiment::Imputer;
use super::EvalError;
use crate::par::Exec;
use crate::tensorize::{DrifterRecord, TrajectorySet};

const MARGIN: u32 = 8;
const TOP: u32 = 18;
const BAR_W: u32 = 14;
const FONT_SCALE: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub nx: usize,
    pub ny: usize,
    /// Pixels per grid cell.
    pub cell_px: u32,
}

impl PlotSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.lat_min < self.lat_max && self.lon_min < self.lon_max && self.nx > 0 && self.ny > 0 && self.cell_px > 0)
        {
            return Err(EvalError::InvalidConfig("plot region must be non-empty".into()));
        }
        Ok(())
    }

    /// Cell centre of column `i`, row `j` (row 0 is the northern edge).
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        let lat = self.lat_max - (j as f64 + 0.5) * (self.lat_max - self.lat_min) / self.ny as f64;
        let lon = self.lon_min + (i as f64 + 0.5) * (self.lon_max - self.lon_min) / self.nx as f64;
        (lat, lon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSummary {
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub scale_min: f64,
    pub scale_max: f64,
    /// `[max label, min label]` as drawn on the legend.
    pub legend_labels: [String; 2],
}

pub fn legend_label(v: f64) -> String {
    format!("{v:.2}")
}

const VIRIDIS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

pub fn colour(t: f64) -> Rgb<u8> {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (VIRIDIS.len() - 1) as f64;
    let k = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - k as f64;
    let c = |i: usize| (VIRIDIS[k][i] + f * (VIRIDIS[k + 1][i] - VIRIDIS[k][i])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

fn glyph(c: char) -> Option<[&'static str; 5]> {
    Some(match c {
        '0' => ["###", "#.#", "#.#", "#.#", "###"],
        '1' => [".#.", "##.", ".#.", ".#.", "###"],
        '2' => ["###", "..#", "###", "#..", "###"],
        '3' => ["###", "..#", "###", "..#", "###"],
        '4' => ["#.#", "#.#", "###", "..#", "..#"],
        '5' => ["###", "#..", "###", "..#", "###"],
        '6' => ["###", "#..", "###", "#.#", "###"],
        '7' => ["###", "..#", "..#", "..#", "..#"],
        '8' => ["###", "#.#", "###", "#.#", "###"],
        '9' => ["###", "#.#", "###", "..#", "###"],
        '.' => ["...", "...", "...", "...", ".#."],
        '-' => ["...", "...", "###", "...", "..."],
        _ => return None,
    })
}

fn text_width(s: &str) -> u32 {
    s.chars().count() as u32 * 4 * FONT_SCALE
}

fn draw_text(img: &mut RgbImage, x: u32, y: u32, s: &str) {
    for (n, ch) in s.chars().enumerate() {
        let Some(rows) = glyph(ch) else { continue };
        for (r, row) in rows.iter().enumerate() {
            for (c, px) in row.chars().enumerate() {
                if px != '#' {
                    continue;
                }
                for dy in 0..FONT_SCALE {
                    for dx in 0..FONT_SCALE {
                        let px = x + (n as u32 * 4 + c as u32) * FONT_SCALE + dx;
                        let py = y + r as u32 * FONT_SCALE + dy;
                        if px < img.width() && py < img.height() {
                            img.put_pixel(px, py, Rgb([0, 0, 0]));
                        }
                    }
                }
            }
        }
    }
}

/// Render without writing; the summary's `path` is empty.
pub fn render_field_plot(
    model: &dyn Imputer,
    spec: &PlotSpec,
    time: DateTime<Utc>,
    covariates: &BTreeMap<String, f64>,
    observations: &[(f64, f64, f64)],
    exec: Exec,
) -> Result<(RgbImage, PlotSummary), EvalError> {
    spec.validate()?;
    let n = spec.nx * spec.ny;
    let width_digits = n.to_string().len();
    let records: Vec<DrifterRecord> = (0..n)
        .map(|k| {
            let (lat, lon) = spec.cell_center(k % spec.nx, k / spec.nx);
            DrifterRecord {
                trajectory_id: format!("g{k:0width_digits$}"),
                timestamp: time,
                lat,
                lon,
                salinity: None,
                covariates: covariates.clone(),
            }
        })
        .collect();
    let set = TrajectorySet::from_records(records);
    let values = model.impute(&set, exec)?;
    let mut field = vec![f64::NAN; n];
    for (r, v) in set.records.iter().zip(values) {
        let k: usize = r.trajectory_id[1..].parse().expect("grid id");
        field[k] = v;
    }
    if field.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::Model("non-finite imputed value".into()));
    }
    let inside: Vec<_> = observations
        .iter()
        .filter(|o| (spec.lat_min..=spec.lat_max).contains(&o.0) && (spec.lon_min..=spec.lon_max).contains(&o.1))
        .copied()
        .collect();
    let all = field.iter().copied().chain(inside.iter().map(|o| o.2));
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let norm = |v: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };

    let labels = [legend_label(hi), legend_label(lo)];
    let fw = spec.nx as u32 * spec.cell_px;
    let fh = spec.ny as u32 * spec.cell_px;
    let text_h = 5 * FONT_SCALE;
    let legend_w = BAR_W.max(labels.iter().map(|s| text_width(s)).max().unwrap_or(0));
    let width = MARGIN + fw + 2 * MARGIN + legend_w + MARGIN;
    let height = TOP + fh + text_h + 2 * MARGIN;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));

    for j in 0..spec.ny {
        for i in 0..spec.nx {
            let c = colour(norm(field[j * spec.nx + i]));
            for dy in 0..spec.cell_px {
                for dx in 0..spec.cell_px {
                    img.put_pixel(MARGIN + i as u32 * spec.cell_px + dx, TOP + j as u32 * spec.cell_px + dy, c);
                }
            }
        }
    }
    for o in &inside {
        let px = MARGIN as f64 + (o.1 - spec.lon_min) / (spec.lon_max - spec.lon_min) * fw as f64;
        let py = TOP as f64 + (spec.lat_max - o.0) / (spec.lat_max - spec.lat_min) * fh as f64;
        let (cx, cy) = (px.round() as i64, py.round() as i64);
        for dy in -2i64..=2 {
            for dx in -2i64..=2 {
                let (x, y) = (cx + dx, cy + dy);
                if x < MARGIN as i64 || y < TOP as i64 || x >= (MARGIN + fw) as i64 || y >= (TOP + fh) as i64 {
                    continue;
                }
                let edge = dx.abs() == 2 || dy.abs() == 2;
                let c = if edge { Rgb([0, 0, 0]) } else { colour(norm(o.2)) };
                img.put_pixel(x as u32, y as u32, c);
            }
        }
    }
    let bar_x = MARGIN + fw + 2 * MARGIN;
    for y in 0..fh {
        let t = 1.0 - y as f64 / (fh.max(2) - 1) as f64;
        for x in 0..BAR_W {
            img.put_pixel(bar_x + x, TOP + y, colour(t));
        }
    }
    draw_text(&mut img, bar_x, TOP - text_h - 3, &labels[0]);
    draw_text(&mut img, bar_x, TOP + fh + 3, &labels[1]);

    let summary = PlotSummary {
        path: PathBuf::new(),
        width,
        height,
        scale_min: lo,
        scale_max: hi,
        legend_labels: labels,
    };
    Ok((img, summary))
}

/// Render and save as PNG.
pub fn emit_field_plot(
    model: &dyn Imputer,
    spec: &PlotSpec,
    time: DateTime<Utc>,
    covariates: &BTreeMap<String, f64>,
    observations: &[(f64, f64, f64)],
    path: impl AsRef<Path>,
    exec: Exec,
) -> Result<PlotSummary, EvalError> {
    let (img, mut summary) = render_field_plot(model, spec, time, covariates, observations, exec)?;
    let path = path.as_ref();
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| EvalError::Plot(format!("{}: {e}", path.display())))?;
    summary.path = path.to_path_buf();
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{BaselineConfig, BaselineKind, BaselineModel};

    struct Plane;

    impl Imputer for Plane {
        fn impute(&self, set: &TrajectorySet, _: Exec) -> Result<Vec<f64>, EvalError> {
            Ok(set.records.iter().map(|r| 30.0 + r.lon - r.lat).collect())
        }
    }

    fn spec() -> PlotSpec {
        PlotSpec {
            lat_min: 0.0,
            lat_max: 1.0,
            lon_min: 0.0,
            lon_max: 2.0,
            nx: 20,
            ny: 10,
            cell_px: 4,
        }
    }

    #[test]
    fn writes_a_deterministic_png_with_matching_legend() {
        let dir = tempfile::tempdir().unwrap();
        let t = DateTime::parse_from_rfc3339("2016-06-16T12:00:00Z").unwrap().with_timezone(&Utc);
        let obs = [(0.5, 1.0, 28.0), (5.0, 5.0, 0.0)];
        let a = emit_field_plot(&Plane, &spec(), t, &BTreeMap::new(), &obs, dir.path().join("a.png"), Exec::Sequential)
            .unwrap();
        let b = emit_field_plot(&Plane, &spec(), t, &BTreeMap::new(), &obs, dir.path().join("b.png"), Exec::Parallel)
            .unwrap();
        let bytes = std::fs::read(&a.path).unwrap();
        assert!(!bytes.is_empty());
        assert_eq!(bytes, std::fs::read(&b.path).unwrap());
        // field spans 30 + lon − lat over cell centres; the observation lowers the minimum
        let (hi, lo) = (30.0 + 1.95 - 0.05, 28.0);
        assert!((a.scale_max - hi).abs() < 1e-12 && (a.scale_min - lo).abs() < 1e-12);
        assert_eq!(a.legend_labels, [legend_label(hi), legend_label(lo)]);
        let img = image::open(&a.path).unwrap().to_rgb8();
        assert_eq!((img.width(), img.height()), (a.width, a.height));
    }

    #[test]
    fn unfitted_model_is_rejected() {
        let m = BaselineModel::new(BaselineKind::Kriging, BaselineConfig::default());
        let err = render_field_plot(&m, &spec(), Utc::now(), &BTreeMap::new(), &[], Exec::Sequential).unwrap_err();
        assert_eq!(err, EvalError::Unfitted);
    }

    #[test]
    fn colour_map_endpoints() {
        assert_eq!(colour(0.0), Rgb([68, 1, 84]));
        assert_eq!(colour(1.0), Rgb([253, 231, 37]));
        assert_eq!(colour(f64::NAN), colour(0.0));
    }
}
