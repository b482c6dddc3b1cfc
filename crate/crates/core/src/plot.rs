//! SVG figures: score curves per policy and per-episode trajectory heatmaps.
//!
//! Rendering only reads CSV files. [`emit_plots`] first writes those CSVs
//! from the results directory and then draws from them, so a figure can be
//! regenerated from its CSV alone.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::agents::PolicyKind;
use crate::error::{Error, Result};
use crate::experiment::{aggregate, read_metrics, trace_path, write_atomic, Table, TABLES_DIR};
use crate::game::{Game, GameTrace};

pub const PLOTS_DIR: &str = "plots";

const PRIOR_COLOR: &str = "#800080";
const SERIES_COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];
const VIRIDIS: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

fn colormap(v: f64, lo: f64, hi: f64) -> String {
    let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
    let pos = t * (VIRIDIS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(VIRIDIS.len() - 2);
    let f = pos - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    let mix = |x: f64, y: f64| (x + (y - x) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// One point of a score curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub series: String,
    pub round: usize,
    pub mean: f64,
    pub sd: f64,
}

pub fn read_score_curves(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = || Error::MalformedTrace(format!("bad score curve row in {}", path.display()));
        out.push(CurvePoint {
            series: field(0).to_string(),
            round: field(1).parse().map_err(|_| bad())?,
            mean: field(2).parse().map_err(|_| bad())?,
            sd: field(3).parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Line chart of mean score against round, one line per series.
pub fn score_curves_svg(points: &[CurvePoint]) -> String {
    let (w, h) = (720.0, 420.0);
    let (left, right, top, bottom) = (56.0, 170.0, 24.0, 48.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let t_max = points.iter().map(|p| p.round).max().unwrap_or(1).max(2);
    let sx = |t: usize| left + (t as f64 - 1.0) / (t_max as f64 - 1.0) * pw;
    let sy = |v: f64| top + (1.0 - v.clamp(0.0, 100.0) / 100.0) * ph;

    let mut series: Vec<&str> = Vec::new();
    for p in points {
        if !series.contains(&p.series.as_str()) {
            series.push(&p.series);
        }
    }

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for k in 0..=5 {
        let v = k as f64 * 20.0;
        let y = sy(v);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v}</text>"#, left - 6.0, y + 4.0);
    }
    for t in 1..=t_max {
        if t == 1 || t % 5 == 0 {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{t}</text>"#, sx(t), top + ph + 18.0);
        }
    }
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">round</text>"#, left + pw / 2.0, h - 10.0);
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">optimization score</text>"#,
        top + ph / 2.0
    );
    for (k, name) in series.iter().enumerate() {
        let color = SERIES_COLORS[k % SERIES_COLORS.len()];
        let coords: Vec<String> = points
            .iter()
            .filter(|p| p.series == *name)
            .map(|p| format!("{:.1},{:.1}", sx(p.round), sy(p.mean)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, coords.join(" "));
        let ly = top + 14.0 + 20.0 * k as f64;
        let lx = left + pw + 14.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 22.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{name}</text>"#, lx + 28.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Per-cell fields of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldRow {
    pub ix: usize,
    pub iy: usize,
    pub truth: f64,
    pub ai_mean: f64,
    pub user_mean: Option<f64>,
}

/// A marked point of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct PointRow {
    /// `ai_prior`, `user_prior` or `query`.
    pub kind: String,
    pub order: usize,
    pub ix: usize,
    pub iy: usize,
    pub z: f64,
}

/// Rebuilds the final beliefs of a trace by replaying its rounds.
pub fn trajectory_data(trace: &GameTrace) -> Result<(Vec<FieldRow>, Vec<PointRow>)> {
    let mut cfg = trace.config.clone();
    cfg.entropy_samples = 0;
    let mut game = Game::new(cfg, trace.partner)?;
    for r in &trace.rounds {
        game.replay_round(r.ix, r.iy, r.z)?;
    }
    let grid = game.grid();
    let ai = game.ai_belief().mean_field();
    let user = game.user_state().map(|u| u.belief.mean_field());
    let truth = game.objective().values();
    let fields = (0..grid.len())
        .map(|c| {
            let (ix, iy) = grid.cell(c);
            FieldRow {
                ix,
                iy,
                truth: truth[c],
                ai_mean: ai[c],
                user_mean: user.map(|u| u[c]),
            }
        })
        .collect();
    let mut points = Vec::new();
    for (kind, set) in [("ai_prior", &trace.ai_prior), ("user_prior", &trace.user_prior)] {
        for (k, o) in set.iter().enumerate() {
            points.push(PointRow {
                kind: kind.into(),
                order: k,
                ix: o.ix,
                iy: o.iy,
                z: o.z,
            });
        }
    }
    for (k, r) in trace.rounds.iter().enumerate() {
        points.push(PointRow {
            kind: "query".into(),
            order: k + 1,
            ix: r.ix,
            iy: r.iy,
            z: r.z,
        });
    }
    Ok((fields, points))
}

pub fn write_trajectory_csvs(fields: &[FieldRow], points: &[PointRow], fields_path: &Path, points_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["ix", "iy", "truth", "ai_mean", "user_mean"])?;
    for f in fields {
        w.write_record([
            f.ix.to_string(),
            f.iy.to_string(),
            format!("{:.6}", f.truth),
            format!("{:.6}", f.ai_mean),
            f.user_mean.map(|v| format!("{v:.6}")).unwrap_or_default(),
        ])?;
    }
    write_atomic(fields_path, &w.into_inner().map_err(|e| Error::Config(e.to_string()))?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["kind", "order", "ix", "iy", "z"])?;
    for p in points {
        w.write_record([p.kind.clone(), p.order.to_string(), p.ix.to_string(), p.iy.to_string(), format!("{:.6}", p.z)])?;
    }
    write_atomic(points_path, &w.into_inner().map_err(|e| Error::Config(e.to_string()))?)
}

pub fn read_trajectory_csvs(fields_path: &Path, points_path: &Path) -> Result<(Vec<FieldRow>, Vec<PointRow>)> {
    let bad = |p: &Path| Error::MalformedTrace(format!("bad row in {}", p.display()));
    let mut fields = Vec::new();
    for rec in csv::Reader::from_path(fields_path)?.records() {
        let rec = rec?;
        let g = |i: usize| rec.get(i).unwrap_or("");
        let user = g(4);
        fields.push(FieldRow {
            ix: g(0).parse().map_err(|_| bad(fields_path))?,
            iy: g(1).parse().map_err(|_| bad(fields_path))?,
            truth: g(2).parse().map_err(|_| bad(fields_path))?,
            ai_mean: g(3).parse().map_err(|_| bad(fields_path))?,
            user_mean: if user.is_empty() {
                None
            } else {
                Some(user.parse().map_err(|_| bad(fields_path))?)
            },
        });
    }
    let mut points = Vec::new();
    for rec in csv::Reader::from_path(points_path)?.records() {
        let rec = rec?;
        let g = |i: usize| rec.get(i).unwrap_or("");
        points.push(PointRow {
            kind: g(0).to_string(),
            order: g(1).parse().map_err(|_| bad(points_path))?,
            ix: g(2).parse().map_err(|_| bad(points_path))?,
            iy: g(3).parse().map_err(|_| bad(points_path))?,
            z: g(4).parse().map_err(|_| bad(points_path))?,
        });
    }
    Ok((fields, points))
}

/// Heatmap panels of the true function and the final mean fields with the
/// query path overlaid. Prior observations are drawn in purple.
pub fn trajectory_svg(title: &str, fields: &[FieldRow], points: &[PointRow]) -> String {
    const CELL: f64 = 6.0;
    const GAP: f64 = 28.0;
    let nx = fields.iter().map(|f| f.ix + 1).max().unwrap_or(1);
    let ny = fields.iter().map(|f| f.iy + 1).max().unwrap_or(1);
    let has_user = fields.iter().all(|f| f.user_mean.is_some()) && !fields.is_empty();
    let mut panels: Vec<(&str, Box<dyn Fn(&FieldRow) -> f64>, &[&str])> = vec![
        ("true function", Box::new(|f: &FieldRow| f.truth), &["ai_prior", "user_prior"]),
        ("AI final mean", Box::new(|f: &FieldRow| f.ai_mean), &["ai_prior"]),
    ];
    if has_user {
        panels.push(("user final mean", Box::new(|f: &FieldRow| f.user_mean.unwrap_or(f64::NAN)), &["user_prior"]));
    }
    let pw = nx as f64 * CELL;
    let ph = ny as f64 * CELL;
    let top = 44.0;
    let w = GAP + panels.len() as f64 * (pw + GAP);
    let h = top + ph + 40.0;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{GAP}" y="18" font-size="14">{}</text>"#, escape(title));
    let queries: Vec<&PointRow> = points.iter().filter(|p| p.kind == "query").collect();
    for (k, (name, value, prior_kinds)) in panels.iter().enumerate() {
        let x0 = GAP + k as f64 * (pw + GAP);
        let px = |ix: usize| x0 + (ix as f64 + 0.5) * CELL;
        let py = |iy: usize| top + (ny as f64 - iy as f64 - 0.5) * CELL;
        let _ = writeln!(s, r#"<text x="{x0}" y="{}">{name}</text>"#, top - 8.0);
        let _ = writeln!(s, "<g shape-rendering=\"crispEdges\">");
        for f in fields {
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{CELL}" height="{CELL}" fill="{}"/>"#,
                x0 + f.ix as f64 * CELL,
                top + (ny - 1 - f.iy) as f64 * CELL,
                colormap(value(f), 0.0, 100.0)
            );
        }
        s.push_str("</g>\n");
        if !queries.is_empty() {
            let path: Vec<String> = queries.iter().map(|q| format!("{:.1},{:.1}", px(q.ix), py(q.iy))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="white" stroke-opacity="0.7" stroke-width="1"/>"#,
                path.join(" ")
            );
        }
        for q in &queries {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="2.6" fill="white" stroke="black" stroke-width="0.8"><title>round {}: z = {:.2}</title></circle>"#,
                px(q.ix),
                py(q.iy),
                q.order,
                q.z
            );
        }
        for p in points.iter().filter(|p| prior_kinds.contains(&p.kind.as_str())) {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3.2" fill="{PRIOR_COLOR}" stroke="white" stroke-width="0.8"><title>{} z = {:.2}</title></circle>"#,
                px(p.ix),
                py(p.iy),
                p.kind,
                p.z
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{GAP}" y="{}">purple: prior observations; white: queries in round order; color scale 0 to 100</text>"#,
        h - 12.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Episodes drawn when none are requested: the first episode of each policy.
fn default_cells(dir: &Path) -> Result<Vec<String>> {
    let rows = read_metrics(dir)?;
    Ok(PolicyKind::ALL
        .into_iter()
        .filter_map(|p| rows.iter().find(|r| r.policy == p).map(|r| r.id.clone()))
        .collect())
}

/// Writes the score-curve figure and one trajectory figure per requested
/// episode (or per policy when `cells` is empty) under `plots/`, and returns
/// the SVG paths.
pub fn emit_plots(dir: &Path, cells: &[String]) -> Result<Vec<PathBuf>> {
    let out = dir.join(PLOTS_DIR);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut written = Vec::new();

    aggregate(dir, Table::ScoreCurves)?;
    let curves_csv = dir.join(TABLES_DIR).join("score_curves.csv");
    let svg = score_curves_svg(&read_score_curves(&curves_csv)?);
    let path = out.join("score_curves.svg");
    write_atomic(&path, svg.as_bytes())?;
    written.push(path);

    let cells = if cells.is_empty() { default_cells(dir)? } else { cells.to_vec() };
    for id in cells {
        let tp = trace_path(dir, &id);
        let text = fs::read_to_string(&tp).map_err(|e| Error::io(&tp, e))?;
        let trace: GameTrace = serde_json::from_str(&text)?;
        let (fields, points) = trajectory_data(&trace)?;
        let fields_path = out.join(format!("{id}_fields.csv"));
        let points_path = out.join(format!("{id}_points.csv"));
        write_trajectory_csvs(&fields, &points, &fields_path, &points_path)?;
        let (fields, points) = read_trajectory_csvs(&fields_path, &points_path)?;
        let path = out.join(format!("{id}.svg"));
        write_atomic(&path, trajectory_svg(&id, &fields, &points).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Redraws every figure under `plots/` from the CSVs already stored there.
pub fn render_from_csv(dir: &Path) -> Result<Vec<PathBuf>> {
    let out = dir.join(PLOTS_DIR);
    let mut written = Vec::new();
    let curves_csv = dir.join(TABLES_DIR).join("score_curves.csv");
    if curves_csv.exists() {
        let path = out.join("score_curves.svg");
        write_atomic(&path, score_curves_svg(&read_score_curves(&curves_csv)?).as_bytes())?;
        written.push(path);
    }
    let mut ids: Vec<String> = fs::read_dir(&out)
        .map_err(|e| Error::io(&out, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix("_fields.csv")).map(String::from))
        .collect();
    ids.sort();
    for id in ids {
        let (fields, points) = read_trajectory_csvs(&out.join(format!("{id}_fields.csv")), &out.join(format!("{id}_points.csv")))?;
        let path = out.join(format!("{id}.svg"));
        write_atomic(&path, trajectory_svg(&id, &fields, &points).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
