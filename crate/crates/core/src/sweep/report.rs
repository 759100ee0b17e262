use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use super::store::{file_stem, write_atomic};
use super::svg::{line_chart, Series};
use super::{CellStatus, SweepResult};
use crate::cdr::TowerRegistry;
use crate::error::{Error, Result};
use crate::synth::write_accuracy;
use crate::windows::DurationClass;

pub const REPORT_FILES: [&str; 6] = [
    "metrics.csv",
    "correlation_over_time.csv",
    "duration_sensitivity.csv",
    "criteria_sensitivity.csv",
    "decile_summary.csv",
    "accuracy.csv",
];

fn num(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Sweep(e.to_string()))
}

fn strings(fields: &[&str]) -> Vec<String> {
    fields.iter().map(|s| s.to_string()).collect()
}

/// Writes every report under `out_dir` and returns their paths relative to it.
/// An empty grid yields header-only tables.
pub fn emit_reports(result: &SweepResult, registry: &TowerRegistry, out_dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
        write_atomic(&out_dir.join(&name), &bytes)?;
        written.push(name);
        Ok(())
    };
    let pearson = |c: &super::CellResult| c.metrics.as_ref().and_then(|m| m.pearson_r.ok());

    let rows: Vec<Vec<String>> = result
        .cells
        .iter()
        .map(|c| {
            let m = c.metrics.as_ref();
            let counts = c.counts.as_ref();
            vec![
                c.hda.clone(),
                c.window.label.clone(),
                c.window.class.to_string(),
                c.window.first_day.to_string(),
                c.window.last_day.to_string(),
                c.status.tag(),
                num(pearson(c)),
                num(m.and_then(|m| m.pearson_r_all.ok())),
                m.and_then(|m| m.pearson_r.err()).map(|e| e.tag().to_string()).unwrap_or_default(),
                m.map(|m| m.n_towers_used.to_string()).unwrap_or_default(),
                m.map(|m| m.excluded_towers.to_string()).unwrap_or_default(),
                counts.map(|c| c.users_active.to_string()).unwrap_or_default(),
                counts.map(|c| c.users_assigned.to_string()).unwrap_or_default(),
                counts.map(|c| c.ties.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    put(
        "metrics.csv".into(),
        csv_bytes(
            &strings(&[
                "hda",
                "window",
                "class",
                "first_day",
                "last_day",
                "status",
                "pearson_r",
                "pearson_r_all",
                "undefined_reason",
                "n_towers_used",
                "excluded_towers",
                "users_active",
                "users_assigned",
                "ties",
            ]),
            &rows,
        )?,
    )?;

    let rows: Vec<Vec<String>> = result
        .cells
        .iter()
        .map(|c| {
            vec![
                c.hda.clone(),
                c.window.label.clone(),
                c.window.class.to_string(),
                c.window.midpoint().to_string(),
                num(pearson(c)),
                c.status.tag(),
            ]
        })
        .collect();
    put(
        "correlation_over_time.csv".into(),
        csv_bytes(&strings(&["hda", "window", "class", "midpoint", "pearson_r", "status"]), &rows)?,
    )?;

    let mut by_class: Vec<&super::CellResult> = result.cells.iter().collect();
    // stable: keeps configured hda and window order within each class
    by_class.sort_by_key(|c| {
        (
            result.hdas.iter().position(|h| *h == c.hda),
            c.window.class,
        )
    });
    let rows: Vec<Vec<String>> = by_class
        .iter()
        .map(|c| {
            vec![
                c.hda.clone(),
                c.window.class.to_string(),
                c.window.label.clone(),
                c.window.first_day.to_string(),
                c.window.last_day.to_string(),
                c.window.midpoint().to_string(),
                num(pearson(c)),
            ]
        })
        .collect();
    put(
        "duration_sensitivity.csv".into(),
        csv_bytes(
            &strings(&["hda", "class", "window", "first_day", "last_day", "midpoint", "pearson_r"]),
            &rows,
        )?,
    )?;

    let mut header = strings(&["window", "class", "midpoint"]);
    header.extend(result.hdas.iter().cloned());
    let rows: Vec<Vec<String>> = result
        .windows
        .iter()
        .map(|w| {
            let mut row = vec![w.label.clone(), w.class.to_string(), w.midpoint().to_string()];
            for h in &result.hdas {
                row.push(num(result.cell(h, &w.label).and_then(pearson)));
            }
            row
        })
        .collect();
    put("criteria_sensitivity.csv".into(), csv_bytes(&header, &rows)?)?;

    let mut rows = Vec::new();
    for c in &result.cells {
        if let Some(m) = &c.metrics {
            for b in &m.deciles.bins {
                rows.push(vec![
                    c.hda.clone(),
                    c.window.label.clone(),
                    b.decile.to_string(),
                    b.count.to_string(),
                    num(b.y_min),
                    num(b.y_max),
                    num(b.mean_x),
                    num(b.std_x),
                    m.deciles.sparse.to_string(),
                ]);
            }
        }
    }
    put(
        "decile_summary.csv".into(),
        csv_bytes(
            &strings(&["hda", "window", "decile", "count", "y_min", "y_max", "mean_x", "std_x", "sparse"]),
            &rows,
        )?,
    )?;

    let accuracy: Vec<_> = result.cells.iter().filter_map(|c| c.accuracy.clone()).collect();
    let mut bytes = Vec::new();
    write_accuracy(&accuracy, &mut bytes)?;
    put("accuracy.csv".into(), bytes)?;

    for sub in ["towers", "charts"] {
        let dir = out_dir.join(sub);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for c in &result.cells {
        let Some(m) = &c.metrics else { continue };
        let counts = c.counts.as_ref().expect("finished cell has counts");
        let rows: Vec<Vec<String>> = registry
            .towers()
            .iter()
            .zip(&counts.x)
            .zip(&m.logratio)
            .map(|((t, x), lr)| {
                vec![
                    t.id.to_string(),
                    t.lon.to_string(),
                    t.lat.to_string(),
                    x.to_string(),
                    t.population.to_string(),
                    lr.to_string(),
                ]
            })
            .collect();
        put(
            format!("towers/{}.csv", file_stem(&c.hda, &c.window.label)),
            csv_bytes(&strings(&["tower_id", "lon", "lat", "x", "y", "logratio"]), &rows)?,
        )?;
    }

    let classes: BTreeSet<DurationClass> = result.windows.iter().map(|w| w.class).collect();
    for class in classes {
        let series: Vec<Series> = result
            .hdas
            .iter()
            .map(|h| Series {
                name: h.clone(),
                points: result
                    .cells
                    .iter()
                    .filter(|c| &c.hda == h && c.window.class == class)
                    .map(|c| {
                        let v = if c.status == CellStatus::Done { pearson(c) } else { None };
                        (c.window.midpoint(), v)
                    })
                    .collect(),
            })
            .collect();
        let svg = line_chart(&format!("Correlation over time, {class} windows"), &series);
        put(format!("charts/correlation_{class}.svg"), svg.into_bytes())?;
    }
    Ok(written)
}
