use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::run::{EVENTS, FLOWS, SETPOINTS, TRAJECTORY};
use crate::svg::{Chart, Marker, Series, PALETTE};
use crate::PlotArgs;

type Rows = Vec<BTreeMap<String, String>>;
type Curve = Vec<(f64, f64)>;

fn read_rows(path: &Path) -> Result<Rows> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.with_context(|| format!("parsing {}", path.display()))?;
        rows.push(headers.iter().zip(record.iter()).map(|(h, v)| (h.to_owned(), v.to_owned())).collect());
    }
    Ok(rows)
}

fn number(row: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>> {
    match row.get(key).map(String::as_str) {
        None => bail!("missing column `{key}`"),
        Some("") => Ok(None),
        Some(v) => Ok(Some(v.parse().with_context(|| format!("column `{key}`: {v:?} is not a number"))?)),
    }
}

fn text<'r>(row: &'r BTreeMap<String, String>, key: &str) -> Result<&'r str> {
    row.get(key).map(String::as_str).with_context(|| format!("missing column `{key}`"))
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn detections(events: &Rows) -> Result<Vec<Marker>> {
    events
        .iter()
        .map(|e| {
            Ok(Marker {
                x: number(e, "detected_at")?.unwrap_or(0.0),
                label: format!("overflow on {}", text(e, "line")?),
            })
        })
        .collect()
}

pub fn run(args: &PlotArgs) -> Result<()> {
    let dir = &args.dir;
    let setpoints_path = dir.join(SETPOINTS);
    if !setpoints_path.exists() {
        bail!("{} has no {SETPOINTS}; write results with `popdispatch run --out DIR` first", dir.display());
    }
    let out = args.out.as_deref().unwrap_or(dir);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    let mut save = |name: String, chart: &Chart| -> Result<()> {
        let path = out.join(&name);
        fs::write(&path, chart.render()).with_context(|| format!("writing {}", path.display()))?;
        written.push(name);
        Ok(())
    };

    let setpoints = read_rows(&setpoints_path)?;
    if setpoints.is_empty() {
        bail!("{} holds no rows", setpoints_path.display());
    }
    let mut by_gen: BTreeMap<String, (Curve, Curve)> = BTreeMap::new();
    let mut order = Vec::new();
    for row in &setpoints {
        let bus = text(row, "bus_id")?.to_owned();
        let minute = number(row, "minute")?.context("empty minute")?;
        if !by_gen.contains_key(&bus) {
            order.push(bus.clone());
        }
        let entry = by_gen.entry(bus).or_default();
        if let Some(p) = number(row, "setpoint_kw")? {
            entry.0.push((minute, p));
        }
        if let Some(q) = number(row, "oracle_kw")? {
            entry.1.push((minute, q));
        }
    }
    for (i, bus) in order.iter().enumerate() {
        let (dynamics, oracle) = &by_gen[bus];
        let mut chart = Chart::new(format!("Generator at bus {bus}"), "minute", "output (kW)");
        let color = PALETTE[i % PALETTE.len()];
        chart.series.push(Series { label: "dynamics".into(), points: dynamics.clone(), dashed: false, color });
        chart.series.push(Series { label: "oracle".into(), points: oracle.clone(), dashed: true, color });
        save(format!("generator_{}.svg", file_safe(bus)), &chart)?;
    }

    let events = if dir.join(EVENTS).exists() { read_rows(&dir.join(EVENTS))? } else { Vec::new() };
    let markers = detections(&events)?;
    let trajectory_path = dir.join(TRAJECTORY);
    let trajectory = if trajectory_path.exists() { Some(read_rows(&trajectory_path)?) } else { None };

    let flows_path = dir.join(FLOWS);
    if flows_path.exists() {
        let mut by_line: BTreeMap<String, (f64, Curve)> = BTreeMap::new();
        for row in read_rows(&flows_path)? {
            let limit = number(&row, "limit_kw")?.unwrap_or(f64::INFINITY);
            if !limit.is_finite() {
                continue;
            }
            let minute = number(&row, "minute")?.context("empty minute")?;
            let flow = number(&row, "flow_kw")?.context("empty flow")?;
            by_line.entry(text(&row, "line")?.to_owned()).or_insert((limit, Vec::new())).1.push((minute, flow.abs()));
        }
        for (line, (limit, points)) in by_line {
            let column = format!("flow_{line}");
            let (x_label, points, line_markers) = match &trajectory {
                Some(rows) if rows.first().is_some_and(|r| r.contains_key(&column)) => {
                    let pts = rows
                        .iter()
                        .map(|r| Ok((number(r, "iteration")?.unwrap_or(0.0), number(r, &column)?.unwrap_or(0.0).abs())))
                        .collect::<Result<Vec<_>>>()?;
                    let here: Vec<Marker> = markers.iter().filter(|m| m.label.ends_with(&line)).cloned().collect();
                    ("iteration", pts, here)
                }
                _ => ("minute", points, Vec::new()),
            };
            let (x0, x1) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
            let mut chart = Chart::new(format!("Line {line}"), x_label, "|flow| (kW)");
            chart.series.push(Series { label: "flow".into(), points, dashed: false, color: PALETTE[0] });
            chart.series.push(Series { label: "limit".into(), points: vec![(x0, limit), (x1, limit)], dashed: true, color: PALETTE[3] });
            chart.markers = line_markers;
            save(format!("line_{}.svg", file_safe(&line)), &chart)?;
        }
    }

    if let Some(rows) = &trajectory {
        let mut chart = Chart::new("Set points per iteration", "iteration", "output (kW)");
        let columns: Vec<String> = rows
            .first()
            .map(|r| r.keys().filter(|k| k.starts_with("p_")).cloned().collect())
            .unwrap_or_default();
        let mut columns = columns;
        // Keep generator order as written rather than alphabetical.
        let header_order: Vec<String> = order.iter().map(|b| format!("p_{b}")).collect();
        columns.sort_by_key(|c| header_order.iter().position(|h| h == c).unwrap_or(usize::MAX));
        for (i, col) in columns.iter().enumerate() {
            let points = rows
                .iter()
                .map(|r| Ok((number(r, "iteration")?.unwrap_or(0.0), number(r, col)?.unwrap_or(0.0))))
                .collect::<Result<Vec<_>>>()?;
            chart.series.push(Series {
                label: format!("bus {}", &col[2..]),
                points,
                dashed: false,
                color: PALETTE[i % PALETTE.len()],
            });
        }
        chart.markers = markers;
        save("trajectory.svg".to_owned(), &chart)?;
    }

    for name in &written {
        println!("{}", out.join(name).display());
    }
    Ok(())
}
