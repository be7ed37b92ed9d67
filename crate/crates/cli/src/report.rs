use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use ltsap::io::{read_dataset, read_json, write_atomic};

use crate::evaluate::{Aggregate, SapFile};
use crate::manifest::prepare_out_dir;
use crate::{Exit, Outcome};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedResult {
    pub name: String,
    pub path: PathBuf,
}

fn parse_result(s: &str) -> Result<NamedResult, String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => {
            Ok(NamedResult { name: name.into(), path: path.into() })
        }
        _ => Err("expected NAME=PATH".into()),
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// A `sap` report and the method name to show it under; repeatable.
    #[arg(long = "result", value_name = "NAME=PATH", value_parser = parse_result, required = true)]
    pub results: Vec<NamedResult>,
    /// Training dataset whose per-category counts are charted.
    #[arg(long)]
    pub counts: Option<PathBuf>,
    /// Directory for the tables and charts.
    #[arg(long)]
    pub out_dir: PathBuf,
}

const PALETTE: [&str; 8] = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f"];
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ =
        writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn axes(s: &mut String, y_label: &str, y_ticks: &[(f64, String)]) {
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN / 2.0, MARGIN);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for (frac, label) in y_ticks {
        let y = y0 - frac * (y0 - y1);
        let _ = writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#, x0 - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#, x0 - 6.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn unit_ticks() -> Vec<(f64, String)> {
    (0..=5).map(|i| (i as f64 / 5.0, format!("{:.1}", i as f64 / 5.0))).collect()
}

fn legend(s: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN + 14.0 * i as f64;
        let x = WIDTH - MARGIN - 110.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/>"#,
            y - 9.0,
            PALETTE[i % PALETTE.len()]
        );
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, x + 14.0, escape(name));
    }
}

/// Grouped bars; `values[g][s]` is series `s` in group `g`, each in [0, 1].
fn grouped_bars(title: &str, y_label: &str, groups: &[String], series: &[&str], values: &[Vec<Option<f64>>]) -> String {
    let mut s = svg_open(title);
    axes(&mut s, y_label, &unit_ticks());
    let plot_w = WIDTH - 1.5 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let group_w = plot_w / groups.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (g, name) in groups.iter().enumerate() {
        let gx = MARGIN + g as f64 * group_w + group_w * 0.1;
        for (k, v) in values[g].iter().enumerate() {
            if let Some(v) = v {
                let h = v.clamp(0.0, 1.0) * plot_h;
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                    gx + k as f64 * bar_w,
                    HEIGHT - MARGIN - h,
                    bar_w,
                    h,
                    PALETTE[k % PALETTE.len()]
                );
            }
        }
        if groups.len() <= 40 {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
                gx + group_w * 0.4,
                HEIGHT - MARGIN + 14.0,
                escape(name)
            );
        }
    }
    legend(&mut s, series);
    s.push_str("</svg>\n");
    s
}

fn scatter(title: &str, points: &[(usize, f64, f64)], names: &[&str]) -> String {
    let mut s = svg_open(title);
    axes(&mut s, "sampled AP", &unit_ticks());
    let (x0, y0) = (MARGIN, HEIGHT - MARGIN);
    let (w, h) = (WIDTH - 1.5 * MARGIN, HEIGHT - 2.0 * MARGIN);
    for (frac, label) in unit_ticks() {
        let x = x0 + frac * w;
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{label}</text>"#, y0 + 14.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">AP</text>"#, x0 + w / 2.0, HEIGHT - 12.0);
    let _ = writeln!(
        s,
        r##"<line x1="{x0}" y1="{y0}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
        x0 + w,
        y0 - h
    );
    for &(k, ap, sap) in points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.8"/>"#,
            x0 + ap.clamp(0.0, 1.0) * w,
            y0 - sap.clamp(0.0, 1.0) * h,
            PALETTE[k % PALETTE.len()]
        );
    }
    legend(&mut s, names);
    s.push_str("</svg>\n");
    s
}

fn counts_chart(counts: &[usize]) -> String {
    let mut s = svg_open("Positives per category");
    let max = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    let top = max.log10().ceil().max(1.0);
    let ticks: Vec<(f64, String)> = (0..=top as u32).map(|e| (e as f64 / top, format!("{}", 10u64.pow(e)))).collect();
    axes(&mut s, "count (log scale)", &ticks);
    let plot_w = WIDTH - 1.5 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let bar_w = plot_w / counts.len().max(1) as f64;
    for (i, &n) in counts.iter().enumerate() {
        let h = if n == 0 { 0.0 } else { (n as f64).log10().max(0.0) / top * plot_h };
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>category {i}: {n}</title></rect>"#,
            MARGIN + i as f64 * bar_w,
            HEIGHT - MARGIN - h,
            (bar_w * 0.9).max(0.5),
            h,
            PALETTE[0]
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{}" text-anchor="middle">category</text>"#,
        MARGIN + plot_w / 2.0,
        HEIGHT - MARGIN + 16.0
    );
    s.push_str("</svg>\n");
    s
}

pub fn run(args: &ReportArgs) -> anyhow::Result<Outcome> {
    let mut seen = std::collections::BTreeSet::new();
    for r in &args.results {
        if !seen.insert(&r.name) {
            return Err(Exit::config(format!("--result name {} given twice", r.name)));
        }
    }
    let mut inputs = Vec::new();
    let mut files = Vec::new();
    for r in &args.results {
        let file: SapFile = read_json(&r.path)?;
        inputs.push(r.path.clone());
        files.push((r.name.as_str(), file));
    }
    let names: Vec<&str> = files.iter().map(|(n, _)| *n).collect();

    let mut summary = String::from("group,method,msap,map,eligible_categories\n");
    let mut bars: Vec<Vec<Option<f64>>> = vec![Vec::new(); 3];
    let group_names = ["all", "tail", "head"];
    for (name, file) in &files {
        let rows: [Option<&Aggregate>; 3] = match &file.groups {
            Some(g) => [Some(&g.all), Some(&g.tail), Some(&g.head)],
            None => [Some(&file.aggregate), None, None],
        };
        for (i, agg) in rows.iter().enumerate() {
            if let Some(a) = agg {
                writeln!(
                    summary,
                    "{},{},{},{},{}",
                    group_names[i],
                    name,
                    fmt_opt(a.msap),
                    fmt_opt(a.map),
                    a.eligible_categories
                )?;
            }
            bars[i].push(agg.and_then(|a| a.msap));
        }
    }

    let mut per_category = String::from("method,category,n_pos,n_neg,ap,sap_mean,sap_std,head\n");
    let mut points = Vec::new();
    for (k, (name, file)) in files.iter().enumerate() {
        for r in &file.per_category {
            writeln!(
                per_category,
                "{},{},{},{},{},{},{},{}",
                name,
                r.category.0,
                r.n_pos,
                r.n_neg,
                fmt_opt(r.ap),
                fmt_opt(r.sap_mean),
                fmt_opt(r.sap_std),
                r.head.map(|h| h.to_string()).unwrap_or_default()
            )?;
            if let (Some(ap), Some(sap)) = (r.ap, r.sap_mean) {
                points.push((k, ap, sap));
            }
        }
    }

    let groups: Vec<String> = group_names.iter().map(|s| s.to_string()).collect();
    let mut outputs: BTreeMap<&str, String> = BTreeMap::new();
    outputs.insert("summary.csv", summary);
    outputs.insert("per_category.csv", per_category);
    outputs.insert("ap_vs_sap.svg", scatter("Per-category AP and sampled AP", &points, &names));
    outputs.insert("sap_comparison.svg", grouped_bars("mSAP by category group", "mSAP", &groups, &names, &bars));
    if let Some(path) = &args.counts {
        let ds = read_dataset(path, None)?;
        inputs.push(path.clone());
        let mut counts = ds.label_counts();
        counts.sort_unstable_by(|a, b| b.cmp(a));
        outputs.insert("counts.svg", counts_chart(&counts));
    }

    prepare_out_dir(&args.out_dir)?;
    for (name, body) in &outputs {
        write_atomic(&args.out_dir.join(name), body.as_bytes())?;
    }
    Ok(Outcome { out_dir: args.out_dir.clone(), inputs, outputs: outputs.keys().map(|s| s.to_string()).collect() })
}
