//! Static `report.html` assembled from whatever analysis outputs a run
//! directory holds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use loopscope_core::dataset::Condition;
use loopscope_core::lens::HeadRanking;

use crate::dataset_io::BuildReport;
use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};
use crate::plots;
use crate::tables::*;

pub const REPORT_FILE: &str = "report.html";
pub const BUILD_REPORT_FILE: &str = "build_report.json";
pub const HEAD_RANKING_FILE: &str = "head_ranking.json";

/// Files that each make a report section possible.
pub const SECTION_FILES: &[&str] =
    &[BUILD_REPORT_FILE, PROB_ENTROPY_CSV, LENS_KL_CSV, HEAD_CONTRAST_CSV, PERTURBATION_CSV];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    out.push_str("<table>\n<tr>");
    for h in header {
        let _ = write!(out, "<th>{}</th>", esc(h));
    }
    out.push_str("</tr>\n");
    for row in rows {
        out.push_str("<tr>");
        for cell in row {
            let _ = write!(out, "<td>{}</td>", esc(cell));
        }
        out.push_str("</tr>\n");
    }
    out.push_str("</table>\n");
}

fn f(v: f64) -> String {
    format!("{v:.4}")
}

fn figure(out: &mut String, svg: &str) {
    out.push_str("<figure>\n");
    // the XML declaration is not valid inside HTML
    let body = svg.find("<svg").map_or(svg, |i| &svg[i..]);
    out.push_str(body.trim_end());
    out.push_str("\n</figure>\n");
}

fn repetition_section(out: &mut String, dir: &Path) -> Result<()> {
    let path = dir.join(BUILD_REPORT_FILE);
    let report: BuildReport = serde_json::from_str(&read_to_string(&path)?).map_err(|e| Error::format(&path, e))?;
    out.push_str("<h2>Dataset and repetition rate</h2>\n");
    let raw = &report.raw_repetition;
    let mut rows = vec![
        vec!["corpus lines".into(), report.lines.to_string()],
        vec!["greedy continuations scored".into(), raw.total.to_string()],
        vec!["repetitive continuations".into(), format!("{} ({:.2} %)", raw.repetitive, raw.rate * 100.0)],
        vec!["pairs kept".into(), format!("{} ({:.2} %)", report.kept, report.retention * 100.0)],
        vec!["natural prompts extended".into(), report.extended_prompts.to_string()],
    ];
    for (reason, n) in &report.dropped {
        let name = serde_json::to_value(reason).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        rows.push(vec![format!("dropped: {name}"), n.to_string()]);
    }
    table(out, &["quantity", "value"], &rows);
    let hist = dir.join(CYCLE_HISTOGRAM_CSV);
    if hist.exists() {
        let rows: Vec<HistogramRow> = read_csv(&hist)?;
        out.push_str("<h3>Cycle lengths of kept pairs</h3>\n");
        let rows: Vec<Vec<String>> =
            rows.iter().map(|r| vec![r.cycle_length.to_string(), r.count.to_string()]).collect();
        table(out, HISTOGRAM_HEADER, &rows);
    }
    Ok(())
}

fn prob_section(out: &mut String, dir: &Path) -> Result<()> {
    let rows: Vec<ProbEntropyRow> = read_csv(&dir.join(PROB_ENTROPY_CSV))?;
    out.push_str("<h2>Probability and entropy per cycle</h2>\n");
    figure(out, &plots::prob_entropy_svg(&rows));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.condition.to_string(),
                r.cycle_index.to_string(),
                f(r.mean_prob),
                format!("{} – {}", f(r.p5_prob), f(r.p95_prob)),
                f(r.mean_entropy),
                format!("{} – {}", f(r.p5_entropy), f(r.p95_entropy)),
            ]
        })
        .collect();
    table(out, &["condition", "cycle", "mean prob", "5–95 % prob", "mean entropy", "5–95 % entropy"], &body);
    Ok(())
}

fn lens_section(out: &mut String, dir: &Path) -> Result<()> {
    let rows: Vec<LensKlRow> = read_csv(&dir.join(LENS_KL_CSV))?;
    out.push_str("<h2>Head lens training</h2>\n");
    let mut layers: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for r in &rows {
        let e = layers.entry(r.layer).or_default();
        e.0 += r.initial_kl;
        e.1 += r.final_kl;
        e.2 += 1;
    }
    let body: Vec<Vec<String>> = layers
        .iter()
        .map(|(l, (i, fin, n))| {
            let (i, fin) = (i / *n as f64, fin / *n as f64);
            vec![l.to_string(), f(i), f(fin), format!("{:.1} %", 100.0 * (1.0 - fin / i))]
        })
        .collect();
    table(out, &["layer", "mean initial KL", "mean final KL", "drop"], &body);
    Ok(())
}

fn head_section(out: &mut String, dir: &Path) -> Result<()> {
    let rows: Vec<HeadContrastRow> = read_csv(&dir.join(HEAD_CONTRAST_CSV))?;
    out.push_str("<h2>Head contrast per cycle</h2>\n");
    let ranking_path = dir.join(HEAD_RANKING_FILE);
    let rankings: Vec<HeadRanking> = if ranking_path.exists() {
        serde_json::from_str(&read_to_string(&ranking_path)?).map_err(|e| Error::format(&ranking_path, e))?
    } else {
        Vec::new()
    };
    let highlight: BTreeMap<Condition, Vec<(usize, usize)>> = rankings
        .iter()
        .map(|r| (r.condition, r.top.iter().chain(&r.bottom).map(|&(l, h, _)| (l, h)).collect()))
        .collect();
    figure(out, &plots::head_contrast_svg(&rows, &highlight));
    let body: Vec<Vec<String>> = rankings
        .iter()
        .flat_map(|r| {
            let tag = |kind: &'static str, list: &[(usize, usize, f64)]| {
                list.iter()
                    .map(|&(l, h, v)| vec![r.condition.to_string(), kind.to_string(), format!("L{l}H{h}"), f(v)])
                    .collect::<Vec<_>>()
            };
            let mut v = tag("top", &r.top);
            v.extend(tag("bottom", &r.bottom));
            v
        })
        .collect();
    if !body.is_empty() {
        table(out, &["condition", "rank", "head", "mean contrast"], &body);
    }
    Ok(())
}

fn perturbation_section(out: &mut String, dir: &Path) -> Result<()> {
    let rows: Vec<PerturbationRow> = read_csv(&dir.join(PERTURBATION_CSV))?;
    out.push_str("<h2>Top-p perturbation</h2>\n");
    figure(out, &plots::perturbation_svg(&rows));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.condition.to_string(),
                r.cycles_in_prompt.to_string(),
                format!("{:.2}", r.p),
                f(r.proportion_repetitive),
                f(r.mean_rouge_l),
                r.count.to_string(),
            ]
        })
        .collect();
    table(out, PERTURBATION_HEADER, &body);
    Ok(())
}

/// Render the report for `dir`; deterministic in the input files.
pub fn render(dir: &Path) -> Result<String> {
    if !SECTION_FILES.iter().any(|f| dir.join(f).exists()) {
        return Err(Error::Input(format!(
            "{}: no analysis outputs found, expected at least one of {}",
            dir.display(),
            SECTION_FILES.join(", ")
        )));
    }
    let mut body = String::new();
    type Section = fn(&mut String, &Path) -> Result<()>;
    let sections: [(&str, Section); 5] = [
        (BUILD_REPORT_FILE, repetition_section),
        (PROB_ENTROPY_CSV, prob_section),
        (LENS_KL_CSV, lens_section),
        (HEAD_CONTRAST_CSV, head_section),
        (PERTURBATION_CSV, perturbation_section),
    ];
    for (file, section) in sections {
        if dir.join(file).exists() {
            section(&mut body, dir)?;
        }
    }
    Ok(format!(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>loopscope report</title>\n<style>\n\
         body {{ font-family: sans-serif; max-width: 1000px; margin: 2em auto; }}\n\
         table {{ border-collapse: collapse; margin: 1em 0; }}\n\
         td, th {{ border: 1px solid #ccc; padding: 2px 8px; text-align: right; }}\n\
         figure {{ margin: 1em 0; }}\n</style>\n</head>\n<body>\n<h1>loopscope report</h1>\n{body}</body>\n</html>\n"
    ))
}

pub fn write_report(dir: &Path) -> Result<PathBuf> {
    let html = render(dir)?;
    let path = dir.join(REPORT_FILE);
    write_atomic(&path, html.as_bytes())?;
    Ok(path)
}
