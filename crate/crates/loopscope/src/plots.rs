//! Static SVG figures.

use std::collections::BTreeMap;
use std::ops::Range;

use loopscope_core::dataset::Condition;
use plotters::coord::types::RangedCoordf64;
use plotters::coord::Shift;
use plotters::prelude::*;

use crate::tables::{HeadContrastRow, PerturbationRow, ProbEntropyRow};

const NATURAL: RGBColor = RGBColor(31, 119, 180);
const ICL: RGBColor = RGBColor(255, 127, 14);
const HIGHLIGHT: [RGBColor; 4] =
    [RGBColor(214, 39, 40), RGBColor(148, 103, 189), RGBColor(44, 160, 44), RGBColor(140, 86, 75)];
const GREY: RGBColor = RGBColor(200, 200, 200);

type Area<'b> = DrawingArea<SVGBackend<'b>, Shift>;
type Chart<'a, 'b> = ChartContext<'a, SVGBackend<'b>, Cartesian2d<RangedCoordf64, RangedCoordf64>>;

fn color(c: Condition) -> RGBColor {
    match c {
        Condition::Natural => NATURAL,
        Condition::Icl => ICL,
    }
}

fn span(values: impl Iterator<Item = f64>, fallback: Range<f64>) -> Range<f64> {
    let (lo, hi) =
        values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return fallback;
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad)..(hi + pad)
}

fn panel<'a, 'b>(
    area: &'a Area<'b>,
    title: &str,
    x: Range<f64>,
    y: Range<f64>,
    x_desc: &str,
    y_desc: &str,
) -> Chart<'a, 'b> {
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 16))
        .margin(8)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(x.clone(), y)
        .expect("chart layout");
    let cycles = |v: &f64| format!("{v:.0}");
    let plain = |v: &f64| format!("{v}");
    let mut mesh = chart.configure_mesh();
    mesh.x_desc(x_desc).y_desc(y_desc).light_line_style(WHITE);
    if x_desc == "cycle" {
        mesh.x_label_formatter(&cycles).x_labels(((x.end - x.start).round() as usize + 1).min(12));
    } else {
        mesh.x_label_formatter(&plain);
    }
    mesh.draw().expect("mesh");
    chart
}

fn line(chart: &mut Chart<'_, '_>, points: Vec<(f64, f64)>, style: ShapeStyle, label: Option<String>) {
    let series = chart.draw_series(LineSeries::new(points, style)).expect("series");
    if let Some(label) = label {
        series.label(label).legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], style));
    }
}

fn legend<'a, 'b: 'a>(chart: &mut Chart<'a, 'b>) {
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK.mix(0.3))
        .position(SeriesLabelPosition::UpperRight)
        .draw()
        .expect("legend");
}

/// Probability and entropy per cycle with 5–95 % bands, one line per condition.
pub fn prob_entropy_svg(rows: &[ProbEntropyRow]) -> String {
    let mut out = String::new();
    {
        let root = SVGBackend::with_string(&mut out, (960, 380)).into_drawing_area();
        root.fill(&WHITE).expect("fill");
        let panels = root.split_evenly((1, 2));
        let x = span(rows.iter().map(|r| r.cycle_index as f64), 0.0..1.0);
        type Pick = fn(&ProbEntropyRow) -> (f64, f64, f64);
        let specs: [(&str, &str, Pick); 2] = [
            ("Selected-token probability", "probability", |r| (r.mean_prob, r.p5_prob, r.p95_prob)),
            ("Next-token entropy", "entropy (nats)", |r| (r.mean_entropy, r.p5_entropy, r.p95_entropy)),
        ];
        for (area, (title, y_desc, pick)) in panels.iter().zip(specs) {
            let y = span(
                rows.iter().flat_map(|r| {
                    let (m, lo, hi) = pick(r);
                    [m, lo, hi]
                }),
                0.0..1.0,
            );
            let mut chart = panel(area, title, x.clone(), y, "cycle", y_desc);
            for cond in Condition::ALL {
                let sel: Vec<&ProbEntropyRow> = rows.iter().filter(|r| r.condition == cond).collect();
                if sel.is_empty() {
                    continue;
                }
                let mut band: Vec<(f64, f64)> = sel.iter().map(|r| (r.cycle_index as f64, pick(r).2)).collect();
                band.extend(sel.iter().rev().map(|r| (r.cycle_index as f64, pick(r).1)));
                chart.draw_series(std::iter::once(Polygon::new(band, color(cond).mix(0.2).filled()))).expect("band");
                let mean = sel.iter().map(|r| (r.cycle_index as f64, pick(r).0)).collect();
                line(&mut chart, mean, color(cond).stroke_width(2), Some(cond.to_string()));
            }
            legend(&mut chart);
        }
        root.present().expect("svg");
    }
    out
}

/// Mean contrast per cycle for every head; the `highlight` heads are coloured.
pub fn head_contrast_svg(rows: &[HeadContrastRow], highlight: &BTreeMap<Condition, Vec<(usize, usize)>>) -> String {
    let mut out = String::new();
    {
        let root = SVGBackend::with_string(&mut out, (960, 380)).into_drawing_area();
        root.fill(&WHITE).expect("fill");
        let x = span(rows.iter().map(|r| r.cycle as f64), 0.0..1.0);
        let y = span(rows.iter().map(|r| r.contrast), -0.1..0.1);
        for (area, cond) in root.split_evenly((1, 2)).iter().zip(Condition::ALL) {
            let mut chart = panel(area, &format!("Head contrast, {cond}"), x.clone(), y.clone(), "cycle", "contrast");
            let mut heads: BTreeMap<(usize, usize), Vec<(f64, f64)>> = BTreeMap::new();
            for r in rows.iter().filter(|r| r.condition == cond) {
                heads.entry((r.layer, r.head)).or_default().push((r.cycle as f64, r.contrast));
            }
            let marked = highlight.get(&cond).cloned().unwrap_or_default();
            for (key, pts) in &heads {
                if !marked.contains(key) {
                    line(&mut chart, pts.clone(), GREY.stroke_width(1), None);
                }
            }
            for (i, key) in marked.iter().enumerate() {
                if let Some(pts) = heads.get(key) {
                    let style = HIGHLIGHT[i % HIGHLIGHT.len()].stroke_width(2);
                    line(&mut chart, pts.clone(), style, Some(format!("L{}H{}", key.0, key.1)));
                }
            }
            if !marked.is_empty() {
                legend(&mut chart);
            }
        }
        root.present().expect("svg");
    }
    out
}

/// Proportion repetitive and mean ROUGE-L against p, one line per number of
/// prompt cycles; rows are metrics, columns conditions.
pub fn perturbation_svg(rows: &[PerturbationRow]) -> String {
    let mut out = String::new();
    {
        let root = SVGBackend::with_string(&mut out, (960, 720)).into_drawing_area();
        root.fill(&WHITE).expect("fill");
        let areas = root.split_evenly((2, 2));
        let cs: Vec<usize> = {
            let mut v: Vec<usize> = rows.iter().map(|r| r.cycles_in_prompt).collect();
            v.sort();
            v.dedup();
            v
        };
        type Pick = fn(&PerturbationRow) -> f64;
        let metrics: [(&str, Pick); 2] =
            [("proportion repetitive", |r| r.proportion_repetitive), ("mean ROUGE-L", |r| r.mean_rouge_l)];
        for (mi, (name, pick)) in metrics.iter().enumerate() {
            for (ci, cond) in Condition::ALL.iter().enumerate() {
                let area = &areas[mi * 2 + ci];
                let mut chart =
                    panel(area, &format!("{name}, {cond}"), -0.02..1.02, -0.02..1.02, "top-p threshold", name);
                for (k, c) in cs.iter().enumerate() {
                    let pts: Vec<(f64, f64)> = rows
                        .iter()
                        .filter(|r| r.condition == *cond && r.cycles_in_prompt == *c)
                        .map(|r| (r.p, pick(r)))
                        .collect();
                    if pts.is_empty() {
                        continue;
                    }
                    let shade = 0.35 + 0.65 * (k as f64 + 1.0) / cs.len() as f64;
                    let style = color(*cond).mix(shade).stroke_width(2);
                    line(&mut chart, pts, style, Some(format!("c = {c}")));
                }
                legend(&mut chart);
            }
        }
        root.present().expect("svg");
    }
    out
}
