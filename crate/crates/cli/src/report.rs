//! Best-so-far chart (SVG) and text summary over one or more traces.

use std::fmt::Write as _;

use autosnap::search::{CandidateRecord, CandidateStore, Source};

pub const SEARCH_COLOR: &str = "#d62728";
pub const RANDOM_COLOR: &str = "#000000";

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub store: CandidateStore,
}

impl Series {
    pub fn is_random(&self) -> bool {
        !self.store.is_empty() && self.store.records().iter().all(|r| r.source == Source::RandomBaseline)
    }

    pub fn color(&self) -> &'static str {
        if self.is_random() {
            RANDOM_COLOR
        } else {
            SEARCH_COLOR
        }
    }

    /// Number of evaluations until the final best value was first reached.
    pub fn evaluations_to_best(&self) -> Option<usize> {
        let best = self.store.best()?;
        self.store
            .records()
            .iter()
            .position(|r| r.value >= best.value)
            .map(|i| i + 1)
    }
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let f = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    };
    f * mag
}

/// Step-function polylines of the running best value against the number of
/// evaluations, with axes and a legend.
pub fn render_svg(series: &[Series]) -> String {
    let (w, h) = (760.0, 460.0);
    let (left, right, top, bottom) = (70.0, 200.0, 30.0, 55.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let n_max = series.iter().map(|s| s.store.len()).max().unwrap_or(1).max(1) as f64;
    let values: Vec<f64> = series.iter().flat_map(|s| s.store.best_so_far()).collect();
    let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let x = |n: f64| left + pw * n / n_max;
    let y = |v: f64| top + ph * (hi - v) / (hi - lo);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    let ystep = nice_step(hi - lo);
    let mut v = (lo / ystep).ceil() * ystep;
    while v <= hi {
        let yy = y(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            left + pw,
            left - 6.0,
            yy + 4.0,
            format_tick(v, ystep)
        );
        v += ystep;
    }
    let xstep = nice_step(n_max).max(1.0);
    let mut n = 0.0;
    while n <= n_max + 1e-9 {
        let xx = x(n);
        let _ = writeln!(
            svg,
            r##"<line x1="{xx:.2}" y1="{:.2}" x2="{xx:.2}" y2="{:.2}" stroke="#444"/><text x="{xx:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            top + ph,
            top + ph + 5.0,
            top + ph + 19.0,
            n
        );
        n += xstep;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">evaluated architectures</text>"#,
        left + pw / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(18,{:.2}) rotate(-90)" text-anchor="middle">best value so far</text>"#,
        top + ph / 2.0
    );
    for (i, s) in series.iter().enumerate() {
        let best = s.store.best_so_far();
        let mut pts = String::new();
        for (k, b) in best.iter().enumerate() {
            if k > 0 {
                let _ = write!(pts, "{:.2},{:.2} ", x(k as f64), y(best[k - 1]));
            }
            let _ = write!(pts, "{:.2},{:.2} ", x(k as f64), y(*b));
        }
        if let Some(b) = best.last() {
            let _ = write!(pts, "{:.2},{:.2}", x(best.len() as f64), y(*b));
        }
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.6" points="{}"/>"#,
            s.color(),
            pts.trim_end()
        );
        let ly = top + 10.0 + 18.0 * i as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 22.0,
            s.color(),
            lx + 28.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn format_tick(v: f64, step: f64) -> String {
    let digits = (-step.log10().floor()).max(0.0) as usize;
    format!("{v:.digits$}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn top_table(out: &mut String, records: &[&CandidateRecord]) {
    let _ = writeln!(out, "| rank | id | value | regmse | source | snap |");
    let _ = writeln!(out, "|---:|---:|---:|---:|---|---|");
    for (i, r) in records.iter().enumerate() {
        let _ = writeln!(
            out,
            "| {} | {} | {:.4} | {:.6} | {} | {} |",
            i + 1,
            r.id,
            r.value,
            r.regmse,
            r.source,
            r.snap
        );
    }
}

/// Markdown summary: per-trace best and evaluations-to-best, a top-k table,
/// and where each random-search best would rank inside each search store.
pub fn summary(series: &[Series], top_k: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| trace | method | evaluations | best value | evaluations to best | best snap |");
    let _ = writeln!(out, "|---|---|---:|---:|---:|---|");
    for s in series {
        let best = s.store.best();
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            s.label,
            if s.is_random() { "random" } else { "search" },
            s.store.len(),
            best.map_or("-".into(), |b| format!("{:.4}", b.value)),
            s.evaluations_to_best().map_or("-".into(), |n| n.to_string()),
            best.map_or("-".into(), |b| b.snap.render()),
        );
    }
    for s in series {
        let _ = writeln!(out, "\n## {} top {}\n", s.label, top_k);
        top_table(&mut out, &s.store.best_k(top_k));
    }
    let randoms: Vec<&Series> = series.iter().filter(|s| s.is_random()).collect();
    let searches: Vec<&Series> = series.iter().filter(|s| !s.is_random()).collect();
    if !randoms.is_empty() && !searches.is_empty() {
        let _ = writeln!(out, "\n## Random-search best ranked within search stores\n");
        for r in &randoms {
            let Some(rb) = r.store.best() else { continue };
            for s in &searches {
                let rank = s.store.rank_of(rb.value);
                let better = rank - 1;
                let _ = writeln!(
                    out,
                    "- {} best ({:.4}) would rank #{} in {}; {} search candidate(s) score higher",
                    r.label, rb.value, rank, s.label, better
                );
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use autosnap::pose::CandidateResult;

    fn store(values: &[f64], source: Source) -> CandidateStore {
        let texts = ["C3", "C1", "P3", "D3", "S3", "C3 C1"];
        let mut s = CandidateStore::new();
        for (t, v) in texts.iter().zip(values) {
            let r = CandidateResult {
                snap: t.to_string(),
                regmse: 10f64.powf(-v),
                value: *v,
                failed: false,
                train_seed: 0,
                epochs: 1,
                wall_time_s: 0.0,
            };
            s.insert(t.parse().unwrap(), &r, source, 0.0).unwrap();
        }
        s
    }

    fn pair() -> Vec<Series> {
        vec![
            Series {
                label: "search".into(),
                store: store(&[1.0, 0.5, 2.0, 1.5, 3.0], Source::Initial),
            },
            Series {
                label: "random".into(),
                store: store(&[0.5, 1.8, 1.0], Source::RandomBaseline),
            },
        ]
    }

    #[test]
    fn svg_has_one_colored_polyline_per_trace_and_a_legend() {
        let svg = render_svg(&pair());
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(&format!(r#"stroke="{SEARCH_COLOR}""#)));
        assert!(svg.contains(&format!(r#"stroke="{RANDOM_COLOR}""#)));
        assert!(svg.contains(">search</text>") && svg.contains(">random</text>"));
    }

    #[test]
    fn polylines_never_go_down() {
        let svg = render_svg(&pair());
        for line in svg.lines().filter(|l| l.starts_with("<polyline")) {
            let pts = line.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
            let ys: Vec<f64> = pts.split(' ').map(|p| p.split(',').nth(1).unwrap().parse().unwrap()).collect();
            // SVG y grows downwards
            assert!(ys.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{ys:?}");
        }
    }

    #[test]
    fn summary_reports_rank_of_random_best() {
        let text = summary(&pair(), 3);
        assert!(text.contains("random best (1.8000) would rank #3 in search; 2 search candidate(s) score higher"));
        assert!(text.contains("| search | search | 5 | 3.0000 | 5 | S3 |"));
    }
}
