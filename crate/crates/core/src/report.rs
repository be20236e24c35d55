//! Byte-stable report rendering: delimited text tables and hand-rolled SVG.
//!
//! Every function here is a pure string renderer — no timestamps, no
//! environment lookups — so re-running a report on unchanged inputs yields
//! byte-identical files. Floating-point values print in Rust's shortest
//! round-trip decimal form unless a fixed precision is stated.

use ndarray::Array2;

use crate::error::Result;
use crate::metrics::MetricReport;
use crate::train::TrainLog;
use crate::vq::{rank_dimensions, CodebookCounter};

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Counter table: one row per dimension in rank order. The rank column is
/// produced by the same ranking routine the experiments use.
pub fn counter_table(counter: &CodebookCounter) -> Result<String> {
    let ranking = rank_dimensions(counter)?;
    let mut out = String::from("rank\tdim\taccum\n");
    for (i, &dim) in ranking.iter().enumerate() {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            i + 1,
            dim,
            fmt(counter.accum[dim - 1])
        ));
    }
    Ok(out)
}

/// Bar chart of accumulated codebook movement per latent dimension
/// (dimension on the x-axis in natural order, bar = accumulated |update|).
pub fn counter_svg(counter: &CodebookCounter) -> Result<String> {
    let ranking = rank_dimensions(counter)?; // validates non-empty state
    let d = counter.accum.len();
    let top = ranking[0];

    let bar_w = 22.0;
    let gap = 6.0;
    let left = 46.0;
    let bottom = 30.0;
    let plot_h = 180.0;
    let width = left + d as f64 * (bar_w + gap) + 10.0;
    let height = plot_h + bottom + 20.0;
    let max = counter.accum.iter().cloned().fold(0.0f64, f64::max);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    ));
    s.push_str(&format!(
        "<line x1=\"{left:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#333\" stroke-width=\"1\"/>\n",
        plot_h + 10.0,
        width - 6.0,
        plot_h + 10.0
    ));
    s.push_str(&format!(
        "<text x=\"4\" y=\"18\" font-size=\"11\" font-family=\"monospace\">max {}</text>\n",
        fmt(max)
    ));
    for (i, &a) in counter.accum.iter().enumerate() {
        let frac = if max > 0.0 { a / max } else { 0.0 };
        let h = frac * plot_h;
        let x = left + i as f64 * (bar_w + gap);
        let y = plot_h + 10.0 - h;
        let fill = if i + 1 == top { "#c0504d" } else { "#4a7ebb" };
        s.push_str(&format!(
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{bar_w:.2}\" height=\"{h:.2}\" fill=\"{fill}\"/>\n"
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.1}\" font-size=\"10\" font-family=\"monospace\" text-anchor=\"middle\">{}</text>\n",
            x + bar_w / 2.0,
            plot_h + 24.0,
            i + 1
        ));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Training trace as tab-separated text, one row per step.
pub fn train_log_tsv(log: &TrainLog) -> String {
    let mut out = String::from("step\trecon\tcodebook\tcommitment\ttotal\n");
    for r in &log.records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.step,
            fmt(r.recon),
            fmt(r.codebook),
            fmt(r.commitment),
            fmt(r.total)
        ));
    }
    out
}

/// Pairwise evaluation rows (sorted by id) plus a mean/median summary.
/// Returns (rows table, summary table).
pub fn eval_report(rows: &[(String, MetricReport)]) -> (String, String) {
    let mut sorted: Vec<&(String, MetricReport)> = rows.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));

    let mut table = String::from("id\tgpe\tffe\tmcd_db\tframes_compared\n");
    for (id, m) in &sorted {
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            id,
            fmt(m.gpe),
            fmt(m.ffe),
            fmt(m.mcd_db),
            m.frames_compared
        ));
    }

    let mut summary = String::from("metric\tmean\tmedian\n");
    for (name, get) in [
        ("gpe", &(|m: &MetricReport| m.gpe) as &dyn Fn(&MetricReport) -> f64),
        ("ffe", &|m: &MetricReport| m.ffe),
        ("mcd_db", &|m: &MetricReport| m.mcd_db),
    ] {
        let mut vals: Vec<f64> = sorted.iter().map(|(_, m)| get(m)).collect();
        if vals.is_empty() {
            summary.push_str(&format!("{name}\t\t\n"));
            continue;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if vals.len() % 2 == 1 {
            vals[vals.len() / 2]
        } else {
            (vals[vals.len() / 2 - 1] + vals[vals.len() / 2]) / 2.0
        };
        summary.push_str(&format!("{name}\t{}\t{}\n", fmt(mean), fmt(median)));
    }
    (table, summary)
}

/// Mean-pool `x` (T x M) down to at most `max_t` rows and `max_m` columns.
fn pool(x: &Array2<f64>, max_t: usize, max_m: usize) -> Array2<f64> {
    let (t, m) = x.dim();
    let st = t.div_ceil(max_t).max(1);
    let sm = m.div_ceil(max_m).max(1);
    let pt = t.div_ceil(st);
    let pm = m.div_ceil(sm);
    let mut out = Array2::zeros((pt, pm));
    for i in 0..pt {
        for j in 0..pm {
            let t0 = i * st;
            let t1 = (t0 + st).min(t);
            let m0 = j * sm;
            let m1 = (m0 + sm).min(m);
            let mut acc = 0.0;
            for a in t0..t1 {
                for b in m0..m1 {
                    acc += x[[a, b]];
                }
            }
            out[[i, j]] = acc / ((t1 - t0) * (m1 - m0)) as f64;
        }
    }
    out
}

/// Side-by-side spectrogram panels on a shared grayscale. Each panel is a
/// (label, log-mel frames) pair; time runs left to right, low bins at the
/// bottom. Intensity is normalized over all panels jointly so panels are
/// visually comparable.
pub fn spectrogram_grid_svg(panels: &[(String, &Array2<f64>)]) -> String {
    const CELL: f64 = 3.0;
    const MAX_T: usize = 120;
    const MAX_M: usize = 40;
    let pooled: Vec<(String, Array2<f64>)> = panels
        .iter()
        .map(|(l, x)| (l.clone(), pool(x, MAX_T, MAX_M)))
        .collect();

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, p) in &pooled {
        for &v in p {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = if hi > lo { hi - lo } else { 1.0 };

    let label_h = 16.0;
    let pad = 10.0;
    let panel_w = |p: &Array2<f64>| p.nrows() as f64 * CELL;
    let panel_h = pooled
        .iter()
        .map(|(_, p)| p.ncols() as f64 * CELL)
        .fold(0.0f64, f64::max);
    let width: f64 =
        pad + pooled.iter().map(|(_, p)| panel_w(p) + pad).sum::<f64>();
    let height = label_h + panel_h + pad * 2.0;

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    ));
    let mut x0 = pad;
    for (label, p) in &pooled {
        s.push_str(&format!(
            "<text x=\"{x0:.1}\" y=\"{:.1}\" font-size=\"11\" font-family=\"monospace\">{label}</text>\n",
            label_h - 4.0
        ));
        let (pt, pm) = p.dim();
        for i in 0..pt {
            for j in 0..pm {
                // 0 = black (floor), 255 = white (loudest).
                let g = (((p[[i, j]] - lo) / span) * 255.0).round().clamp(0.0, 255.0);
                let y = label_h + pad / 2.0 + (pm - 1 - j) as f64 * CELL;
                s.push_str(&format!(
                    "<rect x=\"{:.1}\" y=\"{y:.1}\" width=\"{CELL:.1}\" height=\"{CELL:.1}\" fill=\"rgb({g:.0},{g:.0},{g:.0})\"/>\n",
                    x0 + i as f64 * CELL
                ));
            }
        }
        x0 += panel_w(p) + pad;
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::StepRecord;
    use crate::vq::CounterMode;
    use ndarray::array;

    fn demo_counter() -> CodebookCounter {
        let mut c = CodebookCounter::new(4, CounterMode::MeanThenAbs);
        c.accum = ndarray::arr1(&[0.25, 1.5, 0.0, 0.75]);
        c.steps = 12;
        c
    }

    #[test]
    fn counter_table_matches_ranking_order() {
        let c = demo_counter();
        let table = counter_table(&c).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "rank\tdim\taccum");
        assert_eq!(lines[1], "1\t2\t1.5");
        assert_eq!(lines[2], "2\t4\t0.75");
        assert_eq!(lines[3], "3\t1\t0.25");
        assert_eq!(lines[4], "4\t3\t0");
    }

    #[test]
    fn renders_are_byte_stable() {
        let c = demo_counter();
        assert_eq!(counter_table(&c).unwrap(), counter_table(&c).unwrap());
        assert_eq!(counter_svg(&c).unwrap(), counter_svg(&c).unwrap());
        let x = array![[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]];
        let panels = vec![("a".to_string(), &x)];
        assert_eq!(spectrogram_grid_svg(&panels), spectrogram_grid_svg(&panels));
    }

    #[test]
    fn empty_counter_is_an_error() {
        let c = CodebookCounter::new(4, CounterMode::MeanThenAbs);
        assert!(counter_table(&c).is_err());
        assert!(counter_svg(&c).is_err());
    }

    #[test]
    fn train_log_rows_and_header() {
        let log = TrainLog {
            records: vec![StepRecord {
                step: 1,
                recon: 0.5,
                codebook: 0.25,
                commitment: 0.125,
                total: 0.875,
            }],
            counter: demo_counter(),
        };
        assert_eq!(
            train_log_tsv(&log),
            "step\trecon\tcodebook\tcommitment\ttotal\n1\t0.5\t0.25\t0.125\t0.875\n"
        );
    }

    #[test]
    fn eval_report_sorts_and_summarizes() {
        let rows = vec![
            (
                "b".to_string(),
                MetricReport { gpe: 0.2, ffe: 0.4, mcd_db: 6.0, frames_compared: 10 },
            ),
            (
                "a".to_string(),
                MetricReport { gpe: 0.0, ffe: 0.2, mcd_db: 2.0, frames_compared: 20 },
            ),
            (
                "c".to_string(),
                MetricReport { gpe: 0.1, ffe: 0.3, mcd_db: 4.0, frames_compared: 30 },
            ),
        ];
        let (table, summary) = eval_report(&rows);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[1], "a\t0\t0.2\t2\t20");
        assert_eq!(lines[2], "b\t0.2\t0.4\t6\t10");
        assert_eq!(lines[3], "c\t0.1\t0.3\t4\t30");
        let slines: Vec<&str> = summary.lines().collect();
        assert_eq!(slines[0], "metric\tmean\tmedian");
        assert!(slines[1].starts_with("gpe\t0.1"));
        assert_eq!(slines[3], "mcd_db\t4\t4");
    }

    #[test]
    fn pooling_caps_panel_size_and_averages() {
        let x = Array2::from_shape_fn((300, 80), |(t, m)| (t + m) as f64);
        let p = pool(&x, 120, 40);
        assert!(p.nrows() <= 120 && p.ncols() <= 40);
        // First cell pools t in {0,1,2}, m in {0,1}: mean of (t+m) = 1.5.
        assert!((p[[0, 0]] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let c = demo_counter();
        let svg = counter_svg(&c).unwrap();
        assert!(svg.starts_with("<svg "));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect").count(), 4);
    }
}
