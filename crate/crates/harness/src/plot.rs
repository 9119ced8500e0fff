//! SVG BLER-vs-Eb/N0 chart.

use std::fmt::Write as _;

use nrx_core::receivers::ReceiverKind;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 4] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a"];

/// Log-scale BLER chart with 95% interval bars. Zero-error points are drawn
/// at their upper interval end as open markers.
pub fn bler_svg(rows: &[CsvRow], title: &str) -> String {
    let xs: Vec<f64> = rows.iter().map(|p| p.ebn0_db).collect();
    let (x0, x1) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    let (x0, x1) = if x0.is_finite() && x1 > x0 {
        (x0, x1)
    } else {
        (x0.min(0.0), x0.max(0.0) + 1.0)
    };
    let floor = rows
        .iter()
        .map(|p| p.bler_lo.max(p.bler_hi * 1e-1))
        .filter(|v| *v > 0.0)
        .fold(1.0f64, f64::min);
    let dec_lo = floor.log10().floor().min(-1.0);
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| {
        let l = y.max(10f64.powf(dec_lo)).log10();
        MARGIN + (0.0 - l) / (0.0 - dec_lo) * (HEIGHT - 2.0 * MARGIN)
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    // grid and axes
    let mut d = dec_lo as i32;
    while d <= 0 {
        let y = py(10f64.powi(d));
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">1e{d}</text>"##,
            WIDTH - MARGIN,
            MARGIN - 6.0,
            y + 4.0
        );
        d += 1;
    }
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#,
            px(x),
            HEIGHT - MARGIN + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">Eb/N0 (dB)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">BLER</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );

    let mut receivers: Vec<ReceiverKind> = Vec::new();
    for p in rows {
        if !receivers.contains(&p.receiver) {
            receivers.push(p.receiver);
        }
    }
    for (i, &r) in receivers.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let curve: Vec<&CsvRow> = rows.iter().filter(|p| p.receiver == r).collect();
        let pts: Vec<String> = curve
            .iter()
            .filter(|p| p.bler > 0.0)
            .map(|p| format!("{:.1},{:.1}", px(p.ebn0_db), py(p.bler)))
            .collect();
        if pts.len() > 1 {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                pts.join(" ")
            );
        }
        for p in curve {
            let (lo, hi) = (p.bler_lo, p.bler_hi);
            let x = px(p.ebn0_db);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="{color}"/>"#,
                py(hi),
                py(lo)
            );
            let (y, fill) = if p.bler > 0.0 {
                (py(p.bler), color)
            } else {
                (py(hi), "white")
            };
            let _ = writeln!(
                s,
                r#"<circle cx="{x:.1}" cy="{y:.1}" r="4" fill="{fill}" stroke="{color}"/>"#
            );
        }
        let ly = MARGIN + 16.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN - 90.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            r.name()
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Parses a sweep CSV back into points (receiver, Eb/N0, BLER, lo, hi, BER, TTIs).
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == crate::eval::CSV_HEADER => {}
        _ => return Err(format!("expected header `{}`", crate::eval::CSV_HEADER)),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(format!("row {}: expected 7 fields", i + 1));
            }
            let num = |j: usize| {
                f[j].trim()
                    .parse::<f64>()
                    .map_err(|_| format!("row {}: bad number `{}`", i + 1, f[j]))
            };
            Ok(CsvRow {
                ebn0_db: num(0)?,
                receiver: f[1]
                    .trim()
                    .parse()
                    .map_err(|e| format!("row {}: {e}", i + 1))?,
                bler: num(2)?,
                bler_lo: num(3)?,
                bler_hi: num(4)?,
                ber: num(5)?,
                ttis: f[6]
                    .trim()
                    .parse()
                    .map_err(|_| format!("row {}: bad TTI count", i + 1))?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub ebn0_db: f64,
    pub receiver: ReceiverKind,
    pub bler: f64,
    pub bler_lo: f64,
    pub bler_hi: f64,
    pub ber: f64,
    pub ttis: usize,
}
