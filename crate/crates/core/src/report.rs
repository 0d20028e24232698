//! Result tables as aligned text and as CSV.

use crate::crosssection::RiskPremiaEstimate;
use crate::factors::{aggregate_name, horizon_name, CorrelationTable, FactorGroup, Source, CONTROL_NAMES};
use crate::io::TableWriter;
use crate::moments::Measure;
use crate::qbll::DynamicEstimate;
use crate::sorts::SortReport;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub text: String,
    pub csv: String,
}

/// Rounds to `dp` decimals and trims trailing zeros: `1.00 → 1`, `-4.10 → -4.1`.
pub fn fmt_trimmed(x: f64, dp: usize) -> String {
    if !x.is_finite() {
        return "NA".into();
    }
    let s = format!("{x:.dp$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

/// Rounds to `dp` decimals and prints the shortest representation that keeps
/// a decimal point: `0.00050 → 0.0005`, `1 → 1.0`, `-0.00001 → -0.0`.
pub fn fmt_rounded(x: f64, dp: usize) -> String {
    if !x.is_finite() {
        return "NA".into();
    }
    let v: f64 = format!("{x:.dp$}").parse().expect("formatted float parses");
    format!("{v:?}")
}

/// Display label for a factor column: `rs_s_m → RS(s,m)`, `rvol_i → RVOL(I)`.
pub fn label(name: &str) -> String {
    let parts: Vec<&str> = name.split('_').collect();
    let stem = match parts.first() {
        Some(&"rvol") => "RVOL",
        Some(&"rs") => "RS",
        Some(&"rk") => "RK",
        _ => return name.to_uppercase(),
    };
    let src = |s: &str| match s {
        "m" => Some("m"),
        "i" => Some("I"),
        _ => None,
    };
    match parts.as_slice() {
        [_, s] => src(s).map(|s| format!("{stem}({s})")),
        [_, h @ ("s" | "l"), s] => src(s).map(|s| format!("{stem}({h},{s})")),
        _ => None,
    }
    .unwrap_or_else(|| name.to_uppercase())
}

/// Row order within a source: aggregates, then horizon pairs per measure.
fn source_order(src: Source) -> Vec<String> {
    let mut v: Vec<String> = Measure::ALL.iter().map(|m| aggregate_name(*m, src)).collect();
    for m in Measure::ALL {
        v.push(horizon_name(m, true, src));
        v.push(horizon_name(m, false, src));
    }
    v
}

fn pad_left(s: &str, w: usize) -> String {
    format!("{s:>w$}")
}

fn pad_right(s: &str, w: usize) -> String {
    format!("{s:<w$}")
}

fn center(s: &str, w: usize) -> String {
    let n = s.chars().count();
    if n >= w {
        return s.to_string();
    }
    let left = (w - n) / 2;
    format!("{}{}{}", " ".repeat(left), s, " ".repeat(w - n - left))
}

fn trim_line(s: String) -> String {
    s.trim_end().to_string()
}

/// Post-ranking returns by quantile with High-Low, in market and
/// idiosyncratic sections; t-statistics in parentheses below each row.
pub fn sort_table(reports: &[SortReport]) -> Rendered {
    let n = reports.first().map_or(5, |r| r.means_bps.len());
    let mut sections: Vec<(&str, Vec<&SortReport>)> = Vec::new();
    let mut used = vec![false; reports.len()];
    for (title, src) in [("Market", Source::Market), ("Idiosyncratic", Source::Idiosyncratic)] {
        let rows: Vec<&SortReport> = source_order(src)
            .iter()
            .filter_map(|name| {
                let i = reports.iter().position(|r| &r.sort_variable == name)?;
                used[i] = true;
                Some(&reports[i])
            })
            .collect();
        if !rows.is_empty() {
            sections.push((title, rows));
        }
    }
    let other: Vec<&SortReport> = reports.iter().zip(&used).filter(|(_, u)| !**u).map(|(r, _)| r).collect();
    if !other.is_empty() {
        sections.push(("Other", other));
    }

    let lw = reports.iter().map(|r| label(&r.sort_variable).len()).max().unwrap_or(0).max(8) + 2;
    let cw = 9;
    let hlw = 12;
    let width = lw + cw * n + hlw;
    let rule = "-".repeat(width);
    let mut text = Vec::new();
    let mut head = pad_right("Variable", lw);
    for q in 1..=n {
        head.push_str(&pad_left(&q.to_string(), cw));
    }
    head.push_str(&pad_left("High - Low", hlw));
    text.push("=".repeat(width));
    text.push(head);

    let mut header = vec!["section".to_string(), "variable".into(), "stat".into()];
    header.extend((1..=n).map(|q| q.to_string()));
    header.push("high_low".into());
    let mut csv = TableWriter::new(&header.iter().map(String::as_str).collect::<Vec<_>>());

    for (title, rows) in &sections {
        text.push(rule.clone());
        text.push(trim_line(center(title, width)));
        text.push(rule.clone());
        for r in rows {
            let means: Vec<String> = r.means_bps.iter().chain([&r.high_low_bps]).map(|v| fmt_trimmed(*v, 2)).collect();
            let ts: Vec<String> = r.tstats.iter().chain([&r.high_low_t]).map(|v| fmt_trimmed(*v, 2)).collect();
            let mut line = pad_right(&label(&r.sort_variable), lw);
            let mut tline = " ".repeat(lw);
            for q in 0..n {
                line.push_str(&pad_left(&means[q], cw));
                tline.push_str(&pad_left(&format!("({})", ts[q]), cw));
            }
            line.push_str(&pad_left(&means[n], hlw));
            tline.push_str(&pad_left(&format!("({})", ts[n]), hlw));
            text.push(line);
            text.push(tline);
            for (stat, vals) in [("mean_bps", &means), ("tstat", &ts)] {
                let mut rec = vec![title.to_string(), r.sort_variable.clone(), stat.to_string()];
                rec.extend(vals.iter().cloned());
                csv.row(rec);
            }
        }
    }
    text.push("=".repeat(width));
    Rendered {
        text: text.join("\n") + "\n",
        csv: csv.into_string(),
    }
}

/// One results column: coefficient and t-statistic by factor name, with
/// `const` for the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelColumn {
    pub coef: Vec<(String, f64, f64)>,
    pub r2: Option<f64>,
}

impl From<&RiskPremiaEstimate> for ModelColumn {
    fn from(e: &RiskPremiaEstimate) -> Self {
        let mut coef = vec![("const".to_string(), e.omega, e.omega_t)];
        coef.extend(e.factor_names.iter().cloned().zip(e.lambda.iter().copied()).zip(e.tstats.iter().copied()).map(|((n, l), t)| (n, l, t)));
        ModelColumn { coef, r2: Some(e.r2) }
    }
}

impl From<&DynamicEstimate> for ModelColumn {
    fn from(e: &DynamicEstimate) -> Self {
        let mut coef = vec![("const".to_string(), e.omega_bar, e.omega_t)];
        coef.extend(e.factor_names.iter().cloned().zip(e.lambda_bar.iter().copied()).zip(e.tstats.iter().copied()).map(|((n, l), t)| (n, l, t)));
        ModelColumn { coef, r2: None }
    }
}

/// Static models in Panel A, dynamic models in Panel B, numbered from
/// `first_model`. Control-factor coefficients are estimated but not shown.
pub fn results_table(
    first_model: usize,
    static_cols: &[Option<ModelColumn>],
    dynamic_cols: &[Option<ModelColumn>],
) -> Rendered {
    let cols: Vec<Option<&ModelColumn>> = static_cols.iter().chain(dynamic_cols).map(Option::as_ref).collect();
    let mut rows: Vec<String> = vec!["const".into()];
    for c in cols.iter().flatten() {
        for (name, _, _) in &c.coef {
            if !rows.contains(name) && !CONTROL_NAMES.contains(&name.as_str()) {
                rows.push(name.clone());
            }
        }
    }
    let display = |r: &str| if r == "const" { "const".to_string() } else { label(r) };
    let lw = rows.iter().map(|r| display(r).len()).max().unwrap_or(0).max(5) + 2;
    let cw = 12;
    let ns = static_cols.len();
    let nd = dynamic_cols.len();
    let width = lw + cw * (ns + nd);

    let mut text = vec!["=".repeat(width)];
    let mut panels = " ".repeat(lw);
    panels.push_str(&center("Panel A: Static", cw * ns));
    panels.push_str(&center("Panel B: Dynamic", cw * nd));
    text.push(trim_line(panels));
    let mut head = " ".repeat(lw);
    let names: Vec<String> = (0..ns + nd).map(|i| format!("[{}]", first_model + i)).collect();
    for n in &names {
        head.push_str(&pad_left(n, cw));
    }
    text.push(head);
    text.push("-".repeat(width));

    let mut header = vec!["row".to_string(), "stat".into()];
    header.extend(names.iter().cloned());
    let mut csv = TableWriter::new(&header.iter().map(String::as_str).collect::<Vec<_>>());

    for r in &rows {
        let cells: Vec<Option<(String, String)>> = cols
            .iter()
            .map(|c| {
                c.and_then(|c| c.coef.iter().find(|(n, _, _)| n == r))
                    .map(|(_, b, t)| (fmt_rounded(*b, 4), format!("({})", fmt_rounded(*t, 4))))
            })
            .collect();
        let mut line = pad_right(&display(r), lw);
        let mut tline = " ".repeat(lw);
        for c in &cells {
            let (b, t) = c.clone().unwrap_or_default();
            line.push_str(&pad_left(&b, cw));
            tline.push_str(&pad_left(&t, cw));
        }
        text.push(trim_line(line));
        text.push(trim_line(tline));
        let mut coef_rec = vec![r.clone(), "coef".into()];
        let mut t_rec = vec![r.clone(), "tstat".into()];
        for c in &cells {
            coef_rec.push(c.as_ref().map(|c| c.0.clone()).unwrap_or_default());
            t_rec.push(c.as_ref().map(|c| c.1.trim_matches(|ch| ch == '(' || ch == ')').to_string()).unwrap_or_default());
        }
        csv.row(coef_rec);
        csv.row(t_rec);
    }
    let r2: Vec<String> = cols
        .iter()
        .map(|c| c.and_then(|c| c.r2).map(|v| fmt_rounded(v, 4)).unwrap_or_default())
        .collect();
    let mut line = pad_right("R2", lw);
    for v in &r2 {
        line.push_str(&pad_left(v, cw));
    }
    text.push(trim_line(line));
    text.push("=".repeat(width));
    let mut rec = vec!["R2".to_string(), "r2".into()];
    rec.extend(r2);
    csv.row(rec);
    Rendered {
        text: text.join("\n") + "\n",
        csv: csv.into_string(),
    }
}

/// Lower-triangular correlation panels: aggregate factors, market horizon
/// components, and idiosyncratic horizon components against both.
pub fn correlation_table(table: &CorrelationTable) -> Rendered {
    let aggregate: Vec<String> = [FactorGroup::MarketAggregate, FactorGroup::IdioAggregate]
        .iter()
        .flat_map(|g| g.names())
        .collect();
    let mh = FactorGroup::MarketHorizon.names();
    let ih = FactorGroup::IdioHorizon.names();
    let present = |v: &[String]| v.iter().all(|n| table.names.contains(n));
    let cell = |a: &str, b: &str| table.get(a, b).map_or("NA".to_string(), |v| fmt_rounded(v, 3));

    let mut text = Vec::new();
    let mut csv = TableWriter::new(&["panel", "row", "col", "corr"]);
    let cw = 10;
    let lw = 12;
    let mut panel = |title: &str, rows: &[String], cols: &[String], lower_from: Option<usize>| {
        let mut head = pad_right(title, lw);
        for c in cols {
            head.push_str(&pad_left(&label(c), cw));
        }
        text.push(head);
        for (i, r) in rows.iter().enumerate() {
            let mut line = pad_right(&label(r), lw);
            for (j, c) in cols.iter().enumerate() {
                // Columns from `lower_from` on are the row set itself.
                let shown = match lower_from {
                    Some(off) if j >= off => j - off < i,
                    Some(_) => true,
                    None => j < i,
                };
                if shown {
                    let v = cell(r, c);
                    line.push_str(&pad_left(&v, cw));
                    csv.row([title, r.as_str(), c.as_str(), v.as_str()]);
                } else {
                    line.push_str(&" ".repeat(cw));
                }
            }
            text.push(trim_line(line));
        }
        text.push(String::new());
    };
    if present(&aggregate) {
        panel("Panel A", &aggregate, &aggregate, None);
    }
    if present(&mh) {
        panel("Panel B", &mh, &mh, None);
        if present(&ih) {
            let cols: Vec<String> = mh.iter().chain(&ih[..ih.len() - 1]).cloned().collect();
            panel("Panel C", &ih, &cols, Some(mh.len()));
        }
    }
    Rendered {
        text: text.join("\n"),
        csv: csv.into_string(),
    }
}
