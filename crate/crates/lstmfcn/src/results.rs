//! Result matrices: a header `dataset,classes,<model>...` followed by one row
//! per dataset. Empty cells mark missing accuracies.

use std::path::Path;

use lstmfcn_core::stats::{MetricsReport, ResultMatrix};

use crate::error::{Error, Result};
use crate::ucr::detect_delimiter;

pub fn read_results(path: &Path) -> Result<ResultMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<(usize, &str)> = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| (i + 1, l)).collect();
    let Some(&(_, header)) = lines.first() else {
        return Err(Error::Format { path: path.to_path_buf(), message: "empty result matrix".into() });
    };
    let delimiter = detect_delimiter(header) as char;
    let split = |l: &str| l.split(delimiter).map(str::trim).map(str::to_string).collect::<Vec<_>>();
    let head = split(header);
    if head.len() < 3 {
        return Err(Error::Format { path: path.to_path_buf(), message: "header needs dataset, classes and at least one model column".into() });
    }
    let width = head.len();
    let parse_err = |line: usize, column: usize, message: String| Error::Parse { path: path.to_path_buf(), line: line as u64, column, message };
    let mut matrix = ResultMatrix { datasets: Vec::new(), models: head[2..].to_vec(), class_counts: Vec::new(), accuracy: Vec::new() };
    for &(line, text) in &lines[1..] {
        let cells = split(text);
        if cells.len() != width {
            return Err(parse_err(
                line,
                cells.len().min(width) + 1,
                format!("row has {} cells, the header has {width}", cells.len()),
            ));
        }
        let classes = cells[1].parse::<usize>().map_err(|_| parse_err(line, 2, format!("class count {:?} is not a whole number", cells[1])))?;
        let mut row = Vec::with_capacity(width - 2);
        for (c, cell) in cells.iter().enumerate().skip(2) {
            if cell.is_empty() {
                row.push(None);
                continue;
            }
            let a = cell.parse::<f64>().map_err(|_| parse_err(line, c + 1, format!("accuracy {cell:?} is not a number")))?;
            row.push(Some(a));
        }
        matrix.datasets.push(cells[0].clone());
        matrix.class_counts.push(classes);
        matrix.accuracy.push(row);
    }
    if matrix.datasets.is_empty() {
        return Err(Error::Format { path: path.to_path_buf(), message: "result matrix has no dataset rows".into() });
    }
    Ok(matrix)
}

pub fn write_results(path: &Path, matrix: &ResultMatrix) -> Result<()> {
    let mut text = format!("dataset,classes,{}\n", matrix.models.join(","));
    for ((name, classes), row) in matrix.datasets.iter().zip(&matrix.class_counts).zip(&matrix.accuracy) {
        let cells: Vec<String> = row.iter().map(|a| a.map_or(String::new(), |v| v.to_string())).collect();
        text.push_str(&format!("{name},{classes},{}\n", cells.join(",")));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Plain-text rendering of a comparison report.
pub fn render_report(report: &MetricsReport, datasets: usize) -> String {
    let width = report.models.iter().map(String::len).max().unwrap_or(0).max(5);
    let mut out = format!("datasets: {datasets}\nmodels: {}\n\n", report.models.len());
    out.push_str(&format!("{:<width$}  {:>8}  {:>10}  {:>10}\n", "model", "mpce", "arith_rank", "geom_rank"));
    for (i, m) in report.models.iter().enumerate() {
        out.push_str(&format!(
            "{m:<width$}  {:>8.4}  {:>10.4}  {:>10.4}\n",
            report.mpce[i], report.arithmetic_rank[i], report.geometric_rank[i]
        ));
    }
    out.push_str("\npairwise wilcoxon signed-rank tests\n");
    out.push_str(&format!("{:<width$}  {:<width$}  {:>3}  {:>8}  {:>10}  {:<6}  significant\n", "model_a", "model_b", "n", "w", "p_value", "method"));
    for p in &report.pairwise {
        let method = match p.test.method {
            lstmfcn_core::stats::PValueMethod::Exact => "exact",
            lstmfcn_core::stats::PValueMethod::NormalApproximation => "normal",
        };
        out.push_str(&format!(
            "{:<width$}  {:<width$}  {:>3}  {:>8.1}  {:>10.6}  {method:<6}  {}\n",
            report.models[p.first],
            report.models[p.second],
            p.test.n,
            p.test.statistic,
            p.test.p_value,
            if p.significant { "yes" } else { "no" }
        ));
    }
    if let Some((base, counts)) = &report.versus_baseline {
        out.push_str(&format!("\ncount versus baseline {}\n", report.models[*base]));
        out.push_str(&format!("{:<width$}  {:>4}  {:>4}\n", "model", "wins", "ties"));
        for (i, (wins, ties)) in counts.iter().enumerate() {
            if i != *base {
                out.push_str(&format!("{:<width$}  {wins:>4}  {ties:>4}\n", report.models[i]));
            }
        }
    }
    out
}
