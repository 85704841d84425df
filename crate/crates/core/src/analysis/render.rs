//! CSV and Markdown rendering of an [`AnalysisBundle`].
//!
//! CSV files keep full precision and raw units. The Markdown report shows
//! contributions multiplied by 100 and everything at 4 decimals, with
//! characterizing cells in bold.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{AnalysisBundle, BmCharacterization, Cell, SizeAnalysis};
use crate::component::Component;
use crate::error::{Error, Result};

pub const BUNDLE_FILES: [&str; 4] =
    ["size_comparison.csv", "contributions_by_bm.csv", "characterization.csv", "report.md"];

fn bm_name(lambda: usize, size_code: &str) -> String {
    format!("BM{lambda}-{size_code}")
}

fn cell_record(c: &Cell) -> [String; 6] {
    [
        c.component.column().to_string(),
        c.mean_in.to_string(),
        c.mean_out.to_string(),
        c.p_value.map(|p| p.to_string()).unwrap_or_default(),
        c.stars.to_string(),
        u8::from(c.characterizing).to_string(),
    ]
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_size_comparison(bundle: &AnalysisBundle, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["size", "component", "mean_in", "mean_out", "p_value", "stars", "CHAR"])?;
    for s in &bundle.size_comparison {
        for c in &s.cells {
            let rec = cell_record(c);
            w.write_record(std::iter::once(s.size.code().to_string()).chain(rec))?;
        }
    }
    finish(w, path)
}

fn write_contributions(bundle: &AnalysisBundle, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = ["size", "lambda", "cluster_id", "obs_count"].map(String::from).to_vec();
    header.extend(bundle.feature_names.iter().cloned());
    header.extend(["total_contribution", "taxonomy", "taxonomy_nearest", "taxonomy_distance"].map(String::from));
    w.write_record(&header)?;
    for g in &bundle.groups {
        for p in &g.profiles {
            let tax = g.characterization.iter().find(|c| c.lambda == p.lambda).map(|c| &c.taxonomy);
            let mut rec = vec![
                g.size.code().to_string(),
                p.lambda.to_string(),
                p.cluster_id.to_string(),
                p.obs_count.to_string(),
            ];
            rec.extend(p.mean_contributions.iter().map(f64::to_string));
            rec.push(p.total_contribution.to_string());
            rec.push(tax.map(|t| t.label_name().to_string()).unwrap_or_default());
            rec.push(tax.map(|t| t.nearest.name().to_string()).unwrap_or_default());
            rec.push(tax.map(|t| t.distance.to_string()).unwrap_or_default());
            w.write_record(&rec)?;
        }
    }
    finish(w, path)
}

fn write_characterization(bundle: &AnalysisBundle, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["size", "lambda", "cluster_id", "component", "mean_in", "mean_out", "p_value", "stars", "CHAR"])?;
    for g in &bundle.groups {
        for bm in &g.characterization {
            for c in &bm.cells {
                let head = [g.size.code().to_string(), bm.lambda.to_string(), bm.cluster_id.to_string()];
                w.write_record(head.into_iter().chain(cell_record(c)))?;
            }
        }
    }
    finish(w, path)
}

fn md_cell(value: f64, c: &Cell) -> String {
    let text = format!("{value:.4}{}", c.stars.as_str().replace('*', "\\*"));
    if c.characterizing {
        format!("**{text}**")
    } else {
        text
    }
}

fn md_row(out: &mut String, cells: impl IntoIterator<Item = String>) {
    out.push('|');
    for c in cells {
        let _ = write!(out, " {c} |");
    }
    out.push('\n');
}

fn md_header(out: &mut String, cols: &[String]) {
    md_row(out, cols.iter().cloned());
    md_row(out, cols.iter().map(|_| "---".to_string()));
}

fn component_label(bundle: &AnalysisBundle, j: usize) -> String {
    Component::from_index(j)
        .filter(|c| bundle.feature_names.get(j).is_some_and(|n| n == c.column()))
        .map_or_else(|| bundle.feature_names[j].clone(), |c| c.label().to_string())
}

fn render_characterization(out: &mut String, bundle: &AnalysisBundle, g: &SizeAnalysis, bms: &[BmCharacterization]) {
    let code = g.size.code();
    let mut cols = vec!["Component".to_string()];
    for bm in bms {
        cols.push(bm_name(bm.lambda, code));
        cols.push(format!("C-{}", bm_name(bm.lambda, code)));
    }
    md_header(out, &cols);
    for (j, _) in bundle.feature_names.iter().enumerate() {
        let mut row = vec![component_label(bundle, j)];
        for bm in bms {
            let c = &bm.cells[j];
            row.push(md_cell(c.mean_in, c));
            row.push(format!("{:.4}", c.mean_out));
        }
        md_row(out, row);
    }
    out.push('\n');
    for bm in bms {
        let set: Vec<&str> = bm.characterizing().into_iter().map(Component::label).collect();
        let _ = writeln!(
            out,
            "- {}: characterized by {}; taxonomy {} (nearest {}, distance {})",
            bm_name(bm.lambda, code),
            if set.is_empty() { "no component".to_string() } else { set.join(", ") },
            bm.taxonomy.label_name(),
            bm.taxonomy.nearest,
            bm.taxonomy.distance
        );
    }
}

/// The Markdown report as a string.
pub fn render_report(bundle: &AnalysisBundle) -> String {
    let mut out = String::from("# Business model report\n\n");
    out.push_str(
        "Characterizing cells are in bold. Stars mark significance at 10% (\\*), 5% (\\*\\*) and 1% (\\*\\*\\*).\n\n",
    );

    out.push_str("## Portfolio components by size\n\n");
    if let Some(reason) = &bundle.size_comparison_skipped {
        let _ = writeln!(out, "Skipped: {reason}\n");
    } else {
        let mut cols = vec!["Component".to_string()];
        for s in &bundle.size_comparison {
            cols.push(s.size.name().to_string());
            cols.push(format!("C-{}", s.size.name()));
        }
        md_header(&mut out, &cols);
        for (j, _) in bundle.feature_names.iter().enumerate() {
            let mut row = vec![component_label(bundle, j)];
            for s in &bundle.size_comparison {
                let c = &s.cells[j];
                row.push(md_cell(c.mean_in, c));
                row.push(format!("{:.4}", c.mean_out));
            }
            md_row(&mut out, row);
        }
        let counts: Vec<String> =
            bundle.size_comparison.iter().map(|s| format!("{} {}", s.size.name(), s.obs_count)).collect();
        let _ = writeln!(out, "\nObservations: {}\n", counts.join(", "));
    }

    out.push_str("## Average contributions to profitability (x100)\n\n");
    for g in &bundle.groups {
        let _ = writeln!(out, "### {} banks\n", g.size.name());
        if let Some(reason) = &g.skipped {
            let _ = writeln!(out, "Skipped: {reason}\n");
            continue;
        }
        let mut cols = vec!["BM".to_string(), "Obs".to_string()];
        cols.extend((0..bundle.feature_names.len()).map(|j| component_label(bundle, j)));
        cols.push("Total".to_string());
        md_header(&mut out, &cols);
        for p in &g.profiles {
            let mut row = vec![bm_name(p.lambda, g.size.code()), p.obs_count.to_string()];
            row.extend(p.mean_contributions.iter().map(|v| format!("{:.4}", v * 100.0)));
            row.push(format!("{:.4}", p.total_contribution * 100.0));
            md_row(&mut out, row);
        }
        out.push('\n');
    }

    out.push_str("## Portfolio components by business model\n\n");
    for g in &bundle.groups {
        let _ = writeln!(out, "### {} banks\n", g.size.name());
        if let Some(reason) = &g.skipped {
            let _ = writeln!(out, "Skipped: {reason}\n");
        } else if g.characterization.is_empty() {
            out.push_str("Skipped: a single business model has no complement\n\n");
        } else {
            render_characterization(&mut out, bundle, g, &g.characterization);
            out.push('\n');
        }
    }
    out
}

/// Writes the four report files into `dir`, returning their paths.
pub fn write_bundle(bundle: &AnalysisBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths: Vec<PathBuf> = BUNDLE_FILES.iter().map(|f| dir.join(f)).collect();
    write_size_comparison(bundle, &paths[0])?;
    write_contributions(bundle, &paths[1])?;
    write_characterization(bundle, &paths[2])?;
    std::fs::write(&paths[3], render_report(bundle)).map_err(|e| Error::io(&paths[3], e))?;
    Ok(paths)
}
