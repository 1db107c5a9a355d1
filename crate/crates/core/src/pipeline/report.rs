use std::fmt::Write;
use std::path::Path;

use super::{PipelineError, Result};
use crate::cluster::KwResult;
use crate::factor::{CfaResult, EfaResult};
use crate::scale::Subscale;

fn load<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::io(&path, e))
}

/// `p < .001` style, three decimals otherwise.
pub fn format_p(p: f64) -> String {
    if p < 0.001 {
        "< .001".into()
    } else {
        format!("{p:.3}")
    }
}

pub fn fit_line(cfa: &CfaResult) -> String {
    format!(
        "CFI = {:.3}, TLI = {:.3}, RMSEA = {:.3}, SRMR = {:.3}",
        cfa.cfi, cfa.tli, cfa.rmsea, cfa.srmr
    )
}

fn factor_label(name: &str) -> String {
    match name.parse::<Subscale>() {
        Ok(s) => format!("{} ({})", s.code(), s.label()),
        Err(_) => name.to_string(),
    }
}

/// Markdown report for a run directory holding at least the EFA and CFA
/// results. Cluster outputs and figures are included when present.
pub fn render_report(dir: &Path) -> Result<String> {
    let missing: Vec<String> = ["efa_result.json", "cfa_result.json"]
        .iter()
        .filter(|f| !dir.join(f).exists())
        .map(|f| f.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::MissingArtifacts(missing));
    }
    let efa: EfaResult = load(dir, "efa_result.json")?;
    let cfa: CfaResult = load(dir, "cfa_result.json")?;

    let mut out = String::from("# Synthetic respondent run\n\n");
    let _ = writeln!(out, "Respondents analysed: {}\n", efa.n);

    out.push_str("## Factor retention\n\n");
    let _ = writeln!(
        out,
        "Parallel analysis ({} criterion) retained {} factor(s); {} extracted with principal axis factoring and promax rotation (kappa = {}).\n",
        match efa.criterion {
            crate::factor::PaCriterion::Mean => "mean",
            crate::factor::PaCriterion::P95 => "95th percentile",
        },
        efa.retained_k,
        efa.extracted_k,
        efa.kappa
    );
    out.push_str("| Factor | Observed eigenvalue | Random-data eigenvalue |\n|---|---|---|\n");
    for i in 0..efa.observed_eigenvalues.len().min(10) {
        let reference = match efa.criterion {
            crate::factor::PaCriterion::Mean => efa.reference_eigenvalues[i],
            crate::factor::PaCriterion::P95 => efa.reference_p95[i],
        };
        let _ = writeln!(out, "| {} | {:.3} | {:.3} |", i + 1, efa.observed_eigenvalues[i], reference);
    }

    out.push_str("\n## Confirmatory factor analysis\n\n");
    let _ = writeln!(out, "{}\n", fit_line(&cfa));
    let _ = writeln!(
        out,
        "chi-square = {:.2} (df = {}), baseline chi-square = {:.2} (df = {}), n = {}.\n",
        cfa.chi2, cfa.df, cfa.chi2_baseline, cfa.df_baseline, cfa.n
    );
    for w in &cfa.warnings {
        let _ = writeln!(out, "- Warning: {w}");
    }
    if !cfa.warnings.is_empty() {
        out.push('\n');
    }
    out.push_str("| Factor | Item | Standardized Loading |\n|---|---|---|\n");
    for (f, name) in cfa.factor_names.iter().enumerate() {
        let label = factor_label(name);
        let items = (0..cfa.item_names.len()).filter(|&i| cfa.item_factor[i] == f);
        for (row, i) in items.enumerate() {
            let first = if row == 0 { label.as_str() } else { "" };
            let _ = writeln!(out, "| {first} | {} | {:.3} |", cfa.item_names[i], cfa.loadings[i]);
        }
    }

    if dir.join("kw_tests.json").exists() {
        let tests: Vec<KwResult> = load(dir, "kw_tests.json")?;
        out.push_str("\n## Subscale differences between clusters\n\n");
        if tests.is_empty() {
            out.push_str("Fewer than two clusters; no tests were run.\n");
        } else {
            out.push_str("| Subscale | H | df | p |\n|---|---|---|---|\n");
            for t in &tests {
                let _ = writeln!(out, "| {} | {:.2} | {} | {} |", t.subscale, t.h, t.df, format_p(t.p));
            }
        }
    }

    let figures: Vec<(&str, &str)> = [
        ("scree.svg", "Parallel analysis scree plot"),
        ("tsne.svg", "t-SNE of persona embeddings"),
        ("boxplots.svg", "Subscale scores by cluster"),
    ]
    .into_iter()
    .filter(|(f, _)| dir.join(f).exists())
    .collect();
    if !figures.is_empty() {
        out.push_str("\n## Figures\n\n");
        for (file, title) in figures {
            let _ = writeln!(out, "- [{title}]({file})");
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_formatting() {
        assert_eq!(format_p(0.0004), "< .001");
        assert_eq!(format_p(0.0123), "0.012");
    }

    #[test]
    fn missing_cfa_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("efa_result.json"), "{}").unwrap();
        match render_report(dir.path()) {
            Err(PipelineError::MissingArtifacts(m)) => assert_eq!(m, vec!["cfa_result.json".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
