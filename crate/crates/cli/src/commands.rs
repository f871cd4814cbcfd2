use mixborrow::config::RunConfig;
use mixborrow::importance::{importance_from_chain, Bandwidth, ConditionalModel};
use mixborrow::io::{fmt_f64, read_chain, read_dataset, write_chain, write_dataset, write_json, write_table, ColumnLayout};
use mixborrow::posterior::{
    compute_waic, erf_summary, lagged_contrast, overall_mixture_effect, pairwise_clustering, weight_profile_summary,
    CurveSummary,
};
use mixborrow::rng::derive_seed;
use mixborrow::simulate::{generate, run_replication_study};
use mixborrow::{run_chain, ChainOutput, Dataset, Error, ModelKind, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::out::{Manifest, OutDir};

pub const REQUESTS: [&str; 6] = ["erf", "weights", "overall", "contrast", "heatmap", "waic"];

fn write_config(out: &OutDir, cfg: &RunConfig) -> Result<()> {
    std::fs::write(out.path("config.toml")?, cfg.to_toml()?)?;
    Ok(())
}

/// Column layout of the data a fitted model expects.
fn layout_of(chain: &ChainOutput) -> ColumnLayout {
    let spec = &chain.model.spec;
    match spec.model_kind {
        ModelKind::Dlnm | ModelKind::NonseparableDlnm | ModelKind::Biomarker => {
            ColumnLayout::Lagged { p: spec.n_indices, l: spec.index_dim() }
        }
        ModelKind::Mim | ModelKind::Additive => ColumnLayout::Plain { p: spec.exposure_dim },
    }
}

pub fn fit(cfg: &RunConfig, out: &OutDir) -> Result<()> {
    cfg.validate_fit()?;
    let model_cfg = cfg.model()?;
    let data_path = cfg.data_path()?;
    let data = read_dataset(data_path, Some(model_cfg.layout()?), None)?;
    let spec = model_cfg.build_spec(data.n_outcomes(), &cfg.hyper)?;
    let c = &cfg.chain;
    log::info!("fitting {} chain(s) of {} sweeps on n = {}", c.n_chains, c.n_iter, data.n());
    let chains: Vec<ChainOutput> = (0..c.n_chains)
        .into_par_iter()
        .map(|i| run_chain(&spec, &data, c.n_iter, c.burn_in, c.thin, derive_seed(c.seed, i as u64)))
        .collect::<Result<_>>()?;

    let mut manifest = Manifest::new("fit", c.seed);
    manifest.spec_hash(spec.spec_hash());
    manifest.input(data_path)?;
    for (i, ch) in chains.iter().enumerate() {
        let dir = out.path(&format!("chain_{}/{}", i + 1, mixborrow::io::DRAWS_FILE))?;
        write_chain(dir.parent().expect("chain directory"), ch, c.include_u)?;
    }
    let combined = ChainOutput::combine(&chains).ok_or_else(|| Error::NoDraws("no chains".into()))?;
    let mut requests = vec!["erf", "heatmap", "waic"];
    if spec.has_theta() {
        requests.push("weights");
    }
    if spec.model_kind == ModelKind::Dlnm {
        requests.push("contrast");
    }
    requests.push("overall");
    write_summaries(out, &combined, &requests, Some(&data), 50)?;
    write_config(out, cfg)?;
    manifest.finish(out)
}

pub fn summarize(cfg: &RunConfig, out: &OutDir) -> Result<()> {
    let s = cfg.summarize_config()?;
    for r in &s.requests {
        if !REQUESTS.contains(&r.as_str()) {
            return Err(Error::InvalidArgument(format!("unknown request '{r}' (expected one of {})", REQUESTS.join(", "))));
        }
    }
    let chain = read_chain(&s.chain)?;
    if chain.draws.is_empty() {
        return Err(Error::NoDraws("no draws in chain dump".into()));
    }
    let data = match &s.data {
        Some(p) => Some(read_dataset(p, Some(layout_of(&chain)), Some(chain.model.spec.n_outcomes))?),
        None => None,
    };
    let requests: Vec<&str> = s.requests.iter().map(String::as_str).collect();
    write_summaries(out, &chain, &requests, data.as_ref(), s.grid_points)?;
    write_config(out, cfg)?;
    let mut manifest = Manifest::new("summarize", chain.meta.seed);
    manifest.spec_hash(chain.meta.spec_hash.clone());
    manifest.input(&s.chain)?;
    if let Some(p) = &s.data {
        manifest.input(p)?;
    }
    manifest.finish(out)
}

fn curve_rows(c: &CurveSummary) -> Vec<Vec<String>> {
    (0..c.grid.len())
        .map(|g| vec![fmt_f64(c.grid[g]), fmt_f64(c.mean[g]), fmt_f64(c.lower[g]), fmt_f64(c.upper[g])])
        .collect()
}

fn heatmap_rows(labels: &[String], m: &DMatrix<f64>) -> Vec<Vec<String>> {
    labels
        .iter()
        .enumerate()
        .map(|(a, l)| std::iter::once(l.clone()).chain((0..m.ncols()).map(|b| fmt_f64(m[(a, b)]))).collect())
        .collect()
}

/// Post-processing artifacts. File names: `erf_k<k>_j<j>.csv`,
/// `weights_k<k>_j<j>.csv`, `overall_k<k>.csv`, `contrasts.csv`,
/// `heatmap_beta.csv`, `heatmap_theta.csv`, `waic.json` (1-based labels).
pub fn write_summaries(
    out: &OutDir,
    chain: &ChainOutput,
    requests: &[&str],
    data: Option<&Dataset>,
    grid_points: usize,
) -> Result<()> {
    let spec = &chain.model.spec;
    let (k_n, j_n) = (spec.n_outcomes, spec.n_indices);
    for &req in requests {
        match req {
            "erf" => {
                let (lo, hi) = chain.model.range();
                let g = grid_points.max(2);
                let grid: Vec<f64> = (0..g).map(|i| lo + (hi - lo) * i as f64 / (g - 1) as f64).collect();
                for k in 0..k_n {
                    for j in 0..j_n {
                        let c = erf_summary(chain, k, j, &grid)?;
                        write_table(
                            &out.path(&format!("erf_k{}_j{}.csv", k + 1, j + 1))?,
                            &["x", "mean", "lower", "upper"],
                            &curve_rows(&c),
                        )?;
                    }
                }
            }
            "weights" => {
                if !spec.has_theta() {
                    return Err(Error::InvalidArgument("this model has no index weights".into()));
                }
                for k in 0..k_n {
                    for j in 0..j_n {
                        let (mean, aligned) = weight_profile_summary(chain, k, j)?;
                        let draws: Vec<Vec<f64>> = aligned.iter().map(|d| d.iter().copied().collect()).collect();
                        let mut c = CurveSummary::from_draws((1..=mean.len()).map(|i| i as f64).collect(), &draws)?;
                        c.mean = mean.iter().copied().collect();
                        let rows: Vec<Vec<String>> = (0..mean.len())
                            .map(|i| vec![(i + 1).to_string(), fmt_f64(c.mean[i]), fmt_f64(c.lower[i]), fmt_f64(c.upper[i])])
                            .collect();
                        write_table(
                            &out.path(&format!("weights_k{}_j{}.csv", k + 1, j + 1))?,
                            &["component", "mean", "lower", "upper"],
                            &rows,
                        )?;
                    }
                }
            }
            "overall" => {
                let data = data.ok_or_else(|| {
                    Error::InvalidArgument("the overall effect needs the dataset ('data' in [summarize])".into())
                })?;
                let q: Vec<f64> = (2..=18).map(|i| i as f64 * 0.05).collect();
                for k in 0..k_n {
                    let c = overall_mixture_effect(chain, &data.xstar, k, &q)?;
                    write_table(
                        &out.path(&format!("overall_k{}.csv", k + 1))?,
                        &["quantile", "mean", "lower", "upper"],
                        &curve_rows(&c),
                    )?;
                }
            }
            "contrast" => {
                let lags = spec.index_dim();
                let mut rows = Vec::new();
                for k in 0..k_n {
                    for p in 0..j_n {
                        for l in 0..lags {
                            let s = lagged_contrast(chain, k, p, l, None, None)?;
                            rows.push(vec![
                                (k + 1).to_string(),
                                (p + 1).to_string(),
                                (l + 1).to_string(),
                                fmt_f64(s.mean),
                                fmt_f64(s.lower),
                                fmt_f64(s.upper),
                            ]);
                        }
                    }
                }
                write_table(
                    &out.path("contrasts.csv")?,
                    &["outcome", "exposure", "lag", "mean", "lower", "upper"],
                    &rows,
                )?;
            }
            "heatmap" => {
                let h = pairwise_clustering(chain)?;
                let labels: Vec<String> = h.labels.iter().map(|(k, j)| format!("k{}_j{}", k + 1, j + 1)).collect();
                let header: Vec<&str> = std::iter::once("pair").chain(labels.iter().map(String::as_str)).collect();
                write_table(&out.path("heatmap_beta.csv")?, &header, &heatmap_rows(&labels, &h.prob_beta))?;
                write_table(&out.path("heatmap_theta.csv")?, &header, &heatmap_rows(&labels, &h.prob_theta))?;
            }
            "waic" => {
                let w = compute_waic(&chain.loglik)?;
                write_json(&out.path("waic.json")?, &w)?;
            }
            other => return Err(Error::InvalidArgument(format!("unknown request '{other}'"))),
        }
    }
    Ok(())
}

pub fn importance(cfg: &RunConfig, out: &OutDir) -> Result<()> {
    let ic = cfg.importance_config()?;
    let mut chain = read_chain(&ic.chain)?;
    if chain.draws.is_empty() {
        return Err(Error::NoDraws("no draws in chain dump".into()));
    }
    if let Some(m) = ic.max_draws {
        if m == 0 {
            return Err(Error::Config("max_draws must be positive".into()));
        }
        let d = chain.draws.len();
        if d > m {
            let keep: Vec<usize> = (0..m).map(|i| i * d / m).collect();
            chain.draws = keep.iter().map(|&i| chain.draws[i].clone()).collect();
            chain.loglik = keep.iter().map(|&i| chain.loglik[i].clone()).collect();
        }
    }
    let data = read_dataset(&ic.data, Some(layout_of(&chain)), Some(chain.model.spec.n_outcomes))?;
    let n_exp = match layout_of(&chain) {
        ColumnLayout::Lagged { p, .. } | ColumnLayout::Plain { p } => p,
    };
    let names = &data.exposure_names;
    let resolve = |name: &str| -> Result<Vec<usize>> {
        let lag_prefix = format!("{name}_l");
        let cols: Vec<usize> = names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.as_str() == name || n.starts_with(&lag_prefix))
            .map(|(i, _)| i)
            .collect();
        if cols.is_empty() {
            return Err(Error::InvalidArgument(format!("unknown exposure '{name}'")));
        }
        Ok(cols)
    };
    let groups: Vec<(String, Vec<usize>)> = if ic.groups.is_empty() {
        (1..=n_exp).map(|p| Ok((format!("x{p}"), resolve(&format!("x{p}"))?))).collect::<Result<_>>()?
    } else {
        ic.groups
            .iter()
            .map(|g| {
                let mut cols = Vec::new();
                for e in &g.exposures {
                    cols.extend(resolve(e)?);
                }
                cols.sort_unstable();
                cols.dedup();
                Ok((g.label.clone(), cols))
            })
            .collect::<Result<_>>()?
    };
    let cond = ConditionalModel::Kernel {
        bandwidth: ic.bandwidth.map_or(Bandwidth::Silverman, Bandwidth::Fixed),
    };
    let mut rows = Vec::new();
    for k in 0..chain.model.spec.n_outcomes {
        for s in importance_from_chain(&chain, &data.xstar, k, &groups, &cond)? {
            let (m, lo, hi) = s.summary.map_or((f64::NAN, f64::NAN, f64::NAN), |v| (v.mean, v.lower, v.upper));
            rows.push(vec![
                (k + 1).to_string(),
                s.label,
                fmt_f64(m),
                fmt_f64(lo),
                fmt_f64(hi),
                s.excursions.to_string(),
                s.missing.to_string(),
            ]);
        }
    }
    write_table(
        &out.path("importance.csv")?,
        &["outcome", "group", "mean", "lower", "upper", "excursions", "missing"],
        &rows,
    )?;
    write_config(out, cfg)?;
    let mut manifest = Manifest::new("importance", chain.meta.seed);
    manifest.spec_hash(chain.meta.spec_hash.clone());
    manifest.input(&ic.chain)?;
    manifest.input(&ic.data)?;
    manifest.finish(out)
}

pub fn simulate(cfg: &RunConfig, out: &OutDir) -> Result<()> {
    let scn = cfg.scenario()?;
    let (data, truth) = generate(&scn)?;
    write_dataset(&out.path("data.csv")?, &data)?;
    write_json(&out.path("truth.json")?, &truth)?;
    write_config(out, cfg)?;
    Manifest::new("simulate", scn.seed).finish(out)
}

pub fn study(cfg: &RunConfig, out: &OutDir) -> Result<()> {
    let mut sc = cfg.study_config()?;
    sc.cache_dir = Some(out.dir("cache")?);
    let report = run_replication_study(&sc)?;
    std::fs::write(out.path("metrics.csv")?, report.to_csv())?;
    let rows: Vec<Vec<String>> = report
        .summary
        .iter()
        .map(|s| {
            vec![
                s.estimator.name().to_string(),
                s.n_ok.to_string(),
                fmt_f64(s.mse_f),
                fmt_f64(s.mse_omega),
                fmt_f64(s.coverage_f),
                fmt_f64(s.coverage_omega),
                fmt_f64(s.mse_surface),
                fmt_f64(s.cocluster_beta_same),
                fmt_f64(s.cocluster_beta_diff),
                fmt_f64(s.cocluster_theta_same),
                fmt_f64(s.cocluster_theta_diff),
            ]
        })
        .collect();
    write_table(
        &out.path("summary.csv")?,
        &[
            "estimator",
            "n_ok",
            "mse_f",
            "mse_omega",
            "coverage_f",
            "coverage_omega",
            "mse_surface",
            "cocluster_beta_same",
            "cocluster_beta_diff",
            "cocluster_theta_same",
            "cocluster_theta_diff",
        ],
        &rows,
    )?;
    write_config(out, cfg)?;
    Manifest::new("study", sc.scenario.seed).finish(out)
}
