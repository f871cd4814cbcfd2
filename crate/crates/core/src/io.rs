//! Dataset CSV ingestion and chain dumps.
//!
//! A chain dump is a directory holding `draws.csv` (one row per draw, columns
//! named `<param>[index]`), `loglik.bin` (little-endian f64, draw-major, then
//! outcome, then observation), `model.json` and `meta.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coclustering::{ClusterState, IndicatorMode, IndicatorTable};
use crate::error::{Error, Result};
use crate::fitted::FittedModel;
use crate::model::Dataset;
use crate::sampler::{ChainMeta, ChainOutput, Diagnostics, ParamState};

/// Shortest round-trip decimal form; NaN is written as `NA`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        format!("{v}")
    }
}

/// Expected exposure columns of a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnLayout {
    /// `x<p>_l<l>` for p in 1..=P, l in 1..=L, stored exposure-major.
    Lagged { p: usize, l: usize },
    /// `x<p>` for p in 1..=P.
    Plain { p: usize },
}

impl ColumnLayout {
    pub fn names(&self) -> Vec<String> {
        match *self {
            ColumnLayout::Lagged { p, l } => {
                (1..=p).flat_map(|e| (1..=l).map(move |lag| format!("x{e}_l{lag}"))).collect()
            }
            ColumnLayout::Plain { p } => (1..=p).map(|e| format!("x{e}")).collect(),
        }
    }
}

fn parse_exposure_name(name: &str) -> Option<(usize, Option<usize>)> {
    let rest = name.strip_prefix('x')?;
    match rest.split_once("_l") {
        Some((p, l)) => Some((p.parse().ok()?, Some(l.parse().ok()?))),
        None => Some((rest.parse().ok()?, None)),
    }
}

fn parse_numbered(name: &str, prefix: char) -> Option<usize> {
    name.strip_prefix(prefix)?.parse().ok()
}

/// Read a dataset. Outcomes are `y1..yK`, covariates any column starting
/// with `z` (header order), exposures follow `layout` or, without one, every
/// `x*` column in (exposure, lag) order. `n_outcomes` requires exactly that
/// many outcome columns.
pub fn read_dataset(path: &Path, layout: Option<ColumnLayout>, n_outcomes: Option<usize>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (c, h) in headers.iter().enumerate() {
        if index.insert(h.as_str(), c).is_some() {
            return Err(Error::Data(format!("duplicate column '{h}'")));
        }
    }

    let k_found = headers.iter().filter_map(|h| parse_numbered(h, 'y')).max().unwrap_or(0);
    let k = n_outcomes.unwrap_or(k_found);
    let outcome_names: Vec<String> = (1..=k).map(|i| format!("y{i}")).collect();
    if k == 0 {
        return Err(Error::Data("missing outcome column 'y1'".into()));
    }

    let exposure_names = match layout {
        Some(l) => l.names(),
        None => {
            let mut found: Vec<((usize, usize), String)> = headers
                .iter()
                .filter_map(|h| parse_exposure_name(h).map(|(p, l)| ((p, l.unwrap_or(0)), h.clone())))
                .collect();
            found.sort();
            found.into_iter().map(|(_, h)| h).collect()
        }
    };
    if exposure_names.is_empty() {
        return Err(Error::Data("no exposure columns".into()));
    }
    let covariate_names: Vec<String> = headers.iter().filter(|h| h.starts_with('z')).cloned().collect();

    let lookup = |names: &[String], what: &str| -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| index.get(n.as_str()).copied().ok_or_else(|| Error::Data(format!("missing {what} column '{n}'"))))
            .collect()
    };
    let y_cols = lookup(&outcome_names, "outcome")?;
    let x_cols = lookup(&exposure_names, "exposure")?;
    let z_cols = lookup(&covariate_names, "covariate")?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut row = Vec::with_capacity(headers.len());
        for (c, field) in rec.iter().enumerate() {
            let v = if field.is_empty() || field.eq_ignore_ascii_case("na") {
                f64::NAN
            } else {
                field.parse::<f64>().map_err(|_| {
                    Error::Data(format!("row {}, column '{}': cannot parse '{field}'", r + 1, headers[c]))
                })?
            };
            row.push(v);
        }
        rows.push(row);
    }
    let n = rows.len();
    let take = |cols: &[usize]| DMatrix::from_fn(n, cols.len(), |i, c| rows[i][cols[c]]);
    let ds = Dataset {
        y: take(&y_cols),
        xstar: take(&x_cols),
        z: take(&z_cols),
        outcome_names,
        exposure_names,
        covariate_names,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<&str> = data
        .outcome_names
        .iter()
        .chain(&data.exposure_names)
        .chain(&data.covariate_names)
        .map(String::as_str)
        .collect();
    w.write_record(&header)?;
    for i in 0..data.n() {
        let row: Vec<String> = data
            .y
            .row(i)
            .iter()
            .chain(data.xstar.row(i).iter())
            .chain(data.z.row(i).iter())
            .map(|v| fmt_f64(*v))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Write a CSV table with a header row.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&s)?)
}

/// Contents of `meta.json` in a chain dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpMeta {
    pub chain: ChainMeta,
    pub indicator_mode: IndicatorMode,
    pub n_obs: usize,
    pub n_outcomes: usize,
    pub includes_u: bool,
    pub diagnostics: Diagnostics,
}

pub const DRAWS_FILE: &str = "draws.csv";
pub const LOGLIK_FILE: &str = "loglik.bin";
pub const MODEL_FILE: &str = "model.json";
pub const META_FILE: &str = "meta.json";

fn push_vec(names: &mut Vec<String>, vals: &mut Vec<f64>, name: &str, v: &[f64]) {
    for (i, x) in v.iter().enumerate() {
        names.push(format!("{name}[{i}]"));
        vals.push(*x);
    }
}

fn flatten(state: &ParamState, include_u: bool) -> (Vec<String>, Vec<f64>) {
    let mut names = Vec::new();
    let mut vals = Vec::new();
    push_vec(&mut names, &mut vals, "beta0", state.beta0.as_slice());
    for k in 0..state.beta_z.nrows() {
        for q in 0..state.beta_z.ncols() {
            names.push(format!("betaZ[{k},{q}]"));
            vals.push(state.beta_z[(k, q)]);
        }
    }
    let cl = &state.cluster;
    for (n, v) in [
        ("xi", state.xi),
        ("lambda_beta", state.lambda_beta),
        ("lambda_theta", state.lambda_theta),
        ("alpha_beta", cl.alpha_beta),
        ("alpha_theta", cl.alpha_theta),
        ("rho", cl.rho),
    ] {
        names.push(n.to_string());
        vals.push(v);
    }
    push_vec(&mut names, &mut vals, "sigma2", state.sigma2.as_slice());
    push_vec(&mut names, &mut vals, "v_beta", &cl.v_beta);
    push_vec(&mut names, &mut vals, "v_theta", &cl.v_theta);
    for (name, t) in [("z_beta", &cl.z_beta), ("z_theta", &cl.z_theta)] {
        for k in 0..t.rows {
            for j in 0..t.cols {
                names.push(format!("{name}[{k},{j}]"));
                vals.push(t.get(k, j) as f64);
            }
        }
    }
    for (name, atoms) in [("beta_atom", &cl.beta_atoms), ("theta_atom", &cl.theta_atoms)] {
        for (c, a) in atoms.iter().enumerate() {
            for (i, x) in a.iter().enumerate() {
                names.push(format!("{name}[{c},{i}]"));
                vals.push(*x);
            }
        }
    }
    if include_u {
        push_vec(&mut names, &mut vals, "u", state.u.as_slice());
    }
    (names, vals)
}

/// Write a chain dump into `dir` (created if missing).
pub fn write_chain(dir: &Path, chain: &ChainOutput, include_u: bool) -> Result<Vec<PathBuf>> {
    let first = chain.draws.first().ok_or_else(|| Error::NoDraws("chain has no draws".into()))?;
    fs::create_dir_all(dir)?;
    let (header, _) = flatten(first, include_u);

    let draws_path = dir.join(DRAWS_FILE);
    let mut w = csv::Writer::from_path(&draws_path)?;
    w.write_record(&header)?;
    for s in &chain.draws {
        let (_, vals) = flatten(s, include_u);
        if vals.len() != header.len() {
            return Err(Error::Dimension("draws have different parameter dimensions".into()));
        }
        w.write_record(vals.iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;

    let ll_path = dir.join(LOGLIK_FILE);
    let mut f = BufWriter::new(fs::File::create(&ll_path)?);
    for m in &chain.loglik {
        for v in m.iter() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;

    let (n_obs, n_outcomes) = chain.loglik.first().map(|m| m.shape()).unwrap_or((first.u.len(), first.sigma2.len()));
    let meta = DumpMeta {
        chain: chain.meta.clone(),
        indicator_mode: first.cluster.mode,
        n_obs,
        n_outcomes,
        includes_u: include_u,
        diagnostics: chain.diagnostics.clone(),
    };
    let model_path = dir.join(MODEL_FILE);
    let meta_path = dir.join(META_FILE);
    write_json(&model_path, &chain.model)?;
    write_json(&meta_path, &meta)?;
    Ok(vec![draws_path, ll_path, model_path, meta_path])
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord, Clone)]
struct ColumnKey {
    name: String,
    idx: Vec<usize>,
}

fn parse_column(h: &str) -> Result<ColumnKey> {
    match h.split_once('[') {
        None => Ok(ColumnKey { name: h.to_string(), idx: vec![] }),
        Some((name, rest)) => {
            let inner = rest.strip_suffix(']').ok_or_else(|| Error::Data(format!("bad column name '{h}'")))?;
            let idx = inner
                .split(',')
                .map(|s| s.parse::<usize>().map_err(|_| Error::Data(format!("bad column name '{h}'"))))
                .collect::<Result<Vec<_>>>()?;
            Ok(ColumnKey { name: name.to_string(), idx })
        }
    }
}

/// Values of one parameter family from a row, by index.
struct Row<'a> {
    keys: &'a [ColumnKey],
    vals: Vec<f64>,
}

impl Row<'_> {
    fn scalar(&self, name: &str) -> Result<f64> {
        self.keys
            .iter()
            .position(|k| k.name == name && k.idx.is_empty())
            .map(|p| self.vals[p])
            .ok_or_else(|| Error::Data(format!("chain dump lacks column '{name}'")))
    }

    fn family(&self, name: &str) -> Vec<(&[usize], f64)> {
        self.keys
            .iter()
            .zip(&self.vals)
            .filter(|(k, _)| k.name == name)
            .map(|(k, v)| (k.idx.as_slice(), *v))
            .collect()
    }

    fn vector(&self, name: &str) -> DVector<f64> {
        let f = self.family(name);
        let len = f.iter().map(|(i, _)| i[0] + 1).max().unwrap_or(0);
        let mut v = DVector::zeros(len);
        for (i, x) in f {
            v[i[0]] = x;
        }
        v
    }

    fn matrix(&self, name: &str, rows: usize) -> DMatrix<f64> {
        let f = self.family(name);
        let cols = f.iter().map(|(i, _)| i[1] + 1).max().unwrap_or(0);
        let rows = f.iter().map(|(i, _)| i[0] + 1).max().unwrap_or(rows);
        let mut m = DMatrix::zeros(rows, cols);
        for (i, x) in f {
            m[(i[0], i[1])] = x;
        }
        m
    }

    fn atoms(&self, name: &str) -> Vec<DVector<f64>> {
        let m = self.matrix(name, 0);
        m.row_iter().map(|r| r.transpose()).collect()
    }

    fn table(&self, name: &str) -> Result<IndicatorTable> {
        let m = self.matrix(name, 0);
        let mut t = IndicatorTable::new(m.nrows(), m.ncols(), 0);
        for k in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(k, j)];
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Data(format!("{name}[{k},{j}] is not a cluster label")));
                }
                t.set(k, j, v as usize);
            }
        }
        Ok(t)
    }
}

/// Read a chain dump written by [`write_chain`].
pub fn read_chain(dir: &Path) -> Result<ChainOutput> {
    let meta: DumpMeta = read_json(&dir.join(META_FILE))?;
    let model: FittedModel = read_json(&dir.join(MODEL_FILE))?;
    let mut rdr = csv::Reader::from_path(dir.join(DRAWS_FILE))?;
    let keys: Vec<ColumnKey> = rdr.headers()?.iter().map(parse_column).collect::<Result<_>>()?;
    let mut draws = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|f| {
                if f == "NA" {
                    Ok(f64::NAN)
                } else {
                    f.parse::<f64>().map_err(|_| Error::Data(format!("bad number '{f}' in chain dump")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let row = Row { keys: &keys, vals };
        let beta0 = row.vector("beta0");
        let k = beta0.len();
        let cluster = ClusterState {
            mode: meta.indicator_mode,
            z_beta: row.table("z_beta")?,
            z_theta: row.table("z_theta")?,
            v_beta: row.vector("v_beta").as_slice().to_vec(),
            v_theta: row.vector("v_theta").as_slice().to_vec(),
            log1m_v_beta: vec![],
            log1m_v_theta: vec![],
            alpha_beta: row.scalar("alpha_beta")?,
            alpha_theta: row.scalar("alpha_theta")?,
            rho: row.scalar("rho")?,
            beta_atoms: row.atoms("beta_atom"),
            theta_atoms: row.atoms("theta_atom"),
        };
        let u = if meta.includes_u { row.vector("u") } else { DVector::zeros(meta.n_obs) };
        draws.push(ParamState {
            cluster,
            beta_z: {
                let m = row.matrix("betaZ", k);
                if m.ncols() == 0 {
                    DMatrix::zeros(k, 0)
                } else {
                    m
                }
            },
            beta0,
            u,
            xi: row.scalar("xi")?,
            sigma2: row.vector("sigma2"),
            lambda_beta: row.scalar("lambda_beta")?,
            lambda_theta: row.scalar("lambda_theta")?,
        });
    }

    let mut bytes = Vec::new();
    fs::File::open(dir.join(LOGLIK_FILE))?.read_to_end(&mut bytes)?;
    let per = meta.n_obs * meta.n_outcomes;
    if bytes.len() != per * 8 * draws.len() {
        return Err(Error::Data("log-likelihood file size does not match the draws".into()));
    }
    let values: Vec<f64> =
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let loglik = values
        .chunks(per.max(1))
        .take(draws.len())
        .map(|c| DMatrix::from_column_slice(meta.n_obs, meta.n_outcomes, &c[..per]))
        .collect();
    let mut chain_meta = meta.chain.clone();
    chain_meta.n_draws = draws.len();
    Ok(ChainOutput { draws, loglik, meta: chain_meta, model, diagnostics: meta.diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exposure_names_parse() {
        assert_eq!(parse_exposure_name("x3_l12"), Some((3, Some(12))));
        assert_eq!(parse_exposure_name("x2"), Some((2, None)));
        assert_eq!(parse_exposure_name("xa"), None);
        assert_eq!(parse_column("z_beta[1,2]").unwrap().idx, vec![1, 2]);
    }

    #[test]
    fn missing_outcome_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "y1,x1,x2\n1,2,3\n2,3,4\n").unwrap();
        let err = read_dataset(&p, None, Some(2)).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("'y2'"), "{err}");
    }
}
